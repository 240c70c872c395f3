use clap::Parser;

use bronchodepth::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let category = e.category();
        eprintln!("error ({}): {e}", category.as_str());
        std::process::exit(category.exit_code());
    }
}
