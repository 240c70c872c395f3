//! Command-line surface: argument definitions and the command runners.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::config::{runs_root, ExperimentConfig, RunDir};
use crate::error::{ensure, Error, Result};
use crate::evalmetrics::plot::{line_chart_svg, loss_series};
use crate::evalmetrics::report::colorize;
use crate::evalmetrics::{evaluate_run, EvalReport, EvalTarget, DELTA_KEYS};
use crate::pipeline::adapt::AdaptTrainer;
use crate::pipeline::batch::{color_tensor, tensor_to_depth};
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::infer::DepthModel;
use crate::pipeline::log::{read_log, TrainLog};
use crate::pipeline::supervised::SupervisedTrainer;
use crate::synthdata::{
    generate_datasets, io::read_color, write_pfm, DataLayout, Domain, PairedSplit, UnlabeledSplit,
    SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL,
};

#[derive(Debug, Parser)]
#[command(
    name = "bronchodepth",
    version,
    about = "Domain-adaptive monocular depth for airway endoscopy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the data, supervised and adaptation seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory to create (default: a name under the runs root).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single-threaded execution for bit-reproducible runs.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Synthetic,
    Real,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Domain {
        match d {
            DomainArg::Synthetic => Domain::Synthetic,
            DomainArg::Real => Domain::RealLike,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic and real-like datasets.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised training on synthetic pairs.
    TrainSup {
        #[command(flatten)]
        common: Common,
        /// Directory written by gen-data (holding `synthetic/`).
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint of an earlier train-sup run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Adversarial adaptation starting from a supervised checkpoint.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Supervised checkpoint to start from.
        #[arg(long)]
        ckpt: Vec<PathBuf>,
        /// Continue from a checkpoint of an earlier adapt run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict depth and confidence for PNG images.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: Vec<PathBuf>,
        /// A PNG file or a directory of PNG files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "real")]
        domain: DomainArg,
    },
    /// Score checkpoints against archived depth; one row per `--ckpt`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// `PATH` or `LABEL=PATH`; repeat to compare checkpoints.
        #[arg(long)]
        ckpt: Vec<String>,
        /// `real`: real-like test frames; `synthetic`: synthetic validation frames.
        #[arg(long, value_enum, default_value = "real")]
        domain: DomainArg,
        #[arg(long)]
        median_scale: bool,
    },
    /// Draw the loss curves of a training run as SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Run directory holding `logs/train.jsonl`.
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn default_run_dir(command: &str, cfg: &ExperimentConfig, extra: &str) -> PathBuf {
    let mut h = Sha256::new();
    h.update(cfg.canonical_json());
    h.update(extra);
    let digest = hex::encode(h.finalize());
    runs_root().join(format!("{command}-{}", &digest[..10]))
}

fn create_run(
    command: &str,
    common: &Common,
    cfg: &ExperimentConfig,
    extra: &str,
) -> Result<RunDir> {
    let root = common
        .out
        .clone()
        .unwrap_or_else(|| default_run_dir(command, cfg, extra));
    RunDir::create(&root, cfg)
}

fn single_ckpt(ckpts: &[PathBuf], command: &str) -> Result<Checkpoint> {
    ensure!(!ckpts.is_empty(), Config, "{command} requires --ckpt");
    ensure!(
        ckpts.len() == 1,
        Config,
        "{command} takes exactly one --ckpt"
    );
    Checkpoint::open(&ckpts[0])
}

/// The run directory of a checkpoint stored at `<run>/ckpts/<name>`.
fn run_of_checkpoint(ckpt: &Path) -> Result<PathBuf> {
    ckpt.parent()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .ok_or_else(|| Error::Config(format!("cannot locate the run of {}", ckpt.display())))
}

fn optional_split(root: &Path, split: &str) -> Result<Option<PairedSplit>> {
    match PairedSplit::open(root, split) {
        Ok(s) if !s.is_empty() => Ok(Some(s)),
        Ok(_) => Ok(None),
        Err(Error::Data(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn list_pngs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    ensure!(input.is_dir(), Data, "{} does not exist", input.display());
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io_at(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    ensure!(
        !files.is_empty(),
        Data,
        "no PNG images in {}",
        input.display()
    );
    Ok(files)
}

fn parse_target(spec: &str) -> Result<EvalTarget> {
    let (label, path) = match spec.split_once('=') {
        Some((l, p)) if !l.is_empty() => (l.to_string(), PathBuf::from(p)),
        _ => (spec.to_string(), PathBuf::from(spec)),
    };
    Ok(EvalTarget {
        label,
        checkpoint: Checkpoint::open(&path)?,
    })
}

fn print_report(report: &EvalReport) {
    println!(
        "{:<24} {:>9} {:>10} {:>8} {:>8} {:>8}",
        "label", "abs_rel", "rmse_mm", "d<1.25", "d<1.25^2", "d<1.25^3"
    );
    for r in &report.rows {
        let m = &r.metrics;
        println!(
            "{:<24} {:>9.4} {:>10.4} {:>8.4} {:>8.4} {:>8.4}",
            r.label,
            m.abs_rel,
            m.rmse,
            m.delta_acc[DELTA_KEYS[0]],
            m.delta_acc[DELTA_KEYS[1]],
            m.delta_acc[DELTA_KEYS[2]]
        );
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let run = create_run("gen-data", &common, &cfg, "")?;
            let layout = DataLayout::new(run.root().join("data"));
            let generated = generate_datasets(&cfg.data, &layout)?;
            println!(
                "wrote {} synthetic and {} real-like frames to {}",
                generated.synthetic.counts.values().sum::<usize>(),
                generated.real_like.counts.values().sum::<usize>(),
                layout.root.display()
            );
        }
        Command::TrainSup {
            common,
            data,
            resume,
        } => {
            let cfg = load_config(&common)?;
            if common.deterministic {
                tch::set_num_threads(1);
            }
            let layout = DataLayout::new(&data);
            let train = PairedSplit::open(&layout.synthetic(), SPLIT_TRAIN)?;
            let val = optional_split(&layout.synthetic(), SPLIT_VAL)?;
            let hash = cfg.config_hash();
            let mut trainer =
                SupervisedTrainer::new(&cfg.supervised, &cfg.model, train, val, &hash)?;
            let run = match &resume {
                Some(ckpt) => {
                    let run = RunDir::reopen(&run_of_checkpoint(ckpt)?, &cfg)?;
                    trainer.resume(&Checkpoint::open(ckpt)?)?;
                    run
                }
                None => create_run("train-sup", &common, &cfg, &data.display().to_string())?,
            };
            let mut log = TrainLog::open(&run.train_log())?;
            let outcome = trainer.run(&run.ckpts(), &mut log)?;
            println!("last checkpoint: {}", outcome.last.dir().display());
            if let Some(best) = outcome.best {
                println!("best checkpoint: {}", best.dir().display());
            }
        }
        Command::Adapt {
            common,
            data,
            ckpt,
            resume,
        } => {
            let cfg = load_config(&common)?;
            if common.deterministic {
                tch::set_num_threads(1);
            }
            let supervised = single_ckpt(&ckpt, "adapt")?;
            let layout = DataLayout::new(&data);
            let synthetic = UnlabeledSplit::open(&layout.synthetic(), SPLIT_TRAIN)?;
            let real = UnlabeledSplit::open(&layout.real_like(), SPLIT_TRAIN)?;
            let hash = cfg.config_hash();
            let mut trainer = AdaptTrainer::new(&cfg.adapt, &supervised, synthetic, real, &hash)?;
            let run = match &resume {
                Some(path) => {
                    let run = RunDir::reopen(&run_of_checkpoint(path)?, &cfg)?;
                    trainer.resume(&Checkpoint::open(path)?)?;
                    run
                }
                None => {
                    let extra = format!("{}|{}", data.display(), supervised.dir().display());
                    create_run("adapt", &common, &cfg, &extra)?
                }
            };
            let mut log = TrainLog::open(&run.train_log())?;
            let adapted = trainer.run(&run.ckpts(), &mut log)?;
            println!("adapted checkpoint: {}", adapted.dir().display());
        }
        Command::Infer {
            common,
            ckpt,
            input,
            domain,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = single_ckpt(&ckpt, "infer")?;
            let model = DepthModel::for_domain(&ckpt, domain.into())?;
            let files = list_pngs(&input)?;
            let extra = format!("{}|{}|{domain:?}", ckpt.dir().display(), input.display());
            let run = create_run("infer", &common, &cfg, &extra)?;
            let size = model.input_size() as u32;
            for file in files {
                let mut img = read_color(&file)?;
                if img.dimensions() != (size, size) {
                    img = image::imageops::resize(
                        &img,
                        size,
                        size,
                        image::imageops::FilterType::Triangle,
                    );
                }
                let (depth, confidence) = model.predict(&color_tensor(&img).unsqueeze(0))?;
                let depth = tensor_to_depth(&depth, size, size)?;
                let confidence = tensor_to_depth(&confidence, size, size)?;
                let stem = file
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "frame".into());
                let out = run.reports();
                write_pfm(&out.join(format!("{stem}_depth.pfm")), &depth)?;
                write_pfm(&out.join(format!("{stem}_confidence.pfm")), &confidence)?;
                let (lo, hi) = depth.min_max();
                colorize(&depth, (f64::from(lo), f64::from(hi)))
                    .save(out.join(format!("{stem}_depth.png")))?;
            }
            println!("predictions written to {}", run.reports().display());
        }
        Command::Eval {
            common,
            data,
            ckpt,
            domain,
            median_scale,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.eval.median_scale |= median_scale;
            ensure!(
                !ckpt.is_empty(),
                Config,
                "eval requires at least one --ckpt"
            );
            let targets = ckpt
                .iter()
                .map(|s| parse_target(s))
                .collect::<Result<Vec<_>>>()?;
            let mut labels: Vec<&str> = targets.iter().map(|t| t.label.as_str()).collect();
            labels.sort_unstable();
            labels.dedup();
            ensure!(
                labels.len() == targets.len(),
                Config,
                "eval row labels must be distinct"
            );
            let layout = DataLayout::new(&data);
            let (split, description) = match domain {
                DomainArg::Real => (
                    PairedSplit::open_with_archive(
                        &layout.real_like(),
                        &layout.real_like_depth(),
                        SPLIT_TEST,
                    )?,
                    format!("{} real_like/{SPLIT_TEST}", data.display()),
                ),
                DomainArg::Synthetic => (
                    PairedSplit::open(&layout.synthetic(), SPLIT_VAL)?,
                    format!("{} synthetic/{SPLIT_VAL}", data.display()),
                ),
            };
            let extra = format!("{}|{}|{domain:?}", data.display(), ckpt.join(";"));
            let run = create_run("eval", &common, &cfg, &extra)?;
            let report = evaluate_run(&targets, &split, &description, &cfg.eval, &run.reports())?;
            print_report(&report);
            println!("report written to {}", run.reports().display());
        }
        Command::Plot {
            common,
            run: source,
        } => {
            let cfg = load_config(&common)?;
            let records = read_log(&source.join("logs").join("train.jsonl"))?;
            ensure!(
                !records.is_empty(),
                Data,
                "{} has an empty training log",
                source.display()
            );
            let run = create_run("plot", &common, &cfg, &source.display().to_string())?;
            let mut written = 0;
            for phase in ["supervised", "adapt"] {
                let series = loss_series(&records, phase);
                if series.is_empty() {
                    continue;
                }
                let path = run.reports().join(format!("{phase}_losses.svg"));
                fs::write(&path, line_chart_svg(&format!("{phase} losses"), &series))
                    .map_err(|e| Error::io_at(&path, e))?;
                written += 1;
            }
            ensure!(written > 0, Data, "no loss records in {}", source.display());
            println!("plots written to {}", run.reports().display());
        }
    }
    Ok(())
}
