/// First and second learning-rate milestones for an `iterations`-long run:
/// `ceil(3n/5)` and `ceil(4n/5)`.
pub fn milestones(iterations: u64) -> (u64, u64) {
    ((3 * iterations).div_ceil(5), (4 * iterations).div_ceil(5))
}

/// Step schedule `{lr, lr/2, lr/4}` with breaks at the two milestones.
pub fn step_lr(base: f64, iteration: u64, iterations: u64) -> f64 {
    let (a, b) = milestones(iterations);
    let halvings = (iteration >= a) as i32 + (iteration >= b) as i32;
    base * 0.5f64.powi(halvings)
}

/// Milestones must fall strictly inside the run.
pub fn milestones_valid(iterations: u64) -> bool {
    let (a, b) = milestones(iterations);
    0 < a && a < b && b < iterations
}
