use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::synthdata::DepthMap;

/// Predictions are clamped to this floor before any ratio is formed.
pub const PRED_FLOOR_MM: f64 = 1e-3;
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];
pub const DELTA_KEYS: [&str; 3] = ["1.25", "1.25^2", "1.25^3"];

fn check_pair(gt: &[f32], pred: &[f32]) -> Result<()> {
    ensure!(!gt.is_empty(), Data, "empty depth map");
    ensure!(
        gt.len() == pred.len(),
        Data,
        "ground truth has {} pixels, prediction {}",
        gt.len(),
        pred.len()
    );
    ensure!(
        gt.iter().all(|g| g.is_finite() && *g > 0.0),
        Data,
        "ground-truth depth must be finite and positive"
    );
    ensure!(
        pred.iter().all(|p| p.is_finite()),
        Numeric,
        "prediction contains non-finite values"
    );
    Ok(())
}

fn clamp(p: f32) -> f64 {
    f64::from(p).max(PRED_FLOOR_MM)
}

fn pair<'a>(gt: &'a DepthMap, pred: &'a DepthMap) -> Result<(&'a [f32], &'a [f32])> {
    ensure!(
        gt.width() == pred.width() && gt.height() == pred.height(),
        Data,
        "depth maps differ in size"
    );
    check_pair(gt.data(), pred.data())?;
    Ok((gt.data(), pred.data()))
}

pub fn abs_rel(gt: &DepthMap, pred: &DepthMap) -> Result<f64> {
    let (g, p) = pair(gt, pred)?;
    let mut sums = FrameSums::default();
    sums.accumulate(g, p);
    Ok(sums.abs_rel / sums.pixels as f64)
}

pub fn rmse(gt: &DepthMap, pred: &DepthMap) -> Result<f64> {
    let (g, p) = pair(gt, pred)?;
    let mut sums = FrameSums::default();
    sums.accumulate(g, p);
    Ok((sums.squared / sums.pixels as f64).sqrt())
}

/// Fraction of pixels with `max(gt/pred, pred/gt) < tau`.
pub fn delta_accuracy(gt: &DepthMap, pred: &DepthMap, tau: f64) -> Result<f64> {
    let (g, p) = pair(gt, pred)?;
    let hits = g
        .iter()
        .zip(p)
        .filter(|(g, p)| ratio(f64::from(**g), clamp(**p)) < tau)
        .count();
    Ok(hits as f64 / g.len() as f64)
}

fn ratio(g: f64, p: f64) -> f64 {
    (g / p).max(p / g)
}

/// Per-frame partial sums.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct FrameSums {
    pixels: u64,
    abs_rel: f64,
    squared: f64,
    delta: [u64; 3],
    gt_min: f64,
    gt_max: f64,
}

impl FrameSums {
    fn accumulate(&mut self, gt: &[f32], pred: &[f32]) {
        self.gt_min = f64::INFINITY;
        self.gt_max = f64::NEG_INFINITY;
        for (&g, &p) in gt.iter().zip(pred) {
            let g = f64::from(g);
            let p = clamp(p);
            let e = g - p;
            self.abs_rel += e.abs() / g;
            self.squared += e * e;
            let r = ratio(g, p);
            for (count, tau) in self.delta.iter_mut().zip(DELTA_THRESHOLDS) {
                *count += u64::from(r < tau);
            }
            self.gt_min = self.gt_min.min(g);
            self.gt_max = self.gt_max.max(g);
        }
        self.pixels += gt.len() as u64;
    }
}

/// Summary over a set of frames, pixel-weighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub rmse: f64,
    /// Keyed by `"1.25"`, `"1.25^2"`, `"1.25^3"`.
    pub delta_acc: BTreeMap<String, f64>,
    pub n_frames: u64,
    pub n_pixels: u64,
    pub depth_range: (f64, f64),
}

impl MetricReport {
    pub fn delta(&self, i: usize) -> f64 {
        self.delta_acc[DELTA_KEYS[i]]
    }

    /// Fractions lie in `[0, 1]` and grow with the threshold.
    pub fn is_consistent(&self) -> bool {
        let d: Vec<f64> = (0..3).map(|i| self.delta(i)).collect();
        d.iter().all(|v| (0.0..=1.0).contains(v)) && d[0] <= d[1] && d[1] <= d[2]
    }
}

/// Accumulates frames; the report does not depend on the order in which
/// frames were added.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    frames: Vec<FrameSums>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, gt: &DepthMap, pred: &DepthMap) -> Result<()> {
        let (g, p) = pair(gt, pred)?;
        self.add_slices(g, p)
    }

    pub fn add_slices(&mut self, gt: &[f32], pred: &[f32]) -> Result<()> {
        check_pair(gt, pred)?;
        let mut f = FrameSums::default();
        f.accumulate(gt, pred);
        self.frames.push(f);
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn report(&self) -> Result<MetricReport> {
        ensure!(!self.frames.is_empty(), Data, "no frames to evaluate");
        let sorted_sum = |f: &dyn Fn(&FrameSums) -> f64| {
            let mut v: Vec<f64> = self.frames.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>()
        };
        let pixels: u64 = self.frames.iter().map(|f| f.pixels).sum();
        let n = pixels as f64;
        let mut delta_acc = BTreeMap::new();
        for (i, key) in DELTA_KEYS.iter().enumerate() {
            let hits: u64 = self.frames.iter().map(|f| f.delta[i]).sum();
            delta_acc.insert(key.to_string(), hits as f64 / n);
        }
        let lo = self
            .frames
            .iter()
            .map(|f| f.gt_min)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .frames
            .iter()
            .map(|f| f.gt_max)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(MetricReport {
            abs_rel: sorted_sum(&|f| f.abs_rel) / n,
            rmse: (sorted_sum(&|f| f.squared) / n).sqrt(),
            delta_acc,
            n_frames: self.frames.len() as u64,
            n_pixels: pixels,
            depth_range: (lo, hi),
        })
    }
}

/// Multiplies `pred` by `median(gt) / median(pred)`.
pub fn median_scaled(gt: &DepthMap, pred: &DepthMap) -> Result<DepthMap> {
    let (g, p) = pair(gt, pred)?;
    let median = |v: &[f32]| {
        let mut s: Vec<f64> = v.iter().map(|x| f64::from(*x)).collect();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    };
    let mp = median(p).max(PRED_FLOOR_MM);
    let scale = median(g) / mp;
    DepthMap::new(
        pred.width(),
        pred.height(),
        p.iter().map(|x| (f64::from(*x) * scale) as f32).collect(),
    )
}
