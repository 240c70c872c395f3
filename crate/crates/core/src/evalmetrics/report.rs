//! Scoring checkpoints on a dataset with archived depth and writing
//! `report.json`, `report.csv` and `depth_vis/`.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::metrics::{median_scaled, MetricAccumulator, MetricReport, DELTA_KEYS, PRED_FLOOR_MM};
use crate::config::EvalConfig;
use crate::error::{ensure, Error, Result};
use crate::pipeline::batch::{labeled_batch, tensor_to_depth};
use crate::pipeline::checkpoint::{Checkpoint, TrainingStep};
use crate::pipeline::infer::DepthModel;
use crate::synthdata::{DepthMap, PairedSplit};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 14] = [
    "schema_version",
    "label",
    "checkpoint",
    "step",
    "encoder",
    "iteration",
    "n_frames",
    "n_pixels",
    "abs_rel",
    "rmse_mm",
    "delta_1.25",
    "delta_1.25^2",
    "delta_1.25^3",
    "gt_range_mm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub checkpoint: String,
    pub step: TrainingStep,
    pub encoder: String,
    pub iteration: u64,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Always `"pixel"`: every pixel of every frame carries equal weight.
    pub aggregation: String,
    pub median_scale: bool,
    pub pred_floor_mm: f64,
    /// Free-form description of the evaluated frames.
    pub dataset: String,
    pub rows: Vec<ReportRow>,
    /// Depth range mapped onto the colour scale of `depth_vis/`.
    pub colorbar_range_mm: (f64, f64),
    pub vis_frames: Vec<u64>,
}

/// A checkpoint to evaluate under a row label.
pub struct EvalTarget {
    pub label: String,
    pub checkpoint: Checkpoint,
}

/// Piecewise-linear perceptual colour scale, dark blue (near) to yellow
/// (far).
pub fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + (STOPS[i + 1][k] - STOPS[i][k]) * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

pub fn colorize(depth: &DepthMap, range: (f64, f64)) -> RgbImage {
    let span = (range.1 - range.0).max(f64::EPSILON);
    RgbImage::from_fn(depth.width(), depth.height(), |u, v| {
        colormap((f64::from(depth.get(u, v)) - range.0) / span)
    })
}

/// Colour frame, ground truth and each prediction side by side above a
/// colour bar spanning `range`.
fn compose(color: &RgbImage, gt: &DepthMap, preds: &[DepthMap], range: (f64, f64)) -> RgbImage {
    let (w, h) = color.dimensions();
    let panels = 2 + preds.len() as u32;
    let bar = (h / 16).max(4);
    let mut out = RgbImage::new(w * panels, h + bar);
    image::imageops::replace(&mut out, color, 0, 0);
    image::imageops::replace(&mut out, &colorize(gt, range), i64::from(w), 0);
    for (k, p) in preds.iter().enumerate() {
        image::imageops::replace(
            &mut out,
            &colorize(p, range),
            i64::from(w) * (2 + k as i64),
            0,
        );
    }
    let total = w * panels;
    for u in 0..total {
        let c = colormap(f64::from(u) / f64::from((total - 1).max(1)));
        for v in h..h + bar {
            out.put_pixel(u, v, c);
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let step = match r.step {
                TrainingStep::Supervised => "supervised",
                TrainingStep::Adapted => "adapted",
            };
            let fields = [
                REPORT_SCHEMA_VERSION.to_string(),
                csv_field(&r.label),
                csv_field(&r.checkpoint),
                step.to_string(),
                r.encoder.clone(),
                r.iteration.to_string(),
                m.n_frames.to_string(),
                m.n_pixels.to_string(),
                format!("{:.6}", m.abs_rel),
                format!("{:.6}", m.rmse),
                format!("{:.6}", m.delta_acc[DELTA_KEYS[0]]),
                format!("{:.6}", m.delta_acc[DELTA_KEYS[1]]),
                format!("{:.6}", m.delta_acc[DELTA_KEYS[2]]),
                format!("{:.3}-{:.3}", m.depth_range.0, m.depth_range.1),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io_at(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io_at(&csv, e))
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Scores every target on `data` (colour plus archived depth) and writes the
/// report files into `out_dir`.
pub fn evaluate_run(
    targets: &[EvalTarget],
    data: &PairedSplit,
    dataset: &str,
    cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<EvalReport> {
    ensure!(!targets.is_empty(), Config, "no checkpoints to evaluate");
    cfg.validate()?;
    let n = cfg.max_frames.map_or(data.len(), |m| m.min(data.len()));
    ensure!(n > 0, Data, "the evaluation dataset is empty");

    let models = targets
        .iter()
        .map(|t| DepthModel::primary(&t.checkpoint))
        .collect::<Result<Vec<_>>>()?;
    for (t, m) in targets.iter().zip(&models) {
        ensure!(
            m.input_size() == i64::from(data.image_size()),
            Config,
            "{} expects {} px images, the dataset has {} px",
            t.label,
            m.input_size(),
            data.image_size()
        );
    }

    let size = data.image_size();
    let n_vis = cfg.vis_frames.min(n);
    let mut accs = vec![MetricAccumulator::new(); targets.len()];
    let mut vis: Vec<(u64, RgbImage, DepthMap, Vec<DepthMap>)> = Vec::with_capacity(n_vis);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(cfg.batch_size) {
        let (images, gt) = labeled_batch(data, chunk, &[])?;
        let preds = models
            .iter()
            .map(|m| m.predict(&images).map(|p| p.0))
            .collect::<Result<Vec<_>>>()?;
        for (b, &index) in chunk.iter().enumerate() {
            let g = tensor_to_depth(&gt.get(b as i64), size, size)?;
            let mut frame_preds = Vec::with_capacity(models.len());
            for (k, p) in preds.iter().enumerate() {
                let mut p = tensor_to_depth(&p.get(b as i64), size, size)?;
                if cfg.median_scale {
                    p = median_scaled(&g, &p)?;
                }
                accs[k].add(&g, &p)?;
                frame_preds.push(p);
            }
            if index < n_vis {
                let color = data.load(index)?.0;
                vis.push((data.ids()[index], color, g, frame_preds));
            }
        }
    }

    let mut rows = Vec::with_capacity(targets.len());
    for ((t, m), acc) in targets.iter().zip(&models).zip(&accs) {
        let metrics = acc.report()?;
        ensure!(
            metrics.is_consistent(),
            Numeric,
            "inconsistent accuracy fractions for {}",
            t.label
        );
        let manifest = t.checkpoint.manifest();
        rows.push(ReportRow {
            label: t.label.clone(),
            checkpoint: t.checkpoint.dir().display().to_string(),
            step: manifest.step,
            encoder: m.encoder_role().to_string(),
            iteration: manifest.iteration,
            metrics,
        });
    }
    let range = rows[0].metrics.depth_range;

    let vis_dir = out_dir.join("depth_vis");
    fs::create_dir_all(&vis_dir).map_err(|e| Error::io_at(&vis_dir, e))?;
    for (id, color, g, preds) in &vis {
        let path = vis_dir.join(format!("{id:06}.png"));
        compose(color, g, preds, range).save(&path)?;
    }

    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        aggregation: "pixel".into(),
        median_scale: cfg.median_scale,
        pred_floor_mm: PRED_FLOOR_MM,
        dataset: dataset.to_string(),
        rows,
        colorbar_range_mm: range,
        vis_frames: vis.iter().map(|v| v.0).collect(),
    };
    report.write(out_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints_and_clamping() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(-3.0), colormap(0.0));
        assert_eq!(colormap(7.0), colormap(1.0));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn csv_has_fixed_header_and_escapes() {
        let mut delta_acc = std::collections::BTreeMap::new();
        for k in DELTA_KEYS {
            delta_acc.insert(k.to_string(), 1.0);
        }
        let report = EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            aggregation: "pixel".into(),
            median_scale: false,
            pred_floor_mm: PRED_FLOOR_MM,
            dataset: "x".into(),
            rows: vec![ReportRow {
                label: "a,b".into(),
                checkpoint: "c".into(),
                step: TrainingStep::Adapted,
                encoder: "encoder_real".into(),
                iteration: 5,
                metrics: MetricReport {
                    abs_rel: 0.0,
                    rmse: 0.0,
                    delta_acc,
                    n_frames: 1,
                    n_pixels: 4,
                    depth_range: (1.0, 2.0),
                },
            }],
            colorbar_range_mm: (1.0, 2.0),
            vis_frames: vec![],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[1].starts_with("1,\"a,b\",c,adapted,encoder_real,5,1,4,"));
    }
}
