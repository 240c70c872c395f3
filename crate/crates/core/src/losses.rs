//! Supervised depth/confidence losses and the adversarial feature losses.
//!
//! Every loss takes rank-4 `[batch, 1, height, width]` tensors and reduces
//! over the batch as the mean of per-image pixel sums. All functions are
//! pure and differentiable with respect to the prediction; thresholds and
//! confidence targets are detached constants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tch::{Reduction, Tensor};

use crate::error::{ensure, Error, Result};
use crate::networks::{MultiScaleOutput, SCALES};

/// Fraction of the batch's maximum absolute error used as the BerHu threshold.
pub const BERHU_K: f64 = 0.2;
/// Added to the denominator of the scale-invariant finite differences.
pub const GRADIENT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_depth: f64,
    pub lambda_gradient: f64,
    pub lambda_confidence: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_depth: 1.0,
            lambda_gradient: 0.5,
            lambda_confidence: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_depth: f64, lambda_gradient: f64, lambda_confidence: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_depth,
            lambda_gradient,
            lambda_confidence,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_depth,
            self.lambda_gradient,
            self.lambda_confidence,
        ];
        ensure!(
            all.iter().all(|w| w.is_finite() && *w >= 0.0),
            Config,
            "loss weights must be finite and non-negative, got {all:?}"
        );
        ensure!(
            all.iter().any(|w| *w > 0.0),
            Config,
            "loss weights must not all be zero"
        );
        Ok(())
    }
}

fn check_map(t: &Tensor, what: &str) -> Result<(i64, i64, i64)> {
    let size = t.size();
    ensure!(
        size.len() == 4 && size[1] == 1,
        Contract,
        "{what} must be [batch, 1, height, width], got {size:?}"
    );
    Ok((size[0], size[2], size[3]))
}

fn check_pair(gt: &Tensor, pred: &Tensor) -> Result<i64> {
    let (batch, ..) = check_map(gt, "ground truth")?;
    check_map(pred, "prediction")?;
    ensure!(
        gt.size() == pred.size(),
        Contract,
        "shape mismatch: ground truth {:?} vs prediction {:?}",
        gt.size(),
        pred.size()
    );
    ensure!(batch > 0, Contract, "empty batch");
    Ok(batch)
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let finite = tch::no_grad(|| t.isfinite().all().int64_value(&[]) != 0);
    ensure!(finite, Numeric, "{what} contains non-finite values");
    Ok(())
}

/// `c = k * max |gt - pred|` over the whole batch.
pub fn berhu_threshold(gt: &Tensor, pred: &Tensor, k: f64) -> Result<f64> {
    ensure!(
        k.is_finite() && k > 0.0,
        Contract,
        "berhu k must be positive, got {k}"
    );
    check_pair(gt, pred)?;
    check_finite(gt, "ground truth")?;
    check_finite(pred, "prediction")?;
    let max_err = tch::no_grad(|| (gt - pred).abs().max().double_value(&[]));
    Ok(k * max_err)
}

/// Elementwise reverse Huber of a non-negative error map; `c = 0` is pure L1.
pub fn berhu(abs_err: &Tensor, c: f64) -> Tensor {
    if c == 0.0 {
        return abs_err.shallow_clone();
    }
    let quadratic = (abs_err.square() + c * c) / (2.0 * c);
    abs_err.where_self(&abs_err.le(c), &quadratic)
}

pub fn berhu_loss(gt: &Tensor, pred: &Tensor, c: f64) -> Result<Tensor> {
    ensure!(
        c.is_finite() && c >= 0.0,
        Contract,
        "berhu threshold must be >= 0, got {c}"
    );
    let batch = check_pair(gt, pred)?;
    Ok(berhu(&(gt - pred).abs(), c).sum(gt.kind()) / batch as f64)
}

fn normalized_difference(a: &Tensor, b: &Tensor) -> Tensor {
    (a - b) / (a.abs() + b.abs() + GRADIENT_EPS)
}

/// Scale-invariant finite differences with step `h`, as `[batch, 2, H, W]`:
/// channel 0 along the width, channel 1 along the height. Pixels whose
/// `+h` neighbour falls outside the image get a zero entry.
pub fn scale_invariant_gradient(img: &Tensor, h: i64) -> Result<Tensor> {
    let (_, height, width) = check_map(img, "image")?;
    ensure!(h >= 1, Contract, "gradient step must be positive, got {h}");
    ensure!(
        h < height.max(width),
        Contract,
        "gradient step {h} must be smaller than the image side ({height}x{width})"
    );
    let component = |dim: i64, extent: i64, pad: [i64; 4]| {
        if h >= extent {
            return img.zeros_like();
        }
        let ahead = img.narrow(dim, h, extent - h);
        let here = img.narrow(dim, 0, extent - h);
        normalized_difference(&ahead, &here).constant_pad_nd(pad)
    };
    let horizontal = component(3, width, [0, h, 0, 0]);
    let vertical = component(2, height, [0, 0, 0, h]);
    Ok(Tensor::cat(&[horizontal, vertical], 1))
}

pub fn gradient_loss(gt: &Tensor, pred: &Tensor, h: i64) -> Result<Tensor> {
    let batch = check_pair(gt, pred)?;
    let diff = scale_invariant_gradient(gt, h)? - scale_invariant_gradient(pred, h)?;
    let norms = diff.norm_scalaropt_dim(2.0, [1i64].as_slice(), false);
    Ok(norms.sum(gt.kind()) / batch as f64)
}

/// `exp(-|gt - pred|)`, detached from the prediction.
pub fn confidence_target(gt: &Tensor, pred: &Tensor) -> Result<Tensor> {
    check_pair(gt, pred)?;
    Ok(tch::no_grad(|| (gt - pred).abs().neg().exp()))
}

pub fn confidence_loss(target: &Tensor, pred: &Tensor) -> Result<Tensor> {
    let batch = check_pair(target, pred)?;
    Ok((target - pred).abs().sum(target.kind()) / batch as f64)
}

/// Bilinear upsampling (half-pixel centres) to `height x width`.
pub fn upsample_to(x: &Tensor, height: i64, width: i64) -> Tensor {
    let size = x.size();
    if size[2] == height && size[3] == width {
        x.shallow_clone()
    } else {
        x.upsample_bilinear2d([height, width], false, None, None)
    }
}

/// Per-scale constants of the supervised objective: BerHu thresholds and
/// confidence targets computed from the upsampled depth predictions.
#[derive(Debug)]
pub struct SupervisedTargets {
    pub thresholds: Vec<f64>,
    pub confidence: Vec<Tensor>,
}

impl SupervisedTargets {
    pub fn compute(gt: &Tensor, outputs: &MultiScaleOutput, k: f64) -> Result<Self> {
        let (_, height, width) = check_map(gt, "ground truth")?;
        let mut thresholds = Vec::with_capacity(SCALES.len());
        let mut confidence = Vec::with_capacity(SCALES.len());
        for out in outputs.scales() {
            let depth = tch::no_grad(|| upsample_to(&out.depth, height, width));
            thresholds.push(berhu_threshold(gt, &depth, k)?);
            confidence.push(confidence_target(gt, &depth)?);
        }
        Ok(SupervisedTargets {
            thresholds,
            confidence,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTerms {
    pub scale: i64,
    pub threshold: f64,
    pub depth: f64,
    pub gradient: f64,
    pub confidence: f64,
}

#[derive(Debug)]
pub struct SupervisedLoss {
    pub total: Tensor,
    pub terms: Vec<ScaleTerms>,
}

impl SupervisedLoss {
    pub fn total_value(&self) -> f64 {
        self.total.double_value(&[])
    }

    /// The twelve unweighted terms keyed `depth_h1`, `gradient_h1`, ...
    pub fn breakdown(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for t in &self.terms {
            map.insert(format!("depth_h{}", t.scale), t.depth);
            map.insert(format!("gradient_h{}", t.scale), t.gradient);
            map.insert(format!("confidence_h{}", t.scale), t.confidence);
        }
        map
    }
}

/// Weighted multi-scale objective with thresholds and confidence targets
/// derived from the current prediction.
pub fn supervised_loss(
    gt: &Tensor,
    outputs: &MultiScaleOutput,
    weights: &LossWeights,
    k: f64,
) -> Result<SupervisedLoss> {
    let targets = SupervisedTargets::compute(gt, outputs, k)?;
    supervised_loss_with_targets(gt, outputs, weights, &targets)
}

/// Same objective with externally fixed per-scale constants.
///
/// A gradient step that does not fit inside the image leaves every pixel
/// without an in-range neighbour, so that term is zero.
pub fn supervised_loss_with_targets(
    gt: &Tensor,
    outputs: &MultiScaleOutput,
    weights: &LossWeights,
    targets: &SupervisedTargets,
) -> Result<SupervisedLoss> {
    let (_, height, width) = check_map(gt, "ground truth")?;
    ensure!(
        targets.thresholds.len() == SCALES.len() && targets.confidence.len() == SCALES.len(),
        Contract,
        "expected constants for {} scales",
        SCALES.len()
    );
    let mut total = Tensor::zeros([], (gt.kind(), gt.device()));
    let mut terms = Vec::with_capacity(SCALES.len());
    for (i, out) in outputs.scales().iter().enumerate() {
        let h = out.scale;
        let depth = upsample_to(&out.depth, height, width);
        let confidence = upsample_to(&out.confidence, height, width);
        let l_depth = berhu_loss(gt, &depth, targets.thresholds[i])?;
        let l_gradient = if h < height.max(width) {
            gradient_loss(gt, &depth, h)?
        } else {
            Tensor::zeros([], (gt.kind(), gt.device()))
        };
        let l_conf = confidence_loss(&targets.confidence[i], &confidence)?;
        terms.push(ScaleTerms {
            scale: h,
            threshold: targets.thresholds[i],
            depth: l_depth.double_value(&[]),
            gradient: l_gradient.double_value(&[]),
            confidence: l_conf.double_value(&[]),
        });
        total = total
            + l_depth * weights.lambda_depth
            + l_gradient * weights.lambda_gradient
            + l_conf * weights.lambda_confidence;
    }
    let value = total.double_value(&[]);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("supervised loss is {value}")));
    }
    Ok(SupervisedLoss { total, terms })
}

/// Binary cross-entropy on raw patch logits: synthetic-domain features are
/// labeled real (1), real-domain features fake (0). Mean over patches and
/// batch for each side, summed.
pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Tensor {
    let real = real_logits.binary_cross_entropy_with_logits(
        &real_logits.ones_like(),
        None::<Tensor>,
        None::<Tensor>,
        Reduction::Mean,
    );
    let fake = fake_logits.binary_cross_entropy_with_logits(
        &fake_logits.zeros_like(),
        None::<Tensor>,
        None::<Tensor>,
        Reduction::Mean,
    );
    real + fake
}

/// Non-saturating encoder loss `-mean(log sigmoid(logit))`.
pub fn encoder_adversarial_loss(fake_logits: &Tensor) -> Tensor {
    fake_logits.binary_cross_entropy_with_logits(
        &fake_logits.ones_like(),
        None::<Tensor>,
        None::<Tensor>,
        Reduction::Mean,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ScaleOutput;
    use tch::{Device, Kind};

    const LN2: f64 = std::f64::consts::LN_2;

    fn map(values: &[f64], h: i64, w: i64) -> Tensor {
        Tensor::from_slice(values).view([1, 1, h, w])
    }

    fn value(t: &Tensor) -> f64 {
        t.double_value(&[])
    }

    #[test]
    fn threshold_examples() {
        let gt = map(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        assert_eq!(berhu_threshold(&gt, &gt, BERHU_K).unwrap(), 0.0);

        let pred = map(&[1.0, 3.0, 3.0, 4.0], 2, 2);
        assert!((berhu_threshold(&gt, &pred, 0.2).unwrap() - 0.2).abs() < 1e-15);

        let gt = map(&[1.0, 1.0, 1.0], 1, 3);
        let pred = map(&[0.9, 1.5, 0.7], 1, 3);
        assert!((berhu_threshold(&gt, &pred, 0.2).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn threshold_spans_the_batch() {
        let gt = Tensor::ones([2, 1, 2, 2], (Kind::Double, Device::Cpu));
        let pred = gt.copy();
        let _ = pred.get(1).get(0).get(1).get(1).fill_(3.0);
        assert!((berhu_threshold(&gt, &pred, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_rejects_bad_input() {
        let gt = map(&[1.0, 2.0], 1, 2);
        assert!(berhu_threshold(&gt, &map(&[1.0, 2.0, 3.0], 1, 3), 0.2).is_err());
        assert!(berhu_threshold(&gt, &map(&[1.0, f64::NAN], 1, 2), 0.2).is_err());
        assert!(berhu_threshold(&gt, &gt, 0.0).is_err());
    }

    #[test]
    fn berhu_examples() {
        let gt = map(&[1.0, 2.0], 1, 2);
        assert_eq!(value(&berhu_loss(&gt, &gt, 0.3).unwrap()), 0.0);
        let linear = berhu_loss(&map(&[1.0], 1, 1), &map(&[1.1], 1, 1), 0.5).unwrap();
        assert!((value(&linear) - 0.1).abs() < 1e-12);
        let quad = berhu_loss(&map(&[1.0], 1, 1), &map(&[1.5], 1, 1), 0.2).unwrap();
        assert!((value(&quad) - 0.725).abs() < 1e-12);
    }

    #[test]
    fn berhu_zero_threshold_is_l1() {
        let gt = map(&[1.0, 2.0, 3.0], 1, 3);
        let pred = map(&[1.5, 1.0, 3.25], 1, 3);
        assert!((value(&berhu_loss(&gt, &pred, 0.0).unwrap()) - 1.75).abs() < 1e-12);
        assert!(berhu_loss(&gt, &pred, -0.1).is_err());
    }

    #[test]
    fn berhu_reduction_is_batch_mean_of_sums() {
        let gt = Tensor::zeros([2, 1, 2, 2], (Kind::Double, Device::Cpu));
        let pred = Tensor::full([2, 1, 2, 2], 0.1, (Kind::Double, Device::Cpu));
        // each image sums to 0.4
        assert!((value(&berhu_loss(&gt, &pred, 1.0).unwrap()) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gradient_operator_examples() {
        let constant = Tensor::full([1, 1, 4, 4], 7.0, (Kind::Double, Device::Cpu));
        let g = scale_invariant_gradient(&constant, 1).unwrap();
        assert_eq!(g.size(), vec![1, 2, 4, 4]);
        assert_eq!(value(&g.abs().max()), 0.0);

        let f = map(&[1.0, 3.0], 1, 2);
        let g = scale_invariant_gradient(&f, 1).unwrap();
        assert!((g.double_value(&[0, 0, 0, 0]) - 0.5).abs() < 1e-7);
        assert_eq!(g.double_value(&[0, 0, 0, 1]), 0.0);
        assert_eq!(g.double_value(&[0, 1, 0, 0]), 0.0);
    }

    #[test]
    fn gradient_operator_border_and_step() {
        let f = map(&(1..=16).map(f64::from).collect::<Vec<_>>(), 4, 4);
        let g = scale_invariant_gradient(&f, 2).unwrap();
        // horizontal at (row 0, col 1): (4 - 2) / (4 + 2)
        assert!((g.double_value(&[0, 0, 0, 1]) - 2.0 / 6.0).abs() < 1e-7);
        // vertical at (row 1, col 0): (13 - 5) / (13 + 5)
        assert!((g.double_value(&[0, 1, 1, 0]) - 8.0 / 18.0).abs() < 1e-7);
        for c in 2..4 {
            assert_eq!(g.double_value(&[0, 0, 0, c]), 0.0);
            assert_eq!(g.double_value(&[0, 1, c, 0]), 0.0);
        }
        assert!(scale_invariant_gradient(&f, 4).is_err());
        assert!(scale_invariant_gradient(&f, 0).is_err());
    }

    #[test]
    fn gradient_operator_is_scale_invariant() {
        let f = Tensor::rand([2, 1, 6, 6], (Kind::Double, Device::Cpu)) + 0.5;
        let g = scale_invariant_gradient(&f, 1).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let gs = scale_invariant_gradient(&(&f * s), 1).unwrap();
            assert!(value(&(&g - gs).abs().max()) < 1e-7);
        }
    }

    #[test]
    fn gradient_loss_examples() {
        let ramp = map(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        assert_eq!(value(&gradient_loss(&ramp, &ramp, 1).unwrap()), 0.0);
        let shifted = &ramp + 1.0;
        assert!(value(&gradient_loss(&ramp, &shifted, 1).unwrap()) > 1e-3);
        let scaled = &ramp * 3.0;
        assert!(value(&gradient_loss(&ramp, &scaled, 1).unwrap()) < 1e-7);
    }

    #[test]
    fn gradient_loss_backward_is_finite_on_identical_borders() {
        let gt = Tensor::rand([1, 1, 5, 5], (Kind::Double, Device::Cpu)) + 1.0;
        let pred = gt.copy().set_requires_grad(true);
        gradient_loss(&gt, &pred, 2).unwrap().backward();
        let grad = pred.grad();
        assert_eq!(grad.isfinite().all().int64_value(&[]), 1);
    }

    #[test]
    fn confidence_target_examples() {
        let gt = map(&[5.0, 5.0, 5.0], 1, 3);
        let pred = map(&[5.0, 5.0 + LN2, 15.0], 1, 3);
        let c = confidence_target(&gt, &pred).unwrap();
        assert_eq!(c.double_value(&[0, 0, 0, 0]), 1.0);
        assert!((c.double_value(&[0, 0, 0, 1]) - 0.5).abs() < 1e-12);
        assert!((c.double_value(&[0, 0, 0, 2]) - (-10.0f64).exp()).abs() < 1e-15);
        assert!(!c.requires_grad());
    }

    #[test]
    fn confidence_target_is_detached() {
        let gt = map(&[1.0, 2.0], 1, 2);
        let pred = map(&[1.5, 2.5], 1, 2).set_requires_grad(true);
        assert!(!confidence_target(&gt, &pred).unwrap().requires_grad());
    }

    #[test]
    fn confidence_loss_examples() {
        let target = Tensor::ones([1, 1, 2, 2], (Kind::Double, Device::Cpu));
        assert_eq!(value(&confidence_loss(&target, &target).unwrap()), 0.0);
        let pred = Tensor::full([1, 1, 2, 2], 0.25, (Kind::Double, Device::Cpu));
        assert!((value(&confidence_loss(&target, &pred).unwrap()) - 3.0).abs() < 1e-12);
    }

    fn constant_outputs(batch: i64, side: i64, depth: f64, confidence: f64) -> MultiScaleOutput {
        let outs = SCALES
            .iter()
            .map(|&s| ScaleOutput {
                scale: s,
                depth: Tensor::full(
                    [batch, 1, side / s, side / s],
                    depth,
                    (Kind::Double, Device::Cpu),
                ),
                confidence: Tensor::full(
                    [batch, 1, side / s, side / s],
                    confidence,
                    (Kind::Double, Device::Cpu),
                ),
            })
            .collect();
        MultiScaleOutput::new(outs).unwrap()
    }

    #[test]
    fn supervised_loss_vanishes_at_the_optimum() {
        let gt = Tensor::full([1, 1, 16, 16], 4.0, (Kind::Double, Device::Cpu));
        let out = constant_outputs(1, 16, 4.0, 1.0);
        let loss = supervised_loss(&gt, &out, &LossWeights::default(), BERHU_K).unwrap();
        assert_eq!(loss.total_value(), 0.0);
        assert_eq!(loss.breakdown().len(), 12);
    }

    #[test]
    fn supervised_loss_weight_masking() {
        let gt = Tensor::rand([2, 1, 16, 16], (Kind::Double, Device::Cpu)) * 10.0 + 1.0;
        let out = constant_outputs(2, 16, 5.0, 0.5);
        let w = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        let loss = supervised_loss(&gt, &out, &w, BERHU_K).unwrap();
        let berhu_sum: f64 = loss.terms.iter().map(|t| t.depth).sum();
        assert!((loss.total_value() - berhu_sum).abs() < 1e-9 * berhu_sum.abs());
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        assert!(LossWeights::new(0.0, 0.0, 0.1).is_ok());
    }

    #[test]
    fn discriminator_loss_examples() {
        let zeros = Tensor::zeros([2, 1, 3, 3], (Kind::Double, Device::Cpu));
        assert!((value(&discriminator_loss(&zeros, &zeros)) - 2.0 * LN2).abs() < 1e-12);

        let big = Tensor::full([2, 1, 3, 3], 60.0, (Kind::Double, Device::Cpu));
        assert!(value(&discriminator_loss(&big, &(-&big))) < 1e-20);

        let real = Tensor::randn([2, 1, 3, 3], (Kind::Double, Device::Cpu));
        let fake = Tensor::randn([2, 1, 3, 3], (Kind::Double, Device::Cpu));
        let a = value(&discriminator_loss(&real, &fake));
        let b = value(&discriminator_loss(&(-&fake), &(-&real)));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn encoder_loss_examples() {
        let at = |v: f64| {
            value(&encoder_adversarial_loss(
                &Tensor::from_slice(&[v]).view([1, 1, 1, 1]),
            ))
        };
        assert!((at(0.0) - LN2).abs() < 1e-12);
        assert!(at(60.0) < 1e-20);
        assert!(at(-2.0) > at(0.0) && at(0.0) > at(2.0));

        let zeros = Tensor::zeros([1, 1, 2, 2], (Kind::Double, Device::Cpu));
        let pair =
            value(&discriminator_loss(&zeros, &zeros)) + value(&encoder_adversarial_loss(&zeros));
        assert!((pair - 3.0 * LN2).abs() < 1e-12);
    }
}
