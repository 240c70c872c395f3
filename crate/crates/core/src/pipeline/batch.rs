//! Conversions between images/depth maps and tensors, and batch assembly.

use image::RgbImage;
use tch::{Device, Kind, Tensor};

use super::augment::Augmentation;
use crate::error::Result;
use crate::synthdata::{DepthMap, PairedSplit, UnlabeledSplit};

/// `[3, H, W]` float colour in `[0, 1]`.
pub fn color_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_slice(img.as_raw())
        .view([h as i64, w as i64, 3])
        .permute([2, 0, 1])
        .to_kind(Kind::Float)
        / 255.0
}

/// `[1, H, W]` depth in millimetres.
pub fn depth_tensor(depth: &DepthMap) -> Tensor {
    Tensor::from_slice(depth.data()).view([1, depth.height() as i64, depth.width() as i64])
}

/// Inverse of [`depth_tensor`] for any tensor with `H * W` elements.
pub fn tensor_to_depth(t: &Tensor, width: u32, height: u32) -> Result<DepthMap> {
    let flat = t
        .detach()
        .to_kind(Kind::Float)
        .to_device(Device::Cpu)
        .flatten(0, -1);
    DepthMap::new(width, height, Vec::<f32>::try_from(&flat)?)
}

/// Colour and depth batches `[B, 3, H, W]`, `[B, 1, H, W]`.
pub fn labeled_batch(
    data: &PairedSplit,
    indices: &[usize],
    augment: &[Augmentation],
) -> Result<(Tensor, Tensor)> {
    let mut colors = Vec::with_capacity(indices.len());
    let mut depths = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let (c, d) = data.load(i)?;
        let aug = augment
            .get(k)
            .copied()
            .unwrap_or_else(Augmentation::identity);
        colors.push(aug.apply_color(&color_tensor(&c)));
        depths.push(aug.apply_depth(&depth_tensor(&d)));
    }
    Ok((Tensor::stack(&colors, 0), Tensor::stack(&depths, 0)))
}

/// Colour-only batch from a labeled split (depth is not read).
pub fn color_batch(
    data: &PairedSplit,
    indices: &[usize],
    augment: &[Augmentation],
) -> Result<Tensor> {
    Ok(labeled_batch(data, indices, augment)?.0)
}

pub fn unlabeled_batch(
    data: &UnlabeledSplit,
    indices: &[usize],
    augment: &[Augmentation],
) -> Result<Tensor> {
    let mut colors = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let aug = augment
            .get(k)
            .copied()
            .unwrap_or_else(Augmentation::identity);
        colors.push(aug.apply_color(&color_tensor(&data.load(i)?)));
    }
    Ok(Tensor::stack(&colors, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_layout_is_channel_first() {
        let img = RgbImage::from_fn(3, 2, |u, v| image::Rgb([u as u8, v as u8, 255]));
        let t = color_tensor(&img);
        assert_eq!(t.size(), vec![3, 2, 3]);
        assert!((t.double_value(&[0, 1, 2]) - 2.0 / 255.0).abs() < 1e-7);
        assert!((t.double_value(&[1, 1, 2]) - 1.0 / 255.0).abs() < 1e-7);
        assert_eq!(t.double_value(&[2, 0, 0]), 1.0);
    }

    #[test]
    fn depth_round_trip() {
        let d = DepthMap::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let t = depth_tensor(&d);
        assert_eq!(t.double_value(&[0, 1, 0]), 4.0);
        assert_eq!(tensor_to_depth(&t, 3, 2).unwrap(), d);
    }
}
