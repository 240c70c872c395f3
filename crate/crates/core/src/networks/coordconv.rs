use tch::{nn, nn::Module, Device, Kind, Tensor};

/// Evenly spaced values on `[-1, 1]`; a single sample sits at the midpoint 0.
pub fn coordinate_ramp(n: i64, kind: Kind, device: Device) -> Tensor {
    if n <= 1 {
        Tensor::zeros([n.max(0)], (kind, device))
    } else {
        Tensor::linspace(-1.0, 1.0, n, (kind, device))
    }
}

/// `[batch, 2, height, width]` coordinate planes: channel 0 varies along the
/// width (x), channel 1 along the height (y). Independent of any input values.
pub fn coordinate_channels(
    batch: i64,
    height: i64,
    width: i64,
    kind: Kind,
    device: Device,
) -> Tensor {
    let xs = coordinate_ramp(width, kind, device)
        .view([1, 1, 1, width])
        .expand([batch, 1, height, width], true);
    let ys = coordinate_ramp(height, kind, device)
        .view([1, 1, height, 1])
        .expand([batch, 1, height, width], true);
    Tensor::cat(&[xs, ys], 1)
}

/// Appends x/y coordinate planes to the input and convolves back to the
/// nominal width of the block.
#[derive(Debug)]
pub struct CoordConv {
    conv: nn::Conv2D,
}

impl CoordConv {
    pub fn new(p: nn::Path, channels_in: i64, channels_out: i64, kernel: i64) -> Self {
        let cfg = nn::ConvConfig {
            padding: kernel / 2,
            ..Default::default()
        };
        CoordConv {
            conv: nn::conv2d(p / "conv", channels_in + 2, channels_out, kernel, cfg),
        }
    }

    pub fn with_coordinates(x: &Tensor) -> Tensor {
        let (b, _, h, w) = x.size4().expect("rank-4 input");
        let coords = coordinate_channels(b, h, w, x.kind(), x.device());
        Tensor::cat(&[x.shallow_clone(), coords], 1)
    }
}

impl Module for CoordConv {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.conv.forward(&Self::with_coordinates(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_vec(t: &Tensor) -> Vec<f64> {
        Vec::<f64>::try_from(t.to_kind(Kind::Double).flatten(0, -1)).unwrap()
    }

    #[test]
    fn single_pixel_ramp_is_midpoint() {
        let c = coordinate_channels(1, 1, 1, Kind::Float, Device::Cpu);
        assert_eq!(to_vec(&c), vec![0.0, 0.0]);
    }

    #[test]
    fn four_wide_ramp() {
        let c = coordinate_channels(1, 2, 4, Kind::Double, Device::Cpu);
        let x = to_vec(&c.get(0).get(0).get(1));
        let expected = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (a, b) in x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = to_vec(&c.get(0).get(1).select(1, 3));
        assert_eq!(y, vec![-1.0, 1.0]);
    }

    #[test]
    fn coordinates_ignore_content_and_batch_index() {
        let a = Tensor::randn([3, 5, 6, 7], (Kind::Float, Device::Cpu));
        let b = Tensor::randn([3, 5, 6, 7], (Kind::Float, Device::Cpu)) * 100.0;
        let ca = CoordConv::with_coordinates(&a).narrow(1, 5, 2);
        let cb = CoordConv::with_coordinates(&b).narrow(1, 5, 2);
        assert!(ca.equal(&cb));
        assert!(ca.get(0).equal(&ca.get(2)));
    }

    #[test]
    fn restores_nominal_width() {
        let vs = nn::VarStore::new(Device::Cpu);
        let cc = CoordConv::new(vs.root(), 8, 8, 3);
        let y = cc.forward(&Tensor::ones([2, 8, 5, 5], (Kind::Float, Device::Cpu)));
        assert_eq!(y.size(), vec![2, 8, 5, 5]);
    }
}
