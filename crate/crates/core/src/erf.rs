//! Effective-receptive-field probe: the gradient of one output unit with
//! respect to every input pixel, aggregated over channels. The footprint
//! fraction operationalizes "image-wide receptive field".

use crate::error::Result;
use crate::tensor::{backward, Tensor};

pub const FOOTPRINT_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ErfMap {
    pub h: usize,
    pub w: usize,
    /// Per-pixel |gradient| summed over input channels.
    pub map: Vec<f64>,
}

impl ErfMap {
    /// Fraction of input pixels the probed output actually depends on.
    pub fn footprint_fraction(&self) -> f64 {
        let hit = self.map.iter().filter(|&&v| v > FOOTPRINT_EPS).count();
        hit as f64 / (self.h * self.w) as f64
    }

    pub fn footprint_pixels(&self) -> usize {
        self.map.iter().filter(|&&v| v > FOOTPRINT_EPS).count()
    }

    /// Max-normalized map for visualization, [1,3,H,W] grayscale.
    pub fn to_image(&self) -> Result<Tensor> {
        let peak = self.map.iter().cloned().fold(0.0f64, f64::max);
        let norm: Vec<f64> = if peak > 0.0 {
            self.map.iter().map(|v| v / peak).collect()
        } else {
            self.map.clone()
        };
        let mut data = Vec::with_capacity(3 * self.h * self.w);
        for _ in 0..3 {
            data.extend_from_slice(&norm);
        }
        Tensor::constant(&[1, 3, self.h, self.w], data)
    }
}

/// Probe `model` at output position (row, col): sensitivity of the output
/// summed over channels at that position to every input pixel. The model
/// maps [1,C,H,W] to [1,C',H',W'] with any C'.
pub fn erf_probe(
    model: impl FnOnce(&Tensor) -> Result<Tensor>,
    input: &Tensor,
    row: usize,
    col: usize,
) -> Result<ErfMap> {
    let (_, c, h, w) = input.dims4()?;
    let x = input.detach().tracked();
    let y = model(&x)?;
    let (_, oc, oh, ow) = y.dims4()?;
    let mut onehot = vec![0.0; oc * oh * ow];
    for ch in 0..oc {
        onehot[(ch * oh + row) * ow + col] = 1.0;
    }
    let sel = Tensor::constant(y.shape(), onehot)?;
    let probe = y.mul(&sel)?.sum()?;
    let grads = backward(&probe)?;
    let g = grads.get_or_zeros(&x);
    let mut map = vec![0.0; h * w];
    for ch in 0..c {
        for i in 0..h * w {
            map[i] += g[ch * h * w + i].abs();
        }
    }
    Ok(ErfMap { h, w, map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{conv2d, ConvSpec, Mode, PadMode};
    use crate::ffc::{FfcConfig, FfcLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_conv_footprint_is_kernel_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wdata: Vec<f64> = (0..2 * 3 * 9).map(|_| rng.random_range(0.1..1.0)).collect();
        let weight = Tensor::new(&[2, 3, 3, 3], wdata, true).unwrap();
        let idata: Vec<f64> = (0..3 * 121).map(|_| rng.random_range(0.0..1.0)).collect();
        let input = Tensor::constant(&[1, 3, 11, 11], idata).unwrap();
        let spec = ConvSpec::same(3, PadMode::Zero);
        let map = erf_probe(|x| conv2d(x, &weight, None, spec), &input, 5, 5).unwrap();
        assert_eq!(map.footprint_pixels(), 9);
        assert!((map.footprint_fraction() - 9.0 / 121.0).abs() < 1e-15);
    }

    #[test]
    fn single_ffc_layer_covers_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ffc = FfcLayer::new(&mut rng, FfcConfig::new(4, 4, 0.5)).unwrap();
        let idata: Vec<f64> = (0..4 * 256).map(|_| rng.random_range(0.0..1.0)).collect();
        let input = Tensor::constant(&[1, 4, 16, 16], idata).unwrap();
        let map = erf_probe(|x| ffc.forward(x, Mode::Eval, false), &input, 8, 8).unwrap();
        assert_eq!(map.footprint_fraction(), 1.0);
    }

    #[test]
    fn erf_image_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wdata: Vec<f64> = (0..27).map(|_| rng.random_range(0.1..1.0)).collect();
        let weight = Tensor::new(&[1, 3, 3, 3], wdata, true).unwrap();
        let input = Tensor::full(&[1, 3, 9, 9], 0.5).unwrap();
        let spec = ConvSpec::same(3, PadMode::Zero);
        let map = erf_probe(|x| conv2d(x, &weight, None, spec), &input, 4, 4).unwrap();
        let img = map.to_image().unwrap();
        let peak = img.data().iter().cloned().fold(0.0f64, f64::max);
        assert!((peak - 1.0).abs() < 1e-15);
    }
}
