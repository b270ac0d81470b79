//! Fast Fourier convolution: channel split into a local branch (spatial
//! convs) and a global branch whose spectral transform applies a 1x1
//! convolution block in the real-FFT frequency domain, plus cross-branch
//! fusion. Every output pixel of the global branch depends on every input
//! pixel, which is what gives the layer its image-wide receptive field.

use rand_chacha::ChaCha8Rng;

use crate::conv::{ConvSpec, Mode, PadMode};
use crate::error::{Error, Result};
use crate::fft::{spectral_irfft2d, spectral_rfft2d};
use crate::layers::{BatchNorm2dLayer, Conv2dLayer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct FfcConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Fraction of input channels routed to the global branch, in [0,1].
    pub global_ratio_in: f64,
    pub global_ratio_out: f64,
    pub kernel_size: usize,
    /// When false the global->global path is a plain spatial conv instead of
    /// the spectral transform (the "regular" ablation).
    pub spectral_enabled: bool,
}

impl FfcConfig {
    pub fn new(in_channels: usize, out_channels: usize, global_ratio: f64) -> FfcConfig {
        FfcConfig {
            in_channels,
            out_channels,
            global_ratio_in: global_ratio,
            global_ratio_out: global_ratio,
            kernel_size: 3,
            spectral_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel_size == 0 {
            return Err(Error::BadConfig("ffc: zero channel or kernel count".into()));
        }
        for r in [self.global_ratio_in, self.global_ratio_out] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::BadConfig(format!("ffc: ratio {r} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn global_in(&self) -> usize {
        (self.global_ratio_in * self.in_channels as f64).round() as usize
    }

    pub fn local_in(&self) -> usize {
        self.in_channels - self.global_in()
    }

    pub fn global_out(&self) -> usize {
        (self.global_ratio_out * self.out_channels as f64).round() as usize
    }

    pub fn local_out(&self) -> usize {
        self.out_channels - self.global_out()
    }

    /// Closed-form trainable parameter tally for a layer built from this
    /// config; must match the constructed weights exactly.
    pub fn param_count(&self) -> usize {
        let k2 = self.kernel_size * self.kernel_size;
        let (li, gi, lo, go) = (
            self.local_in(),
            self.global_in(),
            self.local_out(),
            self.global_out(),
        );
        let conv = |ic: usize, oc: usize, k2: usize| {
            if ic > 0 && oc > 0 {
                oc * ic * k2 + oc
            } else {
                0
            }
        };
        let mut n = conv(li, lo, k2) + conv(li, go, k2) + conv(gi, lo, k2);
        if gi > 0 && go > 0 {
            if self.spectral_enabled {
                // 1x1 conv over 2C frequency channels + its BN
                n += conv(2 * gi, 2 * go, 1) + 2 * (2 * go);
            } else {
                n += conv(gi, go, k2);
            }
        }
        // per-destination-branch BN
        if lo > 0 {
            n += 2 * lo;
        }
        if go > 0 {
            n += 2 * go;
        }
        n
    }
}

/// The global-branch pipeline: rfft2d -> real/imag concat -> Conv1x1 -> BN ->
/// ReLU -> irfft2d. The frequency-domain conv is exactly pointwise over bins.
pub struct SpectralTransform {
    pub conv: Conv2dLayer,
    pub bn: BatchNorm2dLayer,
    /// Test configuration hooks: bypass BN / ReLU to make the transform an
    /// exact FFT round-trip when the 1x1 conv is the identity.
    pub use_bn: bool,
    pub use_relu: bool,
}

impl SpectralTransform {
    pub fn new(rng: &mut ChaCha8Rng, in_c: usize, out_c: usize) -> SpectralTransform {
        SpectralTransform {
            conv: Conv2dLayer::new(rng, 2 * in_c, 2 * out_c, 1, ConvSpec::same(1, PadMode::Zero)),
            bn: BatchNorm2dLayer::new(2 * out_c),
            use_bn: true,
            use_relu: true,
        }
    }

    /// Identity configuration: 1x1 conv set to the channel identity, BN and
    /// ReLU bypassed. Requires in_c == out_c.
    pub fn identity(in_c: usize) -> SpectralTransform {
        let c2 = 2 * in_c;
        let mut w = vec![0.0; c2 * c2];
        for c in 0..c2 {
            w[c * c2 + c] = 1.0;
        }
        SpectralTransform {
            conv: Conv2dLayer {
                weight: Tensor::new(&[c2, c2, 1, 1], w, true).expect("identity weight"),
                bias: Tensor::new(&[c2], vec![0.0; c2], true).expect("zero bias"),
                spec: ConvSpec::same(1, PadMode::Zero),
            },
            bn: BatchNorm2dLayer::new(c2),
            use_bn: false,
            use_relu: false,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, detach_params: bool) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        // Raw DFT bins grow with the frame area, which would tie the conv/BN
        // statistics to the training resolution. Normalising by sqrt(H*W)
        // keeps the spectral features comparable across frame sizes; the
        // inverse scaling before the inverse FFT keeps the identity
        // configuration an exact round-trip.
        let s = 1.0 / ((h * w) as f64).sqrt();
        let freq = spectral_rfft2d(x)?.scale(s)?;
        let mut y = self.conv.forward(&freq, detach_params)?;
        if self.use_bn {
            y = self.bn.forward(&y, mode, detach_params)?;
        }
        if self.use_relu {
            y = y.relu()?;
        }
        spectral_irfft2d(&y.scale(1.0 / s)?, w)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv.visit_params(&format!("{prefix}.conv"), f);
        self.bn.visit_params(&format!("{prefix}.bn"), f);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        self.bn.visit_buffers(&format!("{prefix}.bn"), f);
    }
}

enum GlobalPath {
    Spectral(SpectralTransform),
    Conv(Conv2dLayer),
}

/// One FFC layer: four fusion paths (local->local, local->global,
/// global->local spatial convs; global->global spectral transform), pairwise
/// sums per destination branch, then BN+ReLU per branch and channel concat.
pub struct FfcLayer {
    pub cfg: FfcConfig,
    conv_ll: Option<Conv2dLayer>,
    conv_lg: Option<Conv2dLayer>,
    conv_gl: Option<Conv2dLayer>,
    global_path: Option<GlobalPath>,
    bn_local: Option<BatchNorm2dLayer>,
    bn_global: Option<BatchNorm2dLayer>,
}

impl FfcLayer {
    pub fn new(rng: &mut ChaCha8Rng, cfg: FfcConfig) -> Result<FfcLayer> {
        cfg.validate()?;
        let (li, gi, lo, go) = (cfg.local_in(), cfg.global_in(), cfg.local_out(), cfg.global_out());
        let k = cfg.kernel_size;
        let spec = ConvSpec::same(k, PadMode::Reflect);
        let mk = |rng: &mut ChaCha8Rng, ic: usize, oc: usize| {
            if ic > 0 && oc > 0 {
                Some(Conv2dLayer::new(rng, ic, oc, k, spec))
            } else {
                None
            }
        };
        let conv_ll = mk(rng, li, lo);
        let conv_lg = mk(rng, li, go);
        let conv_gl = mk(rng, gi, lo);
        let global_path = if gi > 0 && go > 0 {
            Some(if cfg.spectral_enabled {
                GlobalPath::Spectral(SpectralTransform::new(rng, gi, go))
            } else {
                GlobalPath::Conv(Conv2dLayer::new(rng, gi, go, k, spec))
            })
        } else {
            None
        };
        Ok(FfcLayer {
            cfg,
            conv_ll,
            conv_lg,
            conv_gl,
            global_path,
            bn_local: (lo > 0).then(|| BatchNorm2dLayer::new(lo)),
            bn_global: (go > 0).then(|| BatchNorm2dLayer::new(go)),
        })
    }

    /// Replace the spectral transform (for identity-configured tests).
    pub fn set_spectral(&mut self, st: SpectralTransform) {
        self.global_path = Some(GlobalPath::Spectral(st));
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, detach_params: bool) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "ffc_forward: input has {c} channels, config wants {}",
                self.cfg.in_channels
            )));
        }
        let (li, gi) = (self.cfg.local_in(), self.cfg.global_in());
        let x_local = (li > 0).then(|| x.narrow_channels(0, li)).transpose()?;
        let x_global = (gi > 0).then(|| x.narrow_channels(li, gi)).transpose()?;

        let mut local_dest: Option<Tensor> = None;
        let mut global_dest: Option<Tensor> = None;
        let fuse = |dest: &mut Option<Tensor>, t: Tensor| -> Result<()> {
            *dest = Some(match dest.take() {
                Some(acc) => acc.add(&t)?,
                None => t,
            });
            Ok(())
        };
        if let (Some(conv), Some(xl)) = (&self.conv_ll, &x_local) {
            fuse(&mut local_dest, conv.forward(xl, detach_params)?)?;
        }
        if let (Some(conv), Some(xg)) = (&self.conv_gl, &x_global) {
            fuse(&mut local_dest, conv.forward(xg, detach_params)?)?;
        }
        if let (Some(conv), Some(xl)) = (&self.conv_lg, &x_local) {
            fuse(&mut global_dest, conv.forward(xl, detach_params)?)?;
        }
        if let (Some(path), Some(xg)) = (&mut self.global_path, &x_global) {
            let t = match path {
                GlobalPath::Spectral(st) => st.forward(xg, mode, detach_params)?,
                GlobalPath::Conv(conv) => conv.forward(xg, detach_params)?,
            };
            fuse(&mut global_dest, t)?;
        }

        let mut branches = Vec::new();
        if let Some(t) = local_dest {
            let bn = self.bn_local.as_mut().expect("local BN exists when lo > 0");
            branches.push(bn.forward(&t, mode, detach_params)?.relu()?);
        }
        if let Some(t) = global_dest {
            let bn = self.bn_global.as_mut().expect("global BN exists when go > 0");
            branches.push(bn.forward(&t, mode, detach_params)?.relu()?);
        }
        Tensor::concat_channels(&branches)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(c) = &mut self.conv_ll {
            c.visit_params(&format!("{prefix}.conv_ll"), f);
        }
        if let Some(c) = &mut self.conv_lg {
            c.visit_params(&format!("{prefix}.conv_lg"), f);
        }
        if let Some(c) = &mut self.conv_gl {
            c.visit_params(&format!("{prefix}.conv_gl"), f);
        }
        match &mut self.global_path {
            Some(GlobalPath::Spectral(st)) => st.visit_params(&format!("{prefix}.spectral"), f),
            Some(GlobalPath::Conv(c)) => c.visit_params(&format!("{prefix}.conv_gg"), f),
            None => {}
        }
        if let Some(bn) = &mut self.bn_local {
            bn.visit_params(&format!("{prefix}.bn_local"), f);
        }
        if let Some(bn) = &mut self.bn_global {
            bn.visit_params(&format!("{prefix}.bn_global"), f);
        }
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        if let Some(GlobalPath::Spectral(st)) = &mut self.global_path {
            st.visit_buffers(&format!("{prefix}.spectral"), f);
        }
        if let Some(bn) = &mut self.bn_local {
            bn.visit_buffers(&format!("{prefix}.bn_local"), f);
        }
        if let Some(bn) = &mut self.bn_global {
            bn.visit_buffers(&format!("{prefix}.bn_global"), f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.len());
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::half_width;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, data, false).unwrap()
    }

    #[test]
    fn spectral_shape_contract() {
        // 1x4x8x8 -> frequency tensor 1x8x8x5 -> back to 1x4x8x8
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_input(&mut rng, &[1, 4, 8, 8]);
        let f = spectral_rfft2d(&x).unwrap();
        assert_eq!(f.shape(), &[1, 8, 8, half_width(8)]);
        let mut st = SpectralTransform::new(&mut rng, 4, 4);
        let y = st.forward(&x, Mode::Train, false).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn identity_spectral_transform_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_input(&mut rng, &[1, 3, 8, 7]);
        let mut st = SpectralTransform::identity(3);
        let y = st.forward(&x, Mode::Eval, false).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn single_pixel_perturbation_reaches_every_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = rand_input(&mut rng, &[1, 2, 8, 8]);
        let mut st = SpectralTransform::new(&mut rng, 2, 2);
        let y0 = st.forward(&base, Mode::Eval, false).unwrap();
        let mut bumped = base.data().to_vec();
        bumped[3 * 8 + 5] += 1e-3;
        let xb = Tensor::new(base.shape(), bumped, false).unwrap();
        let y1 = st.forward(&xb, Mode::Eval, false).unwrap();
        let nonzero = y0
            .data()
            .iter()
            .zip(y1.data())
            .filter(|(a, b)| (**a - **b).abs() > 1e-12)
            .count();
        assert_eq!(nonzero, y0.len(), "perturbation must touch every output pixel");
    }

    #[test]
    fn ratio_zero_equals_plain_conv_bn_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = FfcConfig::new(4, 4, 0.0);
        let mut layer = FfcLayer::new(&mut rng, cfg).unwrap();
        let x = rand_input(&mut rng, &[2, 4, 8, 8]);
        let y = layer.forward(&x, Mode::Eval, false).unwrap();
        // same weights, by hand
        let ll = layer.conv_ll.as_ref().unwrap();
        let manual = crate::conv::conv2d(&x, &ll.weight, Some(&ll.bias), ll.spec).unwrap();
        let bn = layer.bn_local.as_mut().unwrap();
        let manual = bn.forward(&manual, Mode::Eval, false).unwrap().relu().unwrap();
        assert_eq!(y.data(), manual.data());
    }

    #[test]
    fn ratio_one_with_identity_spectral_is_bn_relu_of_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = FfcConfig::new(3, 3, 1.0);
        let mut layer = FfcLayer::new(&mut rng, cfg).unwrap();
        layer.set_spectral(SpectralTransform::identity(3));
        let x = rand_input(&mut rng, &[1, 3, 8, 8]);
        let y = layer.forward(&x, Mode::Eval, false).unwrap();
        let mut bn = BatchNorm2dLayer::new(3);
        let expect = bn.forward(&x, Mode::Eval, false).unwrap().relu().unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn param_count_matches_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for &(ic, oc, r, spectral) in &[
            (8usize, 8usize, 0.5f64, true),
            (8, 8, 0.5, false),
            (6, 10, 0.25, true),
            (4, 4, 0.0, true),
            (4, 4, 1.0, true),
        ] {
            let cfg = FfcConfig {
                in_channels: ic,
                out_channels: oc,
                global_ratio_in: r,
                global_ratio_out: r,
                kernel_size: 3,
                spectral_enabled: spectral,
            };
            let mut layer = FfcLayer::new(&mut rng, cfg).unwrap();
            assert_eq!(layer.param_count(), cfg.param_count(), "cfg {ic}/{oc}/{r}/{spectral}");
        }
    }

    #[test]
    fn fully_convolutional_across_resolutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = FfcConfig::new(4, 4, 0.5);
        let mut layer = FfcLayer::new(&mut rng, cfg).unwrap();
        for &s in &[8usize, 16] {
            let x = rand_input(&mut rng, &[1, 4, s, s]);
            let y = layer.forward(&x, Mode::Eval, false).unwrap();
            assert_eq!(y.shape(), &[1, 4, s, s]);
        }
    }

    #[test]
    fn deterministic_forward_with_fixed_seed() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut layer = FfcLayer::new(&mut rng, FfcConfig::new(4, 4, 0.5)).unwrap();
            let x = rand_input(&mut rng, &[1, 4, 8, 8]);
            layer.forward(&x, Mode::Train, false).unwrap().data().to_vec()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn channel_split_sums_to_total() {
        for ic in 1..12usize {
            for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let cfg = FfcConfig::new(ic, ic, r);
                assert_eq!(cfg.local_in() + cfg.global_in(), ic);
            }
        }
    }
}
