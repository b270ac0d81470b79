//! The inpainting generator, the patch discriminator, and the frozen
//! high-receptive-field feature extractor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{ConvSpec, Mode, PadMode};
use crate::error::{Error, Result};
use crate::ffc::{FfcConfig, FfcLayer};
use crate::layers::{BatchNorm2dLayer, Conv2dLayer};
use crate::tensor::Tensor;

/// Stack the masked image with its mask: channels 0-2 are x*m (missing
/// pixels zeroed), channel 3 is the mask (m=1 known).
pub fn stack_input(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (mb, mc, mh, mw) = m.dims4()?;
    if c != 3 || mc != 1 || (b, h, w) != (mb, mh, mw) {
        return Err(Error::ShapeMismatch(format!(
            "stack_input: image {:?} vs mask {:?}",
            x.shape(),
            m.shape()
        )));
    }
    let m = m.detach();
    let m3 = Tensor::concat_channels(&[m.clone(), m.clone(), m.clone()])?;
    let masked = x.mul(&m3)?;
    Tensor::concat_channels(&[masked, m])
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorConfig {
    /// Channel count after the input projection.
    pub base_width: usize,
    pub n_down: usize,
    pub n_residual: usize,
    pub n_up: usize,
    /// FFC residual trunk when true, plain-conv residual blocks when false.
    pub ffc: bool,
    pub ffc_ratio: f64,
    /// Trunk channel count when it should differ from base_width << n_down
    /// (used to parameter-match architectures of different trunk cost).
    pub trunk_width_override: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_width: 64,
            n_down: 3,
            n_residual: 9,
            n_up: 3,
            ffc: true,
            ffc_ratio: 0.5,
            trunk_width_override: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_down != self.n_up {
            return Err(Error::BadConfig(format!(
                "generator: n_down {} != n_up {}",
                self.n_down, self.n_up
            )));
        }
        if self.base_width == 0 {
            return Err(Error::BadConfig("generator: zero base width".into()));
        }
        Ok(())
    }

    pub fn stride_product(&self) -> usize {
        1 << self.n_down
    }

    pub fn trunk_width(&self) -> usize {
        self.trunk_width_override
            .unwrap_or(self.base_width << self.n_down)
    }

    /// Output channels of down block i (the last one feeds the trunk).
    fn down_out(&self, i: usize) -> usize {
        if i + 1 == self.n_down {
            self.trunk_width()
        } else {
            self.base_width << (i + 1)
        }
    }

    /// Input channels of up block i (the first one drains the trunk).
    fn up_in(&self, i: usize) -> usize {
        if i == 0 {
            self.trunk_width()
        } else {
            self.base_width << (self.n_down - i)
        }
    }

    fn trunk_ffc_cfg(&self) -> FfcConfig {
        let w = self.trunk_width();
        let mut cfg = FfcConfig::new(w, w, self.ffc_ratio);
        cfg.spectral_enabled = self.ffc;
        cfg
    }

    /// Closed-form trainable parameter tally.
    pub fn param_count(&self) -> usize {
        let conv = |ic: usize, oc: usize, k: usize| oc * ic * k * k + oc;
        let bn = |c: usize| 2 * c;
        let bw = self.base_width;
        let mut n = conv(4, bw, 3) + bn(bw);
        for i in 0..self.n_down {
            let (ic, oc) = (bw << i, self.down_out(i));
            n += conv(ic, oc, 3) + bn(oc);
        }
        let wt = self.trunk_width();
        let block = if self.ffc {
            2 * self.trunk_ffc_cfg().param_count() + 2 * bn(wt)
        } else {
            2 * conv(wt, wt, 3) + 2 * bn(wt)
        };
        n += self.n_residual * block;
        for i in 0..self.n_up {
            let (ic, oc) = (self.up_in(i), bw << (self.n_down - i - 1));
            n += conv(ic, oc, 3) + bn(oc);
        }
        n + conv(bw, 3, 3)
    }
}

/// Parameter-match a plain-conv generator to a Fourier one by searching
/// trunk widths for the closest trainable-parameter count. (A regular
/// block costs more per channel than an FFC block, so the match lands on
/// a slightly narrower trunk.)
pub fn match_regular_to_fourier(ffc_cfg: &GeneratorConfig) -> GeneratorConfig {
    let target = ffc_cfg.param_count();
    let natural = ffc_cfg.base_width << ffc_cfg.n_down;
    let mut best = GeneratorConfig {
        ffc: false,
        ..*ffc_cfg
    };
    let mut best_diff = usize::MAX;
    for wt in (natural / 2).max(1)..=natural * 2 {
        let cand = GeneratorConfig {
            ffc: false,
            trunk_width_override: Some(wt),
            ..*ffc_cfg
        };
        let diff = cand.param_count().abs_diff(target);
        if diff < best_diff {
            best_diff = diff;
            best = cand;
        }
    }
    best
}

enum ResidualBlock {
    Ffc {
        a: FfcLayer,
        b: FfcLayer,
        bn1: BatchNorm2dLayer,
        bn2: BatchNorm2dLayer,
    },
    Regular {
        a: Conv2dLayer,
        b: Conv2dLayer,
        bn1: BatchNorm2dLayer,
        bn2: BatchNorm2dLayer,
    },
}

impl ResidualBlock {
    /// (FFC -> BN -> ReLU -> FFC -> BN) + identity skip.
    fn forward(&mut self, x: &Tensor, mode: Mode, detach: bool) -> Result<Tensor> {
        let y = match self {
            ResidualBlock::Ffc { a, b, bn1, bn2 } => {
                let y = a.forward(x, mode, detach)?;
                let y = bn1.forward(&y, mode, detach)?.relu()?;
                let y = b.forward(&y, mode, detach)?;
                bn2.forward(&y, mode, detach)?
            }
            ResidualBlock::Regular { a, b, bn1, bn2 } => {
                let y = a.forward(x, detach)?;
                let y = bn1.forward(&y, mode, detach)?.relu()?;
                let y = b.forward(&y, detach)?;
                bn2.forward(&y, mode, detach)?
            }
        };
        x.add(&y)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            ResidualBlock::Ffc { a, b, bn1, bn2 } => {
                a.visit_params(&format!("{prefix}.a"), f);
                bn1.visit_params(&format!("{prefix}.bn1"), f);
                b.visit_params(&format!("{prefix}.b"), f);
                bn2.visit_params(&format!("{prefix}.bn2"), f);
            }
            ResidualBlock::Regular { a, b, bn1, bn2 } => {
                a.visit_params(&format!("{prefix}.a"), f);
                bn1.visit_params(&format!("{prefix}.bn1"), f);
                b.visit_params(&format!("{prefix}.b"), f);
                bn2.visit_params(&format!("{prefix}.bn2"), f);
            }
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        match self {
            ResidualBlock::Ffc { a, b, bn1, bn2 } => {
                a.visit_buffers(&format!("{prefix}.a"), f);
                bn1.visit_buffers(&format!("{prefix}.bn1"), f);
                b.visit_buffers(&format!("{prefix}.b"), f);
                bn2.visit_buffers(&format!("{prefix}.bn2"), f);
            }
            ResidualBlock::Regular { bn1, bn2, .. } => {
                bn1.visit_buffers(&format!("{prefix}.bn1"), f);
                bn2.visit_buffers(&format!("{prefix}.bn2"), f);
            }
        }
    }
}

struct ConvBnRelu {
    conv: Conv2dLayer,
    bn: BatchNorm2dLayer,
}

impl ConvBnRelu {
    fn new(rng: &mut ChaCha8Rng, ic: usize, oc: usize, stride: usize) -> ConvBnRelu {
        let spec = ConvSpec {
            stride,
            pad: 1,
            dilation: 1,
            pad_mode: PadMode::Reflect,
        };
        ConvBnRelu {
            conv: Conv2dLayer::new(rng, ic, oc, 3, spec),
            bn: BatchNorm2dLayer::new(oc),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode, detach: bool) -> Result<Tensor> {
        let y = self.conv.forward(x, detach)?;
        self.bn.forward(&y, mode, detach)?.relu()
    }
}

/// The inpainting generator: strided-conv downsampling, an FFC (or plain
/// conv) residual trunk, nearest-neighbor upsampling, and a sigmoid head.
/// Fully convolutional: the same weights evaluate at any spatial size
/// divisible by the stride product.
pub struct Generator {
    pub cfg: GeneratorConfig,
    stem: ConvBnRelu,
    down: Vec<ConvBnRelu>,
    trunk: Vec<ResidualBlock>,
    up: Vec<ConvBnRelu>,
    head: Conv2dLayer,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Generator> {
        cfg.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let bw = cfg.base_width;
        let stem = ConvBnRelu::new(rng, 4, bw, 1);
        let down = (0..cfg.n_down)
            .map(|i| ConvBnRelu::new(rng, bw << i, cfg.down_out(i), 2))
            .collect();
        let wt = cfg.trunk_width();
        let trunk = (0..cfg.n_residual)
            .map(|_| -> Result<ResidualBlock> {
                Ok(if cfg.ffc {
                    ResidualBlock::Ffc {
                        a: FfcLayer::new(rng, cfg.trunk_ffc_cfg())?,
                        b: FfcLayer::new(rng, cfg.trunk_ffc_cfg())?,
                        bn1: BatchNorm2dLayer::new(wt),
                        bn2: BatchNorm2dLayer::new(wt),
                    }
                } else {
                    let spec = ConvSpec::same(3, PadMode::Reflect);
                    ResidualBlock::Regular {
                        a: Conv2dLayer::new(rng, wt, wt, 3, spec),
                        b: Conv2dLayer::new(rng, wt, wt, 3, spec),
                        bn1: BatchNorm2dLayer::new(wt),
                        bn2: BatchNorm2dLayer::new(wt),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let up = (0..cfg.n_up)
            .map(|i| ConvBnRelu::new(rng, cfg.up_in(i), bw << (cfg.n_down - i - 1), 1))
            .collect();
        let head = Conv2dLayer::new(rng, bw, 3, 3, ConvSpec::same(3, PadMode::Reflect));
        Ok(Generator {
            cfg,
            stem,
            down,
            trunk,
            up,
            head,
        })
    }

    pub fn forward(&mut self, x4: &Tensor, mode: Mode, detach: bool) -> Result<Tensor> {
        let (_, c, h, w) = x4.dims4()?;
        if c != 4 {
            return Err(Error::ShapeMismatch(format!(
                "generator wants a 4-channel input, got {c}"
            )));
        }
        let sp = self.cfg.stride_product();
        if h % sp != 0 || w % sp != 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial size {h}x{w} not divisible by stride product {sp}"
            )));
        }
        let mut y = self.stem.forward(x4, mode, detach)?;
        for blk in &mut self.down {
            y = blk.forward(&y, mode, detach)?;
        }
        for blk in &mut self.trunk {
            y = blk.forward(&y, mode, detach)?;
        }
        for blk in &mut self.up {
            y = y.upsample_nearest_2x()?;
            y = blk.forward(&y, mode, detach)?;
        }
        self.head.forward(&y, detach)?.sigmoid()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.stem.conv.visit_params("stem.conv", f);
        self.stem.bn.visit_params("stem.bn", f);
        for (i, blk) in self.down.iter_mut().enumerate() {
            blk.conv.visit_params(&format!("down{i}.conv"), f);
            blk.bn.visit_params(&format!("down{i}.bn"), f);
        }
        for (i, blk) in self.trunk.iter_mut().enumerate() {
            blk.visit_params(&format!("res{i}"), f);
        }
        for (i, blk) in self.up.iter_mut().enumerate() {
            blk.conv.visit_params(&format!("up{i}.conv"), f);
            blk.bn.visit_params(&format!("up{i}.bn"), f);
        }
        self.head.visit_params("head", f);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        self.stem.bn.visit_buffers("stem.bn", f);
        for (i, blk) in self.down.iter_mut().enumerate() {
            blk.bn.visit_buffers(&format!("down{i}.bn"), f);
        }
        for (i, blk) in self.trunk.iter_mut().enumerate() {
            blk.visit_buffers(&format!("res{i}"), f);
        }
        for (i, blk) in self.up.iter_mut().enumerate() {
            blk.bn.visit_buffers(&format!("up{i}.bn"), f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorConfig {
    /// Number of stride-2 conv layers before the 1-channel logit conv.
    pub n_layers: usize,
    pub base_width: usize,
    pub kernel_size: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            n_layers: 4,
            base_width: 64,
            kernel_size: 4,
        }
    }
}

struct DiscLayer {
    conv: Conv2dLayer,
    // None on the final logit conv
    leaky_slope: Option<f64>,
}

/// Patch discriminator: stride-2 convs with width doubling and leaky-ReLU
/// 0.2, closed by a 1-channel 3x3 conv. Output is a spatial logit map, one
/// logit per overlapping patch.
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    layers: Vec<DiscLayer>,
}

fn halving_pad(k: usize) -> usize {
    if k % 2 == 0 {
        (k - 2) / 2
    } else {
        (k - 1) / 2
    }
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Discriminator> {
        if cfg.n_layers == 0 || cfg.base_width == 0 || cfg.kernel_size < 2 {
            return Err(Error::BadConfig("discriminator: degenerate config".into()));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.kernel_size;
        let spec = ConvSpec {
            stride: 2,
            pad: halving_pad(k),
            dilation: 1,
            pad_mode: PadMode::Reflect,
        };
        let mut layers = Vec::new();
        let mut ic = 3;
        for i in 0..cfg.n_layers {
            let oc = cfg.base_width << i;
            layers.push(DiscLayer {
                conv: Conv2dLayer::new(rng, ic, oc, k, spec),
                leaky_slope: Some(0.2),
            });
            ic = oc;
        }
        layers.push(DiscLayer {
            conv: Conv2dLayer::new(rng, ic, 1, 3, ConvSpec::same(3, PadMode::Reflect)),
            leaky_slope: None,
        });
        Ok(Discriminator { cfg, layers })
    }

    /// Degenerate single-logit linear discriminator: one global conv with
    /// no padding and no nonlinearity, logit = <w, x> + b. The input
    /// gradient of the logit is the kernel itself, so the R1 penalty has
    /// the closed form ||w||^2.
    pub fn linear_probe(rng: &mut ChaCha8Rng, size: usize) -> Discriminator {
        let spec = ConvSpec {
            stride: 1,
            pad: 0,
            dilation: 1,
            pad_mode: PadMode::Zero,
        };
        Discriminator {
            cfg: DiscriminatorConfig {
                n_layers: 0,
                base_width: 1,
                kernel_size: size,
            },
            layers: vec![DiscLayer {
                conv: Conv2dLayer::new(rng, 3, 1, size, spec),
                leaky_slope: None,
            }],
        }
    }

    /// Kernel of the first conv layer (the whole map, for the linear probe).
    pub fn first_weight(&self) -> &Tensor {
        &self.layers[0].conv.weight
    }

    pub fn stride_product(&self) -> usize {
        1 << self.cfg.n_layers
    }

    pub fn forward(&self, img: &Tensor, detach: bool) -> Result<Tensor> {
        Ok(self.forward_with_features(img, detach)?.0)
    }

    /// Returns the logit map and the activations after each nonlinearity
    /// (the feature-matching taps).
    pub fn forward_with_features(&self, img: &Tensor, detach: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let (_, c, h, w) = img.dims4()?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "discriminator wants a 3-channel image, got {c}"
            )));
        }
        let sp = self.stride_product();
        if h < sp || w < sp {
            return Err(Error::ShapeMismatch(format!(
                "image {h}x{w} smaller than one patch cell ({sp})"
            )));
        }
        let mut y = img.clone();
        let mut feats = Vec::new();
        for layer in &self.layers {
            y = layer.conv.forward(&y, detach)?;
            if let Some(slope) = layer.leaky_slope {
                y = y.leaky_relu(slope)?;
                feats.push(y.clone());
            }
        }
        Ok((y, feats))
    }

    /// Patch extent (receptive field side) of one output logit, computed
    /// from the layer hyperparameters.
    pub fn patch_extent(&self) -> usize {
        let mut r = 1usize;
        for layer in self.layers.iter().rev() {
            let k = layer.conv.spec.effective_kernel(layer.conv.weight.shape()[2]);
            let s = layer.conv.spec.stride;
            r = s * r + (k - s);
        }
        r
    }

    /// Input-pixel footprint (inclusive row/col ranges, clipped) of logit
    /// cell (i, j) for an HxW input.
    pub fn patch_rect(&self, i: usize, j: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let (mut r0, mut r1) = (i as isize, i as isize);
        let (mut c0, mut c1) = (j as isize, j as isize);
        for layer in self.layers.iter().rev() {
            let k = layer.conv.spec.effective_kernel(layer.conv.weight.shape()[2]) as isize;
            let s = layer.conv.spec.stride as isize;
            let p = layer.conv.spec.pad as isize;
            r0 = r0 * s - p;
            r1 = r1 * s - p + k - 1;
            c0 = c0 * s - p;
            c1 = c1 * s - p + k - 1;
        }
        (
            r0.clamp(0, h as isize - 1) as usize,
            r1.clamp(0, h as isize - 1) as usize,
            c0.clamp(0, w as isize - 1) as usize,
            c1.clamp(0, w as isize - 1) as usize,
        )
    }

    /// Gradient of the summed logits w.r.t. the input image, built as a
    /// graph over the discriminator weights so that the R1 penalty can be
    /// optimized by ordinary backprop. Leaky-ReLU gating masks are taken as
    /// constants (exact almost everywhere).
    pub fn input_gradient_graph(&self, img: &Tensor) -> Result<Tensor> {
        let mut shapes = Vec::new();
        let mut masks: Vec<Option<Tensor>> = Vec::new();
        let mut y = img.detach();
        for layer in &self.layers {
            shapes.push(y.shape().to_vec());
            y = layer.conv.forward(&y, false)?;
            match layer.leaky_slope {
                Some(slope) => {
                    let mask: Vec<f64> = y
                        .data()
                        .iter()
                        .map(|&v| if v > 0.0 { 1.0 } else { slope })
                        .collect();
                    masks.push(Some(Tensor::constant(y.shape(), mask)?));
                    y = y.leaky_relu(slope)?;
                }
                None => masks.push(None),
            }
        }
        let mut g = Tensor::full(y.shape(), 1.0)?;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &masks[li] {
                g = g.mul(mask)?;
            }
            g = crate::conv::conv2d_input_adjoint(&g, &layer.conv.weight, &shapes[li], layer.conv.spec)?;
        }
        Ok(g)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.conv.visit_params(&format!("disc{i}"), f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }
}

#[derive(Debug, Clone)]
pub struct HrfExtractorConfig {
    pub widths: Vec<usize>,
    pub dilations: Vec<usize>,
    pub seed: u64,
}

impl Default for HrfExtractorConfig {
    fn default() -> Self {
        HrfExtractorConfig {
            widths: vec![16, 24, 32, 32],
            dilations: vec![1, 2, 4, 8],
            seed: 0x4852_4650, // arbitrary fixed default
        }
    }
}

/// Frozen randomly-initialized dilated-conv stack standing in for a
/// pretrained segmentation backbone. Gradients flow into the probed image
/// but never into the extractor weights.
pub struct HrfExtractor {
    pub cfg: HrfExtractorConfig,
    layers: Vec<Conv2dLayer>,
}

impl HrfExtractor {
    pub fn new(cfg: HrfExtractorConfig) -> Result<HrfExtractor> {
        if cfg.widths.len() != cfg.dilations.len() || cfg.widths.is_empty() {
            return Err(Error::BadConfig(
                "hrf extractor: widths and dilations must align and be nonempty".into(),
            ));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::new();
        let mut ic = 3;
        for (&oc, &d) in cfg.widths.iter().zip(&cfg.dilations) {
            let spec = ConvSpec {
                stride: 1,
                pad: d,
                dilation: d,
                pad_mode: PadMode::Zero,
            };
            layers.push(Conv2dLayer::new_frozen(rng, ic, oc, 3, spec));
            ic = oc;
        }
        Ok(HrfExtractor { cfg, layers })
    }

    /// Feature tensors, one per tap layer (after each ReLU).
    pub fn features(&self, img: &Tensor) -> Result<Vec<Tensor>> {
        let mut y = img.clone();
        let mut taps = Vec::new();
        for layer in &self.layers {
            y = layer.conv2d_frozen(&y)?.relu()?;
            taps.push(y.clone());
        }
        Ok(taps)
    }

    /// Theoretical receptive field after the last layer (3x3 kernels).
    pub fn theoretical_receptive_field(&self) -> usize {
        1 + 2 * self.cfg.dilations.iter().sum::<usize>()
    }

    /// Flat copy of all weights, for frozenness checks.
    pub fn weight_snapshot(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }
}

impl Conv2dLayer {
    fn conv2d_frozen(&self, x: &Tensor) -> Result<Tensor> {
        // weights are already detached leaves; forward normally
        self.forward(x, false)
    }
}
