//! Training objectives: high-receptive-field perceptual loss, mask-aware
//! non-saturating adversarial losses, R1 gradient penalty, and the
//! discriminator feature-matching loss.
//!
//! Stop-gradient convention: the discriminator loss sees a detached
//! composite (generator out of the graph); the generator-side losses run
//! the discriminator with its parameters detached.

use crate::error::{Error, Result};
use crate::nets::{Discriminator, HrfExtractor};
use crate::tensor::Tensor;

const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Generator adversarial weight.
    pub kappa: f64,
    /// Perceptual-loss weight.
    pub alpha: f64,
    /// Feature-matching weight.
    pub beta: f64,
    /// R1 penalty weight.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            kappa: 10.0,
            alpha: 30.0,
            beta: 100.0,
            gamma: 0.001,
        }
    }
}

/// Two-stage mean: per tap layer, the mean squared feature difference;
/// then the mean over tap layers. Target features carry no gradient.
pub fn hrf_perceptual_loss(ext: &HrfExtractor, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "hrfpl: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let fp = ext.features(pred)?;
    let ft = ext.features(&target.detach())?;
    let mut acc: Option<Tensor> = None;
    let n = fp.len();
    for (a, b) in fp.iter().zip(&ft) {
        let term = a.sub(&b.detach())?.square()?.mean()?;
        acc = Some(match acc {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    acc.unwrap().scale(1.0 / n as f64)
}

/// Per-cell fake labels for one mask plane: a logit cell is fake iff its
/// patch footprint contains at least one missing pixel (m = 0).
pub fn fake_cell_labels(
    disc: &Discriminator,
    mask: &Tensor,
    oh: usize,
    ow: usize,
) -> Result<Vec<bool>> {
    let (b, c, h, w) = mask.dims4()?;
    if c != 1 {
        return Err(Error::ShapeMismatch(format!("mask must be 1-channel, got {c}")));
    }
    let md = mask.data();
    let mut labels = vec![false; b * oh * ow];
    for bi in 0..b {
        let plane = &md[bi * h * w..(bi + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (r0, r1, c0, c1) = disc.patch_rect(i, j, h, w);
                let mut fake = false;
                'scan: for r in r0..=r1 {
                    for cc in c0..=c1 {
                        if plane[r * w + cc] == 0.0 {
                            fake = true;
                            break 'scan;
                        }
                    }
                }
                labels[(bi * oh + i) * ow + j] = fake;
            }
        }
    }
    Ok(labels)
}

pub struct AdversarialLosses {
    /// Non-saturating generator loss over fake-labeled cells.
    pub loss_g: Tensor,
    /// Discriminator loss: real image all-real; composite labeled per cell.
    pub loss_d: Tensor,
    pub n_fake_cells: usize,
    pub n_cells: usize,
    /// True when no cell is labeled fake (mask empty at this scale); the
    /// generator loss is then a constant zero.
    pub degenerate: bool,
}

fn mean_neg_log(p: &Tensor, weights: Option<&Tensor>, count: usize) -> Result<Tensor> {
    let logp = p.clamp(P_CLAMP, 1.0 - P_CLAMP)?.ln()?;
    let s = match weights {
        Some(wt) => logp.masked_sum(wt)?,
        None => logp.sum()?,
    };
    s.scale(-1.0 / count as f64)
}

/// Eq-style hinge-free BCE adversarial pair. `composite` is the
/// mask-composited generator output m*x + (1-m)*x_hat; it stays in the
/// graph for the generator loss and is detached for the discriminator
/// loss.
pub fn adversarial_losses(
    disc: &Discriminator,
    real: &Tensor,
    composite: &Tensor,
    mask: &Tensor,
) -> Result<AdversarialLosses> {
    let logits_real = disc.forward(&real.detach(), false)?;
    let logits_fake_d = disc.forward(&composite.detach(), false)?;
    let logits_fake_g = disc.forward(composite, true)?;
    let (b, _, oh, ow) = logits_real.dims4()?;
    let labels = fake_cell_labels(disc, mask, oh, ow)?;
    let n_cells = b * oh * ow;
    let n_fake: usize = labels.iter().filter(|&&f| f).count();
    let n_known = n_cells - n_fake;

    let fake_w: Vec<f64> = labels.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let known_w: Vec<f64> = labels.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect();
    let fake_w = Tensor::constant(logits_real.shape(), fake_w)?;
    let known_w = Tensor::constant(logits_real.shape(), known_w)?;

    // real image: every cell real
    let mut loss_d = mean_neg_log(&logits_real.sigmoid()?, None, n_cells)?;
    let p_fake_d = logits_fake_d.sigmoid()?;
    if n_fake > 0 {
        // fake cells: -log(1 - D)
        let one_minus = p_fake_d.scale(-1.0)?.add_scalar(1.0)?;
        loss_d = loss_d.add(&mean_neg_log(&one_minus, Some(&fake_w), n_fake)?)?;
    }
    if n_known > 0 {
        // cells whose patch is entirely known content are real even in the
        // composite image
        loss_d = loss_d.add(&mean_neg_log(&p_fake_d, Some(&known_w), n_known)?)?;
    }

    let (loss_g, degenerate) = if n_fake > 0 {
        (
            mean_neg_log(&logits_fake_g.sigmoid()?, Some(&fake_w), n_fake)?,
            false,
        )
    } else {
        (Tensor::scalar(0.0), true)
    };

    Ok(AdversarialLosses {
        loss_g,
        loss_d,
        n_fake_cells: n_fake,
        n_cells,
        degenerate,
    })
}

/// R1 penalty on real data: squared norm of the input gradient of the
/// summed logits, averaged over the batch.
pub fn r1_penalty(disc: &Discriminator, real: &Tensor) -> Result<Tensor> {
    let (b, _, _, _) = real.dims4()?;
    let g = disc.input_gradient_graph(real)?;
    g.square()?.sum()?.scale(1.0 / b as f64)
}

/// Discriminator feature matching (perceptual loss on discriminator taps):
/// two-stage mean of squared differences, real features fully detached,
/// discriminator parameters detached so only the generator trains.
pub fn feature_matching_loss(
    disc: &Discriminator,
    real: &Tensor,
    composite: &Tensor,
) -> Result<Tensor> {
    let (_, ff) = disc.forward_with_features(composite, true)?;
    let (_, fr) = disc.forward_with_features(&real.detach(), true)?;
    let mut acc: Option<Tensor> = None;
    let n = ff.len();
    for (a, b) in ff.iter().zip(&fr) {
        let term = a.sub(&b.detach())?.square()?.mean()?;
        acc = Some(match acc {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    acc.unwrap().scale(1.0 / n as f64)
}

/// Weighted objectives. The generator total carries kappa, alpha, beta;
/// the discriminator total is the unweighted adversarial loss plus the
/// gamma-weighted R1 term.
pub struct LossBundle {
    pub total_g: Tensor,
    pub total_d: Tensor,
}

impl LossBundle {
    pub fn combine(
        w: &LossWeights,
        adv_g: &Tensor,
        adv_d: &Tensor,
        hrfpl: &Tensor,
        discpl: &Tensor,
        r1: &Tensor,
    ) -> Result<LossBundle> {
        let total_g = adv_g
            .scale(w.kappa)?
            .add(&hrfpl.scale(w.alpha)?)?
            .add(&discpl.scale(w.beta)?)?;
        let total_d = adv_d.add(&r1.scale(w.gamma)?)?;
        Ok(LossBundle { total_g, total_d })
    }
}

/// One training-log row. `total_g`/`total_d` are the two optimized
/// objectives; their sum is the full Eq.-5-style scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub hrfpl: f64,
    pub discpl: f64,
    pub r1: f64,
    pub total_g: f64,
    pub total_d: f64,
}

pub const LOG_HEADER: &str = "step,adv_g,adv_d,hrfpl,discpl,r1,total_g,total_d";

impl LossReport {
    pub fn csv_line(&self) -> String {
        // shortest-roundtrip float formatting keeps logs bit-identical
        // across runs without fixing a digit count
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.adv_g, self.adv_d, self.hrfpl, self.discpl, self.r1, self.total_g, self.total_d
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.adv_g, self.adv_d, self.hrfpl, self.discpl, self.r1, self.total_g, self.total_d,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}
