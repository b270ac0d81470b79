//! In-hole reconstruction metrics. Everything is computed over {m = 0}
//! pixels only; known pixels are the model's input and say nothing.

use crate::error::{Error, Result};
use crate::maskgen::Mask;
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean |x - xhat| over missing pixels, all channels.
    pub l1: f64,
    /// Mean squared error over missing pixels.
    pub l2: f64,
    /// 10 log10(1 / l2), capped at 99 dB.
    pub psnr: f64,
    pub missing_pixels: usize,
}

pub fn inpaint_metrics(x: &Tensor, xhat: &Tensor, mask: &Mask) -> Result<EvalReport> {
    let (b, c, h, w) = x.dims4()?;
    if x.shape() != xhat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "metrics: {:?} vs {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    if b != 1 || c != 3 || (mask.h, mask.w) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "metrics: image {:?} vs mask {}x{}",
            x.shape(),
            mask.h,
            mask.w
        )));
    }
    let missing: Vec<usize> = (0..h * w).filter(|&i| mask.data[i] == 0).collect();
    if missing.is_empty() {
        return Err(Error::Config("metrics: empty hole".into()));
    }
    let (xd, yd) = (x.data(), xhat.data());
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for ch in 0..3 {
        for &i in &missing {
            let d = xd[ch * h * w + i] - yd[ch * h * w + i];
            abs_sum += d.abs();
            sq_sum += d * d;
        }
    }
    let n = (3 * missing.len()) as f64;
    let l1 = abs_sum / n;
    let l2 = sq_sum / n;
    let psnr = if l2 == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / l2).log10()).min(PSNR_CAP)
    };
    Ok(EvalReport {
        l1,
        l2,
        psnr,
        missing_pixels: missing.len(),
    })
}
