//! 2-D real-to-complex FFT and its inverse.
//!
//! Conventions: unnormalized forward, 1/(H*W) on the inverse. The forward
//! transform stores floor(W/2)+1 complex bins per row (the half spectrum of a
//! real signal). The inverse reconstructs
//!
//!   x[h,w] = (1/HW) * Re( sum_{u, v < Wf} a_v * F[u,v] * e^{+2*pi*i(uh/H + vw/W)} )
//!
//! with a_v = 1 for the DC column and the Nyquist column (even W) and 2
//! otherwise, which exactly inverts `rfft2d` and stays linear in the stored
//! bins for arbitrary (not Hermitian-consistent) input.
//!
//! Two surfaces: plain transforms over [`ComplexTensor`] for spectral math
//! and oracles, and graph ops ([`spectral_rfft2d`], [`spectral_irfft2d`])
//! that carry real/imaginary parts as 2C real channels for autodiff.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar complex tensor; real and imaginary parts share one shape.
#[derive(Debug, Clone)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<ComplexTensor> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::EmptyShape(shape));
        }
        if re.len() != n || im.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "complex tensor shape {:?} wants {} elements, got re={} im={}",
                shape,
                n,
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexTensor { shape, re, im })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }
}

pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Unnormalized 2-D complex FFT of one HxW plane; sign -1 is the forward
/// transform, +1 the unnormalized inverse.
fn fft2_plane(buf: &mut [Complex<f64>], h: usize, w: usize, sign: i32) {
    let mut planner = FftPlanner::new();
    let fft_w = if sign < 0 {
        planner.plan_fft_forward(w)
    } else {
        planner.plan_fft_inverse(w)
    };
    let fft_h = if sign < 0 {
        planner.plan_fft_forward(h)
    } else {
        planner.plan_fft_inverse(h)
    };
    for row in buf.chunks_mut(w) {
        fft_w.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        fft_h.process(&mut col);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
}

/// Real FFT2d over the last two axes of a BxCxHxW tensor, per channel.
/// Bin (u,v) equals sum_{h,w} t[h,w] * exp(-2*pi*i*(uh/H + vw/W)).
pub fn rfft2d(t: &Tensor) -> Result<ComplexTensor> {
    let (b, c, h, w) = t.dims4()?;
    let wf = half_width(w);
    let mut re = vec![0.0; b * c * h * wf];
    let mut im = vec![0.0; b * c * h * wf];
    let mut buf = vec![Complex::new(0.0, 0.0); h * w];
    for bc in 0..b * c {
        let plane = &t.data()[bc * h * w..(bc + 1) * h * w];
        for (dst, &src) in buf.iter_mut().zip(plane) {
            *dst = Complex::new(src, 0.0);
        }
        fft2_plane(&mut buf, h, w, -1);
        for u in 0..h {
            for v in 0..wf {
                re[bc * h * wf + u * wf + v] = buf[u * w + v].re;
                im[bc * h * wf + u * wf + v] = buf[u * w + v].im;
            }
        }
    }
    ComplexTensor::new(vec![b, c, h, wf], re, im)
}

/// Inverse real FFT2d; `out_width` resolves the half-spectrum ambiguity.
pub fn irfft2d(f: &ComplexTensor, out_width: usize) -> Result<Tensor> {
    let [b, c, h, wf] = *f.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "irfft2d expects 4-D half spectrum, got {:?}",
            f.shape()
        )));
    };
    if half_width(out_width) != wf {
        return Err(Error::BadOutWidth {
            out_width,
            half_width: wf,
        });
    }
    let w = out_width;
    let norm = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; b * c * h * w];
    let mut buf = vec![Complex::new(0.0, 0.0); h * w];
    for bc in 0..b * c {
        buf.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
        for u in 0..h {
            for v in 0..wf {
                let a = column_weight(v, w);
                let idx = bc * h * wf + u * wf + v;
                buf[u * w + v] = Complex::new(a * f.re[idx], a * f.im[idx]);
            }
        }
        fft2_plane(&mut buf, h, w, 1);
        for k in 0..h * w {
            out[bc * h * w + k] = buf[k].re * norm;
        }
    }
    Tensor::new(&[b, c, h, w], out, false)
}

/// Hermitian duplication weight for half-spectrum column v of full width w.
fn column_weight(v: usize, w: usize) -> f64 {
    if v == 0 || (w % 2 == 0 && v == w / 2) {
        1.0
    } else {
        2.0
    }
}

/// Graph op: real FFT2d with real/imaginary parts concatenated as channels,
/// BxCxHxW -> Bx2CxHxWf. Channels [0,C) are the real parts, [C,2C) imaginary.
pub fn spectral_rfft2d(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let f = rfft2d(x)?;
    let wf = half_width(w);
    let hwf = h * wf;
    let mut out = vec![0.0; b * 2 * c * hwf];
    for bi in 0..b {
        for ci in 0..c {
            let src = (bi * c + ci) * hwf;
            let dre = (bi * 2 * c + ci) * hwf;
            let dim = (bi * 2 * c + c + ci) * hwf;
            out[dre..dre + hwf].copy_from_slice(&f.re()[src..src + hwf]);
            out[dim..dim + hwf].copy_from_slice(&f.im()[src..src + hwf]);
        }
    }
    Tensor::from_op(
        "spectral_rfft2d",
        vec![b, 2 * c, h, wf],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            // dL/dx = Re( unnormalized inverse FFT of the zero-padded
            // half-spectrum gradient ), the adjoint of the forward map.
            let mut gx = vec![0.0; b * c * h * w];
            let mut buf = vec![Complex::new(0.0, 0.0); h * w];
            for bi in 0..b {
                for ci in 0..c {
                    buf.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
                    let gre = (bi * 2 * c + ci) * hwf;
                    let gim = (bi * 2 * c + c + ci) * hwf;
                    for u in 0..h {
                        for v in 0..wf {
                            buf[u * w + v] =
                                Complex::new(g[gre + u * wf + v], g[gim + u * wf + v]);
                        }
                    }
                    fft2_plane(&mut buf, h, w, 1);
                    let dst = (bi * c + ci) * h * w;
                    for k in 0..h * w {
                        gx[dst + k] = buf[k].re;
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Graph op: inverse of [`spectral_rfft2d`], Bx2CxHxWf -> BxCxHxW.
pub fn spectral_irfft2d(f: &Tensor, out_width: usize) -> Result<Tensor> {
    let (b, c2, h, wf) = f.dims4()?;
    if c2 % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "spectral_irfft2d wants 2C channels, got {c2}"
        )));
    }
    if half_width(out_width) != wf {
        return Err(Error::BadOutWidth {
            out_width,
            half_width: wf,
        });
    }
    let c = c2 / 2;
    let w = out_width;
    let hwf = h * wf;
    let norm = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; b * c * h * w];
    let mut buf = vec![Complex::new(0.0, 0.0); h * w];
    for bi in 0..b {
        for ci in 0..c {
            buf.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
            let sre = (bi * c2 + ci) * hwf;
            let sim = (bi * c2 + c + ci) * hwf;
            for u in 0..h {
                for v in 0..wf {
                    let a = column_weight(v, w);
                    buf[u * w + v] = Complex::new(
                        a * f.data()[sre + u * wf + v],
                        a * f.data()[sim + u * wf + v],
                    );
                }
            }
            fft2_plane(&mut buf, h, w, 1);
            let dst = (bi * c + ci) * h * w;
            for k in 0..h * w {
                out[dst + k] = buf[k].re * norm;
            }
        }
    }
    Tensor::from_op(
        "spectral_irfft2d",
        vec![b, c, h, w],
        out,
        vec![f.clone()],
        Box::new(move |g| {
            // adjoint: forward DFT of the output gradient, scaled by the
            // column weight and the 1/(HW) normalization.
            let mut gf = vec![0.0; b * c2 * hwf];
            let mut buf = vec![Complex::new(0.0, 0.0); h * w];
            for bi in 0..b {
                for ci in 0..c {
                    let src = (bi * c + ci) * h * w;
                    for k in 0..h * w {
                        buf[k] = Complex::new(g[src + k], 0.0);
                    }
                    fft2_plane(&mut buf, h, w, -1);
                    let dre = (bi * c2 + ci) * hwf;
                    let dim = (bi * c2 + c + ci) * hwf;
                    for u in 0..h {
                        for v in 0..wf {
                            let a = column_weight(v, w) * norm;
                            gf[dre + u * wf + v] = a * buf[u * w + v].re;
                            gf[dim + u * wf + v] = a * buf[u * w + v].im;
                        }
                    }
                }
            }
            vec![Some(gf)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive O(N^4) direct DFT oracle over one plane.
    pub fn naive_dft2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let wf = half_width(w);
        let mut re = vec![0.0; h * wf];
        let mut im = vec![0.0; h * wf];
        for u in 0..h {
            for v in 0..wf {
                let (mut sr, mut si) = (0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (u as f64 * i as f64 / h as f64 + v as f64 * j as f64 / w as f64);
                        sr += plane[i * w + j] * ang.cos();
                        si += plane[i * w + j] * ang.sin();
                    }
                }
                re[u * wf + v] = sr;
                im[u * wf + v] = si;
            }
        }
        (re, im)
    }

    fn rand_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        let data: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(&[1, 1, h, w], data, false).unwrap()
    }

    #[test]
    fn constant_image_has_only_dc() {
        let c = 0.75;
        let t = Tensor::full(&[1, 1, 4, 4], c).unwrap();
        let f = rfft2d(&t).unwrap();
        assert!((f.re()[0] - 16.0 * c).abs() < 1e-12);
        for k in 1..f.re().len() {
            assert!(f.re()[k].abs() < 1e-10 && f.im()[k].abs() < 1e-10);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut data = vec![0.0; 16];
        data[0] = 1.0;
        let t = Tensor::new(&[1, 1, 4, 4], data, false).unwrap();
        let f = rfft2d(&t).unwrap();
        for k in 0..f.re().len() {
            assert!((f.re()[k] - 1.0).abs() < 1e-12 && f.im()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = rand_plane(&mut rng, 8, 8);
        let f = rfft2d(&t).unwrap();
        let (ore, oim) = naive_dft2(t.data(), 8, 8);
        let scale = ore.iter().map(|v| v.abs()).fold(1.0_f64, f64::max);
        for k in 0..ore.len() {
            assert!((f.re()[k] - ore[k]).abs() / scale < 1e-10);
            assert!((f.im()[k] - oim[k]).abs() / scale < 1e-10);
        }
    }

    #[test]
    fn roundtrip_even_and_odd_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(h, w) in &[(8usize, 8usize), (8, 7), (5, 6), (3, 3), (1, 4)] {
            let t = rand_plane(&mut rng, h, w);
            let back = irfft2d(&rfft2d(&t).unwrap(), w).unwrap();
            for (a, b) in t.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-10, "h={h} w={w}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn inconsistent_out_width_rejected() {
        let t = Tensor::full(&[1, 1, 4, 4], 1.0).unwrap();
        let f = rfft2d(&t).unwrap();
        assert!(irfft2d(&f, 9).is_err());
    }

    #[test]
    fn parseval_from_half_spectrum() {
        // reconstruct full-spectrum energy from half spectrum, compare with
        // the spatial-domain energy (Parseval with the 1/HW convention)
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(h, w) in &[(6usize, 6usize), (5, 7)] {
            let t = rand_plane(&mut rng, h, w);
            let f = rfft2d(&t).unwrap();
            let wf = half_width(w);
            let mut spec_energy = 0.0;
            for u in 0..h {
                for v in 0..wf {
                    let p = f.re()[u * wf + v].powi(2) + f.im()[u * wf + v].powi(2);
                    spec_energy += column_weight(v, w) * p;
                }
            }
            let spatial: f64 = t.data().iter().map(|v| v * v).sum();
            assert!(
                (spatial - spec_energy / (h * w) as f64).abs() < 1e-8,
                "h={h} w={w}"
            );
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_plane(&mut rng, 6, 5);
        let y = rand_plane(&mut rng, 6, 5);
        let (a, b) = (1.7, -0.3);
        let combo = Tensor::new(
            &[1, 1, 6, 5],
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&u, &v)| a * u + b * v)
                .collect(),
            false,
        )
        .unwrap();
        let fc = rfft2d(&combo).unwrap();
        let fx = rfft2d(&x).unwrap();
        let fy = rfft2d(&y).unwrap();
        for k in 0..fc.re().len() {
            assert!((fc.re()[k] - (a * fx.re()[k] + b * fy.re()[k])).abs() < 1e-10);
            assert!((fc.im()[k] - (a * fx.im()[k] + b * fy.im()[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_graph_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for &w in &[8usize, 7] {
            let data: Vec<f64> = (0..2 * 3 * 8 * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::new(&[2, 3, 8, w], data, false).unwrap();
            let f = spectral_rfft2d(&x).unwrap();
            assert_eq!(f.shape(), &[2, 6, 8, half_width(w)]);
            let back = spectral_irfft2d(&f, w).unwrap();
            for (a, b) in x.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
