//! Central finite-difference checks for every differentiable primitive and
//! for a composite FFC layer. Each check compares the analytic gradient of
//! a scalar objective against (f(x+h) - f(x-h)) / 2h at every coordinate.

use finpaint::conv::{batchnorm2d, conv2d, conv2d_input_adjoint, ConvSpec, Mode, PadMode};
use finpaint::ffc::{FfcConfig, FfcLayer};
use finpaint::fft::{spectral_irfft2d, spectral_rfft2d};
use finpaint::{backward, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL: f64 = 1e-6;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero on both sides, for kinked nonlinearities.
fn rand_signed_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(0.2..1.0);
            if rng.random_range(0..2) == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Check df/dx at every coordinate of every listed input.
fn fd_check(name: &str, inputs: &[(Vec<usize>, Vec<f64>)], f: &dyn Fn(&[Tensor]) -> Tensor) {
    let make = |datas: &[Vec<f64>], grad: bool| -> Vec<Tensor> {
        inputs
            .iter()
            .zip(datas)
            .map(|((s, _), d)| Tensor::new(s, d.clone(), grad).unwrap())
            .collect()
    };
    let datas: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let xs = make(&datas, true);
    let y = f(&xs);
    assert_eq!(y.len(), 1, "{name}: objective must be scalar");
    let grads = backward(&y).unwrap();
    for (i, (_, data)) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(&xs[i]);
        for j in 0..data.len() {
            let mut dp = datas.clone();
            dp[i][j] += STEP;
            let mut dm = datas.clone();
            dm[i][j] -= STEP;
            let num = (f(&make(&dp, false)).item() - f(&make(&dm, false)).item()) / (2.0 * STEP);
            let denom = num.abs().max(g[j].abs()).max(1.0);
            assert!(
                (num - g[j]).abs() / denom <= REL,
                "{name}: input {i} coord {j}: analytic {} vs numeric {num}",
                g[j]
            );
        }
    }
}

/// Scalarize an arbitrary tensor with a fixed random projection so every
/// output coordinate contributes to the objective.
fn project(y: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::constant(y.shape(), rand_vec(&mut rng, y.len(), -1.0, 1.0)).unwrap();
    y.mul(&r).unwrap().sum().unwrap()
}

#[test]
fn elementwise_arithmetic_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = (vec![2, 3], rand_vec(&mut rng, 6, -1.0, 1.0));
    let b = (vec![2, 3], rand_vec(&mut rng, 6, -1.0, 1.0));
    fd_check("arith", &[a, b], &|xs| {
        let y = xs[0]
            .mul(&xs[1])
            .unwrap()
            .add(&xs[0].scale(0.5).unwrap())
            .unwrap()
            .sub(&xs[1].add_scalar(0.3).unwrap())
            .unwrap()
            .square()
            .unwrap();
        project(&y, 1)
    });
}

#[test]
fn relu_and_leaky_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = (vec![4, 4], rand_signed_vec(&mut rng, 16));
    fd_check("relu", &[a.clone()], &|xs| project(&xs[0].relu().unwrap(), 2));
    fd_check("leaky_relu", &[a], &|xs| {
        project(&xs[0].leaky_relu(0.2).unwrap(), 3)
    });
}

#[test]
fn sigmoid_ln_clamp() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = (vec![3, 3], rand_vec(&mut rng, 9, -2.0, 2.0));
    fd_check("sigmoid-ln", &[a], &|xs| {
        // sigmoid output is in (0,1) so the log is safe
        project(&xs[0].sigmoid().unwrap().ln().unwrap(), 4)
    });
    // keep samples away from the clamp bounds, where the kink lives
    let b = (vec![5], vec![0.2, 0.35, 0.5, 0.65, 0.8]);
    fd_check("clamp", &[b], &|xs| {
        project(&xs[0].clamp(0.1, 0.9).unwrap().square().unwrap(), 5)
    });
}

#[test]
fn reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = (vec![2, 5], rand_vec(&mut rng, 10, -1.0, 1.0));
    fd_check("sum", &[a.clone()], &|xs| {
        xs[0].square().unwrap().sum().unwrap()
    });
    fd_check("mean", &[a.clone()], &|xs| {
        xs[0].square().unwrap().mean().unwrap()
    });
    let mask: Vec<f64> = (0..10).map(|i| (i % 3 == 0) as u8 as f64).collect();
    fd_check("masked_sum", &[a], &|xs| {
        let m = Tensor::constant(&[2, 5], mask.clone()).unwrap();
        xs[0].square().unwrap().masked_sum(&m).unwrap()
    });
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = (vec![1, 4, 2, 3], rand_vec(&mut rng, 24, -1.0, 1.0));
    fd_check("narrow/concat/upsample/reshape", &[a], &|xs| {
        let lo = xs[0].narrow_channels(0, 2).unwrap();
        let hi = xs[0].narrow_channels(2, 2).unwrap();
        let y = Tensor::concat_channels(&[hi, lo])
            .unwrap()
            .upsample_nearest_2x()
            .unwrap();
        let n = y.len();
        project(&y.reshape(&[n]).unwrap(), 6)
    });
}

#[test]
fn conv2d_all_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = (vec![1, 2, 5, 5], rand_vec(&mut rng, 50, -1.0, 1.0));
    let w = (vec![3, 2, 3, 3], rand_vec(&mut rng, 54, -1.0, 1.0));
    let b = (vec![3], rand_vec(&mut rng, 3, -1.0, 1.0));
    let cases = [
        ("zero same", ConvSpec::same(3, PadMode::Zero)),
        ("reflect same", ConvSpec::same(3, PadMode::Reflect)),
        (
            "stride 2",
            ConvSpec {
                stride: 2,
                pad: 1,
                dilation: 1,
                pad_mode: PadMode::Zero,
            },
        ),
        (
            "dilation 2",
            ConvSpec {
                stride: 1,
                pad: 2,
                dilation: 2,
                pad_mode: PadMode::Reflect,
            },
        ),
    ];
    for (label, spec) in cases {
        fd_check(
            &format!("conv2d {label}"),
            &[x.clone(), w.clone(), b.clone()],
            &|xs| project(&conv2d(&xs[0], &xs[1], Some(&xs[2]), spec).unwrap(), 7),
        );
    }
}

#[test]
fn conv2d_input_adjoint_is_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spec = ConvSpec {
        stride: 2,
        pad: 1,
        dilation: 1,
        pad_mode: PadMode::Zero,
    };
    // input 1x2x6x6 with k=4 s=2 p=1 gives 3x3 output cells
    let g = (vec![1, 3, 3, 3], rand_vec(&mut rng, 27, -1.0, 1.0));
    let w = (vec![3, 2, 4, 4], rand_vec(&mut rng, 96, -1.0, 1.0));
    fd_check("conv2d_input_adjoint", &[g, w], &|xs| {
        let y = conv2d_input_adjoint(&xs[0], &xs[1], &[1, 2, 6, 6], spec).unwrap();
        project(&y, 8)
    });
}

#[test]
fn batchnorm_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = (vec![2, 3, 2, 2], rand_vec(&mut rng, 24, -1.0, 1.0));
    let gamma = (vec![3], rand_vec(&mut rng, 3, 0.5, 1.5));
    let beta = (vec![3], rand_vec(&mut rng, 3, -0.5, 0.5));
    let mean = rand_vec(&mut rng, 3, -0.2, 0.2);
    let var = rand_vec(&mut rng, 3, 0.5, 1.5);
    for mode in [Mode::Train, Mode::Eval] {
        fd_check(
            &format!("batchnorm {mode:?}"),
            &[x.clone(), gamma.clone(), beta.clone()],
            &|xs| {
                let y = batchnorm2d(&xs[0], &xs[1], &xs[2], &mean, &var, 1e-5, mode).unwrap();
                project(&y, 9)
            },
        );
    }
}

#[test]
fn spectral_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for w in [6, 7] {
        let x = (vec![1, 2, 4, w], rand_vec(&mut rng, 8 * w, -1.0, 1.0));
        fd_check(&format!("rfft2d w={w}"), &[x], &|xs| {
            project(&spectral_rfft2d(&xs[0]).unwrap(), 20 + w as u64)
        });
        let wh = w / 2 + 1;
        let f = (vec![1, 4, 4, wh], rand_vec(&mut rng, 16 * wh, -1.0, 1.0));
        fd_check(&format!("irfft2d w={w}"), &[f], &|xs| {
            project(&spectral_irfft2d(&xs[0], w).unwrap(), 30 + w as u64)
        });
    }
}

#[test]
fn composite_ffc_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let layer = std::cell::RefCell::new(FfcLayer::new(&mut rng, FfcConfig::new(4, 4, 0.5)).unwrap());
    let x = (vec![1, 4, 6, 6], rand_vec(&mut rng, 144, -1.0, 1.0));
    // eval-mode BN keeps the composite smooth apart from the ReLU kinks;
    // the fixed seed keeps all preactivations clear of zero
    fd_check("ffc layer", &[x], &|xs| {
        project(
            &layer.borrow_mut().forward(&xs[0], Mode::Eval, false).unwrap(),
            10,
        )
    });
}
