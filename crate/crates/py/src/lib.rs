//! Python bindings: tensors with autodiff, the spectral transform pair,
//! mask sampling, texture synthesis, the generator, and a desk-scale
//! training entry point.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use finpaint::config::train_config_from_text;
use finpaint::conv::{conv2d, ConvSpec, Mode, PadMode};
use finpaint::fft::{spectral_irfft2d, spectral_rfft2d};
use finpaint::maskgen::{sample_training_mask, Mask, MaskPolicy};
use finpaint::metrics::inpaint_metrics;
use finpaint::nets::{Generator, GeneratorConfig};
use finpaint::synth::{synth_texture, TextureSpec};
use finpaint::train::{inpaint_with, Trainer};

fn err(e: finpaint::Error) -> PyErr {
    match e {
        finpaint::Error::Io(_) | finpaint::Error::Image(_) | finpaint::Error::Checkpoint(_) => {
            PyIOError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Immutable f64 tensor participating in reverse-mode autodiff.
#[pyclass(name = "Tensor", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: finpaint::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    #[pyo3(signature = (shape, data, requires_grad = false))]
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> PyResult<Self> {
        Ok(PyTensor {
            inner: finpaint::Tensor::new(&shape, data, requires_grad).map_err(err)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    #[getter]
    fn requires_grad(&self) -> bool {
        self.inner.requires_grad()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }

    fn add(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.add(&other.inner).map_err(err)? })
    }

    fn sub(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.sub(&other.inner).map_err(err)? })
    }

    fn mul(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.mul(&other.inner).map_err(err)? })
    }

    fn scale(&self, c: f64) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.scale(c).map_err(err)? })
    }

    fn square(&self) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.square().map_err(err)? })
    }

    fn relu(&self) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.relu().map_err(err)? })
    }

    fn sigmoid(&self) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.sigmoid().map_err(err)? })
    }

    fn sum(&self) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.sum().map_err(err)? })
    }

    fn mean(&self) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.mean().map_err(err)? })
    }

    fn detach(&self) -> PyTensor {
        PyTensor { inner: self.inner.detach() }
    }

    fn item(&self) -> f64 {
        self.inner.item()
    }
}

/// Gradients of a scalar `root` with respect to each of `inputs`
/// (zeros where a tensor does not influence the root).
#[pyfunction]
fn backward(root: &PyTensor, inputs: Vec<PyTensor>) -> PyResult<Vec<Vec<f64>>> {
    let grads = finpaint::backward(&root.inner).map_err(err)?;
    Ok(inputs.iter().map(|t| grads.get_or_zeros(&t.inner)).collect())
}

/// 2D real FFT of a BxCxHxW tensor, packed as 2C channels (re, im) of
/// half-spectrum width floor(W/2)+1.
#[pyfunction]
fn rfft2d(x: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor { inner: spectral_rfft2d(&x.inner).map_err(err)? })
}

/// Inverse of `rfft2d`; `out_width` resolves the even/odd width ambiguity.
#[pyfunction]
fn irfft2d(f: &PyTensor, out_width: usize) -> PyResult<PyTensor> {
    Ok(PyTensor { inner: spectral_irfft2d(&f.inner, out_width).map_err(err)? })
}

/// Same-padded stride-1 convolution (pad_mode "zero" or "reflect").
#[pyfunction]
#[pyo3(signature = (x, weight, bias = None, pad_mode = "zero"))]
fn conv2d_same(
    x: &PyTensor,
    weight: &PyTensor,
    bias: Option<&PyTensor>,
    pad_mode: &str,
) -> PyResult<PyTensor> {
    let pm = match pad_mode {
        "zero" => PadMode::Zero,
        "reflect" => PadMode::Reflect,
        other => return Err(PyValueError::new_err(format!("unknown pad mode '{other}'"))),
    };
    let k = *weight.inner.shape().last().unwrap_or(&0);
    let y = conv2d(
        &x.inner,
        &weight.inner,
        bias.map(|b| &b.inner),
        ConvSpec::same(k, pm),
    )
    .map_err(err)?;
    Ok(PyTensor { inner: y })
}

/// Binary inpainting mask; 1 = known, 0 = missing.
#[pyclass(name = "Mask", from_py_object)]
#[derive(Clone)]
struct PyMask {
    inner: Mask,
}

#[pymethods]
impl PyMask {
    #[new]
    fn new(h: usize, w: usize, data: Vec<u8>) -> PyResult<Self> {
        Ok(PyMask { inner: Mask::from_bytes(h, w, data).map_err(err)? })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.h, self.inner.w)
    }

    #[getter]
    fn data(&self) -> Vec<u8> {
        self.inner.data.clone()
    }

    fn missing_fraction(&self) -> f64 {
        self.inner.missing_fraction()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mask({}x{}, {:.1}% missing)",
            self.inner.h,
            self.inner.w,
            100.0 * self.inner.missing_fraction()
        )
    }
}

/// Sample a training mask. Policies: large, narrow, wide-only, box-only.
#[pyfunction]
#[pyo3(signature = (h, w, policy = "large", seed = 0))]
fn sample_mask(h: usize, w: usize, policy: &str, seed: u64) -> PyResult<PyMask> {
    let policy: MaskPolicy = policy.parse().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PyMask { inner: sample_training_mask(&mut rng, h, w, policy).map_err(err)? })
}

/// Synthesize one periodic test texture as a [1,3,size,size] tensor.
#[pyfunction]
#[pyo3(signature = (size, seed = 0))]
fn texture(size: usize, seed: u64) -> PyResult<PyTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = synth_texture(&mut rng, &TextureSpec::default(), size, size).map_err(err)?;
    Ok(PyTensor { inner: sample.image })
}

/// Inpainting generator (Fourier or plain-conv trunk).
#[pyclass(name = "Generator")]
struct PyGenerator {
    inner: Generator,
}

#[pymethods]
impl PyGenerator {
    #[new]
    #[pyo3(signature = (base_width = 8, n_residual = 3, ffc = true, seed = 0))]
    fn new(base_width: usize, n_residual: usize, ffc: bool, seed: u64) -> PyResult<Self> {
        let cfg = GeneratorConfig {
            base_width,
            n_residual,
            ffc,
            ..Default::default()
        };
        Ok(PyGenerator { inner: Generator::new(cfg, seed).map_err(err)? })
    }

    fn param_count(&mut self) -> usize {
        self.inner.param_count()
    }

    /// Composite inpainting: equals `image` on known pixels.
    fn inpaint(&mut self, image: &PyTensor, mask: &PyMask) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: inpaint_with(&mut self.inner, &image.inner, &mask.inner).map_err(err)?,
        })
    }

    /// Raw forward pass over a [1,4,H,W] masked-image stack.
    fn forward(&mut self, x4: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: self.inner.forward(&x4.inner, Mode::Eval, false).map_err(err)? })
    }
}

/// In-hole reconstruction metrics (l1, l2, psnr, missing_pixels).
#[pyfunction]
fn eval_inpainting(
    truth: &PyTensor,
    prediction: &PyTensor,
    mask: &PyMask,
) -> PyResult<(f64, f64, f64, usize)> {
    let r = inpaint_metrics(&truth.inner, &prediction.inner, &mask.inner).map_err(err)?;
    Ok((r.l1, r.l2, r.psnr, r.missing_pixels))
}

/// Run a short training loop from a key=value config string; returns the
/// per-step CSV loss log (header included) and leaves a trained generator
/// behind for inspection through the returned Generator.
#[pyfunction]
fn train(config_text: &str) -> PyResult<(String, Py<PyGenerator>)> {
    let cfg = train_config_from_text(config_text).map_err(err)?;
    let mut trainer = Trainer::new(cfg).map_err(err)?;
    let mut log = Vec::new();
    trainer.run(&mut log, None).map_err(err)?;
    let log = String::from_utf8(log).expect("csv log is ascii");
    Python::attach(|py| {
        let g = Py::new(py, PyGenerator { inner: trainer.gen })?;
        Ok((log, g))
    })
}

#[pymodule]
fn finpaint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(backward, m)?)?;
    m.add_function(wrap_pyfunction!(rfft2d, m)?)?;
    m.add_function(wrap_pyfunction!(irfft2d, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d_same, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mask, m)?)?;
    m.add_function(wrap_pyfunction!(texture, m)?)?;
    m.add_function(wrap_pyfunction!(eval_inpainting, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
