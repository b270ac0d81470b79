//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable once built. Every op records its parents and a
//! closure computing parent gradients from the output gradient, so
//! [`backward`] can walk the graph in reverse topological order exactly once.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Given the gradient w.r.t. this node's output, produce gradients for each
/// parent (None for parents that do not need one).
type BackpropFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backprop: Option<BackpropFn>,
}

#[derive(Clone)]
pub struct Tensor(Arc<TensorInner>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(Error::EmptyShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tensor {
    /// New leaf tensor. `requires_grad` marks it as a trainable parameter.
    pub fn new(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        check_finite(&data, "leaf")?;
        Ok(Tensor(Arc::new(TensorInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data,
            requires_grad,
            parents: Vec::new(),
            backprop: None,
        })))
    }

    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(shape, data, false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v], false).expect("scalar is valid")
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Tensor::new(shape, vec![0.0; n], false)
    }

    pub fn full(shape: &[usize], v: f64) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Tensor::new(shape, vec![v; n], false)
    }

    /// Interior node constructor used by op implementations.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backprop: BackpropFn,
    ) -> Result<Tensor> {
        let n = check_shape(&shape)?;
        debug_assert_eq!(n, data.len());
        check_finite(&data, op)?;
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Ok(Tensor(Arc::new(TensorInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            parents,
            backprop: if requires_grad { Some(backprop) } else { None },
        })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // zero extents are rejected at construction
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.0.data[0]
    }

    /// Detach from the graph; same values, no parents, no gradient flow.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.shape(), self.data().to_vec(), false).expect("detach of valid tensor")
    }

    /// Stop-gradient: identity forward, zero gradient backward.
    pub fn stop_grad(&self) -> Tensor {
        self.detach()
    }

    /// Leaf copy that tracks gradients, for probes on inputs.
    pub fn tracked(&self) -> Tensor {
        Tensor::new(self.shape(), self.data().to_vec(), true).expect("copy of valid tensor")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        let x = self.clone();
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![x],
            Box::new(move |g| vec![Some(g.to_vec())]),
        )
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        // dy/dx as a function of (x, y)
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Tensor> {
        let y: Vec<f64> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        let yv = y.clone();
        let xp = self.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            y,
            vec![x],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(xp.data().iter().zip(yv.iter()))
                    .map(|(&go, (&xi, &yi))| go * df(xi, yi))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        dfa: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dfb: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let y: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            y,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = g
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(&go, (&x, &y))| go * dfa(x, y))
                    .collect();
                let gb = g
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(&go, (&x, &y))| go * dfb(x, y))
                    .collect();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary("scale", |v| c * v, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary("add_scalar", |v| v + c, |_, _| 1.0)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary("square", |v| v * v, |x, _| 2.0 * x)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(
            "relu",
            |v| if v > 0.0 { v } else { 0.0 },
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        self.unary(
            "leaky_relu",
            |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(
            "sigmoid",
            |v| 1.0 / (1.0 + (-v).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    /// Natural log; the input must be strictly positive.
    pub fn ln(&self) -> Result<Tensor> {
        if self.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite("ln"));
        }
        self.unary("ln", |v| v.ln(), |x, _| 1.0 / x)
    }

    /// Clamp to [lo, hi]; gradient is zero where the value was clamped.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.unary(
            "clamp",
            |v| v.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    /// Sum of all elements; result has shape [1].
    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        let n = self.len();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum of x over positions where the constant mask is nonzero, as
    /// x.mul(mask).sum(); mask carries no gradient.
    pub fn masked_sum(&self, mask: &Tensor) -> Result<Tensor> {
        self.mul(&mask.detach())?.sum()
    }

    /// Channel slice of a BxCxHxW tensor: channels [start, start+len).
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let (b, c, h, w) = self.dims4()?;
        if start + len > c || len == 0 {
            return Err(Error::ShapeMismatch(format!(
                "narrow_channels [{start},{}) of {} channels",
                start + len,
                c
            )));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(b * len * hw);
        for bi in 0..b {
            let base = bi * c * hw + start * hw;
            out.extend_from_slice(&self.data()[base..base + len * hw]);
        }
        let full = self.len();
        Tensor::from_op(
            "narrow_channels",
            vec![b, len, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; full];
                for bi in 0..b {
                    let src = bi * len * hw;
                    let dst = bi * c * hw + start * hw;
                    gx[dst..dst + len * hw].copy_from_slice(&g[src..src + len * hw]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Concatenate BxCixHxW tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat of zero tensors".into()));
        }
        let (b, _, h, w) = parts[0].dims4()?;
        let mut cs = Vec::with_capacity(parts.len());
        for p in parts {
            let (pb, pc, ph, pw) = p.dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "concat_channels: {:?} vs {:?}",
                    parts[0].shape(),
                    p.shape()
                )));
            }
            cs.push(pc);
        }
        let ctot: usize = cs.iter().sum();
        let hw = h * w;
        let mut out = vec![0.0; b * ctot * hw];
        for bi in 0..b {
            let mut coff = 0;
            for (p, &pc) in parts.iter().zip(&cs) {
                let src = bi * pc * hw;
                let dst = bi * ctot * hw + coff * hw;
                out[dst..dst + pc * hw].copy_from_slice(&p.data()[src..src + pc * hw]);
                coff += pc;
            }
        }
        let cs2 = cs.clone();
        Tensor::from_op(
            "concat_channels",
            vec![b, ctot, h, w],
            out,
            parts.to_vec(),
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(cs2.len());
                let mut coff = 0;
                for &pc in &cs2 {
                    let mut gp = vec![0.0; b * pc * hw];
                    for bi in 0..b {
                        let src = bi * ctot * hw + coff * hw;
                        let dst = bi * pc * hw;
                        gp[dst..dst + pc * hw].copy_from_slice(&g[src..src + pc * hw]);
                    }
                    coff += pc;
                    grads.push(Some(gp));
                }
                grads
            }),
        )
    }

    /// Nearest-neighbor 2x upsampling of a BxCxHxW tensor.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor> {
        let (b, c, h, w) = self.dims4()?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; b * c * h2 * w2];
        for bc in 0..b * c {
            for i in 0..h2 {
                for j in 0..w2 {
                    out[bc * h2 * w2 + i * w2 + j] = self.data()[bc * h * w + (i / 2) * w + j / 2];
                }
            }
        }
        Tensor::from_op(
            "upsample_nearest_2x",
            vec![b, c, h2, w2],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * h * w];
                for bc in 0..b * c {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            gx[bc * h * w + (i / 2) * w + j / 2] += g[bc * h2 * w2 + i * w2 + j];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected 4-D tensor, got {:?}",
                self.shape()
            ))),
        }
    }

    fn parents(&self) -> &[Tensor] {
        &self.0.parents
    }
}

/// Gradients produced by [`backward`], keyed by tensor id.
pub struct GradStore {
    grads: HashMap<u64, Vec<f64>>,
}

impl GradStore {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient for a leaf, zeros if the loss never touched it.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.grads
            .get(&t.id())
            .cloned()
            .unwrap_or_else(|| vec![0.0; t.len()])
    }
}

/// Reverse-mode sweep from a scalar root. Visits each node exactly once in
/// reverse topological order and accumulates gradients for every tracked
/// tensor reachable from the root.
pub fn backward(root: &Tensor) -> Result<GradStore> {
    if root.len() != 1 {
        return Err(Error::NonScalarRoot(root.shape().to_vec()));
    }
    let order = topo_order(root)?;
    let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
    grads.insert(root.id(), vec![1.0]);
    for node in order.iter().rev() {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        if let Some(bp) = &node.0.backprop {
            let parent_grads = bp(&g);
            debug_assert_eq!(parent_grads.len(), node.parents().len());
            for (p, pg) in node.parents().iter().zip(parent_grads) {
                if !p.requires_grad() {
                    continue;
                }
                if let Some(pg) = pg {
                    debug_assert_eq!(pg.len(), p.len());
                    let slot = grads.entry(p.id()).or_insert_with(|| vec![0.0; p.len()]);
                    for (s, v) in slot.iter_mut().zip(pg) {
                        *s += v;
                    }
                }
            }
        }
    }
    Ok(GradStore { grads })
}

/// Iterative post-order DFS with on-stack cycle detection.
fn topo_order(root: &Tensor) -> Result<Vec<Tensor>> {
    #[derive(PartialEq)]
    enum State {
        Visiting,
        Done,
    }
    let mut state: HashMap<u64, State> = HashMap::new();
    let mut order = Vec::new();
    // stack of (node, next-parent index)
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    state.insert(root.id(), State::Visiting);
    while let Some((node, pi)) = stack.pop() {
        if pi < node.parents().len() {
            let p = node.parents()[pi].clone();
            stack.push((node, pi + 1));
            match state.get(&p.id()) {
                Some(State::Visiting) => return Err(Error::GraphCycle),
                Some(State::Done) => {}
                None => {
                    if p.requires_grad() {
                        state.insert(p.id(), State::Visiting);
                        stack.push((p, 0));
                    }
                }
            }
        } else {
            state.insert(node.id(), State::Done);
            order.push(node);
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        assert_eq!(loss.item(), 14.0);
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn stop_gradient_contract() {
        // f(x) = sg(x) * x at x = 3 -> gradient 3
        let x = Tensor::new(&[1], vec![3.0], true).unwrap();
        let loss = x.stop_grad().mul(&x).unwrap().sum().unwrap();
        assert_eq!(loss.item(), 9.0);
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[3.0]);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let x = Tensor::new(&[2], vec![1.0, 2.0], true).unwrap();
        let y = Tensor::new(&[2], vec![5.0, 6.0], true).unwrap();
        let loss = x.sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert!(grads.get(&y).is_none());
        assert_eq!(grads.get_or_zeros(&y), vec![0.0, 0.0]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0], false).unwrap();
        assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
        let s = Tensor::scalar(0.0).sigmoid().unwrap();
        assert_eq!(s.item(), 0.5);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = Tensor::new(&[2], vec![1.0, 2.0], true).unwrap();
        assert!(matches!(backward(&x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn nan_is_an_error() {
        assert!(Tensor::new(&[1], vec![f64::NAN], false).is_err());
        let x = Tensor::new(&[1], vec![-1.0], true).unwrap();
        assert!(x.ln().is_err());
    }

    #[test]
    fn diamond_graph_accumulates() {
        // loss = x*x + x*x uses x twice through shared subexpressions
        let x = Tensor::new(&[1], vec![3.0], true).unwrap();
        let sq = x.square().unwrap();
        let loss = sq.add(&sq).unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[12.0]);
    }

    #[test]
    fn narrow_concat_roundtrip_grads() {
        let x = Tensor::new(&[1, 3, 2, 2], (0..12).map(|v| v as f64).collect(), true).unwrap();
        let a = x.narrow_channels(0, 1).unwrap();
        let b = x.narrow_channels(1, 2).unwrap();
        let y = Tensor::concat_channels(&[a, b]).unwrap();
        assert_eq!(y.data(), x.data());
        let loss = y.square().unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        let expect: Vec<f64> = (0..12).map(|v| 2.0 * v as f64).collect();
        assert_eq!(grads.get(&x).unwrap(), expect.as_slice());
    }
}
