//! Recording tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough of its
//! inputs to run the backward pass. Nodes are topologically ordered by
//! construction, so backward is a single reverse sweep.

use super::kernels::{self, ConvGeom};
use super::{ParamGrads, ParamId, ParamStore, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    AvgPool { x: Var, k: usize },
    PixelShuffle { x: Var, r: usize },
    PixelUnshuffle { x: Var, r: usize },
    Concat(Vec<Var>),
    Mse { pred: Var, target: Var },
    Scale { x: Var, c: T },
    Add(Var, Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::AvgPool { .. } => "avgpool",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::PixelUnshuffle { .. } => "pixel_unshuffle",
            Op::Concat(_) => "concat_channels",
            Op::Mse { .. } => "mse_loss",
            Op::Scale { .. } => "scale",
            Op::Add(..) => "add",
        }
    }
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    label: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Attaches a human-readable label used in diagnostics.
    pub fn label(&mut self, v: Var, label: impl Into<String>) -> Var {
        self.nodes[v.0].label = Some(label.into());
        v
    }

    /// Constant input; receives no gradient outside the tape.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id));
        self.nodes[v.0].label = Some(p.name.clone());
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x), self.value(w), self.value(b), padding)?;
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2_with_argmax(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }

    pub fn avgpool(&mut self, x: Var, k: usize) -> Result<Var> {
        let out = kernels::avgpool(self.value(x), k)?;
        Ok(self.push(out, Op::AvgPool { x, k }))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(out, Op::PixelShuffle { x, r }))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::pixel_unshuffle(self.value(x), r)?;
        Ok(self.push(out, Op::PixelUnshuffle { x, r }))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let out = {
            let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
            kernels::concat_channels(&vals)?
        };
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    /// Mean squared error as a one-element node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = kernels::mse_loss(self.value(pred), self.value(target))?;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Invalid {
                op: "add",
                msg: format!("shape {:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let out = Tensor::new(
            va.shape(),
            va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect(),
        )?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Sum of one-element nodes, in argument order.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let mut it = xs.iter().copied();
        let first = it.next().ok_or(TensorError::Invalid {
            op: "sum_scalars",
            msg: "no inputs".into(),
        })?;
        it.try_fold(first, |acc, x| self.add(acc, x))
    }

    /// Hash of every piecewise-linear decision on the tape (ReLU signs and
    /// max-pool winners). Two evaluations with equal patterns lie on the same
    /// linear piece, which is what finite-difference checks need.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Describes the first node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            (!n.value.all_finite()).then(|| match &n.label {
                Some(l) => format!("{} output #{i} ({l})", n.op.name()),
                None => format!("{} output #{i}", n.op.name()),
            })
        })
    }

    /// Gradients of the scalar `loss` with respect to every parameter node.
    /// Parameters recorded more than once have their contributions summed.
    pub fn gradients(&self, loss: Var) -> Result<ParamGrads<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out: Vec<(ParamId, Vec<T>)> = Vec::new();
        let reach = self.reachability();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match out.iter_mut().find(|(p, _)| p == id) {
                    Some((_, acc)) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                    None => out.push((*id, g)),
                },
                Op::Conv2d { x, w, b, geom } => {
                    let need_x = reach[x.0];
                    let (gx, gw, gb) = kernels::conv2d_backward(
                        geom,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &g,
                        need_x,
                    );
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *x, gx);
                    }
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let gx = kernels::relu_backward(self.value(*x).data(), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        gx[src as usize] += gv;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::AvgPool { x, k } => {
                    let gx = kernels::avgpool_backward(self.value(*x).shape(), *k, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::PixelShuffle { x, r } => {
                    let gt = Tensor::new(node.value.shape(), g)?;
                    let gx = kernels::pixel_unshuffle(&gt, *r)?;
                    accumulate(&mut grads, *x, gx.into_data());
                }
                Op::PixelUnshuffle { x, r } => {
                    let gt = Tensor::new(node.value.shape(), g)?;
                    let gx = kernels::pixel_shuffle(&gt, *r)?;
                    accumulate(&mut grads, *x, gx.into_data());
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        accumulate(&mut grads, x, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                    let s = g[0] * T::cst(2.0 / p.len() as f64);
                    let gp: Vec<T> = p.iter().zip(t).map(|(&a, &b)| s * (a - b)).collect();
                    if reach[target.0] {
                        accumulate(&mut grads, *target, gp.iter().map(|&v| -v).collect());
                    }
                    accumulate(&mut grads, *pred, gp);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads, *x, g.iter().map(|&v| v * *c).collect());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
            }
        }
        out.sort_by_key(|(p, _)| *p);
        Ok(ParamGrads { entries: out })
    }

    /// Accumulates d(loss)/d(param) into the parameter gradient buffers.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads, T::one());
        Ok(())
    }

    /// Per node, whether any parameter feeds into it.
    fn reachability(&self) -> Vec<bool> {
        let mut reach = vec![false; self.nodes.len()];
        for i in 0..self.nodes.len() {
            reach[i] = match &self.nodes[i].op {
                Op::Leaf => false,
                Op::Param(_) => true,
                Op::Conv2d { x, w, b, .. } => reach[x.0] || reach[w.0] || reach[b.0],
                Op::Relu(x)
                | Op::MaxPool2 { x, .. }
                | Op::AvgPool { x, .. }
                | Op::PixelShuffle { x, .. }
                | Op::PixelUnshuffle { x, .. }
                | Op::Scale { x, .. } => reach[x.0],
                Op::Concat(xs) => xs.iter().any(|x| reach[x.0]),
                Op::Mse { pred, target } => reach[pred.0] || reach[target.0],
                Op::Add(a, b) => reach[a.0] || reach[b.0],
            };
        }
        reach
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_chain_rule() {
        // loss = mse(w * x, 0) with w = 3, x = 2: dloss/dw = 2 * 6 * 2 = 24
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::full(&[1, 1, 1, 1], 3.0)).unwrap();
        let b = store.add("b", Tensor::zeros(&[1])).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 1], 2.0));
        let wv = tape.param(&store, w);
        let bv = tape.param(&store, b);
        let y = tape.conv2d(x, wv, bv, 0).unwrap();
        let zero = tape.leaf(Tensor::zeros(&[1, 1, 1]));
        let loss = tape.mse(y, zero).unwrap();
        assert_eq!(tape.value(loss).item(), 36.0);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.item(), 24.0);
        assert_eq!(store.get(b).grad.item(), 12.0);
        // accumulation: a second call doubles
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.item(), 48.0);
    }

    #[test]
    fn unreachable_parameters_get_zero() {
        let mut store = ParamStore::<f32>::new();
        let used = store.add("used", Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        let bias = store.add("bias", Tensor::zeros(&[1])).unwrap();
        let unused = store.add("unused", Tensor::full(&[4], 1.0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 2, 2], 1.0));
        let (w, b) = (tape.param(&store, used), tape.param(&store, bias));
        let y = tape.conv2d(x, w, b, 0).unwrap();
        let t = tape.leaf(Tensor::zeros(&[1, 2, 2]));
        let loss = tape.mse(y, t).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(unused).grad.data().iter().all(|&g| g == 0.0));
        assert!(store.get(used).grad.item() != 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 2]));
        let y = tape.relu(x);
        assert!(matches!(tape.gradients(y), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_nodes_are_named() {
        let mut store = ParamStore::<f32>::new();
        let p = store.add("blown.weight", Tensor::full(&[1], f32::NAN)).unwrap();
        let mut tape = Tape::new();
        let _ = tape.leaf(Tensor::zeros(&[1]));
        let _ = tape.param(&store, p);
        let msg = tape.first_non_finite().unwrap();
        assert!(msg.contains("blown.weight"), "{msg}");
    }
}
