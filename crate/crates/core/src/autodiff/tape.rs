use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::loss::{self, LossInfo};
use super::norm::{self, BatchNormMode, RunningStats};
use super::{conv, pool, shape_err, ConvParams, Real, Tensor, TensorError};

type Res<T> = Result<T, TensorError>;

/// A value produced on a [`Tape`]. Unrecorded values carry no id.
#[derive(Debug, Clone)]
pub struct Var<T> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> Res<[usize; 4]> {
        self.value.dims4()
    }

    pub fn id(&self) -> Option<usize> {
        self.id
    }

    /// Takes the value out, cloning only if it is still shared.
    pub fn into_tensor(self) -> Tensor<T> {
        Rc::try_unwrap(self.value).unwrap_or_else(|rc| (*rc).clone())
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Option<usize>,
        w: Option<usize>,
        b: Option<usize>,
        xv: Rc<Tensor<T>>,
        wv: Rc<Tensor<T>>,
        p: ConvParams,
    },
    MaxPool {
        x: Option<usize>,
        argmax: Vec<u32>,
        xd: [usize; 4],
    },
    Upsample {
        x: Option<usize>,
        xd: [usize; 4],
        factor: usize,
    },
    Relu {
        x: Option<usize>,
        out: Rc<Tensor<T>>,
    },
    Concat {
        parts: Vec<(Option<usize>, usize)>,
    },
    Add {
        a: Option<usize>,
        b: Option<usize>,
    },
    Gap {
        x: Option<usize>,
        xd: [usize; 4],
    },
    Broadcast {
        x: Option<usize>,
    },
    BatchNorm {
        x: Option<usize>,
        gamma: Option<usize>,
        beta: Option<usize>,
        xv: Rc<Tensor<T>>,
        gv: Rc<Tensor<T>>,
        mean: Vec<T>,
        invstd: Vec<T>,
        mode: BatchNormMode,
    },
    Nll {
        x: Option<usize>,
        grad: Vec<T>,
        shape: Vec<usize>,
    },
    Dot {
        x: Option<usize>,
        weights: Tensor<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
}

/// Record of operations for reverse-mode differentiation.
pub struct Tape<T> {
    record: bool,
    nodes: RefCell<Vec<Node<T>>>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    by_id: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` did not influence the output.
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.id.and_then(|id| self.by_id.get(&id))
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        v.id.and_then(|id| self.by_id.remove(&id))
    }

    /// Gradient for `v`, zeros when it has none.
    pub fn get_or_zeros(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

fn dims(t: &Tensor<impl Real>) -> Res<[usize; 4]> {
    t.dims4()
}

impl<T: Real> Tape<T> {
    pub fn new(record: bool) -> Self {
        Self {
            record,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Tape that evaluates eagerly without keeping anything for backward.
    pub fn inference() -> Self {
        Self::new(false)
    }

    pub fn recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>, value: Tensor<T>) -> Var<T> {
        let value = Rc::new(value);
        self.push_rc(op, value)
    }

    fn push_rc(&self, op: Op<T>, value: Rc<Tensor<T>>) -> Var<T> {
        if !self.record {
            return Var { id: None, value };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            shape: value.shape().to_vec(),
        });
        Var {
            id: Some(nodes.len() - 1),
            value,
        }
    }

    fn any_recorded(&self, ids: &[Option<usize>]) -> bool {
        self.record && ids.iter().any(Option::is_some)
    }

    /// A differentiable input, such as a parameter.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.push(Op::Leaf, value)
    }

    /// A value that is never differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    fn wrap(&self, ids: &[Option<usize>], op: impl FnOnce() -> Op<T>, value: Tensor<T>) -> Var<T> {
        if self.any_recorded(ids) {
            self.push(op(), value)
        } else {
            self.constant(value)
        }
    }

    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, p: ConvParams) -> Res<Var<T>> {
        let xd = dims(&x.value)?;
        let wd = dims(&w.value)?;
        let od = conv::output_dims(xd, wd, b.map(|b| b.value.len()), &p)?;
        let out = conv::forward(
            x.value.data(),
            xd,
            w.value.data(),
            wd,
            b.map(|b| b.value.data()),
            p,
            od,
        );
        let out = Tensor::new(&od, out)?;
        let bid = b.and_then(|b| b.id);
        Ok(self.wrap(
            &[x.id, w.id, bid],
            || Op::Conv {
                x: x.id,
                w: w.id,
                b: bid,
                xv: x.value.clone(),
                wv: w.value.clone(),
                p,
            },
            out,
        ))
    }

    /// 2×2 max-pooling with stride 2.
    pub fn max_pool2(&self, x: &Var<T>) -> Res<Var<T>> {
        let xd = dims(&x.value)?;
        if xd[2] < 2 || xd[3] < 2 {
            return Err(shape_err(format!("cannot pool {xd:?}")));
        }
        let (out, argmax, od) = pool::maxpool2_forward(x.value.data(), xd);
        let out = Tensor::new(&od, out)?;
        Ok(self.wrap(&[x.id], || Op::MaxPool { x: x.id, argmax, xd }, out))
    }

    /// Bilinear upsampling by an integer factor.
    pub fn upsample(&self, x: &Var<T>, factor: usize) -> Res<Var<T>> {
        let xd = dims(&x.value)?;
        if factor == 0 {
            return Err(shape_err("upsampling factor must be positive"));
        }
        if factor == 1 {
            return Ok(x.clone());
        }
        let (out, od) = pool::upsample_forward(x.value.data(), xd, factor);
        let out = Tensor::new(&od, out)?;
        Ok(self.wrap(&[x.id], || Op::Upsample { x: x.id, xd, factor }, out))
    }

    pub fn relu(&self, x: &Var<T>) -> Var<T> {
        let out = Rc::new(x.value.map(|v| if v > T::zero() { v } else { T::zero() }));
        if self.any_recorded(&[x.id]) {
            self.push_rc(Op::Relu { x: x.id, out: out.clone() }, out)
        } else {
            Var { id: None, value: out }
        }
    }

    /// Concatenation along the channel axis.
    pub fn concat(&self, xs: &[&Var<T>]) -> Res<Var<T>> {
        let first = xs.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let [n, _, h, w] = dims(&first.value)?;
        let mut parts = Vec::with_capacity(xs.len());
        for x in xs {
            let [n2, c, h2, w2] = dims(&x.value)?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(shape_err(format!(
                    "concat of {:?} with {:?}",
                    first.shape(),
                    x.shape()
                )));
            }
            parts.push((x.id, c));
        }
        let ctot: usize = parts.iter().map(|p| p.1).sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * ctot * hw);
        for ni in 0..n {
            for (x, &(_, c)) in xs.iter().zip(&parts) {
                data.extend_from_slice(&x.value.data()[ni * c * hw..(ni + 1) * c * hw]);
            }
        }
        let out = Tensor::new(&[n, ctot, h, w], data)?;
        let ids: Vec<_> = parts.iter().map(|p| p.0).collect();
        Ok(self.wrap(&ids, || Op::Concat { parts }, out))
    }

    /// Elementwise sum of equally shaped values.
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Res<Var<T>> {
        if a.shape() != b.shape() {
            return Err(shape_err(format!("add of {:?} and {:?}", a.shape(), b.shape())));
        }
        let mut out = (*a.value).clone();
        out.add_assign(&b.value);
        Ok(self.wrap(&[a.id, b.id], || Op::Add { a: a.id, b: b.id }, out))
    }

    /// Global average pooling to `[n, c, 1, 1]`.
    pub fn gap(&self, x: &Var<T>) -> Res<Var<T>> {
        let xd = dims(&x.value)?;
        let out = Tensor::new(&[xd[0], xd[1], 1, 1], pool::gap_forward(x.value.data(), xd))?;
        Ok(self.wrap(&[x.id], || Op::Gap { x: x.id, xd }, out))
    }

    /// Repeats a `[n, c, 1, 1]` value over an `h × w` plane.
    pub fn broadcast(&self, x: &Var<T>, h: usize, w: usize) -> Res<Var<T>> {
        let [n, c, one_h, one_w] = dims(&x.value)?;
        if (one_h, one_w) != (1, 1) {
            return Err(shape_err(format!("broadcast needs a 1×1 plane, got {:?}", x.shape())));
        }
        let out = Tensor::new(&[n, c, h, w], pool::broadcast_forward(x.value.data(), n, c, h, w))?;
        Ok(self.wrap(&[x.id], || Op::Broadcast { x: x.id }, out))
    }

    /// Batch normalization; in training mode `stats` is updated in place.
    pub fn batch_norm(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        stats: &mut RunningStats,
        mode: BatchNormMode,
    ) -> Res<Var<T>> {
        let xd = dims(&x.value)?;
        let c = xd[1];
        if gamma.value.len() != c || beta.value.len() != c || stats.channels() != c {
            return Err(shape_err(format!("batch norm over {c} channels has mismatched parameters")));
        }
        let (mean, invstd): (Vec<T>, Vec<T>) = match mode {
            BatchNormMode::Train => {
                let (m, v) = norm::batch_stats(x.value.data(), xd);
                stats.update(&m, &v, xd[0] * xd[2] * xd[3]);
                (m.iter().map(|&v| T::of(v)).collect(), norm::inv_std(&v))
            }
            BatchNormMode::Eval => {
                let v: Vec<f64> = stats.var.iter().map(|&v| v as f64).collect();
                (stats.mean.iter().map(|&v| T::of(v as f64)).collect(), norm::inv_std(&v))
            }
        };
        let out = norm::apply(
            x.value.data(),
            xd,
            gamma.value.data(),
            beta.value.data(),
            &mean,
            &invstd,
        );
        let out = Tensor::new(&xd, out)?;
        Ok(self.wrap(
            &[x.id, gamma.id, beta.id],
            || Op::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xv: x.value.clone(),
                gv: gamma.value.clone(),
                mean,
                invstd,
                mode,
            },
            out,
        ))
    }

    /// Masked mean cross-entropy of `[n, k, h, w]` logits as a scalar.
    pub fn masked_nll(
        &self,
        logits: &Var<T>,
        targets: &[u8],
        include: Option<&[bool]>,
    ) -> Res<(Var<T>, LossInfo)> {
        let ld = dims(&logits.value)?;
        let (info, grad) = loss::masked_nll(logits.value.data(), ld, targets, include)?;
        let out = Tensor::scalar(T::of(info.loss));
        let shape = logits.shape().to_vec();
        let var = self.wrap(&[logits.id], || Op::Nll { x: logits.id, grad, shape }, out);
        Ok((var, info))
    }

    /// `sum(x * weights)` as a scalar.
    pub fn dot(&self, x: &Var<T>, weights: &Tensor<T>) -> Res<Var<T>> {
        if x.value.shape() != weights.shape() {
            return Err(shape_err("dot of differently shaped tensors"));
        }
        let s = x
            .value
            .data()
            .iter()
            .zip(weights.data())
            .fold(T::zero(), |a, (&u, &v)| a + u * v);
        Ok(self.wrap(
            &[x.id],
            || Op::Dot {
                x: x.id,
                weights: weights.clone(),
            },
            Tensor::scalar(s),
        ))
    }

    /// Gradients of the scalar `root` with respect to every leaf.
    ///
    /// Consumes the tape so saved intermediates are released as the
    /// reverse sweep passes them.
    pub fn backward(self, root: &Var<T>) -> Res<Gradients<T>> {
        let root_id = root
            .id
            .ok_or_else(|| shape_err("backward from a value that was not recorded"))?;
        if root.value.len() != 1 {
            return Err(shape_err(format!("backward needs a scalar, got {:?}", root.shape())));
        }
        let mut nodes = self.nodes.into_inner();
        nodes.truncate(root_id + 1);
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root_id] = Some(Tensor::new(&nodes[root_id].shape, vec![T::one()])?);
        let mut out = Gradients::default();
        while let Some(node) = nodes.pop() {
            let id = nodes.len();
            let Some(g) = grads[id].take() else { continue };
            let mut send = |target: Option<usize>, t: Tensor<T>| {
                if let Some(tid) = target {
                    match &mut grads[tid] {
                        Some(acc) => acc.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
            };
            match node.op {
                Op::Leaf => {
                    out.by_id.insert(id, g);
                }
                Op::Conv { x, w, b, xv, wv, p } => {
                    let xd = dims(&xv)?;
                    let wd = dims(&wv)?;
                    let od = dims(&g)?;
                    if b.is_some() {
                        send(b, Tensor::new(&[wd[0]], conv::backward_bias(g.data(), od))?);
                    }
                    if w.is_some() {
                        let gw = conv::backward_weight(g.data(), xv.data(), xd, wd, p, od);
                        send(w, Tensor::new(&wd, gw)?);
                    }
                    if x.is_some() {
                        let gx = conv::backward_input(g.data(), xd, wv.data(), wd, p, od);
                        send(x, Tensor::new(&xd, gx)?);
                    }
                }
                Op::MaxPool { x, argmax, xd } => {
                    send(x, Tensor::new(&xd, pool::maxpool2_backward(g.data(), &argmax, xd))?);
                }
                Op::Upsample { x, xd, factor } => {
                    send(x, Tensor::new(&xd, pool::upsample_backward(g.data(), xd, factor))?);
                }
                Op::Relu { x, out: y } => {
                    let mut g = g;
                    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                        if yv <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    send(x, g);
                }
                Op::Concat { parts } => {
                    let [n, ctot, h, w] = dims(&g)?;
                    let hw = h * w;
                    let mut c0 = 0;
                    for (pid, c) in parts {
                        if pid.is_some() {
                            let mut data = Vec::with_capacity(n * c * hw);
                            for ni in 0..n {
                                let start = (ni * ctot + c0) * hw;
                                data.extend_from_slice(&g.data()[start..start + c * hw]);
                            }
                            send(pid, Tensor::new(&[n, c, h, w], data)?);
                        }
                        c0 += c;
                    }
                }
                Op::Add { a, b } => {
                    if a.is_some() && b.is_some() {
                        send(a, g.clone());
                    } else if a.is_some() {
                        send(a, g);
                        continue;
                    }
                    send(b, g);
                }
                Op::Gap { x, xd } => {
                    send(x, Tensor::new(&xd, pool::gap_backward(g.data(), xd))?);
                }
                Op::Broadcast { x } => {
                    let od = dims(&g)?;
                    send(x, Tensor::new(&[od[0], od[1], 1, 1], pool::broadcast_backward(g.data(), od))?);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xv,
                    gv,
                    mean,
                    invstd,
                    mode,
                } => {
                    let xd = dims(&xv)?;
                    let (gx, ggamma, gbeta) =
                        norm::backward(g.data(), xv.data(), xd, gv.data(), &mean, &invstd, mode);
                    send(gamma, Tensor::new(gv.shape(), ggamma)?);
                    send(beta, Tensor::new(gv.shape(), gbeta)?);
                    send(x, Tensor::new(&xd, gx)?);
                }
                Op::Nll { x, grad, shape } => {
                    let s = g.data()[0];
                    let scaled = grad.into_iter().map(|v| v * s).collect();
                    send(x, Tensor::new(&shape, scaled)?);
                }
                Op::Dot { x, weights } => {
                    let s = g.data()[0];
                    send(x, weights.map(|v| v * s));
                }
            }
        }
        Ok(out)
    }
}
