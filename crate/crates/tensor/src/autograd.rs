//! Reverse-mode differentiation over the recorded graph.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::conv::ConvGeom;
use crate::tensor::{enable_grad, no_grad, Tensor};

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Exp(Tensor),
    Square(Tensor),
    Sqrt(Tensor),
    RecipSafe(Tensor),
    PowScalar(Tensor, f64),
    LeakyRelu(Tensor, f64),
    Clamp(Tensor, f64, f64),
    SumTo(Tensor),
    BroadcastTo(Tensor),
    Reshape(Tensor),
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    Gather(Tensor, Rc<[usize]>),
    ScatterAdd(Tensor, Rc<[usize]>),
    Concat(Vec<Tensor>, usize),
    Conv(Tensor, Tensor, ConvGeom),
    ConvInputGrad(Tensor, Tensor, ConvGeom),
    ConvWeightGrad(Tensor, Tensor, ConvGeom),
}

fn mask_like(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(a.data().iter().map(|&x| f(x)).collect(), a.shape())
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![a, b],
            Conv(a, b, _) | ConvInputGrad(a, b, _) | ConvWeightGrad(a, b, _) => vec![a, b],
            Scale(a, _) | AddScalar(a) | Exp(a) | Square(a) | Sqrt(a) | RecipSafe(a) => vec![a],
            PowScalar(a, _) | LeakyRelu(a, _) | Clamp(a, _, _) => vec![a],
            SumTo(a) | BroadcastTo(a) | Reshape(a) | Transpose(a) => vec![a],
            Gather(a, _) | ScatterAdd(a, _) => vec![a],
            Concat(parts, _) => parts.iter().collect(),
        }
    }

    /// Vector-Jacobian products for upstream gradient `g`, computed only for
    /// the parents flagged in `want`.
    fn vjp(&self, out: &Tensor, g: &Tensor, want: &[bool]) -> Vec<Option<Tensor>> {
        use Op::*;
        let pick = |i: usize, f: &dyn Fn() -> Tensor| if want[i] { Some(f()) } else { None };
        match self {
            Add(a, b) => vec![pick(0, &|| g.sum_to(a.shape())), pick(1, &|| g.sum_to(b.shape()))],
            Sub(a, b) => vec![pick(0, &|| g.sum_to(a.shape())), pick(1, &|| g.neg().sum_to(b.shape()))],
            Mul(a, b) => vec![
                pick(0, &|| g.mul(b).sum_to(a.shape())),
                pick(1, &|| g.mul(a).sum_to(b.shape())),
            ],
            Scale(_, c) => vec![Some(g.scale(*c))],
            AddScalar(_) => vec![Some(g.clone())],
            Exp(_) => vec![Some(g.mul(out))],
            Square(a) => vec![Some(g.mul(a).scale(2.0))],
            Sqrt(_) => vec![Some(g.mul(&out.recip_safe()).scale(0.5))],
            RecipSafe(_) => vec![Some(g.mul(&out.square()).neg())],
            PowScalar(a, p) => vec![Some(g.mul(&a.powf(p - 1.0)).scale(*p))],
            LeakyRelu(a, s) => {
                let s = *s;
                vec![Some(g.mul(&mask_like(a, |x| if x > 0.0 { 1.0 } else { s })))]
            }
            Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                vec![Some(g.mul(&mask_like(a, |x| if x >= lo && x <= hi { 1.0 } else { 0.0 })))]
            }
            SumTo(a) => vec![Some(g.broadcast_to(a.shape()))],
            BroadcastTo(a) => vec![Some(g.sum_to(a.shape()))],
            Reshape(a) => vec![Some(g.reshape(a.shape()))],
            MatMul(a, b) => vec![pick(0, &|| g.matmul(&b.t())), pick(1, &|| a.t().matmul(g))],
            Transpose(_) => vec![Some(g.t())],
            Gather(a, idx) => vec![Some(g.scatter_add(idx.clone(), a.shape()))],
            ScatterAdd(a, idx) => vec![Some(g.gather(idx.clone(), a.shape()))],
            Concat(parts, axis) => {
                let mut start = 0;
                parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let len = p.shape()[*axis];
                        let piece = pick(i, &|| g.narrow(*axis, start, len));
                        start += len;
                        piece
                    })
                    .collect()
            }
            Conv(x, w, geom) => vec![
                pick(0, &|| g.conv2d_input_grad(w, x.shape(), *geom)),
                pick(1, &|| x.conv2d_weight_grad(g, w.shape(), *geom)),
            ],
            ConvInputGrad(gg, w, geom) => vec![
                pick(0, &|| g.conv2d(w, *geom)),
                pick(1, &|| g.conv2d_weight_grad(gg, w.shape(), *geom)),
            ],
            ConvWeightGrad(x, gg, geom) => vec![
                pick(0, &|| gg.conv2d_input_grad(g, x.shape(), *geom)),
                pick(1, &|| x.conv2d(g, *geom)),
            ],
        }
    }
}

/// Gradients keyed by tensor identity.
#[derive(Default)]
pub struct Gradients {
    map: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        self.map.get(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Parents-before-children order over the nodes that require gradients.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = t.op() {
            for p in op.parents() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

fn run(root: &Tensor, targets: Option<&HashSet<u64>>) -> HashMap<u64, Tensor> {
    if !root.requires_grad() {
        return HashMap::new();
    }
    let order = topo_order(root);
    let relevant: HashSet<u64> = match targets {
        None => order.iter().map(Tensor::id).collect(),
        Some(targets) => {
            let mut rel = HashSet::new();
            for t in &order {
                let hit = targets.contains(&t.id())
                    || t.op().is_some_and(|op| op.parents().iter().any(|p| rel.contains(&p.id())));
                if hit {
                    rel.insert(t.id());
                }
            }
            rel
        }
    };
    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    if !relevant.contains(&root.id()) {
        return grads;
    }
    grads.insert(root.id(), Tensor::ones(root.shape()));
    let mut leaves = HashMap::new();
    for t in order.iter().rev() {
        let Some(g) = grads.remove(&t.id()) else { continue };
        let keep = targets.map_or(t.is_leaf(), |ts| ts.contains(&t.id()));
        if let Some(op) = t.op() {
            let parents = op.parents();
            let wanted: Vec<bool> = parents
                .iter()
                .map(|p| p.requires_grad() && relevant.contains(&p.id()))
                .collect();
            if wanted.iter().any(|&w| w) {
                for (p, pg) in parents.iter().zip(op.vjp(t, &g, &wanted)) {
                    let Some(pg) = pg else { continue };
                    let acc = match grads.remove(&p.id()) {
                        Some(prev) => prev.add(&pg),
                        None => pg,
                    };
                    grads.insert(p.id(), acc);
                }
            }
        }
        if keep {
            leaves.insert(t.id(), g);
        }
    }
    leaves
}

/// Gradients of `root` with respect to every leaf that requires them.
/// No graph is recorded for the gradients themselves.
pub fn backward(root: &Tensor) -> Gradients {
    Gradients {
        map: no_grad(|| run(root, None)),
    }
}

/// Like [`backward`], but only propagates towards `inputs`.
pub fn backward_for(root: &Tensor, inputs: &[Tensor]) -> Gradients {
    let targets: HashSet<u64> = inputs.iter().map(Tensor::id).collect();
    Gradients {
        map: no_grad(|| run(root, Some(&targets))),
    }
}

/// Gradients of `root` with respect to `inputs`. With `create_graph` the
/// returned tensors are themselves differentiable.
pub fn grad(root: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Vec<Option<Tensor>> {
    let targets: HashSet<u64> = inputs.iter().map(|t| t.id()).collect();
    let mut map = if create_graph {
        enable_grad(|| run(root, Some(&targets)))
    } else {
        no_grad(|| run(root, Some(&targets)))
    };
    inputs.iter().map(|t| map.remove(&t.id())).collect()
}
