//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns the
//! gradient of that scalar with respect to every node that requires one.
//! Tapes are cheap and meant to be rebuilt for every forward pass.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use crate::autodiff::kernels;
use crate::autodiff::params::{ParamId, ParamSet};
use crate::autodiff::sparse::SparseMatrix;
use crate::autodiff::special::{digamma, ln_gamma, trigamma};
use crate::autodiff::tensor::Tensor;
use crate::error::{MgmError, Result};
use crate::par;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Broadcast(usize),
    Affine(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    SpMM(Arc<SparseMatrix>, usize),
    Relu(usize),
    Elu(usize),
    Exp(usize),
    Ln { x: usize, floor: f64 },
    Softplus(usize),
    Square(usize),
    Digamma(usize),
    Sum(usize),
    SumRows(usize),
    Softmax { x: usize, mask: Option<Rc<Vec<bool>>> },
    LogSoftmax { x: usize, mask: Option<Rc<Vec<bool>>> },
    NormalizeRows { x: usize, norms: Vec<f64> },
    GatherRows(usize, Rc<Vec<usize>>),
    ConcatCols(usize, usize),
    SliceCols { x: usize, start: usize },
    CrossEntropy { logits: usize, targets: Rc<Tensor>, mask: Rc<Vec<bool>>, probs: Tensor },
    KlDirichlet { lambda: usize, alpha: Rc<Vec<f64>> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for a single forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(ParamId, usize)>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient (used by gradient checks).
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a parameter. When `frozen` it enters as a constant and its
    /// gradient is reported as exactly zero.
    pub fn param(&self, set: &ParamSet, id: ParamId, frozen: bool) -> Var<'_> {
        let value = set.get(id).tensor.clone();
        let mut value = value;
        value.clear_grad();
        if frozen {
            return self.constant(value);
        }
        let v = self.variable(value);
        self.params.borrow_mut().push((id, v.id));
        v
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(MgmError::Shape(format!(
                "backward needs a scalar output, got {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[output.id] = Some(vec![1.0]);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut by_param: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
        for &(pid, nid) in self.params.borrow().iter() {
            if nid > output.id {
                continue;
            }
            if let Some(g) = &grads[nid] {
                match by_param.get_mut(&pid) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => {
                        by_param.insert(pid, g.clone());
                    }
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params: by_param,
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contribution: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Vec<f64> {
    par::map_indexed(a.len(), |i| f(a[i], b[i]))
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| Rc::clone(&nodes[id].value);
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, zip_map(g, bv.data(), |g, b| g * b));
            accumulate(grads, nodes, *b, zip_map(g, av.data(), |g, a| g * a));
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, zip_map(g, bv.data(), |g, b| g / b));
            let (ad, bd) = (av.data(), bv.data());
            let gb = par::map_indexed(g.len(), |i| -g[i] * ad[i] / (bd[i] * bd[i]));
            accumulate(grads, nodes, *b, gb);
        }
        Op::AddRow(a, r) => {
            accumulate(grads, nodes, *a, g.to_vec());
            let cols = y.cols();
            let mut gr = vec![0.0; cols];
            for row in g.chunks(cols) {
                gr.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            accumulate(grads, nodes, *r, gr);
        }
        Op::Broadcast(s) => {
            accumulate(grads, nodes, *s, vec![g.iter().sum()]);
        }
        Op::Affine(a, scale) => {
            accumulate(grads, nodes, *a, g.iter().map(|v| v * scale).collect());
        }
        Op::MatMul(a, b) => {
            let gt = Tensor::matrix(y.rows(), y.cols(), g.to_vec());
            if nodes[*a].requires_grad {
                let bv = val(*b);
                accumulate(grads, nodes, *a, kernels::matmul_bt(&gt, &bv).into_data());
            }
            if nodes[*b].requires_grad {
                let av = val(*a);
                accumulate(grads, nodes, *b, kernels::matmul_at(&av, &gt).into_data());
            }
        }
        Op::Transpose(a) => {
            let gt = Tensor::matrix(y.rows(), y.cols(), g.to_vec());
            accumulate(grads, nodes, *a, gt.transpose().into_data());
        }
        Op::SpMM(adj, x) => {
            let gt = Tensor::matrix(y.rows(), y.cols(), g.to_vec());
            let gx = adj
                .transpose_matmul_dense(&gt)
                .expect("shapes validated in forward");
            accumulate(grads, nodes, *x, gx.into_data());
        }
        Op::Relu(a) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, zip_map(g, av.data(), |g, x| if x > 0.0 { g } else { 0.0 }));
        }
        Op::Elu(a) => {
            let av = val(*a);
            let (ad, yd) = (av.data(), y.data());
            let ga = par::map_indexed(g.len(), |i| {
                if ad[i] > 0.0 {
                    g[i]
                } else {
                    g[i] * (yd[i] + 1.0)
                }
            });
            accumulate(grads, nodes, *a, ga);
        }
        Op::Exp(a) => {
            accumulate(grads, nodes, *a, zip_map(g, y.data(), |g, y| g * y));
        }
        Op::Ln { x, floor } => {
            let xv = val(*x);
            let floor = *floor;
            accumulate(
                grads,
                nodes,
                *x,
                zip_map(g, xv.data(), move |g, x| if x > floor { g / x } else { 0.0 }),
            );
        }
        Op::Softplus(a) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, zip_map(g, av.data(), |g, x| g * sigmoid(x)));
        }
        Op::Square(a) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, zip_map(g, av.data(), |g, x| 2.0 * g * x));
        }
        Op::Digamma(a) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, zip_map(g, av.data(), |g, x| g * trigamma(x)));
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.len();
            accumulate(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::SumRows(a) => {
            let av = val(*a);
            let c = av.cols();
            let ga = par::map_indexed(av.len(), |i| g[i / c]);
            accumulate(grads, nodes, *a, ga);
        }
        Op::Softmax { x, mask } => {
            let mask = mask.as_deref().map(Vec::as_slice);
            let c = y.cols();
            let yd = y.data();
            let mut ga = vec![0.0; y.len()];
            par::for_each_row(&mut ga, c, |i, row| {
                let yr = &yd[i * c..(i + 1) * c];
                let gr = &g[i * c..(i + 1) * c];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    if mask.is_none_or(|m| m[i * c + j]) {
                        row[j] = yr[j] * (gr[j] - dot);
                    }
                }
            });
            accumulate(grads, nodes, *x, ga);
        }
        Op::LogSoftmax { x, mask } => {
            let mask = mask.as_deref().map(Vec::as_slice);
            let c = y.cols();
            let yd = y.data();
            let mut ga = vec![0.0; y.len()];
            par::for_each_row(&mut ga, c, |i, row| {
                let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
                let gr = &g[i * c..(i + 1) * c];
                let gsum: f64 = (0..c).filter(|&j| keep(j)).map(|j| gr[j]).sum();
                for j in 0..c {
                    if keep(j) {
                        row[j] = gr[j] - yd[i * c + j].exp() * gsum;
                    }
                }
            });
            accumulate(grads, nodes, *x, ga);
        }
        Op::NormalizeRows { x, norms } => {
            let c = y.cols();
            let yd = y.data();
            let mut ga = vec![0.0; y.len()];
            par::for_each_row(&mut ga, c, |i, row| {
                let yr = &yd[i * c..(i + 1) * c];
                let gr = &g[i * c..(i + 1) * c];
                let n = norms[i];
                if n <= kernels::NORM_FLOOR {
                    for j in 0..c {
                        row[j] = gr[j] / n;
                    }
                    return;
                }
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    row[j] = (gr[j] - yr[j] * dot) / n;
                }
            });
            accumulate(grads, nodes, *x, ga);
        }
        Op::GatherRows(a, idx) => {
            let av = val(*a);
            let c = av.cols();
            let mut ga = vec![0.0; av.len()];
            for (k, &r) in idx.iter().enumerate() {
                for j in 0..c {
                    ga[r * c + j] += g[k * c + j];
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::ConcatCols(a, b) => {
            let (pa, pb) = (nodes[*a].value.cols(), nodes[*b].value.cols());
            let c = pa + pb;
            let mut ga = Vec::with_capacity(y.rows() * pa);
            let mut gb = Vec::with_capacity(y.rows() * pb);
            for row in g.chunks(c) {
                ga.extend_from_slice(&row[..pa]);
                gb.extend_from_slice(&row[pa..]);
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::SliceCols { x, start } => {
            let xv = val(*x);
            let (c, w) = (xv.cols(), y.cols());
            let mut gx = vec![0.0; xv.len()];
            for (i, row) in g.chunks(w).enumerate() {
                gx[i * c + start..i * c + start + w].copy_from_slice(row);
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
            probs,
        } => {
            let c = probs.cols();
            let mask: &[bool] = mask;
            let count = mask.iter().filter(|&&m| m).count() as f64;
            let scale = g[0] / count;
            let (pd, td) = (probs.data(), targets.data());
            let mut gl = vec![0.0; probs.len()];
            par::for_each_row(&mut gl, c, |i, row| {
                if !mask[i] {
                    return;
                }
                let t = &td[i * c..(i + 1) * c];
                let tsum: f64 = t.iter().sum();
                for j in 0..c {
                    row[j] = scale * (pd[i * c + j] * tsum - t[j]);
                }
            });
            accumulate(grads, nodes, *logits, gl);
        }
        Op::KlDirichlet { lambda, alpha } => {
            let lv = val(*lambda);
            let l0: f64 = lv.data().iter().sum();
            let a0: f64 = alpha.iter().sum();
            let shared = (l0 - a0) * trigamma(l0);
            let gl = lv
                .data()
                .iter()
                .zip(alpha.iter())
                .map(|(l, a)| g[0] * ((l - a) * trigamma(*l) - shared))
                .collect();
            accumulate(grads, nodes, *lambda, gl);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Closed-form `KL(Dir(λ) ‖ Dir(α))`.
pub fn kl_dirichlet_value(lambda: &[f64], alpha: &[f64]) -> f64 {
    let l0: f64 = lambda.iter().sum();
    let a0: f64 = alpha.iter().sum();
    let psi0 = digamma(l0);
    let mut kl = ln_gamma(l0) - ln_gamma(a0);
    for (l, a) in lambda.iter().zip(alpha) {
        kl += ln_gamma(*a) - ln_gamma(*l) + (l - a) * (digamma(*l) - psi0);
    }
    kl
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if it influenced the output.
    pub fn wrt(&self, var: Var<'_>) -> Option<&[f64]> {
        self.nodes.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Writes every parameter's gradient slot; parameters that did not take
    /// part (or were frozen) receive exact zeros.
    pub fn write_to(&self, set: &mut ParamSet) {
        for (id, p) in set.iter_mut() {
            let g = self
                .params
                .get(&id)
                .cloned()
                .unwrap_or_else(|| vec![0.0; p.tensor.len()]);
            p.tensor.set_grad(g).expect("gradient matches parameter shape");
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MgmError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn unary(&self, f: impl Fn(f64) -> f64 + Sync + Send, op: Op) -> Var<'t> {
        let x = self.value();
        let xd = x.data();
        let out = par::map_indexed(x.len(), |i| f(xd[i]));
        self.tape
            .push(Tensor::matrix(x.rows(), x.cols(), out), op, self.requires_grad())
    }

    fn binary(
        &self,
        other: Var<'t>,
        what: &str,
        f: impl Fn(f64, f64) -> f64 + Sync + Send,
        op: Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, what)?;
        let out = zip_map(a.data(), b.data(), f);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Tensor::matrix(a.rows(), a.cols(), out), op, rg))
    }

    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    /// Adds a `1×n` row to every row of an `m×n` value.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let (a, r) = (self.value(), row.value());
        if r.rows() != 1 || r.cols() != a.cols() {
            return Err(MgmError::Shape(format!(
                "add_row: {:?} + row {:?}",
                a.shape(),
                r.shape()
            )));
        }
        let c = a.cols();
        let (ad, rd) = (a.data(), r.data());
        let out = par::map_indexed(a.len(), |i| ad[i] + rd[i % c]);
        let rg = self.requires_grad() || row.requires_grad();
        Ok(self
            .tape
            .push(Tensor::matrix(a.rows(), c, out), Op::AddRow(self.id, row.id), rg))
    }

    /// Expands a `1×1` value to `rows×cols`.
    pub fn broadcast(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let s = self.value();
        if s.len() != 1 {
            return Err(MgmError::Shape(format!("broadcast of {:?}", s.shape())));
        }
        Ok(self.tape.push(
            Tensor::filled(rows, cols, s.item()),
            Op::Broadcast(self.id),
            self.requires_grad(),
        ))
    }

    /// `scale · x + shift` with constant coefficients.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(move |x| scale * x + shift, Op::Affine(self.id, scale))
    }

    pub fn scale(&self, scale: f64) -> Var<'t> {
        self.affine(scale, 0.0)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.cols() != b.rows() {
            return Err(MgmError::Shape(format!(
                "matmul: {:?} × {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self
            .tape
            .push(kernels::matmul(&a, &b), Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(&self) -> Var<'t> {
        let t = self.value().transpose();
        self.tape.push(t, Op::Transpose(self.id), self.requires_grad())
    }

    /// Sparse-dense product `adj × self`; differentiable in `self` only.
    pub fn spmm(&self, adj: &Arc<SparseMatrix>) -> Result<Var<'t>> {
        let out = adj.matmul_dense(&self.value())?;
        Ok(self
            .tape
            .push(out, Op::SpMM(Arc::clone(adj), self.id), self.requires_grad()))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn elu(&self) -> Var<'t> {
        self.unary(|x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(f64::ln, Op::Ln { x: self.id, floor: f64::NEG_INFINITY })
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floor(&self, floor: f64) -> Var<'t> {
        self.unary(move |x| x.max(floor).ln(), Op::Ln { x: self.id, floor })
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(softplus, Op::Softplus(self.id))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(|x| x * x, Op::Square(self.id))
    }

    pub fn digamma(&self) -> Var<'t> {
        self.unary(digamma, Op::Digamma(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    /// `m×n → m×1`.
    pub fn sum_rows(&self) -> Var<'t> {
        let x = self.value();
        let out = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
        self.tape
            .push(Tensor::matrix(x.rows(), 1, out), Op::SumRows(self.id), self.requires_grad())
    }

    fn check_mask(&self, mask: &Option<Rc<Vec<bool>>>) -> Result<()> {
        if let Some(m) = mask {
            if m.len() != self.value().len() {
                return Err(MgmError::Shape(format!(
                    "mask of length {} for {:?}",
                    m.len(),
                    self.shape()
                )));
            }
        }
        Ok(())
    }

    /// Row softmax; `mask[i]` false pins entry `i` to probability 0.
    pub fn softmax_rows(&self, mask: Option<Rc<Vec<bool>>>) -> Result<Var<'t>> {
        self.check_mask(&mask)?;
        let out = kernels::softmax_rows(&self.value(), mask.as_deref().map(Vec::as_slice));
        Ok(self
            .tape
            .push(out, Op::Softmax { x: self.id, mask }, self.requires_grad()))
    }

    /// Row log-softmax; masked entries are reported as 0.
    pub fn log_softmax_rows(&self, mask: Option<Rc<Vec<bool>>>) -> Result<Var<'t>> {
        self.check_mask(&mask)?;
        let out = kernels::log_softmax_rows(&self.value(), mask.as_deref().map(Vec::as_slice));
        Ok(self
            .tape
            .push(out, Op::LogSoftmax { x: self.id, mask }, self.requires_grad()))
    }

    pub fn normalize_rows(&self) -> Var<'t> {
        let (out, norms) = kernels::normalize_rows(&self.value());
        self.tape.push(
            out,
            Op::NormalizeRows { x: self.id, norms },
            self.requires_grad(),
        )
    }

    pub fn gather_rows(&self, idx: Rc<Vec<usize>>) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(MgmError::Shape(format!("row {bad} of {:?}", x.shape())));
        }
        let out = x.select_rows(&idx);
        Ok(self
            .tape
            .push(out, Op::GatherRows(self.id, idx), self.requires_grad()))
    }

    pub fn concat_cols(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.rows() != b.rows() {
            return Err(MgmError::Shape(format!(
                "concat: {:?} ‖ {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = Vec::with_capacity(a.len() + b.len());
        for i in 0..a.rows() {
            out.extend_from_slice(a.row(i));
            out.extend_from_slice(b.row(i));
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            Tensor::matrix(a.rows(), a.cols() + b.cols(), out),
            Op::ConcatCols(self.id, other.id),
            rg,
        ))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        if start >= end || end > x.cols() {
            return Err(MgmError::Shape(format!(
                "slice {start}..{end} of {:?}",
                x.shape()
            )));
        }
        let mut out = Vec::with_capacity(x.rows() * (end - start));
        for i in 0..x.rows() {
            out.extend_from_slice(&x.row(i)[start..end]);
        }
        Ok(self.tape.push(
            Tensor::matrix(x.rows(), end - start, out),
            Op::SliceCols { x: self.id, start },
            self.requires_grad(),
        ))
    }

    /// Mean cross-entropy over rows with `mask[i]` set, computed from
    /// max-shifted logits. `targets` rows are (usually one-hot) distributions.
    pub fn softmax_cross_entropy(&self, targets: &Tensor, mask: &[bool]) -> Result<Var<'t>> {
        let logits = self.value();
        if targets.shape() != logits.shape() || mask.len() != logits.rows() {
            return Err(MgmError::Shape(format!(
                "cross-entropy: logits {:?}, targets {:?}, mask {}",
                logits.shape(),
                targets.shape(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(MgmError::Precondition(
                "cross-entropy needs at least one masked-in row".into(),
            ));
        }
        let logp = kernels::log_softmax_rows(&logits, None);
        let mut loss = 0.0;
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            loss -= targets
                .row(i)
                .iter()
                .zip(logp.row(i))
                .map(|(t, lp)| if *t == 0.0 { 0.0 } else { t * lp })
                .sum::<f64>();
        }
        loss /= count as f64;
        let probs = kernels::softmax_rows(&logits, None);
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: Rc::new(targets.clone()),
                mask: Rc::new(mask.to_vec()),
                probs,
            },
            self.requires_grad(),
        ))
    }

    /// `KL(Dir(self) ‖ Dir(alpha))` for a positive `1×M` row `self`.
    pub fn kl_dirichlet(&self, alpha: Rc<Vec<f64>>) -> Result<Var<'t>> {
        let l = self.value();
        if l.len() != alpha.len() {
            return Err(MgmError::Shape(format!(
                "kl_dirichlet: λ has {} entries, α has {}",
                l.len(),
                alpha.len()
            )));
        }
        let kl = kl_dirichlet_value(l.data(), &alpha);
        Ok(self.tape.push(
            Tensor::scalar(kl),
            Op::KlDirichlet { lambda: self.id, alpha },
            self.requires_grad(),
        ))
    }
}
