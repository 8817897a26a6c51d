use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{DiffError, Tensor};

/// Lower and upper clamp applied to probabilities entering [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: usize, w: usize, b: Option<usize> },
    Elu(usize),
    Sigmoid(usize),
    Exp(usize),
    Bce { p: usize, target: f64 },
    L1 { a: usize, b: usize },
    Concat { a: usize, b: usize },
    Tile(usize),
    Normalize(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    AddN(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records primitive applications in execution order for one backward pass.
///
/// Nodes are appended as operations run, so every operand precedes its
/// consumers and the reverse sweep is a plain backwards walk.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    names: Vec<(String, usize)>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    leaves: HashMap<usize, Tensor>,
    named: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.leaves.get(&var.idx)
    }

    /// Gradients of leaves registered through [`Tape::param`], keyed by name.
    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.named
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            names: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.idx].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    fn idx(&self, v: Var) -> Result<usize, DiffError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(DiffError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &'static str) -> Result<Var, DiffError> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op: name });
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var { tape: self.id, idx })
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var, DiffError> {
        self.push(Op::Leaf, value, requires_grad, "leaf")
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, DiffError> {
        self.leaf(value, false)
    }

    /// A differentiable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var, DiffError> {
        let v = self.leaf(value.clone(), true)?;
        self.names.push((name.to_string(), v.idx));
        Ok(v)
    }

    /// `W·x (+ b)` for a vector `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let (xv, wv) = (self.val(xi), self.val(wi));
        if wv.rank() != 2 || xv.rank() != 1 || wv.shape()[1] != xv.len() {
            return Err(DiffError::ShapeMismatch {
                op: "affine",
                detail: format!("weight {:?} cannot multiply input {:?}", wv.shape(), xv.shape()),
            });
        }
        let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
        if let Some(bi) = bi {
            if self.val(bi).shape() != [n_out] {
                return Err(DiffError::ShapeMismatch {
                    op: "affine",
                    detail: format!("bias {:?} for {} outputs", self.val(bi).shape(), n_out),
                });
            }
        }
        let (xd, wd) = (xv.data(), wv.data());
        let mut out = match bi {
            Some(bi) => self.val(bi).data().to_vec(),
            None => vec![0.0; n_out],
        };
        for (o, row) in out.iter_mut().zip(wd.chunks_exact(n_in)) {
            *o += row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
        }
        let rg = self.rg(xi) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        self.push(Op::Affine { x: xi, w: wi, b: bi }, Tensor::vector(out), rg, "affine")
    }

    fn unary(
        &mut self,
        x: Var,
        op: fn(usize) -> Op,
        name: &'static str,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var, DiffError> {
        let xi = self.idx(x)?;
        let xv = self.val(xi);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(xi);
        self.push(op(xi), t, rg, name)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Elu, "elu", |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Sigmoid, "sigmoid", sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Op::Exp, "exp", f64::exp)
    }

    /// Binary cross-entropy of a probability against a fixed target in `[0, 1]`.
    pub fn bce(&mut self, p: Var, target: f64) -> Result<Var, DiffError> {
        let pi = self.idx(p)?;
        let pv = self.val(pi);
        if pv.len() != 1 {
            return Err(DiffError::NotScalar {
                shape: pv.shape().to_vec(),
            });
        }
        let loss = bce(pv.item(), target);
        let rg = self.rg(pi);
        self.push(Op::Bce { p: pi, target }, Tensor::scalar(loss), rg, "bce")
    }

    /// Sum of absolute differences.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("l1_distance", ai, bi)?;
        let s = self
            .val(ai)
            .data()
            .iter()
            .zip(self.val(bi).data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        let rg = self.rg(ai) || self.rg(bi);
        self.push(Op::L1 { a: ai, b: bi }, Tensor::scalar(s), rg, "l1_distance")
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ai), self.val(bi));
        if av.rank() != 1 || bv.rank() != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "concat",
                detail: format!("operands must be vectors, got {:?} and {:?}", av.shape(), bv.shape()),
            });
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let rg = self.rg(ai) || self.rg(bi);
        self.push(Op::Concat { a: ai, b: bi }, Tensor::vector(data), rg, "concat")
    }

    /// Repeats a vector end to end and truncates to `len` entries.
    pub fn tile(&mut self, x: Var, len: usize) -> Result<Var, DiffError> {
        let xi = self.idx(x)?;
        let xv = self.val(xi);
        if xv.rank() != 1 || xv.is_empty() {
            return Err(DiffError::ShapeMismatch {
                op: "tile",
                detail: format!("operand must be a non-empty vector, got {:?}", xv.shape()),
            });
        }
        let data = xv.data().iter().copied().cycle().take(len).collect();
        let rg = self.rg(xi);
        self.push(Op::Tile(xi), Tensor::vector(data), rg, "tile")
    }

    /// `x / ‖x‖₂`.
    pub fn normalize(&mut self, x: Var) -> Result<Var, DiffError> {
        let xi = self.idx(x)?;
        let xv = self.val(xi);
        let n = xv.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let data = xv.data().iter().map(|v| v / n).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(xi);
        self.push(Op::Normalize(xi), t, rg, "normalize")
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<(), DiffError> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(DiffError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.val(a).shape(), self.val(b).shape()),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: fn(usize, usize) -> Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, DiffError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(name, ai, bi)?;
        let data = self
            .val(ai)
            .data()
            .iter()
            .zip(self.val(bi).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.val(ai).shape().to_vec(), data)?;
        let rg = self.rg(ai) || self.rg(bi);
        self.push(op(ai, bi), t, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        let xi = self.idx(x)?;
        let xv = self.val(xi);
        let data = xv.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(xi);
        self.push(Op::Scale(xi, c), t, rg, "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let xi = self.idx(x)?;
        let s = self.val(xi).data().iter().sum();
        let rg = self.rg(xi);
        self.push(Op::Sum(xi), Tensor::scalar(s), rg, "sum")
    }

    /// Elementwise sum of same-shaped operands.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var, DiffError> {
        let idxs = xs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>, _>>()?;
        let first = *idxs.first().ok_or(DiffError::ShapeMismatch {
            op: "add_n",
            detail: "no operands".into(),
        })?;
        let mut acc = self.val(first).data().to_vec();
        for &i in &idxs[1..] {
            self.same_shape("add_n", first, i)?;
            for (a, b) in acc.iter_mut().zip(self.val(i).data()) {
                *a += b;
            }
        }
        let t = Tensor::new(self.val(first).shape().to_vec(), acc)?;
        let rg = idxs.iter().any(|&i| self.rg(i));
        self.push(Op::AddN(idxs), t, rg, "add_n")
    }

    /// Mean of same-shaped operands.
    pub fn mean_n(&mut self, xs: &[Var]) -> Result<Var, DiffError> {
        let s = self.add_n(xs)?;
        self.scale(s, 1.0 / xs.len() as f64)
    }

    /// Reverse sweep from a scalar `loss`. A tape supports exactly one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, DiffError> {
        if self.consumed {
            return Err(DiffError::DoubleBackward);
        }
        let li = self.idx(loss).map_err(|_| DiffError::DetachedLoss)?;
        if !self.nodes[li].requires_grad {
            return Err(DiffError::DetachedLoss);
        }
        if self.nodes[li].value.len() != 1 {
            return Err(DiffError::NotScalar {
                shape: self.nodes[li].value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);
        let mut leaves = HashMap::new();

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if matches!(node.op, Op::Leaf) {
                    leaves.insert(i, Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    leaves.insert(i, Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.val(*x).data(), self.val(*w));
                    let n_in = wv.shape()[1];
                    if self.rg(*x) {
                        let dx = slot(&mut grads, *x, n_in);
                        for (gi, row) in g.iter().zip(wv.data().chunks_exact(n_in)) {
                            for (d, wij) in dx.iter_mut().zip(row) {
                                *d += gi * wij;
                            }
                        }
                    }
                    if self.rg(*w) {
                        let dw = slot(&mut grads, *w, wv.len());
                        for (gi, row) in g.iter().zip(dw.chunks_exact_mut(n_in)) {
                            for (d, xj) in row.iter_mut().zip(xv) {
                                *d += gi * xj;
                            }
                        }
                    }
                    if let Some(b) = b {
                        if self.rg(*b) {
                            add_into(slot(&mut grads, *b, g.len()), &g);
                        }
                    }
                }
                Op::Elu(x) => {
                    let xv = self.val(*x).data();
                    let d = slot(&mut grads, *x, xv.len());
                    for ((d, &xi), gi) in d.iter_mut().zip(xv).zip(&g) {
                        *d += gi * if xi > 0.0 { 1.0 } else { xi.exp() };
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let d = slot(&mut grads, *x, y.len());
                    for ((d, yi), gi) in d.iter_mut().zip(y).zip(&g) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::Exp(x) => {
                    let y = node.value.data();
                    let d = slot(&mut grads, *x, y.len());
                    for ((d, yi), gi) in d.iter_mut().zip(y).zip(&g) {
                        *d += gi * yi;
                    }
                }
                Op::Bce { p, target } => {
                    let pv = self.val(*p).item();
                    slot(&mut grads, *p, 1)[0] += g[0] * bce_grad(pv, *target);
                }
                Op::L1 { a, b } => {
                    let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                    let signs: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(x, y)| {
                            let d = x - y;
                            if d > 0.0 {
                                g[0]
                            } else if d < 0.0 {
                                -g[0]
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    if self.rg(*a) {
                        add_into(slot(&mut grads, *a, signs.len()), &signs);
                    }
                    if self.rg(*b) {
                        let d = slot(&mut grads, *b, signs.len());
                        for (d, s) in d.iter_mut().zip(&signs) {
                            *d -= s;
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let na = self.val(*a).len();
                    if self.rg(*a) {
                        add_into(slot(&mut grads, *a, na), &g[..na]);
                    }
                    if self.rg(*b) {
                        let nb = self.val(*b).len();
                        add_into(slot(&mut grads, *b, nb), &g[na..]);
                    }
                }
                Op::Tile(x) => {
                    let k = self.val(*x).len();
                    let d = slot(&mut grads, *x, k);
                    for (j, gi) in g.iter().enumerate() {
                        d[j % k] += gi;
                    }
                }
                Op::Normalize(x) => {
                    let xv = self.val(*x).data();
                    let n = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let y = node.value.data();
                    let yg: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                    let d = slot(&mut grads, *x, y.len());
                    for ((d, yi), gi) in d.iter_mut().zip(y).zip(&g) {
                        *d += (gi - yi * yg) / n;
                    }
                }
                Op::Add(a, b) => {
                    for o in [*a, *b] {
                        if self.rg(o) {
                            add_into(slot(&mut grads, o, g.len()), &g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let bv = self.nodes[b].value.data();
                        let d = slot(&mut grads, a, g.len());
                        for ((d, gi), bi) in d.iter_mut().zip(&g).zip(bv) {
                            *d += gi * bi;
                        }
                    }
                    if self.rg(b) {
                        let av = self.nodes[a].value.data();
                        let d = slot(&mut grads, b, g.len());
                        for ((d, gi), ai) in d.iter_mut().zip(&g).zip(av) {
                            *d += gi * ai;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let d = slot(&mut grads, *x, g.len());
                    for (d, gi) in d.iter_mut().zip(&g) {
                        *d += gi * c;
                    }
                }
                Op::Sum(x) => {
                    let n = self.val(*x).len();
                    for d in slot(&mut grads, *x, n).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::AddN(xs) => {
                    for &o in xs {
                        if self.rg(o) {
                            add_into(slot(&mut grads, o, g.len()), &g);
                        }
                    }
                }
            }
        }

        // Leaves after the loss never received a gradient.
        for (i, node) in self.nodes.iter().enumerate().skip(li + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves.insert(i, Tensor::zeros(node.value.shape()));
            }
        }
        let named = self
            .names
            .iter()
            .map(|(name, i)| (name.clone(), leaves[i].clone()))
            .collect();
        Ok(Gradients {
            tape: self.id,
            leaves,
            named,
        })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Largest `f64` below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

/// `−[c ln p + (1 − c) ln(1 − p)]` with `p` clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce(p: f64, target: f64) -> f64 {
    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln())
}

/// Derivative of [`bce`] in `p`; zero where the clamp is active.
fn bce_grad(p: f64, target: f64) -> f64 {
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
        return 0.0;
    }
    (p - target) / (p * (1.0 - p))
}
