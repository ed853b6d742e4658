//! Reverse-mode differentiation over 2-D tensors.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the nodes in reverse and returns the gradient of a scalar node
//! with respect to every node, parameters included.

use super::{gemm, NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    PoolRows {
        table: Var,
        groups: Vec<Vec<usize>>,
        mean: bool,
    },
    GatherFlat(Var, Vec<Vec<usize>>),
    Slice {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowDot(Var, Var),
    RelMix(Var, Var),
    Dropout(Var, Vec<f64>),
    CrossEntropy {
        logits: Var,
        grad: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        shape2(&self.nodes[v.0].value)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        let (r, c) = shape2(&t);
        let t = t.reshape(&[r, c]).expect("same element count");
        self.push(t, Op::Input)
    }

    /// Leaf bound to parameter slot `id`; its gradient is reported by
    /// [`Graph::param_grads`].
    pub fn param(&mut self, id: usize, t: Tensor) -> Var {
        let (r, c) = shape2(&t);
        let t = t.reshape(&[r, c]).expect("same element count");
        self.push(t, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        assert_eq!(k, k2, "matmul_t inner dimensions");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), true, &mut out, false);
        self.push(Tensor::matrix(m, n, out), Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shapes");
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.push(Tensor::matrix(r, c, out), Op::Add(a, b))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(row), (1, c), "add_row shapes");
        let b = self.data(row);
        let out = self
            .data(a)
            .chunks(c)
            .flat_map(|x| x.iter().zip(b).map(|(p, q)| p + q))
            .collect();
        self.push(Tensor::matrix(r, c, out), Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shapes");
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        self.push(Tensor::matrix(r, c, out), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|x| x * s).collect();
        self.push(Tensor::matrix(r, c, out), Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.push(Tensor::matrix(r, c, out), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|x| x.tanh()).collect();
        self.push(Tensor::matrix(r, c, out), Op::Tanh(a))
    }

    /// Row-wise softmax. `mask[i * cols + j] == false` excludes position j
    /// from row i (its probability is exactly zero).
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(a);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(NumericsError::Shape("softmax mask size".into()));
            }
        }
        let x = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let allowed = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let max = (0..c)
                .filter(|&j| allowed(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::AllMasked(i));
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for j in 0..c {
                if allowed(j) {
                    o[j] = (row[j] - max).exp();
                    sum += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::Softmax(a)))
    }

    /// Layer normalization over each row with learned 1×c gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(gamma), (1, c));
        assert_eq!(self.dims(beta), (1, c));
        let xs = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row `k` of the output is row `idx[k]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let (t, c) = self.dims(table);
        let src = self.data(table);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < t, "gather index {i} out of {t}");
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let n = idx.len();
        self.push(Tensor::matrix(n, c, out), Op::GatherRows(table, idx))
    }

    /// Row `k` of the output is the sum (or mean) of the `table` rows listed
    /// in `groups[k]`.
    pub fn pool_rows(&mut self, table: Var, groups: Vec<Vec<usize>>, mean: bool) -> Var {
        let (t, c) = self.dims(table);
        let src = self.data(table);
        let mut out = vec![0.0; groups.len() * c];
        for (k, grp) in groups.iter().enumerate() {
            assert!(!grp.is_empty(), "empty pooling group");
            let o = &mut out[k * c..(k + 1) * c];
            for &i in grp {
                assert!(i < t, "pool index {i} out of {t}");
                for (a, b) in o.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *a += b;
                }
            }
            if mean {
                let inv = grp.len() as f64;
                o.iter_mut().for_each(|v| *v /= inv);
            }
        }
        let n = groups.len();
        self.push(Tensor::matrix(n, c, out), Op::PoolRows { table, groups, mean })
    }

    /// Row `k` of the output concatenates the `table` rows in `groups[k]`;
    /// all groups must have the same length.
    pub fn gather_flat(&mut self, table: Var, groups: Vec<Vec<usize>>) -> Var {
        let (t, c) = self.dims(table);
        let w = groups.first().map_or(0, Vec::len);
        let src = self.data(table);
        let mut out = Vec::with_capacity(groups.len() * w * c);
        for grp in &groups {
            assert_eq!(grp.len(), w, "ragged gather_flat groups");
            for &i in grp {
                assert!(i < t);
                out.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
        }
        let n = groups.len();
        self.push(Tensor::matrix(n, w * c, out), Op::GatherFlat(table, groups))
    }

    pub fn slice(&mut self, x: Var, r0: usize, nr: usize, c0: usize, nc: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(r0 + nr <= r && c0 + nc <= c, "slice out of bounds");
        let src = self.data(x);
        let mut out = Vec::with_capacity(nr * nc);
        for i in r0..r0 + nr {
            out.extend_from_slice(&src[i * c + c0..i * c + c0 + nc]);
        }
        self.push(Tensor::matrix(nr, nc, out), Op::Slice { x, r0, c0 })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.dims(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            assert_eq!(pr, r, "concat_cols rows");
            let src = self.data(p);
            for i in 0..r {
                out[i * total + off..i * total + off + pc].copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        self.push(Tensor::matrix(r, total, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.dims(parts[0]).1;
        let mut out = Vec::new();
        for &p in parts {
            assert_eq!(self.dims(p).1, c, "concat_rows cols");
            out.extend_from_slice(self.data(p));
        }
        let r = out.len() / c.max(1);
        self.push(Tensor::matrix(r, c, out), Op::ConcatRows(parts.to_vec()))
    }

    /// `out[i][j] = q[i] · rel[i * m + j]` for q (n×d), rel (n·m × d).
    pub fn row_dot(&mut self, q: Var, rel: Var) -> Var {
        let ((n, d), (nm, d2)) = (self.dims(q), self.dims(rel));
        assert_eq!(d, d2);
        assert!(n > 0 && nm % n == 0);
        let m = nm / n;
        let (qs, rs) = (self.data(q), self.data(rel));
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let qi = &qs[i * d..(i + 1) * d];
            for j in 0..m {
                let rij = &rs[(i * m + j) * d..(i * m + j + 1) * d];
                out[i * m + j] = qi.iter().zip(rij).map(|(a, b)| a * b).sum();
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::RowDot(q, rel))
    }

    /// `out[i] = Σ_j alpha[i][j] · rel[i * m + j]` for alpha (n×m).
    pub fn rel_mix(&mut self, alpha: Var, rel: Var) -> Var {
        let ((n, m), (nm, d)) = (self.dims(alpha), self.dims(rel));
        assert_eq!(n * m, nm);
        let (al, rs) = (self.data(alpha), self.data(rel));
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..m {
                let a = al[i * m + j];
                let rij = &rs[(i * m + j) * d..(i * m + j + 1) * d];
                for (x, r) in o.iter_mut().zip(rij) {
                    *x += a * r;
                }
            }
        }
        self.push(Tensor::matrix(n, d, out), Op::RelMix(alpha, rel))
    }

    /// Multiplies by a fixed mask (already scaled by 1/(1-p)).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(mask.len(), r * c);
        let out = self.data(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(Tensor::matrix(r, c, out), Op::Dropout(x, mask))
    }

    /// Label-smoothed cross entropy averaged over rows whose target is
    /// `Some`. The smoothed target puts `1 - smoothing` on the gold class and
    /// spreads `smoothing` uniformly over all classes.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
    ) -> Result<Var, NumericsError> {
        let (r, v) = self.dims(logits);
        if targets.len() != r {
            return Err(NumericsError::Shape("one target per logits row".into()));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(NumericsError::Empty);
        }
        let x = self.data(logits);
        let mut grad = vec![0.0; r * v];
        let mut loss = 0.0;
        let off = smoothing / v as f64;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= v {
                return Err(NumericsError::TargetOutOfRange { id: t, classes: v });
            }
            let row = &x[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let g = &mut grad[i * v..(i + 1) * v];
            for j in 0..v {
                let logp = row[j] - lse;
                let q = off + if j == t { 1.0 - smoothing } else { 0.0 };
                loss -= q * logp;
                g[j] = (logp.exp() - q) / count as f64;
            }
        }
        loss /= count as f64;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, grad }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Gradients of the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let keep = matches!(node.op, Op::Input | Op::Param(_));
            let Some(g) = (if keep { grads[i].clone() } else { grads[i].take() }) else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Grads { grads }
    }

    /// Sums the gradients of every leaf bound to each parameter slot.
    pub fn param_grads(&self, grads: &Grads, slots: usize) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = (0..slots).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                match &mut out[*id] {
                    Some(t) => t.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(*a), self.dims(*b));
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, gd, false, val(*b).data(), true, &mut da, false);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, val(*a).data(), true, gd, false, &mut db, false);
                acc(grads, *a, Tensor::matrix(m, k, da));
                acc(grads, *b, Tensor::matrix(k, n, db));
            }
            Op::MatMulT(a, b) => {
                let ((m, k), (n, _)) = (self.dims(*a), self.dims(*b));
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, gd, false, val(*b).data(), false, &mut da, false);
                let mut db = vec![0.0; n * k];
                gemm(n, m, k, gd, true, val(*a).data(), false, &mut db, false);
                acc(grads, *a, Tensor::matrix(m, k, da));
                acc(grads, *b, Tensor::matrix(n, k, db));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                let c = self.dims(*a).1;
                let mut db = vec![0.0; c];
                for chunk in gd.chunks(c) {
                    for (x, y) in db.iter_mut().zip(chunk) {
                        *x += y;
                    }
                }
                acc(grads, *a, g.clone());
                acc(grads, *row, Tensor::matrix(1, c, db));
            }
            Op::Mul(a, b) => {
                let (r, c) = self.dims(*a);
                let da = gd.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                let db = gd.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                acc(grads, *a, Tensor::matrix(r, c, da));
                acc(grads, *b, Tensor::matrix(r, c, db));
            }
            Op::Scale(a, s) => {
                let (r, c) = self.dims(*a);
                acc(grads, *a, Tensor::matrix(r, c, gd.iter().map(|x| x * s).collect()));
            }
            Op::Relu(a) => {
                let (r, c) = self.dims(*a);
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                    .collect();
                acc(grads, *a, Tensor::matrix(r, c, d));
            }
            Op::Tanh(a) => {
                let (r, c) = self.dims(*a);
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect();
                acc(grads, *a, Tensor::matrix(r, c, d));
            }
            Op::Softmax(a) => {
                let (r, c) = self.dims(*a);
                let y = node.value.data();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &gd[i * c..(i + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        d[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(grads, *a, Tensor::matrix(r, c, d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = self.dims(*x);
                let gam = val(*gamma).data();
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let gr = &gd[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        let dh = gr[j] * gam[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                    let nf = c as f64;
                    for j in 0..c {
                        let dh = gr[j] * gam[j];
                        dx[i * c + j] = inv_std[i] * (dh - s1 / nf - hr[j] * s2 / nf);
                    }
                }
                acc(grads, *x, Tensor::matrix(r, c, dx));
                acc(grads, *gamma, Tensor::matrix(1, c, dg));
                acc(grads, *beta, Tensor::matrix(1, c, db));
            }
            Op::GatherRows(table, idx) => {
                let (t, c) = self.dims(*table);
                let mut d = vec![0.0; t * c];
                for (k, &i) in idx.iter().enumerate() {
                    for (x, y) in d[i * c..(i + 1) * c].iter_mut().zip(&gd[k * c..(k + 1) * c]) {
                        *x += y;
                    }
                }
                acc(grads, *table, Tensor::matrix(t, c, d));
            }
            Op::PoolRows { table, groups, mean } => {
                let (t, c) = self.dims(*table);
                let mut d = vec![0.0; t * c];
                for (k, grp) in groups.iter().enumerate() {
                    let w = if *mean { 1.0 / grp.len() as f64 } else { 1.0 };
                    for &i in grp {
                        for (x, y) in d[i * c..(i + 1) * c].iter_mut().zip(&gd[k * c..(k + 1) * c]) {
                            *x += w * y;
                        }
                    }
                }
                acc(grads, *table, Tensor::matrix(t, c, d));
            }
            Op::GatherFlat(table, groups) => {
                let (t, c) = self.dims(*table);
                let cols = g.cols();
                let mut d = vec![0.0; t * c];
                for (k, grp) in groups.iter().enumerate() {
                    for (p, &i) in grp.iter().enumerate() {
                        let src = &gd[k * cols + p * c..k * cols + (p + 1) * c];
                        for (x, y) in d[i * c..(i + 1) * c].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
                acc(grads, *table, Tensor::matrix(t, c, d));
            }
            Op::Slice { x, r0, c0 } => {
                let (r, c) = self.dims(*x);
                let (nr, nc) = (g.rows(), g.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..nr {
                    d[(r0 + i) * c + c0..(r0 + i) * c + c0 + nc].copy_from_slice(&gd[i * nc..(i + 1) * nc]);
                }
                acc(grads, *x, Tensor::matrix(r, c, d));
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let r = g.rows();
                let mut off = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    let mut d = Vec::with_capacity(r * pc);
                    for i in 0..r {
                        d.extend_from_slice(&gd[i * total + off..i * total + off + pc]);
                    }
                    acc(grads, p, Tensor::matrix(r, pc, d));
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    acc(grads, p, Tensor::matrix(pr, pc, gd[off..off + pr * pc].to_vec()));
                    off += pr * pc;
                }
            }
            Op::RowDot(q, rel) => {
                let ((n, d), (nm, _)) = (self.dims(*q), self.dims(*rel));
                let m = nm / n;
                let (qs, rs) = (val(*q).data(), val(*rel).data());
                let mut dq = vec![0.0; n * d];
                let mut dr = vec![0.0; nm * d];
                for i in 0..n {
                    for j in 0..m {
                        let gij = gd[i * m + j];
                        let base = (i * m + j) * d;
                        for c in 0..d {
                            dq[i * d + c] += gij * rs[base + c];
                            dr[base + c] += gij * qs[i * d + c];
                        }
                    }
                }
                acc(grads, *q, Tensor::matrix(n, d, dq));
                acc(grads, *rel, Tensor::matrix(nm, d, dr));
            }
            Op::RelMix(alpha, rel) => {
                let ((n, m), (nm, d)) = (self.dims(*alpha), self.dims(*rel));
                let (al, rs) = (val(*alpha).data(), val(*rel).data());
                let mut da = vec![0.0; n * m];
                let mut dr = vec![0.0; nm * d];
                for i in 0..n {
                    let gi = &gd[i * d..(i + 1) * d];
                    for j in 0..m {
                        let base = (i * m + j) * d;
                        let a = al[i * m + j];
                        let mut s = 0.0;
                        for c in 0..d {
                            s += gi[c] * rs[base + c];
                            dr[base + c] = a * gi[c];
                        }
                        da[i * m + j] = s;
                    }
                }
                acc(grads, *alpha, Tensor::matrix(n, m, da));
                acc(grads, *rel, Tensor::matrix(nm, d, dr));
            }
            Op::Dropout(x, mask) => {
                let (r, c) = self.dims(*x);
                let d = gd.iter().zip(mask).map(|(a, m)| a * m).collect();
                acc(grads, *x, Tensor::matrix(r, c, d));
            }
            Op::CrossEntropy { logits, grad } => {
                let (r, c) = self.dims(*logits);
                let s = gd[0];
                acc(grads, *logits, Tensor::matrix(r, c, grad.iter().map(|x| x * s).collect()));
            }
            Op::Sum(x) => {
                let (r, c) = self.dims(*x);
                acc(grads, *x, Tensor::full(&[r, c], gd[0]));
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}
