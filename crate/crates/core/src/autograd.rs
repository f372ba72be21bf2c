//! Minimal reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Gradients are seeded
//! on any number of output nodes and propagated back to the leaves with
//! [`Tape::backward`]. Everything is row-major `(rows, cols)`; sequences and
//! batches are stacked along rows.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One attention block: a run of query rows attending to a run of key rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnBlock {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
    /// Keys at block offsets `>= k_valid` are padding and never attended.
    pub k_valid: usize,
}

#[derive(Debug, Clone)]
pub enum BnMode {
    /// Batch statistics over consecutive groups of `group_rows` rows (the last group may be short).
    Train { group_rows: usize },
    Eval { mean: Array1<f64>, var: Array1<f64> },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SumAll(Var),
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        blocks: Vec<AttnBlock>,
        probs: Vec<Array2<f64>>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Scatter {
        base: Var,
        rows: Var,
        idx: Vec<usize>,
    },
    Concat(Vec<Var>),
    Slice {
        a: Var,
        start: usize,
    },
    Im2col3x3 {
        x: Var,
        batch: usize,
        h: usize,
        w: usize,
    },
    BatchNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Array2<f64>,
        /// One row of per-channel inverse std per group (a single row in eval mode).
        inv_std: Array2<f64>,
        group_rows: usize,
        train: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Array2<f64>, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds a `(1, n)` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + self.value(row);
        let ng = self.ng(&[a, row]);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(&[a]);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        let ng = self.ng(&[a]);
        self.push(v, Op::Gelu(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(v, Op::SumAll(a), ng)
    }

    /// `x @ w + b` with `b` a `(1, out)` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Row-wise layer normalization with affine `(1, d)` parameters.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let mut xhat = xv - &mean.view().insert_axis(Axis(1));
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        xhat *= &inv_std.view().insert_axis(Axis(1));
        let out = &xhat * self.value(g) + self.value(b);
        let ng = self.ng(&[x, g, b]);
        self.push(out, Op::LayerNorm { x, g, b, xhat, inv_std }, ng)
    }

    /// Multi-head scaled dot-product attention over `blocks`. With `causal`, a query at
    /// block offset `i` sees keys at offsets `<= i`. Output has the shape of `q`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, blocks: Vec<AttnBlock>, causal: bool) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert!(heads > 0 && d % heads == 0, "heads must divide the model width");
        assert_eq!(kv.ncols(), d);
        assert_eq!(vv.ncols(), d);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros(qv.raw_dim());
        let mut probs = Vec::with_capacity(blocks.len() * heads);
        for blk in &blocks {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![blk.q_start..blk.q_start + blk.q_len, cols.clone()]);
                let kh = kv.slice(s![blk.k_start..blk.k_start + blk.k_len, cols.clone()]);
                let vh = vv.slice(s![blk.k_start..blk.k_start + blk.k_len, cols.clone()]);
                let mut p = qh.dot(&kh.t());
                for i in 0..blk.q_len {
                    let limit = if causal { (i + 1).min(blk.k_valid) } else { blk.k_valid };
                    let mut row = p.row_mut(i);
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..limit {
                        row[j] *= scale;
                        max = max.max(row[j]);
                    }
                    let mut sum = 0.0;
                    for j in 0..blk.k_len {
                        if j < limit {
                            row[j] = (row[j] - max).exp();
                            sum += row[j];
                        } else {
                            row[j] = 0.0;
                        }
                    }
                    if sum > 0.0 {
                        row.mapv_inplace(|x| x / sum);
                    }
                }
                let o = p.dot(&vh);
                out.slice_mut(s![blk.q_start..blk.q_start + blk.q_len, cols]).assign(&o);
                probs.push(p);
            }
        }
        let ng = self.ng(&[q, k, v]);
        self.push(out, Op::Attention { q, k, v, heads, blocks, probs }, ng)
    }

    /// Rows of `table` selected by `ids` (embedding lookup, replication).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let out = t.select(Axis(0), ids);
        let ng = self.ng(&[table]);
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, ng)
    }

    /// Copy of `base` with row `idx[k]` replaced by row `k` of `rows`.
    pub fn scatter(&mut self, base: Var, rows: Var, idx: &[usize]) -> Var {
        let mut out = self.value(base).clone();
        let r = self.value(rows);
        assert_eq!(r.nrows(), idx.len());
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(i).assign(&r.row(k));
        }
        let ng = self.ng(&[base, rows]);
        self.push(out, Op::Scatter { base, rows, idx: idx.to_vec() }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = self.ng(parts);
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(&[a]);
        self.push(out, Op::Slice { a, start }, ng)
    }

    /// 3×3 patches with zero padding. `x` holds `batch` grids of `h×w` rows (row-major)
    /// with C channel columns; the result has `9C` columns ordered (kernel cell, channel).
    pub fn im2col3x3(&mut self, x: Var, batch: usize, h: usize, w: usize) -> Var {
        let xv = self.value(x);
        let c = xv.ncols();
        assert_eq!(xv.nrows(), batch * h * w);
        let mut out = Array2::zeros((batch * h * w, 9 * c));
        for b in 0..batch {
            for r in 0..h {
                for col in 0..w {
                    let row = (b * h + r) * w + col;
                    for k in 0..9 {
                        let (rr, cc) = (r as isize + k as isize / 3 - 1, col as isize + k as isize % 3 - 1);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let src = (b * h + rr as usize) * w + cc as usize;
                        out.slice_mut(s![row, k * c..(k + 1) * c]).assign(&xv.row(src));
                    }
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::Im2col3x3 { x, batch, h, w }, ng)
    }

    /// Per-channel batch normalization of `(rows, C)` with `(1, C)` affine parameters.
    /// Returns the output and, in train mode, the per-group `(mean, biased var)` rows.
    pub fn batch_norm(&mut self, x: Var, g: Var, b: Var, mode: &BnMode, eps: f64) -> (Var, Vec<(Array1<f64>, Array1<f64>)>) {
        let xv = self.value(x);
        let (n, c) = xv.dim();
        let mut xhat = Array2::zeros((n, c));
        let mut stats = Vec::new();
        let (inv_std, group_rows, train) = match mode {
            BnMode::Train { group_rows } => {
                let gr = (*group_rows).clamp(1, n.max(1));
                let groups = n.div_ceil(gr);
                let mut inv = Array2::zeros((groups, c));
                for gi in 0..groups {
                    let end = ((gi + 1) * gr).min(n);
                    let xs = xv.slice(s![gi * gr..end, ..]);
                    let mean = xs.mean_axis(Axis(0)).expect("non-empty group");
                    let centered = &xs - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty group");
                    let is = var.mapv(|v| 1.0 / (v + eps).sqrt());
                    xhat.slice_mut(s![gi * gr..end, ..]).assign(&(&centered * &is));
                    inv.row_mut(gi).assign(&is);
                    stats.push((mean, var));
                }
                (inv, gr, true)
            }
            BnMode::Eval { mean, var } => {
                let is = var.mapv(|v| 1.0 / (v + eps).sqrt());
                xhat.assign(&((xv - mean) * &is));
                (is.insert_axis(Axis(0)), n.max(1), false)
            }
        };
        let out = &xhat * self.value(g) + self.value(b);
        let ng = self.ng(&[x, g, b]);
        let var = self.push(
            out,
            Op::BatchNorm {
                x,
                g,
                b,
                xhat,
                inv_std,
                group_rows,
                train,
            },
            ng,
        );
        (var, stats)
    }

    /// Back-propagates from the given `(node, d loss / d node)` seeds. Returns the
    /// gradient of every node that needs one (`None` where nothing flowed).
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(self.value(*v).dim(), g.dim(), "seed shape mismatch");
            accumulate(&mut grads[v.0], g.clone());
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn send(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if self.nodes[v.0].needs_grad {
            accumulate(&mut grads[v.0], g);
        }
    }

    fn propagate(&self, op: &Op, gy: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs_grad(*a) {
                    self.send(grads, *a, gy.dot(&self.value(*b).t()));
                }
                if self.needs_grad(*b) {
                    self.send(grads, *b, self.value(*a).t().dot(gy));
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs_grad(*a) {
                    self.send(grads, *a, gy.dot(self.value(*b)));
                }
                if self.needs_grad(*b) {
                    self.send(grads, *b, gy.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, gy.clone());
                self.send(grads, *b, gy.clone());
            }
            Op::AddRow(a, row) => {
                self.send(grads, *a, gy.clone());
                if self.needs_grad(*row) {
                    self.send(grads, *row, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    self.send(grads, *a, gy * self.value(*b));
                }
                if self.needs_grad(*b) {
                    self.send(grads, *b, gy * self.value(*a));
                }
            }
            Op::Scale(a, k) => self.send(grads, *a, gy * *k),
            Op::Relu(a) => {
                let mut g = gy.clone();
                Zip::from(&mut g)
                    .and(self.value(*a))
                    .for_each(|g, &x| if x <= 0.0 { *g = 0.0 });
                self.send(grads, *a, g);
            }
            Op::Gelu(a) => {
                let mut g = gy.clone();
                Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| *g *= gelu_grad(x));
                self.send(grads, *a, g);
            }
            Op::SumAll(a) => {
                let k = gy[[0, 0]];
                self.send(grads, *a, Array2::from_elem(self.value(*a).raw_dim(), k));
            }
            Op::LayerNorm { x, g, b, xhat, inv_std } => {
                if self.needs_grad(*g) {
                    self.send(grads, *g, (gy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs_grad(*b) {
                    self.send(grads, *b, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs_grad(*x) {
                    let d = xhat.ncols() as f64;
                    let dxhat = gy * self.value(*g);
                    let s1 = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let s2 = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let mut dx = dxhat * d - &s1 - &(xhat * &s2);
                    dx *= &(inv_std / d).insert_axis(Axis(1));
                    self.send(grads, *x, dx);
                }
            }
            Op::Attention { q, k, v, heads, blocks, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.ncols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::zeros(qv.raw_dim());
                let mut dk = Array2::zeros(kv.raw_dim());
                let mut dv = Array2::zeros(vv.raw_dim());
                for (bi, blk) in blocks.iter().enumerate() {
                    let qr = s![blk.q_start..blk.q_start + blk.q_len, ..];
                    let kr = s![blk.k_start..blk.k_start + blk.k_len, ..];
                    for h in 0..*heads {
                        let p = &probs[bi * heads + h];
                        let cols = h * dh..(h + 1) * dh;
                        let go = gy.slice(qr).slice_move(s![.., cols.clone()]);
                        let qh = qv.slice(qr).slice_move(s![.., cols.clone()]);
                        let kh = kv.slice(kr).slice_move(s![.., cols.clone()]);
                        let vh = vv.slice(kr).slice_move(s![.., cols.clone()]);
                        let dp = go.dot(&vh.t());
                        let mut ds = &dp * p;
                        let rows = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
                        ds = &ds - &(p * &rows);
                        ds *= scale;
                        dv.slice_mut(kr).slice_mut(s![.., cols.clone()]).scaled_add(1.0, &p.t().dot(&go));
                        dq.slice_mut(qr).slice_mut(s![.., cols.clone()]).scaled_add(1.0, &ds.dot(&kh));
                        dk.slice_mut(kr).slice_mut(s![.., cols]).scaled_add(1.0, &ds.t().dot(&qh));
                    }
                }
                self.send(grads, *q, dq);
                self.send(grads, *k, dk);
                self.send(grads, *v, dv);
            }
            Op::Gather { table, ids } => {
                let mut g = Array2::zeros(self.value(*table).raw_dim());
                for (k, &i) in ids.iter().enumerate() {
                    let mut row = g.row_mut(i);
                    row += &gy.row(k);
                }
                self.send(grads, *table, g);
            }
            Op::Scatter { base, rows, idx } => {
                if self.needs_grad(*rows) {
                    self.send(grads, *rows, gy.select(Axis(0), idx));
                }
                if self.needs_grad(*base) {
                    let mut g = gy.clone();
                    for &i in idx {
                        g.row_mut(i).fill(0.0);
                    }
                    self.send(grads, *base, g);
                }
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).nrows();
                    if self.needs_grad(*p) {
                        self.send(grads, *p, gy.slice(s![start..start + n, ..]).to_owned());
                    }
                    start += n;
                }
            }
            Op::Slice { a, start } => {
                let mut g = Array2::zeros(self.value(*a).raw_dim());
                g.slice_mut(s![*start..*start + gy.nrows(), ..]).assign(gy);
                self.send(grads, *a, g);
            }
            Op::Im2col3x3 { x, batch, h, w } => {
                let c = self.value(*x).ncols();
                let mut g = Array2::zeros(self.value(*x).raw_dim());
                for b in 0..*batch {
                    for r in 0..*h {
                        for col in 0..*w {
                            let row = (b * h + r) * w + col;
                            for k in 0..9 {
                                let (rr, cc) = (r as isize + k as isize / 3 - 1, col as isize + k as isize % 3 - 1);
                                if rr < 0 || cc < 0 || rr >= *h as isize || cc >= *w as isize {
                                    continue;
                                }
                                let src = (b * h + rr as usize) * w + cc as usize;
                                let mut dst = g.row_mut(src);
                                dst += &gy.slice(s![row, k * c..(k + 1) * c]);
                            }
                        }
                    }
                }
                self.send(grads, *x, g);
            }
            Op::BatchNorm { x, g, b, xhat, inv_std, group_rows, train } => {
                if self.needs_grad(*g) {
                    self.send(grads, *g, (gy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs_grad(*b) {
                    self.send(grads, *b, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs_grad(*x) {
                    let gamma = self.value(*g);
                    let dxhat = gy * gamma;
                    let mut dx = Array2::zeros(dxhat.raw_dim());
                    if *train {
                        let gr = *group_rows;
                        let n = dxhat.nrows();
                        for gi in 0..n.div_ceil(gr) {
                            let end = ((gi + 1) * gr).min(n);
                            let m = (end - gi * gr) as f64;
                            let rows = s![gi * gr..end, ..];
                            let dxh = dxhat.slice(rows);
                            let xh = xhat.slice(rows);
                            let s1 = dxh.sum_axis(Axis(0));
                            let s2 = (&dxh * &xh).sum_axis(Axis(0));
                            let is = inv_std.row(gi);
                            let block = (&dxh * m - &s1 - &(&xh * &s2)) * &(&is / m);
                            dx.slice_mut(rows).assign(&block);
                        }
                    } else {
                        dx = dxhat * inv_std.row(0);
                    }
                    self.send(grads, *x, dx);
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

/// Separable bilinear resampling matrix (half-pixel centres, edge clamped) mapping a
/// row-major `h×w` grid to `out_h×out_w`.
pub fn bilinear_matrix(h: usize, w: usize, out_h: usize, out_w: usize) -> Array2<f64> {
    fn axis(n: usize, out: usize) -> Array2<f64> {
        let mut m = Array2::zeros((out, n));
        let scale = n as f64 / out as f64;
        for o in 0..out {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let f = src - i0 as f64;
            m[[o, i0]] += 1.0 - f;
            m[[o, i1]] += f;
        }
        m
    }
    let ah = axis(h, out_h);
    let aw = axis(w, out_w);
    let mut m = Array2::zeros((out_h * out_w, h * w));
    for r in 0..out_h {
        for c in 0..out_w {
            for i in 0..h {
                let a = ah[[r, i]];
                if a == 0.0 {
                    continue;
                }
                for j in 0..w {
                    m[[r * out_w + c, i * w + j]] = a * aw[[c, j]];
                }
            }
        }
    }
    m
}
