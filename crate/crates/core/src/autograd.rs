//! A small reverse-mode tape over row-major `f64` matrices.
//!
//! Every tensor in the model is two-dimensional. Batched token sequences are
//! stored as stacked rows: `G` groups of `L` rows each, with the group size
//! passed explicitly to the ops that need it (attention, pooling, unfolding).
//! Parameters live in a [`ParamStore`] and enter a tape as leaves; after
//! [`Tape::backward`] their gradients are read back by parameter index.

use ndarray::{s, Array2, Axis};

use crate::nn::ParamStore;

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatGroups(Vec<(Var, usize)>),
    GroupMean(Var, usize),
    GroupMax(Var, Vec<usize>),
    LayerNorm(Var, Vec<f64>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        lq: usize,
        lk: usize,
        heads: usize,
        probs: Vec<Mat>,
    },
    Unfold(Var, usize, usize),
    GroupTranspose(Var, usize),
    SumSq(Var),
    Mean(Var),
    MeanSqDiff(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Grads {
    grads: Vec<Option<Mat>>,
    param_nodes: Vec<Option<Var>>,
    param_shapes: Vec<(usize, usize)>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of every parameter of the store, zero for parameters that
    /// did not take part in the computation.
    pub fn params(&self) -> Vec<Mat> {
        self.param_nodes
            .iter()
            .zip(&self.param_shapes)
            .map(|(v, &shape)| {
                v.and_then(|v| self.grads[v.0].clone())
                    .unwrap_or_else(|| Mat::zeros(shape))
            })
            .collect()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant input; no gradient is tracked through it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is wanted.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param, true);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1 × C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = rowwise(self.value(a), self.value(row), |x, r| x + r);
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 × C` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = rowwise(self.value(a), self.value(row), |x, r| x * r);
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// Concatenates grouped token sequences along the token axis: for each of
    /// the `G` groups, the output holds the group's rows from every part in
    /// order. `parts` pairs a variable with its rows-per-group.
    pub fn concat_groups(&mut self, parts: &[(Var, usize)]) -> Var {
        let (r0, cols) = self.shape(parts[0].0);
        let groups = r0 / parts[0].1;
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Mat::zeros((groups * total, cols));
        for g in 0..groups {
            let mut row = g * total;
            for &(p, l) in parts {
                let src = self.value(p);
                assert_eq!(src.nrows(), groups * l, "concat_groups: group count differs");
                out.slice_mut(s![row..row + l, ..])
                    .assign(&src.slice(s![g * l..(g + 1) * l, ..]));
                row += l;
            }
        }
        let ng = parts.iter().any(|&(p, _)| self.ng(p));
        self.push(out, Op::ConcatGroups(parts.to_vec()), ng)
    }

    /// Mean over each group of `len` consecutive rows.
    pub fn group_mean(&mut self, a: Var, len: usize) -> Var {
        let x = self.value(a);
        let groups = x.nrows() / len;
        let mut out = Mat::zeros((groups, x.ncols()));
        for g in 0..groups {
            out.row_mut(g)
                .assign(&x.slice(s![g * len..(g + 1) * len, ..]).mean_axis(Axis(0)).unwrap());
        }
        let ng = self.ng(a);
        self.push(out, Op::GroupMean(a, len), ng)
    }

    /// Max over each group of `len` consecutive rows, per column.
    pub fn group_max(&mut self, a: Var, len: usize) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        let groups = rows / len;
        let mut out = Mat::zeros((groups, cols));
        let mut arg = vec![0usize; groups * cols];
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("fresh matrix");
        for g in 0..groups {
            let (best, args) = (&mut os[g * cols..(g + 1) * cols], &mut arg[g * cols..(g + 1) * cols]);
            best.copy_from_slice(&xs[g * len * cols..(g * len + 1) * cols]);
            args.fill(g * len);
            for r in g * len + 1..(g + 1) * len {
                for (c, &v) in xs[r * cols..(r + 1) * cols].iter().enumerate() {
                    if v > best[c] {
                        best[c] = v;
                        args[c] = r;
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::GroupMax(a, arg), ng)
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut out = x.as_standard_layout().into_owned();
        let mut inv = Vec::with_capacity(x.nrows());
        if x.ncols() > 0 {
            for row in out.as_slice_mut().expect("standard layout").chunks_exact_mut(x.ncols()) {
                let mean = row.iter().sum::<f64>() / cols;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols;
                let is = 1.0 / (var + eps).sqrt();
                row.iter_mut().for_each(|v| *v = (*v - mean) * is);
                inv.push(is);
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNorm(a, inv), ng)
    }

    /// Scaled dot-product attention per group: `q` holds `G·lq` rows, `k` and
    /// `v` hold `G·lk` rows; queries of group `g` only see keys of group `g`.
    /// The feature axis is split evenly into `heads` heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, lq: usize, lk: usize, heads: usize) -> Var {
        let (out, probs) = attention_forward(self.value(q), self.value(k), self.value(v), lq, lk, heads);
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                lq,
                lk,
                heads,
                probs,
            },
            ng,
        )
    }

    /// Attention probabilities recorded by an attention node, one matrix per
    /// (group, head) in group-major order.
    pub fn attention_probs(&self, v: Var) -> Option<&[Mat]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// im2col for a same-padded 1-D convolution along the rows of each group
    /// of `len` rows, with an odd `kernel`. Output row `r` is the
    /// concatenation of input rows `r - kernel/2 ..= r + kernel/2`.
    pub fn unfold(&mut self, a: Var, len: usize, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "unfold: kernel must be odd");
        let x = self.value(a);
        let (rows, cols) = x.dim();
        let pad = kernel / 2;
        let mut out = Mat::zeros((rows, kernel * cols));
        for g in 0..rows / len {
            for r in 0..len {
                for j in 0..kernel {
                    let src = r as isize + j as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    out.slice_mut(s![g * len + r, j * cols..(j + 1) * cols])
                        .assign(&x.row(g * len + src as usize));
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Unfold(a, len, kernel), ng)
    }

    /// Transposes each `len × C` group into a `C × len` group.
    pub fn group_transpose(&mut self, a: Var, len: usize) -> Var {
        let out = group_transpose(self.value(a), len);
        let ng = self.ng(a);
        self.push(out, Op::GroupTranspose(a, len), ng)
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum::<f64>();
        let ng = self.ng(a);
        self.push(Mat::from_elem((1, 1), v), Op::SumSq(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.sum() / x.len() as f64;
        let ng = self.ng(a);
        self.push(Mat::from_elem((1, 1), v), Op::Mean(a), ng)
    }

    /// Mean of squared differences to a constant target.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), target.dim(), "mse: shape mismatch");
        let v = x.iter().zip(target.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / x.len() as f64;
        let ng = self.ng(a);
        self.push(Mat::from_elem((1, 1), v), Op::MeanSqDiff(a, target), ng)
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads {
            grads,
            param_nodes: self.param_vars.clone(),
            param_shapes: (0..self.params.len()).map(|i| self.params.value(i).dim()).collect(),
        }
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.ng(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::MulRow(a, row) => {
                if self.ng(*a) {
                    acc(*a, rowwise(g, self.value(*row), |x, r| x * r));
                }
                if self.ng(*row) {
                    acc(*row, (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.ng(p) {
                        acc(p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                if self.ng(*a) {
                    let mut d = Mat::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    acc(*a, d);
                }
            }
            Op::ConcatGroups(parts) => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let groups = g.nrows() / total;
                let mut offset = 0;
                for &(p, l) in parts {
                    if self.ng(p) {
                        let mut d = Mat::zeros((groups * l, g.ncols()));
                        for grp in 0..groups {
                            let src = grp * total + offset;
                            d.slice_mut(s![grp * l..(grp + 1) * l, ..])
                                .assign(&g.slice(s![src..src + l, ..]));
                        }
                        acc(p, d);
                    }
                    offset += l;
                }
            }
            Op::GroupMean(a, len) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                let inv = 1.0 / *len as f64;
                for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                    row.zip_mut_with(&g.row(r / len), |d, &v| *d = v * inv);
                }
                acc(*a, d);
            }
            Op::GroupMax(a, arg) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                let cols = g.ncols();
                for (idx, &r) in arg.iter().enumerate() {
                    let (grp, c) = (idx / cols, idx % cols);
                    d[[r, c]] += g[[grp, c]];
                }
                acc(*a, d);
            }
            Op::LayerNorm(a, inv) => {
                let xhat = &node.value;
                let n = xhat.ncols() as f64;
                let mut d = Mat::zeros(xhat.dim());
                for (r, mut dr) in d.rows_mut().into_iter().enumerate() {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    let sg = gr.sum();
                    let sgx = gr.dot(&xr);
                    for ((o, &gc), &xc) in dr.iter_mut().zip(gr).zip(xr) {
                        *o = inv[r] / n * (n * gc - sg - xc * sgx);
                    }
                }
                acc(*a, d);
            }
            Op::Attention {
                q,
                k,
                v,
                lq,
                lk,
                heads,
                probs,
            } => {
                let (dq, dk, dv) = attention_backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    g,
                    *lq,
                    *lk,
                    *heads,
                    probs,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Unfold(a, len, kernel) => {
                let x = self.value(*a);
                let (rows, cols) = x.dim();
                let pad = kernel / 2;
                let mut d = Mat::zeros((rows, cols));
                for grp in 0..rows / len {
                    for r in 0..*len {
                        for j in 0..*kernel {
                            let src = r as isize + j as isize - pad as isize;
                            if src < 0 || src >= *len as isize {
                                continue;
                            }
                            let mut dst = d.row_mut(grp * len + src as usize);
                            dst += &g.slice(s![grp * len + r, j * cols..(j + 1) * cols]);
                        }
                    }
                }
                acc(*a, d);
            }
            Op::GroupTranspose(a, len) => {
                let cols = self.value(*a).ncols();
                acc(*a, group_transpose(g, cols));
                let _ = len;
            }
            Op::SumSq(a) => acc(*a, self.value(*a) * (2.0 * g[[0, 0]])),
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Mat::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
            }
            Op::MeanSqDiff(a, target) => {
                let x = self.value(*a);
                let c = 2.0 * g[[0, 0]] / x.len() as f64;
                acc(*a, (x - target) * c);
            }
        }
    }
}

/// `f(a[r, c], row[0, c])` for every element, over contiguous rows.
fn rowwise(a: &Mat, row: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!(row.nrows(), 1, "row operand must be 1 x C");
    assert_eq!(a.ncols(), row.ncols(), "row operand width mismatch");
    let mut out = a.as_standard_layout().into_owned();
    let r = row.as_standard_layout();
    let r = r.as_slice().expect("standard layout");
    if !r.is_empty() {
        for chunk in out.as_slice_mut().expect("standard layout").chunks_exact_mut(r.len()) {
            for (x, &v) in chunk.iter_mut().zip(r) {
                *x = f(*x, v);
            }
        }
    }
    out
}

pub(crate) fn group_transpose(x: &Mat, len: usize) -> Mat {
    let (rows, cols) = x.dim();
    let groups = rows / len;
    let mut out = Mat::zeros((groups * cols, len));
    for g in 0..groups {
        out.slice_mut(s![g * cols..(g + 1) * cols, ..])
            .assign(&x.slice(s![g * len..(g + 1) * len, ..]).t());
    }
    out
}

fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

fn attention_forward(q: &Mat, k: &Mat, v: &Mat, lq: usize, lk: usize, heads: usize) -> (Mat, Vec<Mat>) {
    let groups = q.nrows() / lq;
    let dim = q.ncols();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros((q.nrows(), v.ncols()));
    let mut probs = Vec::with_capacity(groups * heads);
    for g in 0..groups {
        for h in 0..heads {
            let cs = h * dh..(h + 1) * dh;
            let qg = q.slice(s![g * lq..(g + 1) * lq, cs.clone()]);
            let kg = k.slice(s![g * lk..(g + 1) * lk, cs.clone()]);
            let vg = v.slice(s![g * lk..(g + 1) * lk, cs.clone()]);
            let mut p = qg.dot(&kg.t()) * scale;
            softmax_rows(&mut p);
            out.slice_mut(s![g * lq..(g + 1) * lq, cs]).assign(&p.dot(&vg));
            probs.push(p);
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    dout: &Mat,
    lq: usize,
    lk: usize,
    heads: usize,
    probs: &[Mat],
) -> (Mat, Mat, Mat) {
    let groups = q.nrows() / lq;
    let dh = q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Mat::zeros(q.dim());
    let mut dk = Mat::zeros(k.dim());
    let mut dv = Mat::zeros(v.dim());
    for g in 0..groups {
        for h in 0..heads {
            let p = &probs[g * heads + h];
            let cs = h * dh..(h + 1) * dh;
            let qg = q.slice(s![g * lq..(g + 1) * lq, cs.clone()]);
            let kg = k.slice(s![g * lk..(g + 1) * lk, cs.clone()]);
            let vg = v.slice(s![g * lk..(g + 1) * lk, cs.clone()]);
            let dog = dout.slice(s![g * lq..(g + 1) * lq, cs.clone()]);
            dv.slice_mut(s![g * lk..(g + 1) * lk, cs.clone()]).assign(&p.t().dot(&dog));
            let dp = dog.dot(&vg.t());
            let mut ds = dp.clone();
            for r in 0..lq {
                let dot: f64 = (0..lk).map(|c| dp[[r, c]] * p[[r, c]]).sum();
                for c in 0..lk {
                    ds[[r, c]] = p[[r, c]] * (dp[[r, c]] - dot) * scale;
                }
            }
            dq.slice_mut(s![g * lq..(g + 1) * lq, cs.clone()]).assign(&ds.dot(&kg));
            dk.slice_mut(s![g * lk..(g + 1) * lk, cs]).assign(&ds.t().dot(&qg));
        }
    }
    (dq, dk, dv)
}
