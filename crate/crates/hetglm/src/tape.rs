//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! Every trainable component in the crate (tokenizer layers, parameter
//! generators, the text tower, the language model) builds its forward pass on
//! a [`Tape`] and gets exact gradients from [`Tape::backward`]. Values are
//! 64-bit throughout so analytic gradients can be checked against central
//! finite differences at tight tolerances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense row-major matrix. Scalars are 1x1, row vectors 1xN.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(gauss(rng) * std);
        }
        Tensor { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_tensor(&self, r: usize) -> Tensor {
        Tensor::from_vec(1, self.cols, self.row(r).to_vec())
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Tensor::from_vec(n, m, out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn add_into(&mut self, other: &Tensor) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Box-Muller gaussian draw.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen::<f64>();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    /// (n x c) + broadcast (1 x c)
    AddRow(Var, Var),
    /// (n x c) * broadcast (1 x c)
    MulRow(Var, Var),
    Scale(Var, f64),
    /// (n x c) * broadcast scalar var (1 x 1)
    MulScalar(Var, Var),
    Exp(Var),
    Tanh(Var),
    Gelu(Var),
    Transpose(Var),
    Reshape(Var),
    /// Row softmax; `limits[r]` bounds the active prefix of row r (None = full row).
    SoftmaxRows(Var, Option<Vec<usize>>),
    LogSoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    MeanRows(Var),
    SumAll(Var),
    L2NormRows(Var),
    LayerNormRows(Var, f64),
    /// Mean of -logprob[r, target[r]] over rows where mask[r].
    NllMasked(Var, Vec<usize>, Vec<bool>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient tape. Nodes are appended in forward order; `backward` walks them
/// in reverse, which is a valid topological order by construction.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows, t.cols)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "add shape mismatch");
        let mut v = ta.clone();
        v.add_into(tb);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "sub shape mismatch");
        let data = ta
            .data
            .iter()
            .zip(tb.data.iter())
            .map(|(x, y)| x - y)
            .collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "mul shape mismatch");
        let data = ta
            .data
            .iter()
            .zip(tb.data.iter())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::MulElem(a, b))
    }

    /// Matrix plus a 1xC row broadcast over every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.rows, 1, "add_row expects a 1xC row");
        assert_eq!(ta.cols, tr.cols, "add_row width mismatch");
        let mut v = ta.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] += tr.data[c];
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Matrix times a 1xC row broadcast over every row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.rows, 1, "mul_row expects a 1xC row");
        assert_eq!(ta.cols, tr.cols, "mul_row width mismatch");
        let mut v = ta.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] *= tr.data[c];
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x * k).collect());
        self.push(v, Op::Scale(a, k))
    }

    /// Matrix times a broadcast 1x1 scalar variable.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.value(s).item();
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x * k).collect());
        self.push(v, Op::MulScalar(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x.exp()).collect());
        self.push(v, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x.tanh()).collect());
        self.push(v, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|&x| gelu(x)).collect());
        self.push(v, Op::Gelu(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.rows * ta.cols, rows * cols, "reshape size mismatch");
        let v = Tensor::from_vec(rows, cols, ta.data.clone());
        self.push(v, Op::Reshape(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.softmax_rows_limited(a, None)
    }

    /// Row softmax over the first `limits[r]` columns of row r; remaining
    /// entries are exactly zero. Used for causal attention.
    pub fn softmax_rows_limited(&mut self, a: Var, limits: Option<Vec<usize>>) -> Var {
        let ta = self.value(a);
        let mut v = Tensor::zeros(ta.rows, ta.cols);
        for r in 0..ta.rows {
            let lim = limits.as_ref().map_or(ta.cols, |l| l[r]);
            assert!(lim >= 1 && lim <= ta.cols, "softmax limit out of range");
            let row = ta.row(r);
            let max = row[..lim].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..lim {
                let e = (row[c] - max).exp();
                v.data[r * ta.cols + c] = e;
                sum += e;
            }
            for c in 0..lim {
                v.data[r * ta.cols + c] /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a, limits))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut v = Tensor::zeros(ta.rows, ta.cols);
        for r in 0..ta.rows {
            let row = ta.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            for c in 0..ta.cols {
                v.data[r * ta.cols + c] = row[c] - lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Select rows by index; repeats are allowed and gradients accumulate.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let ta = self.value(a);
        let mut v = Tensor::zeros(indices.len(), ta.cols);
        for (i, &idx) in indices.iter().enumerate() {
            assert!(idx < ta.rows, "gather index out of range");
            v.data[i * ta.cols..(i + 1) * ta.cols].copy_from_slice(ta.row(idx));
        }
        self.push(v, Op::GatherRows(a, indices))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let rows: usize = parts.iter().map(|&p| self.value(p).rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&t.data);
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut at = 0usize;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                v.data[r * cols + at..r * cols + at + t.cols].copy_from_slice(t.row(r));
            }
            at += t.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        assert!(start + len <= ta.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(ta.rows, len);
        for r in 0..ta.rows {
            v.data[r * len..(r + 1) * len].copy_from_slice(&ta.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        assert!(start + len <= ta.rows, "slice_rows out of range");
        let data = ta.data[start * ta.cols..(start + len) * ta.cols].to_vec();
        self.push(Tensor::from_vec(len, ta.cols, data), Op::SliceRows(a, start, len))
    }

    /// Column-wise mean over rows: (n x c) -> (1 x c).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut v = Tensor::zeros(1, ta.cols);
        for r in 0..ta.rows {
            for c in 0..ta.cols {
                v.data[c] += ta.get(r, c);
            }
        }
        let n = ta.rows as f64;
        for c in 0..ta.cols {
            v.data[c] /= n;
        }
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Row-wise L2 normalization. Errors on a zero-norm row are the caller's
    /// job to pre-check; here it is a hard assert.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut v = ta.clone();
        for r in 0..ta.rows {
            let norm = ta.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm > 0.0, "l2_normalize_rows: zero-norm row {r}");
            for c in 0..ta.cols {
                v.data[r * ta.cols + c] /= norm;
            }
        }
        self.push(v, Op::L2NormRows(a))
    }

    /// Per-row layer norm without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let ta = self.value(a);
        let mut v = Tensor::zeros(ta.rows, ta.cols);
        let n = ta.cols as f64;
        for r in 0..ta.rows {
            let row = ta.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..ta.cols {
                v.data[r * ta.cols + c] = (row[c] - mean) * inv;
            }
        }
        self.push(v, Op::LayerNormRows(a, eps))
    }

    /// Mean negative log-likelihood over masked rows of a log-probability
    /// matrix. `targets[r]` indexes the scored column of row r.
    pub fn nll_masked(&mut self, logprobs: Var, targets: Vec<usize>, mask: Vec<bool>) -> Var {
        let t = self.value(logprobs);
        assert_eq!(targets.len(), t.rows);
        assert_eq!(mask.len(), t.rows);
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count > 0, "nll_masked: empty mask");
        let mut total = 0.0;
        for r in 0..t.rows {
            if mask[r] {
                total -= t.get(r, targets[r]);
            }
        }
        let v = Tensor::scalar(total / count as f64);
        self.push(v, Op::NllMasked(logprobs, targets, mask))
    }

    /// Run reverse-mode accumulation from a scalar root. Returns one gradient
    /// tensor per node; entries for nodes unreachable from the root are zero.
    pub fn backward(&self, root: Var) -> Vec<Tensor> {
        assert_eq!(self.value(root).data.len(), 1, "backward needs scalar root");
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[root.0].data[0] = 1.0;

        for i in (0..=root.0).rev() {
            if grads[i].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[i].clone();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.nodes[b.0].value.transpose());
                    let db = self.nodes[a.0].value.transpose().matmul(&g);
                    grads[a.0].add_into(&da);
                    grads[b.0].add_into(&db);
                }
                Op::Add(a, b) => {
                    grads[a.0].add_into(&g);
                    grads[b.0].add_into(&g);
                }
                Op::Sub(a, b) => {
                    grads[a.0].add_into(&g);
                    for (x, y) in grads[b.0].data.iter_mut().zip(g.data.iter()) {
                        *x -= y;
                    }
                }
                Op::MulElem(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for idx in 0..g.data.len() {
                        grads[a.0].data[idx] += g.data[idx] * tb.data[idx];
                    }
                    for idx in 0..g.data.len() {
                        grads[b.0].data[idx] += g.data[idx] * ta.data[idx];
                    }
                }
                Op::AddRow(a, row) => {
                    grads[a.0].add_into(&g);
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..cols {
                            grads[row.0].data[c] += g.data[r * cols + c];
                        }
                    }
                }
                Op::MulRow(a, row) => {
                    let (ta, tr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..cols {
                            grads[a.0].data[r * cols + c] += g.data[r * cols + c] * tr.data[c];
                            grads[row.0].data[c] += g.data[r * cols + c] * ta.data[r * cols + c];
                        }
                    }
                }
                Op::Scale(a, k) => {
                    for idx in 0..g.data.len() {
                        grads[a.0].data[idx] += g.data[idx] * k;
                    }
                }
                Op::MulScalar(a, s) => {
                    let k = self.nodes[s.0].value.item();
                    let ta = &self.nodes[a.0].value;
                    let mut ds = 0.0;
                    for idx in 0..g.data.len() {
                        grads[a.0].data[idx] += g.data[idx] * k;
                        ds += g.data[idx] * ta.data[idx];
                    }
                    grads[s.0].data[0] += ds;
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    for idx in 0..g.data.len() {
                        grads[a.0].data[idx] += g.data[idx] * y.data[idx];
                    }
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    for idx in 0..g.data.len() {
                        grads[a.0].data[idx] += g.data[idx] * (1.0 - y.data[idx] * y.data[idx]);
                    }
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[a.0].value;
                    for idx in 0..g.data.len() {
                        grads[a.0].data[idx] += g.data[idx] * gelu_grad(x.data[idx]);
                    }
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    grads[a.0].add_into(&gt);
                }
                Op::Reshape(a) => {
                    for idx in 0..g.data.len() {
                        grads[a.0].data[idx] += g.data[idx];
                    }
                }
                Op::SoftmaxRows(a, limits) => {
                    let y = &self.nodes[i].value;
                    let cols = y.cols;
                    for r in 0..y.rows {
                        let lim = limits.as_ref().map_or(cols, |l| l[r]);
                        let mut dot = 0.0;
                        for c in 0..lim {
                            dot += g.data[r * cols + c] * y.data[r * cols + c];
                        }
                        for c in 0..lim {
                            grads[a.0].data[r * cols + c] +=
                                y.data[r * cols + c] * (g.data[r * cols + c] - dot);
                        }
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let cols = y.cols;
                    for r in 0..y.rows {
                        let gsum: f64 = g.data[r * cols..(r + 1) * cols].iter().sum();
                        for c in 0..cols {
                            let p = y.data[r * cols + c].exp();
                            grads[a.0].data[r * cols + c] += g.data[r * cols + c] - p * gsum;
                        }
                    }
                }
                Op::GatherRows(a, indices) => {
                    let cols = g.cols;
                    for (r, &idx) in indices.iter().enumerate() {
                        for c in 0..cols {
                            grads[a.0].data[idx * cols + c] += g.data[r * cols + c];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols;
                    let mut at = 0usize;
                    for &p in parts {
                        let rows = self.nodes[p.0].value.rows;
                        for r in 0..rows {
                            for c in 0..cols {
                                grads[p.0].data[r * cols + c] += g.data[(at + r) * cols + c];
                            }
                        }
                        at += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let cols = g.cols;
                    let mut at = 0usize;
                    for &p in parts {
                        let t = &self.nodes[p.0].value;
                        for r in 0..t.rows {
                            for c in 0..t.cols {
                                grads[p.0].data[r * t.cols + c] += g.data[r * cols + at + c];
                            }
                        }
                        at += t.cols;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let full_cols = self.nodes[a.0].value.cols;
                    for r in 0..g.rows {
                        for c in 0..*len {
                            grads[a.0].data[r * full_cols + start + c] += g.data[r * len + c];
                        }
                    }
                }
                Op::SliceRows(a, start, len) => {
                    let cols = g.cols;
                    for r in 0..*len {
                        for c in 0..cols {
                            grads[a.0].data[(start + r) * cols + c] += g.data[r * cols + c];
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let rows = self.nodes[a.0].value.rows;
                    let cols = g.cols;
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            grads[a.0].data[r * cols + c] += g.data[c] * inv;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let gv = g.data[0];
                    for x in grads[a.0].data.iter_mut() {
                        *x += gv;
                    }
                }
                Op::L2NormRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let y = &self.nodes[i].value;
                    let cols = x.cols;
                    for r in 0..x.rows {
                        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dot += g.data[r * cols + c] * y.data[r * cols + c];
                        }
                        for c in 0..cols {
                            grads[a.0].data[r * cols + c] +=
                                (g.data[r * cols + c] - y.data[r * cols + c] * dot) / norm;
                        }
                    }
                }
                Op::LayerNormRows(a, eps) => {
                    let x = &self.nodes[a.0].value;
                    let y = &self.nodes[i].value;
                    let cols = x.cols;
                    let n = cols as f64;
                    for r in 0..x.rows {
                        let row = x.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gmean: f64 =
                            g.data[r * cols..(r + 1) * cols].iter().sum::<f64>() / n;
                        let mut gy = 0.0;
                        for c in 0..cols {
                            gy += g.data[r * cols + c] * y.data[r * cols + c];
                        }
                        gy /= n;
                        for c in 0..cols {
                            grads[a.0].data[r * cols + c] += inv
                                * (g.data[r * cols + c] - gmean - y.data[r * cols + c] * gy);
                        }
                    }
                }
                Op::NllMasked(a, targets, mask) => {
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let gv = g.data[0];
                    let cols = self.nodes[a.0].value.cols;
                    for (r, (&t, &m)) in targets.iter().zip(mask.iter()).enumerate() {
                        if m {
                            grads[a.0].data[r * cols + t] -= gv / count;
                        }
                    }
                }
            }
        }
        grads
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Identifier of a tensor held by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter collection with Adam state.
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.m.push(Tensor::zeros(t.rows, t.cols));
        self.v.push(Tensor::zeros(t.rows, t.cols));
        self.tensors.push(t);
        self.names.push(name);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// One AdamW step. `grads` must align with the store layout; `decay`
    /// is decoupled weight decay applied to every parameter.
    pub fn adam_step(&mut self, grads: &Grads, opt: &AdamConfig, lr: f64) {
        self.step += 1;
        let b1c = 1.0 - opt.beta1.powi(self.step as i32);
        let b2c = 1.0 - opt.beta2.powi(self.step as i32);
        for i in 0..self.tensors.len() {
            let g = &grads.0[i];
            for j in 0..self.tensors[i].data.len() {
                let grad = g.data[j];
                self.m[i].data[j] = opt.beta1 * self.m[i].data[j] + (1.0 - opt.beta1) * grad;
                self.v[i].data[j] =
                    opt.beta2 * self.v[i].data[j] + (1.0 - opt.beta2) * grad * grad;
                let mh = self.m[i].data[j] / b1c;
                let vh = self.v[i].data[j] / b2c;
                let p = &mut self.tensors[i].data[j];
                *p -= lr * (mh / (vh.sqrt() + opt.eps) + opt.weight_decay * *p);
            }
        }
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(
            self.tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
        )
    }

    pub fn reset_moments(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            for x in t.data.iter_mut() {
                *x = 0.0;
            }
        }
        self.step = 0;
    }

    /// Export as (name, tensor) pairs in registration order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    /// Overwrite a parameter's values from a loaded tensor.
    pub fn load(&mut self, id: ParamId, t: Tensor) {
        let cur = &self.tensors[id.0];
        assert_eq!((cur.rows, cur.cols), (t.rows, t.cols), "load shape mismatch");
        self.tensors[id.0] = t;
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Grads(pub Vec<Tensor>);

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Records which tape leaves came from which parameters, so gradients can be
/// routed back after `backward`. A parameter bound repeatedly accumulates.
pub struct Binder {
    binds: Vec<(ParamId, Var)>,
}

impl Binder {
    pub fn new() -> Self {
        Binder { binds: Vec::new() }
    }

    /// Bind a trainable parameter: its current value becomes a tape leaf.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        let var = tape.leaf(store.get(id).clone());
        self.binds.push((id, var));
        var
    }

    /// Collect parameter gradients from a finished backward pass.
    pub fn collect(&self, store: &ParamStore, grads_by_node: &[Tensor]) -> Grads {
        let mut out = store.zero_grads();
        for &(id, var) in &self.binds {
            out.0[id.0].add_into(&grads_by_node[var.0]);
        }
        out
    }
}

impl Default for Binder {
    fn default() -> Self {
        Self::new()
    }
}

/// How parameters enter a tape: bound for training (gradients collected) or
/// frozen as plain constants.
pub enum ParamBind<'a> {
    Train(&'a mut Binder),
    Frozen,
}

impl<'a> ParamBind<'a> {
    pub fn get(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        match self {
            ParamBind::Train(binder) => binder.bind(tape, store, id),
            ParamBind::Frozen => tape.leaf(store.get(id).clone()),
        }
    }
}

/// Central finite-difference gradient of `f` at one coordinate of one
/// parameter. Used by the verification suites.
pub fn finite_diff<F>(store: &mut ParamStore, id: ParamId, coord: usize, eps: f64, mut f: F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let orig = store.get(id).data[coord];
    store.get_mut(id).data[coord] = orig + eps;
    let plus = f(store);
    store.get_mut(id).data[coord] = orig - eps;
    let minus = f(store);
    store.get_mut(id).data[coord] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Relative error used by the gradient checks: |a-b| / max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}
