use super::{matmul_raw, sigmoid, softmax, top_k_indices, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-defined primitive: receives the input values, the
/// output value and the upstream gradient, returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    MeanAxis { input: Var, axis: usize },
    TopKMean { input: Var, selected: Vec<Vec<usize>> },
    MaxConst(Var, f64),
    SliceCols { input: Var, start: usize },
    Gather { input: Var, indices: Vec<usize> },
    Reshape(Var),
    Custom { inputs: Vec<Var>, backward: BackwardFn },
    GruSequence { xw: Var, u: Var, b_u: Var, reverse: bool, cache: GruCache },
}

/// Gate activations of every step, rows in time order.
struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// recurrent part of the candidate pre-activation, `(h_prev U + b_u)_n`
    uh_n: Vec<f64>,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records primitives in execution order; replayed in reverse by
/// [`Tape::backward`]. A tape is meant to live for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Tape::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn map_unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let value = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(value, op, &[a])
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape != y.shape {
            return Err(mismatch(name, x, y));
        }
        let value = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        };
        Ok(self.push(value, op, &[a, b]))
    }

    /// `(n, k) x (k, m) -> (n, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ndim() != 2 || y.ndim() != 2 || x.shape[1] != y.shape[0] {
            return Err(mismatch("matmul", x, y));
        }
        let (n, k, m) = (x.shape[0], x.shape[1], y.shape[1]);
        let value = Tensor {
            shape: vec![n, m],
            data: matmul_raw(&x.data, &y.data, n, k, m),
        };
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a length-`m` vector to every row of an `(n, m)` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if x.ndim() != 2 || r.ndim() != 1 || r.shape[0] != x.shape[1] {
            return Err(mismatch("add_row", x, r));
        }
        let m = x.shape[1];
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r.data[i % m])
            .collect();
        let value = Tensor {
            shape: x.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies row `t` of an `(n, m)` matrix by `s[t]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, w) = (self.value(a), self.value(s));
        if x.ndim() != 2 || w.ndim() != 1 || w.shape[0] != x.shape[0] {
            return Err(mismatch("scale_rows", x, w));
        }
        let m = x.shape[1];
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v * w.data[i / m])
            .collect();
        let value = Tensor {
            shape: x.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::ScaleRows(a, s), &[a, s]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map_unary(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map_unary(a, |v| v + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    /// Elementwise `max(a, c)`; the gradient passes where `a > c`.
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        self.map_unary(a, |v| v.max(c), Op::MaxConst(a, c))
    }

    fn rowwise(&mut self, a: Var, f: impl Fn(&[f64]) -> Vec<f64>, op: Op) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() == 0 || x.ndim() > 2 || x.numel() == 0 {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: format!("expected a non-empty vector or matrix, got {:?}", x.shape),
            });
        }
        let c = x.cols();
        let data = x.data.chunks(c).flat_map(&f).collect();
        let value = Tensor {
            shape: x.shape.clone(),
            data,
        };
        Ok(self.push(value, op, &[a]))
    }

    /// Softmax over the last axis (each row of a matrix).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(a, softmax, Op::Softmax(a))
    }

    /// Log-softmax over the last axis, computed via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let lsm = |row: &[f64]| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter().map(|v| v - lse).collect()
        };
        self.rowwise(a, lsm, Op::LogSoftmax(a))
    }

    /// Concatenates vectors (axis 0) or matrices along `axis` 0 or 1.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.value(v),
            None => {
                return Err(Error::InvalidArgument {
                    op: "concat",
                    msg: "no inputs".into(),
                })
            }
        };
        let nd = first.ndim();
        if nd == 0 || nd > 2 || axis >= nd {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} invalid for shape {:?}", first.shape),
            });
        }
        for &v in &inputs[1..] {
            let t = self.value(v);
            let compatible = t.ndim() == nd
                && (0..nd).all(|d| d == axis || t.shape[d] == first.shape[d]);
            if !compatible {
                return Err(mismatch("concat", first, t));
            }
        }
        let value = if axis == 0 {
            let mut shape = first.shape.clone();
            shape[0] = inputs.iter().map(|&v| self.value(v).shape[0]).sum();
            let data = inputs
                .iter()
                .flat_map(|&v| self.value(v).data.iter().copied())
                .collect();
            Tensor { shape, data }
        } else {
            let rows = first.shape[0];
            let cols: usize = inputs.iter().map(|&v| self.value(v).shape[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(r));
                }
            }
            Tensor {
                shape: vec![rows, cols],
                data,
            }
        };
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        Ok(self.push(value, op, inputs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.numel() == 0 {
            return Err(Error::InvalidArgument {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let m = x.data.iter().sum::<f64>() / x.numel() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), &[a]))
    }

    /// Mean of a matrix along `axis` (0: over rows, giving one value per column).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 2 || axis > 1 || x.shape[axis] == 0 {
            return Err(Error::InvalidArgument {
                op: "mean_axis",
                msg: format!("axis {axis} invalid for shape {:?}", x.shape),
            });
        }
        let (n, m) = (x.shape[0], x.shape[1]);
        let data = if axis == 0 {
            (0..m)
                .map(|c| (0..n).map(|r| x.data[r * m + c]).sum::<f64>() / n as f64)
                .collect()
        } else {
            x.data.chunks(m).map(|row| row.iter().sum::<f64>() / m as f64).collect()
        };
        Ok(self.push(Tensor::vector(data), Op::MeanAxis { input: a, axis }, &[a]))
    }

    /// Mean of the `k` largest entries. A vector yields a scalar; a matrix is
    /// reduced per column, yielding one value per column. Ties select the
    /// lowest index and the gradient reaches only the selected entries.
    pub fn topk_mean(&mut self, a: Var, k: usize) -> Result<Var> {
        let x = self.value(a);
        let n = match x.ndim() {
            1 | 2 => x.shape[0],
            _ => 0,
        };
        if k == 0 || k > n {
            return Err(Error::InvalidArgument {
                op: "topk_mean",
                msg: format!("k={k} invalid for shape {:?}", x.shape),
            });
        }
        let (value, selected) = if x.ndim() == 1 {
            let sel = top_k_indices(&x.data, k);
            let m = sel.iter().map(|&i| x.data[i]).sum::<f64>() / k as f64;
            (Tensor::scalar(m), vec![sel])
        } else {
            let m = x.shape[1];
            let mut vals = Vec::with_capacity(m);
            let mut sels = Vec::with_capacity(m);
            for c in 0..m {
                let col = x.column(c);
                let sel = top_k_indices(&col, k);
                vals.push(sel.iter().map(|&i| col[i]).sum::<f64>() / k as f64);
                sels.push(sel);
            }
            (Tensor::vector(vals), sels)
        };
        Ok(self.push(value, Op::TopKMean { input: a, selected }, &[a]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 2 || start + len > x.shape[1] {
            return Err(Error::InvalidArgument {
                op: "slice_cols",
                msg: format!("columns {start}..{} out of range for {:?}", start + len, x.shape),
            });
        }
        let data = x
            .data
            .chunks(x.shape[1])
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor {
            shape: vec![x.shape[0], len],
            data,
        };
        Ok(self.push(value, Op::SliceCols { input: a, start }, &[a]))
    }

    /// One direction of a GRU over a whole sequence, as a single node.
    ///
    /// `xw` is the precomputed input projection `x W + b_w` of shape
    /// `(l, 3h)` with gate blocks `[z | r | n]`, `u` is `(h, 3h)` and `b_u`
    /// is `(3h,)`. Per step:
    ///
    /// ```text
    /// a = h_prev U + b_u
    /// z = sigmoid(xw_z + a_z),  r = sigmoid(xw_r + a_r)
    /// n = tanh(xw_n + r * a_n)
    /// h = n + z * (h_prev - n)
    /// ```
    ///
    /// Steps run from the last row to the first when `reverse` is set; the
    /// output row `t` is always the state at time `t`.
    pub fn gru_sequence(&mut self, xw: Var, u: Var, b_u: Var, reverse: bool) -> Result<Var> {
        let (x, uu, bu) = (self.value(xw), self.value(u), self.value(b_u));
        let h = uu.shape.first().copied().unwrap_or(0);
        if uu.ndim() != 2 || uu.shape[1] != 3 * h || h == 0 {
            return Err(Error::InvalidArgument {
                op: "gru_sequence",
                msg: format!("recurrent weight must be (h, 3h), got {:?}", uu.shape),
            });
        }
        if x.ndim() != 2 || x.shape[1] != 3 * h {
            return Err(mismatch("gru_sequence", x, uu));
        }
        if bu.numel() != 3 * h {
            return Err(mismatch("gru_sequence", bu, uu));
        }
        let l = x.shape[0];
        let mut out = vec![0.0; l * h];
        let mut cache = GruCache {
            z: vec![0.0; l * h],
            r: vec![0.0; l * h],
            n: vec![0.0; l * h],
            uh_n: vec![0.0; l * h],
        };
        let mut h_prev = vec![0.0; h];
        let mut a = vec![0.0; 3 * h];
        for step in 0..l {
            let t = if reverse { l - 1 - step } else { step };
            a.copy_from_slice(&bu.data);
            for (p, &hp) in h_prev.iter().enumerate() {
                if hp != 0.0 {
                    for (av, &w) in a.iter_mut().zip(&uu.data[p * 3 * h..(p + 1) * 3 * h]) {
                        *av += hp * w;
                    }
                }
            }
            let xr = &x.data[t * 3 * h..(t + 1) * 3 * h];
            for j in 0..h {
                let z = sigmoid(xr[j] + a[j]);
                let r = sigmoid(xr[h + j] + a[h + j]);
                let n = (xr[2 * h + j] + r * a[2 * h + j]).tanh();
                let k = t * h + j;
                cache.z[k] = z;
                cache.r[k] = r;
                cache.n[k] = n;
                cache.uh_n[k] = a[2 * h + j];
                out[k] = n + z * (h_prev[j] - n);
            }
            h_prev.copy_from_slice(&out[t * h..(t + 1) * h]);
        }
        let value = Tensor {
            shape: vec![l, h],
            data: out,
        };
        let op = Op::GruSequence {
            xw,
            u,
            b_u,
            reverse,
            cache,
        };
        Ok(self.push(value, op, &[xw, u, b_u]))
    }

    /// Selects flat elements by index into a vector of `indices.len()` values.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.numel()) {
            return Err(Error::InvalidArgument {
                op: "gather",
                msg: format!("index {bad} out of range for {:?}", x.shape),
            });
        }
        let data = indices.iter().map(|&i| x.data[i]).collect();
        let op = Op::Gather {
            input: a,
            indices: indices.to_vec(),
        };
        Ok(self.push(Tensor::vector(data), op, &[a]))
    }

    /// Rows `start..start + len` of a matrix, kept as a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 2 || start + len > x.shape[0] {
            return Err(Error::InvalidArgument {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of range for {:?}", start + len, x.shape),
            });
        }
        let m = x.shape[1];
        let indices: Vec<usize> = (start * m..(start + len) * m).collect();
        let g = self.gather(a, &indices)?;
        self.reshape(g, vec![len, m])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Records a primitive with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let op = Op::Custom {
            inputs: inputs.to_vec(),
            backward,
        };
        self.push(value, op, inputs)
    }

    /// Propagates gradients from a scalar `loss` to every node that requires
    /// them. Gradients from earlier calls are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape.clone()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (target, delta) in contributions {
                let node = &mut self.nodes[target.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (n, k, m) = (x.shape[0], x.shape[1], y.shape[1]);
                // dA = G B^T, dB = A^T G
                let mut da = vec![0.0; n * k];
                for r in 0..n {
                    for p in 0..k {
                        let brow = &y.data[p * m..(p + 1) * m];
                        da[r * k + p] = g[r * m..(r + 1) * m]
                            .iter()
                            .zip(brow)
                            .map(|(a, b)| a * b)
                            .sum();
                    }
                }
                let mut db = vec![0.0; k * m];
                for r in 0..n {
                    for p in 0..k {
                        let xv = x.data[r * k + p];
                        if xv == 0.0 {
                            continue;
                        }
                        let dst = &mut db[p * m..(p + 1) * m];
                        for (d, gv) in dst.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                            *d += xv * gv;
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let da = g.iter().zip(&y.data).map(|(g, y)| g * y).collect();
                let db = g.iter().zip(&x.data).map(|(g, x)| g * x).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::AddRow(a, row) => {
                let m = out.shape[1];
                let mut dr = vec![0.0; m];
                for (j, gv) in g.iter().enumerate() {
                    dr[j % m] += gv;
                }
                vec![(*a, g.to_vec()), (*row, dr)]
            }
            Op::ScaleRows(a, s) => {
                let (x, w) = (val(*a), val(*s));
                let m = x.shape[1];
                let da = g.iter().enumerate().map(|(j, gv)| gv * w.data[j / m]).collect();
                let mut ds = vec![0.0; w.numel()];
                for (j, gv) in g.iter().enumerate() {
                    ds[j / m] += gv * x.data[j];
                }
                vec![(*a, da), (*s, ds)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::AddScalar(a) | Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Sigmoid(a) => {
                let d = g.iter().zip(&out.data).map(|(g, s)| g * s * (1.0 - s)).collect();
                vec![(*a, d)]
            }
            Op::Tanh(a) => {
                let d = g.iter().zip(&out.data).map(|(g, t)| g * (1.0 - t * t)).collect();
                vec![(*a, d)]
            }
            Op::Relu(a) => {
                let x = val(*a);
                let d = g
                    .iter()
                    .zip(&x.data)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::MaxConst(a, c) => {
                let x = val(*a);
                let d = g
                    .iter()
                    .zip(&x.data)
                    .map(|(g, x)| if x > c { *g } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, pr) in g.chunks(c).zip(out.data.chunks(c)) {
                    let dot: f64 = gr.iter().zip(pr).map(|(g, p)| g * p).sum();
                    d.extend(gr.iter().zip(pr).map(|(g, p)| p * (g - dot)));
                }
                vec![(*a, d)]
            }
            Op::LogSoftmax(a) => {
                let c = out.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, lr) in g.chunks(c).zip(out.data.chunks(c)) {
                    let total: f64 = gr.iter().sum();
                    d.extend(gr.iter().zip(lr).map(|(g, l)| g - l.exp() * total));
                }
                vec![(*a, d)]
            }
            Op::Concat { inputs, axis } => {
                let mut grads = Vec::with_capacity(inputs.len());
                if *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let n = val(v).numel();
                        grads.push((v, g[offset..offset + n].to_vec()));
                        offset += n;
                    }
                } else {
                    let total = out.shape[1];
                    let mut offset = 0;
                    for &v in inputs {
                        let w = val(v).shape[1];
                        let d = g
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + w].iter().copied())
                            .collect();
                        grads.push((v, d));
                        offset += w;
                    }
                }
                grads
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
            Op::Mean(a) => {
                let n = val(*a).numel();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::MeanAxis { input, axis } => {
                let x = val(*input);
                let (n, m) = (x.shape[0], x.shape[1]);
                let d = (0..n * m)
                    .map(|j| {
                        if *axis == 0 {
                            g[j % m] / n as f64
                        } else {
                            g[j / m] / m as f64
                        }
                    })
                    .collect();
                vec![(*input, d)]
            }
            Op::TopKMean { input, selected } => {
                let x = val(*input);
                let mut d = vec![0.0; x.numel()];
                let m = if x.ndim() == 1 { 1 } else { x.shape[1] };
                for (c, sel) in selected.iter().enumerate() {
                    let share = g[c] / sel.len() as f64;
                    for &r in sel {
                        d[r * m + c] += share;
                    }
                }
                vec![(*input, d)]
            }
            Op::SliceCols { input, start } => {
                let x = val(*input);
                let (n, m) = (x.shape[0], x.shape[1]);
                let len = out.shape[1];
                let mut d = vec![0.0; n * m];
                for r in 0..n {
                    d[r * m + start..r * m + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*input, d)]
            }
            Op::Gather { input, indices } => {
                let mut d = vec![0.0; val(*input).numel()];
                for (gv, &i) in g.iter().zip(indices) {
                    d[i] += gv;
                }
                vec![(*input, d)]
            }
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                inputs.iter().copied().zip(backward(&vals, out, g)).collect()
            }
            Op::GruSequence {
                xw,
                u,
                b_u,
                reverse,
                cache,
            } => {
                let uu = val(*u);
                let (l, h) = (out.shape[0], out.shape[1]);
                let mut dxw = vec![0.0; l * 3 * h];
                let mut du = vec![0.0; h * 3 * h];
                let mut dbu = vec![0.0; 3 * h];
                let mut carry = vec![0.0; h];
                let mut da = vec![0.0; 3 * h];
                let zeros = vec![0.0; h];
                for step in (0..l).rev() {
                    let t = if *reverse { l - 1 - step } else { step };
                    let h_prev = match (step, *reverse) {
                        (0, _) => &zeros[..],
                        (_, false) => &out.data[(t - 1) * h..t * h],
                        (_, true) => &out.data[(t + 1) * h..(t + 2) * h],
                    };
                    for j in 0..h {
                        let k = t * h + j;
                        let (z, r, n) = (cache.z[k], cache.r[k], cache.n[k]);
                        let dh = g[k] + carry[j];
                        let dn = dh * (1.0 - z);
                        let dz = dh * (h_prev[j] - n);
                        let dpre_n = dn * (1.0 - n * n);
                        let dr = dpre_n * cache.uh_n[k];
                        let dpre_z = dz * z * (1.0 - z);
                        let dpre_r = dr * r * (1.0 - r);
                        let row = &mut dxw[t * 3 * h..(t + 1) * 3 * h];
                        row[j] = dpre_z;
                        row[h + j] = dpre_r;
                        row[2 * h + j] = dpre_n;
                        da[j] = dpre_z;
                        da[h + j] = dpre_r;
                        da[2 * h + j] = dpre_n * r;
                        carry[j] = dh * z;
                    }
                    for (d, a) in dbu.iter_mut().zip(&da) {
                        *d += a;
                    }
                    for p in 0..h {
                        let urow = &uu.data[p * 3 * h..(p + 1) * 3 * h];
                        carry[p] += urow.iter().zip(&da).map(|(w, a)| w * a).sum::<f64>();
                        if h_prev[p] != 0.0 {
                            for (d, a) in du[p * 3 * h..(p + 1) * 3 * h].iter_mut().zip(&da) {
                                *d += h_prev[p] * a;
                            }
                        }
                    }
                }
                vec![(*xw, dxw), (*u, du), (*b_u, dbu)]
            }
        }
    }
}
