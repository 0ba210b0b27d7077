use super::{Grads, NnError, ParamStore, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    Linear(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Vec<f64>),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Gather(Var, Vec<usize>),
    Scatter(Var, Vec<usize>),
    SumRows(Var),
    SumAll(Var),
    Softmax(Var),
    SoftmaxCe(Var, usize, Vec<f64>),
    BceLogit(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Records one forward pass for reverse-mode differentiation. Values are
/// `n x m` row-major matrices; vectors are single rows. Parameters are read
/// from the store once per tape.
#[derive(Debug)]
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    fault: Option<String>,
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NnError {
    NnError::ShapeMismatch { op, lhs: a, rhs: b }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            fault: None,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        if self.fault.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.fault = Some(format!("{op:?}").chars().take(60).collect());
        }
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// First non-finite op recorded, if any.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            Some(op) => Err(NnError::NumericFault(op.clone())),
            None => Ok(()),
        }
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(mismatch("constant", (rows, cols), (value.len(), 1)));
        }
        Ok(self.push(rows, cols, value, Op::Constant))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Constant)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param_id(id))
    }

    pub fn param_id(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let (r, c) = self.store.tensor(id).matrix_dims();
        let v = self.push(r, c, self.store.values_f64(id), Op::Param(id));
        self.param_vars[id] = Some(v);
        v
    }

    /// `x · wᵀ` for `x: n x k`, `w: m x k`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let ((n, k), (m, k2)) = (self.shape(x), self.shape(w));
        if k != k2 {
            return Err(mismatch("linear", (n, k), (m, k2)));
        }
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let xr = &xv[i * k..(i + 1) * k];
            for j in 0..m {
                let wr = &wv[j * k..(j + 1) * k];
                out[i * m + j] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        Ok(self.push(n, m, out, Op::Linear(x, w)))
    }

    /// `a · b` for `a: n x k`, `b: k x m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(mismatch("matmul", (n, k), (k2, m)));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let s = av[i * k + p];
                if s == 0.0 {
                    continue;
                }
                let br = &bv[p * m..(p + 1) * m];
                out[i * m..(i + 1) * m]
                    .iter_mut()
                    .zip(br)
                    .for_each(|(o, b)| *o += s * b);
            }
        }
        Ok(self.push(n, m, out, Op::MatMul(a, b)))
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(sa.0, sa.1, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x m` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let ((n, m), (r, m2)) = (self.shape(x), self.shape(row));
        if r != 1 || m != m2 {
            return Err(mismatch("add_row", (n, m), (r, m2)));
        }
        let rv = &self.nodes[row.0].value;
        let out = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rv[i % m])
            .collect();
        Ok(self.push(n, m, out, Op::AddRow(x, row)))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let (n, m) = self.shape(x);
        if factors.len() != n {
            return Err(mismatch("scale_rows", (n, m), (factors.len(), 1)));
        }
        let out = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v * factors[i / m])
            .collect();
        Ok(self.push(n, m, out, Op::ScaleRows(x, factors)))
    }

    /// `a·x + b` elementwise with constants.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let (n, m) = self.shape(x);
        let out = self.nodes[x.0].value.iter().map(|&v| a * v + b).collect();
        self.push(n, m, out, Op::Affine(x, a))
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (n, m) = self.shape(x);
        let out = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        self.push(n, m, out, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Column-wise concatenation of equal-height matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != n {
                return Err(mismatch("concat", (n, cols), s));
            }
            cols += s.1;
        }
        let mut out = Vec::with_capacity(n * cols);
        for i in 0..n {
            for &p in parts {
                let m = self.nodes[p.0].cols;
                out.extend_from_slice(&self.nodes[p.0].value[i * m..(i + 1) * m]);
            }
        }
        Ok(self.push(n, cols, out, Op::Concat(parts.to_vec())))
    }

    /// Row-wise stacking of equal-width matrices.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.1 != m {
                return Err(mismatch("stack", (rows, m), s));
            }
            rows += s.0;
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(rows, m, out, Op::Stack(parts.to_vec())))
    }

    /// Rows `idx[0], idx[1], ...` of `x`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (n, m) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(mismatch("gather", (n, m), (bad, m)));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            out.extend_from_slice(&xv[i * m..(i + 1) * m]);
        }
        Ok(self.push(idx.len(), m, out, Op::Gather(x, idx)))
    }

    /// Sums row `r` of `x` into output row `idx[r]`, giving `n_out` rows.
    pub fn scatter(&mut self, x: Var, idx: Vec<usize>, n_out: usize) -> Result<Var> {
        let (n, m) = self.shape(x);
        if idx.len() != n || idx.iter().any(|&i| i >= n_out) {
            return Err(mismatch("scatter", (n, m), (idx.len(), n_out)));
        }
        let mut out = vec![0.0; n_out * m];
        let xv = &self.nodes[x.0].value;
        for (r, &t) in idx.iter().enumerate() {
            out[t * m..(t + 1) * m]
                .iter_mut()
                .zip(&xv[r * m..(r + 1) * m])
                .for_each(|(o, v)| *o += v);
        }
        Ok(self.push(n_out, m, out, Op::Scatter(x, idx)))
    }

    /// Column sums as a `1 x m` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (n, m) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; m];
        for i in 0..n {
            out.iter_mut()
                .zip(&xv[i * m..(i + 1) * m])
                .for_each(|(o, v)| *o += v);
        }
        self.push(1, m, out, Op::SumRows(x))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let n = self.shape(x).0;
        let s = self.sum_rows(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (n, m) = self.shape(x);
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..n {
            softmax_in_place(&mut out[i * m..(i + 1) * m]);
        }
        self.push(n, m, out, Op::Softmax(x))
    }

    /// `-log softmax(x)[target]` with all entries of `x` as one distribution.
    pub fn softmax_ce(&mut self, x: Var, target: usize) -> Result<Var> {
        let (n, m) = self.shape(x);
        if target >= n * m {
            return Err(mismatch("softmax_ce", (n, m), (target, 1)));
        }
        let mut p = self.nodes[x.0].value.clone();
        softmax_in_place(&mut p);
        let xv = &self.nodes[x.0].value;
        let max = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + xv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - xv[target];
        Ok(self.push(1, 1, vec![loss], Op::SoftmaxCe(x, target, p)))
    }

    /// Binary cross-entropy of `sigmoid(x)` for a `1 x 1` logit.
    pub fn bce_logit(&mut self, x: Var, target: f64) -> Result<Var> {
        if self.shape(x) != (1, 1) {
            return Err(mismatch("bce_logit", self.shape(x), (1, 1)));
        }
        let v = self.scalar(x);
        // softplus(v) - t v, stable for both signs
        let loss = v.max(0.0) + (-v.abs()).exp().ln_1p() - target * v;
        Ok(self.push(1, 1, vec![loss], Op::BceLogit(x, target)))
    }

    /// Gradients of the `1 x 1` value `loss` with respect to every parameter
    /// it depends on.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        self.check()?;
        if self.shape(loss) != (1, 1) {
            return Err(mismatch("backward", self.shape(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Grads::empty(self.store.len());
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (n, m) = (node.rows, node.cols);
            let mut acc = |v: Var, d: Vec<f64>| match &mut grads[v.0] {
                Some(b) => b.iter_mut().zip(&d).for_each(|(a, x)| *a += x),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::Linear(x, w) => {
                    let k = self.nodes[x.0].cols;
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let mut dx = vec![0.0; n * k];
                    let mut dw = vec![0.0; m * k];
                    for r in 0..n {
                        for j in 0..m {
                            let gj = g[r * m + j];
                            if gj == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                dx[r * k + p] += gj * wv[j * k + p];
                                dw[j * k + p] += gj * xv[r * k + p];
                            }
                        }
                    }
                    acc(*x, dx);
                    acc(*w, dw);
                }
                Op::MatMul(a, b) => {
                    let k = self.nodes[a.0].cols;
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut da = vec![0.0; n * k];
                    let mut db = vec![0.0; k * m];
                    for r in 0..n {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g[r * m + j] * bv[p * m + j];
                                db[p * m + j] += av[r * k + p] * g[r * m + j];
                            }
                            da[r * k + p] = s;
                        }
                    }
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.iter().map(|x| -x).collect());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                    acc(*b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
                Op::AddRow(x, row) => {
                    let mut dr = vec![0.0; m];
                    for (idx, v) in g.iter().enumerate() {
                        dr[idx % m] += v;
                    }
                    acc(*row, dr);
                    acc(*x, g);
                }
                Op::ScaleRows(x, f) => {
                    acc(
                        *x,
                        g.iter()
                            .enumerate()
                            .map(|(idx, v)| v * f[idx / m])
                            .collect(),
                    );
                }
                Op::Affine(x, a) => acc(*x, g.iter().map(|v| v * a).collect()),
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    acc(
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                            .collect(),
                    );
                }
                Op::Sigmoid(x) => {
                    acc(
                        *x,
                        g.iter()
                            .zip(&node.value)
                            .map(|(d, y)| d * y * (1.0 - y))
                            .collect(),
                    );
                }
                Op::Tanh(x) => {
                    acc(
                        *x,
                        g.iter()
                            .zip(&node.value)
                            .map(|(d, y)| d * (1.0 - y * y))
                            .collect(),
                    );
                }
                Op::Exp(x) => acc(*x, g.iter().zip(&node.value).map(|(d, y)| d * y).collect()),
                Op::Clamp(x, lo, hi) => {
                    let xv = &self.nodes[x.0].value;
                    acc(
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(d, &v)| if v >= *lo && v <= *hi { *d } else { 0.0 })
                            .collect(),
                    );
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].cols;
                        let mut d = Vec::with_capacity(n * pc);
                        for r in 0..n {
                            d.extend_from_slice(&g[r * m + off..r * m + off + pc]);
                        }
                        off += pc;
                        acc(*p, d);
                    }
                }
                Op::Stack(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        acc(*p, g[off..off + len].to_vec());
                        off += len;
                    }
                }
                Op::Gather(x, idx) => {
                    let mut d = vec![0.0; self.nodes[x.0].value.len()];
                    for (r, &s) in idx.iter().enumerate() {
                        d[s * m..(s + 1) * m]
                            .iter_mut()
                            .zip(&g[r * m..(r + 1) * m])
                            .for_each(|(o, v)| *o += v);
                    }
                    acc(*x, d);
                }
                Op::Scatter(x, idx) => {
                    let mut d = Vec::with_capacity(idx.len() * m);
                    for &t in idx {
                        d.extend_from_slice(&g[t * m..(t + 1) * m]);
                    }
                    acc(*x, d);
                }
                Op::SumRows(x) => {
                    let rows = self.nodes[x.0].rows;
                    let mut d = Vec::with_capacity(rows * m);
                    for _ in 0..rows {
                        d.extend_from_slice(&g);
                    }
                    acc(*x, d);
                }
                Op::SumAll(x) => acc(*x, vec![g[0]; self.nodes[x.0].value.len()]),
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut d = vec![0.0; n * m];
                    for r in 0..n {
                        let row = r * m..(r + 1) * m;
                        let dot: f64 = g[row.clone()]
                            .iter()
                            .zip(&y[row.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        for c in row {
                            d[c] = y[c] * (g[c] - dot);
                        }
                    }
                    acc(*x, d);
                }
                Op::SoftmaxCe(x, t, p) => {
                    let mut d: Vec<f64> = p.iter().map(|v| v * g[0]).collect();
                    d[*t] -= g[0];
                    acc(*x, d);
                }
                Op::BceLogit(x, t) => {
                    let v = self.nodes[x.0].value[0];
                    acc(*x, vec![(sigmoid(v) - t) * g[0]]);
                }
            }
        }
        if !out.is_finite() {
            return Err(NnError::NumericFault("backward".into()));
        }
        Ok(out)
    }
}
