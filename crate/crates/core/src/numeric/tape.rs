use super::{elu, group_softmax, leaky_relu, mismatch, sigmoid, NumericError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec { w: Var, x: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, index: Vec<usize> },
    Add(Var, Var),
    LeakyRelu { x: Var, slope: f64 },
    Elu { x: Var, alpha: f64 },
    Sigmoid(Var),
    GroupSoftmax { x: Var, groups: Vec<usize> },
    Aggregate { weights: Var, x: Var, src: Vec<usize>, dst: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Bce { p: Var, labels: Vec<f64>, pos_weight: f64 },
}

#[derive(Debug)]
struct Entry {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in evaluation order; [`Tape::backward`] replays them
/// in exact reverse order.
///
/// Gradients of `requires_grad` leaves accumulate across repeated
/// `backward` calls until [`Tape::zero_grad`] is called.
#[derive(Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.entries[p.0].needs_grad);
        self.entries.push(Entry {
            value: Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            op,
            needs_grad,
        });
        Var(self.entries.len() - 1)
    }

    /// Records an input. Its gradient is tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad;
        self.entries.push(Entry {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.entries.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.entries[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.entries[v.0].value.data
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.entries[v.0].value.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.value.grad = None;
        }
    }

    /// `y = W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NumericError> {
        let (wt, xt) = (self.value(w), self.value(x));
        let (m, n) = match wt.shape.as_slice() {
            [m, n] => (*m, *n),
            s => return Err(mismatch("matvec", format!("weight must be 2-D, got {s:?}"))),
        };
        if xt.shape != [n] {
            return Err(mismatch(
                "matvec",
                format!("weight {:?} vs input {:?}", wt.shape, xt.shape),
            ));
        }
        let y: Vec<f64> = (0..m)
            .map(|i| dot(&wt.data[i * n..(i + 1) * n], &xt.data))
            .collect();
        Ok(self.push(vec![m], y, Op::MatVec { w, x }, &[w, x]))
    }

    /// Row-wise affine map: `y[r] = W x[r] + b` for `x: [rows, n]` (or a
    /// single vector `[n]`), `W: [m, n]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericError> {
        let (xt, wt) = (self.value(x), self.value(w));
        let (m, n) = match wt.shape.as_slice() {
            [m, n] => (*m, *n),
            s => return Err(mismatch("linear", format!("weight must be 2-D, got {s:?}"))),
        };
        let (rows, vector_in) = match xt.shape.as_slice() {
            [r, c] if *c == n => (*r, false),
            [c] if *c == n => (1, true),
            s => {
                return Err(mismatch(
                    "linear",
                    format!("input {s:?} vs weight {:?}", wt.shape),
                ))
            }
        };
        if let Some(b) = b {
            if self.value(b).shape != [m] {
                return Err(mismatch(
                    "linear",
                    format!("bias {:?} vs {m} outputs", self.value(b).shape),
                ));
            }
        }
        let bias = b.map(|b| self.data(b));
        let mut y = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xt.data[r * n..(r + 1) * n];
            let yr = &mut y[r * m..(r + 1) * m];
            for (i, out) in yr.iter_mut().enumerate() {
                *out = dot(&wt.data[i * n..(i + 1) * n], xr) + bias.map_or(0.0, |b| b[i]);
            }
        }
        let shape = if vector_in { vec![m] } else { vec![rows, m] };
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(shape, y, Op::Linear { x, w, b }, &parents))
    }

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != 1 {
                return Err(mismatch("concat", format!("part has shape {:?}", t.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let n = data.len();
        Ok(self.push(vec![n], data, Op::Concat(parts.to_vec()), parts))
    }

    /// Concatenates matrices with equal row counts along columns. A 1-D
    /// part of length `rows` is treated as a single column.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| {
                let t = self.value(p);
                match t.shape.as_slice() {
                    [r, c] => (*r, *c),
                    [r] => (*r, 1),
                    _ => (0, 0),
                }
            })
            .collect();
        let rows = dims.first().map_or(0, |d| d.0);
        if dims.iter().any(|d| d.0 != rows) {
            return Err(mismatch("concat_cols", format!("row counts differ: {dims:?}")));
        }
        let cols: usize = dims.iter().map(|d| d.1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                data.extend_from_slice(&self.data(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(vec![rows, cols], data, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Selects rows of a matrix (or entries of a vector) by index.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, NumericError> {
        let t = self.value(x);
        let (rows, cols, shape) = match t.shape.as_slice() {
            [r, c] => (*r, *c, vec![index.len(), *c]),
            [r] => (*r, 1, vec![index.len()]),
            s => return Err(mismatch("gather_rows", format!("shape {s:?}"))),
        };
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(mismatch("gather_rows", format!("index {bad} out of {rows} rows")));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(&t.data[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            shape,
            data,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(mismatch("add", format!("{:?} vs {:?}", ta.shape, tb.shape)));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(shape, data, Op::Add(a, b), &[a, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| f(v)).collect();
        let shape = t.shape.clone();
        self.push(shape, data, op, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| leaky_relu(v, slope), Op::LeakyRelu { x, slope })
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(x, |v| elu(v, alpha), Op::Elu { x, alpha })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Softmax within groups. `groups[k]` names the group of entry `k`;
    /// every group id below the maximum must be non-empty.
    pub fn group_softmax(&mut self, x: Var, groups: &[usize]) -> Result<Var, NumericError> {
        let t = self.value(x);
        if t.len() != groups.len() {
            return Err(mismatch(
                "group_softmax",
                format!("{} values vs {} group ids", t.len(), groups.len()),
            ));
        }
        let n_groups = groups.iter().map(|g| g + 1).max().unwrap_or(0);
        let data = group_softmax(&t.data, groups, n_groups);
        let shape = t.shape.clone();
        Ok(self.push(
            shape,
            data,
            Op::GroupSoftmax {
                x,
                groups: groups.to_vec(),
            },
            &[x],
        ))
    }

    /// Weighted message sum: `out[dst[e]] += w[e] * x[src[e]]`, producing
    /// `n_out` rows.
    pub fn aggregate(
        &mut self,
        weights: Var,
        x: Var,
        src: &[usize],
        dst: &[usize],
        n_out: usize,
    ) -> Result<Var, NumericError> {
        let (tw, tx) = (self.value(weights), self.value(x));
        let (rows, cols) = match tx.shape.as_slice() {
            [r, c] => (*r, *c),
            s => return Err(mismatch("aggregate", format!("features must be 2-D, got {s:?}"))),
        };
        if tw.len() != src.len() || src.len() != dst.len() {
            return Err(mismatch(
                "aggregate",
                format!("{} weights, {} sources, {} destinations", tw.len(), src.len(), dst.len()),
            ));
        }
        if src.iter().any(|&s| s >= rows) || dst.iter().any(|&d| d >= n_out) {
            return Err(mismatch("aggregate", "edge index out of range"));
        }
        let mut out = vec![0.0; n_out * cols];
        for (e, (&s, &d)) in src.iter().zip(dst).enumerate() {
            let w = tw.data[e];
            let xs = &tx.data[s * cols..(s + 1) * cols];
            for (o, v) in out[d * cols..(d + 1) * cols].iter_mut().zip(xs) {
                *o += w * v;
            }
        }
        Ok(self.push(
            vec![n_out, cols],
            out,
            Op::Aggregate {
                weights,
                x,
                src: src.to_vec(),
                dst: dst.to_vec(),
            },
            &[weights, x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(vec![], vec![s], Op::Mean(x), &[x])
    }

    /// Mean weighted binary cross-entropy of probabilities against labels.
    pub fn bce(&mut self, p: Var, labels: &[f64], pos_weight: f64) -> Result<Var, NumericError> {
        let pd = self.data(p);
        if pd.len() != labels.len() {
            return Err(mismatch(
                "bce",
                format!("{} probabilities vs {} labels", pd.len(), labels.len()),
            ));
        }
        let loss = bce_value(pd, labels, pos_weight);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::Bce {
                p,
                labels: labels.to_vec(),
                pos_weight,
            },
            &[p],
        ))
    }

    /// Smallest distance of any recorded activation input from its kink at
    /// zero. Finite-difference checks use this to avoid subgradients.
    pub fn min_kink_margin(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| match e.op {
                Op::LeakyRelu { x, .. } | Op::Elu { x, .. } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.data(x).iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Accumulates `d loss / d leaf` into every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(NumericError::NotScalar(lt.shape.clone()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.entries.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let entry = &self.entries[i];
            if !entry.needs_grad || matches!(entry.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let y = &entry.value.data;
            match &entry.op {
                Op::Leaf => unreachable!(),
                Op::MatVec { w, x } => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let n = xt.len();
                    if self.entries[w.0].needs_grad {
                        let dw = slot(&mut adj, *w, wt.len());
                        for (i, gi) in g.iter().enumerate() {
                            for (d, xv) in dw[i * n..(i + 1) * n].iter_mut().zip(&xt.data) {
                                *d += gi * xv;
                            }
                        }
                    }
                    if self.entries[x.0].needs_grad {
                        let dx = slot(&mut adj, *x, n);
                        for (i, gi) in g.iter().enumerate() {
                            for (d, wv) in dx.iter_mut().zip(&wt.data[i * n..(i + 1) * n]) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xt, wt) = (self.value(*x), self.value(*w));
                    let (m, n) = wt.rows_cols();
                    let rows = xt.len() / n;
                    if self.entries[w.0].needs_grad {
                        let dw = slot(&mut adj, *w, m * n);
                        for r in 0..rows {
                            let xr = &xt.data[r * n..(r + 1) * n];
                            for (i, gi) in g[r * m..(r + 1) * m].iter().enumerate() {
                                if *gi != 0.0 {
                                    axpy(*gi, xr, &mut dw[i * n..(i + 1) * n]);
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        if self.entries[b.0].needs_grad {
                            let db = slot(&mut adj, *b, m);
                            for r in 0..rows {
                                for (d, gi) in db.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                                    *d += gi;
                                }
                            }
                        }
                    }
                    if self.entries[x.0].needs_grad {
                        let dx = slot(&mut adj, *x, rows * n);
                        for r in 0..rows {
                            let dxr = &mut dx[r * n..(r + 1) * n];
                            for (i, gi) in g[r * m..(r + 1) * m].iter().enumerate() {
                                if *gi != 0.0 {
                                    axpy(*gi, &wt.data[i * n..(i + 1) * n], dxr);
                                }
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        if self.entries[p.0].needs_grad {
                            let dp = slot(&mut adj, *p, n);
                            for (d, gi) in dp.iter_mut().zip(&g[off..off + n]) {
                                *d += gi;
                            }
                        }
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, cols) = entry.value.rows_cols();
                    let widths: Vec<usize> = parts
                        .iter()
                        .map(|p| self.value(*p).len() / rows.max(1))
                        .collect();
                    let mut off = 0;
                    for (p, &c) in parts.iter().zip(&widths) {
                        if self.entries[p.0].needs_grad {
                            let dp = slot(&mut adj, *p, rows * c);
                            for r in 0..rows {
                                for k in 0..c {
                                    dp[r * c + k] += g[r * cols + off + k];
                                }
                            }
                        }
                        off += c;
                    }
                }
                Op::GatherRows { x, index } => {
                    let xt = self.value(*x);
                    let cols = if index.is_empty() { 0 } else { g.len() / index.len() };
                    let dx = slot(&mut adj, *x, xt.len());
                    for (k, &i) in index.iter().enumerate() {
                        for c in 0..cols {
                            dx[i * cols + c] += g[k * cols + c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for p in [a, b] {
                        if self.entries[p.0].needs_grad {
                            let dp = slot(&mut adj, *p, g.len());
                            for (d, gi) in dp.iter_mut().zip(&g) {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xd = &self.value(*x).data;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), xv) in dx.iter_mut().zip(&g).zip(xd) {
                        *d += if *xv > 0.0 { *gi } else { gi * slope };
                    }
                }
                Op::Elu { x, alpha } => {
                    let xd = &self.value(*x).data;
                    let dx = slot(&mut adj, *x, g.len());
                    for (((d, gi), xv), yv) in dx.iter_mut().zip(&g).zip(xd).zip(y) {
                        *d += if *xv > 0.0 { *gi } else { gi * (yv + alpha) };
                    }
                }
                Op::Sigmoid(x) => {
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), yv) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * yv * (1.0 - yv);
                    }
                }
                Op::GroupSoftmax { x, groups } => {
                    let n_groups = groups.iter().map(|k| k + 1).max().unwrap_or(0);
                    let mut inner = vec![0.0; n_groups];
                    for ((gi, yv), &k) in g.iter().zip(y).zip(groups) {
                        inner[k] += gi * yv;
                    }
                    let dx = slot(&mut adj, *x, g.len());
                    for (((d, gi), yv), &k) in dx.iter_mut().zip(&g).zip(y).zip(groups) {
                        *d += yv * (gi - inner[k]);
                    }
                }
                Op::Aggregate {
                    weights,
                    x,
                    src,
                    dst,
                } => {
                    let (tw, tx) = (self.value(*weights), self.value(*x));
                    let (_, cols) = tx.rows_cols();
                    if self.entries[weights.0].needs_grad {
                        let dw = slot(&mut adj, *weights, tw.len());
                        for (e, (&s, &d)) in src.iter().zip(dst).enumerate() {
                            dw[e] += dot(&g[d * cols..(d + 1) * cols], &tx.data[s * cols..(s + 1) * cols]);
                        }
                    }
                    if self.entries[x.0].needs_grad {
                        let dx = slot(&mut adj, *x, tx.len());
                        for (e, (&s, &d)) in src.iter().zip(dst).enumerate() {
                            axpy(tw.data[e], &g[d * cols..(d + 1) * cols], &mut dx[s * cols..(s + 1) * cols]);
                        }
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    for d in slot(&mut adj, *x, n).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let s = g[0] / n as f64;
                    for d in slot(&mut adj, *x, n).iter_mut() {
                        *d += s;
                    }
                }
                Op::Bce {
                    p,
                    labels,
                    pos_weight,
                } => {
                    let pd = &self.value(*p).data;
                    let q = pd.len() as f64;
                    let dp = slot(&mut adj, *p, pd.len());
                    for ((d, &pv), &yv) in dp.iter_mut().zip(pd).zip(labels) {
                        if pv > BCE_CLAMP && pv < 1.0 - BCE_CLAMP {
                            *d += g[0] * (-pos_weight * yv / pv + (1.0 - yv) / (1.0 - pv)) / q;
                        }
                    }
                }
            }
        }

        for (entry, a) in self.entries.iter_mut().zip(adj) {
            if !(matches!(entry.op, Op::Leaf) && entry.value.requires_grad) {
                continue;
            }
            let Some(a) = a else { continue };
            match &mut entry.value.grad {
                Some(g) => {
                    for (gv, av) in g.iter_mut().zip(&a) {
                        *gv += av;
                    }
                }
                None => entry.value.grad = Some(a),
            }
        }
        Ok(())
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; n])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Mean weighted binary cross-entropy with clamped probabilities.
pub(crate) fn bce_value(p: &[f64], y: &[f64], pos_weight: f64) -> f64 {
    let q = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&pv, &yv)| {
            let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(pos_weight * yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln())
        })
        .sum::<f64>()
        / q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Central-difference gradient of `f` with respect to `x`.
    fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            out.push((fp - fm) / (2.0 * h));
        }
        out
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-10 {
            (a - b).abs()
        } else {
            (a - b).abs() / scale
        }
    }

    #[test]
    fn matvec_identity_and_hand_case() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let x = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let y = t.matvec(w, x).unwrap();
        assert_eq!(t.data(y), &[3.0, 7.0]);

        let i = t.constant(Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        let v = t.constant(Tensor::vector(vec![0.3, -2.0, 5.5]));
        let y = t.matvec(i, v).unwrap();
        assert_eq!(t.data(y), &[0.3, -2.0, 5.5]);
    }

    #[test]
    fn matvec_shape_mismatch() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let x = t.constant(Tensor::vector(vec![1.0, 1.0]));
        assert!(matches!(t.matvec(w, x), Err(NumericError::ShapeMismatch { .. })));
    }

    #[test]
    fn matvec_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, n) = (3, 4);
        let w0 = rand_vec(&mut rng, m * n);
        let x0 = rand_vec(&mut rng, n);
        let c = rand_vec(&mut rng, m);
        // loss = sum(c * (W x)) via a second matvec with c as a 1 x m matrix
        let run = |w: &[f64], x: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let wv = t.param(Tensor::matrix(m, n, w.to_vec()).unwrap());
            let xv = t.param(Tensor::vector(x.to_vec()));
            let cv = t.constant(Tensor::matrix(1, m, c.clone()).unwrap());
            let y = t.matvec(wv, xv).unwrap();
            let z = t.matvec(cv, y).unwrap();
            let l = t.sum(z);
            t.backward(l).unwrap();
            (t.data(l)[0], t.grad(wv).unwrap().to_vec(), t.grad(xv).unwrap().to_vec())
        };
        let (_, gw, gx) = run(&w0, &x0);
        let fw = fd_grad(&|w| run(w, &x0).0, &w0, 1e-5);
        let fx = fd_grad(&|x| run(&w0, x).0, &x0, 1e-5);
        for (a, b) in gw.iter().zip(&fw).chain(gx.iter().zip(&fx)) {
            assert!(rel_err(*a, *b) < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn concat_examples_and_slicing() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0]));
        let b = t.constant(Tensor::vector(vec![2.0]));
        let c = t.constant(Tensor::vector(vec![3.0]));
        let y = t.concat(&[a, b, c]).unwrap();
        assert_eq!(t.data(y), &[1.0, 2.0, 3.0]);
        let e = t.constant(Tensor::vector(vec![]));
        let x = t.constant(Tensor::vector(vec![9.0]));
        let y = t.concat(&[e, x]).unwrap();
        assert_eq!(t.data(y), &[9.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lens = [3usize, 0, 5, 1];
        let parts: Vec<Vec<f64>> = lens.iter().map(|&n| rand_vec(&mut rng, n)).collect();
        let vars: Vec<Var> = parts.iter().map(|p| t.constant(Tensor::vector(p.clone()))).collect();
        let y = t.concat(&vars).unwrap();
        let mut off = 0;
        for p in &parts {
            assert_eq!(&t.data(y)[off..off + p.len()], p.as_slice());
            off += p.len();
        }
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x0 = rand_vec(&mut rng, 12);
        for v in &mut x0 {
            if v.abs() < 1e-3 {
                *v += 0.01;
            }
        }
        type Act = fn(&mut Tape, Var) -> Var;
        let acts: [Act; 3] = [
            |t, x| t.leaky_relu(x, 0.2),
            |t, x| t.elu(x, 1.0),
            |t, x| t.sigmoid(x),
        ];
        let c = rand_vec(&mut rng, 12);
        for act in acts {
            let run = |x: &[f64]| -> (f64, Vec<f64>) {
                let mut t = Tape::new();
                let xv = t.param(Tensor::vector(x.to_vec()));
                let cv = t.constant(Tensor::matrix(1, 12, c.clone()).unwrap());
                let y = act(&mut t, xv);
                let z = t.matvec(cv, y).unwrap();
                let l = t.sum(z);
                t.backward(l).unwrap();
                (t.data(l)[0], t.grad(xv).unwrap().to_vec())
            };
            let (_, g) = run(&x0);
            let f = fd_grad(&|x| run(x).0, &x0, 1e-5);
            for (a, b) in g.iter().zip(&f) {
                assert!(rel_err(*a, *b) < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sum_of_params_has_unit_gradients() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let b = t.param(Tensor::matrix(2, 2, vec![0.5; 4]).unwrap());
        let sa = t.sum(a);
        let sb = t.sum(b);
        let both = t.add(sa, sb).unwrap();
        t.backward(both).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(t.grad(b).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.0, 2.0]));
        let s = t.sum(a);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[2.0, 2.0]);
        t.zero_grad();
        assert!(t.grad(a).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(t.backward(a), Err(NumericError::NotScalar(vec![2])));
    }

    #[test]
    fn sigmoid_of_dot_has_closed_form_gradient() {
        let w = vec![0.3, -1.2, 0.7];
        let x = vec![1.5, 0.4, -0.9];
        let mut t = Tape::new();
        let wv = t.param(Tensor::matrix(1, 3, w.clone()).unwrap());
        let xv = t.constant(Tensor::vector(x.clone()));
        let z = t.matvec(wv, xv).unwrap();
        let s = t.sigmoid(z);
        let l = t.sum(s);
        t.backward(l).unwrap();
        let zval: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let sig = 1.0 / (1.0 + (-zval).exp());
        for (g, xi) in t.grad(wv).unwrap().iter().zip(&x) {
            assert!((g - sig * (1.0 - sig) * xi).abs() < 1e-14);
        }
    }

    #[test]
    fn group_softmax_and_aggregate_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let groups = [0usize, 0, 1, 2, 2, 2];
        let src = [1usize, 2, 0, 0, 1, 2];
        let dst = [0usize, 0, 1, 2, 2, 2];
        let s0 = rand_vec(&mut rng, 6);
        let x0 = rand_vec(&mut rng, 3 * 2);
        let c = rand_vec(&mut rng, 3 * 2);
        let run = |s: &[f64], x: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let sv = t.param(Tensor::vector(s.to_vec()));
            let xv = t.param(Tensor::matrix(3, 2, x.to_vec()).unwrap());
            let w = t.group_softmax(sv, &groups).unwrap();
            let h = t.aggregate(w, xv, &src, &dst, 3).unwrap();
            let cv = t.constant(Tensor::matrix(1, 6, c.clone()).unwrap());
            let r0 = t.gather_rows(h, &[0]).unwrap();
            let r1 = t.gather_rows(h, &[1]).unwrap();
            let r2 = t.gather_rows(h, &[2]).unwrap();
            let cat = t.concat_cols(&[r0, r1, r2]).unwrap();
            let z = t.linear(cat, cv, None).unwrap();
            let l = t.sum(z);
            t.backward(l).unwrap();
            (t.data(l)[0], t.grad(sv).unwrap().to_vec(), t.grad(xv).unwrap().to_vec())
        };
        let (_, gs, gx) = run(&s0, &x0);
        let fs = fd_grad(&|s| run(s, &x0).0, &s0, 1e-5);
        let fx = fd_grad(&|x| run(&s0, x).0, &x0, 1e-5);
        for (a, b) in gs.iter().zip(&fs).chain(gx.iter().zip(&fx)) {
            assert!(rel_err(*a, *b) < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn bce_gradient_and_value() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let p0 = vec![0.3, 0.2, 0.9, 0.6];
        let run = |p: &[f64]| -> (f64, Vec<f64>) {
            let mut t = Tape::new();
            let pv = t.param(Tensor::vector(p.to_vec()));
            let l = t.bce(pv, &y, 2.0).unwrap();
            t.backward(l).unwrap();
            (t.data(l)[0], t.grad(pv).unwrap().to_vec())
        };
        let (_, g) = run(&p0);
        let f = fd_grad(&|p| run(p).0, &p0, 1e-6);
        for (a, b) in g.iter().zip(&f) {
            assert!(rel_err(*a, *b) < 1e-6);
        }
        assert!((bce_value(&[0.5, 0.5], &[1.0, 0.0], 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn linear_matches_per_row_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_vec(&mut rng, 3 * 4);
        let w = rand_vec(&mut rng, 2 * 4);
        let b = rand_vec(&mut rng, 2);
        let mut t = Tape::new();
        let xv = t.constant(Tensor::matrix(3, 4, x.clone()).unwrap());
        let wv = t.constant(Tensor::matrix(2, 4, w.clone()).unwrap());
        let bv = t.constant(Tensor::vector(b.clone()));
        let y = t.linear(xv, wv, Some(bv)).unwrap();
        for r in 0..3 {
            let xr = t.constant(Tensor::vector(x[r * 4..(r + 1) * 4].to_vec()));
            let yr = t.matvec(wv, xr).unwrap();
            for i in 0..2 {
                assert!((t.data(y)[r * 2 + i] - t.data(yr)[i] - b[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tape_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut t = Tape::new();
            let w = t.param(Tensor::matrix(4, 3, rand_vec(&mut rng, 12)).unwrap());
            let x = t.constant(Tensor::matrix(5, 3, rand_vec(&mut rng, 15)).unwrap());
            let h = t.linear(x, w, None).unwrap();
            let e = t.elu(h, 1.0);
            let s = t.sigmoid(e);
            let l = t.mean(s);
            t.backward(l).unwrap();
            (t.data(l).to_vec(), t.grad(w).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
