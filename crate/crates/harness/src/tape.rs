//! Minimal reverse-mode differentiation over row-batched matrices.
//!
//! Every node holds a `rows x cols` value where rows index samples. Losses
//! reduce to a `1 x 1` node.

use aq_core::Matrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("cross_entropy: {0}")]
    Target(String),
}

/// Handle to a node on the tape.
pub type Var = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Dense { x: Var, w: Var, b: Option<Var> },
    Tanh(Var),
    Relu(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Mse { pred: Var, target: Matrix<f64> },
    L1 { pred: Var, target: Matrix<f64> },
    CrossEntropy { logits: Var, groups: usize, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix<f64>>,
}

/// Adjoints of every node after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Matrix<f64>>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Gradient of a parameter registered with [`Tape::param`], zero-filled
    /// when the loss does not depend on it.
    pub fn param(&self, id: usize) -> Option<&Matrix<f64>> {
        let (_, v) = self.params.iter().find(|(p, _)| *p == id)?;
        self.adj[*v].as_ref()
    }

    pub fn var(&self, v: Var) -> Option<&Matrix<f64>> {
        self.adj.get(v)?.as_ref()
    }
}

fn same_shape(op: &'static str, a: &Matrix<f64>, b: &Matrix<f64>) -> Result<(), TapeError> {
    if a.shape() != b.shape() {
        return Err(TapeError::Shape { op, left: a.shape(), right: b.shape() });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Matrix<f64>) -> Var {
        self.ops.push(op);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn value(&self, v: Var) -> &Matrix<f64> {
        &self.values[v]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v].get(0, 0)
    }

    pub fn leaf(&mut self, value: Matrix<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Registers a trainable parameter under an external id.
    pub fn param(&mut self, id: usize, value: Matrix<f64>) -> Var {
        self.push(Op::Param(id), value)
    }

    /// `x W^T + b` with `W` stored `out x in` and `b` as `1 x out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TapeError> {
        let (xv, wv) = (&self.values[x], &self.values[w]);
        if xv.cols() != wv.cols() {
            return Err(TapeError::Shape { op: "dense", left: xv.shape(), right: wv.shape() });
        }
        if let Some(b) = b {
            let bv = &self.values[b];
            if bv.shape() != (1, wv.rows()) {
                return Err(TapeError::Shape { op: "dense bias", left: bv.shape(), right: (1, wv.rows()) });
            }
        }
        let (n, din, dout) = (xv.rows(), xv.cols(), wv.rows());
        let mut out = vec![0.0; n * dout];
        let (xs, ws) = (xv.as_slice(), wv.as_slice());
        let bs = b.map(|b| self.values[b].as_slice());
        for r in 0..n {
            let xr = &xs[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &ws[o * din..(o + 1) * din];
                let mut acc = bs.map_or(0.0, |b| b[o]);
                for i in 0..din {
                    acc += xr[i] * wr[i];
                }
                out[r * dout + o] = acc;
            }
        }
        let value = Matrix::from_vec(n, dout, out).expect("sized");
        Ok(self.push(Op::Dense { x, w, b }, value))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.values[x].map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.values[x].map(|a| a.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        same_shape("add", &self.values[a], &self.values[b])?;
        let (av, bv) = (&self.values[a], &self.values[b]);
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(x, y)| x + y).collect();
        let v = Matrix::from_vec(av.rows(), av.cols(), data).expect("sized");
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.values[x].scaled(k);
        self.push(Op::Scale(x, k), v)
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: Var, target: Matrix<f64>) -> Result<Var, TapeError> {
        let p = &self.values[pred];
        same_shape("mse", p, &target)?;
        let n = p.len().max(1) as f64;
        let s: f64 = p.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.push(Op::Mse { pred, target }, Matrix::from_vec(1, 1, vec![s / n]).expect("1x1")))
    }

    /// Mean of absolute differences over every element.
    pub fn l1(&mut self, pred: Var, target: Matrix<f64>) -> Result<Var, TapeError> {
        let p = &self.values[pred];
        same_shape("l1", p, &target)?;
        let n = p.len().max(1) as f64;
        let s: f64 = p.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        Ok(self.push(Op::L1 { pred, target }, Matrix::from_vec(1, 1, vec![s / n]).expect("1x1")))
    }

    /// Softmax cross-entropy over `groups` independent categorical heads laid
    /// side by side in each row. `targets` holds `rows * groups` class
    /// indices. The loss is summed over groups and averaged over rows.
    pub fn cross_entropy(&mut self, logits: Var, groups: usize, targets: Vec<usize>) -> Result<Var, TapeError> {
        let l = &self.values[logits];
        if groups == 0 || l.cols() % groups != 0 {
            return Err(TapeError::Target(format!("{} columns do not split into {groups} groups", l.cols())));
        }
        let v = l.cols() / groups;
        if targets.len() != l.rows() * groups {
            return Err(TapeError::Target(format!("expected {} targets, got {}", l.rows() * groups, targets.len())));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= v) {
            return Err(TapeError::Target(format!("class {t} out of range for {v} classes")));
        }
        let mut probs = vec![0.0; l.len()];
        let mut total = 0.0;
        for r in 0..l.rows() {
            let row = l.row(r);
            for g in 0..groups {
                let z = &row[g * v..(g + 1) * v];
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|a| (a - m).exp()).sum();
                let lse = m + sum.ln();
                for (c, a) in z.iter().enumerate() {
                    probs[r * l.cols() + g * v + c] = (a - lse).exp();
                }
                total += lse - z[targets[r * groups + g]];
            }
        }
        let value = Matrix::from_vec(1, 1, vec![total / l.rows().max(1) as f64]).expect("1x1");
        Ok(self.push(Op::CrossEntropy { logits, groups, targets, probs }, value))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut adj: Vec<Option<Matrix<f64>>> = vec![None; self.values.len()];
        adj[loss] = Some(Matrix::from_vec(1, 1, vec![1.0]).expect("1x1"));
        let mut params = Vec::new();
        for node in (0..=loss).rev() {
            if let Op::Param(id) = self.ops[node] {
                if adj[node].is_none() {
                    let (r, c) = self.values[node].shape();
                    adj[node] = Some(Matrix::zeros(r, c));
                }
                params.push((id, node));
                continue;
            }
            let Some(g) = adj[node].take() else { continue };
            match &self.ops[node] {
                Op::Leaf | Op::Param(_) => {}
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (&self.values[*x], &self.values[*w]);
                    let (n, din, dout) = (xv.rows(), xv.cols(), wv.rows());
                    let gs = g.as_slice();
                    let mut dx = vec![0.0; n * din];
                    let mut dw = vec![0.0; dout * din];
                    let (xs, ws) = (xv.as_slice(), wv.as_slice());
                    for r in 0..n {
                        let xr = &xs[r * din..(r + 1) * din];
                        let dxr = &mut dx[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let go = gs[r * dout + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &ws[o * din..(o + 1) * din];
                            let dwr = &mut dw[o * din..(o + 1) * din];
                            for i in 0..din {
                                dxr[i] += go * wr[i];
                                dwr[i] += go * xr[i];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, Matrix::from_vec(n, din, dx).expect("sized"));
                    accumulate(&mut adj, *w, Matrix::from_vec(dout, din, dw).expect("sized"));
                    if let Some(b) = b {
                        let mut db = vec![0.0; dout];
                        for r in 0..n {
                            for o in 0..dout {
                                db[o] += gs[r * dout + o];
                            }
                        }
                        accumulate(&mut adj, *b, Matrix::from_vec(1, dout, db).expect("sized"));
                    }
                }
                Op::Tanh(x) => {
                    let y = &self.values[node];
                    let d = zip_map(&g, y, |gi, yi| gi * (1.0 - yi * yi));
                    accumulate(&mut adj, *x, d);
                }
                Op::Relu(x) => {
                    let d = zip_map(&g, &self.values[*x], |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    accumulate(&mut adj, *x, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Scale(x, k) => accumulate(&mut adj, *x, g.scaled(*k)),
                Op::Mse { pred, target } => {
                    let p = &self.values[*pred];
                    let k = g.get(0, 0) * 2.0 / p.len().max(1) as f64;
                    accumulate(&mut adj, *pred, zip_map(p, target, |a, b| k * (a - b)));
                }
                Op::L1 { pred, target } => {
                    let p = &self.values[*pred];
                    let k = g.get(0, 0) / p.len().max(1) as f64;
                    let d = zip_map(p, target, |a, b| {
                        if a > b {
                            k
                        } else if a < b {
                            -k
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *pred, d);
                }
                Op::CrossEntropy { logits, groups, targets, probs } => {
                    let l = &self.values[*logits];
                    let v = l.cols() / groups;
                    let k = g.get(0, 0) / l.rows().max(1) as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| k * p).collect();
                    for r in 0..l.rows() {
                        for gi in 0..*groups {
                            d[r * l.cols() + gi * v + targets[r * groups + gi]] -= k;
                        }
                    }
                    accumulate(&mut adj, *logits, Matrix::from_vec(l.rows(), l.cols(), d).expect("sized"));
                }
            }
        }
        Gradients { adj, params }
    }
}

fn zip_map(a: &Matrix<f64>, b: &Matrix<f64>, f: impl Fn(f64, f64) -> f64) -> Matrix<f64> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("sized")
}

fn accumulate(adj: &mut [Option<Matrix<f64>>], v: Var, g: Matrix<f64>) {
    match &mut adj[v] {
        Some(acc) => {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}
