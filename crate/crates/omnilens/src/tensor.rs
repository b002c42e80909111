//! Reverse-mode automatic differentiation over `f64` ndarrays.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks the recording in reverse and accumulates gradients for every node
//! that the loss depends on. All math is `f64` so that central finite
//! differences agree with analytic gradients to tight tolerances.
//!
//! The op set is the minimum needed by the model: matrix products, row-wise
//! bias/gain, layer norm, masked softmax, embeddings, gathers, and the loss
//! primitives (weighted cross entropy, BCE-with-logits).

use ndarray::{Array1, Array2, ArrayD, Axis, Ix2, IxDyn};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

// some op arguments are consumed in the forward pass only; they are kept on
// the node for tape introspection when debugging
#[allow(dead_code)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var, f64),
    MulScalar(Var, f64),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    /// `x` is `[n, d]`, `b` is `[d]`; adds `b` to every row.
    AddRow { x: Var, b: Var },
    MulRow { x: Var, g: Var },
    Silu(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Row-wise softmax over a 2-D array. `mask[r][c] == false` forces a hard
    /// zero at `(r, c)`. A row whose mask permits nothing falls back to the
    /// unmasked softmax for that row.
    MaskedSoftmax { x: Var, mask: Option<Array2<bool>> },
    LayerNorm { x: Var, eps: f64 },
    /// Row lookup: `table` is `[v, d]`, output is `[ids.len(), d]`.
    Embed { table: Var, ids: Vec<usize> },
    /// `out.flat[i] = x.flat[index[i]]`, reshaped to `shape`.
    GatherFlat { x: Var, index: Vec<usize>, shape: Vec<usize> },
    ConcatRows(Var, Var),
    SliceRows { x: Var, start: usize, end: usize },
    Sum(Var),
    /// `[n, d] -> [1, d]` column means.
    MeanRows(Var),
    /// L2-normalizes each row of a 2-D array.
    RowNormalize { x: Var, eps: f64 },
    /// `sum_i weights[i] * (-log softmax(logits_i)[targets[i]])` -> `[1]`.
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64> },
    /// Sum of element-wise BCE-with-logits against a constant target.
    BceSum { logits: Var, targets: ArrayD<f64> },
    /// Scalar division, both `[1]`.
    DivVars(Var, Var),
    Reshape { x: Var, shape: Vec<usize> },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Gradient tape for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn as2<'a>(a: &'a ArrayD<f64>) -> ndarray::ArrayView2<'a, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected 2-D array")
}

fn matmul_views(a: &ArrayD<f64>, b: &ArrayD<f64>, ta: bool, tb: bool) -> Array2<f64> {
    let av = as2(a);
    let bv = as2(b);
    match (ta, tb) {
        (false, false) => av.dot(&bv),
        (true, false) => av.t().dot(&bv),
        (false, true) => av.dot(&bv.t()),
        (true, true) => av.t().dot(&bv.t()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `[1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0]]
    }

    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf2(&mut self, value: Array2<f64>) -> Var {
        self.push(value.into_dyn(), Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.push(Array1::from_elem(1, value).into_dyn(), Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value + c;
        self.push(v, Op::AddScalar(a, c))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value * c;
        self.push(v, Op::MulScalar(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let v = matmul_views(&self.nodes[a.0].value, &self.nodes[b.0].value, ta, tb);
        self.push(v.into_dyn(), Op::MatMul { a, b, ta, tb })
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let xv = as2(&self.nodes[x.0].value).to_owned();
        let bv = &self.nodes[b.0].value;
        let bv1 = bv.view().into_dimensionality::<ndarray::Ix1>().expect("bias must be 1-D");
        let v = xv + &bv1.insert_axis(Axis(0));
        self.push(v.into_dyn(), Op::AddRow { x, b })
    }

    pub fn mul_row(&mut self, x: Var, g: Var) -> Var {
        let xv = as2(&self.nodes[x.0].value).to_owned();
        let gv = &self.nodes[g.0].value;
        let gv1 = gv.view().into_dimensionality::<ndarray::Ix1>().expect("gain must be 1-D");
        let v = xv * &gv1.insert_axis(Axis(0));
        self.push(v.into_dyn(), Op::MulRow { x, g })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|t| t * sigmoid(t));
        self.push(v, Op::Silu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid_op(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        self.masked_softmax(x, None)
    }

    pub fn masked_softmax(&mut self, x: Var, mask: Option<Array2<bool>>) -> Var {
        let xv = as2(&self.nodes[x.0].value);
        let (n, c) = (xv.nrows(), xv.ncols());
        if let Some(m) = &mask {
            assert_eq!(m.dim(), (n, c), "mask shape mismatch");
        }
        let mut out = Array2::<f64>::zeros((n, c));
        for r in 0..n {
            let permit_all = mask
                .as_ref()
                .map(|m| !m.row(r).iter().any(|&p| p))
                .unwrap_or(true);
            let permitted = |j: usize| -> bool {
                if permit_all {
                    true
                } else {
                    mask.as_ref().map(|m| m[[r, j]]).unwrap_or(true)
                }
            };
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                if permitted(j) {
                    mx = mx.max(xv[[r, j]]);
                }
            }
            let mut z = 0.0;
            for j in 0..c {
                if permitted(j) {
                    z += (xv[[r, j]] - mx).exp();
                }
            }
            for j in 0..c {
                if permitted(j) {
                    out[[r, j]] = (xv[[r, j]] - mx).exp() / z;
                }
            }
        }
        self.push(out.into_dyn(), Op::MaskedSoftmax { x, mask })
    }

    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = as2(&self.nodes[x.0].value);
        let mut out = xv.to_owned();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mu = row.sum() / n;
            let var = row.iter().map(|&t| (t - mu) * (t - mu)).sum::<f64>() / n;
            let s = (var + eps).sqrt();
            row.mapv_inplace(|t| (t - mu) / s);
        }
        self.push(out.into_dyn(), Op::LayerNorm { x, eps })
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = as2(&self.nodes[table.0].value);
        let d = tv.ncols();
        let mut out = Array2::<f64>::zeros((ids.len(), d));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&tv.row(id));
        }
        self.push(out.into_dyn(), Op::Embed { table, ids: ids.to_vec() })
    }

    pub fn gather_flat(&mut self, x: Var, index: &[usize], shape: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        let flat: Vec<f64> = {
            let xs = xv.as_slice().expect("gather source must be contiguous");
            index.iter().map(|&i| xs[i]).collect()
        };
        let v = ArrayD::from_shape_vec(IxDyn(shape), flat).expect("gather shape mismatch");
        self.push(v, Op::GatherFlat { x, index: index.to_vec(), shape: shape.to_vec() })
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let av = as2(&self.nodes[a.0].value).to_owned();
        let bv = as2(&self.nodes[b.0].value).to_owned();
        let v = ndarray::concatenate(Axis(0), &[av.view(), bv.view()]).expect("concat shape");
        self.push(v.into_dyn(), Op::ConcatRows(a, b))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = as2(&self.nodes[x.0].value);
        let v = xv.slice(ndarray::s![start..end, ..]).to_owned();
        self.push(v.into_dyn(), Op::SliceRows { x, start, end })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        self.push(Array1::from_elem(1, s).into_dyn(), Op::Sum(x))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = as2(&self.nodes[x.0].value);
        let v = xv.mean_axis(Axis(0)).expect("mean of empty").insert_axis(Axis(0));
        self.push(v.into_dyn(), Op::MeanRows(x))
    }

    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Var {
        let xv = as2(&self.nodes[x.0].value);
        let mut out = xv.to_owned();
        for mut row in out.rows_mut() {
            let r = row.iter().map(|&t| t * t).sum::<f64>().sqrt() + eps;
            row.mapv_inplace(|t| t / r);
        }
        self.push(out.into_dyn(), Op::RowNormalize { x, eps })
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        assert_eq!(targets.len(), weights.len());
        let lv = as2(&self.nodes[logits.0].value);
        assert_eq!(lv.nrows(), targets.len());
        let mut total = 0.0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            let row = lv.row(r);
            let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln() + mx;
            total += w * (lse - row[t]);
        }
        self.push(
            Array1::from_elem(1, total).into_dyn(),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec() },
        )
    }

    pub fn bce_sum(&mut self, logits: Var, targets: ArrayD<f64>) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.shape(), targets.shape());
        let mut total = 0.0;
        for (&x, &t) in lv.iter().zip(targets.iter()) {
            // log(1 + exp(-|x|)) + max(x, 0) - x * t, numerically stable
            total += (-x.abs()).exp().ln_1p() + x.max(0.0) - x * t;
        }
        self.push(Array1::from_elem(1, total).into_dyn(), Op::BceSum { logits, targets })
    }

    pub fn div_vars(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value[[0]] / self.nodes[b.0].value[[0]];
        self.push(Array1::from_elem(1, v).into_dyn(), Op::DivVars(a, b))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.nodes[x.0].value.clone().into_shape_with_order(IxDyn(shape)).expect("reshape");
        self.push(v, Op::Reshape { x, shape: shape.to_vec() })
    }

    fn parents(&self, i: usize) -> Vec<usize> {
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::DivVars(a, b) | Op::ConcatRows(a, b) => {
                vec![a.0, b.0]
            }
            Op::MatMul { a, b, .. } => vec![a.0, b.0],
            Op::AddRow { x, b } => vec![x.0, b.0],
            Op::MulRow { x, g } => vec![x.0, g.0],
            Op::AddScalar(a, _) | Op::MulScalar(a, _) => vec![a.0],
            Op::Silu(a) | Op::Tanh(a) | Op::Sigmoid(a) | Op::Sum(a) | Op::MeanRows(a) => vec![a.0],
            Op::MaskedSoftmax { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::GatherFlat { x, .. }
            | Op::SliceRows { x, .. }
            | Op::RowNormalize { x, .. }
            | Op::Reshape { x, .. }
            | Op::BceSum { logits: x, .. }
            | Op::CrossEntropy { logits: x, .. } => vec![x.0],
            Op::Embed { table, .. } => vec![table.0],
        }
    }

    /// Runs reverse-mode accumulation from a scalar `[1]` loss node and
    /// returns per-node gradients (only for nodes the loss depends on).
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let n = self.nodes.len();
        let mut reachable = vec![false; n];
        reachable[loss.0] = true;
        for i in (0..n).rev() {
            if reachable[i] {
                for p in self.parents(i) {
                    reachable[p] = true;
                }
            }
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; n];
        grads[loss.0] = Some(ArrayD::from_elem(IxDyn(&[1]), 1.0));
        for i in (0..n).rev() {
            if !reachable[i] || grads[i].is_none() {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, g: &ArrayD<f64>, grads: &mut Vec<Option<ArrayD<f64>>>) {
        let mut bump = |v: Var, dg: ArrayD<f64>| {
            match &mut grads[v.0] {
                Some(acc) => *acc += &dg,
                slot @ None => *slot = Some(dg),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                bump(*a, g.clone());
                bump(*b, g.clone());
            }
            Op::Sub(a, b) => {
                bump(*a, g.clone());
                bump(*b, -g.clone());
            }
            Op::Mul(a, b) => {
                bump(*a, g * &self.nodes[b.0].value);
                bump(*b, g * &self.nodes[a.0].value);
            }
            Op::AddScalar(a, _) => bump(*a, g.clone()),
            Op::MulScalar(a, c) => bump(*a, g * *c),
            Op::MatMul { a, b, ta, tb } => {
                let gv = as2(g).to_owned().into_dyn();
                // d(opA) = g @ opB^T ; d(opB) = opA^T @ g
                let d_op_a = matmul_views(&gv, &self.nodes[b.0].value, false, !tb);
                let d_op_b = matmul_views(&self.nodes[a.0].value, &gv, !ta, false);
                let da = if *ta { d_op_a.t().as_standard_layout().to_owned() } else { d_op_a };
                let db = if *tb { d_op_b.t().as_standard_layout().to_owned() } else { d_op_b };
                bump(*a, da.into_dyn());
                bump(*b, db.into_dyn());
            }
            Op::AddRow { x, b } => {
                bump(*x, g.clone());
                let gs = as2(g).sum_axis(Axis(0));
                bump(*b, gs.into_dyn());
            }
            Op::MulRow { x, g: gain } => {
                let gv = as2(g);
                let gainv = self.nodes[gain.0].value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let dx = gv.to_owned() * &gainv.insert_axis(Axis(0));
                let dg = (gv.to_owned() * as2(&self.nodes[x.0].value)).sum_axis(Axis(0));
                bump(*x, dx.into_dyn());
                bump(*gain, dg.into_dyn());
            }
            Op::Silu(a) => {
                let dx = self.nodes[a.0].value.mapv(|t| {
                    let s = sigmoid(t);
                    s * (1.0 + t * (1.0 - s))
                });
                bump(*a, g * &dx);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                bump(*a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                bump(*a, g * &y.mapv(|t| t * (1.0 - t)));
            }
            Op::MaskedSoftmax { x, .. } => {
                let y = as2(&self.nodes[i].value);
                let gv = as2(g);
                let mut dx = Array2::<f64>::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = y.row(r).iter().zip(gv.row(r)).map(|(&a, &b)| a * b).sum();
                    for c in 0..y.ncols() {
                        dx[[r, c]] = y[[r, c]] * (gv[[r, c]] - dot);
                    }
                }
                bump(*x, dx.into_dyn());
            }
            Op::LayerNorm { x, eps } => {
                let xv = as2(&self.nodes[x.0].value);
                let y = as2(&self.nodes[i].value);
                let gv = as2(g);
                let mut dx = Array2::<f64>::zeros(y.dim());
                let n = y.ncols() as f64;
                for r in 0..y.nrows() {
                    let mu = xv.row(r).sum() / n;
                    let var = xv.row(r).iter().map(|&t| (t - mu) * (t - mu)).sum::<f64>() / n;
                    let s = (var + eps).sqrt();
                    let mg = gv.row(r).sum() / n;
                    let mgy: f64 = gv.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum::<f64>() / n;
                    for c in 0..y.ncols() {
                        dx[[r, c]] = (gv[[r, c]] - mg - y[[r, c]] * mgy) / s;
                    }
                }
                bump(*x, dx.into_dyn());
            }
            Op::Embed { table, ids } => {
                let gv = as2(g);
                let tdim = as2(&self.nodes[table.0].value).dim();
                let mut dt = Array2::<f64>::zeros(tdim);
                for (r, &id) in ids.iter().enumerate() {
                    let mut row = dt.row_mut(id);
                    row += &gv.row(r);
                }
                bump(*table, dt.into_dyn());
            }
            Op::GatherFlat { x, index, .. } => {
                let mut dx = ArrayD::<f64>::zeros(self.nodes[x.0].value.raw_dim());
                {
                    let ds = dx.as_slice_mut().unwrap();
                    let gs = g.as_slice().expect("grad contiguous");
                    for (o, &src) in index.iter().enumerate() {
                        ds[src] += gs[o];
                    }
                }
                bump(*x, dx);
            }
            Op::ConcatRows(a, b) => {
                let na = as2(&self.nodes[a.0].value).nrows();
                let gv = as2(g);
                bump(*a, gv.slice(ndarray::s![..na, ..]).to_owned().into_dyn());
                bump(*b, gv.slice(ndarray::s![na.., ..]).to_owned().into_dyn());
            }
            Op::SliceRows { x, start, end } => {
                let mut dx = ArrayD::<f64>::zeros(self.nodes[x.0].value.raw_dim());
                {
                    let mut dxv = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                    let gv = as2(g);
                    dxv.slice_mut(ndarray::s![*start..*end, ..]).assign(&gv);
                }
                bump(*x, dx);
            }
            Op::Sum(a) => {
                let dx = ArrayD::from_elem(self.nodes[a.0].value.raw_dim(), g[[0]]);
                bump(*a, dx);
            }
            Op::MeanRows(a) => {
                let xv = as2(&self.nodes[a.0].value);
                let n = xv.nrows();
                let gv = as2(g);
                let mut dx = Array2::<f64>::zeros(xv.dim());
                for r in 0..n {
                    let mut row = dx.row_mut(r);
                    row.assign(&(&gv.row(0) / n as f64));
                }
                bump(*a, dx.into_dyn());
            }
            Op::RowNormalize { x, eps } => {
                let xv = as2(&self.nodes[x.0].value);
                let gv = as2(g);
                let mut dx = Array2::<f64>::zeros(xv.dim());
                for r in 0..xv.nrows() {
                    let norm = xv.row(r).iter().map(|&t| t * t).sum::<f64>().sqrt() + eps;
                    let dot: f64 = xv.row(r).iter().zip(gv.row(r)).map(|(&a, &b)| a * b).sum();
                    for c in 0..xv.ncols() {
                        dx[[r, c]] = gv[[r, c]] / norm - xv[[r, c]] * dot / (norm * norm * norm);
                    }
                }
                bump(*x, dx.into_dyn());
            }
            Op::CrossEntropy { logits, targets, weights } => {
                let lv = as2(&self.nodes[logits.0].value);
                let mut dl = Array2::<f64>::zeros(lv.dim());
                let gs = g[[0]];
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let row = lv.row(r);
                    let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let z: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
                    for c in 0..lv.ncols() {
                        let p = (row[c] - mx).exp() / z;
                        dl[[r, c]] = gs * w * (p - if c == t { 1.0 } else { 0.0 });
                    }
                }
                bump(*logits, dl.into_dyn());
            }
            Op::BceSum { logits, targets } => {
                let lv = &self.nodes[logits.0].value;
                let gs = g[[0]];
                let mut dl = ArrayD::<f64>::zeros(lv.raw_dim());
                for ((d, &x), &t) in dl.iter_mut().zip(lv.iter()).zip(targets.iter()) {
                    *d = gs * (sigmoid(x) - t);
                }
                bump(*logits, dl);
            }
            Op::DivVars(a, b) => {
                let av = self.nodes[a.0].value[[0]];
                let bv = self.nodes[b.0].value[[0]];
                let gs = g[[0]];
                bump(*a, Array1::from_elem(1, gs / bv).into_dyn());
                bump(*b, Array1::from_elem(1, -gs * av / (bv * bv)).into_dyn());
            }
            Op::Reshape { x, .. } => {
                let dx = g.clone().into_shape_with_order(self.nodes[x.0].value.raw_dim()).unwrap();
                bump(*x, dx);
            }
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// A gradient container with no entries (every lookup returns `None`).
    pub fn empty() -> Self {
        Self { grads: Vec::new() }
    }

    /// Test hook: plant a gradient for a specific node id.
    pub fn insert_for_test(&mut self, v: Var, g: ArrayD<f64>) {
        if self.grads.len() <= v.0 {
            self.grads.resize(v.0 + 1, None);
        }
        self.grads[v.0] = Some(g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randa(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        Array::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite difference of `f` w.r.t. every entry of leaf `idx`.
    fn fd_check<F>(leaves: &[ArrayD<f64>], f: F, tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let build = |vals: &[ArrayD<f64>]| -> (Tape, Vec<Var>, Var) {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
            let loss = f(&mut t, &vars);
            (t, vars, loss)
        };
        let (t, vars, loss) = build(leaves);
        let grads = t.backward(loss);
        let eps = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = grads.get(vars[li]).cloned().unwrap_or_else(|| ArrayD::zeros(leaf.raw_dim()));
            for flat in 0..leaf.len() {
                let mut plus = leaves.to_vec();
                plus[li].as_slice_mut().unwrap()[flat] += eps;
                let mut minus = leaves.to_vec();
                minus[li].as_slice_mut().unwrap()[flat] -= eps;
                let (tp, _, lp) = build(&plus);
                let (tm, _, lm) = build(&minus);
                let fd = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * eps);
                let an = g.as_slice().unwrap()[flat];
                if (an - fd).abs() < 1e-8 {
                    continue;
                }
                let denom = an.abs().max(fd.abs());
                assert!(
                    (an - fd).abs() / denom < tol,
                    "leaf {li} entry {flat}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn fd_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randa(&mut rng, &[3, 4]);
        let b = randa(&mut rng, &[5, 4]);
        fd_check(&[a, b], |t, v| {
            let m = t.matmul(v[0], v[1], false, true);
            let s = t.silu(m);
            t.sum(s)
        }, 1e-6);
    }

    #[test]
    fn fd_layernorm_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randa(&mut rng, &[4, 6]);
        let w = randa(&mut rng, &[6, 3]);
        fd_check(&[x, w], |t, v| {
            let ln = t.layer_norm(v[0], 1e-5);
            let m = t.matmul(ln, v[1], false, false);
            let sm = t.softmax(m);
            let tanh = t.tanh(sm);
            t.sum(tanh)
        }, 1e-5);
    }

    #[test]
    fn fd_masked_softmax_with_fallback_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randa(&mut rng, &[3, 5]);
        let mut mask = Array2::from_elem((3, 5), false);
        mask[[0, 1]] = true;
        mask[[0, 3]] = true;
        mask[[1, 0]] = true;
        // row 2 permits nothing: exercises the fallback
        fd_check(&[x], move |t, v| {
            let sm = t.masked_softmax(v[0], Some(mask.clone()));
            let sg = t.sigmoid_op(sm);
            t.sum(sg)
        }, 1e-5);
    }

    #[test]
    fn masked_softmax_zeros_and_row_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randa(&mut rng, &[6, 9]);
        let mut mask = Array2::from_elem((6, 9), false);
        for r in 0..6 {
            for c in 0..9 {
                mask[[r, c]] = rng.gen_bool(0.4);
            }
        }
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let sm = t.masked_softmax(xv, Some(mask.clone()));
        let y = as2(t.value(sm));
        for r in 0..6 {
            let any = mask.row(r).iter().any(|&p| p);
            let sum: f64 = y.row(r).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            if any {
                for c in 0..9 {
                    if !mask[[r, c]] {
                        assert_eq!(y[[r, c]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn fd_losses_and_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = randa(&mut rng, &[4, 7]);
        let table = randa(&mut rng, &[9, 5]);
        let pix = randa(&mut rng, &[2, 3]);
        let tgt = randa(&mut rng, &[2, 3]).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        fd_check(&[logits, table, pix], move |t, v| {
            let ce = t.cross_entropy(v[0], &[1, 0, 6, 3], &[1.0, 0.1, 0.5, 2.0]);
            let emb = t.embed(v[1], &[0, 4, 4, 8]);
            let es = t.sum(emb);
            let bce = t.bce_sum(v[2], tgt.clone());
            let gf = t.gather_flat(v[2], &[5, 0, 2, 2], &[2, 2]);
            let gs = t.sum(gf);
            let a = t.add(ce, es);
            let b = t.add(bce, gs);
            let r = t.div_vars(a, b);
            t.mul_scalar(r, 0.5)
        }, 1e-5);
    }

    #[test]
    fn fd_concat_slice_norm_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = randa(&mut rng, &[2, 4]);
        let b = randa(&mut rng, &[3, 4]);
        let g = randa(&mut rng, &[4]);
        fd_check(&[a, b, g], |t, v| {
            let c = t.concat_rows(v[0], v[1]);
            let n = t.row_normalize(c, 1e-12);
            let s = t.slice_rows(n, 1, 4);
            let m = t.mean_rows(s);
            let gm = t.mul_row(m, v[2]);
            let am = t.add_row(gm, v[2]);
            t.sum(am)
        }, 1e-5);
    }
}
