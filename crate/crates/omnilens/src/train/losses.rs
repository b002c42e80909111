//! The four loss components. Supervised: token cross-entropy on the semantic
//! path and BCE + soft-Dice on the pixel path, both over Hungarian-matched
//! queries. Unsupervised: a global InfoNCE contrast against a queue of
//! momentum keys, and a dense per-position contrast whose positives come from
//! backbone cosine-similarity correspondences between two views.

use ndarray::{Array1, Array2, ArrayD};

use crate::error::{Error, Result};
use crate::model::Forward;
use crate::tensor::Var;

/// Weighted mean token cross-entropy over per-query target sequences.
/// Matched queries carry weight 1.0; unmatched (NO_OBJECT) queries carry the
/// configured down-weight. Padding beyond each sequence contributes nothing.
pub fn semantic_loss(
    fwd: &mut Forward,
    general_states: Var,
    targets: &[Vec<usize>],
    query_weights: &[f64],
) -> Result<Var> {
    let (logits, flat_targets, flat_weights) =
        fwd.semantic_teacher(general_states, targets, query_weights)?;
    let weight_sum: f64 = flat_weights.iter().sum();
    if weight_sum <= 0.0 {
        return Err(Error::Validation("semantic loss needs at least one weighted token".into()));
    }
    let ce = fwd.tape.cross_entropy(logits, &flat_targets, &flat_weights);
    Ok(fwd.tape.mul_scalar(ce, 1.0 / weight_sum))
}

/// The two pieces of the pixel loss, kept separate for diagnostics.
pub struct PixelLossParts {
    /// Per-pixel-mean BCE, averaged over matched queries.
    pub bce: Var,
    /// `1 - soft Dice` (epsilon 1.0), averaged over matched queries.
    pub dice: Var,
    /// `bce + dice`.
    pub total: Var,
}

/// BCE + (1 - soft Dice) between matched queries' pixel logits and their
/// block-majority-downsampled target masks. `matched` pairs a query row of
/// `o_p` with its `[g, g]` binary target.
pub fn pixel_loss(
    fwd: &mut Forward,
    o_p: Var,
    matched: &[(usize, Array2<f64>)],
) -> Result<PixelLossParts> {
    if matched.is_empty() {
        return Err(Error::Validation("pixel loss needs at least one matched query".into()));
    }
    let pixels = fwd.tape.value(o_p).shape()[1];
    let mut bce_acc: Option<Var> = None;
    let mut dice_acc: Option<Var> = None;
    for (q, target) in matched {
        if target.len() != pixels {
            return Err(Error::Validation(format!(
                "target has {} cells but O_p rows have {pixels}",
                target.len()
            )));
        }
        let row = fwd.tape.slice_rows(o_p, *q, q + 1);
        let t: ArrayD<f64> =
            Array2::from_shape_vec((1, pixels), target.iter().cloned().collect())
                .unwrap()
                .into_dyn();
        let bce_sum = fwd.tape.bce_sum(row, t.clone());
        let bce = fwd.tape.mul_scalar(bce_sum, 1.0 / pixels as f64);
        // soft dice with smoothing 1.0 in numerator and denominator
        let p = fwd.tape.sigmoid_op(row);
        let t_leaf = fwd.tape.leaf(t);
        let pg = fwd.tape.mul(p, t_leaf);
        let inter = fwd.tape.sum(pg);
        let p_sum = fwd.tape.sum(p);
        let g_sum: f64 = target.iter().sum();
        let num = fwd.tape.mul_scalar(inter, 2.0);
        let num = fwd.tape.add_scalar(num, 1.0);
        let den = fwd.tape.add_scalar(p_sum, g_sum + 1.0);
        let dice = fwd.tape.div_vars(num, den);
        let dice_loss = {
            let neg = fwd.tape.mul_scalar(dice, -1.0);
            fwd.tape.add_scalar(neg, 1.0)
        };
        bce_acc = Some(match bce_acc {
            Some(a) => fwd.tape.add(a, bce),
            None => bce,
        });
        dice_acc = Some(match dice_acc {
            Some(a) => fwd.tape.add(a, dice_loss),
            None => dice_loss,
        });
    }
    let k = matched.len() as f64;
    let bce = fwd.tape.mul_scalar(bce_acc.unwrap(), 1.0 / k);
    let dice = fwd.tape.mul_scalar(dice_acc.unwrap(), 1.0 / k);
    let total = fwd.tape.add(bce, dice);
    Ok(PixelLossParts { bce, dice, total })
}

fn check_unit_norm(name: &str, v: &[f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-8 {
        return Err(Error::Validation(format!("{name} has (near-)zero norm")));
    }
    Ok(())
}

/// Global InfoNCE: `-log( exp(q.k+/t) / (exp(q.k+/t) + sum exp(q.k-/t)) )`.
/// `q` is the on-tape projected query `[1, d]`; the positive and the queue of
/// negatives are momentum-encoder outputs (constants).
pub fn contrastive_loss(
    fwd: &mut Forward,
    q: Var,
    k_pos: &Array1<f64>,
    k_negs: &[Array1<f64>],
    temperature: f64,
) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let d = k_pos.len();
    check_unit_norm("query", fwd.tape.value(q).as_slice().unwrap())?;
    check_unit_norm("positive key", k_pos.as_slice().unwrap())?;
    let mut keys = Array2::<f64>::zeros((1 + k_negs.len(), d));
    keys.row_mut(0).assign(k_pos);
    for (i, k) in k_negs.iter().enumerate() {
        check_unit_norm("negative key", k.as_slice().unwrap())?;
        keys.row_mut(i + 1).assign(k);
    }
    let keys = fwd.tape.leaf(keys.into_dyn());
    let scores = fwd.tape.matmul(q, keys, false, true);
    let scores = fwd.tape.mul_scalar(scores, 1.0 / temperature);
    Ok(fwd.tape.cross_entropy(scores, &[0], &[1.0]))
}

/// Positive index per view1 position: the view2 position with the highest
/// backbone cosine similarity.
pub fn backbone_correspondences(b1: &Array2<f64>, b2: &Array2<f64>) -> Result<Vec<usize>> {
    if b1.ncols() != b2.ncols() || b1.nrows() < 2 || b2.nrows() < 2 {
        return Err(Error::Config("dense contrast needs >= 2 positions per view".into()));
    }
    let norm = |row: ndarray::ArrayView1<f64>| row.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out = Vec::with_capacity(b1.nrows());
    for i in 0..b1.nrows() {
        let ri = b1.row(i);
        let ni = norm(ri).max(1e-12);
        let mut best = 0;
        let mut best_cos = f64::NEG_INFINITY;
        for j in 0..b2.nrows() {
            let rj = b2.row(j);
            let cos = ri.dot(&rj) / (ni * norm(rj).max(1e-12));
            if cos > best_cos {
                best_cos = cos;
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Dense InfoNCE over spatial positions: view1's on-tape projections `v1`
/// (`[P, d]`, L2-normalized rows) against momentum view2 projections, with
/// `correspondence[i]` as position `i`'s positive and all other view2
/// positions as negatives. Averaged over positions.
pub fn dense_contrastive_loss(
    fwd: &mut Forward,
    v1: Var,
    keys2: &Array2<f64>,
    correspondence: &[usize],
    temperature: f64,
) -> Result<Var> {
    let p = fwd.tape.value(v1).shape()[0];
    if p < 2 || keys2.nrows() < 2 {
        return Err(Error::Config("dense contrast needs >= 2 positions per view".into()));
    }
    if correspondence.len() != p {
        return Err(Error::Validation("one correspondence per view1 position required".into()));
    }
    if let Some(&bad) = correspondence.iter().find(|&&c| c >= keys2.nrows()) {
        return Err(Error::Range(format!("correspondence {bad} out of range")));
    }
    let keys = fwd.tape.leaf(keys2.clone().into_dyn());
    let scores = fwd.tape.matmul(v1, keys, false, true);
    let scores = fwd.tape.mul_scalar(scores, 1.0 / temperature);
    let weights = vec![1.0 / p as f64; p];
    Ok(fwd.tape.cross_entropy(scores, correspondence, &weights))
}
