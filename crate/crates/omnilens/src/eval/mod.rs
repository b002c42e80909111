//! Metrics and evaluation protocols. Three headline numbers: Dice for
//! segmentation, mAcc (unweighted mean per-class recall) for classification,
//! and mAP (greedy score-ordered matching, all-point interpolated AP averaged
//! over IoU thresholds 0.50:0.05:0.95, then over classes) for detection.
//!
//! Conventions that differ across the literature, pinned here:
//! - Dice of two empty masks is 1.0 (predicting absence correctly is right).
//! - AP matching breaks score ties by descending best-IoU, then input order.
//! - mAcc and mAP average over classes that occur in the ground truth.
//!
//! ```
//! use ndarray::array;
//! use omnilens::eval::dice_score;
//!
//! let pred = array![[1u8, 1], [0, 0]];
//! let gt = array![[1u8, 0], [0, 0]];
//! assert!((dice_score(&pred, &gt).unwrap() - 2.0 / 3.0).abs() < 1e-12);
//! ```

mod protocol;

pub use protocol::{
    evaluate, lambda_sweep, ratio_sweep, run_protocol, task_sweep, Protocol, ProtocolReport,
    ProtocolSpec, LAMBDA_SWEEP,
};

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::codec::BoxPx;
use crate::error::{Error, Result};

/// Default COCO-style IoU thresholds 0.50:0.05:0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Binary Dice overlap; both-empty is defined as 1.0.
pub fn dice_score(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Validation(format!(
            "dice shape mismatch: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        if p > 1 || g > 1 {
            return Err(Error::Validation("dice inputs must be binary".into()));
        }
        inter += (p & g) as usize;
        a += p as usize;
        b += g as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Unweighted mean of per-class recall over classes present in `gts`. One
/// entry per image: the predicted and true label sets.
pub fn mean_accuracy(
    preds: &[BTreeSet<String>],
    gts: &[BTreeSet<String>],
) -> Result<(f64, Vec<(String, f64)>)> {
    if preds.len() != gts.len() {
        return Err(Error::Validation("preds and gts must be index-aligned".into()));
    }
    let classes: BTreeSet<&String> = gts.iter().flatten().collect();
    if classes.is_empty() {
        return Err(Error::UndefinedMetric("mAcc needs at least one ground-truth label".into()));
    }
    let mut per_class = Vec::new();
    let mut total = 0.0;
    for class in classes {
        let mut hits = 0usize;
        let mut n = 0usize;
        for (p, g) in preds.iter().zip(gts) {
            if g.contains(class) {
                n += 1;
                hits += p.contains(class) as usize;
            }
        }
        let recall = hits as f64 / n as f64;
        total += recall;
        per_class.push((class.clone(), recall));
    }
    Ok((total / per_class.len() as f64, per_class))
}

/// One scored detection on one image.
#[derive(Debug, Clone)]
pub struct Detection {
    pub image: usize,
    pub class: String,
    pub box_px: BoxPx,
    pub score: f64,
}

/// One ground-truth box on one image.
#[derive(Debug, Clone)]
pub struct GtBox {
    pub image: usize,
    pub class: String,
    pub box_px: BoxPx,
}

/// COCO-style mAP. No predictions yields 0.0; classes are those present in
/// the ground truth.
pub fn mean_ap(
    preds: &[Detection],
    gts: &[GtBox],
    thresholds: &[f64],
) -> Result<(f64, Vec<(String, f64)>)> {
    if thresholds.is_empty() {
        return Err(Error::Config("mAP needs at least one IoU threshold".into()));
    }
    for p in preds {
        if !(0.0..=1.0).contains(&p.score) {
            return Err(Error::Range(format!("score {} outside [0,1]", p.score)));
        }
    }
    let classes: BTreeSet<&String> = gts.iter().map(|g| &g.class).collect();
    if classes.is_empty() {
        return Err(Error::UndefinedMetric("mAP needs at least one ground-truth box".into()));
    }
    let mut per_class = Vec::new();
    let mut total = 0.0;
    for class in classes {
        let class_gts: Vec<&GtBox> = gts.iter().filter(|g| &g.class == class).collect();
        let class_preds: Vec<(usize, &Detection)> = preds
            .iter()
            .enumerate()
            .filter(|(_, p)| &p.class == class)
            .map(|(i, p)| (i, p))
            .collect();
        let mut ap_sum = 0.0;
        for &thr in thresholds {
            ap_sum += average_precision(&class_preds, &class_gts, thr);
        }
        let ap = ap_sum / thresholds.len() as f64;
        total += ap;
        per_class.push((class.clone(), ap));
    }
    Ok((total / per_class.len() as f64, per_class))
}

/// Greedy matching at one threshold, then all-point-interpolated AP.
fn average_precision(preds: &[(usize, &Detection)], gts: &[&GtBox], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    // order: score desc, then best-IoU-to-any-gt desc, then input order
    let best_iou = |p: &Detection| -> f64 {
        gts.iter()
            .filter(|g| g.image == p.image)
            .map(|g| p.box_px.iou(&g.box_px))
            .fold(0.0, f64::max)
    };
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (preds[a].1, preds[b].1);
        pb.score
            .partial_cmp(&pa.score)
            .unwrap()
            .then(best_iou(pb).partial_cmp(&best_iou(pa)).unwrap())
            .then(preds[a].0.cmp(&preds[b].0))
    });
    let mut matched = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(order.len());
    for &oi in &order {
        let p = preds[oi].1;
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if matched[gi] || g.image != p.image {
                continue;
            }
            let iou = p.box_px.iou(&g.box_px);
            if iou >= thr && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[gi] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    // all-point interpolation: area under the monotone precision envelope
    let n_gt = gts.len() as f64;
    let mut cum_tp = 0.0;
    let mut points = Vec::with_capacity(tp.len());
    for (i, &hit) in tp.iter().enumerate() {
        cum_tp += hit as u8 as f64;
        points.push((cum_tp / n_gt, cum_tp / (i + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let (r, _) = points[i];
        if r > prev_recall {
            let env = points[i..].iter().map(|&(_, p)| p).fold(0.0, f64::max);
            ap += (r - prev_recall) * env;
            prev_recall = r;
        }
    }
    ap
}

/// One evaluated metric, with its per-class breakdown.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub task: String,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
    pub per_class: Vec<(String, f64)>,
    pub samples: usize,
}

impl MetricReport {
    /// One machine-parseable line: `metric\ttask\tdataset\tvalue\tn\tclass=v;...`.
    pub fn to_line(&self) -> String {
        let breakdown = self
            .per_class
            .iter()
            .map(|(c, v)| format!("{c}={v:.6}"))
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{}\t{}\t{}\t{:.6}\t{}\t{}",
            self.metric, self.task, self.dataset, self.value, self.samples, breakdown
        )
    }

    /// Human-readable table of one or more reports.
    pub fn render_table(reports: &[MetricReport]) -> String {
        let mut out = String::from("metric   task                       dataset          value   n\n");
        for r in reports {
            out.push_str(&format!(
                "{:<8} {:<26} {:<16} {:.4}  {}\n",
                r.metric, r.task, r.dataset, r.value, r.samples
            ));
        }
        out
    }
}
