//! Evaluation protocols over a frozen or fine-tuned checkpoint: zero-shot,
//! few-shot(k), and full fine-tune, plus the ablation sweep definitions
//! (loss weight, task subsets, sampling ratio). Each run emits metric
//! reports and qualitative overlay images.

use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::codec::{Kind, UnifiedVocabulary};
use crate::data::{Example, LESION_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{
    default_iou_thresholds, dice_score, mean_accuracy, mean_ap, Detection, GtBox, MetricReport,
};
use crate::model::Model;
use crate::tasks::{infer, QueryMode, TaskSpec};
use crate::train::{TrainConfig, Trainer};

/// How the checkpoint meets the evaluation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// fine-tune on the full train split, then evaluate
    Finetune,
    /// evaluate the checkpoint as-is
    ZeroShot,
    /// fine-tune on exactly k train samples, then evaluate; k = 0 degenerates
    /// to zero-shot
    FewShot(usize),
}

impl Protocol {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Self::Finetune),
            "zero-shot" | "zero_shot" => Ok(Self::ZeroShot),
            other => {
                if let Some(k) = other
                    .strip_prefix("few-shot:")
                    .or_else(|| other.strip_prefix("few_shot:"))
                {
                    let k = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad few-shot count {k:?}")))?;
                    Ok(Self::FewShot(k))
                } else {
                    Err(Error::Config(format!("unknown protocol {other:?}")))
                }
            }
        }
    }
}

/// One protocol run: which protocol, which tasks, how to fine-tune, and
/// where overlays go.
#[derive(Debug, Clone)]
pub struct ProtocolSpec {
    pub protocol: Protocol,
    pub tasks: Vec<TaskSpec>,
    pub train: TrainConfig,
    pub dataset: String,
    /// directory for overlay PNGs; None suppresses them
    pub overlay_dir: Option<PathBuf>,
    /// overlays written per segmentation task
    pub overlays_per_task: usize,
}

/// Outcome of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolReport {
    pub reports: Vec<MetricReport>,
    pub overlays: Vec<PathBuf>,
    pub trained_steps: usize,
}

/// Runs one evaluation protocol. `train_set`/`unlabeled` feed fine-tuning;
/// `eval_set` is scored. The input model is never mutated.
pub fn run_protocol(
    spec: &ProtocolSpec,
    model: &Model,
    vocab: &UnifiedVocabulary,
    train_set: &[Example],
    unlabeled: &[Example],
    eval_set: &[Example],
) -> Result<ProtocolReport> {
    if spec.tasks.is_empty() {
        return Err(Error::Config("protocol needs at least one task".into()));
    }
    if eval_set.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let (tuned, trained_steps) = match spec.protocol {
        Protocol::ZeroShot | Protocol::FewShot(0) => (None, 0),
        Protocol::FewShot(k) => {
            if k > train_set.len() {
                return Err(Error::Config(format!(
                    "few-shot k={k} exceeds the {} available samples",
                    train_set.len()
                )));
            }
            Some(fine_tune(model, vocab, &spec.train, &train_set[..k], unlabeled)?)
                .map(|m| (Some(m), spec.train.steps))
                .unwrap()
        }
        Protocol::Finetune => {
            if train_set.is_empty() {
                return Err(Error::Config("finetune protocol needs a train split".into()));
            }
            (Some(fine_tune(model, vocab, &spec.train, train_set, unlabeled)?), spec.train.steps)
        }
    };
    let eval_model = tuned.as_ref().unwrap_or(model);
    let (reports, overlays) = evaluate(
        eval_model,
        vocab,
        &spec.tasks,
        &spec.dataset,
        eval_set,
        spec.overlay_dir.as_deref(),
        spec.overlays_per_task,
    )?;
    Ok(ProtocolReport { reports, overlays, trained_steps })
}

fn fine_tune(
    model: &Model,
    vocab: &UnifiedVocabulary,
    config: &TrainConfig,
    train_set: &[Example],
    unlabeled: &[Example],
) -> Result<Model> {
    let mut trainer = Trainer::new(model.clone(), vocab.clone(), config.clone())?;
    trainer.train(train_set, unlabeled, &mut io::sink())?;
    Ok(trainer.model)
}

/// Scores every requested task on one dataset against one frozen model.
pub fn evaluate(
    model: &Model,
    vocab: &UnifiedVocabulary,
    tasks: &[TaskSpec],
    dataset: &str,
    examples: &[Example],
    overlay_dir: Option<&Path>,
    overlays_per_task: usize,
) -> Result<(Vec<MetricReport>, Vec<PathBuf>)> {
    let mut reports = Vec::new();
    let mut overlays = Vec::new();
    for &task in tasks {
        let mut inferences = Vec::with_capacity(examples.len());
        for ex in examples {
            let prompt = match task.mode {
                QueryMode::General => None,
                QueryMode::Referring => Some(referring_prompt(ex)),
            };
            inferences.push(infer(model, vocab, &ex.image, task, prompt.as_deref())?);
        }
        let report = match task.kind {
            Kind::Classification => score_classification(&task, dataset, examples, &inferences)?,
            Kind::Detection => score_detection(&task, dataset, examples, &inferences)?,
            Kind::Segmentation => {
                let (report, files) = score_segmentation(
                    &task,
                    dataset,
                    examples,
                    &inferences,
                    overlay_dir,
                    overlays_per_task,
                )?;
                overlays.extend(files);
                report
            }
        };
        reports.push(report);
    }
    Ok((reports, overlays))
}

/// Referring prompts name the scene's classes; empty scenes fall back to the
/// full lesion palette so the query is still well-formed.
fn referring_prompt(ex: &Example) -> String {
    if ex.record.classes.is_empty() {
        return LESION_CLASSES.join(" ");
    }
    let mut classes = ex.record.classes.clone();
    classes.sort();
    classes.dedup();
    classes.join(" ")
}

/// Class set under the convention that an empty scene means "normal".
fn label_set(classes: &[String]) -> std::collections::BTreeSet<String> {
    if classes.is_empty() {
        std::iter::once("normal".to_string()).collect()
    } else {
        classes.iter().cloned().collect()
    }
}

fn score_classification(
    task: &TaskSpec,
    dataset: &str,
    examples: &[Example],
    inferences: &[crate::tasks::Inference],
) -> Result<MetricReport> {
    let gts: Vec<_> = examples.iter().map(|e| label_set(&e.record.classes)).collect();
    let preds: Vec<_> = inferences.iter().map(|i| label_set(&i.class_set())).collect();
    let (value, per_class) = mean_accuracy(&preds, &gts)?;
    Ok(MetricReport {
        task: task.name(),
        dataset: dataset.into(),
        metric: "mAcc".into(),
        value,
        per_class,
        samples: examples.len(),
    })
}

fn score_detection(
    task: &TaskSpec,
    dataset: &str,
    examples: &[Example],
    inferences: &[crate::tasks::Inference],
) -> Result<MetricReport> {
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for (i, (ex, inf)) in examples.iter().zip(inferences).enumerate() {
        for (class, b) in ex.record.classes.iter().zip(&ex.record.boxes) {
            gts.push(GtBox { image: i, class: class.clone(), box_px: *b });
        }
        for p in &inf.predictions {
            if let Some(b) = p.box_px {
                preds.push(Detection {
                    image: i,
                    class: p.class_name.clone(),
                    box_px: b,
                    score: p.score,
                });
            }
        }
    }
    let (value, per_class) = mean_ap(&preds, &gts, &default_iou_thresholds())?;
    Ok(MetricReport {
        task: task.name(),
        dataset: dataset.into(),
        metric: "mAP".into(),
        value,
        per_class,
        samples: examples.len(),
    })
}

fn score_segmentation(
    task: &TaskSpec,
    dataset: &str,
    examples: &[Example],
    inferences: &[crate::tasks::Inference],
    overlay_dir: Option<&Path>,
    overlays_per_task: usize,
) -> Result<(MetricReport, Vec<PathBuf>)> {
    let size = examples[0].image.shape()[0];
    let mut total = 0.0;
    let mut per_class_acc: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    let mut overlays = Vec::new();
    for (i, (ex, inf)) in examples.iter().zip(inferences).enumerate() {
        let gt = union_mask(size, ex.record.masks.iter());
        let pred = union_mask(size, inf.predictions.iter().filter_map(|p| p.mask.as_ref()));
        total += dice_score(&pred, &gt)?;
        let mut classes: Vec<&String> = ex.record.classes.iter().collect();
        classes.sort();
        classes.dedup();
        for class in classes {
            let gt_c = union_mask(
                size,
                ex.record
                    .classes
                    .iter()
                    .zip(&ex.record.masks)
                    .filter(|(c, _)| *c == class)
                    .map(|(_, m)| m),
            );
            let pred_c = union_mask(
                size,
                inf.predictions
                    .iter()
                    .filter(|p| &p.class_name == class)
                    .filter_map(|p| p.mask.as_ref()),
            );
            let e = per_class_acc.entry(class.clone()).or_insert((0.0, 0));
            e.0 += dice_score(&pred_c, &gt_c)?;
            e.1 += 1;
        }
        if let Some(dir) = overlay_dir {
            if i < overlays_per_task {
                let name = format!("overlay_{}_{i:03}.png", task.name().replace('/', "-"));
                let path = dir.join(name);
                write_overlay(&path, &ex.image, &pred, &gt)?;
                overlays.push(path);
            }
        }
    }
    let per_class: Vec<(String, f64)> =
        per_class_acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect();
    Ok((
        MetricReport {
            task: task.name(),
            dataset: dataset.into(),
            metric: "Dice".into(),
            value: total / examples.len() as f64,
            per_class,
            samples: examples.len(),
        },
        overlays,
    ))
}

fn union_mask<'a>(size: usize, masks: impl Iterator<Item = &'a Array2<u8>>) -> Array2<u8> {
    let mut out = Array2::<u8>::zeros((size, size));
    for m in masks {
        for (o, &v) in out.iter_mut().zip(m.iter()) {
            if v > 0 {
                *o = 1;
            }
        }
    }
    out
}

/// Image with the predicted mask blended into the red channel and the ground
/// truth into the green channel.
fn write_overlay(
    path: &Path,
    image: &ndarray::Array3<f64>,
    pred: &Array2<u8>,
    gt: &Array2<u8>,
) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = [
                image[[y, x, 0]].clamp(0.0, 1.0),
                image[[y, x, 1]].clamp(0.0, 1.0),
                image[[y, x, 2]].clamp(0.0, 1.0),
            ];
            if pred[[y, x]] > 0 {
                px[0] = 0.5 * px[0] + 0.5;
            }
            if gt[[y, x]] > 0 {
                px[1] = 0.5 * px[1] + 0.5;
            }
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb(px.map(|v| (v * 255.0).round() as u8)),
            );
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    buf.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Loss-weight sweep rows, in the published order.
pub const LAMBDA_SWEEP: [f64; 5] = [1.0, 0.75, 0.5, 0.1, 0.0];

/// One training config per loss-weight row.
pub fn lambda_sweep(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    LAMBDA_SWEEP
        .iter()
        .map(|&lambda| (format!("lambda={lambda}"), TrainConfig { lambda, ..base.clone() }))
        .collect()
}

/// Task-subset sweep: all tasks, each task removed in turn, and
/// segmentation alone.
pub fn task_sweep() -> Vec<(String, Vec<TaskSpec>)> {
    let all = TaskSpec::all();
    let mut out = vec![("all".to_string(), all.clone())];
    for kind in [Kind::Detection, Kind::Classification] {
        let subset: Vec<TaskSpec> = all.iter().copied().filter(|t| t.kind != kind).collect();
        out.push((format!("-{}", kind.as_str()), subset));
    }
    let seg: Vec<TaskSpec> =
        all.iter().copied().filter(|t| t.kind == Kind::Segmentation).collect();
    out.push(("segmentation-only".to_string(), seg));
    out
}

/// Sampling-ratio sweep rows, in the published order. Both `0.5:1` and
/// `1:2` reduce to one labeled draw per two unlabeled; they are kept as
/// separate rows to mirror the published table.
pub fn ratio_sweep(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    [("0.5:1", (1, 2)), ("1:1", (1, 1)), ("1:2", (1, 2))]
        .iter()
        .map(|&(name, ratio)| (name.to_string(), TrainConfig { ratio, ..base.clone() }))
        .collect()
}
