//! Task composition: every supported task is an output kind (classification,
//! detection, segmentation) paired with an input queue mode (general or
//! referring). One checkpoint serves all six combinations; a referring task
//! additionally conditions on a text prompt and keeps only the prompted
//! classes after decoding.
//!
//! ```
//! use omnilens::codec::Kind;
//! use omnilens::tasks::{QueryMode, TaskSpec};
//!
//! assert_eq!(TaskSpec::all().len(), 6);
//! let t = TaskSpec::compose(Kind::Segmentation, QueryMode::Referring);
//! assert_eq!(t.name(), "segmentation/referring");
//! ```

use ndarray::Array2;

use crate::codec::{decode_prediction, BoxPx, Kind, ParseReport, TokenSequence, UnifiedVocabulary};
use crate::error::{Error, Result};
use crate::model::{upsample_bilinear, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryMode {
    General,
    Referring,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::General => "general",
            QueryMode::Referring => "referring",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(QueryMode::General),
            "referring" => Ok(QueryMode::Referring),
            other => Err(Error::Config(format!("unknown query mode {other:?}"))),
        }
    }
}

/// One task: what to output and which queue drives it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskSpec {
    pub kind: Kind,
    pub mode: QueryMode,
}

impl TaskSpec {
    pub fn compose(kind: Kind, mode: QueryMode) -> Self {
        Self { kind, mode }
    }

    /// All six supported tasks, in a fixed order.
    pub fn all() -> Vec<TaskSpec> {
        let kinds = [Kind::Classification, Kind::Detection, Kind::Segmentation];
        let modes = [QueryMode::General, QueryMode::Referring];
        kinds
            .iter()
            .flat_map(|&k| modes.iter().map(move |&m| TaskSpec::compose(k, m)))
            .collect()
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.kind.as_str(), self.mode.as_str())
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (k, m) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("task {s:?} is not kind/mode")))?;
        Ok(TaskSpec::compose(Kind::parse(k)?, QueryMode::parse(m)?))
    }
}

/// One decoded object, tied back to the query that produced it.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub query: usize,
    pub class_name: String,
    pub box_px: Option<BoxPx>,
    /// Full-resolution binary mask from the pixel path (segmentation only).
    pub mask: Option<Array2<u8>>,
    /// Joint probability of the emitted semantic tokens.
    pub score: f64,
}

/// Inference result for one image and one task.
#[derive(Debug, Clone)]
pub struct Inference {
    pub task: TaskSpec,
    pub predictions: Vec<Prediction>,
    pub report: ParseReport,
    pub truncated_prompt: bool,
}

impl Inference {
    /// Unique predicted class names, sorted (the classification view).
    pub fn class_set(&self) -> Vec<String> {
        let mut v: Vec<String> = self.predictions.iter().map(|p| p.class_name.clone()).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Runs one task on one image. `prompt` is required for referring mode and
/// must be absent for general mode.
pub fn infer(
    model: &Model,
    vocab: &UnifiedVocabulary,
    image: &ndarray::Array3<f64>,
    task: TaskSpec,
    prompt: Option<&str>,
) -> Result<Inference> {
    let prompt = match (task.mode, prompt) {
        (QueryMode::Referring, Some(p)) if !p.trim().is_empty() => Some(p),
        (QueryMode::Referring, _) => {
            return Err(Error::Config("referring task needs a non-empty prompt".into()))
        }
        (QueryMode::General, None) => None,
        (QueryMode::General, Some(_)) => {
            return Err(Error::Config("general task does not take a prompt".into()))
        }
    };

    let mut fwd = model.begin();
    let vis = fwd.visual_encode(image)?;
    let (text, truncated_prompt) = match prompt {
        Some(p) => {
            let tq = fwd.text_encode(p, vocab)?;
            (tq, false)
        }
        None => (crate::model::TextQueue { states: None, n: 0, truncated: false }, false),
    };
    let truncated_prompt = truncated_prompt || text.truncated;
    let states = fwd.decode(&vis, text.states, text.n);
    let m = model.config.general_queries;
    let general = fwd.tape.slice_rows(states.queue, text.n, text.n + m);
    let decoded = fwd.semantic_greedy(general);
    let pixel_logits = states.pixel_logits(&fwd.tape);
    let image_size = (model.config.image_size, model.config.image_size);

    let mut predictions = Vec::new();
    let mut report = ParseReport::default();
    for (qi, dq) in decoded.iter().enumerate() {
        let mut ids = vec![UnifiedVocabulary::BOS];
        ids.extend(&dq.tokens);
        ids.push(UnifiedVocabulary::EOS);
        let seq = TokenSequence::raw(ids);
        let (rec, rep) = decode_prediction(&[seq], vocab, image_size);
        report.absorb(&rep);
        if rec.classes.is_empty() {
            continue;
        }
        let class_name = rec.classes[0].clone();
        let box_px = rec.boxes.first().copied();
        let mask = if task.kind == Kind::Segmentation {
            let logits = pixel_logits.index_axis(ndarray::Axis(0), qi).to_owned();
            let up = upsample_bilinear(&logits, model.config.image_size);
            Some(up.mapv(|v| (v > 0.0) as u8))
        } else {
            None
        };
        predictions.push(Prediction { query: qi, class_name, box_px, mask, score: dq.score() });
    }

    // the kind gates which fields survive
    for p in &mut predictions {
        if task.kind != Kind::Detection {
            p.box_px = None;
        }
    }
    if task.kind == Kind::Detection {
        predictions.retain(|p| p.box_px.is_some());
    }

    // referring: keep only the prompted classes
    if let Some(p) = prompt {
        let wanted: std::collections::BTreeSet<String> = p
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|w| !w.is_empty())
            .map(|w| w.to_string())
            .collect();
        predictions.retain(|pr| wanted.contains(&pr.class_name));
    }

    Ok(Inference { task, predictions, report, truncated_prompt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::build_vocabulary;
    use crate::model::{Model, ModelConfig};
    use ndarray::Array3;

    #[test]
    fn six_tasks_compose_bijectively() {
        let all = TaskSpec::all();
        assert_eq!(all.len(), 6);
        let unique: std::collections::BTreeSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 6);
        for t in &all {
            assert_eq!(TaskSpec::parse(&t.name()).unwrap(), *t);
        }
    }

    #[test]
    fn task_parse_rejects_garbage() {
        assert!(TaskSpec::parse("detection").is_err());
        assert!(TaskSpec::parse("detection/both").is_err());
        assert!(TaskSpec::parse("captioning/general").is_err());
    }

    fn tiny_setup() -> (Model, crate::codec::UnifiedVocabulary) {
        let vocab = build_vocabulary(&["polyp".into(), "cancer".into()], 16).unwrap();
        let cfg = ModelConfig {
            image_size: 16,
            embed_dim: 8,
            levels: 2,
            decoder_layers: 2,
            general_queries: 3,
            text_max_tokens: 8,
            semantic_steps: 8,
            text_layers: 1,
            hidden_mult: 2,
            proj_dim: 4,
            vocab_size: vocab.total_size(),
        };
        (Model::new(cfg, 21).unwrap(), vocab)
    }

    #[test]
    fn prompt_rules_enforced() {
        let (model, vocab) = tiny_setup();
        let img = Array3::<f64>::from_elem((16, 16, 3), 0.5);
        let gen = TaskSpec::compose(Kind::Detection, QueryMode::General);
        let rf = TaskSpec::compose(Kind::Detection, QueryMode::Referring);
        assert!(infer(&model, &vocab, &img, gen, Some("polyp")).is_err());
        assert!(infer(&model, &vocab, &img, rf, None).is_err());
        assert!(infer(&model, &vocab, &img, rf, Some("  ")).is_err());
        assert!(infer(&model, &vocab, &img, gen, None).is_ok());
        assert!(infer(&model, &vocab, &img, rf, Some("polyp")).is_ok());
    }

    #[test]
    fn output_fields_match_task_kind() {
        let (model, vocab) = tiny_setup();
        let img = Array3::from_shape_fn((16, 16, 3), |(y, x, c)| ((y + x + c) % 7) as f64 / 7.0);
        for task in TaskSpec::all() {
            let prompt = (task.mode == QueryMode::Referring).then_some("polyp cancer");
            let inf = infer(&model, &vocab, &img, task, prompt).unwrap();
            for p in &inf.predictions {
                assert_eq!(p.box_px.is_some(), task.kind == Kind::Detection);
                assert_eq!(p.mask.is_some(), task.kind == Kind::Segmentation);
                assert!(p.score >= 0.0 && p.score <= 1.0 + 1e-12);
            }
            assert!(inf.report.conserved());
        }
    }

    #[test]
    fn referring_filter_is_decode_then_filter() {
        let (model, vocab) = tiny_setup();
        let img = Array3::from_shape_fn((16, 16, 3), |(y, x, _)| ((y * x) % 5) as f64 / 5.0);
        let task = TaskSpec::compose(Kind::Classification, QueryMode::Referring);
        let inf = infer(&model, &vocab, &img, task, Some("polyp")).unwrap();
        for p in &inf.predictions {
            assert_eq!(p.class_name, "polyp");
        }
    }
}
