//! Command-line entry point. Every subcommand resolves one flat run config
//! (defaults < config file < `--set key=value`), archives it beside its
//! outputs, and is replayable bit-for-bit from that archive.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use omnilens::codec::{build_vocabulary, manifest_lines, Kind, ManifestEntry, UnifiedVocabulary};
use omnilens::data::{load_dataset, load_png_rgb, make_datasets, DatasetPolicy, Example, CLASS_NAMES};
use omnilens::error::{Error, Result};
use omnilens::eval::{
    lambda_sweep, ratio_sweep, run_protocol, task_sweep, MetricReport, Protocol, ProtocolSpec,
};
use omnilens::model::{load_checkpoint, save_checkpoint, Model};
use omnilens::runcfg::RunConfig;
use omnilens::tasks::{infer, TaskSpec};
use omnilens::train::{TrainConfig, Trainer};

const VOCAB_FILE: &str = "vocab.txt";
const DATASET: &str = "toy";

#[derive(Parser)]
#[command(name = "omnilens", version, about = "one model, one checkpoint, many tasks")]
struct Cli {
    /// key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// config override, highest precedence (repeatable)
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// generate the synthetic datasets and the vocabulary
    SynthData,
    /// train a model from scratch and write a checkpoint
    Train,
    /// score a checkpoint under an evaluation protocol
    Eval,
    /// run one task on one image
    Infer(InferArgs),
    /// run an ablation sweep end to end
    Ablate(AblateArgs),
}

#[derive(Args)]
struct InferArgs {
    /// task kind: classification | detection | segmentation
    #[arg(long)]
    task: Option<String>,
    /// use the referring (text-prompted) variant
    #[arg(long)]
    referring: bool,
    /// prompt text for referring tasks
    #[arg(long)]
    prompt: Option<String>,
    /// input image (defaults to the first test image)
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// sweep name: lambda | tasks | ratio
    #[arg(long)]
    sweep: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // usage errors exit 2 via clap
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::SynthData => synth_data(&cfg),
        Command::Train => train(&cfg),
        Command::Eval => eval(&cfg),
        Command::Infer(args) => {
            fold_infer_args(&mut cfg, &args)?;
            run_infer(&cfg)
        }
        Command::Ablate(args) => {
            if let Some(s) = &args.sweep {
                cfg.set("ablate.sweep", s)?;
            }
            ablate(&cfg)
        }
    }
}

fn fold_infer_args(cfg: &mut RunConfig, args: &InferArgs) -> Result<()> {
    if args.task.is_some() || args.referring {
        let kind = args.task.as_deref().unwrap_or("segmentation");
        let mode = if args.referring { "referring" } else { "general" };
        cfg.set("infer.task", &format!("{kind}/{mode}"))?;
    }
    if let Some(p) = &args.prompt {
        cfg.set("infer.prompt", p)?;
    }
    if let Some(i) = &args.image {
        cfg.set("infer.image", &i.display().to_string())?;
    }
    Ok(())
}

fn class_corpus() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

fn load_vocab(cfg: &RunConfig) -> Result<UnifiedVocabulary> {
    let path = cfg.data_dir().join(VOCAB_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {} (run synth-data first): {e}", path.display())))?;
    UnifiedVocabulary::from_file_string(&text)
}

fn load_split(cfg: &RunConfig, dataset: &str, split: &str) -> Result<Vec<Example>> {
    let path = cfg.data_dir().join(dataset).join(format!("{split}.manifest"));
    load_dataset(&path)
}

fn synth_data(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir)?;
    let vocab = build_vocabulary(&class_corpus(), cfg.get_usize("vocab.coord_bins")?)?;
    fs::write(dir.join(VOCAB_FILE), vocab.to_file_string())?;
    let policy = DatasetPolicy {
        name: DATASET.into(),
        kinds: [Kind::Classification, Kind::Detection, Kind::Segmentation].into_iter().collect(),
        train: cfg.get_usize("data.train")?,
        val: cfg.get_usize("data.val")?,
        test: cfg.get_usize("data.test")?,
    };
    let built = make_datasets(
        &dir,
        &cfg.scene_spec()?,
        &[policy],
        cfg.get_usize("data.unlabeled")?,
        cfg.seed(),
    )?;
    cfg.archive()?;
    for b in &built {
        for (split, path) in &b.manifests {
            println!("wrote {} {} -> {}", b.name, split, path.display());
        }
    }
    println!("wrote vocabulary ({} tokens) -> {}", vocab.total_size(), dir.join(VOCAB_FILE).display());
    Ok(())
}

fn build_model(cfg: &RunConfig, vocab: &UnifiedVocabulary) -> Result<Model> {
    let mut mc = cfg.model_config()?;
    mc.vocab_size = vocab.total_size();
    Model::new(mc, cfg.seed())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let labeled = load_split(cfg, DATASET, "train")?;
    let tc = cfg.train_config()?;
    let unlabeled =
        if tc.lambda > 0.0 { load_split(cfg, "unlabeled", "train")? } else { Vec::new() };
    let model = build_model(cfg, &vocab)?;
    let mut trainer = Trainer::new(model, vocab.clone(), tc)?;
    let results = cfg.results_dir();
    fs::create_dir_all(&results)?;
    let mut log = Vec::new();
    let reports = trainer.train(&labeled, &unlabeled, &mut log)?;
    fs::write(results.join("train_log.txt"), &log)?;
    let ckpt = cfg.checkpoint_path();
    save_checkpoint(&ckpt, &trainer.model, &vocab.hash())?;
    cfg.archive()?;
    if let Some(last) = reports.last() {
        println!("{}", last.to_line());
    }
    println!("wrote checkpoint -> {}", ckpt.display());
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let model = load_checkpoint(&cfg.checkpoint_path(), &vocab.hash())?;
    let train_set = load_split(cfg, DATASET, "train")?;
    let eval_set = load_split(cfg, DATASET, "test")?;
    let tc = cfg.train_config()?;
    let unlabeled =
        if tc.lambda > 0.0 { load_split(cfg, "unlabeled", "train")? } else { Vec::new() };
    let results = cfg.results_dir();
    let spec = ProtocolSpec {
        protocol: Protocol::parse(cfg.get("eval.protocol")?)?,
        tasks: cfg.eval_tasks()?,
        train: tc,
        dataset: DATASET.into(),
        overlay_dir: Some(results.join("overlays")),
        overlays_per_task: cfg.get_usize("eval.overlays")?,
    };
    let report = run_protocol(&spec, &model, &vocab, &train_set, &unlabeled, &eval_set)?;
    let lines: Vec<String> = report.reports.iter().map(|r| r.to_line()).collect();
    fs::create_dir_all(&results)?;
    fs::write(results.join("metrics.txt"), lines.join("\n") + "\n")?;
    cfg.archive()?;
    print!("{}", MetricReport::render_table(&report.reports));
    for p in &report.overlays {
        println!("wrote overlay -> {}", p.display());
    }
    Ok(())
}

fn run_infer(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let model = load_checkpoint(&cfg.checkpoint_path(), &vocab.hash())?;
    let task = TaskSpec::parse(cfg.get("infer.task")?)?;
    let prompt = match cfg.get("infer.prompt")? {
        "" => None,
        p => Some(p.to_string()),
    };
    let image_path = match cfg.get("infer.image")? {
        "" => cfg
            .data_dir()
            .join(DATASET)
            .join("images")
            .join(format!("{DATASET}-test-0000.png")),
        p => PathBuf::from(p),
    };
    let image = load_png_rgb(&image_path)?;
    let out = infer(&model, &vocab, &image, task, prompt.as_deref())?;

    // emit the parsed record in manifest-line form
    let mut record = omnilens::codec::AnnotationRecord {
        image_id: image_path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
        ..Default::default()
    };
    record.present_kinds = BTreeSet::from([task.kind]);
    for p in &out.predictions {
        record.classes.push(p.class_name.clone());
        if let Some(b) = p.box_px {
            record.boxes.push(b);
        }
        if let Some(m) = &p.mask {
            record.masks.push(m.clone());
        }
    }
    let entry = ManifestEntry {
        image_path: image_path.display().to_string(),
        record,
        mask_path: None,
    };
    print!("{}", manifest_lines(&[entry]));
    if out.report.dropped > 0 {
        println!("# dropped {} malformed objects", out.report.dropped);
    }
    cfg.archive()?;
    Ok(())
}

fn ablate(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let labeled = load_split(cfg, DATASET, "train")?;
    let eval_set = load_split(cfg, DATASET, "test")?;
    let base = cfg.train_config()?;
    let sweep = cfg.get("ablate.sweep")?;
    let runs: Vec<(String, TrainConfig, Vec<TaskSpec>)> = match sweep {
        "lambda" => lambda_sweep(&base)
            .into_iter()
            .map(|(name, tc)| (name, tc, TaskSpec::all()))
            .collect(),
        "ratio" => ratio_sweep(&base)
            .into_iter()
            .map(|(name, tc)| (name, tc, TaskSpec::all()))
            .collect(),
        "tasks" => task_sweep()
            .into_iter()
            .map(|(name, tasks)| (name, base.clone(), tasks))
            .collect(),
        other => return Err(Error::Config(format!("unknown sweep {other:?}"))),
    };
    let need_unlabeled = runs.iter().any(|(_, tc, _)| tc.lambda > 0.0);
    let unlabeled =
        if need_unlabeled { load_split(cfg, "unlabeled", "train")? } else { Vec::new() };
    let results = cfg.results_dir().join(format!("ablate-{sweep}"));
    let mut all = Vec::new();
    for (name, tc, tasks) in runs {
        let run_dir = results.join(name.replace([':', '/'], "-"));
        fs::create_dir_all(&run_dir)?;
        let model = build_model(cfg, &vocab)?;
        let mut trainer = Trainer::new(model, vocab.clone(), tc.clone())?;
        let mut log = Vec::new();
        let unl = if tc.lambda > 0.0 { &unlabeled[..] } else { &[] };
        trainer.train(&labeled, unl, &mut log)?;
        fs::write(run_dir.join("train_log.txt"), &log)?;
        let spec = ProtocolSpec {
            protocol: Protocol::ZeroShot,
            tasks,
            train: tc,
            dataset: DATASET.into(),
            overlay_dir: Some(run_dir.join("overlays")),
            overlays_per_task: cfg.get_usize("eval.overlays")?,
        };
        let report = run_protocol(&spec, &trainer.model, &vocab, &labeled, &[], &eval_set)?;
        let lines: Vec<String> = report.reports.iter().map(|r| r.to_line()).collect();
        fs::write(run_dir.join("metrics.txt"), lines.join("\n") + "\n")?;
        println!("== {name} ==");
        print!("{}", MetricReport::render_table(&report.reports));
        all.extend(report.reports);
    }
    cfg.archive()?;
    let lines: Vec<String> = all.iter().map(|r| r.to_line()).collect();
    fs::write(results.join("metrics.txt"), lines.join("\n") + "\n")?;
    Ok(())
}
