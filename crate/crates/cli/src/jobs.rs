use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use ecgfm::dsp::{preprocess, preprocess_raw, PreprocessConfig};
use ecgfm::experiments::files::{
    load_segment_set, read_manifest, read_records, read_vocab, resolve_vocab, write_dataset, write_segments,
};
use ecgfm::experiments::{
    apply_override, grid_mixture, label_columns, parse_override, reseed_mixture, run_ablation, AblationSpec, Study,
};
use ecgfm::metrics::{curve_csv, evaluate_multilabel, pr_curve, roc_curve, ScoredSet, ThresholdPolicy};
use ecgfm::nnet::{ModelConfig, Precision, Real};
use ecgfm::recordio::{
    generate_mixture, patient_split, synthetic_vocabulary, LabelVocabulary, Manifest, SplitRatios, SynthConfig,
    STANDARD_LEADS,
};
use ecgfm::trainer::{
    finetune, history_csv, load_checkpoint, predict_logits, read_checkpoint_header, resume, save_checkpoint,
    scored_sets, train, Checkpoint, FinetuneMode, SegmentSet, TrainConfig, TrainOutcome, ECKP_MAGIC,
};
use ecgfm::Error;

use crate::run_manifest::RunManifest;
use crate::{AblateArgs, Cli, Command, DataArgs, EvalArgs, PreprocessArgs, ProbeArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    /// 1 usage, 2 data or format, 3 numerical divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::InvalidArgument(_)) => 1,
            CliError::Lib(Error::Diverged { .. } | Error::Numerical(_)) => 3,
            CliError::Lib(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

type Res<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Lib(Error::Format(format!("csv: {e}")))
}

struct Ctx<'a> {
    cli: &'a Cli,
    started: Instant,
    workers: usize,
}

impl Ctx<'_> {
    fn finish(&self, sub: &str, config: &impl Serialize, inputs: Vec<PathBuf>, out: &Path, seed: u64) -> Res<()> {
        let m = RunManifest {
            subcommand: sub.into(),
            config: serde_json::to_value(config)?,
            inputs,
            outputs: vec![out.to_path_buf()],
            seed,
            precision: self.cli.precision,
            workers: self.workers,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            duration_s: self.started.elapsed().as_secs_f64(),
        };
        m.write(out)?;
        Ok(())
    }
}

/// File config (or `base`), then flag values, then `--set` overrides.
fn resolve<C: Serialize + DeserializeOwned>(
    base: C,
    file: Option<&Path>,
    flags: Vec<(&str, Option<Value>)>,
    sets: &[String],
) -> Res<C> {
    let mut v = match file {
        Some(p) => {
            let from_file: C = serde_json::from_str(&fs::read_to_string(p)?)?;
            serde_json::to_value(from_file)?
        }
        None => serde_json::to_value(base)?,
    };
    for (path, value) in flags {
        if let Some(value) = value {
            apply_override(&mut v, path, value)?;
        }
    }
    for s in sets {
        let (path, value) = parse_override(s)?;
        apply_override(&mut v, &path, value)?;
    }
    Ok(serde_json::from_value(v)?)
}

fn path_value(p: &Option<PathBuf>) -> Option<Value> {
    p.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned()))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Res<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("missing {what}")))
}

pub fn run(cli: &Cli) -> Res<()> {
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(usage("--workers must be >= 1"));
    }
    // a second build in the same process (tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    let ctx = Ctx { cli, started: Instant::now(), workers };
    match &cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Preprocess(a) => preprocess_cmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Finetune(a) => {
            let mode = match &a.mode {
                Some(m) => Some(m.parse::<FinetuneMode>()?),
                None => None,
            };
            finetune_cmd(&ctx, &a.probe, mode, "finetune")
        }
        Command::Probe(a) => finetune_cmd(&ctx, a, Some(FinetuneMode::LinearProbe), "probe"),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
        Command::Inspect(a) => inspect(&a.path),
    }
}

macro_rules! with_precision {
    ($p:expr, $f:ident($($arg:expr),*)) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SynthJob {
    out: Option<PathBuf>,
    n_records: usize,
    seed: u64,
    /// Empty means the rhythm x axis grid with `n_records` records.
    mixture: Vec<SynthConfig>,
}

impl Default for SynthJob {
    fn default() -> Self {
        Self { out: None, n_records: 64, seed: 0, mixture: Vec::new() }
    }
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Res<()> {
    let mut job: SynthJob = resolve(
        SynthJob::default(),
        a.config.as_deref(),
        vec![("out", path_value(&a.out)), ("n_records", a.n.map(Value::from)), ("seed", ctx.cli.seed.map(Value::from))],
        &ctx.cli.set,
    )?;
    let out = required(&job.out, "--out")?.to_path_buf();
    if job.mixture.is_empty() {
        job.mixture = grid_mixture(job.n_records, job.seed);
    } else if ctx.cli.seed.is_some() {
        reseed_mixture(&mut job.mixture, job.seed);
    }
    let (records, manifest) = generate_mixture(&job.mixture)?;
    write_dataset(&out, &records, &manifest, &synthetic_vocabulary())?;
    eprintln!("synth: wrote {} records to {}", records.len(), out.display());
    ctx.finish("synth", &job, Vec::new(), &out, job.seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitJob {
    ratios: [f64; 3],
    seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PreprocessJob {
    manifest: Option<PathBuf>,
    vocab: Option<PathBuf>,
    out: Option<PathBuf>,
    preprocess: PreprocessConfig,
    leads: Vec<String>,
    /// Per-window z-score; off keeps millivolts.
    normalize: bool,
    /// Patient-level split into `train/`, `valid/` and `test/`.
    split: Option<SplitJob>,
}

impl Default for PreprocessJob {
    fn default() -> Self {
        Self {
            manifest: None,
            vocab: None,
            out: None,
            preprocess: PreprocessConfig::default(),
            leads: STANDARD_LEADS.iter().map(|s| s.to_string()).collect(),
            normalize: true,
            split: Some(SplitJob { ratios: [0.8, 0.1, 0.1], seed: 0 }),
        }
    }
}

fn preprocess_cmd(ctx: &Ctx, a: &PreprocessArgs) -> Res<()> {
    use rayon::prelude::*;
    let mut job: PreprocessJob = resolve(
        PreprocessJob::default(),
        a.config.as_deref(),
        vec![("manifest", path_value(&a.manifest)), ("vocab", path_value(&a.vocab)), ("out", path_value(&a.out))],
        &ctx.cli.set,
    )?;
    if let (Some(s), Some(split)) = (ctx.cli.seed, job.split.as_mut()) {
        split.seed = s;
    }
    let mpath = required(&job.manifest, "--manifest")?.to_path_buf();
    let out = required(&job.out, "--out")?.to_path_buf();
    let vpath = resolve_vocab(&mpath, job.vocab.as_deref());
    let vocab = read_vocab(&vpath)?;
    let manifest = read_manifest(&mpath, &vocab)?;
    let records = read_records(&mpath, &manifest)?;
    let leads: Vec<&str> = job.leads.iter().map(String::as_str).collect();

    let parts: Vec<(Option<&str>, Manifest)> = match &job.split {
        Some(s) => {
            let [r0, r1, r2] = s.ratios;
            let (tr, va, te) = patient_split(&manifest, SplitRatios::new(r0, r1, r2)?, s.seed)?;
            vec![(Some("train"), tr), (Some("valid"), va), (Some("test"), te)]
        }
        None => vec![(None, manifest.clone())],
    };
    let by_id: std::collections::HashMap<&str, usize> =
        manifest.entries.iter().enumerate().map(|(i, e)| (e.record_id.as_str(), i)).collect();
    for (name, part) in &parts {
        let segs: Vec<_> = part
            .entries
            .par_iter()
            .map(|e| {
                let r = &records[by_id[e.record_id.as_str()]];
                let s = if job.normalize { preprocess(r, &job.preprocess, &leads) } else { preprocess_raw(r, &job.preprocess, &leads) };
                s.map(|v| v.into_iter().map(|seg| (seg, e)).collect::<Vec<_>>())
            })
            .collect::<ecgfm::Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let dir = name.map_or(out.clone(), |n| out.join(n));
        let written = write_segments(&dir, &segs, job.preprocess.target_fs, &vocab)?;
        eprintln!("preprocess: {} windows from {} records -> {}", written.len(), part.len(), dir.display());
    }
    let seed = job.split.as_ref().map_or(0, |s| s.seed);
    ctx.finish("preprocess", &job, vec![mpath, vpath], &out, seed)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct DataPaths {
    train: Option<PathBuf>,
    valid: Option<PathBuf>,
    vocab: Option<PathBuf>,
    /// Labels the head predicts; empty means the whole vocabulary.
    labels: Vec<String>,
}

/// A preset name or a full architecture. Presets take their input
/// channels from the data and their outputs from the label list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ModelSpec {
    Preset(String),
    Config(ModelConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainJob {
    model: ModelSpec,
    data: DataPaths,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
    #[serde(flatten)]
    train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self { model: ModelSpec::Preset("desk".into()), data: DataPaths::default(), out: None, resume: None, train: TrainConfig::default() }
    }
}

fn data_flags(d: &DataArgs) -> Vec<(&'static str, Option<Value>)> {
    vec![
        ("data.train", path_value(&d.train)),
        ("data.valid", path_value(&d.valid)),
        ("data.vocab", path_value(&d.vocab)),
        ("out", path_value(&d.out)),
    ]
}

struct Loaded {
    train: SegmentSet,
    valid: SegmentSet,
    labels: Vec<String>,
    inputs: Vec<PathBuf>,
}

fn load_data(d: &DataPaths) -> Res<Loaded> {
    let tpath = required(&d.train, "training manifest (--train)")?;
    let vpath = resolve_vocab(tpath, d.vocab.as_deref());
    let vocab = read_vocab(&vpath)?;
    let labels: Vec<String> = if d.labels.is_empty() { vocab.names().to_vec() } else { d.labels.clone() };
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let map = label_columns(&vocab, &refs)?;
    let load = |p: &Path| -> Res<SegmentSet> {
        let m = read_manifest(p, &vocab)?.project_labels(&map);
        Ok(load_segment_set(p, &m, map.len())?)
    };
    let train = load(tpath)?;
    let mut inputs = vec![tpath.to_path_buf(), vpath];
    let valid = match &d.valid {
        Some(p) => {
            inputs.push(p.clone());
            load(p)?
        }
        None => SegmentSet::new(train.channel_names.clone(), train.length, map.len()),
    };
    Ok(Loaded { train, valid, labels, inputs })
}

/// Write best/last checkpoints, history and head labels; on divergence
/// keep the last good state before failing.
fn save_outcome<T: Real>(out: &Path, res: ecgfm::Result<TrainOutcome<T>>, labels: &[String]) -> Res<TrainOutcome<T>> {
    fs::create_dir_all(out)?;
    let outcome = match res {
        Ok(o) => o,
        Err(Error::Diverged { epoch, reason, last_good }) => {
            if let Some(bytes) = &last_good {
                fs::write(out.join("last_good.eckp"), bytes)?;
            }
            return Err(CliError::Lib(Error::Diverged { epoch, reason, last_good }));
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&outcome.best, out.join("best.eckp"))?;
    save_checkpoint(&outcome.last, out.join("last.eckp"))?;
    fs::write(out.join("history.csv"), history_csv(outcome.history()))?;
    fs::write(out.join("labels.txt"), LabelVocabulary::new(labels)?.to_text())?;
    let h = outcome.history();
    eprintln!(
        "{} epochs, best valid macro-AUROC {:?} at epoch {:?}; checkpoints in {}",
        h.len(),
        outcome.best.best_auroc,
        outcome.best.best_epoch,
        out.display()
    );
    Ok(outcome)
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Res<()> {
    let mut flags = data_flags(&a.data);
    flags.push(("resume", path_value(&a.resume)));
    flags.push(("seed", ctx.cli.seed.map(Value::from)));
    let job: TrainJob = resolve(TrainJob::default(), a.config.as_deref(), flags, &ctx.cli.set)?;
    let out = required(&job.out, "--out")?.to_path_buf();
    let data = load_data(&job.data)?;
    with_precision!(ctx.cli.precision, train_typed(&job, &data, &out))?;
    let mut inputs = data.inputs;
    inputs.extend(job.resume.clone());
    ctx.finish("train", &job, inputs, &out, job.train.seed)
}

fn train_typed<T: Real>(job: &TrainJob, data: &Loaded, out: &Path) -> Res<()> {
    let res = match &job.resume {
        Some(p) => {
            let last = load_checkpoint::<T>(p)?;
            let best_path = p.with_file_name("best.eckp");
            let best = if best_path.exists() && best_path != *p { Some(load_checkpoint::<T>(&best_path)?) } else { None };
            resume(last, best, Some(job.train.max_epochs), &data.train, &data.valid)
        }
        None => {
            let model = match &job.model {
                ModelSpec::Preset(p) => ModelConfig::preset(p, job.train.lead_view.out_channels(&data.train), data.labels.len())?,
                ModelSpec::Config(c) => c.clone(),
            };
            train::<T>(&model, &job.train, &data.train, &data.valid)
        }
    };
    save_outcome(out, res, &data.labels).map(|_| ())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct FinetuneJob {
    pretrained: Option<PathBuf>,
    data: DataPaths,
    out: Option<PathBuf>,
    #[serde(flatten)]
    train: TrainConfig,
}

impl Default for FinetuneJob {
    fn default() -> Self {
        Self { pretrained: None, data: DataPaths::default(), out: None, train: TrainConfig::finetune_default(FinetuneMode::Full) }
    }
}

fn finetune_cmd(ctx: &Ctx, a: &ProbeArgs, mode: Option<FinetuneMode>, sub: &str) -> Res<()> {
    let mut flags = data_flags(&a.data);
    flags.push(("pretrained", path_value(&a.pretrained)));
    flags.push(("seed", ctx.cli.seed.map(Value::from)));
    flags.push(("finetune_mode", mode.map(|m| serde_json::to_value(m).expect("serializable"))));
    let job: FinetuneJob = resolve(FinetuneJob::default(), a.config.as_deref(), flags, &ctx.cli.set)?;
    let out = required(&job.out, "--out")?.to_path_buf();
    let pre = required(&job.pretrained, "--pretrained")?.to_path_buf();
    let data = load_data(&job.data)?;
    let precision = checkpoint_precision(&pre)?;
    if precision != ctx.cli.precision {
        return Err(usage(format!("checkpoint is {precision:?}, run requested {:?}", ctx.cli.precision)));
    }
    with_precision!(precision, finetune_typed(&job, &pre, &data, &out))?;
    let mut inputs = data.inputs;
    inputs.push(pre);
    ctx.finish(sub, &job, inputs, &out, job.train.seed)
}

fn finetune_typed<T: Real>(job: &FinetuneJob, pre: &Path, data: &Loaded, out: &Path) -> Res<()> {
    let pretrained: Checkpoint<T> = load_checkpoint(pre)?;
    let res = finetune(&pretrained, data.labels.len(), &job.train, &data.train, &data.valid);
    save_outcome(out, res, &data.labels).map(|_| ())
}

fn checkpoint_precision(path: &Path) -> Res<Precision> {
    let (h, _) = read_checkpoint_header(&fs::read(path)?)?;
    Ok(h.precision)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EvalJob {
    scores: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    vocab: Option<PathBuf>,
    out: Option<PathBuf>,
    threshold: ThresholdPolicy,
    n_bootstrap: usize,
    seed: u64,
    curves: Option<PathBuf>,
    batch_size: usize,
}

impl Default for EvalJob {
    fn default() -> Self {
        Self {
            scores: None,
            checkpoint: None,
            manifest: None,
            vocab: None,
            out: None,
            threshold: ThresholdPolicy::default(),
            n_bootstrap: ecgfm::metrics::DEFAULT_N_BOOT,
            seed: 0,
            curves: None,
            batch_size: 64,
        }
    }
}

fn threshold_value(s: &Option<String>) -> Res<Option<Value>> {
    Ok(match s.as_deref() {
        None => None,
        Some("youden") => Some(Value::from("youden")),
        Some(x) => {
            let t: f64 = x.parse().map_err(|_| usage(format!("--threshold takes `youden` or a number, got {x:?}")))?;
            Some(serde_json::json!({ "fixed": t }))
        }
    })
}

/// Per-label scored sets from a CSV whose first column is `record_id`.
pub fn read_scores(path: &Path, manifest: &Manifest, vocab: &LabelVocabulary) -> Res<(Vec<String>, Vec<ScoredSet>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("record_id") {
        return Err(CliError::Lib(Error::Format("scores CSV must start with a record_id column".into())));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let cols = names
        .iter()
        .map(|n| vocab.index_of(n).ok_or_else(|| CliError::Lib(Error::Format(format!("scores column {n:?} not in vocabulary")))))
        .collect::<Res<Vec<_>>>()?;
    let by_id = manifest.by_record_id();
    let mut ids = Vec::new();
    let mut scores = vec![Vec::new(); names.len()];
    let mut truth = vec![Vec::new(); names.len()];
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let id = row.get(0).unwrap_or_default();
        let entry = by_id.get(id).ok_or_else(|| CliError::Lib(Error::Format(format!("record {id:?} not in manifest"))))?;
        for (k, &c) in cols.iter().enumerate() {
            let raw = row.get(k + 1).unwrap_or_default();
            let v: f64 = raw.trim().parse().map_err(|_| CliError::Lib(Error::Format(format!("bad score {raw:?} for {id}"))))?;
            scores[k].push(v);
            truth[k].push(entry.labels.contains(c));
        }
        ids.push(id.to_string());
    }
    let sets = scores
        .into_iter()
        .zip(truth)
        .map(|(s, t)| ScoredSet::with_ids(s, t, ids.clone()))
        .collect::<ecgfm::Result<Vec<_>>>()?;
    Ok((names, sets))
}

fn write_scores(path: &Path, ids: &[String], names: &[String], sets: &[ScoredSet]) -> Res<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["record_id".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(sets.iter().map(|s| s.scores[i].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> Res<()> {
    let job: EvalJob = resolve(
        EvalJob::default(),
        a.config.as_deref(),
        vec![
            ("scores", path_value(&a.scores)),
            ("checkpoint", path_value(&a.checkpoint)),
            ("manifest", path_value(&a.manifest)),
            ("vocab", path_value(&a.vocab)),
            ("out", path_value(&a.out)),
            ("curves", path_value(&a.curves)),
            ("threshold", threshold_value(&a.threshold)?),
            ("n_bootstrap", a.n_boot.map(Value::from)),
            ("seed", ctx.cli.seed.map(Value::from)),
        ],
        &ctx.cli.set,
    )?;
    let out = required(&job.out, "--out")?.to_path_buf();
    let mpath = required(&job.manifest, "--manifest")?.to_path_buf();
    let vpath = resolve_vocab(&mpath, job.vocab.as_deref());
    let vocab = read_vocab(&vpath)?;
    let manifest = read_manifest(&mpath, &vocab)?;
    let mut inputs = vec![mpath.clone(), vpath];
    let (names, sets) = match (&job.scores, &job.checkpoint) {
        (Some(s), None) => {
            inputs.push(s.clone());
            read_scores(s, &manifest, &vocab)?
        }
        (None, Some(c)) => {
            inputs.push(c.clone());
            let (names, sets) = with_precision!(checkpoint_precision(c)?, score_checkpoint(c, &mpath, &manifest, &vocab, job.batch_size))?;
            let ids: Vec<String> = manifest.entries.iter().map(|e| e.record_id.clone()).collect();
            let stem = out.file_stem().map_or("eval".into(), |s| s.to_string_lossy().into_owned());
            write_scores(&out.with_file_name(format!("{stem}_scores.csv")), &ids, &names, &sets)?;
            (names, sets)
        }
        _ => return Err(usage("eval needs exactly one of --scores or --checkpoint")),
    };
    let report = evaluate_multilabel(&sets, &names, job.threshold, job.n_bootstrap, job.seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, report.to_json()?)?;
    if let Some(dir) = &job.curves {
        fs::create_dir_all(dir)?;
        for (name, set) in names.iter().zip(&sets) {
            let slug: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
            fs::write(dir.join(format!("{slug}_roc.csv")), curve_csv(("fpr", "tpr"), &roc_curve(set)))?;
            fs::write(dir.join(format!("{slug}_pr.csv")), curve_csv(("recall", "precision"), &pr_curve(set)))?;
        }
    }
    for l in &report.labels {
        eprintln!("{:32} n={:<6} pos={:<6} auroc={:?}", l.name, l.n, l.n_pos, l.point(ecgfm::metrics::MetricName::Auroc));
    }
    ctx.finish("eval", &job, inputs, &out, job.seed)
}

/// Probabilities of a checkpoint on a window manifest, one set per head
/// label (names from `labels.txt` beside the checkpoint).
fn score_checkpoint<T: Real>(
    ck_path: &Path,
    mpath: &Path,
    manifest: &Manifest,
    vocab: &LabelVocabulary,
    batch_size: usize,
) -> Res<(Vec<String>, Vec<ScoredSet>)> {
    let ck: Checkpoint<T> = load_checkpoint(ck_path)?;
    let head = read_vocab(&ck_path.with_file_name("labels.txt"))?;
    let names: Vec<String> = head.names().to_vec();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let map = label_columns(vocab, &refs)?;
    let set = load_segment_set(mpath, &manifest.project_labels(&map), map.len())?;
    let logits = predict_logits(&ck.params, &ck.stats, &ck.model, &set, &ck.train.lead_view, batch_size)?;
    Ok((names, scored_sets(&logits, &set)?))
}

fn ablate_cmd(ctx: &Ctx, a: &AblateArgs) -> Res<()> {
    let study: Option<Study> = a.study.as_deref().map(str::parse).transpose()?;
    let base = AblationSpec::default_for(study.unwrap_or(Study::Loss));
    let mut flags = vec![("output", path_value(&a.out))];
    if a.config.is_some() {
        flags.push(("study", study.map(|s| Value::from(s.as_str()))));
    }
    let mut spec: AblationSpec = resolve(base, a.config.as_deref(), flags, &ctx.cli.set)?;
    if let Some(s) = ctx.cli.seed {
        spec.reseed(s);
    }
    let out = required(&spec.output, "--out")?.to_path_buf();
    let result = with_precision!(ctx.cli.precision, run_ablation(&spec))?;
    for s in result.summary.iter().filter(|s| s.metric == ecgfm::experiments::HEADLINE_METRIC) {
        eprintln!("{:24} mean {:.4}  range [{:.4}, {:.4}]  n={}", s.variant, s.mean, s.min, s.max, s.n);
    }
    for f in &result.failures {
        eprintln!("failed: {} seed {}: {}", f.variant, f.seed, f.error);
    }
    let mut inputs = Vec::new();
    inputs.extend(a.config.clone());
    ctx.finish("ablate", &spec, inputs, &out, spec.data.split_seed)
}

fn inspect(path: &Path) -> Res<()> {
    let bytes = fs::read(path)?;
    let json = if bytes.starts_with(ecgfm::recordio::ECGB_MAGIC) {
        let (h, _) = ecgfm::recordio::read_header(&bytes)?;
        serde_json::json!({ "format": "ECGB", "header": h })
    } else if bytes.starts_with(ECKP_MAGIC) {
        let (h, _) = read_checkpoint_header(&bytes)?;
        serde_json::json!({ "format": "ECKP", "header": h })
    } else {
        return Err(CliError::Lib(Error::Format(format!("{} is neither an ECGB record nor a checkpoint", path.display()))));
    };
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}
