use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{apply_override, build_dataset, corrupt_label_matrix, label_columns, DataSpec, Dataset, AXIS_LABELS};
use crate::error::{invalid, Error, Result};
use crate::hexaxial::{AugmentPolicy, FrontalLead};
use crate::metrics::{auprc, auroc, macro_mean, ScoredSet};
use crate::nnet::{ModelConfig, Real};
use crate::puloss::LossKind;
use crate::trainer::{predict_logits, scored_sets, train, Checkpoint, LeadView, SegmentSet, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Loss,
    Gamma,
    LeadAug,
    Scale,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::Loss => "loss",
            Study::Gamma => "gamma",
            Study::LeadAug => "lead_aug",
            Study::Scale => "scale",
        }
    }
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(Study::Loss),
            "gamma" => Ok(Study::Gamma),
            "lead_aug" => Ok(Study::LeadAug),
            "scale" => Ok(Study::Scale),
            other => Err(invalid(format!("unknown study {other:?}"))),
        }
    }
}

/// Which checkpoint of each run is scored on the test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalCheckpoint {
    #[default]
    Best,
    Last,
}

/// Everything one run needs besides data. Variants override dotted paths
/// of this object, e.g. `train.loss.kind` or `data_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellConfig {
    /// Model preset name (`tiny`, `micro`, `desk`, ...).
    pub model: String,
    pub train: TrainConfig,
    /// Fraction of the training split used, drawn per seed.
    pub data_fraction: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self { model: "micro".into(), train: TrainConfig::default(), data_fraction: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub set: BTreeMap<String, Value>,
}

impl Variant {
    pub fn new<I, K>(name: &str, set: I) -> Self
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        Self { name: name.into(), set: set.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }

    pub fn resolve(&self, base: &CellConfig) -> Result<CellConfig> {
        let mut v = serde_json::to_value(base)?;
        for (path, value) in &self.set {
            apply_override(&mut v, path, value.clone())?;
        }
        let cell: CellConfig = serde_json::from_value(v)?;
        if !(cell.data_fraction > 0.0 && cell.data_fraction <= 1.0) {
            return Err(invalid(format!("data_fraction {} outside (0, 1]", cell.data_fraction)));
        }
        cell.train.validate()?;
        Ok(cell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub study: Study,
    pub grid: Vec<Variant>,
    pub n_seeds: usize,
    pub deletion_rate: f64,
    /// Directory for `results.csv`, `summary.json` and `spec.json`.
    pub output: Option<PathBuf>,
    pub data: DataSpec,
    pub base: CellConfig,
    /// Labels the model is trained on; empty means the whole vocabulary.
    pub labels: Vec<String>,
    /// Labels averaged into the headline metric; empty means `labels`.
    pub eval_labels: Vec<String>,
    /// Single-lead views pooled at test time; empty uses the training
    /// view's deterministic form.
    pub eval_views: Vec<FrontalLead>,
    pub eval_checkpoint: EvalCheckpoint,
    /// Hide validation positives too, so model selection sees the same
    /// label noise as training.
    pub corrupt_valid: bool,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self::default_for(Study::Loss)
    }
}

fn loss_variant(name: &str, kind: LossKind) -> Variant {
    let k = match kind {
        LossKind::Pu => "pu",
        LossKind::Bce => "bce",
        LossKind::Focal => "focal",
    };
    Variant::new(name, [("train.loss.kind", Value::from(k))])
}

impl AblationSpec {
    /// Desk defaults for each study.
    pub fn default_for(study: Study) -> Self {
        let mut base = CellConfig::default();
        base.train.max_epochs = 25;
        base.train.batch_size = 32;
        base.train.early_stop_patience = 8;
        base.train.optimizer.lr0 = 3e-3;
        base.train.optimizer.weight_decay = 0.01;
        base.train.schedule = crate::trainer::Schedule::Plateau { patience_epochs: 4, factor: 0.3 };
        let mut spec = Self {
            study,
            grid: Vec::new(),
            n_seeds: 3,
            deletion_rate: 0.4,
            output: None,
            data: DataSpec::grid(24, 0),
            base,
            labels: Vec::new(),
            eval_labels: Vec::new(),
            eval_views: Vec::new(),
            eval_checkpoint: EvalCheckpoint::Best,
            corrupt_valid: true,
        };
        match study {
            Study::Loss => {
                spec.grid = vec![
                    loss_variant("pu", LossKind::Pu),
                    Variant::new(
                        "pu_bce_positives",
                        [("train.loss.kind", Value::from("pu")), ("train.loss.pu_mapping", Value::from("bce_positives"))],
                    ),
                    loss_variant("focal", LossKind::Focal),
                    loss_variant("bce", LossKind::Bce),
                ];
            }
            Study::Gamma => {
                spec.grid = [0.5, 1.0, 1.5, 2.0]
                    .iter()
                    .map(|&g| {
                        Variant::new(
                            &format!("gamma_{g}"),
                            [("train.loss.gamma_pu", Value::from(g)), ("train.loss.allow_nonmonotone", Value::from(true))],
                        )
                    })
                    .collect();
            }
            Study::LeadAug => {
                spec.data = spec.data.limb_leads();
                spec.deletion_rate = 0.0;
                spec.labels = AXIS_LABELS.iter().map(|s| s.to_string()).collect();
                spec.eval_views = FrontalLead::ALL.to_vec();
                spec.base.train.lead_view = LeadView::Lead { lead: FrontalLead::I };
                let aug = LeadView::Augment { policy: AugmentPolicy { p_augment: 0.5, ..AugmentPolicy::default() } };
                spec.grid = vec![
                    Variant::new("lead_i_only", Vec::<(String, Value)>::new()),
                    Variant::new("augment", [("train.lead_view", serde_json::to_value(aug).expect("serializable"))]),
                ];
            }
            Study::Scale => {
                spec.deletion_rate = 0.0;
                let mut grid = Vec::new();
                for model in ["tiny", "micro"] {
                    for f in [0.25, 0.5, 1.0] {
                        grid.push(Variant::new(
                            &format!("{model}_{f}"),
                            [("model", Value::from(model)), ("data_fraction", Value::from(f))],
                        ));
                    }
                }
                spec.grid = grid;
            }
        }
        spec
    }

    /// Derive data, split and initialization seeds from one value. Each
    /// run offsets the training seed by its seed index and the augmentation
    /// stream by the training seed.
    pub fn reseed(&mut self, seed: u64) {
        self.data.reseed(seed);
        self.base.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(invalid("n_seeds must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.deletion_rate) {
            return Err(invalid(format!("deletion_rate {} outside [0, 1)", self.deletion_rate)));
        }
        if self.grid.is_empty() {
            return Err(invalid("ablation grid is empty"));
        }
        let mut names: Vec<&str> = self.grid.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("variant names must be unique"));
        }
        for v in &self.grid {
            v.resolve(&self.base)?;
        }
        Ok(())
    }
}

/// One CSV line: study,variant,seed,metric,value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub study: String,
    pub variant: String,
    pub seed: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub variant: String,
    pub seed: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub study: Study,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
    pub failures: Vec<RunFailure>,
}

pub const HEADLINE_METRIC: &str = "test_macro_auroc";

impl AblationResult {
    pub fn csv(&self) -> String {
        let mut s = String::from("study,variant,seed,metric,value\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.study, r.variant, r.seed, r.metric, r.value).expect("write to string");
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            study: Study,
            summary: &'a [VariantSummary],
            failures: &'a [RunFailure],
        }
        Ok(serde_json::to_string_pretty(&Out { study: self.study, summary: &self.summary, failures: &self.failures })?)
    }

    /// Summary entry for `variant` and `metric`.
    pub fn stat(&self, variant: &str, metric: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant && s.metric == metric)
    }

    /// Per-seed values of one metric, in seed order.
    pub fn values(&self, variant: &str, metric: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.variant == variant && r.metric == metric).map(|r| r.value).collect()
    }
}

fn summarize(rows: &[AblationRow], grid: &[Variant]) -> Vec<VariantSummary> {
    let mut out = Vec::new();
    for v in grid {
        let mut metrics: Vec<&str> = Vec::new();
        for r in rows.iter().filter(|r| r.variant == v.name) {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
        for m in metrics {
            let mut xs: Vec<f64> = rows.iter().filter(|r| r.variant == v.name && r.metric == m).map(|r| r.value).collect();
            xs.sort_by(f64::total_cmp);
            let n = xs.len();
            let median = if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) };
            out.push(VariantSummary {
                variant: v.name.clone(),
                metric: m.to_string(),
                n,
                mean: xs.iter().sum::<f64>() / n as f64,
                median,
                min: xs[0],
                max: xs[n - 1],
            });
        }
    }
    out
}

struct Prepared {
    data: Dataset,
    label_names: Vec<String>,
    eval_cols: Vec<usize>,
}

fn prepare(spec: &AblationSpec) -> Result<Prepared> {
    let mut data = build_dataset(&spec.data)?;
    let names: Vec<String> = if spec.labels.is_empty() { data.vocab.names().to_vec() } else { spec.labels.clone() };
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let map = label_columns(&data.vocab, &name_refs)?;
    data.train = data.train.project_labels(&map)?;
    data.valid = data.valid.project_labels(&map)?;
    data.test = data.test.project_labels(&map)?;
    let eval_names: Vec<&str> =
        if spec.eval_labels.is_empty() { name_refs.clone() } else { spec.eval_labels.iter().map(String::as_str).collect() };
    let eval_cols = eval_names
        .iter()
        .map(|n| name_refs.iter().position(|m| m == n).ok_or_else(|| invalid(format!("eval label {n:?} not trained"))))
        .collect::<Result<_>>()?;
    Ok(Prepared { data, label_names: names, eval_cols })
}

fn subsample(set: &SegmentSet, fraction: f64, seed: u64) -> SegmentSet {
    if fraction >= 1.0 {
        return set.clone();
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(((set.len() as f64 * fraction).ceil() as usize).max(1));
    idx.sort_unstable();
    set.select(&idx)
}

/// Scored sets for the test split, pooling every evaluation view.
fn test_scores<T: Real>(ck: &Checkpoint<T>, spec: &AblationSpec, cell: &CellConfig, test: &SegmentSet) -> Result<Vec<ScoredSet>> {
    let views: Vec<LeadView> = if spec.eval_views.is_empty() {
        vec![cell.train.lead_view.for_eval()]
    } else {
        spec.eval_views.iter().map(|&lead| LeadView::Lead { lead }).collect()
    };
    let mut pooled: Option<Vec<ScoredSet>> = None;
    for view in &views {
        let logits = predict_logits(&ck.params, &ck.stats, &ck.model, test, view, cell.train.batch_size)?;
        let sets = scored_sets(&logits, test)?;
        pooled = Some(match pooled {
            None => sets,
            Some(acc) => acc
                .into_iter()
                .zip(sets)
                .map(|(a, b)| {
                    let mut s = a.scores;
                    s.extend(b.scores);
                    let mut l = a.labels;
                    l.extend(b.labels);
                    ScoredSet::new(s, l)
                })
                .collect::<Result<_>>()?,
        });
    }
    Ok(pooled.unwrap_or_default())
}

fn run_cell<T: Real>(spec: &AblationSpec, prep: &Prepared, variant: &Variant, seed: usize) -> Result<Vec<(String, f64)>> {
    let mut cell = variant.resolve(&spec.base)?;
    let s = seed as u64;
    cell.train.seed = cell.train.seed.wrapping_add(s);
    if let LeadView::Augment { policy } = &mut cell.train.lead_view {
        policy.seed = policy.seed.wrapping_add(cell.train.seed);
    }
    let n = prep.label_names.len();
    let in_ch = cell.train.lead_view.out_channels(&prep.data.train);
    let model = ModelConfig::preset(&cell.model, in_ch, n)?;

    // identical across variants for a given seed
    let corruption_seed = spec.data.split_seed ^ (0x5eed_0000 + s);
    let train_set = subsample(&prep.data.train, cell.data_fraction, corruption_seed.wrapping_add(1));
    let (y, _) = corrupt_label_matrix(&train_set.labels, spec.deletion_rate, corruption_seed)?;
    let train_set = train_set.with_labels(y)?;
    let valid_set = if spec.corrupt_valid {
        let (y, _) = corrupt_label_matrix(&prep.data.valid.labels, spec.deletion_rate, corruption_seed.wrapping_add(2))?;
        prep.data.valid.with_labels(y)?
    } else {
        prep.data.valid.clone()
    };

    let outcome = train::<T>(&model, &cell.train, &train_set, &valid_set)?;
    let ck = match spec.eval_checkpoint {
        EvalCheckpoint::Best => &outcome.best,
        EvalCheckpoint::Last => &outcome.last,
    };
    let sets = test_scores(ck, spec, &cell, &prep.data.test)?;
    let per_label: Vec<(usize, Option<f64>, Option<f64>)> =
        prep.eval_cols.iter().map(|&j| (j, auroc(&sets[j]).ok(), auprc(&sets[j]).ok())).collect();
    let macro_roc = macro_mean(per_label.iter().map(|p| p.1)).ok_or_else(|| invalid("test split has no evaluable label"))?;
    let mut out = vec![(HEADLINE_METRIC.to_string(), macro_roc)];
    if let Some(pr) = macro_mean(per_label.iter().map(|p| p.2)) {
        out.push(("test_macro_auprc".into(), pr));
    }
    for (j, roc, _) in &per_label {
        if let Some(v) = roc {
            out.push((format!("test_auroc[{}]", prep.label_names[*j]), *v));
        }
    }
    out.push(("epochs".into(), outcome.last.epoch as f64));
    if let Some(e) = ck.best_epoch {
        out.push(("best_epoch".into(), e as f64));
    }
    Ok(out)
}

/// Train every (variant, seed) cell on the same seeded data and score
/// test macro-AUROC against uncorrupted labels. Cells run in parallel;
/// rows come back ordered by variant then seed. Failed cells are recorded
/// and skipped.
pub fn run_ablation<T: Real>(spec: &AblationSpec) -> Result<AblationResult> {
    spec.validate()?;
    let prep = prepare(spec)?;
    let cells: Vec<(usize, usize)> = (0..spec.grid.len()).flat_map(|v| (0..spec.n_seeds).map(move |s| (v, s))).collect();
    let results: Vec<Result<Vec<(String, f64)>>> =
        cells.par_iter().map(|&(v, s)| run_cell::<T>(spec, &prep, &spec.grid[v], s)).collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(v, seed), res) in cells.iter().zip(results) {
        let variant = &spec.grid[v].name;
        match res {
            Ok(metrics) => rows.extend(metrics.into_iter().map(|(metric, value)| AblationRow {
                study: spec.study.as_str().into(),
                variant: variant.clone(),
                seed,
                metric,
                value,
            })),
            Err(e) => failures.push(RunFailure { variant: variant.clone(), seed, error: e.to_string() }),
        }
    }
    let result = AblationResult { study: spec.study, summary: summarize(&rows, &spec.grid), rows, failures };
    if let Some(dir) = &spec.output {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), result.csv())?;
        std::fs::write(dir.join("summary.json"), result.summary_json()?)?;
        std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)?)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(study: Study) -> AblationSpec {
        let mut spec = AblationSpec::default_for(study);
        spec.data = if study == Study::LeadAug { DataSpec::grid(2, 1).limb_leads() } else { DataSpec::grid(2, 1) };
        spec.base.model = "tiny".into();
        spec.base.train.max_epochs = 1;
        spec.base.train.batch_size = 8;
        spec.n_seeds = 2;
        spec
    }

    #[test]
    fn gamma_grid_gives_four_variants_per_seed() {
        let res = run_ablation::<f32>(&quick(Study::Gamma)).unwrap();
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        let head: Vec<&AblationRow> = res.rows.iter().filter(|r| r.metric == HEADLINE_METRIC).collect();
        assert_eq!(head.len(), 4 * 2);
        assert!(head.iter().all(|r| r.value.is_finite()));
        let order: Vec<(String, usize)> = head.iter().map(|r| (r.variant.clone(), r.seed)).collect();
        assert_eq!(order[0], ("gamma_0.5".to_string(), 0));
        assert_eq!(order[7], ("gamma_2".to_string(), 1));
        assert!(res.csv().starts_with("study,variant,seed,metric,value\ngamma,gamma_0.5,0,"));
    }

    #[test]
    fn rerun_is_byte_identical_and_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = quick(Study::Loss);
        spec.output = Some(dir.path().to_path_buf());
        let a = run_ablation::<f32>(&spec).unwrap();
        let b = run_ablation::<f32>(&spec).unwrap();
        assert_eq!(a.csv(), b.csv());
        assert_eq!(std::fs::read_to_string(dir.path().join("results.csv")).unwrap(), a.csv());
        let spec_back: AblationSpec =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("spec.json")).unwrap()).unwrap();
        assert_eq!(spec_back, spec);
        let s = a.stat("pu", HEADLINE_METRIC).unwrap();
        assert_eq!(s.n, 2);
        assert!(s.min <= s.median && s.median <= s.max);
    }

    #[test]
    fn lead_aug_pools_views() {
        let spec = quick(Study::LeadAug);
        let res = run_ablation::<f32>(&spec).unwrap();
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        assert!(res.stat("augment", HEADLINE_METRIC).is_some());
        assert!(res.stat("lead_i_only", "test_auroc[left axis deviation]").is_some());
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut spec = quick(Study::Loss);
        spec.grid.push(Variant::new("blowup", [("train.optimizer.lr0", Value::from(1e30))]));
        spec.n_seeds = 1;
        let res = run_ablation::<f32>(&spec).unwrap();
        assert!(res.stat("pu", HEADLINE_METRIC).is_some());
        assert_eq!(res.failures.len(), 1);
        assert_eq!(res.failures[0].variant, "blowup");
    }

    #[test]
    fn spec_validation() {
        let mut spec = quick(Study::Loss);
        spec.n_seeds = 0;
        assert!(spec.validate().is_err());
        let mut spec = quick(Study::Loss);
        spec.deletion_rate = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = quick(Study::Loss);
        spec.grid.push(Variant::new("typo", [("train.los.kind", Value::from("pu"))]));
        assert!(spec.validate().is_err());
        let mut spec = quick(Study::Gamma);
        spec.grid[0].set.remove("train.loss.allow_nonmonotone");
        assert!(spec.validate().is_err());
    }
}
