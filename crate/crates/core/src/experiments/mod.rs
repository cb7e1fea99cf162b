//! Desk-scale studies: synthetic cohorts, positive-label deletion and the
//! loss, gamma, lead-augmentation and scale ablations.

mod ablation;
pub mod files;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use ablation::{
    run_ablation, AblationResult, AblationRow, AblationSpec, CellConfig, EvalCheckpoint, RunFailure, Study, Variant,
    VariantSummary, HEADLINE_METRIC,
};

use crate::dsp::{preprocess, preprocess_raw, PreprocessConfig};
use crate::error::{invalid, Result};
use crate::recordio::{
    generate_mixture, patient_split, synthetic_vocabulary, EcgRecord, LabelVocabulary, Manifest, SplitRatios,
    SynthConfig, LABEL_AF, LABEL_LAD, LABEL_NSR, LABEL_RAD, LABEL_SB, LABEL_ST,
};
use crate::trainer::SegmentSet;

/// Hide each positive label independently with probability
/// `deletion_rate`. Returns the corrupted manifest and the hidden count.
pub fn corrupt_labels(manifest: &Manifest, deletion_rate: f64, seed: u64) -> Result<(Manifest, usize)> {
    check_rate(deletion_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    let mut hidden = 0;
    for e in &mut out.entries {
        let positives: Vec<usize> = e.labels.iter().collect();
        for idx in positives {
            if rng.gen::<f64>() < deletion_rate {
                e.labels.remove(idx);
                hidden += 1;
            }
        }
    }
    Ok((out, hidden))
}

/// Same rule on a row-major multi-hot matrix.
pub fn corrupt_label_matrix(labels: &[f32], deletion_rate: f64, seed: u64) -> Result<(Vec<f32>, usize)> {
    check_rate(deletion_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = 0;
    let out = labels
        .iter()
        .map(|&y| {
            if y == 1.0 && rng.gen::<f64>() < deletion_rate {
                hidden += 1;
                0.0
            } else {
                y
            }
        })
        .collect();
    Ok((out, hidden))
}

fn check_rate(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(invalid(format!("deletion_rate {r} outside [0, 1)")));
    }
    Ok(())
}

/// Synthetic cohort, preprocessing and patient split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub mixture: Vec<SynthConfig>,
    pub preprocess: PreprocessConfig,
    pub leads: Vec<String>,
    /// Per-window z-score; off keeps millivolts (needed for derived leads).
    pub normalize: bool,
    pub ratios: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self::grid(8, 0)
    }
}

/// Rhythm classes (rate range, RR jitter) and axis classes (centre, half
/// width) kept clear of the label boundaries.
const RHYTHMS: [((f64, f64), f64); 4] = [((65.0, 95.0), 0.03), ((40.0, 55.0), 0.03), ((105.0, 140.0), 0.03), ((70.0, 110.0), 0.25)];
const AXES: [(f64, f64); 3] = [(37.5, 37.5), (-60.0, 15.0), (127.5, 22.5)];

impl DataSpec {
    /// Every rhythm crossed with every axis class, `per_cell` records each,
    /// 8 s at 250 Hz resampled to 125 Hz, 12 leads.
    pub fn grid(per_cell: usize, seed: u64) -> Self {
        let mixture = grid_mixture(per_cell * RHYTHMS.len() * AXES.len(), seed);
        Self {
            mixture,
            preprocess: PreprocessConfig {
                target_fs: 125.0,
                lp_cutoff: 40.0,
                notch_freqs: vec![50.0],
                window_s: 8.0,
                ..PreprocessConfig::default()
            },
            leads: crate::recordio::STANDARD_LEADS.iter().map(|s| s.to_string()).collect(),
            normalize: true,
            ratios: [0.6, 0.2, 0.2],
            split_seed: seed,
        }
    }

    /// Limb leads I and II in millivolts, for derived single-lead views.
    pub fn limb_leads(mut self) -> Self {
        self.leads = vec!["I".into(), "II".into()];
        self.normalize = false;
        self
    }

    /// Derive every mixture and split seed from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.split_seed = seed;
        reseed_mixture(&mut self.mixture, seed);
    }

    pub fn n_records(&self) -> usize {
        self.mixture.iter().map(|c| c.n_records).sum()
    }
}

fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(cell as u64)
}

/// Give each generator config a seed derived from `seed` and its position.
pub fn reseed_mixture(mixture: &mut [SynthConfig], seed: u64) {
    for (i, c) in mixture.iter_mut().enumerate() {
        c.seed = cell_seed(seed, i);
    }
}

/// The rhythm x axis grid with `n_records` spread as evenly as possible
/// over its twelve cells (empty cells are dropped).
pub fn grid_mixture(n_records: usize, seed: u64) -> Vec<SynthConfig> {
    let n_cells = RHYTHMS.len() * AXES.len();
    let mut mixture = Vec::new();
    for (r, &(hr, cv)) in RHYTHMS.iter().enumerate() {
        for (a, &(axis, spread)) in AXES.iter().enumerate() {
            let k = r * AXES.len() + a;
            let n = n_records / n_cells + usize::from(k < n_records % n_cells);
            if n == 0 {
                continue;
            }
            mixture.push(SynthConfig {
                n_records: n,
                fs: 250.0,
                duration_s: 8.0,
                heart_rate_bpm: hr,
                rr_jitter_cv: cv,
                mean_qrs_axis_deg: axis,
                axis_spread_deg: spread,
                noise_mv: 0.03,
                baseline_wander_mv: 0.1,
                mains_mv: 0.05,
                id_prefix: format!("r{r}a{a}-"),
                seed: cell_seed(seed, k),
                ..SynthConfig::default()
            });
        }
    }
    mixture
}

/// Split segment sets plus the manifests they came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: LabelVocabulary,
    pub train: SegmentSet,
    pub valid: SegmentSet,
    pub test: SegmentSet,
    pub manifests: [Manifest; 3],
}

pub const RHYTHM_LABELS: [&str; 4] = [LABEL_NSR, LABEL_SB, LABEL_ST, LABEL_AF];
pub const AXIS_LABELS: [&str; 2] = [LABEL_LAD, LABEL_RAD];

/// Windows of the given records with their manifest labels.
pub fn segment_records(
    records: &[EcgRecord],
    manifest: &Manifest,
    n_labels: usize,
    spec: &DataSpec,
) -> Result<SegmentSet> {
    let leads: Vec<&str> = spec.leads.iter().map(String::as_str).collect();
    let by_id = manifest.by_record_id();
    let per_record: Vec<Result<Vec<_>>> = records
        .par_iter()
        .map(|r| {
            if spec.normalize {
                preprocess(r, &spec.preprocess, &leads)
            } else {
                preprocess_raw(r, &spec.preprocess, &leads)
            }
        })
        .collect();
    let mut set = SegmentSet::new(spec.leads.clone(), spec.preprocess.window_samples(), n_labels);
    for (r, segs) in records.iter().zip(per_record) {
        let entry = by_id.get(r.record_id.as_str()).ok_or_else(|| invalid(format!("record {} not in manifest", r.record_id)))?;
        for s in segs? {
            set.push(&s, &entry.labels)?;
        }
    }
    Ok(set)
}

pub fn build_dataset(spec: &DataSpec) -> Result<Dataset> {
    let (records, manifest) = generate_mixture(&spec.mixture)?;
    let vocab = synthetic_vocabulary();
    let [a, b, c] = spec.ratios;
    let (tr, va, te) = patient_split(&manifest, SplitRatios::new(a, b, c)?, spec.split_seed)?;
    let pick = |m: &Manifest| -> Vec<EcgRecord> {
        let ids: std::collections::HashSet<&str> = m.entries.iter().map(|e| e.record_id.as_str()).collect();
        records.iter().filter(|r| ids.contains(r.record_id.as_str())).cloned().collect()
    };
    let n = vocab.len();
    Ok(Dataset {
        train: segment_records(&pick(&tr), &tr, n, spec)?,
        valid: segment_records(&pick(&va), &va, n, spec)?,
        test: segment_records(&pick(&te), &te, n, spec)?,
        vocab,
        manifests: [tr, va, te],
    })
}

/// Set the value at a dotted path inside a JSON config. Every key on the
/// path must already exist, which catches typos.
pub fn apply_override(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    for key in path.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| invalid(format!("unknown config key {path:?}")))?;
    }
    *cur = value;
    Ok(())
}

/// Parse `a.b=value`; the value is read as JSON, falling back to a string.
pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let (path, raw) = arg.split_once('=').ok_or_else(|| invalid(format!("override {arg:?} is not key=value")))?;
    if path.is_empty() {
        return Err(invalid(format!("override {arg:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

/// Column indices of `names` in `vocab`.
pub fn label_columns(vocab: &LabelVocabulary, names: &[&str]) -> Result<Vec<usize>> {
    names.iter().map(|n| vocab.index_of(n).ok_or_else(|| invalid(format!("unknown label {n:?}")))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recordio::{LabelSet, ManifestEntry};

    fn manifest_with(n: usize, per: usize) -> Manifest {
        Manifest {
            entries: (0..n)
                .map(|i| ManifestEntry {
                    path: format!("{i}.ecgb"),
                    record_id: format!("r{i}"),
                    patient_id: format!("p{i}"),
                    labels: LabelSet::from_indices(0..per, per).unwrap(),
                    target: None,
                })
                .collect(),
        }
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut v = serde_json::json!({"optimizer": {"lr0": 0.1}, "name": "x"});
        let (k, val) = parse_override("optimizer.lr0=0.001").unwrap();
        apply_override(&mut v, &k, val).unwrap();
        assert_eq!(v["optimizer"]["lr0"], 0.001);
        let (k, val) = parse_override("name=micro").unwrap();
        apply_override(&mut v, &k, val).unwrap();
        assert_eq!(v["name"], "micro");
        assert!(apply_override(&mut v, "optimizer.lr", Value::Null).is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let m = manifest_with(20, 3);
        let (c, hidden) = corrupt_labels(&m, 0.0, 1).unwrap();
        assert_eq!((c, hidden), (m, 0));
    }

    #[test]
    fn deletion_count_concentrates() {
        let m = manifest_with(2500, 4);
        let (c, hidden) = corrupt_labels(&m, 0.4, 9).unwrap();
        assert!((3700..=4300).contains(&hidden), "{hidden}");
        let remaining: usize = c.entries.iter().map(|e| e.labels.len()).sum();
        assert_eq!(remaining + hidden, 10_000);
        // only removals: every surviving label was a true positive
        for (a, b) in c.entries.iter().zip(&m.entries) {
            assert!(a.labels.iter().all(|i| b.labels.contains(i)));
        }
        assert_eq!(m.entries[0].labels.len(), 4);
        assert!(corrupt_labels(&m, 1.0, 0).is_err());
    }

    #[test]
    fn matrix_corruption_never_adds() {
        let y: Vec<f32> = (0..1000).map(|i| (i % 3 == 0) as u8 as f32).collect();
        let (c, hidden) = corrupt_label_matrix(&y, 0.5, 2).unwrap();
        assert!(c.iter().zip(&y).all(|(a, b)| a <= b));
        assert_eq!(y.iter().sum::<f32>() - c.iter().sum::<f32>(), hidden as f32);
    }

    #[test]
    fn grid_dataset_is_split_and_labelled() {
        let spec = DataSpec::grid(2, 3);
        assert_eq!(spec.n_records(), 24);
        let d = build_dataset(&spec).unwrap();
        assert_eq!(d.train.len() + d.valid.len() + d.test.len(), 24);
        assert_eq!(d.train.length, 1000);
        assert_eq!(d.train.n_channels(), 12);
        // every record carries exactly one rhythm label
        let rhythm = label_columns(&d.vocab, &RHYTHM_LABELS).unwrap();
        for i in 0..d.train.len() {
            let row = d.train.label_row(i);
            assert_eq!(rhythm.iter().map(|&j| row[j]).sum::<f32>(), 1.0);
        }
        let again = build_dataset(&spec).unwrap();
        assert_eq!(again.train, d.train);
        let limb = build_dataset(&DataSpec::grid(1, 3).limb_leads()).unwrap();
        assert_eq!(limb.train.channel_names, vec!["I", "II"]);
    }
}
