//! Record and label data model, the ECGB container, report parsing,
//! patient-level splitting and the synthetic dipole generator.

mod ecgb;
mod report;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};

pub use ecgb::{decode_record, encode_record, read_header, EcgbHeader, ECGB_MAGIC, ECGB_VERSION};
pub use report::{normalize_phrase, parse_report};
pub use split::{patient_split, patient_unit, SplitRatios};
pub use synth::{
    generate_mixture, generate_synthetic, synthetic_vocabulary, SynthConfig, LABEL_AF, LABEL_LAD,
    LABEL_NSR, LABEL_RAD, LABEL_SB, LABEL_ST, PRECORDIAL_WEIGHTS, STANDARD_LEADS,
};

/// A multi-lead waveform in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub patient_id: String,
    pub fs: f64,
    pub lead_names: Vec<String>,
    pub data: Vec<Vec<f32>>,
    pub meta: BTreeMap<String, String>,
}

impl EcgRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(format_err(format!("sampling rate must be positive, got {}", self.fs)));
        }
        if self.lead_names.len() != self.data.len() {
            return Err(format_err(format!(
                "{} lead names for {} lead series",
                self.lead_names.len(),
                self.data.len()
            )));
        }
        if self.data.is_empty() {
            return Err(format_err("record has no leads"));
        }
        let n = self.data[0].len();
        if self.data.iter().any(|lead| lead.len() != n) {
            return Err(format_err("ragged leads"));
        }
        if n == 0 {
            return Err(format_err("record has zero samples"));
        }
        let mut seen = HashSet::new();
        for name in &self.lead_names {
            if !seen.insert(name.as_str()) {
                return Err(format_err(format!("duplicate lead name {name:?}")));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn lead(&self, name: &str) -> Option<&[f32]> {
        self.lead_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
    }
}

/// Ordered diagnostic label names. Names are stored in normalized form
/// (see [`normalize_phrase`]) so report phrases can be matched directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Self { names: Vec::new(), index: HashMap::new() };
        for name in names {
            let norm = normalize_phrase(name.as_ref());
            if norm.is_empty() {
                return Err(invalid("empty label name"));
            }
            if out.index.insert(norm.clone(), out.names.len()).is_some() {
                return Err(invalid(format!("duplicate label {norm:?}")));
            }
            out.names.push(norm);
        }
        Ok(out)
    }

    /// One label per line; blank lines are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.lines().filter(|l| !l.trim().is_empty()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for name in &self.names {
            s.push_str(name);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize_phrase(name)).copied()
    }

    /// Restrict to a subset of names, in the given order.
    pub fn subset(&self, names: &[&str]) -> Result<(LabelVocabulary, Vec<usize>)> {
        let mut map = Vec::with_capacity(names.len());
        for n in names {
            map.push(
                self.index_of(n)
                    .ok_or_else(|| invalid(format!("label {n:?} not in vocabulary")))?,
            );
        }
        Ok((LabelVocabulary::new(names)?, map))
    }
}

/// Positive label indices for one record. Absent indices are unlabeled,
/// not negative.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct LabelSet {
    positives: BTreeSet<usize>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(idx: I, vocab_len: usize) -> Result<Self> {
        let mut s = Self::new();
        for i in idx {
            s.insert(i, vocab_len)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, idx: usize, vocab_len: usize) -> Result<()> {
        if idx >= vocab_len {
            return Err(invalid(format!("label index {idx} out of range for vocabulary of {vocab_len}")));
        }
        self.positives.insert(idx);
        Ok(())
    }

    pub fn remove(&mut self, idx: usize) -> bool {
        self.positives.remove(&idx)
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.positives.contains(&idx)
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.positives.iter().copied()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.positives.iter().next_back().copied()
    }

    pub fn multi_hot(&self, n: usize) -> Vec<f32> {
        let mut v = vec![0.0; n];
        for i in self.iter().filter(|&i| i < n) {
            v[i] = 1.0;
        }
        v
    }

    /// Re-index through `map` (new position -> old index).
    pub fn project(&self, map: &[usize]) -> LabelSet {
        LabelSet {
            positives: map
                .iter()
                .enumerate()
                .filter(|(_, &old)| self.contains(old))
                .map(|(new, _)| new)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub record_id: String,
    pub patient_id: String,
    pub labels: LabelSet,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    path: String,
    record_id: String,
    patient_id: String,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.record_id.as_str()) {
                return Err(invalid(format!("duplicate record_id {:?}", e.record_id)));
            }
            if let Some(m) = e.labels.max_index() {
                if m >= vocab.len() {
                    return Err(invalid(format!("record {:?} has label index {m} outside vocabulary", e.record_id)));
                }
            }
        }
        Ok(())
    }

    /// JSON-lines, one object per record; labels are written by name.
    pub fn to_jsonl(&self, vocab: &LabelVocabulary) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            let labels = e
                .labels
                .iter()
                .map(|i| {
                    vocab
                        .name(i)
                        .map(str::to_owned)
                        .ok_or_else(|| invalid(format!("label index {i} outside vocabulary")))
                })
                .collect::<Result<Vec<_>>>()?;
            let line = ManifestLine {
                path: e.path.clone(),
                record_id: e.record_id.clone(),
                patient_id: e.patient_id.clone(),
                labels,
                target: e.target,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, vocab: &LabelVocabulary) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(line)
                .map_err(|e| format_err(format!("manifest line {}: {e}", lineno + 1)))?;
            let mut labels = LabelSet::new();
            for name in &parsed.labels {
                let idx = vocab.index_of(name).ok_or_else(|| {
                    Error::Format(format!("manifest line {}: unknown label {name:?}", lineno + 1))
                })?;
                labels.insert(idx, vocab.len())?;
            }
            entries.push(ManifestEntry {
                path: parsed.path,
                record_id: parsed.record_id,
                patient_id: parsed.patient_id,
                labels,
                target: parsed.target,
            });
        }
        let m = Manifest { entries };
        m.validate(vocab)?;
        Ok(m)
    }

    pub fn by_record_id(&self) -> HashMap<&str, &ManifestEntry> {
        self.entries.iter().map(|e| (e.record_id.as_str(), e)).collect()
    }

    /// Keep only the given label positions, re-indexed.
    pub fn project_labels(&self, map: &[usize]) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry { labels: e.labels.project(map), ..e.clone() })
                .collect(),
        }
    }
}
