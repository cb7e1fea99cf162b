use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{zscore_in_place, Segment};
use crate::error::{invalid, shape, Result};
use crate::hexaxial::{AugmentPolicy, FrontalLead};
use crate::nnet::{Real, Tensor3};
use crate::recordio::LabelSet;

/// In-memory training windows with their multi-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub channel_names: Vec<String>,
    pub length: usize,
    pub n_labels: usize,
    /// (segment, channel, sample), row-major.
    pub data: Vec<f32>,
    /// (segment, label), row-major.
    pub labels: Vec<f32>,
    pub record_ids: Vec<String>,
}

impl SegmentSet {
    pub fn new(channel_names: Vec<String>, length: usize, n_labels: usize) -> Self {
        Self { channel_names, length, n_labels, data: Vec::new(), labels: Vec::new(), record_ids: Vec::new() }
    }

    /// Collect segments; every segment must share the channel layout.
    pub fn from_segments(segments: &[Segment], labels: &[LabelSet], n_labels: usize) -> Result<Self> {
        let first = segments.first().ok_or_else(|| invalid("no segments"))?;
        let mut set = Self::new(first.channel_names.clone(), first.n_samples, n_labels);
        if segments.len() != labels.len() {
            return Err(shape(format!("{} segments with {} label sets", segments.len(), labels.len())));
        }
        for (s, l) in segments.iter().zip(labels) {
            set.push(s, l)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, seg: &Segment, labels: &LabelSet) -> Result<()> {
        if seg.channel_names != self.channel_names || seg.n_samples != self.length {
            return Err(shape(format!(
                "segment {} has layout {:?}x{}, set expects {:?}x{}",
                seg.record_id, seg.channel_names, seg.n_samples, self.channel_names, self.length
            )));
        }
        if labels.max_index().is_some_and(|m| m >= self.n_labels) {
            return Err(invalid(format!("label index beyond {} labels", self.n_labels)));
        }
        self.data.extend_from_slice(&seg.data);
        self.labels.extend(labels.multi_hot(self.n_labels));
        self.record_ids.push(seg.record_id.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.n_channels() * self.length;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn label_row(&self, i: usize) -> &[f32] {
        &self.labels[i * self.n_labels..(i + 1) * self.n_labels]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.channel_names.clone(), self.length, self.n_labels);
        for &i in idx {
            out.data.extend_from_slice(self.sample(i));
            out.labels.extend_from_slice(self.label_row(i));
            out.record_ids.push(self.record_ids[i].clone());
        }
        out
    }

    /// Keep only the label columns in `map` (new column j = old map[j]).
    pub fn project_labels(&self, map: &[usize]) -> Result<Self> {
        if let Some(&bad) = map.iter().find(|&&m| m >= self.n_labels) {
            return Err(invalid(format!("label column {bad} out of range")));
        }
        let mut out = self.clone();
        out.n_labels = map.len();
        out.labels = (0..self.len()).flat_map(|i| map.iter().map(move |&m| self.labels[i * self.n_labels + m])).collect();
        Ok(out)
    }

    /// Replace the label matrix (same shape).
    pub fn with_labels(&self, labels: Vec<f32>) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(shape(format!("{} label values, expected {}", labels.len(), self.labels.len())));
        }
        Ok(Self { labels, ..self.clone() })
    }

    /// Label column `j` as booleans.
    pub fn label_column(&self, j: usize) -> Vec<bool> {
        (0..self.len()).map(|i| self.labels[i * self.n_labels + j] == 1.0).collect()
    }
}

/// How a stored segment becomes network input. `AsIs` feeds every channel;
/// `Lead` derives one frontal lead from channels I and II and z-scores it;
/// `Augment` draws the lead per sample from the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeadView {
    #[default]
    AsIs,
    Lead { lead: FrontalLead },
    Augment { policy: AugmentPolicy },
}

impl LeadView {
    pub fn out_channels(&self, set: &SegmentSet) -> usize {
        match self {
            LeadView::AsIs => set.n_channels(),
            _ => 1,
        }
    }

    /// Deterministic view used for validation and testing.
    pub fn for_eval(&self) -> LeadView {
        match self {
            LeadView::Augment { .. } => LeadView::Lead { lead: FrontalLead::I },
            other => other.clone(),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, LeadView::Augment { policy } if policy.p_augment > 0.0)
    }

    pub fn validate(&self, set: &SegmentSet) -> Result<()> {
        match self {
            LeadView::AsIs => Ok(()),
            LeadView::Lead { .. } | LeadView::Augment { .. } => {
                if let LeadView::Augment { policy } = self {
                    policy.validate()?;
                }
                if set.channel_index("I").is_none() || set.channel_index("II").is_none() {
                    return Err(invalid("lead derivation needs channels I and II"));
                }
                Ok(())
            }
        }
    }
}

fn derived<T: Real>(set: &SegmentSet, i: usize, lead: FrontalLead, out: &mut [T]) {
    let (ci, cii) = (set.channel_index("I").expect("validated"), set.channel_index("II").expect("validated"));
    let x = set.sample(i);
    let (a, b) = lead.coefficients();
    let l = set.length;
    let mut buf: Vec<f64> = (0..l).map(|t| a * x[ci * l + t] as f64 + b * x[cii * l + t] as f64).collect();
    zscore_in_place(&mut buf);
    out.iter_mut().zip(&buf).for_each(|(o, &v)| *o = T::of(v as f32 as f64));
}

/// Network input and label rows for the given segment indices. Random
/// views draw from `rng` in index order.
pub fn assemble_batch<T: Real, R: Rng + ?Sized>(
    set: &SegmentSet,
    idx: &[usize],
    view: &LeadView,
    rng: &mut R,
) -> Result<(Tensor3<T>, Vec<f32>)> {
    view.validate(set)?;
    let c = view.out_channels(set);
    let l = set.length;
    let mut data = vec![T::zero(); idx.len() * c * l];
    let mut labels = Vec::with_capacity(idx.len() * set.n_labels);
    for (k, &i) in idx.iter().enumerate() {
        let out = &mut data[k * c * l..(k + 1) * c * l];
        match view {
            LeadView::AsIs => out.iter_mut().zip(set.sample(i)).for_each(|(o, &v)| *o = T::of(v as f64)),
            LeadView::Lead { lead } => derived(set, i, *lead, out),
            LeadView::Augment { policy } => derived(set, i, policy.choose(rng), out),
        }
        labels.extend_from_slice(set.label_row(i));
    }
    Ok((Tensor3::from_vec(idx.len(), c, l, data)?, labels))
}
