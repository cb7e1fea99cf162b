//! On-disk dataset layout shared by the command-line tool:
//! `vocab.txt`, `manifest.jsonl` and one ECGB file per record (or per
//! preprocessed window) under `records/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dsp::Segment;
use crate::error::{format_err, invalid, Result};
use crate::recordio::{decode_record, encode_record, EcgRecord, LabelVocabulary, Manifest, ManifestEntry};
use crate::trainer::SegmentSet;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const RECORDS_DIR: &str = "records";

const META_SOURCE: &str = "source_record";
const META_WINDOW: &str = "window_index";

/// Write records, their manifest and the vocabulary under `dir`. Manifest
/// paths are relative to `dir`. Returns the manifest as written.
pub fn write_dataset(dir: &Path, records: &[EcgRecord], manifest: &Manifest, vocab: &LabelVocabulary) -> Result<Manifest> {
    let by_id = manifest.by_record_id();
    fs::create_dir_all(dir.join(RECORDS_DIR))?;
    let mut out = Manifest::default();
    for r in records {
        let entry = by_id.get(r.record_id.as_str()).ok_or_else(|| invalid(format!("record {} not in manifest", r.record_id)))?;
        let rel = format!("{RECORDS_DIR}/{}.ecgb", r.record_id);
        fs::write(dir.join(&rel), encode_record(r)?)?;
        out.entries.push(ManifestEntry { path: rel, ..(*entry).clone() });
    }
    fs::write(dir.join(MANIFEST_FILE), out.to_jsonl(vocab)?)?;
    fs::write(dir.join(VOCAB_FILE), vocab.to_text())?;
    Ok(out)
}

pub fn read_vocab(path: &Path) -> Result<LabelVocabulary> {
    LabelVocabulary::from_text(&fs::read_to_string(path)?)
}

/// Vocabulary given explicitly, or `vocab.txt` beside the manifest.
pub fn resolve_vocab(manifest_path: &Path, vocab: Option<&Path>) -> PathBuf {
    vocab.map(Path::to_path_buf).unwrap_or_else(|| base_dir(manifest_path).join(VOCAB_FILE))
}

fn base_dir(manifest_path: &Path) -> &Path {
    manifest_path.parent().unwrap_or(Path::new("."))
}

pub fn read_manifest(path: &Path, vocab: &LabelVocabulary) -> Result<Manifest> {
    Manifest::from_jsonl(&fs::read_to_string(path)?, vocab)
}

/// Decode every record a manifest points to, in manifest order.
pub fn read_records(manifest_path: &Path, manifest: &Manifest) -> Result<Vec<EcgRecord>> {
    let base = base_dir(manifest_path);
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let r = decode_record(&fs::read(base.join(&e.path))?)?;
            if r.record_id != e.record_id {
                return Err(format_err(format!("{} holds record {:?}, manifest says {:?}", e.path, r.record_id, e.record_id)));
            }
            Ok(r)
        })
        .collect()
}

/// Store windows as ECGB records named `{record}_w{k}` carrying their
/// source record's patient and labels.
pub fn write_segments(
    dir: &Path,
    segments: &[(Segment, &ManifestEntry)],
    fs_hz: f64,
    vocab: &LabelVocabulary,
) -> Result<Manifest> {
    fs::create_dir_all(dir.join(RECORDS_DIR))?;
    let mut out = Manifest::default();
    for (seg, src) in segments {
        let id = format!("{}_w{}", seg.record_id, seg.window_index);
        let record = EcgRecord {
            record_id: id.clone(),
            patient_id: src.patient_id.clone(),
            fs: fs_hz,
            lead_names: seg.channel_names.clone(),
            data: (0..seg.n_channels()).map(|c| seg.channel(c).to_vec()).collect(),
            meta: BTreeMap::from([
                (META_SOURCE.to_string(), seg.record_id.clone()),
                (META_WINDOW.to_string(), seg.window_index.to_string()),
            ]),
        };
        let rel = format!("{RECORDS_DIR}/{id}.ecgb");
        fs::write(dir.join(&rel), encode_record(&record)?)?;
        out.entries.push(ManifestEntry { path: rel, record_id: id, patient_id: src.patient_id.clone(), labels: src.labels.clone(), target: src.target });
    }
    fs::write(dir.join(MANIFEST_FILE), out.to_jsonl(vocab)?)?;
    fs::write(dir.join(VOCAB_FILE), vocab.to_text())?;
    Ok(out)
}

/// Load a window manifest as a training set. Segment ids come from the
/// stored source record so metrics group windows by record.
pub fn load_segment_set(manifest_path: &Path, manifest: &Manifest, n_labels: usize) -> Result<SegmentSet> {
    let records = read_records(manifest_path, manifest)?;
    let first = records.first().ok_or_else(|| invalid("empty segment manifest"))?;
    let mut set = SegmentSet::new(first.lead_names.clone(), first.n_samples(), n_labels);
    for (r, e) in records.iter().zip(&manifest.entries) {
        let seg = Segment {
            record_id: r.meta.get(META_SOURCE).cloned().unwrap_or_else(|| r.record_id.clone()),
            window_index: r.meta.get(META_WINDOW).and_then(|w| w.parse().ok()).unwrap_or(0),
            channel_names: r.lead_names.clone(),
            n_samples: r.n_samples(),
            data: r.data.concat(),
        };
        set.push(&seg, &e.labels)?;
    }
    Ok(set)
}
