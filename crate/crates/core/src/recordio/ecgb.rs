//! ECGB v1 container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ECGB"
//! 4       4     version (u32 LE) = 1
//! 8       4     header length H (u32 LE)
//! 12      H     UTF-8 JSON header
//! 12+H    4*L*N lead-major f32 LE samples
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EcgRecord;
use crate::error::{format_err, Result};

pub const ECGB_MAGIC: &[u8; 4] = b"ECGB";
pub const ECGB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgbHeader {
    pub record_id: String,
    pub patient_id: String,
    pub fs: f64,
    pub lead_names: Vec<String>,
    pub n_samples: usize,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub fn encode_record(record: &EcgRecord) -> Result<Vec<u8>> {
    record.validate()?;
    let header = EcgbHeader {
        record_id: record.record_id.clone(),
        patient_id: record.patient_id.clone(),
        fs: record.fs,
        lead_names: record.lead_names.clone(),
        n_samples: record.n_samples(),
        meta: record.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let n_values: usize = record.data.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * n_values);
    out.extend_from_slice(ECGB_MAGIC);
    out.extend_from_slice(&ECGB_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for lead in &record.data {
        for v in lead {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse the fixed prefix and JSON header; returns the header and the
/// offset of the sample payload.
pub fn read_header(bytes: &[u8]) -> Result<(EcgbHeader, usize)> {
    if bytes.len() < 4 || &bytes[..4] != ECGB_MAGIC {
        return Err(format_err("not an ECGB file"));
    }
    if bytes.len() < 12 {
        return Err(format_err("truncated"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ECGB_VERSION {
        return Err(format_err(format!("unsupported ECGB version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12usize
        .checked_add(hlen)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| format_err("truncated"))?;
    let header: EcgbHeader = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| format_err(format!("bad ECGB header: {e}")))?;
    Ok((header, body))
}

pub fn decode_record(bytes: &[u8]) -> Result<EcgRecord> {
    let (header, body) = read_header(bytes)?;
    let n_leads = header.lead_names.len();
    let needed = n_leads
        .checked_mul(header.n_samples)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| format_err("truncated"))?;
    let payload = &bytes[body..];
    if payload.len() < needed {
        return Err(format_err("truncated"));
    }
    if payload.len() > needed {
        return Err(format_err(format!("{} trailing bytes after payload", payload.len() - needed)));
    }
    let data = payload
        .chunks_exact(4 * header.n_samples.max(1))
        .take(n_leads)
        .map(|lead| {
            lead.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    let record = EcgRecord {
        record_id: header.record_id,
        patient_id: header.patient_id,
        fs: header.fs,
        lead_names: header.lead_names,
        data,
        meta: header.meta,
    };
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(data: Vec<Vec<f32>>) -> EcgRecord {
        EcgRecord {
            record_id: "r0".into(),
            patient_id: "p0".into(),
            fs: 500.0,
            lead_names: (0..data.len()).map(|i| format!("L{i}")).collect(),
            data,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn three_sample_single_lead_layout() {
        let bytes = encode_record(&rec(vec![vec![0.0, 1.0, 2.0]])).unwrap();
        assert_eq!(&bytes[..4], b"ECGB");
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 12 - hlen, 12);
        assert_eq!(&bytes[bytes.len() - 4..], &2.0f32.to_le_bytes());
    }

    #[test]
    fn ragged_leads_rejected() {
        let err = encode_record(&rec(vec![vec![0.0; 5000], vec![0.0; 4999]])).unwrap_err();
        assert!(err.to_string().contains("ragged leads"));
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = encode_record(&rec(vec![vec![1.0]])).unwrap();
        bytes[3] = b'X';
        assert!(decode_record(&bytes).unwrap_err().to_string().contains("not an ECGB file"));
    }

    #[test]
    fn declared_size_beyond_payload_is_truncated() {
        let header = EcgbHeader {
            record_id: "r".into(),
            patient_id: "p".into(),
            fs: 500.0,
            lead_names: (0..12).map(|i| format!("L{i}")).collect(),
            n_samples: 5000,
            meta: BTreeMap::new(),
        };
        let json = serde_json::to_vec(&header).unwrap();
        let mut bytes = b"ECGB".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&[0u8; 10]);
        assert!(decode_record(&bytes).unwrap_err().to_string().contains("truncated"));
        assert!(decode_record(&bytes[..9]).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode_record(&rec(vec![vec![1.0]])).unwrap();
        bytes[4] = 2;
        assert!(decode_record(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            leads in 1usize..5,
            n in 1usize..40,
            bits in proptest::collection::vec(any::<u32>(), 200),
            fs in 1.0f64..2000.0,
            key in "[a-z]{0,6}",
        ) {
            // arbitrary bit patterns, NaN payloads included
            let data: Vec<Vec<f32>> = (0..leads)
                .map(|l| (0..n).map(|i| f32::from_bits(bits[(l * n + i) % bits.len()])).collect())
                .collect();
            let mut r = rec(data);
            r.fs = fs;
            r.meta.insert(key, "v".into());
            let back = decode_record(&encode_record(&r).unwrap()).unwrap();
            prop_assert_eq!(back.fs.to_bits(), r.fs.to_bits());
            prop_assert_eq!(&back.meta, &r.meta);
            for (a, b) in back.data.iter().zip(&r.data) {
                let a: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
