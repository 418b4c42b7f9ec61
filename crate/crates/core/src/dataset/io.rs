//! Dataset files: binary `STDS1` container, or JSON when the path ends in `.json`.
//!
//! Binary layout (little-endian): magic `"STDS1\n"`; u64 header
//! `N, T_total, F, steps_per_day, flags`; `N×N` f64 adjacency; `T_total×N×F`
//! f64 features; `T_total` u16 time-of-day indices; `T_total` u8 day-of-week
//! indices.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, StGraph, StSeries};
use crate::autodiff::Tensor;
use crate::codec::{checked_product, put_f64s, put_u64, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"STDS1\n";

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDataset {
    N: usize,
    T_total: usize,
    F: usize,
    steps_per_day: usize,
    #[serde(default)]
    flags: u64,
    adjacency: Vec<Vec<f64>>,
    features: Vec<f64>,
    tod_index: Vec<usize>,
    dow_index: Vec<usize>,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if is_json(path) {
        decode_json(&bytes)
    } else {
        decode_binary(&bytes)
    }
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_json(path) {
        encode_json(data)?
    } else {
        encode_binary(data)
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn encode_binary(data: &Dataset) -> Vec<u8> {
    let s = &data.series;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [s.num_nodes(), s.num_steps(), s.num_features(), s.steps_per_day()] {
        put_u64(&mut out, v as u64);
    }
    put_u64(&mut out, s.flags());
    put_f64s(&mut out, data.graph.adjacency().data());
    put_f64s(&mut out, s.features().data());
    for &t in s.tod_index() {
        out.extend_from_slice(&(t as u16).to_le_bytes());
    }
    out.extend(s.dow_index().iter().map(|&d| d as u8));
    out
}

pub(crate) fn decode_binary(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let n = r.usize("N")?;
    let steps = r.usize("T_total")?;
    let f = r.usize("F")?;
    let header_end = r.offset();
    let spd = r.usize("steps_per_day")?;
    let flags = r.u64("flags")?;
    if n == 0 {
        return Err(Error::Parse {
            offset: MAGIC.len() as u64,
            message: "N must be at least 1".into(),
        });
    }
    if spd == 0 {
        return Err(Error::Parse {
            offset: header_end,
            message: "steps_per_day must be positive".into(),
        });
    }
    let n_adj = checked_product(&[n, n], &r)?;
    let n_feat = checked_product(&[steps, n, f], &r)?;
    let expected = n_adj
        .checked_add(n_feat)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(steps.checked_mul(3)?))
        .ok_or_else(|| r.error("declared payload size overflows"))?;
    if expected != r.remaining() {
        return Err(r.error(format!(
            "header declares {expected} payload bytes but {} remain",
            r.remaining()
        )));
    }
    let adjacency = r.f64s(n_adj, "adjacency")?;
    let features = r.f64s(n_feat, "features")?;
    let tod_at = r.offset();
    let tod: Vec<usize> = r.u16s(steps, "tod indices")?.into_iter().map(usize::from).collect();
    let dow_at = r.offset();
    let dow: Vec<usize> = r.take(steps, "dow indices")?.iter().map(|&d| d as usize).collect();
    r.finish()?;

    if let Some(i) = tod.iter().position(|&t| t >= super::TOD_SLOTS) {
        return Err(Error::Parse {
            offset: tod_at + 2 * i as u64,
            message: format!("time-of-day index {} out of range", tod[i]),
        });
    }
    if let Some(i) = dow.iter().position(|&d| d >= super::DOW_SLOTS) {
        return Err(Error::Parse {
            offset: dow_at + i as u64,
            message: format!("day-of-week index {} out of range", dow[i]),
        });
    }
    let graph = StGraph::new(Tensor::new(vec![n, n], adjacency)?).map_err(|e| Error::Parse {
        offset: (MAGIC.len() + 40) as u64,
        message: e.to_string(),
    })?;
    let series = StSeries::with_flags(Tensor::new(vec![steps, n, f], features)?, spd, tod, dow, flags)?;
    Dataset::new(graph, series)
}

fn encode_json(data: &Dataset) -> Result<Vec<u8>> {
    let s = &data.series;
    let n = s.num_nodes();
    let doc = JsonDataset {
        N: n,
        T_total: s.num_steps(),
        F: s.num_features(),
        steps_per_day: s.steps_per_day(),
        flags: s.flags(),
        adjacency: data.graph.adjacency().data().chunks(n).map(<[f64]>::to_vec).collect(),
        features: s.features().data().to_vec(),
        tod_index: s.tod_index().to_vec(),
        dow_index: s.dow_index().to_vec(),
    };
    serde_json::to_vec(&doc).map_err(|e| Error::Config(e.to_string()))
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn json_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)) as u64;
        }
        offset += l.len() + 1;
    }
    text.len() as u64
}

fn decode_json(bytes: &[u8]) -> Result<Dataset> {
    let doc: JsonDataset = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: json_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let end = bytes.len() as u64;
    let semantic = |message: String| Error::Parse { offset: end, message };
    if doc.N == 0 {
        return Err(semantic("N must be at least 1".into()));
    }
    if doc.adjacency.len() != doc.N || doc.adjacency.iter().any(|r| r.len() != doc.N) {
        return Err(semantic(format!("adjacency must be {0}×{0}", doc.N)));
    }
    if doc.features.len() != doc.T_total * doc.N * doc.F {
        return Err(semantic(format!(
            "features has {} values, header needs {}",
            doc.features.len(),
            doc.T_total * doc.N * doc.F
        )));
    }
    let adjacency: Vec<f64> = doc.adjacency.into_iter().flatten().collect();
    let graph = StGraph::new(Tensor::new(vec![doc.N, doc.N], adjacency)?).map_err(|e| semantic(e.to_string()))?;
    let features = Tensor::new(vec![doc.T_total, doc.N, doc.F], doc.features)?;
    let series = StSeries::with_flags(features, doc.steps_per_day, doc.tod_index, doc.dow_index, doc.flags)
        .map_err(|e| semantic(e.to_string()))?;
    Dataset::new(graph, series)
}
