//! On-disk formats. All binary formats are little-endian.
//!
//! | file         | layout                                                                         |
//! |--------------|--------------------------------------------------------------------------------|
//! | features     | `"FEAT"`, version u32, n u64, d u32, n·d × f32                                  |
//! | graph        | `"GCGR"`, version u32, n u64, k u32, row_offsets (n+1) × u64, col u32, val f32 |
//! | model        | `"GCNM"`, version u32, layers u32, per matrix rows u32 + cols u32 + f32 values, bias f32 |
//! | confidence   | length u64, f32 values                                                         |
//!
//! The graph file stores the directed KNN lists (raw cosine affinities),
//! one CSR row per vertex with ascending columns. The symmetric adjacency is
//! rebuilt on load. Text formats hold one record per line.
//!
//! Every decoder validates declared sizes against the actual input length
//! before allocating, so arbitrary bytes yield an error rather than a panic
//! or an oversized allocation.

use std::fs;
use std::path::Path;

use crate::confidence::{ConfidenceVector, LabelVector};
use crate::connectivity::ConnectivityPrediction;
use crate::engine::{GcnLayerParams, GcnModel};
use crate::error::{Error, Result};
use crate::graph::{KnnGraph, Neighbor};
use crate::partition::{format_clusters, ClusterAssignment};
use crate::tensor::DenseMatrix;

pub const FEATURES_MAGIC: &[u8; 4] = b"FEAT";
pub const GRAPH_MAGIC: &[u8; 4] = b"GCGR";
pub const MODEL_MAGIC: &[u8; 4] = b"GCNM";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::Format(format!(
                "{}: truncated at byte {}, needed {len} more bytes but {} remain",
                self.what,
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {v}",
                self.what
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Ensures exactly `count · width` bytes follow (or at least, if `exact` is false).
    fn expect_payload(&self, count: u64, width: u64, exact: bool) -> Result<usize> {
        let needed = count
            .checked_mul(width)
            .filter(|&b| b <= usize::MAX as u64)
            .ok_or_else(|| Error::Format(format!("{}: declared size overflows", self.what)))?;
        let have = self.remaining() as u64;
        if (exact && have != needed) || have < needed {
            return Err(Error::Format(format!(
                "{}: expected {needed} payload bytes, found {have}",
                self.what
            )));
        }
        Ok(needed as usize)
    }

    fn f32_values(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.remaining()
            )));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(p) => Err(Error::Validation(format!("{what}: non-finite value at index {p}"))),
        None => Ok(()),
    }
}

pub fn encode_features(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + m.as_slice().len() * 4);
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    push_f32s(&mut out, m.as_slice());
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut r = Reader::new(bytes, "features");
    r.magic(FEATURES_MAGIC)?;
    r.version()?;
    let n = r.u64()?;
    let d = r.u32()?;
    let count = n
        .checked_mul(u64::from(d))
        .ok_or_else(|| Error::Format("features: declared shape overflows".into()))?;
    r.expect_payload(count, 4, true)?;
    let values = r.f32_values(count as usize)?;
    check_finite(&values, "features")?;
    DenseMatrix::new(n as usize, d as usize, values)
}

pub fn encode_graph(g: &KnnGraph) -> Vec<u8> {
    let n = g.n();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0u64);
    for list in g.neighbor_lists() {
        let mut sorted: Vec<Neighbor> = list.clone();
        sorted.sort_by_key(|nb| nb.id);
        for nb in sorted {
            cols.push(nb.id as u32);
            vals.push(nb.affinity);
        }
        offsets.push(cols.len() as u64);
    }
    let mut out = Vec::with_capacity(20 + offsets.len() * 8 + cols.len() * 8);
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(g.k() as u32).to_le_bytes());
    offsets.iter().for_each(|o| out.extend_from_slice(&o.to_le_bytes()));
    cols.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
    vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn decode_graph(bytes: &[u8]) -> Result<KnnGraph> {
    let mut r = Reader::new(bytes, "graph");
    r.magic(GRAPH_MAGIC)?;
    r.version()?;
    let n = r.u64()?;
    let k = r.u32()? as usize;
    let rows = n
        .checked_add(1)
        .ok_or_else(|| Error::Format("graph: vertex count overflows".into()))?;
    r.expect_payload(rows, 8, false)?;
    let n = n as usize;
    let mut offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        offsets.push(r.u64()?);
    }
    if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Validation("graph: row offsets must start at 0 and never decrease".into()));
    }
    let nnz = offsets[n];
    r.expect_payload(nnz, 8, true)?;
    let nnz = nnz as usize;
    let mut cols = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        cols.push(r.u32()? as usize);
    }
    let mut vals = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        vals.push(r.f32()?);
    }
    r.finish()?;
    let mut lists = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = (offsets[i] as usize, offsets[i + 1] as usize);
        if cols[lo..hi].windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "graph: columns of row {i} not strictly increasing"
            )));
        }
        lists.push(
            (lo..hi)
                .map(|e| Neighbor {
                    id: cols[e],
                    affinity: vals[e],
                })
                .collect(),
        );
    }
    KnnGraph::from_neighbor_lists(k, lists)
}

fn push_matrix(out: &mut Vec<u8>, m: &DenseMatrix) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    push_f32s(out, m.as_slice());
}

fn read_matrix(r: &mut Reader<'_>) -> Result<DenseMatrix> {
    let rows = r.u32()?;
    let cols = r.u32()?;
    let count = u64::from(rows) * u64::from(cols);
    r.expect_payload(count, 4, false)?;
    let values = r.f32_values(count as usize)?;
    check_finite(&values, "model")?;
    DenseMatrix::new(rows as usize, cols as usize, values)
}

/// Weights only; optimizer state is not persisted.
pub fn encode_model(m: &GcnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.depth() as u32).to_le_bytes());
    for l in m.layers() {
        push_matrix(&mut out, &l.weight);
    }
    push_matrix(&mut out, m.regressor_weight());
    out.extend_from_slice(&(m.regressor_bias() as f32).to_le_bytes());
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<GcnModel> {
    let mut r = Reader::new(bytes, "model");
    r.magic(MODEL_MAGIC)?;
    r.version()?;
    let depth = r.u32()?;
    // every layer needs at least its 8-byte shape header
    r.expect_payload(u64::from(depth), 8, false)?;
    let mut layers = Vec::with_capacity(depth as usize);
    for _ in 0..depth {
        layers.push(GcnLayerParams {
            weight: read_matrix(&mut r)?,
        });
    }
    let regressor = read_matrix(&mut r)?;
    let bias = f64::from(r.f32()?);
    r.finish()?;
    GcnModel::new(layers, regressor, bias)
}

pub fn encode_confidence(c: &ConfidenceVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + c.len() * 4);
    out.extend_from_slice(&(c.len() as u64).to_le_bytes());
    push_f32s(&mut out, &c.values);
    out
}

/// Decoded confidences are tagged as predicted.
pub fn decode_confidence(bytes: &[u8]) -> Result<ConfidenceVector> {
    let mut r = Reader::new(bytes, "confidence");
    let n = r.u64()?;
    r.expect_payload(n, 4, true)?;
    let values = r.f32_values(n as usize)?;
    check_finite(&values, "confidence")?;
    Ok(ConfidenceVector::predicted(values))
}

pub fn format_confidence_text(c: &ConfidenceVector) -> String {
    let mut out = String::new();
    for v in &c.values {
        out.push_str(&(*v as f32).to_string());
        out.push('\n');
    }
    out
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()))
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Raw label ids, one non-negative integer per line.
pub fn parse_raw_labels(text: &str) -> Result<Vec<u64>> {
    numbered_lines(text)
        .map(|(line, l)| {
            l.parse::<u64>()
                .map_err(|_| parse_error(line, format!("`{l}` is not a non-negative integer")))
        })
        .collect()
}

/// Labels remapped to dense ids in order of first appearance.
pub fn parse_labels(text: &str) -> Result<LabelVector> {
    Ok(LabelVector::remapped(parse_raw_labels(text)?))
}

pub fn parse_clusters(text: &str) -> Result<ClusterAssignment> {
    let raw = parse_raw_labels(text)?;
    let raw: Vec<usize> = raw.into_iter().map(|v| v as usize).collect();
    Ok(ClusterAssignment::from_labels(&raw))
}

pub fn format_labels(labels: &LabelVector) -> String {
    let mut out = String::new();
    for l in labels.as_slice() {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

/// `center member score` triples, grouped per center in order of first appearance.
pub fn parse_predictions(text: &str) -> Result<Vec<ConnectivityPrediction>> {
    let mut out: Vec<ConnectivityPrediction> = Vec::new();
    let mut index: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (line, l) in numbered_lines(text) {
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(line, format!("expected 3 fields, found {}", fields.len())));
        }
        let center: usize = fields[0]
            .parse()
            .map_err(|_| parse_error(line, format!("bad center id `{}`", fields[0])))?;
        let member: usize = fields[1]
            .parse()
            .map_err(|_| parse_error(line, format!("bad member id `{}`", fields[1])))?;
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| parse_error(line, format!("bad score `{}`", fields[2])))?;
        if !score.is_finite() {
            return Err(parse_error(line, "score is not finite"));
        }
        let slot = *index.entry(center).or_insert_with(|| {
            out.push(ConnectivityPrediction {
                center,
                members: Vec::new(),
                scores: Vec::new(),
            });
            out.len() - 1
        });
        if out[slot].members.contains(&member) {
            return Err(parse_error(line, format!("duplicate pair {center} {member}")));
        }
        out[slot].members.push(member);
        out[slot].scores.push(score);
    }
    Ok(out)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    decode_features(&fs::read(path)?)
}

pub fn write_features(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    Ok(fs::write(path, encode_features(m))?)
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<KnnGraph> {
    decode_graph(&fs::read(path)?)
}

pub fn write_graph(path: impl AsRef<Path>, g: &KnnGraph) -> Result<()> {
    Ok(fs::write(path, encode_graph(g))?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<GcnModel> {
    decode_model(&fs::read(path)?)
}

pub fn write_model(path: impl AsRef<Path>, m: &GcnModel) -> Result<()> {
    Ok(fs::write(path, encode_model(m))?)
}

pub fn read_confidence(path: impl AsRef<Path>) -> Result<ConfidenceVector> {
    decode_confidence(&fs::read(path)?)
}

pub fn write_confidence(path: impl AsRef<Path>, c: &ConfidenceVector) -> Result<()> {
    Ok(fs::write(path, encode_confidence(c))?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelVector) -> Result<()> {
    Ok(fs::write(path, format_labels(labels))?)
}

pub fn read_clusters(path: impl AsRef<Path>) -> Result<ClusterAssignment> {
    parse_clusters(&fs::read_to_string(path)?)
}

pub fn write_clusters(path: impl AsRef<Path>, c: &ClusterAssignment) -> Result<()> {
    Ok(fs::write(path, format_clusters(c))?)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<ConnectivityPrediction>> {
    parse_predictions(&fs::read_to_string(path)?)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[ConnectivityPrediction]) -> Result<()> {
    Ok(fs::write(path, crate::connectivity::format_predictions(preds))?)
}
