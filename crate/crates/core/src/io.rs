//! Binary containers for datasets (`NHNN`) and learned parameters (`NHNP`).
//!
//! Both share one layout: four magic bytes, a little-endian `u16` version, a
//! `u64` header length, a JSON header, then fixed-order little-endian binary
//! sections.
//!
//! Dataset sections, in order:
//!
//! | section        | encoding                                         |
//! |----------------|--------------------------------------------------|
//! | incidence      | `u64` pair count, then `(u32 node, u32 edge)` pairs |
//! | features       | `f32`, row-major, `rows × d0`                    |
//! | labels         | `u32` per labeled item                           |
//! | split masks    | `u8` per item for train, then val, then test     |
//! | planted ids    | `u32` per hyperedge, only when `has_planted`     |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PlantedFactors, Splits, Task};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{Real, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"NHNN";
pub const PARAMS_MAGIC: &[u8; 4] = b"NHNP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    version: u16,
    task: Task,
    #[serde(rename = "N")]
    num_nodes: usize,
    #[serde(rename = "M")]
    num_edges: usize,
    d0: usize,
    #[serde(rename = "C")]
    num_classes: usize,
    #[serde(rename = "S")]
    num_samples: usize,
    has_planted: bool,
    label_factor: Option<usize>,
    #[serde(default)]
    planted_factors: usize,
}

fn write_container(magic: &[u8; 4], header: &impl Serialize, body: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::MalformedFile(e.to_string()))?;
    let mut out = Vec::with_capacity(14 + json.len() + body.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::MalformedFile(format!("truncated while reading {what}"))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| Error::MalformedFile(format!("{what} length overflows")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::MalformedFile(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Validates magic and version, then returns the parsed header and a reader
/// positioned at the first binary section.
fn read_container<'a, H: for<'de> Deserialize<'de>>(
    buf: &'a [u8],
    magic: &[u8; 4],
) -> Result<(H, Reader<'a>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != magic {
        return Err(Error::MalformedFile(format!(
            "bad magic, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = r.len("header length")?;
    let header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::MalformedFile(format!("header: {e}")))?;
    Ok((header, r))
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let hg = &ds.hypergraph;
    let header = DatasetHeader {
        version: FORMAT_VERSION,
        task: ds.task,
        num_nodes: hg.num_nodes(),
        num_edges: hg.num_edges(),
        d0: ds.feature_dim(),
        num_classes: ds.num_classes,
        num_samples: ds.num_samples,
        has_planted: ds.planted.is_some(),
        label_factor: ds.planted.as_ref().map(|p| p.label_factor),
        planted_factors: ds.planted.as_ref().map_or(0, |p| p.num_factors),
    };
    let mut body = Vec::new();
    body.extend_from_slice(&(hg.num_incidences() as u64).to_le_bytes());
    for &(v, e) in hg.pairs() {
        body.extend_from_slice(&(v as u32).to_le_bytes());
        body.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for x in ds.features.data() {
        body.extend_from_slice(&x.to_le_bytes());
    }
    for &l in &ds.labels {
        body.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for mask in [&ds.splits.train, &ds.splits.val, &ds.splits.test] {
        body.extend(mask.iter().map(|&b| b as u8));
    }
    if let Some(p) = &ds.planted {
        for &k in &p.edge_factor {
            body.extend_from_slice(&(k as u32).to_le_bytes());
        }
    }
    write_container(DATASET_MAGIC, &header, &body)
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let (h, mut r): (DatasetHeader, _) = read_container(buf, DATASET_MAGIC)?;
    let n_pairs = r.len("pair count")?;
    if n_pairs > buf.len() / 8 {
        return Err(Error::MalformedFile("pair count exceeds file size".into()));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let v = r.u32("pairs")? as usize;
        let e = r.u32("pairs")? as usize;
        pairs.push((v, e));
    }
    let hypergraph = Hypergraph::new(pairs, h.num_nodes, h.num_edges)?;

    let (rows, items) = match h.task {
        Task::NodeClassification => (h.num_nodes, h.num_nodes),
        Task::HypergraphClassification => (h.num_samples * h.num_nodes, h.num_samples),
    };
    let n_feat = rows
        .checked_mul(h.d0)
        .filter(|&n| n <= buf.len() / 4)
        .ok_or_else(|| Error::MalformedFile("feature block exceeds file size".into()))?;
    let feats = (0..n_feat).map(|_| r.f32("features")).collect::<Result<Vec<_>>>()?;
    let features = Tensor::matrix(rows, h.d0, feats)?;
    let labels = (0..items)
        .map(|_| r.u32("labels").map(|l| l as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut read_mask = |what| -> Result<Vec<bool>> {
        Ok(r.take(items, what)?.iter().map(|&b| b != 0).collect())
    };
    let splits = Splits {
        train: read_mask("train mask")?,
        val: read_mask("val mask")?,
        test: read_mask("test mask")?,
    };
    let planted = if h.has_planted {
        let edge_factor = (0..h.num_edges)
            .map(|_| r.u32("planted ids").map(|k| k as usize))
            .collect::<Result<Vec<_>>>()?;
        Some(PlantedFactors {
            num_factors: h.planted_factors.max(edge_factor.iter().max().map_or(1, |m| m + 1)),
            label_factor: h.label_factor.unwrap_or(0),
            edge_factor,
        })
    } else {
        None
    };
    r.finish()?;
    Dataset::new(
        h.task,
        hypergraph,
        features,
        h.num_samples,
        h.num_classes,
        labels,
        splits,
        planted,
    )
    .map_err(|e| Error::MalformedFile(e.to_string()))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    version: u16,
    config: ModelConfig,
    input_dim: usize,
    num_classes: usize,
    classifier_inputs: usize,
    shapes: Vec<Vec<usize>>,
}

/// Serialises parameters as `f64` regardless of the training precision.
pub fn encode_params<T: Real>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    let tensors = params.tensors();
    let header = ParamsHeader {
        version: FORMAT_VERSION,
        config: params.config.clone(),
        input_dim: params.input_dim,
        num_classes: params.num_classes,
        classifier_inputs: params.classifier_inputs,
        shapes: tensors.iter().map(|t| t.shape().to_vec()).collect(),
    };
    let mut body = Vec::new();
    for t in tensors {
        for &x in t.data() {
            body.extend_from_slice(&x.to_f64().to_le_bytes());
        }
    }
    write_container(PARAMS_MAGIC, &header, &body)
}

pub fn decode_params<T: Real>(buf: &[u8]) -> Result<ModelParams<T>> {
    let (h, mut r): (ParamsHeader, _) = read_container(buf, PARAMS_MAGIC)?;
    let mut params =
        ModelParams::<T>::zeros(&h.config, h.input_dim, h.num_classes, h.classifier_inputs)?;
    {
        let slots = params.tensors_mut();
        if slots.len() != h.shapes.len() {
            return Err(Error::MalformedFile(format!(
                "header lists {} tensors, config implies {}",
                h.shapes.len(),
                slots.len()
            )));
        }
        for (slot, shape) in slots.into_iter().zip(&h.shapes) {
            if slot.shape() != shape.as_slice() {
                return Err(Error::MalformedFile(format!(
                    "tensor shape {shape:?} does not match config ({:?})",
                    slot.shape()
                )));
            }
            for v in slot.data_mut() {
                *v = T::of(r.f64("parameters")?);
            }
        }
    }
    r.finish()?;
    Ok(params)
}

pub fn save_params<T: Real>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_params(params)?)?;
    Ok(())
}

pub fn load_params<T: Real>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    decode_params(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_planted, SyntheticSpec};

    fn sample() -> Dataset {
        let spec = SyntheticSpec {
            num_nodes: 30,
            num_edges: 12,
            ..SyntheticSpec::default()
        };
        let ds = generate_planted(&spec).unwrap();
        crate::dataset::split_dataset(&ds, (0.5, 0.25, 0.25), 3).unwrap().0
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], DATASET_MAGIC);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn round_trip_hypergraph_task() {
        let spec = SyntheticSpec {
            num_nodes: 10,
            num_edges: 5,
            task: Task::HypergraphClassification,
            num_samples: 7,
            ..SyntheticSpec::default()
        };
        let ds = generate_planted(&spec).unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&ds).unwrap()).unwrap(), ds);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let bytes = encode_dataset(&sample()).unwrap();
        for cut in [3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_dataset(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::MalformedFile(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn trailing_garbage_is_malformed() {
        let mut bytes = encode_dataset(&sample()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_dataset(&bytes), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn wrong_version_is_reported() {
        let mut bytes = encode_dataset(&sample()).unwrap();
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            decode_dataset(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn wrong_magic_is_malformed() {
        let mut bytes = encode_dataset(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn header_uses_documented_keys() {
        let bytes = encode_dataset(&sample()).unwrap();
        let hlen = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[14..14 + hlen]).unwrap();
        for key in ["version", "task", "N", "M", "d0", "C", "S", "has_planted", "label_factor"] {
            assert!(header.get(key).is_some(), "missing {key}");
        }
        assert_eq!(header["label_factor"], 0);
    }
}
