//! Versioned on-disk model artifact: posterior means always, full samples
//! optionally, plus the dictionaries and per-dimension summaries that the
//! prediction and reporting commands need.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binmat::BinaryMatrix;
use crate::config::Config;
use crate::dataset::TripletDataset;
use crate::error::{Error, Result};
use crate::model::{dimension_stats, DimensionStats};
use crate::sampler::{PosteriorTrace, TraceSample};

pub const ARTIFACT_VERSION: u32 = 1;

/// Everything a trained run leaves behind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    /// Echo of the run configuration.
    pub config: Config,
    pub n_objects: usize,
    pub n_attributes: usize,
    pub n_dims: usize,
    pub object_ids: Vec<String>,
    pub attribute_ids: Vec<String>,
    /// The sparse training pairs, so reports that need the raw assignments
    /// (e.g. restricting to objects currently lacking an attribute) work
    /// from the artifact alone.
    pub pairs: Vec<(usize, usize)>,
    /// Distinct type labels (dense index space); empty for flat models.
    pub type_labels: Vec<String>,
    /// Type index per object; empty for flat models.
    pub type_of: Vec<usize>,
    /// L×D row-major posterior mean of the codes.
    pub u_mean: Vec<f64>,
    /// N×L row-major posterior mean of the assignments.
    pub z_mean: Vec<f64>,
    /// T×L row-major posterior mean of the type codes, when hierarchical.
    pub v_mean: Option<Vec<f64>>,
    /// L+1 reliabilities of every retained sample.
    pub reliabilities_per_sample: Vec<Vec<f64>>,
    /// Second-layer reliabilities per sample, when hierarchical.
    pub reliabilities2_per_sample: Option<Vec<Vec<f64>>>,
    /// Full retained samples (optional — they dominate file size).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<TraceSample>>,
    pub dimension_stats: Vec<DimensionStats>,
    pub converged: bool,
    pub sweep_count: usize,
}

fn bit_means(mats: Vec<&BinaryMatrix>) -> Vec<f64> {
    let rows = mats[0].rows();
    let cols = mats[0].cols();
    let mut acc = vec![0.0f64; rows * cols];
    for m in &mats {
        for i in 0..rows {
            for j in m.row_ones(i) {
                acc[i * cols + j] += 1.0;
            }
        }
    }
    let k = mats.len() as f64;
    for a in &mut acc {
        *a /= k;
    }
    acc
}

/// Summarizes a finished run into an artifact. `type_info` carries the
/// dense type dictionary and per-object indices for hierarchical runs.
pub fn build_artifact(
    config: &Config,
    data: &TripletDataset,
    type_info: Option<(Vec<String>, Vec<usize>)>,
    trace: &PosteriorTrace,
    keep_samples: bool,
) -> Result<ModelArtifact> {
    if trace.samples.is_empty() {
        return Err(Error::State(
            "cannot build an artifact from a trace with no retained samples".into(),
        ));
    }
    let x = data.to_matrix();
    let first = &trace.samples[0];
    let stats = dimension_stats(trace, &x)?;
    let u_mean = bit_means(trace.samples.iter().map(|s| &s.u).collect());
    let z_mean = bit_means(trace.samples.iter().map(|s| &s.z).collect());
    let v_mean = if trace.samples.iter().all(|s| s.v.is_some()) {
        Some(bit_means(
            trace.samples.iter().map(|s| s.v.as_ref().unwrap()).collect(),
        ))
    } else {
        None
    };
    let reliabilities2_per_sample = if trace.samples.iter().all(|s| s.reliabilities2.is_some()) {
        Some(
            trace
                .samples
                .iter()
                .map(|s| s.reliabilities2.clone().unwrap())
                .collect(),
        )
    } else {
        None
    };
    let (type_labels, type_of) = type_info.unwrap_or_default();
    Ok(ModelArtifact {
        version: ARTIFACT_VERSION,
        config: config.clone(),
        n_objects: data.n_objects,
        n_attributes: data.n_attributes,
        n_dims: first.u.rows(),
        object_ids: data.object_ids.clone(),
        attribute_ids: data.attribute_ids.clone(),
        pairs: data.pairs.clone(),
        type_labels,
        type_of,
        u_mean,
        z_mean,
        v_mean,
        reliabilities_per_sample: trace
            .samples
            .iter()
            .map(|s| s.reliabilities.clone())
            .collect(),
        reliabilities2_per_sample,
        samples: keep_samples.then(|| trace.samples.clone()),
        dimension_stats: stats,
        converged: trace.converged,
        sweep_count: trace.sweep_count,
    })
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse(path, "missing version field"))?;
        if version != ARTIFACT_VERSION as u64 {
            return Err(Error::Version {
                found: version as u32,
                expected: ARTIFACT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Mean reliability vector over retained samples.
    pub fn mean_reliabilities(&self) -> Vec<f64> {
        mean_vectors(&self.reliabilities_per_sample)
    }

    /// Reconstructs a trace for prediction. With stored samples this is the
    /// original trace; otherwise a single pseudo-sample built from the
    /// posterior-mean parameters (bits thresholded at 0.5, mean
    /// reliabilities) — the boolean flag reports that fallback, which
    /// callers surface as a warning.
    pub fn to_trace(&self) -> Result<(PosteriorTrace, bool)> {
        if let Some(samples) = &self.samples {
            if !samples.is_empty() {
                return Ok((
                    PosteriorTrace {
                        samples: samples.clone(),
                        train_ll_history: Vec::new(),
                        sweep_count: self.sweep_count,
                        converged: self.converged,
                    },
                    false,
                ));
            }
        }
        let u = threshold_matrix(&self.u_mean, self.n_dims, self.n_attributes)?;
        let z = threshold_matrix(&self.z_mean, self.n_objects, self.n_dims)?;
        let v = match (&self.v_mean, self.type_labels.len()) {
            (Some(means), t) if t > 0 => Some(threshold_matrix(means, t, self.n_dims)?),
            _ => None,
        };
        let reliabilities2 = self
            .reliabilities2_per_sample
            .as_ref()
            .map(|rs| mean_vectors(rs));
        let sample = TraceSample {
            u,
            z,
            reliabilities: self.mean_reliabilities(),
            v,
            reliabilities2,
        };
        Ok((
            PosteriorTrace {
                samples: vec![sample],
                train_ll_history: Vec::new(),
                sweep_count: self.sweep_count,
                converged: self.converged,
            },
            true,
        ))
    }

    /// Rebuilds the training dataset view stored in the artifact (objects
    /// without a recorded type come back as the unknown-type label).
    pub fn to_dataset(&self) -> TripletDataset {
        let type_of = if self.type_of.is_empty() {
            vec![crate::dataset::UNKNOWN_TYPE.to_string(); self.n_objects]
        } else {
            self.type_of
                .iter()
                .map(|&t| self.type_labels[t].clone())
                .collect()
        };
        TripletDataset {
            n_objects: self.n_objects,
            n_attributes: self.n_attributes,
            pairs: self.pairs.clone(),
            object_ids: self.object_ids.clone(),
            attribute_ids: self.attribute_ids.clone(),
            type_of,
        }
    }

    /// Index lookup helpers for prediction by id.
    pub fn object_index(&self, id: &str) -> Result<usize> {
        self.object_ids
            .iter()
            .position(|o| o == id)
            .ok_or_else(|| Error::Lookup(format!("unknown object id {id:?}")))
    }

    pub fn attribute_index(&self, id: &str) -> Result<usize> {
        self.attribute_ids
            .iter()
            .position(|a| a == id)
            .ok_or_else(|| Error::Lookup(format!("unknown attribute id {id:?}")))
    }
}

fn mean_vectors(vs: &[Vec<f64>]) -> Vec<f64> {
    if vs.is_empty() {
        return Vec::new();
    }
    let mut acc = vec![0.0f64; vs[0].len()];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    for a in &mut acc {
        *a /= vs.len() as f64;
    }
    acc
}

fn threshold_matrix(means: &[f64], rows: usize, cols: usize) -> Result<BinaryMatrix> {
    if means.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} means for a {rows}x{cols} matrix",
            means.len()
        )));
    }
    let mut m = BinaryMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if means[i * cols + j] >= 0.5 {
                m.set(i, j, true);
            }
        }
    }
    Ok(m)
}
