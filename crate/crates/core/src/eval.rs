//! Holdout construction, ROC-AUC, and the model-vs-baseline and
//! attribute-applicability reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::TypeFrequencyTable;
use crate::binmat::BinaryMatrix;
use crate::dataset::TripletDataset;
use crate::error::{Error, Result};
use crate::model::posterior_predictive;
use crate::sampler::PosteriorTrace;

/// A set of cells hidden from training and scored at evaluation time.
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutMask {
    rows: usize,
    cols: usize,
    cells: Vec<(usize, usize)>,
    held: BinaryMatrix,
    fraction: f64,
    seed: u64,
}

impl HoldoutMask {
    /// Mask holding out nothing.
    pub fn empty(rows: usize, cols: usize) -> Self {
        HoldoutMask {
            rows,
            cols,
            cells: Vec::new(),
            held: BinaryMatrix::zeros(rows, cols),
            fraction: 0.0,
            seed: 0,
        }
    }

    /// Mask over an explicit list of cells; duplicates and out-of-range
    /// cells are rejected.
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<(usize, usize)>) -> Result<Self> {
        let mut held = BinaryMatrix::zeros(rows, cols);
        for &(n, d) in &cells {
            if n >= rows || d >= cols {
                return Err(Error::Bounds(format!(
                    "holdout cell ({n}, {d}) outside {rows}x{cols}"
                )));
            }
            if held.get(n, d) {
                return Err(Error::Data(format!("duplicate holdout cell ({n}, {d})")));
            }
            held.set(n, d, true);
        }
        let fraction = if rows * cols == 0 {
            0.0
        } else {
            cells.len() as f64 / (rows * cols) as f64
        };
        Ok(HoldoutMask {
            rows,
            cols,
            cells,
            held,
            fraction,
            seed: 0,
        })
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Held-out cells in ascending row-major order for sampled masks,
    /// insertion order for explicit ones.
    #[inline]
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Whether cell `(n, d)` is held out (hidden from training).
    #[inline]
    pub fn is_held(&self, n: usize, d: usize) -> bool {
        self.held.get(n, d)
    }

    /// N×D indicator of *observed* cells (complement of the mask).
    pub fn observed_matrix(&self) -> BinaryMatrix {
        let mut obs = BinaryMatrix::ones(self.rows, self.cols);
        for &(n, d) in &self.cells {
            obs.set(n, d, false);
        }
        obs
    }

    /// Errors unless the mask covers a `rows`×`cols` matrix.
    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::Shape(format!(
                "mask covers {}x{} but data is {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// Uniformly samples `round(fraction · rows · cols)` distinct cells.
/// Deterministic in `seed`; cells come out in ascending row-major order.
pub fn make_holdout(rows: usize, cols: usize, fraction: f64, seed: u64) -> Result<HoldoutMask> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie strictly inside (0,1), got {fraction}"
        )));
    }
    let total = rows * cols;
    let k = (fraction * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<usize> = rand::seq::index::sample(&mut rng, total, k).into_vec();
    flat.sort_unstable();
    let cells: Vec<(usize, usize)> = flat.into_iter().map(|i| (i / cols, i % cols)).collect();
    let mut mask = HoldoutMask::from_cells(rows, cols, cells)?;
    mask.fraction = fraction;
    mask.seed = seed;
    Ok(mask)
}

/// Area under the ROC curve via the tie-corrected (average rank)
/// Mann–Whitney statistic: the probability that a uniformly chosen positive
/// outranks a uniformly chosen negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&b| b).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "ROC-AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks across runs of tied scores.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// One row of the per-cluster comparison; `None` metrics mean the cluster's
/// test cells were single-class and the comparison was skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: String,
    pub auc_model: Option<f64>,
    pub auc_baseline: Option<f64>,
    pub delta: Option<f64>,
    pub n_cells: usize,
}

/// Overall and per-cluster model-vs-baseline comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_model: f64,
    pub auc_baseline: f64,
    pub n_test_cells: usize,
    pub clusters: Vec<ClusterRow>,
}

impl EvalReport {
    /// Renders the report as CSV (`cluster,auc_model,auc_baseline,delta,n_cells`),
    /// leading with an `overall` row; skipped metrics print as `NA`.
    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "NA".to_string(), |x| x.to_string())
        }
        let mut out = String::from("cluster,auc_model,auc_baseline,delta,n_cells\n");
        out.push_str(&format!(
            "overall,{},{},{},{}\n",
            self.auc_model,
            self.auc_baseline,
            self.auc_model - self.auc_baseline,
            self.n_test_cells
        ));
        for row in &self.clusters {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.cluster,
                opt(row.auc_model),
                opt(row.auc_baseline),
                opt(row.delta),
                row.n_cells
            ));
        }
        out
    }
}

/// Scores every held-out cell with the posterior predictive and the
/// type-frequency baseline, then compares them by ROC-AUC, optionally within
/// clusters (`clusters[n]` is object `n`'s cluster label).
pub fn evaluate(
    trace: &PosteriorTrace,
    baseline: &TypeFrequencyTable,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
    clusters: Option<&[String]>,
) -> Result<EvalReport> {
    if mask.is_empty() {
        return Err(Error::Config(
            "evaluation requires a non-empty holdout mask".into(),
        ));
    }
    mask.check_shape(x.rows(), x.cols())?;
    if let Some(c) = clusters {
        if c.len() != x.rows() {
            return Err(Error::Shape(format!(
                "{} cluster labels for {} objects",
                c.len(),
                x.rows()
            )));
        }
    }
    let cells = mask.cells();
    let model_scores = posterior_predictive(trace, cells)?;
    let base_scores: Vec<f64> = cells.iter().map(|&(n, d)| baseline.predict(n, d)).collect();
    let labels: Vec<bool> = cells.iter().map(|&(n, d)| x.get(n, d)).collect();
    let auc_model = roc_auc(&model_scores, &labels)?;
    let auc_baseline = roc_auc(&base_scores, &labels)?;

    let mut cluster_rows = Vec::new();
    if let Some(cluster_of) = clusters {
        let mut order: Vec<String> = Vec::new();
        for label in cluster_of {
            if !order.contains(label) {
                order.push(label.clone());
            }
        }
        order.sort();
        for label in order {
            let idx: Vec<usize> = (0..cells.len())
                .filter(|&i| &cluster_of[cells[i].0] == &label)
                .collect();
            let m: Vec<f64> = idx.iter().map(|&i| model_scores[i]).collect();
            let b: Vec<f64> = idx.iter().map(|&i| base_scores[i]).collect();
            let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let both_classes = y.iter().any(|&v| v) && y.iter().any(|&v| !v);
            let (am, ab, delta) = if both_classes {
                let am = roc_auc(&m, &y)?;
                let ab = roc_auc(&b, &y)?;
                (Some(am), Some(ab), Some(am - ab))
            } else {
                (None, None, None)
            };
            cluster_rows.push(ClusterRow {
                cluster: label,
                auc_model: am,
                auc_baseline: ab,
                delta,
                n_cells: idx.len(),
            });
        }
    }
    Ok(EvalReport {
        auc_model,
        auc_baseline,
        n_test_cells: cells.len(),
        clusters: cluster_rows,
    })
}

/// One row of the attribute-applicability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplicabilityRow {
    pub type_label: String,
    /// Mean posterior-predictive probability of the attribute over all the
    /// type's objects.
    pub mean_p: f64,
    /// Same mean restricted to objects currently lacking the attribute;
    /// `None` when every object of the type already has it.
    pub mean_p_absent: Option<f64>,
    pub n_products: usize,
}

/// Ranks product types by how strongly the model believes `attribute`
/// applies to them; returns the `top_k` types by descending overall mean.
pub fn applicability_report(
    trace: &PosteriorTrace,
    data: &TripletDataset,
    attribute: &str,
    top_k: usize,
) -> Result<Vec<ApplicabilityRow>> {
    let d = data
        .attribute_ids
        .iter()
        .position(|a| a == attribute)
        .ok_or_else(|| Error::Lookup(format!("attribute id {attribute:?} not in dictionary")))?;
    let mut has_attr = vec![false; data.n_objects];
    for &(n, pd) in &data.pairs {
        if pd == d {
            has_attr[n] = true;
        }
    }
    // Types in first-appearance order.
    let mut type_order: Vec<&String> = Vec::new();
    for label in &data.type_of {
        if !type_order.contains(&label) {
            type_order.push(label);
        }
    }
    let cells: Vec<(usize, usize)> = (0..data.n_objects).map(|n| (n, d)).collect();
    let preds = posterior_predictive(trace, &cells)?;
    let mut rows = Vec::with_capacity(type_order.len());
    for label in type_order {
        let members: Vec<usize> = (0..data.n_objects)
            .filter(|&n| &data.type_of[n] == label)
            .collect();
        let mean_p = members.iter().map(|&n| preds[n]).sum::<f64>() / members.len() as f64;
        let absent: Vec<usize> = members.iter().copied().filter(|&n| !has_attr[n]).collect();
        let mean_p_absent = if absent.is_empty() {
            None
        } else {
            Some(absent.iter().map(|&n| preds[n]).sum::<f64>() / absent.len() as f64)
        };
        rows.push(ApplicabilityRow {
            type_label: label.clone(),
            mean_p,
            mean_p_absent,
            n_products: members.len(),
        });
    }
    rows.sort_by(|a, b| {
        b.mean_p
            .total_cmp(&a.mean_p)
            .then_with(|| a.type_label.cmp(&b.type_label))
    });
    rows.truncate(top_k);
    Ok(rows)
}

/// Renders applicability rows as CSV (`type,mean_p,mean_p_absent,n_products`);
/// an empty absent set prints as `NA`.
pub fn applicability_csv(rows: &[ApplicabilityRow]) -> String {
    let mut out = String::from("type,mean_p,mean_p_absent,n_products\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.type_label,
            r.mean_p,
            r.mean_p_absent
                .map_or_else(|| "NA".to_string(), |v| v.to_string()),
            r.n_products
        ));
    }
    out
}
