//! Ground-truth machinery: synthetic data drawn from the model's own
//! generative process (with all planted values returned), and
//! exhaustive-enumeration oracles giving exact posteriors and exact
//! conditionals on tiny instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binmat::BinaryMatrix;
use crate::dataset::TripletDataset;
use crate::error::{Error, Result};
use crate::eval::HoldoutMask;
use crate::hierarchy::HierarchicalModel;
use crate::model::{max_masked, sigmoid, PriorConfig};

/// Shape and distribution of a planted synthetic instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub n_attributes: usize,
    pub n_dims: usize,
    pub n_types: usize,
    /// Planted non-clamped reliabilities are drawn uniformly from
    /// `[reliability_lo, reliability_hi]` (values clipped into
    /// `[1e-9, 1 - 1e-9]`, so a degenerate `[1, 1]` range is usable for
    /// noiseless instances).
    pub reliability_lo: f64,
    pub reliability_hi: f64,
    pub noise_floor: f64,
    /// Density of the planted code rows U.
    pub q_u: f64,
    /// Density of the planted type→dimension matrix V.
    pub type_dim_density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_objects: 200,
            n_attributes: 30,
            n_dims: 5,
            n_types: 4,
            reliability_lo: 0.9,
            reliability_hi: 0.98,
            noise_floor: 0.02,
            q_u: 0.1,
            type_dim_density: 0.3,
            seed: 1,
        }
    }
}

const PLANT_EPS: f64 = 1e-9;

fn clip_plant(p: f64) -> f64 {
    p.clamp(PLANT_EPS, 1.0 - PLANT_EPS)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_types < 1 || self.n_objects < self.n_types {
            return Err(Error::Config(format!(
                "need n_objects >= n_types >= 1, got {} objects and {} types",
                self.n_objects, self.n_types
            )));
        }
        for (name, v) in [
            ("reliability_lo", self.reliability_lo),
            ("reliability_hi", self.reliability_hi),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.reliability_lo > self.reliability_hi {
            return Err(Error::Config(format!(
                "reliability range is empty: [{}, {}]",
                self.reliability_lo, self.reliability_hi
            )));
        }
        for (name, v) in [
            ("noise_floor", self.noise_floor),
            ("q_u", self.q_u),
            ("type_dim_density", self.type_dim_density),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything the generator planted, kept alongside the dataset for
/// recovery scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    /// L×D planted codes.
    pub u: BinaryMatrix,
    /// N×L planted assignments.
    pub z: BinaryMatrix,
    /// T×L planted type→dimension matrix.
    pub v: BinaryMatrix,
    /// L+1 planted reliabilities (last entry is the noise floor).
    pub reliabilities: Vec<f64>,
    /// T+1 second-layer reliabilities used to draw Z.
    pub reliabilities2: Vec<f64>,
    /// Type index per object.
    pub type_of: Vec<usize>,
}

/// Draws Z from the second-layer forward model: each `z_nl` is Bernoulli of
/// the type's point probability (type reliability where `v` covers `l`,
/// noise floor otherwise). Row-major draw order.
pub fn forward_z(
    v: &BinaryMatrix,
    reliabilities2: &[f64],
    type_of: &[usize],
    rng: &mut ChaCha8Rng,
) -> BinaryMatrix {
    let l_count = v.cols();
    let floor2 = reliabilities2[v.rows()];
    let mut z = BinaryMatrix::zeros(type_of.len(), l_count);
    for (n, &t) in type_of.iter().enumerate() {
        for l in 0..l_count {
            let p = if v.get(t, l) && reliabilities2[t] > floor2 {
                reliabilities2[t]
            } else {
                floor2
            };
            z.set(n, l, rng.random::<f64>() < p);
        }
    }
    z
}

/// Draws X from the first-layer forward model: each `x_nd` is Bernoulli of
/// the max reliability over its active set. Row-major draw order.
pub fn forward_x(
    z: &BinaryMatrix,
    u: &BinaryMatrix,
    reliabilities: &[f64],
    rng: &mut ChaCha8Rng,
) -> BinaryMatrix {
    let floor = reliabilities[u.rows()];
    let ut = u.transpose();
    let mut x = BinaryMatrix::zeros(z.rows(), u.cols());
    for n in 0..z.rows() {
        let zrow = z.row_words(n);
        for d in 0..u.cols() {
            let p = max_masked(zrow, ut.row_words(d), reliabilities, floor);
            x.set(n, d, rng.random::<f64>() < p);
        }
    }
    x
}

fn padded(prefix: &str, i: usize, count: usize) -> String {
    let width = count.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// Wraps a dense matrix as a triplet dataset with generated ids.
pub fn dataset_from_matrix(x: &BinaryMatrix, type_labels: Vec<String>) -> TripletDataset {
    let n = x.rows();
    let d = x.cols();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in x.row_ones(i) {
            pairs.push((i, j));
        }
    }
    TripletDataset {
        n_objects: n,
        n_attributes: d,
        pairs,
        object_ids: (0..n).map(|i| padded("obj_", i, n)).collect(),
        attribute_ids: (0..d).map(|j| padded("attr_", j, d)).collect(),
        type_of: type_labels,
    }
}

/// Standard label for planted type `t` of `n_types`.
pub fn type_label(t: usize, n_types: usize) -> String {
    padded("type_", t, n_types)
}

/// Samples a full instance from the generative process. Draw order (fixed
/// for reproducibility): first-layer reliabilities, second-layer
/// reliabilities, V, Z (via [`forward_z`]), U, X (via [`forward_x`]).
/// Objects are assigned to types round-robin so every type is populated.
pub fn generate(cfg: &SynthConfig) -> Result<(TripletDataset, PlantedTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let uniform = |rng: &mut ChaCha8Rng| {
        clip_plant(cfg.reliability_lo + rng.random::<f64>() * (cfg.reliability_hi - cfg.reliability_lo))
    };
    let type_of: Vec<usize> = (0..cfg.n_objects).map(|n| n % cfg.n_types).collect();
    let mut reliabilities: Vec<f64> = (0..cfg.n_dims).map(|_| uniform(&mut rng)).collect();
    reliabilities.push(clip_plant(cfg.noise_floor));
    let mut reliabilities2: Vec<f64> = (0..cfg.n_types).map(|_| uniform(&mut rng)).collect();
    reliabilities2.push(clip_plant(cfg.noise_floor));
    let v = BinaryMatrix::bernoulli(cfg.n_types, cfg.n_dims, cfg.type_dim_density, &mut rng);
    let z = forward_z(&v, &reliabilities2, &type_of, &mut rng);
    let u = BinaryMatrix::bernoulli(cfg.n_dims, cfg.n_attributes, cfg.q_u, &mut rng);
    let x = forward_x(&z, &u, &reliabilities, &mut rng);
    let labels = type_of
        .iter()
        .map(|&t| type_label(t, cfg.n_types))
        .collect();
    let data = dataset_from_matrix(&x, labels);
    data.validate()?;
    Ok((
        data,
        PlantedTruth {
            u,
            z,
            v,
            reliabilities,
            reliabilities2,
            type_of,
        },
    ))
}

/// Log of the unnormalized joint weight of the model's current latent state
/// given `x`: data likelihood over observed cells, plus the Bernoulli prior
/// on the codes, plus — hierarchically — the second layer's likelihood of
/// Z and the prior on V, or else the flat Bernoulli prior on Z. Clamped
/// entries contribute constant factors that cancel in conditionals.
pub fn joint_log_weight(
    model: &HierarchicalModel,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
) -> Result<f64> {
    let layer1 = model.layer1();
    let mut w = layer1.log_likelihood(x, mask)?;
    w += bernoulli_log_prior(layer1.u(), layer1.priors().q_u);
    match model.layer2() {
        Some(layer2) => {
            let all = HoldoutMask::empty(layer2.n_objects(), layer2.n_attributes());
            w += layer2.log_likelihood(layer1.z(), &all)?;
            w += bernoulli_log_prior(layer2.u(), layer2.priors().q_u);
        }
        None => {
            w += bernoulli_log_prior(layer1.z(), layer1.priors().q_z);
        }
    }
    Ok(w)
}

fn bernoulli_log_prior(m: &BinaryMatrix, q: f64) -> f64 {
    let ones = m.count_ones() as f64;
    let total = (m.rows() * m.cols()) as f64;
    ones * q.ln() + (total - ones) * (1.0 - q).ln()
}

/// One latent bit of the (possibly hierarchical) model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetBit {
    /// First-layer assignment entry (object, dimension).
    Z(usize, usize),
    /// First-layer code entry (dimension, attribute).
    U(usize, usize),
    /// Second-layer code entry (type, dimension).
    V(usize, usize),
}

fn with_target(model: &HierarchicalModel, target: TargetBit, value: bool) -> Result<HierarchicalModel> {
    let mut m = model.clone();
    match target {
        TargetBit::Z(n, l) => {
            check_ix(n, l, m.layer1().n_objects(), m.layer1().n_dims(), "assignments")?;
            m.layer1_mut().set_z(n, l, value);
        }
        TargetBit::U(l, d) => {
            check_ix(l, d, m.layer1().n_dims(), m.layer1().n_attributes(), "codes")?;
            m.layer1_mut().set_u(l, d, value);
        }
        TargetBit::V(t, l) => {
            let layer2 = m
                .layer2_mut()
                .ok_or_else(|| Error::State("model has no second layer".into()))?;
            check_ix(t, l, layer2.n_dims(), layer2.n_attributes(), "type codes")?;
            layer2.set_u(t, l, value);
        }
    }
    Ok(m)
}

fn check_ix(i: usize, j: usize, rows: usize, cols: usize, what: &str) -> Result<()> {
    if i >= rows || j >= cols {
        return Err(Error::Bounds(format!(
            "entry ({i}, {j}) outside {rows}x{cols} {what}"
        )));
    }
    Ok(())
}

/// Exact conditional `p(bit = 1 | everything else)` by direct evaluation of
/// the two joint weights. Any instance size — the cost is two likelihood
/// evaluations.
pub fn exact_conditional(
    model: &HierarchicalModel,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
    target: TargetBit,
) -> Result<f64> {
    let w1 = joint_log_weight(&with_target(model, target, true)?, x, mask)?;
    let w0 = joint_log_weight(&with_target(model, target, false)?, x, mask)?;
    Ok(sigmoid(w1 - w0))
}

/// Exact posterior marginals and predictive for a flat (single-layer) model
/// with fixed reliabilities, by enumeration over all latent states.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPosterior {
    /// N×L row-major `p(z_nl = 1 | X)`.
    pub z_marginals: Vec<f64>,
    /// L×D row-major `p(u_ld = 1 | X)`.
    pub u_marginals: Vec<f64>,
    /// N×D row-major posterior-expected `p(x_nd = 1)`.
    pub predictive: Vec<f64>,
}

fn matrix_from_bits(state: u32, rows: usize, cols: usize) -> BinaryMatrix {
    let mut m = BinaryMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if state >> (i * cols + j) & 1 == 1 {
                m.set(i, j, true);
            }
        }
    }
    m
}

/// Enumerates all `2^(N·L + L·D)` configurations (≤ 2^16, else a state
/// error), weighting each by Bernoulli priors × likelihood with the given
/// fixed reliabilities, and normalizes.
pub fn exact_posterior(
    x: &BinaryMatrix,
    n_dims: usize,
    reliabilities: &[f64],
    priors: &PriorConfig,
) -> Result<ExactPosterior> {
    let n = x.rows();
    let d = x.cols();
    let l = n_dims;
    if reliabilities.len() != l + 1 {
        return Err(Error::Shape(format!(
            "{} reliabilities for {} dimensions",
            reliabilities.len(),
            l
        )));
    }
    priors.validate()?;
    let zbits = n * l;
    let ubits = l * d;
    if zbits + ubits > 16 {
        return Err(Error::State(format!(
            "state space 2^{} exceeds the enumeration limit 2^16",
            zbits + ubits
        )));
    }
    let floor = reliabilities[l];
    let q_z = priors.q_z;
    let q_u = priors.q_u;
    let mut total = 0.0f64;
    let mut zacc = vec![0.0f64; zbits];
    let mut uacc = vec![0.0f64; ubits];
    let mut pacc = vec![0.0f64; n * d];
    let mut probs = vec![0.0f64; n * d];
    for ustate in 0..(1u32 << ubits) {
        let u = matrix_from_bits(ustate, l, d);
        let prior_u = bernoulli_log_prior(&u, q_u);
        let ut = u.transpose();
        for zstate in 0..(1u32 << zbits) {
            let z = matrix_from_bits(zstate, n, l);
            let mut logw = prior_u + bernoulli_log_prior(&z, q_z);
            for i in 0..n {
                let zrow = z.row_words(i);
                for j in 0..d {
                    let p = max_masked(zrow, ut.row_words(j), reliabilities, floor);
                    probs[i * d + j] = p;
                    logw += if x.get(i, j) { p.ln() } else { (1.0 - p).ln() };
                }
            }
            let w = logw.exp();
            total += w;
            for (k, acc) in zacc.iter_mut().enumerate() {
                if zstate >> k & 1 == 1 {
                    *acc += w;
                }
            }
            for (k, acc) in uacc.iter_mut().enumerate() {
                if ustate >> k & 1 == 1 {
                    *acc += w;
                }
            }
            for (acc, &p) in pacc.iter_mut().zip(&probs) {
                *acc += w * p;
            }
        }
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!(
            "enumeration produced a degenerate total weight {total}"
        )));
    }
    for acc in zacc.iter_mut().chain(&mut uacc).chain(&mut pacc) {
        *acc /= total;
    }
    Ok(ExactPosterior {
        z_marginals: zacc,
        u_marginals: uacc,
        predictive: pacc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binmat::boolean_or_product;
    use crate::hierarchy::TypeClamp;
    use crate::model::FactorLayer;
    use crate::sampler::{conditional_log_odds_u, conditional_log_odds_z};
    use crate::model::logit;
    use proptest::prelude::*;

    #[test]
    fn generate_is_deterministic() {
        let cfg = SynthConfig::default();
        let (data_a, truth_a) = generate(&cfg).unwrap();
        let (data_b, truth_b) = generate(&cfg).unwrap();
        assert_eq!(data_a, data_b);
        assert_eq!(truth_a, truth_b);
        let other = SynthConfig {
            seed: 2,
            ..SynthConfig::default()
        };
        let (data_c, _) = generate(&other).unwrap();
        assert_ne!(data_a, data_c);
    }

    #[test]
    fn generated_shapes_and_types_are_consistent() {
        let cfg = SynthConfig {
            n_objects: 23,
            n_attributes: 7,
            n_dims: 3,
            n_types: 4,
            ..SynthConfig::default()
        };
        let (data, truth) = generate(&cfg).unwrap();
        assert_eq!(data.n_objects, 23);
        assert_eq!(data.n_attributes, 7);
        assert_eq!((truth.u.rows(), truth.u.cols()), (3, 7));
        assert_eq!((truth.z.rows(), truth.z.cols()), (23, 3));
        assert_eq!((truth.v.rows(), truth.v.cols()), (4, 3));
        assert_eq!(truth.reliabilities.len(), 4);
        assert_eq!(truth.reliabilities2.len(), 5);
        // Round-robin: every type populated, labels match indices.
        for t in 0..4 {
            assert!(truth.type_of.iter().filter(|&&x| x == t).count() >= 5);
        }
        assert_eq!(data.type_of[0], "type_0");
        assert_eq!(data.type_of[5], "type_1");
        data.validate().unwrap();
    }

    #[test]
    fn noiseless_limit_reproduces_boolean_or_product() {
        let cfg = SynthConfig {
            n_objects: 20,
            n_attributes: 12,
            n_dims: 3,
            n_types: 2,
            reliability_lo: 1.0,
            reliability_hi: 1.0,
            noise_floor: 1e-9,
            q_u: 0.4,
            type_dim_density: 0.5,
            seed: 7,
        };
        let (data, truth) = generate(&cfg).unwrap();
        let x = data.to_matrix();
        let product = boolean_or_product(&truth.z, &truth.u).unwrap();
        assert_eq!(x, product);
    }

    #[test]
    fn zero_dims_gives_pure_noise() {
        let cfg = SynthConfig {
            n_objects: 100,
            n_attributes: 40,
            n_dims: 0,
            n_types: 2,
            noise_floor: 0.3,
            seed: 11,
            ..SynthConfig::default()
        };
        let (data, truth) = generate(&cfg).unwrap();
        assert_eq!(truth.u.rows(), 0);
        let x = data.to_matrix();
        let density = x.density();
        // 4,000 Bernoulli(0.3) cells: 3 standard errors ≈ 0.0217.
        assert!(
            (density - 0.3).abs() < 0.022,
            "density {density} too far from 0.3"
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.n_types = 0;
        assert!(cfg.validate().is_err());
        cfg = SynthConfig {
            n_objects: 3,
            n_types: 4,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = SynthConfig {
            reliability_lo: 0.9,
            reliability_hi: 0.5,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = SynthConfig {
            noise_floor: 0.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = SynthConfig {
            q_u: 1.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn generation_is_measure_consistent() {
        // Fixed planted configuration; 100 independent X draws of 500 cells
        // each = 50,000 generated cells. Aggregate one-counts must match the
        // analytic cell probabilities within 3 standard errors.
        let cfg = SynthConfig {
            n_objects: 50,
            n_attributes: 10,
            n_dims: 3,
            n_types: 2,
            reliability_lo: 0.7,
            reliability_hi: 0.95,
            noise_floor: 0.1,
            q_u: 0.3,
            type_dim_density: 0.5,
            seed: 123,
        };
        let (_, truth) = generate(&cfg).unwrap();
        let reps = 100usize;
        let mut ones = 0u64;
        let mut mean = 0.0f64;
        let mut var = 0.0f64;
        let ut = truth.u.transpose();
        let floor = truth.reliabilities[3];
        for n in 0..50 {
            let zrow = truth.z.row_words(n);
            for d in 0..10 {
                let p = max_masked(zrow, ut.row_words(d), &truth.reliabilities, floor);
                mean += p * reps as f64;
                var += p * (1.0 - p) * reps as f64;
            }
        }
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + rep as u64);
            let x = forward_x(&truth.z, &truth.u, &truth.reliabilities, &mut rng);
            ones += x.count_ones();
        }
        let se = var.sqrt();
        assert!(
            (ones as f64 - mean).abs() <= 3.0 * se,
            "total ones {ones} vs expected {mean:.1} ± {:.1}",
            3.0 * se
        );
    }

    #[test]
    fn worked_1x1x1_posterior() {
        // x = 1, reliability 0.9, floor 0.02, independent Bernoulli(0.5)
        // priors: p(z=1, u=1 | x) = (0.25·0.9) / (0.25·0.9 + 0.75·0.02)
        // = 0.9375; marginals and predictive follow from the same four
        // weights.
        let x = BinaryMatrix::from_dense(&[1], 1, 1).unwrap();
        let priors = PriorConfig {
            q_u: 0.5,
            q_z: 0.5,
            ..PriorConfig::default()
        };
        let layer = FactorLayer::from_parts(
            BinaryMatrix::zeros(1, 1),
            BinaryMatrix::zeros(1, 1),
            vec![0.9, 0.02],
            priors,
        )
        .unwrap();
        let mask = HoldoutMask::empty(1, 1);
        // Joint via the weight oracle.
        let mut weights = [0.0f64; 4];
        for (ix, (zb, ub)) in [(false, false), (false, true), (true, false), (true, true)]
            .iter()
            .enumerate()
        {
            let mut m = HierarchicalModel::single(layer.clone());
            m.layer1_mut().set_z(0, 0, *zb);
            m.layer1_mut().set_u(0, 0, *ub);
            weights[ix] = joint_log_weight(&m, &x, &mask).unwrap().exp();
        }
        let total: f64 = weights.iter().sum();
        assert!((weights[3] / total - 0.9375).abs() < 1e-12);

        // Same numbers from the enumerator.
        let post = exact_posterior(&x, 1, &[0.9, 0.02], &priors).unwrap();
        let expect_marginal = 0.92 / 0.96;
        assert!((post.z_marginals[0] - expect_marginal).abs() < 1e-12);
        assert!((post.u_marginals[0] - expect_marginal).abs() < 1e-12);
        let expect_pred = (3.0 * 0.25 * 0.02 * 0.02 + 0.25 * 0.9 * 0.9) / (0.96 * 0.25);
        assert!((post.predictive[0] - expect_pred).abs() < 1e-12);
    }

    #[test]
    fn flat_likelihood_leaves_the_prior() {
        // Reliability = floor = 0.5 makes every state equally likely, so
        // the z marginal is exactly q_z.
        let x = BinaryMatrix::from_dense(&[1, 0], 1, 2).unwrap();
        let priors = PriorConfig {
            q_z: 0.3,
            q_u: 0.7,
            ..PriorConfig::default()
        };
        let post = exact_posterior(&x, 1, &[0.5, 0.5], &priors).unwrap();
        assert!((post.z_marginals[0] - 0.3).abs() < 1e-12);
        for &m in &post.u_marginals {
            assert!((m - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_state_space_is_rejected() {
        let x = BinaryMatrix::zeros(3, 3);
        // 3·2 + 2·3 = 12 ok; 3·3 + 3·3 = 18 too big.
        assert!(exact_posterior(&x, 2, &[0.9, 0.9, 0.02], &PriorConfig::default()).is_ok());
        assert!(matches!(
            exact_posterior(&x, 3, &[0.9, 0.9, 0.9, 0.02], &PriorConfig::default()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn predictive_lies_in_the_reliability_hull() {
        let x = BinaryMatrix::from_dense(&[1, 0, 0, 1], 2, 2).unwrap();
        let rel = [0.85, 0.6, 0.05];
        let post = exact_posterior(&x, 2, &rel, &PriorConfig::default()).unwrap();
        for &p in &post.predictive {
            assert!(p >= 0.05 - 1e-15 && p <= 0.85 + 1e-15);
        }
        for &m in post.z_marginals.iter().chain(&post.u_marginals) {
            assert!((0.0..=1.0).contains(&m));
        }
    }

    fn random_tiny_model(seed: u64) -> (HierarchicalModel, BinaryMatrix, HoldoutMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 3) as usize;
        let d = 1 + (seed / 3 % 3) as usize;
        let l = 1 + (seed / 9 % 3) as usize;
        let u = BinaryMatrix::bernoulli(l, d, 0.5, &mut rng);
        let z = BinaryMatrix::bernoulli(n, l, 0.5, &mut rng);
        let mut rel: Vec<f64> = (0..l).map(|_| 0.3 + 0.65 * rng.random::<f64>()).collect();
        rel.push(0.01 + 0.1 * rng.random::<f64>());
        let priors = PriorConfig {
            q_z: 0.4,
            q_u: 0.25,
            ..PriorConfig::default()
        };
        let layer = FactorLayer::from_parts(u, z, rel, priors).unwrap();
        let x = BinaryMatrix::bernoulli(n, d, 0.5, &mut rng);
        let mask = if seed % 4 == 0 && n * d > 1 {
            HoldoutMask::from_cells(n, d, vec![(0, 0)]).unwrap()
        } else {
            HoldoutMask::empty(n, d)
        };
        (HierarchicalModel::single(layer), x, mask)
    }

    #[test]
    fn sampler_conditionals_match_the_exact_oracle() {
        let mut checked = 0usize;
        for seed in 0..150u64 {
            let (model, x, mask) = random_tiny_model(seed);
            let layer = model.layer1();
            let prior_z = logit(layer.priors().q_z);
            let prior_u = logit(layer.priors().q_u);
            for n in 0..layer.n_objects() {
                for l in 0..layer.n_dims() {
                    let fast =
                        sigmoid(conditional_log_odds_z(layer, &x, &mask, n, l, prior_z).unwrap());
                    let exact = exact_conditional(&model, &x, &mask, TargetBit::Z(n, l)).unwrap();
                    assert!(
                        (fast - exact).abs() < 1e-9,
                        "z ({n},{l}) seed {seed}: {fast} vs {exact}"
                    );
                    checked += 1;
                }
            }
            for l in 0..layer.n_dims() {
                for d in 0..layer.n_attributes() {
                    let fast =
                        sigmoid(conditional_log_odds_u(layer, &x, &mask, l, d, prior_u).unwrap());
                    let exact = exact_conditional(&model, &x, &mask, TargetBit::U(l, d)).unwrap();
                    assert!(
                        (fast - exact).abs() < 1e-9,
                        "u ({l},{d}) seed {seed}: {fast} vs {exact}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 500, "only {checked} conditionals checked");
    }

    #[test]
    fn hierarchical_conditionals_match_the_two_layer_oracle() {
        for seed in 0..60u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 5);
            let n = 2 + (seed % 2) as usize;
            let d = 2;
            let l = 2;
            let t = 1 + (seed % 3).min(1) as usize + (seed % 3 == 2) as usize;
            let layer1 = FactorLayer::new(n, d, l, PriorConfig::default()).unwrap();
            let type_of: Vec<usize> = (0..n).map(|i| i % t).collect();
            let types = TypeClamp::new(type_of, t).unwrap();
            let mut model =
                HierarchicalModel::with_types(layer1, types, PriorConfig::default()).unwrap();
            model.layer1_mut().randomize_unclamped(&mut rng);
            model.layer2_mut().unwrap().randomize_unclamped(&mut rng);
            for (ix, r) in [(0usize, 0.9f64), (1, 0.8)] {
                if ix < l {
                    model.layer1_mut().set_reliability(ix, r);
                }
            }
            let x = BinaryMatrix::bernoulli(n, d, 0.5, &mut rng);
            let mask = HoldoutMask::empty(n, d);
            for i in 0..n {
                for j in 0..l {
                    let fast = sigmoid(model.conditional_log_odds_z(&x, &mask, i, j).unwrap());
                    let exact =
                        exact_conditional(&model, &x, &mask, TargetBit::Z(i, j)).unwrap();
                    assert!(
                        (fast - exact).abs() < 1e-9,
                        "hier z ({i},{j}) seed {seed}: {fast} vs {exact}"
                    );
                }
            }
            // V conditionals via the second layer treated as a flat layer
            // whose data is layer1's Z.
            let layer2 = model.layer2().unwrap();
            let prior_v = logit(layer2.priors().q_u);
            let all = HoldoutMask::empty(layer2.n_objects(), layer2.n_attributes());
            for tt in 0..layer2.n_dims() {
                for j in 0..layer2.n_attributes() {
                    let fast = sigmoid(
                        conditional_log_odds_u(layer2, model.layer1().z(), &all, tt, j, prior_v)
                            .unwrap(),
                    );
                    let exact =
                        exact_conditional(&model, &x, &mask, TargetBit::V(tt, j)).unwrap();
                    assert!(
                        (fast - exact).abs() < 1e-9,
                        "hier v ({tt},{j}) seed {seed}: {fast} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn conditional_oracle_reports_missing_layer_and_bounds() {
        let (model, x, mask) = random_tiny_model(1);
        assert!(matches!(
            exact_conditional(&model, &x, &mask, TargetBit::V(0, 0)),
            Err(Error::State(_))
        ));
        assert!(matches!(
            exact_conditional(&model, &x, &mask, TargetBit::Z(99, 0)),
            Err(Error::Bounds(_))
        ));
    }

    proptest! {
        #[test]
        fn exact_posterior_is_permutation_equivariant(seed in 0u64..150) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2usize;
            let d = 2usize;
            let x = BinaryMatrix::bernoulli(n, d, 0.5, &mut rng);
            let r0 = 0.3 + 0.6 * rng.random::<f64>();
            let r1 = 0.3 + 0.6 * rng.random::<f64>();
            let floor = 0.05;
            let priors = PriorConfig { q_z: 0.35, q_u: 0.2, ..PriorConfig::default() };
            let a = exact_posterior(&x, 2, &[r0, r1, floor], &priors).unwrap();
            let b = exact_posterior(&x, 2, &[r1, r0, floor], &priors).unwrap();
            // Swapping the two dimensions' reliabilities swaps their
            // marginal columns/rows.
            for i in 0..n {
                prop_assert!((a.z_marginals[i * 2] - b.z_marginals[i * 2 + 1]).abs() < 1e-12);
                prop_assert!((a.z_marginals[i * 2 + 1] - b.z_marginals[i * 2]).abs() < 1e-12);
            }
            for j in 0..d {
                prop_assert!((a.u_marginals[j] - b.u_marginals[d + j]).abs() < 1e-12);
                prop_assert!((a.u_marginals[d + j] - b.u_marginals[j]).abs() < 1e-12);
            }
            for k in 0..n * d {
                prop_assert!((a.predictive[k] - b.predictive[k]).abs() < 1e-12);
            }
        }
    }
}
