//! The max-competition likelihood layer.
//!
//! A layer explains a binary N×D matrix X through L binary latent dimensions:
//! `Z` (N×L) assigns dimensions to objects, `U` (L×D) assigns attributes to
//! dimensions, and each dimension carries a reliability in (0,1). A cell's
//! probability of being 1 is the maximum reliability over its *active*
//! dimensions (those with `z_nl = u_ld = 1`). An implicit always-active
//! clamped dimension with reliability index L (the noise floor) keeps the
//! active set non-empty; it is never stored in `U` or `Z`.
//!
//! The dimension achieving the max is the cell's *winner*: ties go to the
//! lowest explicit index, and the clamped dimension loses every tie.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binmat::{bit_at, BinaryMatrix};
use crate::error::{Error, Result};
use crate::eval::HoldoutMask;
use crate::sampler::PosteriorTrace;

/// Reliabilities are clipped to `[RELIABILITY_EPS, 1 - RELIABILITY_EPS]`
/// so log-likelihoods and Gibbs odds stay finite.
pub const RELIABILITY_EPS: f64 = 1e-6;

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; requires `p` strictly inside (0,1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn clip_reliability(p: f64) -> f64 {
    p.clamp(RELIABILITY_EPS, 1.0 - RELIABILITY_EPS)
}

/// Mode of the Beta(a + c, b + t − c) posterior over a reliability, given `c`
/// ones among `t` attributed cells under a Beta(a, b) prior.
///
/// Falls back to the posterior mean `(a + c) / (a + b + t)` when the mode is
/// undefined (`a + c < 1` or `a + b + t ≤ 2`); the result is clipped to
/// `[RELIABILITY_EPS, 1 - RELIABILITY_EPS]`.
pub fn beta_map_estimate(a: f64, b: f64, c: f64, t: f64) -> f64 {
    let estimate = if a + c >= 1.0 && a + b + t > 2.0 {
        (a + c - 1.0) / (a + b + t - 2.0)
    } else {
        (a + c) / (a + b + t)
    };
    clip_reliability(estimate)
}

/// Prior hyperparameters of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Bernoulli density of U entries; equivalently a binomial prior on the
    /// cardinality of each U row (uniform over equal-cardinality rows).
    pub q_u: f64,
    /// Bernoulli prior on Z entries when no layer above provides one.
    pub q_z: f64,
    /// Beta prior on each explicit dimension's reliability.
    pub beta_a: f64,
    pub beta_b: f64,
    /// Separate beta prior for the clamped dimension (the noise floor).
    pub beta_a_clamp: f64,
    pub beta_b_clamp: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            q_u: 0.1,
            q_z: 0.5,
            beta_a: 10.0,
            beta_b: 1.0,
            beta_a_clamp: 1.0,
            beta_b_clamp: 1.0,
        }
    }
}

impl PriorConfig {
    /// Checks every field is in its legal range.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("q_u", self.q_u), ("q_z", self.q_z)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!(
                    "{name} must lie strictly inside (0,1), got {p}"
                )));
            }
        }
        for (name, v) in [
            ("beta_a", self.beta_a),
            ("beta_b", self.beta_b),
            ("beta_a_clamp", self.beta_a_clamp),
            ("beta_b_clamp", self.beta_b_clamp),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Prior-mode reliability for an explicit dimension (no data yet).
    pub(crate) fn prior_mode(&self) -> f64 {
        beta_map_estimate(self.beta_a, self.beta_b, 0.0, 0.0)
    }

    /// Prior-mode reliability for the clamped dimension.
    pub(crate) fn prior_mode_clamp(&self) -> f64 {
        beta_map_estimate(self.beta_a_clamp, self.beta_b_clamp, 0.0, 0.0)
    }
}

/// One factorization layer with clamping support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorLayer {
    u: BinaryMatrix,
    z: BinaryMatrix,
    /// L+1 entries; index L is the clamped dimension (noise floor).
    reliabilities: Vec<f64>,
    clamp_u: BinaryMatrix,
    clamp_z: BinaryMatrix,
    priors: PriorConfig,
}

impl FactorLayer {
    /// All-zeros layer with reliabilities at their prior modes.
    pub fn new(
        n_objects: usize,
        n_attributes: usize,
        n_dims: usize,
        priors: PriorConfig,
    ) -> Result<Self> {
        priors.validate()?;
        let mut reliabilities = vec![priors.prior_mode(); n_dims];
        reliabilities.push(priors.prior_mode_clamp());
        Ok(FactorLayer {
            u: BinaryMatrix::zeros(n_dims, n_attributes),
            z: BinaryMatrix::zeros(n_objects, n_dims),
            reliabilities,
            clamp_u: BinaryMatrix::zeros(n_dims, n_attributes),
            clamp_z: BinaryMatrix::zeros(n_objects, n_dims),
            priors,
        })
    }

    /// Layer with U and Z drawn iid Bernoulli(0.5).
    pub fn random_init(
        n_objects: usize,
        n_attributes: usize,
        n_dims: usize,
        priors: PriorConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layer = FactorLayer::new(n_objects, n_attributes, n_dims, priors)?;
        layer.randomize_unclamped(rng);
        Ok(layer)
    }

    /// Assembles a layer from explicit factors and reliabilities.
    ///
    /// `reliabilities` must have `u.rows() + 1` entries in [0,1]; they are
    /// clipped into the open interval on the way in.
    pub fn from_parts(
        u: BinaryMatrix,
        z: BinaryMatrix,
        reliabilities: Vec<f64>,
        priors: PriorConfig,
    ) -> Result<Self> {
        priors.validate()?;
        if z.cols() != u.rows() {
            return Err(Error::Shape(format!(
                "assignment matrix has {} dimensions but code matrix has {}",
                z.cols(),
                u.rows()
            )));
        }
        if reliabilities.len() != u.rows() + 1 {
            return Err(Error::Shape(format!(
                "expected {} reliabilities (dims + clamped), got {}",
                u.rows() + 1,
                reliabilities.len()
            )));
        }
        if let Some(bad) = reliabilities.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!(
                "reliability {bad} outside [0,1]"
            )));
        }
        let clamp_u = BinaryMatrix::zeros(u.rows(), u.cols());
        let clamp_z = BinaryMatrix::zeros(z.rows(), z.cols());
        Ok(FactorLayer {
            clamp_u,
            clamp_z,
            reliabilities: reliabilities.into_iter().map(clip_reliability).collect(),
            u,
            z,
            priors,
        })
    }

    /// Redraws every unclamped U and Z entry as Bernoulli(0.5), U first,
    /// both row-major.
    pub fn randomize_unclamped(&mut self, rng: &mut impl Rng) {
        for l in 0..self.u.rows() {
            for d in 0..self.u.cols() {
                if !self.clamp_u.get(l, d) {
                    self.u.set(l, d, rng.random::<f64>() < 0.5);
                }
            }
        }
        for n in 0..self.z.rows() {
            for l in 0..self.z.cols() {
                if !self.clamp_z.get(n, l) {
                    self.z.set(n, l, rng.random::<f64>() < 0.5);
                }
            }
        }
    }

    /// Resets all reliabilities to their prior modes.
    pub fn reset_reliabilities(&mut self) {
        let l = self.n_dims();
        for r in &mut self.reliabilities[..l] {
            *r = self.priors.prior_mode();
        }
        self.reliabilities[l] = self.priors.prior_mode_clamp();
    }

    #[inline]
    pub fn n_objects(&self) -> usize {
        self.z.rows()
    }

    #[inline]
    pub fn n_attributes(&self) -> usize {
        self.u.cols()
    }

    /// Number of explicit (non-clamped) dimensions.
    #[inline]
    pub fn n_dims(&self) -> usize {
        self.u.rows()
    }

    #[inline]
    pub fn u(&self) -> &BinaryMatrix {
        &self.u
    }

    #[inline]
    pub fn z(&self) -> &BinaryMatrix {
        &self.z
    }

    #[inline]
    pub fn priors(&self) -> &PriorConfig {
        &self.priors
    }

    /// All L+1 reliabilities; the last entry is the noise floor.
    #[inline]
    pub fn reliabilities(&self) -> &[f64] {
        &self.reliabilities
    }

    /// Reliability of dimension `l` (`l = n_dims()` addresses the clamped one).
    #[inline]
    pub fn reliability(&self, l: usize) -> f64 {
        self.reliabilities[l]
    }

    /// The clamped dimension's reliability.
    #[inline]
    pub fn floor(&self) -> f64 {
        self.reliabilities[self.n_dims()]
    }

    /// Sets (and clips) the reliability of dimension `l`.
    pub fn set_reliability(&mut self, l: usize, value: f64) {
        self.reliabilities[l] = clip_reliability(value);
    }

    /// Writes a U entry directly (construction API; does not touch clamps).
    pub fn set_u(&mut self, l: usize, d: usize, value: bool) {
        self.u.set(l, d, value);
    }

    /// Writes a Z entry directly (construction API; does not touch clamps).
    pub fn set_z(&mut self, n: usize, l: usize, value: bool) {
        self.z.set(n, l, value);
    }

    /// Fixes a U entry to `value`; the sampler will never update it.
    pub fn clamp_u(&mut self, l: usize, d: usize, value: bool) {
        self.u.set(l, d, value);
        self.clamp_u.set(l, d, true);
    }

    /// Fixes a Z entry to `value`; the sampler will never update it.
    pub fn clamp_z(&mut self, n: usize, l: usize, value: bool) {
        self.z.set(n, l, value);
        self.clamp_z.set(n, l, true);
    }

    /// Releases a clamped U entry back to the sampler.
    pub fn unclamp_u(&mut self, l: usize, d: usize) {
        self.clamp_u.set(l, d, false);
    }

    /// Releases a clamped Z entry back to the sampler.
    pub fn unclamp_z(&mut self, n: usize, l: usize) {
        self.clamp_z.set(n, l, false);
    }

    #[inline]
    pub fn is_u_clamped(&self, l: usize, d: usize) -> bool {
        self.clamp_u.get(l, d)
    }

    #[inline]
    pub fn is_z_clamped(&self, n: usize, l: usize) -> bool {
        self.clamp_z.get(n, l)
    }

    #[inline]
    pub(crate) fn clamp_u_mask(&self) -> &BinaryMatrix {
        &self.clamp_u
    }

    pub(crate) fn u_mut(&mut self) -> &mut BinaryMatrix {
        &mut self.u
    }

    pub(crate) fn z_mut(&mut self) -> &mut BinaryMatrix {
        &mut self.z
    }

    /// Disjoint borrows for the assignment-resampling phase: mutable
    /// assignments alongside shared codes, clamp mask, and reliabilities.
    pub(crate) fn z_phase_parts(
        &mut self,
    ) -> (&mut BinaryMatrix, &BinaryMatrix, &BinaryMatrix, &[f64]) {
        (&mut self.z, &self.u, &self.clamp_z, &self.reliabilities)
    }

    fn check_cell(&self, n: usize, d: usize) -> Result<()> {
        if n >= self.n_objects() || d >= self.n_attributes() {
            return Err(Error::Bounds(format!(
                "cell ({n}, {d}) outside {}x{}",
                self.n_objects(),
                self.n_attributes()
            )));
        }
        Ok(())
    }

    /// Dimensions competing at cell `(n, d)`: every explicit `l` with
    /// `z_nl = u_ld = 1`, plus the clamped index `n_dims()`. Never empty.
    pub fn active_set(&self, n: usize, d: usize) -> Result<Vec<usize>> {
        self.check_cell(n, d)?;
        let mut active: Vec<usize> = self
            .z
            .row_ones(n)
            .filter(|&l| self.u.get(l, d))
            .collect();
        active.push(self.n_dims());
        Ok(active)
    }

    /// Probability that cell `(n, d)` is a 1: the maximum reliability over
    /// the active set. `p(x_nd = 0)` is its complement.
    pub fn point_prob(&self, n: usize, d: usize) -> Result<f64> {
        self.check_cell(n, d)?;
        let mut m = self.floor();
        for l in self.z.row_ones(n) {
            if self.u.get(l, d) && self.reliabilities[l] > m {
                m = self.reliabilities[l];
            }
        }
        Ok(m)
    }

    /// The dimension responsible for cell `(n, d)`: the active dimension of
    /// maximal reliability, ties to the lowest explicit index; the clamped
    /// dimension loses all ties.
    pub fn winner(&self, n: usize, d: usize) -> Result<usize> {
        self.check_cell(n, d)?;
        let clamped = self.n_dims();
        let mut best_l = clamped;
        let mut best_p = self.floor();
        for l in self.z.row_ones(n) {
            if !self.u.get(l, d) {
                continue;
            }
            let p = self.reliabilities[l];
            if p > best_p || (best_l == clamped && p == best_p) {
                best_p = p;
                best_l = l;
            }
        }
        Ok(best_l)
    }

    /// Sum of log point probabilities at the observed bits over all cells
    /// not excluded by `mask`.
    pub fn log_likelihood(&self, x: &BinaryMatrix, mask: &HoldoutMask) -> Result<f64> {
        if x.rows() != self.n_objects() || x.cols() != self.n_attributes() {
            return Err(Error::Shape(format!(
                "data is {}x{} but layer expects {}x{}",
                x.rows(),
                x.cols(),
                self.n_objects(),
                self.n_attributes()
            )));
        }
        mask.check_shape(x.rows(), x.cols())?;
        let ut = self.u.transpose();
        let floor = self.floor();
        let mut ll = 0.0;
        for n in 0..x.rows() {
            let zrow = self.z.row_words(n);
            let xrow = x.row_words(n);
            for d in 0..x.cols() {
                if mask.is_held(n, d) {
                    continue;
                }
                let m = max_masked(zrow, ut.row_words(d), &self.reliabilities, floor);
                ll += if bit_at(xrow, d) { m.ln() } else { (1.0 - m).ln() };
            }
        }
        Ok(ll)
    }
}

/// Maximum reliability over the dimensions set in both packed rows, at least
/// `floor`. `zrow` and `utrow` index the same dimension space.
#[inline]
pub(crate) fn max_masked(zrow: &[u64], utrow: &[u64], rel: &[f64], floor: f64) -> f64 {
    let mut m = floor;
    for (k, (&a, &b)) in zrow.iter().zip(utrow).enumerate() {
        let mut w = a & b;
        while w != 0 {
            let l = (k << 6) + w.trailing_zeros() as usize;
            if rel[l] > m {
                m = rel[l];
            }
            w &= w - 1;
        }
    }
    m
}

/// Like [`max_masked`] but ignoring dimension `skip`.
#[inline]
pub(crate) fn max_masked_excluding(
    zrow: &[u64],
    utrow: &[u64],
    rel: &[f64],
    floor: f64,
    skip: usize,
) -> f64 {
    let mut m = floor;
    for (k, (&a, &b)) in zrow.iter().zip(utrow).enumerate() {
        let mut w = a & b;
        while w != 0 {
            let l = (k << 6) + w.trailing_zeros() as usize;
            if l != skip && rel[l] > m {
                m = rel[l];
            }
            w &= w - 1;
        }
    }
    m
}

/// Winner over packed rows; `rel` has the clamped entry last.
#[inline]
pub(crate) fn winner_masked(zrow: &[u64], utrow: &[u64], rel: &[f64]) -> usize {
    let clamped = rel.len() - 1;
    let mut best_l = clamped;
    let mut best_p = rel[clamped];
    for (k, (&a, &b)) in zrow.iter().zip(utrow).enumerate() {
        let mut w = a & b;
        while w != 0 {
            let l = (k << 6) + w.trailing_zeros() as usize;
            let p = rel[l];
            if p > best_p || (best_l == clamped && p == best_p) {
                best_p = p;
                best_l = l;
            }
            w &= w - 1;
        }
    }
    best_l
}

/// Parameters of the disjunction-likelihood variant (single global noise).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmfConfig {
    pub lambda_global: f64,
}

impl BmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_global >= 0.0 && self.lambda_global.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_global must be a nonnegative finite real, got {}",
                self.lambda_global
            )));
        }
        Ok(())
    }
}

/// Disjunction-variant cell probability: with `a` the Boolean OR over
/// dimensions of `z_nl * u_ld`, returns `sigmoid(lambda * (2x-1) * (2a-1))`.
pub fn or_point_prob(
    cfg: &BmfConfig,
    z: &BinaryMatrix,
    u: &BinaryMatrix,
    n: usize,
    d: usize,
    x: bool,
) -> Result<f64> {
    cfg.validate()?;
    if z.cols() != u.rows() {
        return Err(Error::Shape(format!(
            "assignment matrix has {} dimensions but code matrix has {}",
            z.cols(),
            u.rows()
        )));
    }
    if n >= z.rows() || d >= u.cols() {
        return Err(Error::Bounds(format!(
            "cell ({n}, {d}) outside {}x{}",
            z.rows(),
            u.cols()
        )));
    }
    let a = z.row_ones(n).any(|l| u.get(l, d));
    let x_sign = if x { 1.0 } else { -1.0 };
    let a_sign = if a { 1.0 } else { -1.0 };
    Ok(sigmoid(cfg.lambda_global * x_sign * a_sign))
}

/// Posterior summary of one latent dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    /// Share of observed ones whose winner is this dimension, averaged over
    /// posterior samples; zero when the data contains no ones.
    pub nu: f64,
    /// Posterior-averaged reliability.
    pub lambda_hat: f64,
    /// Ones in the dimension's U row, averaged over samples and rounded;
    /// the clamped dimension's implicit all-ones row counts every attribute.
    pub cardinality: usize,
}

fn check_trace(trace: &PosteriorTrace) -> Result<()> {
    if trace.samples.is_empty() {
        return Err(Error::State(
            "posterior trace holds no retained samples".into(),
        ));
    }
    let (n, l, d) = {
        let s = &trace.samples[0];
        (s.z.rows(), s.u.rows(), s.u.cols())
    };
    for s in &trace.samples {
        if s.z.rows() != n
            || s.z.cols() != l
            || s.u.rows() != l
            || s.u.cols() != d
            || s.reliabilities.len() != l + 1
        {
            return Err(Error::State(
                "posterior trace mixes samples of different shapes".into(),
            ));
        }
    }
    Ok(())
}

/// Monte Carlo posterior predictive: per cell, the mean over retained
/// samples of that sample's point probability of a 1.
pub fn posterior_predictive(trace: &PosteriorTrace, cells: &[(usize, usize)]) -> Result<Vec<f64>> {
    check_trace(trace)?;
    let n_obj = trace.samples[0].z.rows();
    let n_attr = trace.samples[0].u.cols();
    for &(n, d) in cells {
        if n >= n_obj || d >= n_attr {
            return Err(Error::Bounds(format!(
                "cell ({n}, {d}) outside {n_obj}x{n_attr}"
            )));
        }
    }
    let mut acc = vec![0.0f64; cells.len()];
    for sample in &trace.samples {
        let ut = sample.u.transpose();
        let floor = sample.reliabilities[sample.u.rows()];
        for (slot, &(n, d)) in acc.iter_mut().zip(cells) {
            *slot += max_masked(
                sample.z.row_words(n),
                ut.row_words(d),
                &sample.reliabilities,
                floor,
            );
        }
    }
    let s = trace.samples.len() as f64;
    for slot in &mut acc {
        *slot /= s;
    }
    Ok(acc)
}

/// Per-dimension posterior summaries over a trace: every observed 1 in `x`
/// is attributed to its winner per sample, then averaged.
pub fn dimension_stats(trace: &PosteriorTrace, x: &BinaryMatrix) -> Result<Vec<DimensionStats>> {
    check_trace(trace)?;
    let n_obj = trace.samples[0].z.rows();
    let n_dims = trace.samples[0].u.rows();
    let n_attr = trace.samples[0].u.cols();
    if x.rows() != n_obj || x.cols() != n_attr {
        return Err(Error::Shape(format!(
            "data is {}x{} but trace samples expect {n_obj}x{n_attr}",
            x.rows(),
            x.cols()
        )));
    }
    let total_ones = x.count_ones();
    let s = trace.samples.len() as f64;
    let mut nu = vec![0.0f64; n_dims + 1];
    let mut lambda_hat = vec![0.0f64; n_dims + 1];
    let mut cardinality = vec![0.0f64; n_dims + 1];
    for sample in &trace.samples {
        let ut = sample.u.transpose();
        if total_ones > 0 {
            let mut won = vec![0u64; n_dims + 1];
            for n in 0..n_obj {
                let zrow = sample.z.row_words(n);
                for d in x.row_ones(n) {
                    won[winner_masked(zrow, ut.row_words(d), &sample.reliabilities)] += 1;
                }
            }
            for (slot, w) in nu.iter_mut().zip(&won) {
                *slot += *w as f64 / total_ones as f64;
            }
        }
        for l in 0..n_dims {
            lambda_hat[l] += sample.reliabilities[l];
            cardinality[l] += f64::from(sample.u.row_count_ones(l));
        }
        lambda_hat[n_dims] += sample.reliabilities[n_dims];
        cardinality[n_dims] += n_attr as f64;
    }
    Ok((0..=n_dims)
        .map(|l| DimensionStats {
            nu: nu[l] / s,
            lambda_hat: lambda_hat[l] / s,
            cardinality: (cardinality[l] / s).round() as usize,
        })
        .collect())
}
