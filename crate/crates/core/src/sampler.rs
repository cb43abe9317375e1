//! Gibbs sampling with exact full conditionals, analytic per-sweep MAP
//! reliability updates, burn-in/convergence control, and trace collection.
//!
//! The max-competition structure makes conditionals cheap: flipping `z_nl`
//! changes a cell's likelihood only where dimension `l` would win, i.e. where
//! its reliability exceeds the best reliability `m` among the other active
//! dimensions. Each cell's contribution to the log-odds is
//! `x·ln(q1/q0) + (1−x)·ln((1−q1)/(1−q0))` with `q0 = m`, `q1 = max(m, p_l)`,
//! which vanishes whenever `p_l ≤ m` — the pruning exploited by the inner
//! loops below.
//!
//! Determinism contract: with `parallel = false` and a fixed seed, runs are
//! bit-reproducible. Parallel mode is also reproducible (independent of
//! thread count) via per-task seeded substreams keyed by sweep, phase, and
//! row, but its random stream differs from sequential mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::binmat::{assign_bit, bit_at, BinaryMatrix};
use crate::error::{Error, Result};
use crate::eval::HoldoutMask;
use crate::model::{
    beta_map_estimate, logit, max_masked, max_masked_excluding, sigmoid, winner_masked,
    FactorLayer,
};

/// Burn-in policy: a fixed sweep count, or adaptive (sampling starts at
/// convergence, or early enough that the sample budget still fits).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BurnIn {
    Adaptive,
    Fixed(usize),
}

impl Serialize for BurnIn {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BurnIn::Adaptive => serializer.serialize_str("adaptive"),
            BurnIn::Fixed(k) => serializer.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BurnIn {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = BurnIn;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("\"adaptive\" or a nonnegative sweep count")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<BurnIn, E> {
                if v == "adaptive" {
                    Ok(BurnIn::Adaptive)
                } else {
                    Err(E::custom(format!(
                        "burn_in must be \"adaptive\" or an integer, got {v:?}"
                    )))
                }
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<BurnIn, E> {
                Ok(BurnIn::Fixed(v as usize))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<BurnIn, E> {
                if v < 0 {
                    Err(E::custom("burn_in must be nonnegative"))
                } else {
                    Ok(BurnIn::Fixed(v as usize))
                }
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// Sampler schedule and reproducibility settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub max_sweeps: usize,
    pub burn_in: BurnIn,
    /// Post-burn-in snapshots to retain.
    pub n_samples: usize,
    /// Keep every k-th post-burn-in sweep.
    pub sample_stride: usize,
    pub seed: u64,
    /// Convergence: relative change of the train log-likelihood must stay
    /// below this for `convergence_window` consecutive sweeps.
    pub convergence_eps: f64,
    pub convergence_window: usize,
    pub parallel: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            max_sweeps: 500,
            burn_in: BurnIn::Adaptive,
            n_samples: 25,
            sample_stride: 2,
            seed: 0,
            convergence_eps: 1e-4,
            convergence_window: 10,
            parallel: false,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if self.convergence_window < 2 {
            return Err(Error::Config("convergence_window must be at least 2".into()));
        }
        if self.sample_stride < 1 {
            return Err(Error::Config("sample_stride must be at least 1".into()));
        }
        if !(self.convergence_eps > 0.0 && self.convergence_eps.is_finite()) {
            return Err(Error::Config(format!(
                "convergence_eps must be positive and finite, got {}",
                self.convergence_eps
            )));
        }
        Ok(())
    }
}

/// One retained posterior snapshot. `v` and `reliabilities2` are present
/// only for hierarchical runs (second-layer codes and reliabilities).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub u: BinaryMatrix,
    pub z: BinaryMatrix,
    pub reliabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<BinaryMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliabilities2: Option<Vec<f64>>,
}

/// Output of a sampling run.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTrace {
    pub samples: Vec<TraceSample>,
    /// Train log-likelihood after each sweep's reliability update.
    pub train_ll_history: Vec<f64>,
    pub sweep_count: usize,
    pub converged: bool,
}

/// Likelihood log-odds contribution of one cell for a candidate dimension of
/// reliability `p_l`, given the best other active reliability `m`.
#[inline]
pub(crate) fn winner_term(p_l: f64, m: f64, x: bool) -> f64 {
    if p_l <= m {
        0.0
    } else if x {
        (p_l / m).ln()
    } else {
        ((1.0 - p_l) / (1.0 - m)).ln()
    }
}

fn check_shapes(layer: &FactorLayer, x: &BinaryMatrix, mask: &HoldoutMask) -> Result<()> {
    if x.rows() != layer.n_objects() || x.cols() != layer.n_attributes() {
        return Err(Error::Shape(format!(
            "data is {}x{} but layer expects {}x{}",
            x.rows(),
            x.cols(),
            layer.n_objects(),
            layer.n_attributes()
        )));
    }
    mask.check_shape(x.rows(), x.cols())
}

/// Exact full-conditional log-odds of `z_nl = 1` given everything else.
///
/// `prior_logit` is the log-odds of the Bernoulli prior on this entry —
/// `logit(q_z)` for a flat first layer, or the layer-above likelihood term
/// for hierarchical models. `sigmoid` of the result is the Gibbs probability.
pub fn conditional_log_odds_z(
    layer: &FactorLayer,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
    n: usize,
    l: usize,
    prior_logit: f64,
) -> Result<f64> {
    check_shapes(layer, x, mask)?;
    if n >= layer.n_objects() || l >= layer.n_dims() {
        return Err(Error::Bounds(format!(
            "entry ({n}, {l}) outside {}x{} assignments",
            layer.n_objects(),
            layer.n_dims()
        )));
    }
    if layer.is_z_clamped(n, l) {
        return Err(Error::Clamp(format!(
            "assignment entry ({n}, {l}) is clamped"
        )));
    }
    let rel = layer.reliabilities();
    let floor = layer.floor();
    let p_l = rel[l];
    let xrow = x.row_words(n);
    let mut lo = prior_logit;
    for d in layer.u().row_ones(l) {
        if mask.is_held(n, d) {
            continue;
        }
        let mut m = floor;
        for l2 in layer.z().row_ones(n) {
            if l2 != l && layer.u().get(l2, d) && rel[l2] > m {
                m = rel[l2];
            }
        }
        lo += winner_term(p_l, m, bit_at(xrow, d));
    }
    Ok(lo)
}

/// Exact full-conditional log-odds of `u_ld = 1`; mirror of
/// [`conditional_log_odds_z`] with the sum over objects assigned dimension
/// `l`. The natural `prior_logit` is `logit(q_u)`.
pub fn conditional_log_odds_u(
    layer: &FactorLayer,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
    l: usize,
    d: usize,
    prior_logit: f64,
) -> Result<f64> {
    check_shapes(layer, x, mask)?;
    if l >= layer.n_dims() || d >= layer.n_attributes() {
        return Err(Error::Bounds(format!(
            "entry ({l}, {d}) outside {}x{} codes",
            layer.n_dims(),
            layer.n_attributes()
        )));
    }
    if layer.is_u_clamped(l, d) {
        return Err(Error::Clamp(format!("code entry ({l}, {d}) is clamped")));
    }
    let rel = layer.reliabilities();
    let floor = layer.floor();
    let p_l = rel[l];
    let mut lo = prior_logit;
    for n in 0..layer.n_objects() {
        if !layer.z().get(n, l) || mask.is_held(n, d) {
            continue;
        }
        let mut m = floor;
        for l2 in layer.z().row_ones(n) {
            if l2 != l && layer.u().get(l2, d) && rel[l2] > m {
                m = rel[l2];
            }
        }
        lo += winner_term(p_l, m, x.get(n, d));
    }
    Ok(lo)
}

/// Per-entry Bernoulli prior on Z during a sweep: flat, or a per-(type, dim)
/// logit table supplied by the layer above.
pub(crate) enum ZPrior<'a> {
    Flat(f64),
    Table {
        logits: &'a [f64],
        n_dims: usize,
        type_of: &'a [usize],
    },
}

impl ZPrior<'_> {
    #[inline]
    fn logit_for(&self, n: usize, l: usize) -> f64 {
        match self {
            ZPrior::Flat(v) => *v,
            ZPrior::Table {
                logits,
                n_dims,
                type_of,
            } => logits[type_of[n] * n_dims + l],
        }
    }
}

/// Mixes a per-task seed from the base seed and task coordinates
/// (splitmix64 finalization over the combined words).
#[inline]
pub(crate) fn substream_seed(base: u64, sweep: u64, phase: u64, idx: u64) -> u64 {
    let mut s = base
        .wrapping_add(sweep.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(phase.wrapping_mul(0xBF58476D1CE4E5B9))
        .wrapping_add(idx.wrapping_mul(0x94D049BB133111EB));
    s ^= s >> 30;
    s = s.wrapping_mul(0xBF58476D1CE4E5B9);
    s ^= s >> 27;
    s = s.wrapping_mul(0x94D049BB133111EB);
    s ^= s >> 31;
    s
}

pub(crate) const PHASE_Z: u64 = 1;
pub(crate) const PHASE_U: u64 = 2;
pub(crate) const PHASE_V: u64 = 3;

/// Resamples all unclamped Z entries row-major, reading codes through the
/// transposed view `ut` (D×L, kept in sync by the caller).
pub(crate) fn sweep_z_sequential(
    layer: &mut FactorLayer,
    x: &BinaryMatrix,
    obs: &BinaryMatrix,
    ut: &BinaryMatrix,
    prior: &ZPrior,
    rng: &mut ChaCha8Rng,
) {
    let n_dims = layer.n_dims();
    if n_dims == 0 {
        return;
    }
    let rel = layer.reliabilities().to_vec();
    let floor = rel[n_dims];
    for n in 0..layer.n_objects() {
        for l in 0..n_dims {
            if layer.is_z_clamped(n, l) {
                continue;
            }
            let p_l = rel[l];
            let mut lo = prior.logit_for(n, l);
            {
                let zrow = layer.z().row_words(n);
                let xrow = x.row_words(n);
                let urow = layer.u().row_words(l);
                let orow = obs.row_words(n);
                for (k, (&uw, &ow)) in urow.iter().zip(orow).enumerate() {
                    let mut w = uw & ow;
                    while w != 0 {
                        let d = (k << 6) + w.trailing_zeros() as usize;
                        let m = max_masked_excluding(zrow, ut.row_words(d), &rel, floor, l);
                        lo += winner_term(p_l, m, bit_at(xrow, d));
                        w &= w - 1;
                    }
                }
            }
            let bit = rng.random::<f64>() < sigmoid(lo);
            layer.z_mut().set(n, l, bit);
        }
    }
}

/// Parallel variant of the Z phase: rows are conditionally independent given
/// U and the reliabilities, so they are resampled concurrently, each from its
/// own seeded substream.
pub(crate) fn sweep_z_parallel(
    layer: &mut FactorLayer,
    x: &BinaryMatrix,
    obs: &BinaryMatrix,
    ut: &BinaryMatrix,
    prior: &ZPrior,
    base_seed: u64,
    sweep_idx: u64,
) {
    let n_dims = layer.n_dims();
    if n_dims == 0 {
        return;
    }
    let (z, u, clamp_z, rel) = layer.z_phase_parts();
    let rel = rel.to_vec();
    let floor = rel[n_dims];
    let wpr = z.words_per_row();
    z.words_mut()
        .par_chunks_mut(wpr)
        .enumerate()
        .for_each(|(n, zrow)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(substream_seed(base_seed, sweep_idx, PHASE_Z, n as u64));
            let xrow = x.row_words(n);
            let orow = obs.row_words(n);
            let crow = clamp_z.row_words(n);
            for l in 0..n_dims {
                if bit_at(crow, l) {
                    continue;
                }
                let p_l = rel[l];
                let mut lo = prior.logit_for(n, l);
                let urow = u.row_words(l);
                for (k, (&uw, &ow)) in urow.iter().zip(orow).enumerate() {
                    let mut w = uw & ow;
                    while w != 0 {
                        let d = (k << 6) + w.trailing_zeros() as usize;
                        let m = max_masked_excluding(zrow, ut.row_words(d), &rel, floor, l);
                        lo += winner_term(p_l, m, bit_at(xrow, d));
                        w &= w - 1;
                    }
                }
                assign_bit(zrow, l, rng.random::<f64>() < sigmoid(lo));
            }
        });
}

/// Resamples all unclamped U entries row-major. `zt` is the L×N transpose of
/// the current assignments; `xt`/`obst` are D×N transposes of the data and
/// observation masks. Keeps `ut` synchronized with the codes.
pub(crate) fn sweep_u_sequential(
    layer: &mut FactorLayer,
    xt: &BinaryMatrix,
    obst: &BinaryMatrix,
    zt: &BinaryMatrix,
    ut: &mut BinaryMatrix,
    rng: &mut ChaCha8Rng,
) {
    let n_dims = layer.n_dims();
    if n_dims == 0 {
        return;
    }
    let rel = layer.reliabilities().to_vec();
    let floor = rel[n_dims];
    let prior_logit = logit(layer.priors().q_u);
    for l in 0..n_dims {
        let p_l = rel[l];
        for d in 0..layer.n_attributes() {
            if layer.is_u_clamped(l, d) {
                continue;
            }
            let mut lo = prior_logit;
            {
                let ztrow = zt.row_words(l);
                let otrow = obst.row_words(d);
                let xtrow = xt.row_words(d);
                let utrow = ut.row_words(d);
                for (k, (&zw, &ow)) in ztrow.iter().zip(otrow).enumerate() {
                    let mut w = zw & ow;
                    while w != 0 {
                        let n = (k << 6) + w.trailing_zeros() as usize;
                        let m = max_masked_excluding(
                            layer.z().row_words(n),
                            utrow,
                            &rel,
                            floor,
                            l,
                        );
                        lo += winner_term(p_l, m, bit_at(xtrow, n));
                        w &= w - 1;
                    }
                }
            }
            let bit = rng.random::<f64>() < sigmoid(lo);
            layer.u_mut().set(l, d, bit);
            ut.set(d, l, bit);
        }
    }
}

/// Parallel variant of the U phase: within one dimension `l`, the entries
/// `u_ld` are conditionally independent across `d` (a cell (n,d) involves
/// `ut` row `d` only), so each dimension's row is resampled concurrently and
/// applied afterwards; dimensions proceed sequentially.
pub(crate) fn sweep_u_parallel(
    layer: &mut FactorLayer,
    xt: &BinaryMatrix,
    obst: &BinaryMatrix,
    zt: &BinaryMatrix,
    ut: &mut BinaryMatrix,
    base_seed: u64,
    sweep_idx: u64,
    phase: u64,
) {
    let n_dims = layer.n_dims();
    if n_dims == 0 {
        return;
    }
    let rel = layer.reliabilities().to_vec();
    let floor = rel[n_dims];
    let prior_logit = logit(layer.priors().q_u);
    let n_attr = layer.n_attributes();
    for l in 0..n_dims {
        let p_l = rel[l];
        let new_bits: Vec<Option<bool>> = {
            let z = layer.z();
            let clamp_u = layer.clamp_u_mask();
            let ut_ref = &*ut;
            (0..n_attr)
                .into_par_iter()
                .map(|d| {
                    if clamp_u.get(l, d) {
                        return None;
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(
                        base_seed,
                        sweep_idx,
                        phase,
                        (l * n_attr + d) as u64,
                    ));
                    let mut lo = prior_logit;
                    let ztrow = zt.row_words(l);
                    let otrow = obst.row_words(d);
                    let xtrow = xt.row_words(d);
                    let utrow = ut_ref.row_words(d);
                    for (k, (&zw, &ow)) in ztrow.iter().zip(otrow).enumerate() {
                        let mut w = zw & ow;
                        while w != 0 {
                            let n = (k << 6) + w.trailing_zeros() as usize;
                            let m =
                                max_masked_excluding(z.row_words(n), utrow, &rel, floor, l);
                            lo += winner_term(p_l, m, bit_at(xtrow, n));
                            w &= w - 1;
                        }
                    }
                    Some(rng.random::<f64>() < sigmoid(lo))
                })
                .collect()
        };
        for (d, bit) in new_bits.into_iter().enumerate() {
            if let Some(b) = bit {
                layer.u_mut().set(l, d, b);
                ut.set(d, l, b);
            }
        }
    }
}

/// One full sequential sweep: all unclamped Z entries (row-major, flat
/// prior `logit(q_z)`), then all unclamped U entries (row-major, prior
/// `logit(q_u)`). Reliabilities are not touched.
pub fn sweep(
    layer: &mut FactorLayer,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_shapes(layer, x, mask)?;
    let obs = mask.observed_matrix();
    let obst = obs.transpose();
    let xt = x.transpose();
    let mut ut = layer.u().transpose();
    let prior = ZPrior::Flat(logit(layer.priors().q_z));
    sweep_z_sequential(layer, x, &obs, &ut, &prior, rng);
    let zt = layer.z().transpose();
    sweep_u_sequential(layer, &xt, &obst, &zt, &mut ut, rng);
    Ok(())
}

/// Counts, per dimension (clamped last), the observed cells won under the
/// current reliabilities (`t`) and how many of those are ones (`c`).
pub(crate) fn winner_counts(
    layer: &FactorLayer,
    x: &BinaryMatrix,
    obs: &BinaryMatrix,
    ut: &BinaryMatrix,
) -> (Vec<f64>, Vec<f64>) {
    let n_dims = layer.n_dims();
    let rel = layer.reliabilities();
    let mut t = vec![0.0f64; n_dims + 1];
    let mut c = vec![0.0f64; n_dims + 1];
    for n in 0..layer.n_objects() {
        let zrow = layer.z().row_words(n);
        let xrow = x.row_words(n);
        let orow = obs.row_words(n);
        for d in 0..layer.n_attributes() {
            if !bit_at(orow, d) {
                continue;
            }
            let w = winner_masked(zrow, ut.row_words(d), rel);
            t[w] += 1.0;
            if bit_at(xrow, d) {
                c[w] += 1.0;
            }
        }
    }
    (c, t)
}

pub(crate) fn apply_reliability_map(layer: &mut FactorLayer, c: &[f64], t: &[f64]) {
    let priors = *layer.priors();
    let n_dims = layer.n_dims();
    for l in 0..n_dims {
        layer.set_reliability(l, beta_map_estimate(priors.beta_a, priors.beta_b, c[l], t[l]));
    }
    layer.set_reliability(
        n_dims,
        beta_map_estimate(
            priors.beta_a_clamp,
            priors.beta_b_clamp,
            c[n_dims],
            t[n_dims],
        ),
    );
}

/// Analytic MAP update of all reliabilities (clamped dimension included):
/// each observed cell is attributed to its winner under the PRE-update
/// reliabilities, then every dimension's reliability moves to the mode of
/// its Beta posterior simultaneously (see [`beta_map_estimate`]).
pub fn update_reliabilities_map(
    layer: &mut FactorLayer,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
) -> Result<()> {
    check_shapes(layer, x, mask)?;
    let ut = layer.u().transpose();
    let obs = mask.observed_matrix();
    let (c, t) = winner_counts(layer, x, &obs, &ut);
    apply_reliability_map(layer, &c, &t);
    Ok(())
}

/// Train log-likelihood over observed cells, reusing the transposed codes.
/// Matches `FactorLayer::log_likelihood` exactly.
pub(crate) fn train_ll(
    layer: &FactorLayer,
    x: &BinaryMatrix,
    obs: &BinaryMatrix,
    ut: &BinaryMatrix,
) -> f64 {
    let rel = layer.reliabilities();
    let floor = layer.floor();
    let mut ll = 0.0;
    for n in 0..layer.n_objects() {
        let zrow = layer.z().row_words(n);
        let xrow = x.row_words(n);
        let orow = obs.row_words(n);
        for d in 0..layer.n_attributes() {
            if !bit_at(orow, d) {
                continue;
            }
            let m = max_masked(zrow, ut.row_words(d), rel, floor);
            ll += if bit_at(xrow, d) { m.ln() } else { (1.0 - m).ln() };
        }
    }
    ll
}

/// Burn-in/convergence/collection bookkeeping shared by the single-layer and
/// hierarchical run loops.
pub(crate) struct RunDriver {
    max_sweeps: usize,
    burn_in: BurnIn,
    n_samples: usize,
    stride: usize,
    eps: f64,
    window: usize,
    history: Vec<f64>,
    samples: Vec<TraceSample>,
    converged: bool,
    collect_base: Option<usize>,
    streak: usize,
}

impl RunDriver {
    pub(crate) fn new(cfg: &GibbsConfig) -> Self {
        RunDriver {
            max_sweeps: cfg.max_sweeps,
            burn_in: cfg.burn_in,
            n_samples: cfg.n_samples,
            stride: cfg.sample_stride,
            eps: cfg.convergence_eps,
            window: cfg.convergence_window,
            history: Vec::new(),
            samples: Vec::new(),
            converged: false,
            collect_base: None,
            streak: 0,
        }
    }

    pub(crate) fn wants_sweep(&self) -> bool {
        self.history.len() < self.max_sweeps && self.samples.len() < self.n_samples
    }

    pub(crate) fn sweeps_done(&self) -> usize {
        self.history.len()
    }

    /// Logs one sweep's post-update log-likelihood; takes a snapshot when the
    /// collection schedule says so.
    pub(crate) fn record(&mut self, ll: f64, snapshot: impl FnOnce() -> TraceSample) {
        if let Some(&prev) = self.history.last() {
            let rel_change = (ll - prev).abs() / prev.abs().max(1e-12);
            if rel_change < self.eps {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
            if self.streak >= self.window {
                self.converged = true;
            }
        }
        self.history.push(ll);
        let done = self.history.len();
        if self.collect_base.is_none() {
            let start = match self.burn_in {
                BurnIn::Fixed(k) => done >= k,
                // Start at convergence, or just in time to fit the full
                // sample budget into the sweep allowance.
                BurnIn::Adaptive => {
                    self.converged || done + self.n_samples * self.stride >= self.max_sweeps
                }
            };
            if start {
                self.collect_base = Some(match self.burn_in {
                    BurnIn::Fixed(k) => k,
                    BurnIn::Adaptive => done,
                });
            }
        }
        if let Some(base) = self.collect_base {
            if done > base && (done - base) % self.stride == 0 && self.samples.len() < self.n_samples
            {
                self.samples.push(snapshot());
            }
        }
    }

    pub(crate) fn finish(self) -> PosteriorTrace {
        PosteriorTrace {
            sweep_count: self.history.len(),
            samples: self.samples,
            train_ll_history: self.history,
            converged: self.converged,
        }
    }
}

/// Full inference run: initializes U and Z iid Bernoulli(0.5) (clamped
/// entries excepted) and reliabilities at their prior modes, then alternates
/// sweeps with MAP reliability updates until converged (plus the sampling
/// tail) or `max_sweeps` is exhausted. Never errors on non-convergence — the
/// trace's `converged` flag reports it instead.
pub fn run(
    layer: &mut FactorLayer,
    x: &BinaryMatrix,
    mask: &HoldoutMask,
    config: &GibbsConfig,
) -> Result<PosteriorTrace> {
    config.validate()?;
    check_shapes(layer, x, mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    layer.reset_reliabilities();
    layer.randomize_unclamped(&mut rng);
    let obs = mask.observed_matrix();
    let obst = obs.transpose();
    let xt = x.transpose();
    let mut ut = layer.u().transpose();
    let prior_logit = logit(layer.priors().q_z);
    let mut driver = RunDriver::new(config);
    while driver.wants_sweep() {
        let sweep_idx = driver.sweeps_done() as u64;
        let prior = ZPrior::Flat(prior_logit);
        if config.parallel {
            sweep_z_parallel(layer, x, &obs, &ut, &prior, config.seed, sweep_idx);
        } else {
            sweep_z_sequential(layer, x, &obs, &ut, &prior, &mut rng);
        }
        let zt = layer.z().transpose();
        if config.parallel {
            sweep_u_parallel(
                layer, &xt, &obst, &zt, &mut ut, config.seed, sweep_idx, PHASE_U,
            );
        } else {
            sweep_u_sequential(layer, &xt, &obst, &zt, &mut ut, &mut rng);
        }
        debug_assert_eq!(ut, layer.u().transpose());
        let (c, t) = winner_counts(layer, x, &obs, &ut);
        apply_reliability_map(layer, &c, &t);
        let ll = train_ll(layer, x, &obs, &ut);
        driver.record(ll, || TraceSample {
            u: layer.u().clone(),
            z: layer.z().clone(),
            reliabilities: layer.reliabilities().to_vec(),
            v: None,
            reliabilities2: None,
        });
    }
    Ok(driver.finish())
}
