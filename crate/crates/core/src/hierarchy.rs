//! Two-layer stacking: the prior on the first layer's assignments Z is
//! itself factorized by a second layer whose object-side factor is clamped
//! to a one-hot type encoding. Resampling z_nl combines its data likelihood
//! (layer 1) and its type-prior likelihood (layer 2) into a single exact
//! Bernoulli draw, so the joint sampler remains plain Gibbs.
//!
//! The layer interface is generic — a deeper stack is a composition of the
//! same pieces, not a rewrite — but exactly two layers are wired up here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binmat::BinaryMatrix;
use crate::error::{Error, Result};
use crate::eval::HoldoutMask;
use crate::model::{logit, FactorLayer, PriorConfig};
use crate::sampler::{
    self, apply_reliability_map, conditional_log_odds_z, sweep_u_parallel, sweep_u_sequential,
    sweep_z_parallel, sweep_z_sequential, train_ll, winner_counts, GibbsConfig, PosteriorTrace,
    RunDriver, TraceSample, ZPrior,
};

/// Object → type assignment with a dense type index space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeClamp {
    type_of: Vec<usize>,
    n_types: usize,
}

impl TypeClamp {
    /// Every object gets exactly one type index in `[0, n_types)`.
    pub fn new(type_of: Vec<usize>, n_types: usize) -> Result<Self> {
        if n_types < 1 {
            return Err(Error::Config("there must be at least one type".into()));
        }
        if let Some((n, &t)) = type_of.iter().enumerate().find(|(_, &t)| t >= n_types) {
            return Err(Error::Bounds(format!(
                "object {n} has type index {t}, but there are only {n_types} types"
            )));
        }
        Ok(TypeClamp { type_of, n_types })
    }

    pub fn n_objects(&self) -> usize {
        self.type_of.len()
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn type_of(&self, n: usize) -> usize {
        self.type_of[n]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.type_of
    }

    /// N×T encoding with exactly one 1 per row.
    pub fn one_hot(&self) -> BinaryMatrix {
        let mut m = BinaryMatrix::zeros(self.type_of.len(), self.n_types);
        for (n, &t) in self.type_of.iter().enumerate() {
            m.set(n, t, true);
        }
        m
    }
}

/// Which layer a clamp operation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerId {
    First,
    Second,
}

/// Which factor matrix within the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorMatrix {
    /// The dimension × attribute codes (U, or V on the second layer).
    Codes,
    /// The object × dimension assignments (Z, or the one-hot on layer two).
    Assignments,
}

/// A set of entries of one factor matrix, for [`HierarchicalModel::clamp`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampTarget {
    pub layer: LayerId,
    pub matrix: FactorMatrix,
    pub entries: Vec<(usize, usize)>,
}

/// A first layer explaining the data, optionally stacked under a second
/// layer whose data is the first layer's Z and whose object-side factor is
/// the clamped one-hot type encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalModel {
    layer1: FactorLayer,
    layer2: Option<FactorLayer>,
    types: Option<TypeClamp>,
}

impl HierarchicalModel {
    /// Single-layer model: Z keeps its flat Bernoulli(q_z) prior.
    pub fn single(layer1: FactorLayer) -> Self {
        HierarchicalModel {
            layer1,
            layer2: None,
            types: None,
        }
    }

    /// Stacks a type layer on top: layer two has the first layer's latent
    /// dimension as its attribute side and one dimension per type, with its
    /// object-side factor clamped to the one-hot encoding.
    pub fn with_types(
        layer1: FactorLayer,
        types: TypeClamp,
        priors2: PriorConfig,
    ) -> Result<Self> {
        if types.n_objects() != layer1.n_objects() {
            return Err(Error::Shape(format!(
                "type assignment covers {} objects but the layer has {}",
                types.n_objects(),
                layer1.n_objects()
            )));
        }
        priors2.validate()?;
        let n = layer1.n_objects();
        let l1 = layer1.n_dims();
        let t = types.n_types();
        let mut layer2 = FactorLayer::new(n, l1, t, priors2)?;
        let one_hot = types.one_hot();
        for i in 0..n {
            for j in 0..t {
                layer2.clamp_z(i, j, one_hot.get(i, j));
            }
        }
        Ok(HierarchicalModel {
            layer1,
            layer2: Some(layer2),
            types: Some(types),
        })
    }

    pub fn layer1(&self) -> &FactorLayer {
        &self.layer1
    }

    pub fn layer1_mut(&mut self) -> &mut FactorLayer {
        &mut self.layer1
    }

    pub fn layer2(&self) -> Option<&FactorLayer> {
        self.layer2.as_ref()
    }

    /// Mutable access to the type layer, e.g. to seed its codes or
    /// reliabilities before inference. The one-hot assignment clamp is
    /// enforced by the layer itself and survives any mutation done here.
    pub fn layer2_mut(&mut self) -> Option<&mut FactorLayer> {
        self.layer2.as_mut()
    }

    pub fn types(&self) -> Option<&TypeClamp> {
        self.types.as_ref()
    }

    /// Posterior-mean codes of the second layer are its U matrix (V, T×L).
    pub fn v(&self) -> Option<&BinaryMatrix> {
        self.layer2.as_ref().map(|l| l.u())
    }

    /// The Bernoulli prior log-odds on `z_nl` coming from the layer above:
    /// `logit` of the second layer's point probability for cell `(n, l)`.
    /// Without a second layer this is the flat `logit(q_z)`.
    pub fn prior_logit_from_above(&self, n: usize, l: usize) -> Result<f64> {
        match &self.layer2 {
            Some(layer2) => Ok(logit(layer2.point_prob(n, l)?)),
            None => {
                if n >= self.layer1.n_objects() || l >= self.layer1.n_dims() {
                    return Err(Error::Bounds(format!(
                        "entry ({n}, {l}) outside {}x{} assignments",
                        self.layer1.n_objects(),
                        self.layer1.n_dims()
                    )));
                }
                Ok(logit(self.layer1.priors().q_z))
            }
        }
    }

    /// T×L1 table of the layer-two prior logits, bit-identical to
    /// [`Self::prior_logit_from_above`] for every object of each type
    /// (the one-hot encoding makes the prior depend on `n` only through
    /// its type). `None` without a second layer.
    pub(crate) fn type_prior_table(&self) -> Option<Vec<f64>> {
        let layer2 = self.layer2.as_ref()?;
        let t_count = layer2.n_dims();
        let l_count = layer2.n_attributes();
        let rel = layer2.reliabilities();
        let floor = layer2.floor();
        let mut table = vec![0.0; t_count * l_count];
        for t in 0..t_count {
            for l in 0..l_count {
                let p = if layer2.u().get(t, l) && rel[t] > floor {
                    rel[t]
                } else {
                    floor
                };
                table[t * l_count + l] = logit(p);
            }
        }
        Some(table)
    }

    /// Exact full-conditional log-odds of `z_nl` in the joint model: the
    /// first layer's likelihood term plus the layer-above prior term.
    pub fn conditional_log_odds_z(
        &self,
        x: &BinaryMatrix,
        mask: &HoldoutMask,
        n: usize,
        l: usize,
    ) -> Result<f64> {
        let prior = self.prior_logit_from_above(n, l)?;
        conditional_log_odds_z(&self.layer1, x, mask, n, l, prior)
    }

    /// Fixes the listed entries to `values` and excludes them from sweeps.
    /// The second layer's object-side factor (the one-hot type encoding) is
    /// immutable: targeting it is a contract error.
    pub fn clamp(&mut self, target: &ClampTarget, values: &[bool]) -> Result<()> {
        if values.len() != target.entries.len() {
            return Err(Error::Shape(format!(
                "{} entries but {} values",
                target.entries.len(),
                values.len()
            )));
        }
        let layer = self.target_layer(target)?;
        for (&(i, j), &v) in target.entries.iter().zip(values) {
            match target.matrix {
                FactorMatrix::Codes => {
                    check_entry(i, j, layer.n_dims(), layer.n_attributes(), "codes")?;
                    layer.clamp_u(i, j, v);
                }
                FactorMatrix::Assignments => {
                    check_entry(i, j, layer.n_objects(), layer.n_dims(), "assignments")?;
                    layer.clamp_z(i, j, v);
                }
            }
        }
        Ok(())
    }

    /// Releases previously clamped entries back to the sampler.
    pub fn unclamp(&mut self, target: &ClampTarget) -> Result<()> {
        let layer = self.target_layer(target)?;
        for &(i, j) in &target.entries {
            match target.matrix {
                FactorMatrix::Codes => {
                    check_entry(i, j, layer.n_dims(), layer.n_attributes(), "codes")?;
                    layer.unclamp_u(i, j);
                }
                FactorMatrix::Assignments => {
                    check_entry(i, j, layer.n_objects(), layer.n_dims(), "assignments")?;
                    layer.unclamp_z(i, j);
                }
            }
        }
        Ok(())
    }

    fn target_layer(&mut self, target: &ClampTarget) -> Result<&mut FactorLayer> {
        match target.layer {
            LayerId::First => Ok(&mut self.layer1),
            LayerId::Second => {
                if target.matrix == FactorMatrix::Assignments {
                    return Err(Error::Clamp(
                        "the second layer's object-side factor is the one-hot type \
                         encoding and cannot be modified"
                            .into(),
                    ));
                }
                self.layer2
                    .as_mut()
                    .ok_or_else(|| Error::State("model has no second layer".into()))
            }
        }
    }

    /// One sequential joint sweep: first-layer Z (with the layer-above
    /// prior) and U, then the second layer's codes V against the fresh Z,
    /// then MAP reliability updates for both layers. Clamped entries are
    /// untouched throughout.
    pub fn joint_sweep(
        &mut self,
        x: &BinaryMatrix,
        mask: &HoldoutMask,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if x.rows() != self.layer1.n_objects() || x.cols() != self.layer1.n_attributes() {
            return Err(Error::Shape(format!(
                "data is {}x{} but layer expects {}x{}",
                x.rows(),
                x.cols(),
                self.layer1.n_objects(),
                self.layer1.n_attributes()
            )));
        }
        mask.check_shape(x.rows(), x.cols())?;
        let obs = mask.observed_matrix();
        let obst = obs.transpose();
        let xt = x.transpose();
        let mut ut1 = self.layer1.u().transpose();
        let table = self.type_prior_table();
        {
            let prior = match (&table, &self.types) {
                (Some(logits), Some(types)) => ZPrior::Table {
                    logits,
                    n_dims: self.layer1.n_dims(),
                    type_of: types.assignments(),
                },
                _ => ZPrior::Flat(logit(self.layer1.priors().q_z)),
            };
            sweep_z_sequential(&mut self.layer1, x, &obs, &ut1, &prior, rng);
        }
        let zt1 = self.layer1.z().transpose();
        sweep_u_sequential(&mut self.layer1, &xt, &obst, &zt1, &mut ut1, rng);
        let (c, t) = winner_counts(&self.layer1, x, &obs, &ut1);
        if let Some(layer2) = &mut self.layer2 {
            // The second layer treats the (post-resampling) first-layer Z as
            // fully observed data; only its codes V are free.
            let obs2 = BinaryMatrix::ones(layer2.n_objects(), layer2.n_attributes());
            let obst2 = BinaryMatrix::ones(layer2.n_attributes(), layer2.n_objects());
            let zt2 = layer2.z().transpose();
            let mut ut2 = layer2.u().transpose();
            sweep_u_sequential(layer2, &zt1, &obst2, &zt2, &mut ut2, rng);
            let (c2, t2) = winner_counts(layer2, self.layer1.z(), &obs2, &ut2);
            apply_reliability_map(layer2, &c2, &t2);
        }
        apply_reliability_map(&mut self.layer1, &c, &t);
        Ok(())
    }

    /// Full inference run. Initialization, scheduling, convergence, and
    /// trace collection follow the single-layer sampler contract; with a
    /// second layer present, every snapshot additionally captures V and the
    /// second layer's reliabilities, and the recorded log-likelihood is the
    /// first layer's fit to the data.
    pub fn run(
        &mut self,
        x: &BinaryMatrix,
        mask: &HoldoutMask,
        config: &GibbsConfig,
    ) -> Result<PosteriorTrace> {
        if self.layer2.is_none() {
            return sampler::run(&mut self.layer1, x, mask, config);
        }
        config.validate()?;
        if x.rows() != self.layer1.n_objects() || x.cols() != self.layer1.n_attributes() {
            return Err(Error::Shape(format!(
                "data is {}x{} but layer expects {}x{}",
                x.rows(),
                x.cols(),
                self.layer1.n_objects(),
                self.layer1.n_attributes()
            )));
        }
        mask.check_shape(x.rows(), x.cols())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        self.layer1.reset_reliabilities();
        self.layer1.randomize_unclamped(&mut rng);
        {
            let layer2 = self.layer2.as_mut().unwrap();
            layer2.reset_reliabilities();
            layer2.randomize_unclamped(&mut rng);
        }
        let obs = mask.observed_matrix();
        let obst = obs.transpose();
        let xt = x.transpose();
        let mut ut1 = self.layer1.u().transpose();
        let layer2_ref = self.layer2.as_ref().unwrap();
        let obs2 = BinaryMatrix::ones(layer2_ref.n_objects(), layer2_ref.n_attributes());
        let obst2 = BinaryMatrix::ones(layer2_ref.n_attributes(), layer2_ref.n_objects());
        let zt2 = layer2_ref.z().transpose();
        let mut ut2 = layer2_ref.u().transpose();
        let mut driver = RunDriver::new(config);
        while driver.wants_sweep() {
            let sweep_idx = driver.sweeps_done() as u64;
            let table = self.type_prior_table().unwrap();
            {
                let prior = ZPrior::Table {
                    logits: &table,
                    n_dims: self.layer1.n_dims(),
                    type_of: self.types.as_ref().unwrap().assignments(),
                };
                if config.parallel {
                    sweep_z_parallel(
                        &mut self.layer1,
                        x,
                        &obs,
                        &ut1,
                        &prior,
                        config.seed,
                        sweep_idx,
                    );
                } else {
                    sweep_z_sequential(&mut self.layer1, x, &obs, &ut1, &prior, &mut rng);
                }
            }
            let zt1 = self.layer1.z().transpose();
            if config.parallel {
                sweep_u_parallel(
                    &mut self.layer1,
                    &xt,
                    &obst,
                    &zt1,
                    &mut ut1,
                    config.seed,
                    sweep_idx,
                    sampler::PHASE_U,
                );
            } else {
                sweep_u_sequential(&mut self.layer1, &xt, &obst, &zt1, &mut ut1, &mut rng);
            }
            debug_assert_eq!(ut1, self.layer1.u().transpose());
            let layer2 = self.layer2.as_mut().unwrap();
            if config.parallel {
                sweep_u_parallel(
                    layer2,
                    &zt1,
                    &obst2,
                    &zt2,
                    &mut ut2,
                    config.seed,
                    sweep_idx,
                    sampler::PHASE_V,
                );
            } else {
                sweep_u_sequential(layer2, &zt1, &obst2, &zt2, &mut ut2, &mut rng);
            }
            debug_assert_eq!(ut2, layer2.u().transpose());
            let (c2, t2) = winner_counts(layer2, self.layer1.z(), &obs2, &ut2);
            apply_reliability_map(layer2, &c2, &t2);
            let (c, t) = winner_counts(&self.layer1, x, &obs, &ut1);
            apply_reliability_map(&mut self.layer1, &c, &t);
            let ll = train_ll(&self.layer1, x, &obs, &ut1);
            let layer1 = &self.layer1;
            let layer2 = self.layer2.as_ref().unwrap();
            driver.record(ll, || TraceSample {
                u: layer1.u().clone(),
                z: layer1.z().clone(),
                reliabilities: layer1.reliabilities().to_vec(),
                v: Some(layer2.u().clone()),
                reliabilities2: Some(layer2.reliabilities().to_vec()),
            });
        }
        Ok(driver.finish())
    }
}

fn check_entry(i: usize, j: usize, rows: usize, cols: usize, what: &str) -> Result<()> {
    if i >= rows || j >= cols {
        return Err(Error::Bounds(format!(
            "entry ({i}, {j}) outside {rows}x{cols} {what}"
        )));
    }
    Ok(())
}
