//! Type-frequency baseline: predicts each cell by the smoothed within-type
//! frequency of the attribute, tabulated over non-held-out cells only.

use crate::dataset::TripletDataset;
use crate::error::{Error, Result};
use crate::eval::HoldoutMask;

/// Default add-β smoothing, exposed in config.
pub const DEFAULT_SMOOTHING: f64 = 0.5;

/// Per-(type, attribute) counts of observed ones and observed cells, plus
/// global per-attribute counts used for objects of unknown type.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeFrequencyTable {
    n_attributes: usize,
    /// Dense type index per training object.
    type_of: Vec<usize>,
    /// T×D observed ones per (type, attribute).
    counts: Vec<u64>,
    /// T×D observed cells per (type, attribute).
    totals: Vec<u64>,
    global_counts: Vec<u64>,
    global_totals: Vec<u64>,
    smoothing: f64,
}

/// Tabulates within-type attribute frequencies over all cells not excluded
/// by `mask`. Every object contributes one cell per attribute: a 1 where the
/// pair is present, a 0 otherwise.
pub fn fit(
    data: &TripletDataset,
    mask: &HoldoutMask,
    smoothing: f64,
) -> Result<TypeFrequencyTable> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!(
            "smoothing must be nonnegative and finite, got {smoothing}"
        )));
    }
    data.validate()?;
    mask.check_shape(data.n_objects, data.n_attributes)?;
    let (clamp, _) = data.type_clamp()?;
    let t_count = clamp.n_types();
    let d_count = data.n_attributes;
    let type_of: Vec<usize> = clamp.assignments().to_vec();
    let mut counts = vec![0u64; t_count * d_count];
    let mut totals = vec![0u64; t_count * d_count];
    let mut global_counts = vec![0u64; d_count];
    let mut global_totals = vec![0u64; d_count];
    // Start from "every cell of every object observed", then subtract the
    // held-out cells.
    for &t in &type_of {
        for d in 0..d_count {
            totals[t * d_count + d] += 1;
        }
    }
    for d in 0..d_count {
        global_totals[d] = data.n_objects as u64;
    }
    for &(n, d) in mask.cells() {
        totals[type_of[n] * d_count + d] -= 1;
        global_totals[d] -= 1;
    }
    for &(n, d) in &data.pairs {
        if mask.is_held(n, d) {
            continue;
        }
        counts[type_of[n] * d_count + d] += 1;
        global_counts[d] += 1;
    }
    Ok(TypeFrequencyTable {
        n_attributes: d_count,
        type_of,
        counts,
        totals,
        global_counts,
        global_totals,
        smoothing,
    })
}

impl TypeFrequencyTable {
    fn smooth(&self, count: u64, total: u64) -> f64 {
        let b = self.smoothing;
        if total == 0 && b == 0.0 {
            // No observations and no prior mass: indifferent.
            return 0.5;
        }
        (count as f64 + b) / (total as f64 + 2.0 * b)
    }

    /// Smoothed within-type frequency `(count + β) / (total + 2β)` of
    /// attribute `d` for object `n`'s type. An object index outside the
    /// training set has no known type and falls back to the global
    /// per-attribute frequency with the same smoothing.
    pub fn predict(&self, n: usize, d: usize) -> f64 {
        assert!(d < self.n_attributes, "attribute {d} out of range");
        match self.type_of.get(n) {
            Some(&t) => {
                let ix = t * self.n_attributes + d;
                self.smooth(self.counts[ix], self.totals[ix])
            }
            None => self.smooth(self.global_counts[d], self.global_totals[d]),
        }
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn n_types(&self) -> usize {
        if self.n_attributes == 0 {
            0
        } else {
            self.counts.len() / self.n_attributes
        }
    }

    #[cfg(test)]
    fn counts_bounded_by_totals(&self) -> bool {
        self.counts.iter().zip(&self.totals).all(|(c, t)| c <= t)
            && self
                .global_counts
                .iter()
                .zip(&self.global_totals)
                .all(|(c, t)| c <= t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(type_of: &[&str], pairs: &[(usize, usize)], d: usize) -> TripletDataset {
        TripletDataset {
            n_objects: type_of.len(),
            n_attributes: d,
            pairs: pairs.to_vec(),
            object_ids: (0..type_of.len()).map(|n| format!("p{n}")).collect(),
            attribute_ids: (0..d).map(|a| format!("a{a}")).collect(),
            type_of: type_of.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn smoothed_frequency_reference_value() {
        // 4 objects of one type, attribute 0 present in 3 → (3+β)/(4+2β),
        // which is 0.7 at β = 0.5.
        let data = dataset(
            &["shoes"; 4],
            &[(0, 0), (1, 0), (2, 0)],
            1,
        );
        let table = fit(&data, &HoldoutMask::empty(4, 1), 0.5).unwrap();
        assert!((table.predict(0, 0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn unsmoothed_frequency_is_empirical_mean() {
        let data = dataset(&["a", "a", "a", "b"], &[(0, 0), (1, 0), (3, 1)], 2);
        let table = fit(&data, &HoldoutMask::empty(4, 2), 0.0).unwrap();
        assert!((table.predict(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        // Attribute never observed for the type, β = 0 → exactly 0.
        assert_eq!(table.predict(0, 1), 0.0);
        assert_eq!(table.predict(3, 0), 0.0);
        assert_eq!(table.predict(3, 1), 1.0);
    }

    #[test]
    fn fully_held_out_type_predicts_pure_prior() {
        let data = dataset(&["a", "b"], &[(0, 0), (1, 0)], 1);
        let mask = HoldoutMask::from_cells(2, 1, vec![(1, 0)]).unwrap();
        let table = fit(&data, &mask, 0.5).unwrap();
        assert_eq!(table.predict(1, 0), 0.5); // β/(2β)
        // The other type is unaffected.
        assert!((table.predict(0, 0) - 1.5 / 2.0).abs() < 1e-15);
        // With β = 0 and nothing observed the prediction is indifferent.
        let table0 = fit(&data, &mask, 0.0).unwrap();
        assert_eq!(table0.predict(1, 0), 0.5);
    }

    #[test]
    fn out_of_range_object_falls_back_to_global_frequency() {
        // Global: attribute 0 present in 10 of 100 objects.
        let type_of: Vec<&str> = (0..100).map(|n| if n < 50 { "a" } else { "b" }).collect();
        let pairs: Vec<(usize, usize)> = (0..10).map(|n| (n * 7, 0)).collect();
        let data = dataset(&type_of, &pairs, 1);
        let table = fit(&data, &HoldoutMask::empty(100, 1), 0.0).unwrap();
        assert!((table.predict(100, 0) - 0.1).abs() < 1e-15);
        assert!((table.predict(55555, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn predictions_constant_within_type() {
        let type_of: Vec<&str> = (0..12).map(|n| ["x", "y", "z"][n % 3]).collect();
        let pairs: Vec<(usize, usize)> = (0..12)
            .filter(|n| n % 4 != 1)
            .map(|n| (n, (n * n) % 3))
            .collect();
        let data = dataset(&type_of, &pairs, 3);
        let mask = crate::eval::make_holdout(12, 3, 0.2, 3).unwrap();
        let table = fit(&data, &mask, 0.5).unwrap();
        for d in 0..3 {
            for n in 0..12 {
                for m in 0..12 {
                    if data.type_of[n] == data.type_of[m] {
                        assert_eq!(table.predict(n, d), table.predict(m, d));
                    }
                }
            }
        }
    }

    #[test]
    fn held_out_cells_do_not_leak_into_counts() {
        let data = dataset(&["a", "a"], &[(0, 0), (1, 0)], 1);
        let full = fit(&data, &HoldoutMask::empty(2, 1), 0.0).unwrap();
        assert_eq!(full.predict(0, 0), 1.0);
        let mask = HoldoutMask::from_cells(2, 1, vec![(0, 0)]).unwrap();
        let partial = fit(&data, &mask, 0.0).unwrap();
        // Only object 1's cell remains: frequency still 1 but from 1 cell.
        assert_eq!(partial.predict(0, 0), 1.0);
        assert_eq!(partial.totals, vec![1]);
        assert_eq!(partial.counts, vec![1]);
    }

    #[test]
    fn negative_smoothing_is_rejected() {
        let data = dataset(&["a"], &[(0, 0)], 1);
        assert!(fit(&data, &HoldoutMask::empty(1, 1), -0.1).is_err());
        assert!(fit(&data, &HoldoutMask::empty(1, 1), f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn counts_never_exceed_totals(seed in 0u64..300, frac in 0.05f64..0.6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed % 17) as usize;
            let d = 1 + (seed % 5) as usize;
            let labels = ["a", "b", "c"];
            let type_of: Vec<&str> =
                (0..n).map(|_| labels[rng.random_range(0..3)]).collect();
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in 0..d {
                    if rng.random::<f64>() < 0.4 {
                        pairs.push((i, j));
                    }
                }
            }
            let data = dataset(&type_of, &pairs, d);
            let mask = crate::eval::make_holdout(n, d, frac, seed).unwrap();
            let table = fit(&data, &mask, 0.5).unwrap();
            prop_assert!(table.counts_bounded_by_totals());
            for i in 0..n {
                for j in 0..d {
                    let p = table.predict(i, j);
                    prop_assert!((0.0..=1.0).contains(&p));
                }
            }
        }

        #[test]
        fn unsmoothed_prediction_matches_within_type_mean(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 3 + (seed % 9) as usize;
            let type_of: Vec<&str> =
                (0..n).map(|_| ["u", "v"][rng.random_range(0..2)]).collect();
            let mut pairs = Vec::new();
            for i in 0..n {
                if rng.random::<f64>() < 0.5 {
                    pairs.push((i, 0));
                }
            }
            let data = dataset(&type_of, &pairs, 1);
            let table = fit(&data, &HoldoutMask::empty(n, 1), 0.0).unwrap();
            let x = data.to_matrix();
            for label in ["u", "v"] {
                let members: Vec<usize> =
                    (0..n).filter(|&i| data.type_of[i] == label).collect();
                if members.is_empty() {
                    continue;
                }
                let mean = members.iter().filter(|&&i| x.get(i, 0)).count() as f64
                    / members.len() as f64;
                prop_assert_eq!(table.predict(members[0], 0), mean);
            }
        }
    }
}
