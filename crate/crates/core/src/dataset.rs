//! Sparse triplet ingestion: headerless CSV pairs (`object_id,attribute_id`)
//! plus an optional types file (`object_id,type`), densified into index
//! dictionaries in first-appearance order.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binmat::BinaryMatrix;
use crate::error::{Error, Result};
use crate::hierarchy::TypeClamp;

/// Type label given to objects missing from the types file.
pub const UNKNOWN_TYPE: &str = "<unknown>";

/// A binary object×attribute relation in sparse triplet form, with string
/// dictionaries and a type label per object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletDataset {
    pub n_objects: usize,
    pub n_attributes: usize,
    /// (object index, attribute index) cells where the attribute applies.
    pub pairs: Vec<(usize, usize)>,
    pub object_ids: Vec<String>,
    pub attribute_ids: Vec<String>,
    /// Type label per object (`UNKNOWN_TYPE` when unlabeled).
    pub type_of: Vec<String>,
}

impl TripletDataset {
    /// Checks index density, pair uniqueness, and dictionary consistency.
    pub fn validate(&self) -> Result<()> {
        if self.object_ids.len() != self.n_objects {
            return Err(Error::Shape(format!(
                "{} object ids for {} objects",
                self.object_ids.len(),
                self.n_objects
            )));
        }
        if self.attribute_ids.len() != self.n_attributes {
            return Err(Error::Shape(format!(
                "{} attribute ids for {} attributes",
                self.attribute_ids.len(),
                self.n_attributes
            )));
        }
        if self.type_of.len() != self.n_objects {
            return Err(Error::Shape(format!(
                "{} type labels for {} objects",
                self.type_of.len(),
                self.n_objects
            )));
        }
        let mut seen = HashSet::with_capacity(self.pairs.len());
        for &(n, d) in &self.pairs {
            if n >= self.n_objects || d >= self.n_attributes {
                return Err(Error::Bounds(format!(
                    "pair ({n}, {d}) outside {}x{}",
                    self.n_objects, self.n_attributes
                )));
            }
            if !seen.insert((n, d)) {
                return Err(Error::Data(format!("duplicate pair ({n}, {d})")));
            }
        }
        Ok(())
    }

    /// Dense N×D realization of the pairs.
    pub fn to_matrix(&self) -> BinaryMatrix {
        let mut m = BinaryMatrix::zeros(self.n_objects, self.n_attributes);
        for &(n, d) in &self.pairs {
            m.set(n, d, true);
        }
        m
    }

    /// Dense type indices (first-appearance order of labels) plus the label
    /// dictionary, ready for the hierarchical layer.
    pub fn type_clamp(&self) -> Result<(TypeClamp, Vec<String>)> {
        let mut labels: Vec<String> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut type_ixs = Vec::with_capacity(self.n_objects);
        for label in &self.type_of {
            let next = labels.len();
            let ix = match index.entry(label) {
                Entry::Occupied(e) => *e.get(),
                Entry::Vacant(e) => {
                    e.insert(next);
                    labels.push(label.clone());
                    next
                }
            };
            type_ixs.push(ix);
        }
        if labels.is_empty() {
            return Err(Error::Data("dataset has no objects".into()));
        }
        let clamp = TypeClamp::new(type_ixs, labels.len())?;
        Ok((clamp, labels))
    }

    /// Index of an attribute id, for report lookups.
    pub fn attribute_index(&self, id: &str) -> Option<usize> {
        self.attribute_ids.iter().position(|a| a == id)
    }

    /// Retains at most `cap` objects per type, sampled uniformly without
    /// replacement, deterministic under `seed`; object indices re-densified
    /// in their original relative order, attributes untouched.
    pub fn per_type_subsample(&self, cap: usize, seed: u64) -> Result<TripletDataset> {
        use rand::SeedableRng;
        if cap < 1 {
            return Err(Error::Config("per-type cap must be at least 1".into()));
        }
        let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
        let mut group_ix: HashMap<&str, usize> = HashMap::new();
        for (n, label) in self.type_of.iter().enumerate() {
            let next = groups.len();
            let g = match group_ix.entry(label) {
                Entry::Occupied(e) => *e.get(),
                Entry::Vacant(e) => {
                    e.insert(next);
                    groups.push((label, Vec::new()));
                    next
                }
            };
            groups[g].1.push(n);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut keep = vec![false; self.n_objects];
        for (_, members) in &groups {
            if members.len() <= cap {
                for &n in members {
                    keep[n] = true;
                }
            } else {
                for ix in rand::seq::index::sample(&mut rng, members.len(), cap) {
                    keep[members[ix]] = true;
                }
            }
        }
        self.filter_objects(&keep)
    }

    /// Drops attributes applied to fewer than `min_freq` of all objects,
    /// re-densifying the attribute dictionary. `min_freq = 0` keeps all.
    pub fn filter_min_attr_freq(&self, min_freq: f64) -> Result<TripletDataset> {
        if !(0.0..=1.0).contains(&min_freq) {
            return Err(Error::Config(format!(
                "min attribute frequency must be in [0, 1], got {min_freq}"
            )));
        }
        if min_freq == 0.0 || self.n_objects == 0 {
            return Ok(self.clone());
        }
        let mut counts = vec![0usize; self.n_attributes];
        for &(_, d) in &self.pairs {
            counts[d] += 1;
        }
        let threshold = min_freq * self.n_objects as f64;
        let mut new_ix = vec![usize::MAX; self.n_attributes];
        let mut attribute_ids = Vec::new();
        for (d, &c) in counts.iter().enumerate() {
            if c as f64 >= threshold {
                new_ix[d] = attribute_ids.len();
                attribute_ids.push(self.attribute_ids[d].clone());
            }
        }
        let pairs = self
            .pairs
            .iter()
            .filter(|&&(_, d)| new_ix[d] != usize::MAX)
            .map(|&(n, d)| (n, new_ix[d]))
            .collect();
        Ok(TripletDataset {
            n_objects: self.n_objects,
            n_attributes: attribute_ids.len(),
            pairs,
            object_ids: self.object_ids.clone(),
            attribute_ids,
            type_of: self.type_of.clone(),
        })
    }

    fn filter_objects(&self, keep: &[bool]) -> Result<TripletDataset> {
        let mut new_ix = vec![usize::MAX; self.n_objects];
        let mut object_ids = Vec::new();
        let mut type_of = Vec::new();
        for n in 0..self.n_objects {
            if keep[n] {
                new_ix[n] = object_ids.len();
                object_ids.push(self.object_ids[n].clone());
                type_of.push(self.type_of[n].clone());
            }
        }
        let pairs = self
            .pairs
            .iter()
            .filter(|&&(n, _)| keep[n])
            .map(|&(n, d)| (new_ix[n], d))
            .collect();
        let out = TripletDataset {
            n_objects: object_ids.len(),
            n_attributes: self.n_attributes,
            pairs,
            object_ids,
            attribute_ids: self.attribute_ids.clone(),
            type_of,
        };
        out.validate()?;
        Ok(out)
    }

    /// Writes the pairs and types files in the ingestion format.
    pub fn write_csv(&self, pairs_path: &Path, types_path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(pairs_path)
            .map_err(|e| Error::parse(pairs_path, e.to_string()))?;
        for &(n, d) in &self.pairs {
            w.write_record([&self.object_ids[n], &self.attribute_ids[d]])
                .map_err(|e| Error::parse(pairs_path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(pairs_path, e))?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(types_path)
            .map_err(|e| Error::parse(types_path, e.to_string()))?;
        for (n, label) in self.type_of.iter().enumerate() {
            w.write_record([&self.object_ids[n], label])
                .map_err(|e| Error::parse(types_path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(types_path, e))?;
        Ok(())
    }
}

/// Reads a headerless two-column CSV (whitespace-trimmed), reporting
/// malformed or empty fields as parse errors with their line numbers.
pub fn read_two_column(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| {
            let msg = e.to_string();
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => Error::parse(path, msg),
            }
        })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(rows.len() as u64 + 1);
        if record.len() != 2 {
            return Err(Error::parse(
                path,
                format!("line {line}: expected 2 fields, found {}", record.len()),
            ));
        }
        let a = record.get(0).unwrap_or("");
        let b = record.get(1).unwrap_or("");
        if a.is_empty() || b.is_empty() {
            return Err(Error::parse(path, format!("line {line}: empty field")));
        }
        rows.push((a.to_string(), b.to_string()));
    }
    Ok(rows)
}

/// Loads the pairs file (and optional types file) into a dense dataset.
/// Returns the dataset and the number of duplicate pair rows dropped.
/// Objects appearing only in the types file are retained with no attributes;
/// objects absent from the types file get [`UNKNOWN_TYPE`].
pub fn load_triplets(
    path_pairs: &Path,
    path_types: Option<&Path>,
) -> Result<(TripletDataset, usize)> {
    let pair_rows = read_two_column(path_pairs)?;
    if pair_rows.is_empty() {
        return Err(Error::Data(format!(
            "pairs file {} contains no rows",
            path_pairs.display()
        )));
    }
    let mut object_ids: Vec<String> = Vec::new();
    let mut attribute_ids: Vec<String> = Vec::new();
    let mut obj_ix: HashMap<String, usize> = HashMap::new();
    let mut attr_ix: HashMap<String, usize> = HashMap::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut duplicates = 0usize;
    for (obj, attr) in pair_rows {
        let n = match obj_ix.entry(obj) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let ix = object_ids.len();
                object_ids.push(e.key().clone());
                e.insert(ix);
                ix
            }
        };
        let d = match attr_ix.entry(attr) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let ix = attribute_ids.len();
                attribute_ids.push(e.key().clone());
                e.insert(ix);
                ix
            }
        };
        if seen.insert((n, d)) {
            pairs.push((n, d));
        } else {
            duplicates += 1;
        }
    }
    let mut type_by_object: HashMap<String, String> = HashMap::new();
    if let Some(types_path) = path_types {
        for (obj, label) in read_two_column(types_path)? {
            // First label wins on duplicates.
            type_by_object.entry(obj.clone()).or_insert(label);
            if !obj_ix.contains_key(&obj) {
                let ix = object_ids.len();
                object_ids.push(obj.clone());
                obj_ix.insert(obj, ix);
            }
        }
    }
    let type_of = object_ids
        .iter()
        .map(|id| {
            type_by_object
                .get(id)
                .cloned()
                .unwrap_or_else(|| UNKNOWN_TYPE.to_string())
        })
        .collect();
    let data = TripletDataset {
        n_objects: object_ids.len(),
        n_attributes: attribute_ids.len(),
        pairs,
        object_ids,
        attribute_ids,
        type_of,
    };
    data.validate()?;
    Ok((data, duplicates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "triplets-test-{}-{:x}",
            std::process::id(),
            rand::random::<u64>()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn load_builds_dictionaries_in_first_appearance_order() {
        let dir = tempdir();
        let pairs = write_file(&dir, "pairs.csv", "p1,size\np1,color\np2,size\n");
        let (data, dups) = load_triplets(&pairs, None).unwrap();
        assert_eq!(dups, 0);
        assert_eq!(data.n_objects, 2);
        assert_eq!(data.n_attributes, 2);
        assert_eq!(data.pairs.len(), 3);
        assert_eq!(data.object_ids, vec!["p1", "p2"]);
        assert_eq!(data.attribute_ids, vec!["size", "color"]);
        assert_eq!(data.type_of, vec![UNKNOWN_TYPE, UNKNOWN_TYPE]);
        let m = data.to_matrix();
        assert!(m.get(0, 0) && m.get(0, 1) && m.get(1, 0));
        assert!(!m.get(1, 1));
    }

    #[test]
    fn duplicates_are_dropped_and_counted() {
        let dir = tempdir();
        let pairs = write_file(&dir, "pairs.csv", "p1,size\np1,size\np2,fit\n");
        let (data, dups) = load_triplets(&pairs, None).unwrap();
        assert_eq!(dups, 1);
        assert_eq!(data.pairs.len(), 2);
    }

    #[test]
    fn types_file_merges_and_unknowns_fill_in() {
        let dir = tempdir();
        let pairs = write_file(&dir, "pairs.csv", "p1,size\np2,size\n");
        let types = write_file(&dir, "types.csv", "p1,shoes\np3,hats\np1,boots\n");
        let (data, _) = load_triplets(&pairs, Some(&types)).unwrap();
        assert_eq!(data.n_objects, 3); // p3 appended from the types file
        assert_eq!(data.type_of, vec!["shoes", UNKNOWN_TYPE, "hats"]);
        // p1's duplicate row kept the first label.
        assert_eq!(data.type_of[0], "shoes");
        let (clamp, labels) = data.type_clamp().unwrap();
        assert_eq!(labels, vec!["shoes", UNKNOWN_TYPE, "hats"]);
        assert_eq!(clamp.assignments(), &[0, 1, 2]);
    }

    #[test]
    fn malformed_rows_are_parse_errors_with_line_numbers() {
        let dir = tempdir();
        let pairs = write_file(&dir, "pairs.csv", "p1,size\nonly_one_field\n");
        let err = load_triplets(&pairs, None).unwrap_err();
        match err {
            Error::Parse { message, .. } => assert!(message.contains("line 2"), "{message}"),
            other => panic!("expected parse error, got {other:?}"),
        }
        let empty_field = write_file(&dir, "pairs2.csv", "p1,\n");
        assert!(matches!(
            load_triplets(&empty_field, None),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn empty_pairs_file_is_a_data_error() {
        let dir = tempdir();
        let pairs = write_file(&dir, "pairs.csv", "");
        assert!(matches!(load_triplets(&pairs, None), Err(Error::Data(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let missing = Path::new("/nonexistent/really/pairs.csv");
        assert!(matches!(
            load_triplets(missing, None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn subsample_caps_each_type_deterministically() {
        let mut data = TripletDataset {
            n_objects: 10,
            n_attributes: 2,
            pairs: (0..10).map(|n| (n, n % 2)).collect(),
            object_ids: (0..10).map(|n| format!("p{n}")).collect(),
            attribute_ids: vec!["a".into(), "b".into()],
            type_of: (0..10)
                .map(|n| if n < 7 { "big".into() } else { "small".into() })
                .collect(),
        };
        data.validate().unwrap();
        let sub = data.per_type_subsample(3, 9).unwrap();
        let big = sub.type_of.iter().filter(|t| *t == "big").count();
        let small = sub.type_of.iter().filter(|t| *t == "small").count();
        assert_eq!(big, 3);
        assert_eq!(small, 3);
        assert_eq!(sub.n_objects, 6);
        let again = data.per_type_subsample(3, 9).unwrap();
        assert_eq!(sub, again);
        let other = data.per_type_subsample(3, 10).unwrap();
        assert!(sub != other || sub.object_ids == other.object_ids);
        // Cap above every type size: unchanged.
        let full = data.per_type_subsample(100, 1).unwrap();
        assert_eq!(full, data);
        // Relative object order preserved.
        let mut last = None;
        for id in &sub.object_ids {
            let orig = data.object_ids.iter().position(|o| o == id).unwrap();
            if let Some(prev) = last {
                assert!(orig > prev);
            }
            last = Some(orig);
        }
        assert!(data.per_type_subsample(0, 1).is_err());
        data.pairs.push((0, 0));
        assert!(data.validate().is_err());
    }

    #[test]
    fn min_freq_filter_drops_rare_attributes() {
        let data = TripletDataset {
            n_objects: 4,
            n_attributes: 3,
            pairs: vec![(0, 0), (1, 0), (2, 0), (3, 0), (0, 1), (1, 1), (2, 2)],
            object_ids: (0..4).map(|n| format!("p{n}")).collect(),
            attribute_ids: vec!["common".into(), "half".into(), "rare".into()],
            type_of: vec!["t".into(); 4],
        };
        let filtered = data.filter_min_attr_freq(0.5).unwrap();
        assert_eq!(filtered.attribute_ids, vec!["common", "half"]);
        assert_eq!(filtered.pairs.len(), 6);
        assert_eq!(data.filter_min_attr_freq(0.0).unwrap(), data);
        assert!(data.filter_min_attr_freq(1.5).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let dir = tempdir();
        let data = TripletDataset {
            n_objects: 3,
            n_attributes: 2,
            pairs: vec![(0, 0), (1, 1), (2, 0)],
            object_ids: vec!["x".into(), "y".into(), "z".into()],
            attribute_ids: vec!["size".into(), "fit".into()],
            type_of: vec!["shoes".into(), "shoes".into(), "hats".into()],
        };
        let pairs_path = dir.join("pairs.csv");
        let types_path = dir.join("types.csv");
        data.write_csv(&pairs_path, &types_path).unwrap();
        let (loaded, dups) = load_triplets(&pairs_path, Some(&types_path)).unwrap();
        assert_eq!(dups, 0);
        assert_eq!(loaded, data);
    }
}
