use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{PriseError, Result};

/// All unordered pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// Position of the unordered pair `{i, j}` in [`pairs`]`(n)`.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnionFeature {
    pub pair: [usize; 2],
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabel {
    pub pair: [usize; 2],
    pub class: usize,
}

/// One image's precomputed features and labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub n_persons: usize,
    /// Person boxes `[x0, y0, x1, y1]`; carried for provenance only.
    pub boxes: Vec<[f64; 4]>,
    pub person_features: Vec<Vec<f64>>,
    pub union_features: Vec<UnionFeature>,
    pub background_feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_scene_input: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_top5: Option<Vec<u32>>,
    #[serde(default)]
    pub pair_labels: Vec<PairLabel>,
}

impl ImageRecord {
    pub fn union_feature(&self, i: usize, j: usize) -> Option<&[f64]> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.union_features
            .iter()
            .find(|u| u.pair == [i, j])
            .map(|u| u.feature.as_slice())
    }

    pub fn label(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.pair_labels
            .iter()
            .find(|l| l.pair == [i, j])
            .map(|l| l.class)
    }

    /// Labels for every pair in canonical order.
    pub fn labels_in_order(&self) -> Vec<Option<usize>> {
        pairs(self.n_persons)
            .into_iter()
            .map(|(i, j)| self.label(i, j))
            .collect()
    }

    /// Relabels persons: person `i` becomes person `perm[i]`.
    pub fn permute_persons(&self, perm: &[usize]) -> ImageRecord {
        assert_eq!(perm.len(), self.n_persons, "permutation length");
        let n = self.n_persons;
        let map_pair = |p: [usize; 2]| {
            let (a, b) = (perm[p[0]], perm[p[1]]);
            if a < b {
                [a, b]
            } else {
                [b, a]
            }
        };
        let mut person_features = vec![Vec::new(); n];
        let mut boxes = vec![[0.0; 4]; n];
        for i in 0..n {
            person_features[perm[i]] = self.person_features[i].clone();
            if let Some(b) = self.boxes.get(i) {
                boxes[perm[i]] = *b;
            }
        }
        let mut union_features: Vec<UnionFeature> = self
            .union_features
            .iter()
            .map(|u| UnionFeature {
                pair: map_pair(u.pair),
                feature: u.feature.clone(),
            })
            .collect();
        union_features.sort_by_key(|u| u.pair);
        let mut pair_labels: Vec<PairLabel> = self
            .pair_labels
            .iter()
            .map(|l| PairLabel {
                pair: map_pair(l.pair),
                class: l.class,
            })
            .collect();
        pair_labels.sort_by_key(|l| l.pair);
        ImageRecord {
            boxes,
            person_features,
            union_features,
            pair_labels,
            ..self.clone()
        }
    }
}

fn check_vector(record: &ImageRecord, field: String, v: &[f64], f: usize) -> Result<()> {
    if v.len() != f {
        return Err(PriseError::validation(
            &record.image_id,
            field,
            format!("dimension {} != F = {f}", v.len()),
        ));
    }
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(PriseError::validation(
            &record.image_id,
            format!("{field}[{k}]"),
            "non-finite value",
        ));
    }
    Ok(())
}

/// Checks every record invariant against feature dimension `f` and class
/// count `c`; reports the first violation with its field path.
pub fn validate_record(record: &ImageRecord, f: usize, c: usize) -> Result<()> {
    let id = &record.image_id;
    let n = record.n_persons;
    if n == 0 {
        return Err(PriseError::validation(id, "n_persons", "empty image: no persons"));
    }
    if record.person_features.len() != n {
        return Err(PriseError::validation(
            id,
            "person_features",
            format!("{} features for {n} persons", record.person_features.len()),
        ));
    }
    if record.boxes.len() != n {
        return Err(PriseError::validation(
            id,
            "boxes",
            format!("{} boxes for {n} persons", record.boxes.len()),
        ));
    }
    for (i, x) in record.person_features.iter().enumerate() {
        check_vector(record, format!("person_features[{i}]"), x, f)?;
    }

    let mut seen = BTreeSet::new();
    for (k, u) in record.union_features.iter().enumerate() {
        let [i, j] = u.pair;
        if !(i < j && j < n) {
            return Err(PriseError::validation(
                id,
                format!("union_features[{k}].pair"),
                format!("invalid pair ({i},{j}) for {n} persons"),
            ));
        }
        if !seen.insert(u.pair) {
            return Err(PriseError::validation(
                id,
                format!("union_features[{k}].pair"),
                format!("duplicate pair ({i},{j})"),
            ));
        }
        check_vector(record, format!("union_features[{k}].feature"), &u.feature, f)?;
    }
    if let Some((i, j)) = pairs(n).into_iter().find(|&(i, j)| !seen.contains(&[i, j])) {
        return Err(PriseError::validation(
            id,
            "union_features",
            format!("missing union feature for pair ({i},{j})"),
        ));
    }

    check_vector(record, "background_feature".into(), &record.background_feature, f)?;
    if let Some(raw) = &record.raw_scene_input {
        check_vector(record, "raw_scene_input".into(), raw, f)?;
    }
    if let Some(top5) = &record.pseudo_top5 {
        if top5.len() != 5 {
            return Err(PriseError::validation(
                id,
                "pseudo_top5",
                format!("expected 5 scene classes, got {}", top5.len()),
            ));
        }
        let distinct: BTreeSet<_> = top5.iter().collect();
        if distinct.len() != 5 {
            return Err(PriseError::validation(id, "pseudo_top5", "duplicate scene class"));
        }
    }

    let mut labelled = BTreeSet::new();
    for (k, l) in record.pair_labels.iter().enumerate() {
        let [i, j] = l.pair;
        if !(i < j && j < n) {
            return Err(PriseError::validation(
                id,
                format!("pair_labels[{k}].pair"),
                format!("invalid pair ({i},{j}) for {n} persons"),
            ));
        }
        if !labelled.insert(l.pair) {
            return Err(PriseError::validation(
                id,
                format!("pair_labels[{k}].pair"),
                format!("duplicate label for pair ({i},{j})"),
            ));
        }
        if l.class >= c {
            return Err(PriseError::validation(
                id,
                format!("pair_labels[{k}].class"),
                format!("class {} out of range for C = {c}", l.class),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn toy_record(n: usize, f: usize) -> ImageRecord {
        let v = |seed: usize| (0..f).map(|k| ((seed * 7 + k * 3) % 5) as f64 * 0.25).collect::<Vec<_>>();
        ImageRecord {
            image_id: format!("toy-{n}"),
            n_persons: n,
            boxes: vec![[0.0, 0.0, 1.0, 1.0]; n],
            person_features: (0..n).map(v).collect(),
            union_features: pairs(n)
                .into_iter()
                .map(|(i, j)| UnionFeature {
                    pair: [i, j],
                    feature: v(10 + i * n + j),
                })
                .collect(),
            background_feature: v(99),
            raw_scene_input: Some(v(98)),
            pseudo_top5: Some(vec![0, 1, 2, 3, 4]),
            pair_labels: pairs(n)
                .into_iter()
                .map(|(i, j)| PairLabel {
                    pair: [i, j],
                    class: (i + j) % 3,
                })
                .collect(),
        }
    }

    #[test]
    fn pair_enumeration() {
        assert!(pairs(1).is_empty());
        assert_eq!(pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(pairs(4).len(), 6);
        for n in 1..7 {
            for (k, (i, j)) in pairs(n).into_iter().enumerate() {
                assert_eq!(pair_index(i, j, n), k);
                assert_eq!(pair_index(j, i, n), k);
            }
        }
    }

    #[test]
    fn well_formed_record_is_ok() {
        validate_record(&toy_record(3, 4), 4, 3).unwrap();
        validate_record(&toy_record(1, 4), 4, 3).unwrap();
    }

    #[test]
    fn missing_union_feature_names_pair() {
        let mut r = toy_record(3, 4);
        r.union_features.remove(1);
        let err = validate_record(&r, 4, 3).unwrap_err().to_string();
        assert!(err.contains("(0,2)"), "{err}");
    }

    #[test]
    fn duplicate_pseudo_label_rejected() {
        let mut r = toy_record(2, 4);
        r.pseudo_top5 = Some(vec![1, 2, 3, 3, 4]);
        let err = validate_record(&r, 4, 3).unwrap_err().to_string();
        assert!(err.contains("pseudo_top5"), "{err}");
    }

    #[test]
    fn dimension_and_class_errors_carry_field_path() {
        let mut r = toy_record(2, 4);
        r.person_features[1].pop();
        let err = validate_record(&r, 4, 3).unwrap_err().to_string();
        assert!(err.contains("person_features[1]"), "{err}");

        let mut r = toy_record(2, 4);
        r.pair_labels[0].class = 7;
        let err = validate_record(&r, 4, 3).unwrap_err().to_string();
        assert!(err.contains("pair_labels[0].class"), "{err}");

        let mut r = toy_record(2, 4);
        r.n_persons = 0;
        assert!(validate_record(&r, 4, 3).is_err());
    }

    #[test]
    fn permutation_moves_pairs() {
        let r = toy_record(3, 2);
        let p = r.permute_persons(&[2, 0, 1]);
        validate_record(&p, 2, 3).unwrap();
        assert_eq!(p.person_features[2], r.person_features[0]);
        assert_eq!(p.union_feature(2, 0), r.union_feature(0, 1));
        assert_eq!(p.label(0, 2), r.label(0, 1));
    }
}
