//! Classification metrics. Ties are resolved deterministically: argmax picks
//! the lowest class index, ranking for AP keeps input order among equal
//! scores, and AUC counts tied positive/negative pairs as one half.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{PriseError, Result};

pub const TIE_RULES: &str =
    "argmax ties -> lowest class index; AP ranking ties -> input order; AUC ties -> 1/2";

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPrediction {
    pub true_class: usize,
    pub scores: Vec<f64>,
}

impl ScoredPrediction {
    pub fn new(true_class: usize, scores: Vec<f64>) -> Result<Self> {
        if true_class >= scores.len() {
            return Err(PriseError::Data(format!(
                "true class {true_class} out of range for {} scores",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(PriseError::Data("non-finite prediction score".into()));
        }
        Ok(Self { true_class, scores })
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.scores)
    }
}

/// First index of the maximum.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

fn non_empty(preds: &[ScoredPrediction], what: &str) -> Result<()> {
    if preds.is_empty() {
        return Err(PriseError::Data(format!("{what}: no predictions")));
    }
    Ok(())
}

pub fn accuracy(preds: &[ScoredPrediction]) -> Result<f64> {
    non_empty(preds, "accuracy")?;
    let hits = preds.iter().filter(|p| p.predicted() == p.true_class).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `None` marks a class with no samples.
pub fn per_class_recall(preds: &[ScoredPrediction], c: usize) -> Vec<Option<f64>> {
    let mut total = vec![0usize; c];
    let mut hit = vec![0usize; c];
    for p in preds {
        if p.true_class < c {
            total[p.true_class] += 1;
            if p.predicted() == p.true_class {
                hit[p.true_class] += 1;
            }
        }
    }
    (0..c)
        .map(|k| (total[k] > 0).then(|| hit[k] as f64 / total[k] as f64))
        .collect()
}

/// `confusion[true][predicted]`.
pub fn confusion_matrix(preds: &[ScoredPrediction], c: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; c]; c];
    for p in preds {
        let q = p.predicted();
        if p.true_class < c && q < c {
            m[p.true_class][q] += 1;
        }
    }
    m
}

/// Non-interpolated AP; `None` if there are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "scores/labels length");
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if positive[k] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / n_pos as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes without positives, left out of the mean.
    pub excluded: Vec<usize>,
}

pub fn mean_average_precision(preds: &[ScoredPrediction], c: usize) -> Result<MapReport> {
    non_empty(preds, "mAP")?;
    let mut per_class = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    for k in 0..c {
        let scores: Vec<f64> = preds.iter().map(|p| p.scores[k]).collect();
        let labels: Vec<bool> = preds.iter().map(|p| p.true_class == k).collect();
        let ap = average_precision(&scores, &labels);
        if ap.is_none() {
            log::warn!("mAP: class {k} has no positives; excluded");
            excluded.push(k);
        }
        per_class.push(ap);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(PriseError::Data("mAP: no class has a positive sample".into()));
    }
    Ok(MapReport {
        map: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        excluded,
    })
}

/// Mann–Whitney AUC via average ranks.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(PriseError::Data("auc: scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PriseError::Data("auc: both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        // ranks k+1 ..= end share their average
        let avg = (k + 1 + end) as f64 / 2.0;
        rank_sum += avg * order[k..end].iter().filter(|&&i| positive[i]).count() as f64;
        k = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Accuracy must equal the frequency-weighted mean of recalls.
pub fn check_accuracy_identity(preds: &[ScoredPrediction], c: usize) -> Result<()> {
    let acc = accuracy(preds)?;
    let n = preds.len() as f64;
    let mut counts = vec![0usize; c];
    for p in preds {
        counts[p.true_class.min(c - 1)] += 1;
    }
    let weighted: f64 = per_class_recall(preds, c)
        .iter()
        .zip(&counts)
        .map(|(r, &m)| r.unwrap_or(0.0) * m as f64 / n)
        .sum();
    if (acc - weighted).abs() > 1e-12 {
        return Err(PriseError::Training(format!(
            "accuracy {acc} differs from frequency-weighted recall {weighted}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub map: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
    /// Accuracy of always predicting the most frequent true class.
    pub majority_baseline: f64,
}

impl MetricReport {
    pub fn compute(preds: &[ScoredPrediction], c: usize) -> Result<Self> {
        non_empty(preds, "metric report")?;
        if let Some(p) = preds.iter().find(|p| p.scores.len() != c) {
            return Err(PriseError::Data(format!(
                "prediction has {} scores, expected {c}",
                p.scores.len()
            )));
        }
        check_accuracy_identity(preds, c)?;
        let map = mean_average_precision(preds, c)?;
        let mut counts = vec![0usize; c];
        for p in preds {
            counts[p.true_class] += 1;
        }
        let majority = counts.iter().copied().max().unwrap_or(0);
        Ok(Self {
            samples: preds.len(),
            accuracy: accuracy(preds)?,
            per_class_recall: per_class_recall(preds, c),
            map: map.map,
            per_class_ap: map.per_class,
            confusion: confusion_matrix(preds, c),
            majority_baseline: majority as f64 / preds.len() as f64,
        })
    }

    /// `name<TAB>value` lines, after a `#` header with the tie rules.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        let mut out = format!("# {TIE_RULES}\n");
        let _ = writeln!(out, "samples\t{}", self.samples);
        let _ = writeln!(out, "accuracy\t{}", self.accuracy);
        let _ = writeln!(out, "majority_baseline\t{}", self.majority_baseline);
        let _ = writeln!(out, "mAP\t{}", self.map);
        for (k, r) in self.per_class_recall.iter().enumerate() {
            let _ = writeln!(out, "recall.{k}\t{}", fmt(*r));
        }
        for (k, a) in self.per_class_ap.iter().enumerate() {
            let _ = writeln!(out, "ap.{k}\t{}", fmt(*a));
        }
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, n) in row.iter().enumerate() {
                let _ = writeln!(out, "confusion.{t}.{p}\t{n}");
            }
        }
        out
    }
}
