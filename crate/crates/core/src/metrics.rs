//! DecompScore, FActScore, coherence, filtering, macro-averaging and
//! Pearson correlation.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;
use crate::validate::SupportJudgment;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no values to aggregate")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two pairs")]
    TooFew,
    #[error("zero variance")]
    ZeroVariance,
    #[error("no subclaims in group")]
    NoSubclaims,
    #[error("results mix methods {0} and {1}")]
    MixedMethods(String, String),
    #[error("passage {0}: filtered counts missing")]
    MissingFilter(usize),
    #[error("passage {passage}: judgment for unknown subclaim {sentence}/{ordinal}")]
    UnknownSubclaim {
        passage: usize,
        sentence: usize,
        ordinal: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageResult {
    pub passage_id: usize,
    pub topic: String,
    /// LM that generated the passage.
    pub generator: String,
    pub method: String,
    pub n_subclaims: usize,
    pub n_supported_by_sentence: usize,
    pub n_supported_by_knowledge: Option<usize>,
    /// Subclaims supported by both the sentence and the knowledge source.
    pub n_supported_by_knowledge_filtered: Option<usize>,
}

/// Per-passage counts from judgment records. Every passage appears, even
/// with no subclaims. Sentence judgments define the subclaim set.
pub fn passage_results(
    method: &str,
    passages: &[Passage],
    sentence_judgments: &[SupportJudgment],
    knowledge_judgments: Option<&[SupportJudgment]>,
) -> Result<Vec<PassageResult>, MetricsError> {
    type Key = (usize, usize, usize);
    let key = |j: &SupportJudgment| (j.subclaim.passage_id, j.subclaim.sentence_index, j.subclaim.ordinal);
    let sentence: HashMap<Key, bool> = sentence_judgments
        .iter()
        .filter(|j| j.subclaim.method == method)
        .map(|j| (key(j), j.supported))
        .collect();
    let knowledge: Option<HashMap<Key, bool>> = knowledge_judgments.map(|js| {
        js.iter()
            .filter(|j| j.subclaim.method == method)
            .map(|j| (key(j), j.supported))
            .collect()
    });
    if let Some(k) = &knowledge {
        if let Some(&(passage, sentence_idx, ordinal)) = k.keys().find(|k| !sentence.contains_key(k)) {
            return Err(MetricsError::UnknownSubclaim {
                passage,
                sentence: sentence_idx,
                ordinal,
            });
        }
    }

    let mut by_passage: BTreeMap<usize, Vec<(Key, bool)>> = BTreeMap::new();
    for (k, s) in &sentence {
        by_passage.entry(k.0).or_default().push((*k, *s));
    }
    Ok(passages
        .iter()
        .map(|p| {
            let rows = by_passage.get(&p.id).map(Vec::as_slice).unwrap_or(&[]);
            let counted = knowledge.as_ref().map(|k| {
                let kn = rows.iter().filter(|(key, _)| k.get(key) == Some(&true)).count();
                let both = rows
                    .iter()
                    .filter(|(key, s)| *s && k.get(key) == Some(&true))
                    .count();
                (kn, both)
            });
            PassageResult {
                passage_id: p.id,
                topic: p.topic.clone(),
                generator: p.generator.clone(),
                method: method.to_string(),
                n_subclaims: rows.len(),
                n_supported_by_sentence: rows.iter().filter(|(_, s)| *s).count(),
                n_supported_by_knowledge: counted.map(|c| c.0),
                n_supported_by_knowledge_filtered: counted.map(|c| c.1),
            }
        })
        .collect())
}

fn check_single_method(results: &[PassageResult]) -> Result<(), MetricsError> {
    let first = results.first().ok_or(MetricsError::Empty)?;
    match results.iter().find(|r| r.method != first.method) {
        Some(other) => Err(MetricsError::MixedMethods(first.method.clone(), other.method.clone())),
        None => Ok(()),
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Result<f64, MetricsError> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(sum / n as f64)
}

/// Mean number of sentence-supported subclaims per passage.
pub fn decomp_score(results: &[PassageResult]) -> Result<f64, MetricsError> {
    check_single_method(results)?;
    mean(results.iter().map(|r| r.n_supported_by_sentence as f64))
}

pub fn avg_subclaims(results: &[PassageResult]) -> Result<f64, MetricsError> {
    check_single_method(results)?;
    mean(results.iter().map(|r| r.n_subclaims as f64))
}

/// Short-output multiplier `min(1, n / gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthPenalty {
    pub gamma: f64,
}

/// Per-passage numerator and denominator for FActScore.
pub fn fact_counts(r: &PassageResult, use_filter: bool) -> Result<(usize, usize), MetricsError> {
    let missing = || MetricsError::MissingFilter(r.passage_id);
    if use_filter {
        Ok((r.n_supported_by_knowledge_filtered.ok_or_else(missing)?, r.n_supported_by_sentence))
    } else {
        Ok((r.n_supported_by_knowledge.ok_or_else(missing)?, r.n_subclaims))
    }
}

/// Mean per-passage fraction of knowledge-supported subclaims. The filtered
/// variant keeps only sentence-supported subclaims. Passages with a zero
/// denominator score 0.
pub fn fact_score(
    results: &[PassageResult],
    use_filter: bool,
    penalty: Option<LengthPenalty>,
) -> Result<f64, MetricsError> {
    check_single_method(results)?;
    let mut scores = Vec::with_capacity(results.len());
    for r in results {
        let (num, den) = fact_counts(r, use_filter)?;
        if den == 0 {
            warn!("passage {}: no subclaims to score; counted as 0", r.passage_id);
            scores.push(0.0);
            continue;
        }
        let mut s = num as f64 / den as f64;
        if let Some(LengthPenalty { gamma }) = penalty {
            s *= (den as f64 / gamma).min(1.0);
        }
        scores.push(s);
    }
    mean(scores)
}

/// Percentage of subclaims supported by their sentence (ratio of sums).
pub fn coherence_pct(results: &[PassageResult]) -> Result<f64, MetricsError> {
    check_single_method(results)?;
    let total: usize = results.iter().map(|r| r.n_subclaims).sum();
    if total == 0 {
        return Err(MetricsError::NoSubclaims);
    }
    let supported: usize = results.iter().map(|r| r.n_supported_by_sentence).sum();
    Ok(100.0 * supported as f64 / total as f64)
}

/// Subclaims whose aligned judgment is supported, in order.
pub fn apply_filter<T: Clone>(subclaims: &[T], judgments: &[SupportJudgment]) -> Result<Vec<T>, MetricsError> {
    if subclaims.len() != judgments.len() {
        return Err(MetricsError::LengthMismatch(subclaims.len(), judgments.len()));
    }
    Ok(subclaims
        .iter()
        .zip(judgments)
        .filter(|(_, j)| j.supported)
        .map(|(s, _)| s.clone())
        .collect())
}

pub fn macro_average(per_lm: &BTreeMap<String, f64>) -> Result<f64, MetricsError> {
    mean(per_lm.values().copied())
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFew);
    }
    let mx = mean(xs.iter().copied())?;
    let my = mean(ys.iter().copied())?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LmScores {
    pub decomp_score: f64,
    pub avg_subclaims: f64,
    pub coherence_pct: Option<f64>,
    pub fact_score: Option<f64>,
    pub filtered_fact_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub per_lm: BTreeMap<String, LmScores>,
    pub macro_avg: LmScores,
}

fn macro_of(per_lm: &BTreeMap<String, LmScores>, f: impl Fn(&LmScores) -> Option<f64>) -> Option<f64> {
    let values: BTreeMap<String, f64> = per_lm
        .iter()
        .filter_map(|(k, v)| f(v).map(|x| (k.clone(), x)))
        .collect();
    if values.len() != per_lm.len() {
        return None;
    }
    macro_average(&values).ok()
}

/// Scores per generating LM, then macro averages across LMs. FActScore
/// entries are present when knowledge counts are.
pub fn method_report(results: &[PassageResult], penalty: Option<LengthPenalty>) -> Result<MethodReport, MetricsError> {
    check_single_method(results)?;
    let mut groups: BTreeMap<String, Vec<PassageResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.generator.clone()).or_default().push(r.clone());
    }
    let mut per_lm = BTreeMap::new();
    for (lm, rs) in groups {
        let has_knowledge = rs.iter().all(|r| r.n_supported_by_knowledge.is_some());
        let scores = LmScores {
            decomp_score: decomp_score(&rs)?,
            avg_subclaims: avg_subclaims(&rs)?,
            coherence_pct: coherence_pct(&rs).ok(),
            fact_score: if has_knowledge { Some(fact_score(&rs, false, penalty)?) } else { None },
            filtered_fact_score: if has_knowledge { Some(fact_score(&rs, true, penalty)?) } else { None },
        };
        per_lm.insert(lm, scores);
    }
    let macro_avg = LmScores {
        decomp_score: macro_of(&per_lm, |s| Some(s.decomp_score)).unwrap_or(0.0),
        avg_subclaims: macro_of(&per_lm, |s| Some(s.avg_subclaims)).unwrap_or(0.0),
        coherence_pct: macro_of(&per_lm, |s| s.coherence_pct),
        fact_score: macro_of(&per_lm, |s| s.fact_score),
        filtered_fact_score: macro_of(&per_lm, |s| s.filtered_fact_score),
    };
    Ok(MethodReport {
        method: results[0].method.clone(),
        per_lm,
        macro_avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: usize, s: usize, k: usize, f: usize) -> PassageResult {
        PassageResult {
            passage_id: 0,
            topic: "t".into(),
            generator: "g".into(),
            method: "m".into(),
            n_subclaims: n,
            n_supported_by_sentence: s,
            n_supported_by_knowledge: Some(k),
            n_supported_by_knowledge_filtered: Some(f),
        }
    }

    #[test]
    fn decomp_examples() {
        let rs = [r(3, 3, 0, 0), r(5, 5, 0, 0), r(4, 4, 0, 0)];
        assert_eq!(decomp_score(&rs).unwrap(), 4.0);
        assert_eq!(decomp_score(&[r(2, 0, 0, 0)]).unwrap(), 0.0);
        assert_eq!(decomp_score(&[r(9, 7, 0, 0)]).unwrap(), 7.0);
        assert_eq!(decomp_score(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn fact_examples() {
        assert_eq!(fact_score(&[r(8, 8, 6, 6)], false, None).unwrap(), 0.75);
        assert_eq!(fact_score(&[r(4, 4, 4, 4)], false, None).unwrap(), 1.0);
        assert_eq!(fact_score(&[r(2, 2, 1, 1), r(3, 3, 3, 3)], false, None).unwrap(), 0.75);
        assert_eq!(fact_score(&[r(0, 0, 0, 0)], false, None).unwrap(), 0.0);
        assert_eq!(fact_score(&[r(4, 2, 3, 1)], true, None).unwrap(), 0.5);
        let p = Some(LengthPenalty { gamma: 8.0 });
        assert_eq!(fact_score(&[r(4, 4, 4, 4)], false, p).unwrap(), 0.5);
    }

    #[test]
    fn coherence_examples() {
        assert!((coherence_pct(&[r(43, 42, 0, 0)]).unwrap() - 97.674_418_6).abs() < 1e-6);
        assert_eq!(coherence_pct(&[r(5, 5, 0, 0)]).unwrap(), 100.0);
        assert_eq!(coherence_pct(&[r(5, 0, 0, 0)]).unwrap(), 0.0);
        assert_eq!(coherence_pct(&[r(0, 0, 0, 0)]), Err(MetricsError::NoSubclaims));
    }

    #[test]
    fn macro_and_pearson_examples() {
        let m: BTreeMap<String, f64> = [("a".to_string(), 1.0), ("b".to_string(), 3.0)].into();
        assert_eq!(macro_average(&m).unwrap(), 2.0);
        assert_eq!(macro_average(&BTreeMap::new()), Err(MetricsError::Empty));
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::ZeroVariance));
        assert_eq!(pearson(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn mixed_methods_rejected() {
        let mut b = r(1, 1, 1, 1);
        b.method = "other".into();
        assert!(matches!(decomp_score(&[r(1, 1, 1, 1), b]), Err(MetricsError::MixedMethods(..))));
    }
}
