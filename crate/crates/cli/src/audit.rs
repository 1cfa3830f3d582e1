//! Re-derive every reported cell from the judgment files by direct counting.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use claimdecomp::corpus::Passage;
use claimdecomp::validate::SupportJudgment;
use log::warn;

use crate::error::{CliError, Result};
use crate::io::read_jsonl;
use crate::pipeline::{knowledge_judgments_path, sentence_judgments_path};
use crate::report::{Table, MACRO_ROW};

pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    subclaims: usize,
    sentence: usize,
    knowledge: usize,
    both: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Expected tables (`stem` → table) for one method, computed from judgments.
fn expected(
    passages: &[Passage],
    sentence: &[SupportJudgment],
    knowledge: Option<&[SupportJudgment]>,
    gamma: Option<f64>,
) -> BTreeMap<&'static str, BTreeMap<String, f64>> {
    let key = |j: &SupportJudgment| (j.subclaim.passage_id, j.subclaim.sentence_index, j.subclaim.ordinal);
    let known: HashMap<_, bool> = knowledge
        .unwrap_or(&[])
        .iter()
        .map(|j| (key(j), j.supported))
        .collect();
    let mut counts: HashMap<usize, Counts> = HashMap::new();
    for j in sentence {
        let c = counts.entry(j.subclaim.passage_id).or_default();
        let k = known.get(&key(j)).copied().unwrap_or(false);
        c.subclaims += 1;
        c.sentence += j.supported as usize;
        c.knowledge += k as usize;
        c.both += (j.supported && k) as usize;
    }
    let mut lms: BTreeMap<&str, Vec<Counts>> = BTreeMap::new();
    for p in passages {
        lms.entry(&p.generator)
            .or_default()
            .push(counts.get(&p.id).copied().unwrap_or_default());
    }
    let penalize = |s: f64, n: usize| match gamma {
        Some(g) => s * (n as f64 / g).min(1.0),
        None => s,
    };

    let mut out: BTreeMap<&'static str, BTreeMap<String, f64>> = BTreeMap::new();
    for (lm, cs) in &lms {
        let per = |f: &dyn Fn(&Counts) -> f64| mean(&cs.iter().map(f).collect::<Vec<_>>());
        let mut put = |stem: &'static str, v: f64| {
            out.entry(stem).or_default().insert(lm.to_string(), v);
        };
        put("decompscore", per(&|c| c.sentence as f64));
        put("subclaims", per(&|c| c.subclaims as f64));
        let total: usize = cs.iter().map(|c| c.subclaims).sum();
        if total > 0 {
            put("coherence", 100.0 * cs.iter().map(|c| c.sentence).sum::<usize>() as f64 / total as f64);
        }
        if knowledge.is_some() {
            put("factscore", 100.0 * per(&|c| penalize(ratio(c.knowledge, c.subclaims), c.subclaims)));
            put("factscore_filtered", 100.0 * per(&|c| penalize(ratio(c.both, c.sentence), c.sentence)));
        }
    }
    for column in out.values_mut() {
        if column.len() == lms.len() {
            let m = mean(&column.values().copied().collect::<Vec<_>>());
            column.insert(MACRO_ROW.to_string(), m);
        }
    }
    out
}

/// Compare each `{stem}.raw.csv` in `out` with a recount. Returns the number
/// of mismatching or missing cells.
pub fn audit(out: &Path, passages: &[Passage], gamma: Option<f64>) -> Result<usize> {
    let mut mismatches = 0;
    let mut checked = 0;
    let mut recounts: HashMap<String, BTreeMap<&'static str, BTreeMap<String, f64>>> = HashMap::new();
    for stem in ["decompscore", "subclaims", "coherence", "factscore", "factscore_filtered"] {
        let path = out.join(format!("{stem}.raw.csv"));
        if !path.exists() {
            continue;
        }
        let table = Table::load(&path)?;
        for method in &table.columns {
            if !recounts.contains_key(method) {
                let sp = sentence_judgments_path(out, method);
                if !sp.exists() {
                    return Err(CliError::Config(format!("{} not found", sp.display())));
                }
                let sentence: Vec<SupportJudgment> = read_jsonl(&sp)?;
                let kp = knowledge_judgments_path(out, method);
                let knowledge: Option<Vec<SupportJudgment>> = if kp.exists() { Some(read_jsonl(&kp)?) } else { None };
                recounts.insert(method.clone(), expected(passages, &sentence, knowledge.as_deref(), gamma));
            }
            let want = recounts[method].get(stem).cloned().unwrap_or_default();
            let got: BTreeMap<String, f64> = table
                .rows
                .iter()
                .filter_map(|(lm, row)| row.get(method).map(|v| (lm.clone(), *v)))
                .collect();
            for lm in want.keys().chain(got.keys().filter(|k| !want.contains_key(*k))) {
                checked += 1;
                match (want.get(lm), got.get(lm)) {
                    (Some(w), Some(g)) if (w - g).abs() <= TOLERANCE * w.abs().max(1.0) => {}
                    (w, g) => {
                        warn!("{stem}.raw.csv {method}/{lm}: reported {g:?}, recount {w:?}");
                        mismatches += 1;
                    }
                }
            }
        }
    }
    if checked == 0 {
        return Err(CliError::Config(format!("no report tables in {}", out.display())));
    }
    log::info!("audit: {checked} cells checked, {mismatches} mismatches");
    Ok(mismatches)
}
