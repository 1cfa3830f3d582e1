//! Decompose, judge and score, with every intermediate persisted as JSON Lines.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use claimdecomp::conllu::parse_conllu;
use claimdecomp::corpus::{self, attach_parses, load_generations_with, ExampleBank, Passage};
use claimdecomp::decompose::{Decomposer, Method, Subclaim};
use claimdecomp::llm::{
    CachedClient, CompletionClient, GenerationParams, HttpClient, HttpConfig, MockClient, MockSpec, OfflineClient,
};
use claimdecomp::metrics::{method_report, passage_results, LengthPenalty, MethodReport};
use claimdecomp::retrieval::{build_index_with, Bm25Params, Index};
use claimdecomp::validate::{
    judge_decomposition_nli, HttpNliClient, MockNliClient, NliClient, NliVerdict, SupportJudgment, Validator,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ValidatorKind};
use crate::error::{CliError, Result};
use crate::io::{parse_jsonl, read_jsonl, to_jsonl, write_atomic};
use crate::report::Table;

pub fn subclaims_path(out: &Path, method: &str) -> PathBuf {
    out.join(format!("subclaims.{method}.jsonl"))
}

pub fn checkpoint_path(out: &Path, method: &str) -> PathBuf {
    out.join("checkpoints").join(format!("subclaims.{method}.jsonl"))
}

pub fn sentence_judgments_path(out: &Path, method: &str) -> PathBuf {
    out.join(format!("judgments.sentence.{method}.jsonl"))
}

pub fn knowledge_judgments_path(out: &Path, method: &str) -> PathBuf {
    out.join(format!("judgments.knowledge.{method}.jsonl"))
}

/// Generations with parses attached when configured.
pub fn load_passages(cfg: &RunConfig) -> Result<Vec<Passage>> {
    let path = cfg.require(&cfg.generations, "generations")?;
    let mut passages = load_generations_with(path, &cfg.fields)?;
    if cfg.parses.is_some() {
        let parses_path = cfg.require(&cfg.parses, "parses")?;
        let text = fs::read_to_string(parses_path).map_err(|e| CliError::io(parses_path, e))?;
        attach_parses(&mut passages, parse_conllu(&text)?)?;
    }
    if passages.is_empty() {
        return Err(CliError::Config(format!("no passages in {}", path.display())));
    }
    Ok(passages)
}

/// Mock, offline or HTTP backend, behind the response cache when one is set.
pub fn build_client(cfg: &RunConfig) -> Result<Box<dyn CompletionClient>> {
    let inner: Box<dyn CompletionClient> = if let Some(path) = &cfg.mock {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let spec: MockSpec =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Box::new(MockClient::from_spec(spec))
    } else if cfg.cache_only {
        Box::new(OfflineClient)
    } else {
        let url = cfg.endpoint.url.as_deref().ok_or_else(|| {
            CliError::Config(format!(
                "no completion endpoint: set {} or use --mock / --cache-only",
                crate::config::ENV_LLM_URL
            ))
        })?;
        let mut http = HttpConfig::new(url);
        http.api_key = cfg.endpoint.api_key.clone();
        http.max_retries = cfg.endpoint.max_retries;
        http.max_inflight = cfg.endpoint.max_inflight;
        http.timeout = Duration::from_secs(cfg.endpoint.timeout_secs);
        Box::new(HttpClient::new(http)?)
    };
    Ok(match &cfg.cache_dir {
        Some(dir) => Box::new(CachedClient::new(inner, dir)?),
        None => inner,
    })
}

/// The example bank for `method`: the configured file, or the bundled bank
/// for `rnd`.
pub fn load_bank(cfg: &RunConfig, method: Method) -> Result<Option<ExampleBank>> {
    let Some(key) = method.bank_key() else {
        return Ok(None);
    };
    if let Some(path) = cfg.banks.get(key.name()) {
        return Ok(Some(corpus::load_example_bank(path)?));
    }
    if key == Method::Rnd {
        return Ok(Some(corpus::rnd_bank()));
    }
    Err(CliError::Config(format!(
        "method {method} needs an example bank: --bank {}=PATH",
        key.name()
    )))
}

pub fn decomposer(cfg: &RunConfig, method: Method) -> Result<Decomposer> {
    let bank = load_bank(cfg, method)?;
    Ok(Decomposer::new(
        method,
        bank.as_ref(),
        GenerationParams::decomposition(&cfg.endpoint.model),
    )?)
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.endpoint.max_inflight)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointLine {
    passage_id: usize,
    subclaims: Vec<Subclaim>,
}

/// Completed passages from a checkpoint. A torn final line is dropped.
fn read_checkpoint(path: &Path) -> Result<HashMap<usize, Vec<Subclaim>>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(HashMap::new());
    };
    let complete = match text.rfind('\n') {
        Some(end) => &text[..=end],
        None => "",
    };
    let lines: Vec<CheckpointLine> = parse_jsonl(path, complete)?;
    Ok(lines.into_iter().map(|l| (l.passage_id, l.subclaims)).collect())
}

/// Decompose every passage with `method` into `out/subclaims.{method}.jsonl`.
/// Finished passages are appended to a checkpoint, so an interrupted run
/// resumes where it stopped. An existing final file is kept as is.
pub fn run_decompose(
    cfg: &RunConfig,
    client: &dyn CompletionClient,
    passages: &[Passage],
    method: Method,
) -> Result<Vec<Subclaim>> {
    let out = &cfg.out_dir;
    let final_path = subclaims_path(out, method.name());
    if final_path.exists() {
        info!("{method}: {} exists; skipping", final_path.display());
        return read_jsonl(&final_path);
    }
    let d = decomposer(cfg, method)?;
    let ckpt = checkpoint_path(out, method.name());
    let done = read_checkpoint(&ckpt)?;
    if !done.is_empty() {
        info!("{method}: resuming with {} of {} passages done", done.len(), passages.len());
    }
    let parent = ckpt.parent().expect("checkpoint has a parent");
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&ckpt)
        .map_err(|e| CliError::io(&ckpt, e))?;
    let file = Mutex::new(file);

    let todo: Vec<&Passage> = passages.iter().filter(|p| !done.contains_key(&p.id)).collect();
    let fresh: Vec<(usize, Vec<Subclaim>)> = pool(cfg)?.install(|| {
        todo.par_iter()
            .map(|p| {
                let result = d.decompose_passage(client, p)?;
                for w in &result.warnings {
                    warn!("{method}: {w}");
                }
                let line = serde_json::to_string(&CheckpointLine {
                    passage_id: p.id,
                    subclaims: result.subclaims.clone(),
                })
                .expect("subclaims serialize");
                let mut f = file.lock().unwrap();
                writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| CliError::io(&ckpt, e))?;
                Ok((p.id, result.subclaims))
            })
            .collect::<Result<_>>()
    })?;

    let mut by_id = done;
    by_id.extend(fresh);
    let subclaims: Vec<Subclaim> = passages
        .iter()
        .flat_map(|p| by_id.remove(&p.id).unwrap_or_default())
        .collect();
    write_atomic(&final_path, to_jsonl(&subclaims).as_bytes())?;
    fs::remove_file(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    let _ = fs::remove_dir(parent);
    info!("{method}: {} subclaims -> {}", subclaims.len(), final_path.display());
    Ok(subclaims)
}

#[derive(Debug, Deserialize)]
struct MockNliSpec {
    #[serde(default)]
    by_hypothesis: HashMap<String, NliVerdict>,
    default: NliVerdict,
}

/// Judge of subclaims against their own sentence.
pub enum SentenceJudge {
    Llm(Validator),
    Nli { client: Box<dyn NliClient>, id: String },
}

impl SentenceJudge {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match cfg.validator.kind {
            ValidatorKind::Llm => Ok(SentenceJudge::Llm(llm_validator(cfg)?)),
            ValidatorKind::Nli => {
                if let Some(path) = &cfg.validator.mock_nli {
                    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                    let spec: MockNliSpec = serde_json::from_str(&text)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    return Ok(SentenceJudge::Nli {
                        client: Box::new(MockNliClient {
                            by_hypothesis: spec.by_hypothesis,
                            default: spec.default,
                        }),
                        id: "nli:mock".into(),
                    });
                }
                let url = cfg.validator.nli_url.as_deref().ok_or_else(|| {
                    CliError::Config(format!("NLI validator needs {} or --nli-url", crate::config::ENV_NLI_URL))
                })?;
                Ok(SentenceJudge::Nli {
                    client: Box::new(HttpNliClient::new(url, Duration::from_secs(cfg.endpoint.timeout_secs))?),
                    id: format!("nli:{url}"),
                })
            }
        }
    }

    fn judge(
        &self,
        client: &dyn CompletionClient,
        sentence: &str,
        subclaims: &[Subclaim],
    ) -> Result<Vec<SupportJudgment>> {
        Ok(match self {
            SentenceJudge::Llm(v) => v.judge_decomposition(client, sentence, subclaims)?,
            SentenceJudge::Nli { client: nli, id } => judge_decomposition_nli(nli.as_ref(), id, sentence, subclaims)?,
        })
    }
}

pub fn llm_validator(cfg: &RunConfig) -> Result<Validator> {
    let mut v = Validator::new(&cfg.endpoint.validator_model);
    if let Some(t) = &cfg.validator.template {
        v = v.with_template(t)?;
    }
    v.top_k = cfg.retrieval.top_k;
    Ok(v)
}

/// Subclaims grouped by passage, in passage order.
fn by_passage<'a>(passages: &[Passage], subclaims: &'a [Subclaim]) -> Result<Vec<(&'a [Subclaim], usize)>> {
    let index: HashMap<usize, usize> = passages.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut groups: Vec<(&[Subclaim], usize)> = Vec::new();
    let mut start = 0;
    while start < subclaims.len() {
        let id = subclaims[start].passage_id;
        let slot = *index
            .get(&id)
            .ok_or_else(|| CliError::Config(format!("subclaim refers to unknown passage {id}")))?;
        let end = start + subclaims[start..].iter().take_while(|s| s.passage_id == id).count();
        groups.push((&subclaims[start..end], slot));
        start = end;
    }
    Ok(groups)
}

/// Sentence-context judgments for every subclaim, in subclaim order.
pub fn judge_sentences(
    cfg: &RunConfig,
    client: &dyn CompletionClient,
    judge: &SentenceJudge,
    passages: &[Passage],
    subclaims: &[Subclaim],
) -> Result<Vec<SupportJudgment>> {
    let groups = by_passage(passages, subclaims)?;
    let per_passage: Vec<Vec<SupportJudgment>> = pool(cfg)?.install(|| {
        groups
            .par_iter()
            .map(|(subs, slot)| {
                let passage = &passages[*slot];
                let mut out = Vec::with_capacity(subs.len());
                let mut rest = *subs;
                while let Some(first) = rest.first() {
                    let n = rest.iter().take_while(|s| s.sentence_index == first.sentence_index).count();
                    let sentence = passage.sentences.get(first.sentence_index).ok_or_else(|| {
                        CliError::Config(format!(
                            "passage {} has no sentence {}",
                            passage.id, first.sentence_index
                        ))
                    })?;
                    out.extend(judge.judge(client, &sentence.text, &rest[..n])?);
                    rest = &rest[n..];
                }
                Ok(out)
            })
            .collect::<Result<_>>()
    })?;
    Ok(per_passage.into_iter().flatten().collect())
}

/// Knowledge-source judgments for every subclaim, in subclaim order.
pub fn judge_knowledge(
    cfg: &RunConfig,
    client: &dyn CompletionClient,
    validator: &Validator,
    index: &Index,
    subclaims: &[Subclaim],
) -> Result<Vec<SupportJudgment>> {
    let chunks: Vec<&[Subclaim]> = subclaims.chunk_by(|a, b| a.passage_id == b.passage_id).collect();
    let per_passage: Vec<Vec<SupportJudgment>> = pool(cfg)?.install(|| {
        chunks
            .par_iter()
            .map(|subs| Ok(validator.judge_facts(client, index, subs)?))
            .collect::<Result<_>>()
    })?;
    Ok(per_passage.into_iter().flatten().collect())
}

/// The persisted index, or one built from the knowledge corpus.
pub fn load_index(cfg: &RunConfig) -> Result<Index> {
    if cfg.index.is_some() {
        let path = cfg.require(&cfg.index, "index")?;
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return Ok(Index::from_json(&text)?);
    }
    let path = cfg.require(&cfg.knowledge, "knowledge corpus or index")?;
    let docs = corpus::load_knowledge(path)?;
    Ok(build_index_with(
        &docs,
        cfg.retrieval.chunk_words,
        Bm25Params {
            k1: cfg.retrieval.k1,
            b: cfg.retrieval.b,
        },
    )?)
}

fn existing_subclaims(cfg: &RunConfig, method: Method) -> Result<Vec<Subclaim>> {
    let path = subclaims_path(&cfg.out_dir, method.name());
    if !path.exists() {
        return Err(CliError::Config(format!(
            "{} not found; run `decompose` for {method} first",
            path.display()
        )));
    }
    read_jsonl(&path)
}

fn penalty(cfg: &RunConfig) -> Option<LengthPenalty> {
    cfg.length_penalty_gamma.map(|gamma| LengthPenalty { gamma })
}

/// Judge every method's subclaims against their sentences and write the
/// DecompScore, #subclaims and coherence tables.
pub fn run_decompscore(
    cfg: &RunConfig,
    client: &dyn CompletionClient,
    passages: &[Passage],
    methods: &[Method],
) -> Result<Vec<MethodReport>> {
    let judge = SentenceJudge::from_config(cfg)?;
    let mut reports = Vec::new();
    for &m in methods {
        let subclaims = existing_subclaims(cfg, m)?;
        let judgments = judge_sentences(cfg, client, &judge, passages, &subclaims)?;
        write_atomic(
            &sentence_judgments_path(&cfg.out_dir, m.name()),
            to_jsonl(&judgments).as_bytes(),
        )?;
        if subclaims.is_empty() {
            warn!("{m}: no subclaims; column omitted");
            continue;
        }
        let results = passage_results(m.name(), passages, &judgments, None)?;
        reports.push(method_report(&results, penalty(cfg))?);
    }
    let out = &cfg.out_dir;
    Table::from_reports(&reports, 1.0, |s| Some(s.decomp_score)).write(out, "decompscore")?;
    Table::from_reports(&reports, 1.0, |s| Some(s.avg_subclaims)).write(out, "subclaims")?;
    Table::from_reports(&reports, 1.0, |s| s.coherence_pct).write(out, "coherence")?;
    Ok(reports)
}

/// Judge every method's subclaims against retrieved knowledge and write the
/// unfiltered and filtered FActScore tables plus scatter data. Missing
/// sentence judgments are computed first.
pub fn run_factscore(
    cfg: &RunConfig,
    client: &dyn CompletionClient,
    passages: &[Passage],
    methods: &[Method],
) -> Result<Vec<MethodReport>> {
    let index = load_index(cfg)?;
    let validator = llm_validator(cfg)?;
    let mut judge = None;
    let mut reports = Vec::new();
    for &m in methods {
        let subclaims = existing_subclaims(cfg, m)?;
        let sentence_path = sentence_judgments_path(&cfg.out_dir, m.name());
        let sentence: Vec<SupportJudgment> = if sentence_path.exists() {
            read_jsonl(&sentence_path)?
        } else {
            if judge.is_none() {
                judge = Some(SentenceJudge::from_config(cfg)?);
            }
            let js = judge_sentences(cfg, client, judge.as_ref().unwrap(), passages, &subclaims)?;
            write_atomic(&sentence_path, to_jsonl(&js).as_bytes())?;
            js
        };
        let knowledge = judge_knowledge(cfg, client, &validator, &index, &subclaims)?;
        write_atomic(
            &knowledge_judgments_path(&cfg.out_dir, m.name()),
            to_jsonl(&knowledge).as_bytes(),
        )?;
        if subclaims.is_empty() {
            warn!("{m}: no subclaims; column omitted");
            continue;
        }
        let results = passage_results(m.name(), passages, &sentence, Some(&knowledge))?;
        reports.push(method_report(&results, penalty(cfg))?);
    }
    let out = &cfg.out_dir;
    Table::from_reports(&reports, 100.0, |s| s.fact_score).write(out, "factscore")?;
    Table::from_reports(&reports, 100.0, |s| s.filtered_fact_score).write(out, "factscore_filtered")?;
    write_atomic(&out.join("scatter.csv"), scatter_csv(&reports).as_bytes())?;
    Ok(reports)
}

/// One row per (method, LM) and per method macro average.
pub fn scatter_csv(reports: &[MethodReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "lm", "avg_subclaims", "decomp_score", "fact_score", "filtered_fact_score"])
        .expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| format!("{}", x * 100.0)).unwrap_or_default();
    for r in reports {
        let rows = r.per_lm.iter().map(|(k, v)| (k.as_str(), v)).chain([("macro", &r.macro_avg)]);
        for (lm, s) in rows {
            w.write_record([
                r.method.clone(),
                lm.to_string(),
                format!("{}", s.avg_subclaims),
                format!("{}", s.decomp_score),
                opt(s.fact_score),
                opt(s.filtered_fact_score),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Methods whose subclaim files are present in `out`.
pub fn methods_in(out: &Path) -> Vec<Method> {
    let present: HashSet<String> = fs::read_dir(out)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    Method::ALL
        .iter()
        .copied()
        .filter(|m| present.contains(&format!("subclaims.{}.jsonl", m.name())))
        .collect()
}

/// Group LM names for logging.
pub fn lms(passages: &[Passage]) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for p in passages {
        *out.entry(p.generator.as_str()).or_insert(0) += 1;
    }
    out
}
