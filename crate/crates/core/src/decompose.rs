//! Decomposition methods: prompt assembly with in-context examples, token
//! budgeting and backoff, completion parsing, and the parse-based method.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{self, SentenceParse};
use crate::corpus::{BankEntry, ExampleBank, Passage, Sentence};
use crate::llm::{CompletionClient, GenerationParams, LlmError};
use crate::predarg::{self, ExtractionOptions, PredargError};
use crate::retrieval::tokenize;

pub const FACTSCORE_INSTRUCTION: &str = "Please breakdown the following sentence into independent facts:";
pub const WICE_INSTRUCTION: &str = "Segment the following sentence into individual facts:";
pub const CHEN_INSTRUCTION: &str = "Given the following sentence, tell me what claims they are making. Please split the sentence as much as possible, but do not include information not in the sentence:";
pub const CONLLU_INSTRUCTION: &str = "The sentence below is given in CoNLL-U format. Word lines contain the annotation of a word/token/node in 10 fields separated by single tab characters. Sentences consist of one or more word lines. Please break down the following sentence given in CoNLL-U format into independent facts:";
pub const RND_INSTRUCTION: &str = "Please decompose the following sentence into individual facts:";

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("method {method} needs {needed} static examples but the bank has {available}")]
    BankTooSmall {
        method: String,
        needed: usize,
        available: usize,
    },
    #[error("method {method} needs parsed examples; bank entry {entry} has none")]
    MissingExampleParse { method: String, entry: usize },
    #[error("method {0} needs an example bank")]
    MissingBank(String),
    #[error("cannot retrieve {k} examples from a bank of {size}")]
    RetrieveTooMany { k: usize, size: usize },
    #[error("passage {passage} sentence {sentence}: method {method} needs a dependency parse")]
    MissingParse {
        passage: usize,
        sentence: usize,
        method: String,
    },
    #[error("empty sentence")]
    EmptySentence,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Predarg(#[from] PredargError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    FActScore,
    Wice,
    Chen,
    Conllu,
    Rnd,
    Fs2,
    PredPatt,
}

/// Shape of a prompted method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptSpec {
    pub instruction: &'static str,
    pub static_count: usize,
    pub retrieved_count: usize,
    pub include_parse: bool,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::FActScore,
        Method::Wice,
        Method::Chen,
        Method::Conllu,
        Method::Rnd,
        Method::Fs2,
        Method::PredPatt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FActScore => "factscore",
            Method::Wice => "wice",
            Method::Chen => "chen",
            Method::Conllu => "conllu",
            Method::Rnd => "rnd",
            Method::Fs2 => "fs2",
            Method::PredPatt => "predpatt",
        }
    }

    /// `None` for the parse-based method.
    pub fn prompt_spec(self) -> Option<PromptSpec> {
        let spec = |instruction, static_count, retrieved_count, include_parse| PromptSpec {
            instruction,
            static_count,
            retrieved_count,
            include_parse,
        };
        match self {
            Method::FActScore => Some(spec(FACTSCORE_INSTRUCTION, 7, 1, false)),
            Method::Wice => Some(spec(WICE_INSTRUCTION, 6, 0, false)),
            Method::Chen => Some(spec(CHEN_INSTRUCTION, 7, 1, false)),
            Method::Conllu => Some(spec(CONLLU_INSTRUCTION, 1, 1, true)),
            Method::Rnd => Some(spec(RND_INSTRUCTION, 7, 1, false)),
            Method::Fs2 => Some(spec(FACTSCORE_INSTRUCTION, 1, 1, false)),
            Method::PredPatt => None,
        }
    }

    pub fn requires_parse(self) -> bool {
        matches!(self, Method::Conllu | Method::PredPatt)
    }

    /// Which method's example bank this method draws from.
    pub fn bank_key(self) -> Option<Method> {
        match self {
            Method::Fs2 => Some(Method::FActScore),
            Method::PredPatt => None,
            m => Some(m),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = DecomposeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DecomposeError::UnknownMethod(s.to_string()))
    }
}

/// A prompted method bound to its examples. Static examples are the first
/// `static_count` bank entries; the rest form the retrieval pool.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub name: String,
    pub instruction: String,
    pub static_examples: Vec<BankEntry>,
    pub retrieved_count: usize,
    pub include_parse: bool,
    pub example_bank: ExampleBank,
}

impl MethodConfig {
    pub fn builtin(method: Method, bank: &ExampleBank) -> Result<Self, DecomposeError> {
        let spec = method
            .prompt_spec()
            .ok_or_else(|| DecomposeError::UnknownMethod(method.name().to_string()))?;
        Self::from_spec(method.name(), spec, bank)
    }

    pub fn from_spec(name: &str, spec: PromptSpec, bank: &ExampleBank) -> Result<Self, DecomposeError> {
        if bank.len() < spec.static_count + spec.retrieved_count {
            return Err(DecomposeError::BankTooSmall {
                method: name.to_string(),
                needed: spec.static_count + spec.retrieved_count,
                available: bank.len(),
            });
        }
        if spec.include_parse {
            if let Some(entry) = bank.entries.iter().position(|e| e.parse().is_none()) {
                return Err(DecomposeError::MissingExampleParse {
                    method: name.to_string(),
                    entry,
                });
            }
        }
        let (statics, pool) = bank.entries.split_at(spec.static_count);
        Ok(MethodConfig {
            name: name.to_string(),
            instruction: spec.instruction.to_string(),
            static_examples: statics.to_vec(),
            retrieved_count: spec.retrieved_count,
            include_parse: spec.include_parse,
            example_bank: ExampleBank {
                entries: pool.to_vec(),
            },
        })
    }
}

/// Top-`k` bank entries by TF-IDF cosine similarity to `sentence`, ties
/// broken by bank order. Entries whose sentence equals `sentence` are
/// skipped.
pub fn retrieve_examples<'b>(
    bank: &'b ExampleBank,
    sentence: &str,
    k: usize,
) -> Result<Vec<&'b BankEntry>, DecomposeError> {
    if k > bank.len() {
        return Err(DecomposeError::RetrieveTooMany { k, size: bank.len() });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let docs: Vec<Vec<String>> = bank.entries.iter().map(|e| tokenize(&e.sentence)).collect();
    let n = docs.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let idf = |t: &str| ((1.0 + n) / (1.0 + *df.get(t).unwrap_or(&0) as f64)).ln() + 1.0;
    let vector = |terms: &[String]| {
        let mut v: BTreeMap<String, f64> = BTreeMap::new();
        for t in terms {
            *v.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        for (t, w) in v.iter_mut() {
            *w *= idf(t);
        }
        v
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();

    let query_terms = tokenize(sentence);
    let query = vector(&query_terms);
    let query_norm = norm(&query);
    let target = sentence.trim();

    let mut scored: Vec<(usize, f64)> = docs
        .iter()
        .enumerate()
        .filter(|(i, _)| bank.entries[*i].sentence.trim() != target)
        .map(|(i, doc)| {
            let v = vector(doc);
            let denom = query_norm * norm(&v);
            let dot: f64 = query.iter().filter_map(|(t, w)| v.get(t).map(|x| w * x)).sum();
            (i, if denom > 0.0 { dot / denom } else { 0.0 })
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, _)| &bank.entries[i])
        .collect())
}

/// Token estimate from character count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEstimator {
    pub chars_per_token: f64,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        TokenEstimator { chars_per_token: 4.0 }
    }
}

impl TokenEstimator {
    pub fn estimate(&self, text: &str) -> usize {
        (text.chars().count() as f64 / self.chars_per_token).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub text: String,
    pub static_used: usize,
    pub retrieved_used: usize,
    pub estimated_tokens: usize,
    /// Still over budget with every example dropped.
    pub over_budget: bool,
}

impl AssembledPrompt {
    pub fn examples_used(&self) -> usize {
        self.static_used + self.retrieved_used
    }
}

fn push_block(out: &mut String, instruction: &str, sentence: &str, parse_block: Option<&str>) {
    out.push_str(instruction);
    out.push('\n');
    out.push_str(sentence);
    out.push('\n');
    if let Some(block) = parse_block {
        out.push_str(block.trim_end_matches('\n'));
        out.push('\n');
    }
}

fn render_prompt(
    config: &MethodConfig,
    examples: &[&BankEntry],
    sentence: &str,
    parse: Option<&SentenceParse>,
) -> String {
    let mut out = String::new();
    for e in examples {
        let block = if config.include_parse {
            e.conllu.as_deref()
        } else {
            None
        };
        push_block(&mut out, &config.instruction, &e.sentence, block);
        for s in &e.subclaims {
            out.push_str("- ");
            out.push_str(s);
            out.push('\n');
        }
        out.push('\n');
    }
    let target_block = match (config.include_parse, parse) {
        (true, Some(p)) => Some(conllu::to_block(p)),
        _ => None,
    };
    push_block(&mut out, &config.instruction, sentence, target_block.as_deref());
    out
}

/// Build the prompt for `sentence`, dropping examples (retrieved ones
/// first, then static ones from the end) until the estimate fits `budget`.
pub fn assemble_prompt(
    config: &MethodConfig,
    sentence: &str,
    parse: Option<&SentenceParse>,
    retrieved: &[&BankEntry],
    budget: usize,
    estimator: &TokenEstimator,
) -> AssembledPrompt {
    assemble_prompt_limited(config, sentence, parse, retrieved, budget, estimator, usize::MAX)
}

/// As [`assemble_prompt`], using at most `max_examples` examples.
pub fn assemble_prompt_limited(
    config: &MethodConfig,
    sentence: &str,
    parse: Option<&SentenceParse>,
    retrieved: &[&BankEntry],
    budget: usize,
    estimator: &TokenEstimator,
    max_examples: usize,
) -> AssembledPrompt {
    let examples: Vec<&BankEntry> = config.static_examples.iter().chain(retrieved.iter().copied()).collect();
    let mut used = examples.len().min(max_examples);
    loop {
        let text = render_prompt(config, &examples[..used], sentence, parse);
        let estimated_tokens = estimator.estimate(&text);
        let fits = estimated_tokens <= budget;
        if fits || used == 0 {
            let static_used = used.min(config.static_examples.len());
            return AssembledPrompt {
                text,
                static_used,
                retrieved_used: used - static_used,
                estimated_tokens,
                over_budget: !fits,
            };
        }
        used -= 1;
    }
}

fn strip_marker(line: &str) -> Option<&str> {
    if let Some(rest) = line.strip_prefix('-').or_else(|| line.strip_prefix('•')) {
        return Some(rest);
    }
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(after) = rest.strip_prefix('.') {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return Some(after);
            }
        }
    }
    None
}

/// Split a completion into subclaims. Lines marked with "-", "•" or "N."
/// are taken with the marker removed; without any marked line, every
/// non-empty line is kept as is.
pub fn parse_subclaims(completion: &str) -> Vec<String> {
    let mut marked = Vec::new();
    let mut plain = Vec::new();
    for line in completion.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match strip_marker(line) {
            Some(mut rest) => {
                rest = rest.trim();
                while let Some(inner) = strip_marker(rest) {
                    rest = inner.trim();
                }
                if !rest.is_empty() {
                    marked.push(rest.to_string());
                }
            }
            None => plain.push(line.to_string()),
        }
    }
    if marked.is_empty() {
        plain
    } else {
        marked
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subclaim {
    pub passage_id: usize,
    pub sentence_index: usize,
    pub ordinal: usize,
    pub method: String,
    pub topic: String,
    pub generator: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentenceDecomposition {
    pub claims: Vec<String>,
    pub warnings: Vec<String>,
    /// The original sentence was used as the only subclaim.
    pub backed_off: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassageDecomposition {
    pub subclaims: Vec<Subclaim>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum Strategy {
    Prompted(MethodConfig),
    PredPatt(ExtractionOptions),
}

/// A method ready to run against a completion endpoint.
#[derive(Debug, Clone)]
pub struct Decomposer {
    pub method: Method,
    pub strategy: Strategy,
    pub params: GenerationParams,
    pub estimator: TokenEstimator,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Decomposer {
    /// Prompted methods need `bank`; the parse-based method ignores it.
    pub fn new(method: Method, bank: Option<&ExampleBank>, params: GenerationParams) -> Result<Self, DecomposeError> {
        let strategy = match method {
            Method::PredPatt => Strategy::PredPatt(ExtractionOptions::all()),
            m => {
                let bank = bank.ok_or_else(|| DecomposeError::MissingBank(m.name().to_string()))?;
                Strategy::Prompted(MethodConfig::builtin(m, bank)?)
            }
        };
        Ok(Decomposer {
            method,
            strategy,
            params,
            estimator: TokenEstimator::default(),
        })
    }

    pub fn name(&self) -> &str {
        match &self.strategy {
            Strategy::Prompted(c) => &c.name,
            Strategy::PredPatt(_) => self.method.name(),
        }
    }

    pub fn requires_parse(&self) -> bool {
        match &self.strategy {
            Strategy::Prompted(c) => c.include_parse,
            Strategy::PredPatt(_) => true,
        }
    }

    pub fn decompose_sentence<C: CompletionClient + ?Sized>(
        &self,
        client: &C,
        sentence: &str,
        parse: Option<&SentenceParse>,
    ) -> Result<SentenceDecomposition, DecomposeError> {
        if sentence.trim().is_empty() {
            return Err(DecomposeError::EmptySentence);
        }
        let mut out = match &self.strategy {
            Strategy::Prompted(config) => self.prompted(client, config, sentence, parse)?,
            Strategy::PredPatt(options) => self.predpatt(client, options, sentence, parse)?,
        };
        if out.claims.is_empty() {
            out.warnings.push(format!("no subclaims for sentence: {sentence}"));
        }
        for w in &out.warnings {
            warn!("{}: {w}", self.name());
        }
        Ok(out)
    }

    fn prompted<C: CompletionClient + ?Sized>(
        &self,
        client: &C,
        config: &MethodConfig,
        sentence: &str,
        parse: Option<&SentenceParse>,
    ) -> Result<SentenceDecomposition, DecomposeError> {
        let k = config.retrieved_count.min(config.example_bank.len());
        let retrieved = retrieve_examples(&config.example_bank, sentence, k)?;
        let budget = self.params.prompt_budget();
        let mut limit = usize::MAX;
        let mut out = SentenceDecomposition::default();
        loop {
            let prompt = assemble_prompt_limited(config, sentence, parse, &retrieved, budget, &self.estimator, limit);
            if prompt.over_budget {
                return Ok(self.back_off(sentence, out));
            }
            match client.complete(&self.params.request(prompt.text.clone())) {
                Ok(response) => {
                    out.claims = parse_subclaims(&response.text);
                    return Ok(out);
                }
                Err(LlmError::ContextLength) if prompt.examples_used() == 0 => {
                    return Ok(self.back_off(sentence, out));
                }
                Err(LlmError::ContextLength) => {
                    out.warnings.push(format!(
                        "endpoint rejected prompt length with {} examples",
                        prompt.examples_used()
                    ));
                    limit = prompt.examples_used() - 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn back_off(&self, sentence: &str, mut out: SentenceDecomposition) -> SentenceDecomposition {
        out.warnings
            .push("prompt exceeds the context window without examples; using the sentence itself".into());
        out.claims = vec![one_line(sentence)];
        out.backed_off = true;
        out
    }

    fn predpatt<C: CompletionClient + ?Sized>(
        &self,
        client: &C,
        options: &ExtractionOptions,
        _sentence: &str,
        parse: Option<&SentenceParse>,
    ) -> Result<SentenceDecomposition, DecomposeError> {
        let parse = parse.ok_or_else(|| DecomposeError::MissingParse {
            passage: 0,
            sentence: 0,
            method: self.name().to_string(),
        })?;
        let mut out = SentenceDecomposition::default();
        for p in predarg::extract_predications(parse, options)? {
            let utterance = predarg::render_predication(parse, &p);
            if utterance.trim().is_empty() {
                continue;
            }
            let rewritten = predarg::fluency_rewrite(client, &self.params, &utterance)?;
            if rewritten.is_empty() {
                out.warnings.push(format!("empty rewrite for `{utterance}`"));
            } else {
                out.claims.push(rewritten);
            }
        }
        Ok(out)
    }

    /// Decompose every sentence of `passage` in order.
    pub fn decompose_passage<C: CompletionClient + ?Sized>(
        &self,
        client: &C,
        passage: &Passage,
    ) -> Result<PassageDecomposition, DecomposeError> {
        if self.requires_parse() {
            if let Some(s) = passage.sentences.iter().find(|s| s.parse.is_none()) {
                return Err(DecomposeError::MissingParse {
                    passage: passage.id,
                    sentence: s.index,
                    method: self.name().to_string(),
                });
            }
        }
        let mut out = PassageDecomposition::default();
        for Sentence { text, index, parse } in &passage.sentences {
            let d = self.decompose_sentence(client, text, parse.as_ref())?;
            out.warnings.extend(
                d.warnings
                    .into_iter()
                    .map(|w| format!("passage {} sentence {index}: {w}", passage.id)),
            );
            out.subclaims.extend(d.claims.into_iter().enumerate().map(|(ordinal, text)| Subclaim {
                passage_id: passage.id,
                sentence_index: *index,
                ordinal,
                method: self.name().to_string(),
                topic: passage.topic.clone(),
                generator: passage.generator.clone(),
                text,
            }));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockClient, MockReply};

    fn entry(sentence: &str, subclaims: &[&str]) -> BankEntry {
        BankEntry {
            sentence: sentence.into(),
            subclaims: subclaims.iter().map(|s| s.to_string()).collect(),
            conllu: None,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("gpt".parse::<Method>(), Err(DecomposeError::UnknownMethod(_))));
    }

    #[test]
    fn subclaim_markers() {
        assert_eq!(parse_subclaims("- X is Y.\n- X is Z."), vec!["X is Y.", "X is Z."]);
        assert_eq!(parse_subclaims("1. A\n2. B"), vec!["A", "B"]);
        assert_eq!(parse_subclaims("No facts."), vec!["No facts."]);
        assert_eq!(parse_subclaims("Here:\n• A\n\n- - B\n-"), vec!["A", "B"]);
        assert_eq!(parse_subclaims("1.5 million people"), vec!["1.5 million people"]);
        assert!(parse_subclaims("\n  \n").is_empty());
    }

    #[test]
    fn retrieval_trivial_cases() {
        let bank = ExampleBank {
            entries: vec![entry("A cat sat.", &["x"])],
        };
        assert!(retrieve_examples(&bank, "anything", 0).unwrap().is_empty());
        assert_eq!(retrieve_examples(&bank, "anything", 1).unwrap()[0].sentence, "A cat sat.");
        assert!(matches!(
            retrieve_examples(&bank, "x", 2),
            Err(DecomposeError::RetrieveTooMany { k: 2, size: 1 })
        ));
        assert!(retrieve_examples(&bank, "A cat sat.", 1).unwrap().is_empty());
    }

    #[test]
    fn estimator_rounds_up() {
        let e = TokenEstimator::default();
        assert_eq!(e.estimate(""), 0);
        assert_eq!(e.estimate("abcde"), 2);
        assert_eq!(e.estimate("abcdefgh"), 2);
    }

    #[test]
    fn backoff_on_endpoint_length_errors() {
        let bank = ExampleBank {
            entries: (0..9).map(|i| entry(&format!("Example {i}."), &["fact"])).collect(),
        };
        let d = Decomposer::new(Method::FActScore, Some(&bank), GenerationParams::decomposition("m")).unwrap();
        let mock = MockClient::constant("- A.\n- B.");
        let out = d.decompose_sentence(&mock, "He sang.", None).unwrap();
        assert_eq!(out.claims, vec!["A.", "B."]);

        let always_long = MockClient::constant("").with_default(MockReply::ContextLength);
        let out = d.decompose_sentence(&always_long, "He  sang.", None).unwrap();
        assert!(out.backed_off);
        assert_eq!(out.claims, vec!["He sang."]);
        // 8 examples, then 7, ..., then 0.
        assert_eq!(always_long.calls(), 9);
    }
}
