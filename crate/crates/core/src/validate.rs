//! Binary support judgments against the original sentence or retrieved
//! knowledge, and the NLI entailment client.

use std::collections::HashMap;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::Subclaim;
use crate::llm::{CompletionClient, GenerationParams, LlmError};
use crate::retrieval::{Index, DEFAULT_TOP_K};

pub const SUPPORT_TEMPLATE: &str = "{context}\n\nClaim: {claim}\nTrue or False?";

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("empty claim")]
    EmptyClaim,
    #[error("template must contain {{context}} and {{claim}} exactly once")]
    BadTemplate,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("invalid NLI verdict {0:?}: probabilities must lie in [0,1] and sum to 1")]
    InvalidVerdict(NliVerdict),
    #[error("NLI endpoint failed: {0}")]
    Nli(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    OriginalSentence,
    KnowledgeSource,
    Nli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportJudgment {
    pub subclaim: Subclaim,
    pub context_kind: ContextKind,
    pub supported: bool,
    pub validator_id: String,
    pub context_snapshot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Outcome of one true/false query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportAnswer {
    pub supported: bool,
    /// False when the completion held neither "true" nor "false".
    pub parsed: bool,
}

/// First alphabetic run of `completion`, lowercased.
fn first_word(completion: &str) -> String {
    completion
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect()
}

pub fn parse_answer(completion: &str) -> SupportAnswer {
    match first_word(completion).as_str() {
        "true" => SupportAnswer {
            supported: true,
            parsed: true,
        },
        "false" => SupportAnswer {
            supported: false,
            parsed: true,
        },
        _ => SupportAnswer {
            supported: false,
            parsed: false,
        },
    }
}

/// LLM validator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validator {
    pub params: GenerationParams,
    pub template: String,
    pub validator_id: String,
    pub top_k: usize,
    pub chars_per_token: f64,
}

impl Validator {
    pub fn new(model: &str) -> Self {
        Validator {
            params: GenerationParams::validation(model),
            template: SUPPORT_TEMPLATE.to_string(),
            validator_id: model.to_string(),
            top_k: DEFAULT_TOP_K,
            chars_per_token: 4.0,
        }
    }

    pub fn with_template(mut self, template: &str) -> Result<Self, ValidateError> {
        if template.matches("{context}").count() != 1 || template.matches("{claim}").count() != 1 {
            return Err(ValidateError::BadTemplate);
        }
        self.template = template.to_string();
        Ok(self)
    }

    pub fn prompt(&self, context: &str, claim: &str) -> String {
        // Substitute the claim first so braces inside the context stay literal.
        let (before, after) = self.template.split_once("{context}").unwrap_or((&self.template, ""));
        format!(
            "{}{}{}",
            before.replace("{claim}", claim),
            context,
            after.replace("{claim}", claim)
        )
    }

    /// Characters of context that fit the prompt budget next to `claim`.
    pub fn context_budget(&self, claim: &str) -> usize {
        let total = (self.params.prompt_budget() as f64 * self.chars_per_token) as usize;
        total.saturating_sub(self.prompt("", claim).chars().count())
    }

    pub fn judge_support<C: CompletionClient + ?Sized>(
        &self,
        client: &C,
        context: &str,
        claim: &str,
    ) -> Result<SupportAnswer, ValidateError> {
        if claim.trim().is_empty() {
            return Err(ValidateError::EmptyClaim);
        }
        let response = client.complete(&self.params.request(self.prompt(context, claim)))?;
        let answer = parse_answer(&response.text);
        if !answer.parsed {
            warn!("unparseable validator answer {:?} for claim {claim:?}", response.text);
        }
        Ok(answer)
    }

    fn judgment(
        &self,
        subclaim: &Subclaim,
        kind: ContextKind,
        context: String,
        answer: SupportAnswer,
        warning: Option<String>,
    ) -> SupportJudgment {
        let warning = warning.or_else(|| (!answer.parsed).then(|| "unparseable validator answer".to_string()));
        SupportJudgment {
            subclaim: subclaim.clone(),
            context_kind: kind,
            supported: answer.supported,
            validator_id: self.validator_id.clone(),
            context_snapshot: context,
            warning,
        }
    }

    /// One judgment per subclaim, in order, with the sentence as context.
    pub fn judge_decomposition<C: CompletionClient + ?Sized>(
        &self,
        client: &C,
        sentence: &str,
        subclaims: &[Subclaim],
    ) -> Result<Vec<SupportJudgment>, ValidateError> {
        subclaims
            .iter()
            .map(|s| {
                let answer = self.judge_support(client, sentence, &s.text)?;
                Ok(self.judgment(s, ContextKind::OriginalSentence, sentence.to_string(), answer, None))
            })
            .collect()
    }

    /// Retrieval context for `subclaim`: top chunks from its topic's
    /// document when indexed, else from the whole corpus, truncated to fit.
    pub fn knowledge_context(&self, index: &Index, subclaim: &Subclaim) -> String {
        let restrict = index.has_title(&subclaim.topic).then_some(subclaim.topic.as_str());
        let hits = index.search(&subclaim.text, self.top_k, restrict);
        let joined = hits
            .iter()
            .map(|h| h.chunk.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        let budget = self.context_budget(&subclaim.text);
        match joined.char_indices().nth(budget) {
            Some((cut, _)) => joined[..cut].to_string(),
            None => joined,
        }
    }

    /// One judgment per subclaim against retrieved knowledge. Subclaims
    /// with no retrievable context are unsupported without a model call.
    pub fn judge_facts<C: CompletionClient + ?Sized>(
        &self,
        client: &C,
        index: &Index,
        subclaims: &[Subclaim],
    ) -> Result<Vec<SupportJudgment>, ValidateError> {
        subclaims
            .iter()
            .map(|s| {
                let context = self.knowledge_context(index, s);
                if context.is_empty() {
                    warn!("no knowledge context for claim {:?}", s.text);
                    let answer = SupportAnswer {
                        supported: false,
                        parsed: true,
                    };
                    return Ok(self.judgment(
                        s,
                        ContextKind::KnowledgeSource,
                        context,
                        answer,
                        Some("no retrieved context".into()),
                    ));
                }
                let answer = self.judge_support(client, &context, &s.text)?;
                Ok(self.judgment(s, ContextKind::KnowledgeSource, context, answer, None))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliVerdict {
    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Self {
        NliVerdict {
            entailment,
            neutral,
            contradiction,
        }
    }

    pub fn validate(&self) -> Result<(), ValidateError> {
        let p = [self.entailment, self.neutral, self.contradiction];
        let in_range = p.iter().all(|x| (0.0..=1.0).contains(x));
        if !in_range || (p.iter().sum::<f64>() - 1.0).abs() > 1e-3 {
            return Err(ValidateError::InvalidVerdict(*self));
        }
        Ok(())
    }

    /// Entailment wins only as the strict-or-first maximum.
    pub fn entails(&self) -> bool {
        self.entailment >= self.neutral && self.entailment >= self.contradiction
    }
}

pub trait NliClient: Send + Sync {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, ValidateError>;
}

pub fn nli_entails<N: NliClient + ?Sized>(nli: &N, premise: &str, hypothesis: &str) -> Result<bool, ValidateError> {
    let verdict = nli.classify(premise, hypothesis)?;
    verdict.validate()?;
    Ok(verdict.entails())
}

/// Judge subclaims by entailment from their sentence.
pub fn judge_decomposition_nli<N: NliClient + ?Sized>(
    nli: &N,
    validator_id: &str,
    sentence: &str,
    subclaims: &[Subclaim],
) -> Result<Vec<SupportJudgment>, ValidateError> {
    subclaims
        .iter()
        .map(|s| {
            Ok(SupportJudgment {
                subclaim: s.clone(),
                context_kind: ContextKind::Nli,
                supported: nli_entails(nli, sentence, &s.text)?,
                validator_id: validator_id.to_string(),
                context_snapshot: sentence.to_string(),
                warning: None,
            })
        })
        .collect()
}

/// POSTs `{premise, hypothesis}` and reads `{entailment, neutral, contradiction}`.
#[derive(Debug)]
pub struct HttpNliClient {
    url: String,
    http: reqwest::blocking::Client,
}

impl HttpNliClient {
    pub fn new(url: &str, timeout: Duration) -> Result<Self, ValidateError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ValidateError::Nli(e.to_string()))?;
        Ok(HttpNliClient {
            url: url.to_string(),
            http,
        })
    }
}

impl NliClient for HttpNliClient {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, ValidateError> {
        let response = self
            .http
            .post(&self.url)
            .json(&serde_json::json!({ "premise": premise, "hypothesis": hypothesis }))
            .send()
            .map_err(|e| ValidateError::Nli(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ValidateError::Nli(format!("HTTP {status}")));
        }
        response.json().map_err(|e| ValidateError::Nli(e.to_string()))
    }
}

/// Verdicts keyed by hypothesis, with a fallback.
#[derive(Debug, Clone)]
pub struct MockNliClient {
    pub by_hypothesis: HashMap<String, NliVerdict>,
    pub default: NliVerdict,
}

impl NliClient for MockNliClient {
    fn classify(&self, _premise: &str, hypothesis: &str) -> Result<NliVerdict, ValidateError> {
        Ok(*self.by_hypothesis.get(hypothesis).unwrap_or(&self.default))
    }
}
