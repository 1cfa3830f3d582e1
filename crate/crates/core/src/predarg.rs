//! Predicate-argument extraction from dependency parses, rendering of the
//! extracted structures, and LLM fluency rewriting.
//!
//! Rules (each optional rule fires only when its option is on):
//!
//! * verbal: a `VERB` heading a clause (or an `AUX` root) with its
//!   `nsubj`/`obj`/`iobj`/`ccomp`/`xcomp`/`obl`/`csubj` dependents as
//!   arguments;
//! * copular: a non-verbal clause head with a `cop` dependent;
//! * appositive: `appos` yields "HEAD is/are APPOS";
//! * adjectival: `amod` yields "NOUN is/are ADJ";
//! * possessive: `nmod:poss` yields "POSSESSOR poss HEAD";
//! * relative clauses: `acl:relcl` heads become predicates; with
//!   `borrow_arg_for_relcl` the relative pronoun is replaced by the
//!   modified noun;
//! * conjunction: conjuncts in an argument slot or a nominal predicate
//!   position each get their own predication, and conjoined predicates
//!   without a subject borrow their governor's;
//! * strip: edge punctuation and leading coordinators are trimmed from
//!   every span.
//!
//! Argument spans are full subtrees minus possessor and appositive
//! subtrees when those rules are on (the dropped material is reported by
//! its own predication). Adjectival copular predicates keep their copula;
//! nominal and oblique ones render it as "is/are".

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::conllu::{self, SentenceParse, Token, Violation};
use crate::llm::{CompletionClient, GenerationParams, LlmError};

pub const BE_MARKER: &str = "is/are";
pub const POSS_MARKER: &str = "poss";

#[derive(Debug, Error)]
pub enum PredargError {
    #[error("invalid parse: {0}")]
    InvalidParse(Violation),
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("rewrite of `{utterance}` failed: {source}")]
    Rewrite {
        utterance: String,
        #[source]
        source: LlmError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PredicationKind {
    Verbal,
    Copular,
    Appositive,
    Adjectival,
    Possessive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Predication {
    /// Token the predication is anchored on; used for ordering.
    pub head: usize,
    pub kind: PredicationKind,
    pub predicate_tokens: BTreeSet<usize>,
    pub argument_slots: Vec<BTreeSet<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExtractionOptions {
    pub resolve_relative_clauses: bool,
    pub appositives: bool,
    pub adjectival_modifiers: bool,
    pub expand_conjunction: bool,
    pub possessives: bool,
    pub borrow_arg_for_relcl: bool,
    pub strip: bool,
}

impl ExtractionOptions {
    /// Every option on.
    pub fn all() -> Self {
        ExtractionOptions {
            resolve_relative_clauses: true,
            appositives: true,
            adjectival_modifiers: true,
            expand_conjunction: true,
            possessives: true,
            borrow_arg_for_relcl: true,
            strip: true,
        }
    }

    /// Every option off: only verbal and copular predications.
    pub fn none() -> Self {
        ExtractionOptions {
            resolve_relative_clauses: false,
            appositives: false,
            adjectival_modifiers: false,
            expand_conjunction: false,
            possessives: false,
            borrow_arg_for_relcl: false,
            strip: false,
        }
    }
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        Self::all()
    }
}

const CLAUSAL: &[&str] = &["root", "conj", "ccomp", "advcl", "parataxis", "csubj", "list"];
const CORE_ARGS: &[&str] = &["nsubj", "obj", "iobj", "ccomp", "xcomp", "obl", "csubj"];
const SUBJECTS: &[&str] = &["nsubj", "csubj"];
const VERBAL_PREDICATE_DEPS: &[&str] = &["aux", "advmod", "compound"];
/// Dependents of a clause head that never belong to a nominal span.
const CLAUSE_LEVEL: &[&str] = &[
    "nsubj", "csubj", "cop", "aux", "mark", "advcl", "parataxis", "discourse", "vocative", "expl",
    "dislocated", "obl", "ccomp", "xcomp", "obj", "iobj", "list", "orphan", "reparandum",
];
const RELATIVE_PRONOUNS: &[&str] = &["who", "whom", "which", "that"];

type Span = BTreeSet<usize>;

struct Extractor<'a> {
    words: Vec<&'a Token>,
    children: Vec<Vec<usize>>,
    opts: ExtractionOptions,
}

impl<'a> Extractor<'a> {
    fn new(parse: &'a SentenceParse, opts: ExtractionOptions) -> Self {
        let words: Vec<&Token> = parse.words().collect();
        let mut children = vec![Vec::new(); words.len() + 1];
        for (i, t) in words.iter().enumerate() {
            if let Some(h) = t.head {
                children[h].push(i + 1);
            }
        }
        Extractor {
            words,
            children,
            opts,
        }
    }

    fn tok(&self, id: usize) -> &Token {
        self.words[id - 1]
    }

    fn base(&self, id: usize) -> &str {
        self.tok(id).base_deprel()
    }

    fn kids(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    fn kids_with(&self, id: usize, bases: &[&str]) -> Vec<usize> {
        self.kids(id)
            .iter()
            .copied()
            .filter(|&c| bases.contains(&self.base(c)))
            .collect()
    }

    fn has_cop(&self, id: usize) -> bool {
        !self.kids_with(id, &["cop"]).is_empty()
    }

    fn is_clause_position(&self, id: usize) -> bool {
        let t = self.tok(id);
        CLAUSAL.contains(&t.base_deprel())
            || (self.opts.resolve_relative_clauses && t.deprel == "acl:relcl")
    }

    fn is_verbal_head(&self, id: usize) -> bool {
        let t = self.tok(id);
        if self.has_cop(id) {
            return false;
        }
        (t.upos == "VERB" && self.is_clause_position(id)) || (t.upos == "AUX" && t.deprel == "root")
    }

    fn is_copular_head(&self, id: usize) -> bool {
        self.tok(id).upos != "VERB" && self.has_cop(id) && self.is_clause_position(id)
    }

    fn is_predicate_head(&self, id: usize) -> bool {
        self.is_verbal_head(id) || self.is_copular_head(id)
    }

    /// Looks like a clause: has a subject or copula, or is the root.
    fn is_clause_like(&self, id: usize) -> bool {
        self.tok(id).deprel == "root" || !self.kids_with(id, &["nsubj", "csubj", "cop"]).is_empty()
    }

    fn is_relative_pronoun(&self, id: usize) -> bool {
        let t = self.tok(id);
        t.upos == "PRON"
            && (t.has_feature("PronType=Rel") || RELATIVE_PRONOUNS.contains(&t.form.to_lowercase().as_str()))
    }

    /// Dependents pruned from every span because another rule reports them.
    fn reported_elsewhere(&self, id: usize) -> bool {
        let t = self.tok(id);
        (self.opts.possessives && t.deprel == "nmod:poss")
            || (self.opts.appositives && t.base_deprel() == "appos")
    }

    /// `id` and its descendants, minus pruned dependents and `exclude`.
    fn subtree(&self, id: usize, exclude: Option<usize>, out: &mut Span) {
        out.insert(id);
        for &c in self.kids(id) {
            if Some(c) == exclude || self.reported_elsewhere(c) {
                continue;
            }
            self.subtree(c, exclude, out);
        }
    }

    /// Span of `id` skipping the direct children for which `skip` holds.
    fn span_with(&self, id: usize, exclude: Option<usize>, skip: impl Fn(usize) -> bool) -> Span {
        let mut out = Span::new();
        out.insert(id);
        for &c in self.kids(id) {
            if Some(c) == exclude || skip(c) || self.reported_elsewhere(c) {
                continue;
            }
            self.subtree(c, exclude, &mut out);
        }
        self.strip(out)
    }

    fn splits_off(&self, child: usize) -> bool {
        self.base(child) == "conj" && (self.opts.expand_conjunction || self.is_predicate_head(child))
    }

    /// Nominal phrase headed by `id` without its clause-level material.
    fn nominal_span(&self, id: usize, exclude: Option<usize>) -> Span {
        let clause_like = self.is_clause_like(id);
        self.span_with(id, exclude, |c| {
            let base = self.base(c);
            CLAUSE_LEVEL.contains(&base)
                || (base == "punct" && clause_like)
                || self.splits_off(c)
                || (base == "cc" && self.opts.expand_conjunction)
        })
    }

    /// A conjunct without its own coordinator and separating punctuation.
    fn conjunct_span(&self, id: usize) -> Span {
        self.span_with(id, None, |c| {
            matches!(self.base(c), "cc" | "punct") || self.splits_off(c) || self.is_predicate_head(c)
        })
    }

    fn expandable_conjuncts(&self, id: usize) -> Vec<usize> {
        if !self.opts.expand_conjunction {
            return Vec::new();
        }
        self.kids_with(id, &["conj"])
            .into_iter()
            .filter(|&c| !self.is_predicate_head(c))
            .collect()
    }

    /// Alternatives for an argument slot headed by `head`: one per conjunct.
    fn slot(&self, head: usize) -> Vec<Span> {
        let conjuncts = self.expandable_conjuncts(head);
        let first = self.span_with(head, None, |c| {
            conjuncts.contains(&c) || (!conjuncts.is_empty() && self.base(c) == "cc")
        });
        let mut alternatives = vec![first];
        if !conjuncts.is_empty() {
            // Conjuncts inherit the first conjunct's preposition.
            let case = self.kids_with(head, &["case"]);
            for c in conjuncts {
                let mut span = self.conjunct_span(c);
                if self.kids_with(c, &["case"]).is_empty() {
                    span.extend(case.iter().copied());
                }
                alternatives.push(span);
            }
        }
        alternatives.retain(|s| !s.is_empty());
        alternatives
    }

    fn strip(&self, mut span: Span) -> Span {
        if !self.opts.strip {
            return span;
        }
        while let Some(&first) = span.iter().next() {
            let t = self.tok(first);
            if t.upos == "PUNCT" || t.base_deprel() == "cc" {
                span.remove(&first);
            } else {
                break;
            }
        }
        while let Some(&last) = span.iter().next_back() {
            if self.tok(last).upos == "PUNCT" {
                span.remove(&last);
            } else {
                break;
            }
        }
        span
    }

    /// Subject slot of a clause head, borrowed from the governor for
    /// conjoined predicates when conjunction handling is on.
    fn subject_slot(&self, id: usize) -> Option<Vec<Span>> {
        if let Some(&s) = self.kids_with(id, SUBJECTS).first() {
            return Some(self.slot(s));
        }
        let t = self.tok(id);
        if self.opts.expand_conjunction && t.base_deprel() == "conj" {
            return self.subject_slot(t.head?);
        }
        None
    }

    /// Replace a relative pronoun argument with the modified noun.
    fn borrow_for_relcl(&self, head: usize, slots: &mut Vec<(usize, Vec<Span>)>) {
        let t = self.tok(head);
        if !(self.opts.resolve_relative_clauses && self.opts.borrow_arg_for_relcl && t.deprel == "acl:relcl") {
            return;
        }
        let Some(noun) = t.head.filter(|&h| h > 0) else {
            return;
        };
        let borrowed = self.nominal_span(noun, Some(head));
        let mut replaced = false;
        for (slot_head, alternatives) in slots.iter_mut() {
            if self.is_relative_pronoun(*slot_head) {
                *alternatives = vec![borrowed.clone()];
                replaced = true;
            }
        }
        let has_subject = slots.iter().any(|(h, _)| SUBJECTS.contains(&self.base(*h)));
        if !replaced && !has_subject {
            slots.insert(0, (noun, vec![borrowed]));
        }
    }

    fn verbal(&self, head: usize, out: &mut Vec<Predication>) {
        let mut predicate = Span::new();
        predicate.insert(head);
        for c in self.kids_with(head, VERBAL_PREDICATE_DEPS) {
            if !self.reported_elsewhere(c) {
                self.subtree(c, None, &mut predicate);
            }
        }
        let mut slots: Vec<(usize, Vec<Span>)> = self
            .kids_with(head, CORE_ARGS)
            .into_iter()
            .map(|c| (c, self.slot(c)))
            .filter(|(_, alts)| !alts.is_empty())
            .collect();
        if !slots.iter().any(|(h, _)| SUBJECTS.contains(&self.base(*h))) {
            if let Some(subject) = self.subject_slot(head) {
                slots.insert(0, (0, subject));
            }
        }
        self.borrow_for_relcl(head, &mut slots);
        let predicate = self.strip(predicate);
        let slot_alts: Vec<Vec<Span>> = slots.into_iter().map(|(_, a)| a).collect();
        push_product(head, PredicationKind::Verbal, &predicate, &slot_alts, out);
    }

    fn copular(&self, head: usize, out: &mut Vec<Predication>) {
        let keep_copula = self.tok(head).upos == "ADJ";
        let conjuncts = self.expandable_conjuncts(head);
        let predicate = self.span_with(head, None, |c| {
            let base = self.base(c);
            match base {
                "cop" | "aux" => !keep_copula,
                "punct" | "mark" | "cc" => true,
                "conj" => conjuncts.contains(&c) || self.is_predicate_head(c),
                _ => SUBJECTS.contains(&base) || CLAUSE_LEVEL.contains(&base) && base != "obl",
            }
        });
        let mut slots: Vec<(usize, Vec<Span>)> = Vec::new();
        if let Some(&s) = self.kids_with(head, SUBJECTS).first() {
            slots.push((s, self.slot(s)));
        } else if let Some(subject) = self.subject_slot(head) {
            slots.push((0, subject));
        }
        self.borrow_for_relcl(head, &mut slots);
        let slot_alts: Vec<Vec<Span>> = slots.into_iter().map(|(_, a)| a).collect();
        push_product(head, PredicationKind::Copular, &predicate, &slot_alts, out);

        let copula: Span = if keep_copula {
            self.kids_with(head, &["cop", "aux"]).into_iter().collect()
        } else {
            Span::new()
        };
        for c in conjuncts {
            let mut p = self.conjunct_span(c);
            p.extend(copula.iter().copied());
            push_product(c, PredicationKind::Copular, &p, &slot_alts, out);
        }
    }

    /// Appositive, adjectival and possessive predications anchored on
    /// dependent `dep` of noun `noun`.
    fn modifier(&self, dep: usize, noun: usize, out: &mut Vec<Predication>) {
        let deprel = self.tok(dep).deprel.as_str();
        let base = self.base(dep);
        if self.opts.possessives && deprel == "nmod:poss" {
            let possessor = self.span_with(dep, None, |c| self.base(c) == "case");
            let possessed = self.nominal_span(noun, Some(dep));
            push_product(
                dep,
                PredicationKind::Possessive,
                &Span::new(),
                &[vec![possessor], vec![possessed]],
                out,
            );
            return;
        }
        let kind = match base {
            "appos" if self.opts.appositives => PredicationKind::Appositive,
            "amod" if self.opts.adjectival_modifiers => PredicationKind::Adjectival,
            _ => return,
        };
        let argument = vec![self.nominal_span(noun, Some(dep))];
        let conjuncts = self.expandable_conjuncts(dep);
        let predicate = self.span_with(dep, None, |c| {
            conjuncts.contains(&c) || (!conjuncts.is_empty() && self.base(c) == "cc")
        });
        push_product(dep, kind, &predicate, std::slice::from_ref(&argument), out);
        for c in conjuncts {
            push_product(c, kind, &self.conjunct_span(c), std::slice::from_ref(&argument), out);
        }
    }

    fn extract(&self) -> Vec<Predication> {
        let mut out = Vec::new();
        for id in 1..=self.words.len() {
            if self.is_verbal_head(id) {
                self.verbal(id, &mut out);
            } else if self.is_copular_head(id) {
                self.copular(id, &mut out);
            }
            if let Some(noun) = self.tok(id).head.filter(|&h| h > 0) {
                self.modifier(id, noun, &mut out);
            }
        }
        out.retain(|p| !p.predicate_tokens.is_empty() || !p.argument_slots.is_empty());
        out.sort_by_key(|p| (p.head, p.kind));
        out
    }
}

/// One predication per combination of slot alternatives.
fn push_product(
    head: usize,
    kind: PredicationKind,
    predicate: &Span,
    slots: &[Vec<Span>],
    out: &mut Vec<Predication>,
) {
    let mut combos: Vec<Vec<Span>> = vec![Vec::new()];
    for alternatives in slots {
        if alternatives.is_empty() {
            continue;
        }
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                alternatives.iter().map(move |alt| {
                    let mut next = prefix.clone();
                    next.push(alt.clone());
                    next
                })
            })
            .collect();
    }
    for mut argument_slots in combos {
        for slot in &mut argument_slots {
            slot.retain(|t| !predicate.contains(t));
        }
        argument_slots.retain(|s| !s.is_empty());
        out.push(Predication {
            head,
            kind,
            predicate_tokens: predicate.clone(),
            argument_slots,
        });
    }
}

/// Extract predications, ordered by anchor token then rule kind.
pub fn extract_predications(
    parse: &SentenceParse,
    options: &ExtractionOptions,
) -> Result<Vec<Predication>, PredargError> {
    if let Some(v) = conllu::validate_parse(parse).into_iter().next() {
        return Err(PredargError::InvalidParse(v));
    }
    Ok(Extractor::new(parse, *options).extract())
}

fn forms(parse: &SentenceParse, span: &Span) -> Vec<String> {
    span.iter()
        .filter_map(|&id| parse.word(id).map(|t| t.form.clone()))
        .collect()
}

/// Linearize a predication: surface order, with "is/are" or "poss" where
/// the relation has no token of its own.
pub fn render_predication(parse: &SentenceParse, predication: &Predication) -> String {
    let arg = |i: usize| {
        predication
            .argument_slots
            .get(i)
            .map(|s| forms(parse, s))
            .unwrap_or_default()
    };
    let predicate = forms(parse, &predication.predicate_tokens);
    let joined = |parts: Vec<Vec<String>>| {
        parts
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join(" ")
    };
    let has_copula = predication
        .predicate_tokens
        .iter()
        .any(|&id| parse.word(id).is_some_and(|t| t.base_deprel() == "cop"));

    match predication.kind {
        PredicationKind::Verbal => {
            let mut all = predication.predicate_tokens.clone();
            for s in &predication.argument_slots {
                all.extend(s.iter().copied());
            }
            forms(parse, &all).join(" ")
        }
        PredicationKind::Copular if has_copula => {
            let mut all = predication.predicate_tokens.clone();
            for s in &predication.argument_slots {
                all.extend(s.iter().copied());
            }
            forms(parse, &all).join(" ")
        }
        PredicationKind::Copular | PredicationKind::Appositive | PredicationKind::Adjectival => {
            joined(vec![arg(0), vec![BE_MARKER.to_string()], predicate])
        }
        PredicationKind::Possessive => joined(vec![arg(0), vec![POSS_MARKER.to_string()], arg(1)]),
    }
}

/// Prompt used to turn a rendered predication into a fluent sentence.
pub const REWRITE_TEMPLATE: &str = "Please turn my input utterances into a grammatically correct natural English sentence by resolving tense, fixing grammatical errors, and reordering words without changing meanings. Your output should not contain \"is/are\" or \"poss\". Your output should contain no hallucinated information and no redundant sentences. Just the modified utterance.

Input: born 1908 community leader
Output: The community leader was born in 1908.

Input: date of death is/are unknown
Output: The date of death is unknown.

Input: was an African - American social worker activist
Output: They were an African-American social worker activist.

Input: <subclaim>
Output:";

pub fn rewrite_prompt(utterance: &str) -> String {
    REWRITE_TEMPLATE.replace("<subclaim>", utterance)
}

/// Ask the model for a fluent version of `utterance`; the first non-empty
/// line of the completion is returned.
pub fn fluency_rewrite<C: CompletionClient + ?Sized>(
    client: &C,
    params: &GenerationParams,
    utterance: &str,
) -> Result<String, PredargError> {
    if utterance.trim().is_empty() {
        return Err(PredargError::EmptyUtterance);
    }
    let response = client
        .complete(&params.request(rewrite_prompt(utterance)))
        .map_err(|source| PredargError::Rewrite {
            utterance: utterance.to_string(),
            source,
        })?;
    Ok(response
        .text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string())
}
