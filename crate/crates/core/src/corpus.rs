//! Generated passages, example banks and knowledge documents.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::conllu::{self, SentenceParse};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: field `{field}` must be non-empty")]
    EmptyField { line: usize, field: String },
    #[error("line {line}: duplicate sentence in example bank: {sentence}")]
    DuplicateSentence { line: usize, sentence: String },
    #[error("line {line}: example has no subclaims")]
    NoSubclaims { line: usize },
    #[error("line {line}: bad CoNLL-U: {source}")]
    Parse {
        line: usize,
        #[source]
        source: conllu::ConlluError,
    },
    #[error("duplicate document title: {0}")]
    DuplicateTitle(String),
    #[error("parse `{0}` does not match any passage sentence")]
    UnmatchedParse(String),
}

/// One sentence of a passage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub text: String,
    pub index: usize,
    pub parse: Option<SentenceParse>,
}

/// One generated biography.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    /// Position of the record in its generations file.
    pub id: usize,
    pub topic: String,
    pub generator: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

const REFUSAL_PREFIXES: &[&str] = &[
    "i'm sorry",
    "i am sorry",
    "i apologize",
    "sorry,",
    "i don't have",
    "i do not have",
    "i'm not sure",
    "i could not find",
    "i couldn't find",
    "as an ai",
];

impl Passage {
    pub fn new(id: usize, topic: &str, generator: &str, text: &str) -> Self {
        let sentences = split_sentences(text)
            .into_iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                text,
                index,
                parse: None,
            })
            .collect();
        Passage {
            id,
            topic: topic.to_string(),
            generator: generator.to_string(),
            text: text.to_string(),
            sentences,
        }
    }

    /// Heuristic for refusals such as "I'm sorry, I don't have any
    /// information on ...". Such passages are kept unless a caller drops them.
    pub fn is_invalid_response(&self) -> bool {
        let lower = self.text.trim_start().to_lowercase();
        lower.is_empty() || REFUSAL_PREFIXES.iter().any(|p| lower.starts_with(p))
    }
}

/// Field names used when reading generation records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub topic: String,
    pub generator: String,
    pub output: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            topic: "topic".into(),
            generator: "generator".into(),
            output: "output".into(),
        }
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Non-blank lines as (1-based line number, JSON object).
type Record = (usize, Map<String, Value>);

fn json_lines(text: &str) -> Result<Vec<Record>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        match value {
            Value::Object(map) => out.push((line_no, map)),
            _ => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: "expected a JSON object".into(),
                })
            }
        }
    }
    Ok(out)
}

fn string_field<'a>(
    map: &'a Map<String, Value>,
    field: &str,
    line: usize,
) -> Result<&'a str, CorpusError> {
    match map.get(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(CorpusError::Malformed {
            line,
            message: format!("field `{field}` must be a string"),
        }),
        None => Err(CorpusError::MissingField {
            line,
            field: field.to_string(),
        }),
    }
}

pub fn parse_generations(text: &str, fields: &FieldMap) -> Result<Vec<Passage>, CorpusError> {
    json_lines(text)?
        .into_iter()
        .enumerate()
        .map(|(id, (line, map))| {
            let topic = string_field(&map, &fields.topic, line)?;
            let generator = string_field(&map, &fields.generator, line)?;
            let output = string_field(&map, &fields.output, line)?;
            for (name, value) in [(&fields.topic, topic), (&fields.generator, generator)] {
                if value.trim().is_empty() {
                    return Err(CorpusError::EmptyField {
                        line,
                        field: name.clone(),
                    });
                }
            }
            Ok(Passage::new(id, topic, generator, output))
        })
        .collect()
}

/// Read a JSON Lines generations file, one passage per record.
pub fn load_generations(path: &Path) -> Result<Vec<Passage>, CorpusError> {
    load_generations_with(path, &FieldMap::default())
}

pub fn load_generations_with(path: &Path, fields: &FieldMap) -> Result<Vec<Passage>, CorpusError> {
    parse_generations(&read(path)?, fields)
}

/// Inverse of [`parse_generations`] with the default field names.
pub fn write_generations(passages: &[Passage]) -> String {
    let mut out = String::new();
    for p in passages {
        let record = serde_json::json!({
            "topic": p.topic,
            "generator": p.generator,
            "output": p.text,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

/// Attach parses whose `# sent_id` is `p{passage}-s{sentence}`.
pub fn attach_parses(passages: &mut [Passage], parses: Vec<SentenceParse>) -> Result<(), CorpusError> {
    let index: HashMap<usize, usize> = passages.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    for parse in parses {
        let sent_id = parse.meta("sent_id").unwrap_or("").to_string();
        let slot = sent_id
            .strip_prefix('p')
            .and_then(|rest| rest.split_once("-s"))
            .and_then(|(p, s)| Some((p.parse::<usize>().ok()?, s.parse::<usize>().ok()?)))
            .and_then(|(p, s)| {
                let passage = *index.get(&p)?;
                (s < passages[passage].sentences.len()).then_some((passage, s))
            });
        match slot {
            Some((p, s)) => passages[p].sentences[s].parse = Some(parse),
            None => return Err(CorpusError::UnmatchedParse(sent_id)),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sentence splitting

/// Words that never end a sentence when followed by a period.
const ABBREVIATIONS: &[&str] = &[
    "Mr", "Mrs", "Ms", "Dr", "Prof", "Sr", "Jr", "St", "Mt", "Ft", "Gen", "Col", "Lt", "Sgt",
    "Capt", "Cmdr", "Adm", "Gov", "Sen", "Rep", "Rev", "Hon", "Pres", "Inc", "Co", "Corp", "Ltd",
    "Bros", "No", "vs", "approx", "ca", "cf", "Jan", "Feb", "Mar", "Apr", "Jun", "Jul", "Aug",
    "Sep", "Sept", "Oct", "Nov", "Dec", "Ave", "Blvd", "Dept", "Univ", "Vol", "al",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201D}' | '\u{2019}')
}

fn opens_sentence(c: char) -> bool {
    c.is_uppercase()
        || c.is_ascii_digit()
        || matches!(c, '"' | '\'' | '\u{201C}' | '\u{2018}' | '(' | '[')
}

/// The word ending just before byte offset `dot` (exclusive of the period).
fn word_before(text: &str, dot: usize) -> &str {
    let head = &text[..dot];
    let start = head
        .rfind(|c: char| c.is_whitespace() || c == '(' || c == '"' || c == '\u{201C}')
        .map(|i| i + head[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    &head[start..]
}

fn protected(word: &str) -> bool {
    let mut chars = word.chars();
    // Single capital initial: "A. B. Smith".
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_uppercase() {
            return true;
        }
    }
    // Dotted acronyms: "U.S", "e.g", "Ph.D".
    if word.contains('.') && word.split('.').all(|p| !p.is_empty() && p.len() <= 2) {
        return true;
    }
    ABBREVIATIONS.contains(&word)
}

/// Rule-based English sentence splitter.
///
/// A boundary is a run of `.`, `!` or `?` (plus closing quotes) at
/// parenthesis depth zero, followed by whitespace and then an uppercase
/// letter, digit, opening quote or bracket. A period after a protected word
/// (abbreviation list, single capital initial, dotted acronym) is not a
/// boundary. A blank line is always a boundary.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start = 0;
    let mut depth: usize = 0;
    let mut i = 0;

    let push = |from: usize, to: usize, out: &mut Vec<String>| {
        let s = text[from..to].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    };

    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            '\n' => {
                // Blank line: newline, optional horizontal space, newline.
                let mut j = i + 1;
                while j < chars.len() && chars[j].1 != '\n' && chars[j].1.is_whitespace() {
                    j += 1;
                }
                if j < chars.len() && chars[j].1 == '\n' {
                    push(start, pos, &mut sentences);
                    start = chars[j].0;
                    depth = 0;
                    i = j + 1;
                    continue;
                }
            }
            _ if is_terminator(c) && depth == 0 => {
                let mut j = i;
                while j < chars.len() && is_terminator(chars[j].1) {
                    j += 1;
                }
                while j < chars.len() && is_closing_quote(chars[j].1) {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
                let mut k = j;
                while k < chars.len() && chars[k].1.is_whitespace() {
                    k += 1;
                }
                let followed = k > j && k < chars.len() && opens_sentence(chars[k].1);
                let abbreviation = c == '.' && j == i + 1 && protected(word_before(text, pos));
                if followed && !abbreviation {
                    push(start, end, &mut sentences);
                    start = end;
                    i = k;
                    continue;
                }
                i = j;
                continue;
            }
            _ => {}
        }
        i += 1;
    }
    push(start, text.len(), &mut sentences);
    sentences
}

// ---------------------------------------------------------------------------
// Example banks

/// A manually decomposed in-context example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub sentence: String,
    pub subclaims: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conllu: Option<String>,
}

impl BankEntry {
    pub fn parse(&self) -> Option<SentenceParse> {
        let text = self.conllu.as_deref()?;
        conllu::parse_conllu(text).ok()?.into_iter().next()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExampleBank {
    pub entries: Vec<BankEntry>,
}

impl ExampleBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The 21 Russellian / neo-Davidsonian decompositions used by the `rnd`
/// method.
pub const RND_BANK: &str = include_str!("../assets/rnd_bank.jsonl");

pub fn rnd_bank() -> ExampleBank {
    parse_example_bank(RND_BANK).expect("bundled R-ND bank is valid")
}

pub fn parse_example_bank(text: &str) -> Result<ExampleBank, CorpusError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (line, map) in json_lines(text)? {
        let entry: BankEntry =
            serde_json::from_value(Value::Object(map)).map_err(|e| CorpusError::Malformed {
                line,
                message: e.to_string(),
            })?;
        if entry.subclaims.is_empty() {
            return Err(CorpusError::NoSubclaims { line });
        }
        if !seen.insert(entry.sentence.clone()) {
            return Err(CorpusError::DuplicateSentence {
                line,
                sentence: entry.sentence,
            });
        }
        if let Some(text) = &entry.conllu {
            conllu::parse_conllu(text).map_err(|source| CorpusError::Parse { line, source })?;
        }
        entries.push(entry);
    }
    Ok(ExampleBank { entries })
}

pub fn load_example_bank(path: &Path) -> Result<ExampleBank, CorpusError> {
    parse_example_bank(&read(path)?)
}

// ---------------------------------------------------------------------------
// Knowledge source

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub title: String,
    pub text: String,
}

pub fn parse_knowledge(text: &str) -> Result<Vec<KnowledgeDoc>, CorpusError> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, map) in json_lines(text)? {
        let title = string_field(&map, "title", line)?.to_string();
        let body = string_field(&map, "text", line)?.to_string();
        if !seen.insert(title.clone()) {
            return Err(CorpusError::DuplicateTitle(title));
        }
        docs.push(KnowledgeDoc { title, text: body });
    }
    Ok(docs)
}

pub fn load_knowledge(path: &Path) -> Result<Vec<KnowledgeDoc>, CorpusError> {
    parse_knowledge(&read(path)?)
}
