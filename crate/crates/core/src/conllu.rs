//! CoNLL-U reading, writing and structural validation.
//!
//! Word lines carry ten tab-separated fields. Sentences are separated by a
//! blank line and may be preceded by `#` comment lines. Multiword-token
//! ranges (`1-2`) and empty nodes (`3.1`) are kept verbatim but take no part
//! in the dependency-graph checks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// The canonical value for an empty field.
pub const EMPTY_FIELD: &str = "_";

#[derive(Debug, Error, PartialEq)]
pub enum ConlluError {
    #[error("line {line}: expected 10 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: invalid token id `{id}`")]
    InvalidId { line: usize, id: String },
    #[error("line {line}: invalid head `{head}`")]
    InvalidHead { line: usize, head: String },
    #[error("line {line}: comment after word lines")]
    MisplacedComment { line: usize },
    #[error("sentence starting at line {line}: {violation}")]
    Invalid { line: usize, violation: Violation },
    #[error("sentence {index}: {violation}")]
    InvalidParse { index: usize, violation: Violation },
}

/// Token identifier: a regular word, a multiword range, or an empty node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenId {
    Word(usize),
    Range(usize, usize),
    Empty(usize, usize),
}

impl TokenId {
    pub fn word(&self) -> Option<usize> {
        match self {
            TokenId::Word(id) => Some(*id),
            _ => None,
        }
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenId::Word(id) => write!(f, "{id}"),
            TokenId::Range(a, b) => write!(f, "{a}-{b}"),
            TokenId::Empty(a, b) => write!(f, "{a}.{b}"),
        }
    }
}

impl FromStr for TokenId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        fn num(s: &str) -> Result<usize, ()> {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(());
            }
            s.parse().map_err(|_| ())
        }
        if let Some((a, b)) = s.split_once('-') {
            let (a, b) = (num(a)?, num(b)?);
            if a == 0 || b < a {
                return Err(());
            }
            Ok(TokenId::Range(a, b))
        } else if let Some((a, b)) = s.split_once('.') {
            let b = num(b)?;
            if b == 0 {
                return Err(());
            }
            Ok(TokenId::Empty(num(a)?, b))
        } else {
            match num(s)? {
                0 => Err(()),
                id => Ok(TokenId::Word(id)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// `None` serializes as `_` (multiword ranges, empty nodes).
    pub head: Option<usize>,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl Token {
    /// A regular word with the remaining fields empty.
    pub fn word(id: usize, form: &str, upos: &str, head: usize, deprel: &str) -> Self {
        Token {
            id: TokenId::Word(id),
            form: form.to_string(),
            lemma: EMPTY_FIELD.to_string(),
            upos: upos.to_string(),
            xpos: EMPTY_FIELD.to_string(),
            feats: EMPTY_FIELD.to_string(),
            head: Some(head),
            deprel: deprel.to_string(),
            deps: EMPTY_FIELD.to_string(),
            misc: EMPTY_FIELD.to_string(),
        }
    }

    /// Relation label without its subtype (`nmod:poss` -> `nmod`).
    pub fn base_deprel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or("")
    }

    pub fn has_feature(&self, feature: &str) -> bool {
        self.feats.split('|').any(|f| f == feature)
    }

    fn to_line(&self) -> String {
        let head = self.head.map(|h| h.to_string());
        let fields = [
            self.id.to_string(),
            self.form.clone(),
            self.lemma.clone(),
            self.upos.clone(),
            self.xpos.clone(),
            self.feats.clone(),
            head.unwrap_or_default(),
            self.deprel.clone(),
            self.deps.clone(),
            self.misc.clone(),
        ];
        fields
            .iter()
            .map(|f| if f.is_empty() { EMPTY_FIELD } else { f.as_str() })
            .collect::<Vec<_>>()
            .join("\t")
    }
}

/// One dependency-analysed sentence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SentenceParse {
    /// Leading comment lines, including the `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
}

impl SentenceParse {
    pub fn new(tokens: Vec<Token>) -> Self {
        SentenceParse {
            comments: Vec::new(),
            tokens,
        }
    }

    /// Regular word tokens in order.
    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens
            .iter()
            .filter(|t| matches!(t.id, TokenId::Word(_)))
    }

    pub fn word(&self, id: usize) -> Option<&Token> {
        self.words().find(|t| t.id == TokenId::Word(id))
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }

    /// Dependents of a regular word, in id order.
    pub fn children(&self, id: usize) -> Vec<&Token> {
        self.words().filter(|t| t.head == Some(id)).collect()
    }

    /// Space-joined forms of the regular words.
    pub fn surface(&self) -> String {
        self.words()
            .map(|t| t.form.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Value of a `# key = value` comment.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let rest = c.strip_prefix('#')?.trim_start();
            let (k, v) = rest.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    NonContiguousIds,
    MissingHead,
    MissingRoot,
    MultipleRoots,
    DanglingHead,
    Cycle,
}

/// A broken structural invariant, attributed to a token where possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub token: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rule = match self.kind {
            ViolationKind::Empty => "no word lines",
            ViolationKind::NonContiguousIds => "non-contiguous ids",
            ViolationKind::MissingHead => "missing head",
            ViolationKind::MissingRoot => "no root",
            ViolationKind::MultipleRoots => "multiple roots",
            ViolationKind::DanglingHead => "dangling head",
            ViolationKind::Cycle => "cyclic heads",
        };
        match self.token {
            Some(id) => write!(f, "token {id}: {rule}"),
            None => f.write_str(rule),
        }
    }
}

/// Check the dependency invariants of the regular words. Returns an empty
/// list iff the parse is well formed.
pub fn validate_parse(parse: &SentenceParse) -> Vec<Violation> {
    let mut violations = Vec::new();
    let words: Vec<&Token> = parse.words().collect();
    if words.is_empty() {
        violations.push(Violation {
            token: None,
            kind: ViolationKind::Empty,
        });
        return violations;
    }

    for (expected, token) in (1..).zip(&words) {
        if token.id != TokenId::Word(expected) {
            violations.push(Violation {
                token: token.id.word(),
                kind: ViolationKind::NonContiguousIds,
            });
            break;
        }
    }

    let n = words.len();
    let ids: BTreeMap<usize, Option<usize>> = words
        .iter()
        .filter_map(|t| t.id.word().map(|id| (id, t.head)))
        .collect();

    let roots: Vec<usize> = ids
        .iter()
        .filter(|(_, h)| **h == Some(0))
        .map(|(id, _)| *id)
        .collect();
    match roots.len() {
        0 => violations.push(Violation {
            token: None,
            kind: ViolationKind::MissingRoot,
        }),
        1 => {}
        _ => violations.push(Violation {
            token: Some(roots[1]),
            kind: ViolationKind::MultipleRoots,
        }),
    }

    for (&id, head) in &ids {
        match head {
            None => violations.push(Violation {
                token: Some(id),
                kind: ViolationKind::MissingHead,
            }),
            Some(0) => {}
            Some(h) if !ids.contains_key(h) => violations.push(Violation {
                token: Some(id),
                kind: ViolationKind::DanglingHead,
            }),
            Some(_) => {}
        }
    }

    // Walk up from every word; a path longer than n without reaching the root
    // (or a missing link) means a cycle.
    for &start in ids.keys() {
        let mut current = start;
        let mut steps = 0;
        loop {
            match ids.get(&current).copied().flatten() {
                Some(0) | None => break,
                Some(h) if !ids.contains_key(&h) => break,
                Some(h) => current = h,
            }
            steps += 1;
            if steps > n {
                violations.push(Violation {
                    token: Some(start),
                    kind: ViolationKind::Cycle,
                });
                break;
            }
        }
        if violations.iter().any(|v| v.kind == ViolationKind::Cycle) {
            break;
        }
    }

    violations
}

/// Parse CoNLL-U text and validate every sentence.
pub fn parse_conllu(text: &str) -> Result<Vec<SentenceParse>, ConlluError> {
    let sentences = parse_conllu_unchecked(text)?;
    for (parse, line) in &sentences {
        if let Some(violation) = validate_parse(parse).into_iter().next() {
            return Err(ConlluError::Invalid {
                line: *line,
                violation,
            });
        }
    }
    Ok(sentences.into_iter().map(|(p, _)| p).collect())
}

/// Parse CoNLL-U text checking only line syntax. Each sentence comes with
/// the 1-based line number it starts on.
pub fn parse_conllu_unchecked(text: &str) -> Result<Vec<(SentenceParse, usize)>, ConlluError> {
    let mut sentences = Vec::new();
    let mut current = SentenceParse::default();
    let mut start_line = 1;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !current.tokens.is_empty() || !current.comments.is_empty() {
                sentences.push((std::mem::take(&mut current), start_line));
            }
            continue;
        }
        if current.tokens.is_empty() && current.comments.is_empty() {
            start_line = line_no;
        }
        if line.starts_with('#') {
            if !current.tokens.is_empty() {
                return Err(ConlluError::MisplacedComment { line: line_no });
            }
            current.comments.push(line.to_string());
            continue;
        }
        current.tokens.push(parse_word_line(line, line_no)?);
    }
    if !current.tokens.is_empty() || !current.comments.is_empty() {
        sentences.push((current, start_line));
    }
    Ok(sentences)
}

fn parse_word_line(line: &str, line_no: usize) -> Result<Token, ConlluError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 10 {
        return Err(ConlluError::FieldCount {
            line: line_no,
            found: fields.len(),
        });
    }
    let id: TokenId = fields[0].parse().map_err(|_| ConlluError::InvalidId {
        line: line_no,
        id: fields[0].to_string(),
    })?;
    let head = match fields[6] {
        EMPTY_FIELD => None,
        h if h.bytes().all(|b| b.is_ascii_digit()) && !h.is_empty() => {
            Some(h.parse().map_err(|_| ConlluError::InvalidHead {
                line: line_no,
                head: h.to_string(),
            })?)
        }
        h => {
            return Err(ConlluError::InvalidHead {
                line: line_no,
                head: h.to_string(),
            })
        }
    };
    Ok(Token {
        id,
        form: fields[1].to_string(),
        lemma: fields[2].to_string(),
        upos: fields[3].to_string(),
        xpos: fields[4].to_string(),
        feats: fields[5].to_string(),
        head,
        deprel: fields[7].to_string(),
        deps: fields[8].to_string(),
        misc: fields[9].to_string(),
    })
}

/// Write parses back out. Every sentence is followed by a blank line.
pub fn serialize(parses: &[SentenceParse]) -> Result<String, ConlluError> {
    let mut out = String::new();
    for (index, parse) in parses.iter().enumerate() {
        if let Some(violation) = validate_parse(parse).into_iter().next() {
            return Err(ConlluError::InvalidParse { index, violation });
        }
        write_sentence(parse, &mut out);
    }
    Ok(out)
}

/// Serialize a single parse without the trailing blank line, for embedding
/// in prompts.
pub fn to_block(parse: &SentenceParse) -> String {
    let mut out = String::new();
    write_sentence(parse, &mut out);
    out.pop();
    out
}

fn write_sentence(parse: &SentenceParse, out: &mut String) {
    for comment in &parse.comments {
        out.push_str(comment);
        out.push('\n');
    }
    for token in &parse.tokens {
        out.push_str(&token.to_line());
        out.push('\n');
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, form: &str, head: &str, rel: &str) -> String {
        format!("{id}\t{form}\t_\tX\t_\t_\t{head}\t{rel}\t_\t_")
    }

    #[test]
    fn single_word_sentence() {
        let parses = parse_conllu("1\tHi\thi\tINTJ\t_\t_\t0\troot\t_\t_\n").unwrap();
        assert_eq!(parses.len(), 1);
        assert_eq!(parses[0].tokens.len(), 1);
        assert_eq!(parses[0].tokens[0].upos, "INTJ");
    }

    #[test]
    fn blank_line_separates_sentences() {
        let text = format!(
            "{}\n\n{}\n{}\n",
            line("1", "Hi", "0", "root"),
            line("1", "Go", "0", "root"),
            line("2", "!", "1", "punct")
        );
        let parses = parse_conllu(&text).unwrap();
        assert_eq!(parses.len(), 2);
        assert_eq!(parses[1].word_count(), 2);
    }

    #[test]
    fn nine_fields_reports_line() {
        let text = format!(
            "# text = Hi there\n{}\n1\tthere\t_\tADV\t_\t_\t1\tadvmod\t_\n",
            line("1", "Hi", "0", "root")
        );
        let err = parse_conllu(&text).unwrap_err();
        assert_eq!(err, ConlluError::FieldCount { line: 3, found: 9 });
    }

    #[test]
    fn empty_input_and_empty_list() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert_eq!(serialize(&[]).unwrap(), "");
    }

    #[test]
    fn comment_is_emitted_first() {
        let mut parse = SentenceParse::new(vec![Token::word(1, "Hi", "INTJ", 0, "root")]);
        parse.comments.push("# text = Hi".into());
        let out = serialize(&[parse]).unwrap();
        assert_eq!(out, "# text = Hi\n1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n\n");
    }

    #[test]
    fn empty_strings_serialize_as_underscore() {
        let mut token = Token::word(1, "Hi", "INTJ", 0, "root");
        token.lemma.clear();
        token.misc.clear();
        let out = serialize(&[SentenceParse::new(vec![token])]).unwrap();
        assert_eq!(out, "1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n\n");
    }

    #[test]
    fn validate_reports_each_rule() {
        let ok = SentenceParse::new(vec![
            Token::word(1, "Dogs", "NOUN", 2, "nsubj"),
            Token::word(2, "bark", "VERB", 0, "root"),
        ]);
        assert!(validate_parse(&ok).is_empty());

        let two_roots = SentenceParse::new(vec![
            Token::word(1, "Dogs", "NOUN", 0, "root"),
            Token::word(2, "bark", "VERB", 0, "root"),
        ]);
        let v = validate_parse(&two_roots);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::MultipleRoots);
        assert!(v[0].to_string().ends_with("multiple roots"));

        let dangling = SentenceParse::new(vec![
            Token::word(1, "a", "X", 5, "dep"),
            Token::word(2, "b", "X", 0, "root"),
            Token::word(3, "c", "X", 2, "dep"),
        ]);
        let v = validate_parse(&dangling);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::DanglingHead);
        assert_eq!(v[0].token, Some(1));

        let cyclic = SentenceParse::new(vec![
            Token::word(1, "a", "X", 2, "dep"),
            Token::word(2, "b", "X", 1, "dep"),
            Token::word(3, "c", "X", 0, "root"),
        ]);
        let v = validate_parse(&cyclic);
        assert!(v.iter().any(|v| v.kind == ViolationKind::Cycle));

        let gap = SentenceParse::new(vec![
            Token::word(1, "a", "X", 0, "root"),
            Token::word(3, "c", "X", 1, "dep"),
        ]);
        let v = validate_parse(&gap);
        assert!(v.iter().any(|v| v.kind == ViolationKind::NonContiguousIds));
    }

    #[test]
    fn parse_rejects_invalid_graphs() {
        let text = format!(
            "{}\n{}\n",
            line("1", "a", "2", "dep"),
            line("2", "b", "1", "dep")
        );
        assert!(matches!(
            parse_conllu(&text),
            Err(ConlluError::Invalid { line: 1, .. })
        ));
        let gap = format!("{}\n{}\n", line("1", "a", "0", "root"), line("3", "b", "1", "dep"));
        assert!(parse_conllu(&gap).is_err());
    }

    #[test]
    fn ranges_and_empty_nodes_are_preserved() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdo\tdo\tAUX\t_\t_\t3\taux\t_\t_\n\
                    2\tn't\tnot\tPART\t_\t_\t3\tadvmod\t_\t_\n\
                    3\tgo\tgo\tVERB\t_\t_\t0\troot\t_\t_\n\
                    3.1\tgone\tgo\tVERB\t_\t_\t_\t_\t3:conj\t_\n\n";
        let parses = parse_conllu(text).unwrap();
        assert_eq!(parses[0].tokens[0].id, TokenId::Range(1, 2));
        assert_eq!(parses[0].tokens[4].id, TokenId::Empty(3, 1));
        assert_eq!(parses[0].word_count(), 3);
        assert_eq!(serialize(&parses).unwrap(), text);
    }

    #[test]
    fn crlf_is_normalized() {
        let text = "1\tHi\thi\tINTJ\t_\t_\t0\troot\t_\t_\r\n\r\n";
        let parses = parse_conllu(text).unwrap();
        assert_eq!(serialize(&parses).unwrap(), text.replace("\r\n", "\n"));
    }

    #[test]
    fn meta_reads_comment_values() {
        let text = "# sent_id = 7\n# text = Hi\n1\tHi\thi\tINTJ\t_\t_\t0\troot\t_\t_\n";
        let parse = &parse_conllu(text).unwrap()[0];
        assert_eq!(parse.meta("text"), Some("Hi"));
        assert_eq!(parse.meta("sent_id"), Some("7"));
        assert_eq!(parse.meta("missing"), None);
    }

    #[test]
    fn invalid_ids_and_heads() {
        assert!(matches!(
            parse_conllu("x\tHi\t_\t_\t_\t_\t0\troot\t_\t_\n"),
            Err(ConlluError::InvalidId { line: 1, .. })
        ));
        assert!(matches!(
            parse_conllu("1\tHi\t_\t_\t_\t_\tz\troot\t_\t_\n"),
            Err(ConlluError::InvalidHead { line: 1, .. })
        ));
    }
}
