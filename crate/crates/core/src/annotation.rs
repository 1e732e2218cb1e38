//! Token and tag data model for annotated sentences.
//!
//! Sentences come either from CoNLL-U input, which is the only source of
//! dependency labels, or from [`fallback_tag`], a lexicon plus suffix-rule
//! tagger used for fixtures and offline runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("line {line}: expected 10 tab-separated columns, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("line {line}: unknown UPOS tag `{tag}`")]
    UnknownUpos { line: usize, tag: String },
    #[error("line {line}: token form is empty")]
    EmptyForm { line: usize },
    #[error("document contains no sentences")]
    EmptyDocument,
    #[error("input is empty")]
    EmptyInput,
    #[error("lexicon line {line}: {reason}")]
    BadLexicon { line: usize, reason: String },
    #[error("read error: {0}")]
    Io(String),
}

/// The 17 Universal POS tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Normalizes a dependency label to the label set used by templates:
/// lowercase, `obj` becomes `dobj`, `case` becomes `prep`.
pub fn normalize_deprel(raw: &str) -> String {
    let lower = raw.trim().to_lowercase();
    match lower.as_str() {
        "obj" => "dobj".to_string(),
        "case" | "prep" => "prep".to_string(),
        _ => lower,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: Upos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deprel: Option<String>,
}

impl Token {
    pub fn new(index: usize, form: impl Into<String>, upos: Upos) -> Self {
        let form = form.into();
        Token {
            index,
            lemma: form.clone(),
            form,
            upos,
            deprel: None,
        }
    }

    pub fn with_lemma(mut self, lemma: impl Into<String>) -> Self {
        self.lemma = lemma.into();
        self
    }

    pub fn with_deprel(mut self, deprel: &str) -> Self {
        self.deprel = Some(normalize_deprel(deprel));
        self
    }

    /// The form used when this token fills a template slot. Contracted
    /// auxiliaries are expanded.
    pub fn fill_form(&self) -> String {
        expand_contraction(&self.form, &self.lemma)
            .map(str::to_string)
            .unwrap_or_else(|| self.form.clone())
    }
}

/// Contracted auxiliaries and their expansions. A clitic is expanded only
/// when its lemma confirms the auxiliary reading (possessive `'s` has a
/// different lemma).
const CONTRACTIONS: &[(&str, &str, &str)] = &[
    ("'s", "be", "is"),
    ("'re", "be", "are"),
    ("'m", "be", "am"),
    ("n't", "not", "not"),
];

pub fn expand_contraction(form: &str, lemma: &str) -> Option<&'static str> {
    let form = form.to_lowercase().replace('\u{2019}', "'");
    let lemma = lemma.to_lowercase();
    CONTRACTIONS
        .iter()
        .find(|(clitic, lem, exp)| form == *clitic && (lemma == *lem || lemma == *exp))
        .map(|(_, _, exp)| *exp)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub sentence_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    /// `# key = value` comment lines other than `sent_id` and `text`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl AnnotatedSentence {
    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    /// Page number from a `# page = N` comment.
    pub fn page(&self) -> Option<u32> {
        self.meta.get("page").and_then(|p| p.trim().parse().ok())
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.sentence_id = id.into();
        self
    }
}

/// Parses a CoNLL-U document. Multiword range lines (`3-4`) and empty
/// nodes (`3.1`) are skipped.
pub fn parse_conllu<R: BufRead>(reader: R) -> Result<Vec<AnnotatedSentence>, AnnotationError> {
    let mut sentences = Vec::new();
    let mut block = Block::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| AnnotationError::Io(e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            if let Some(s) = block.finish(sentences.len()) {
                sentences.push(s);
            }
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                block.comment(key.trim(), value.trim());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(AnnotationError::MalformedLine {
                line: line_no,
                found: cols.len(),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let form = cols[1];
        if form.is_empty() {
            return Err(AnnotationError::EmptyForm { line: line_no });
        }
        let upos = Upos::from_str(cols[3]).map_err(|tag| AnnotationError::UnknownUpos {
            line: line_no,
            tag,
        })?;
        let lemma = if cols[2] == "_" && form != "_" {
            form
        } else {
            cols[2]
        };
        let deprel = match cols[7] {
            "_" | "" => None,
            d => Some(normalize_deprel(d)),
        };
        block.tokens.push(Token {
            index: block.tokens.len(),
            form: form.to_string(),
            lemma: lemma.to_string(),
            upos,
            deprel,
        });
    }
    if let Some(s) = block.finish(sentences.len()) {
        sentences.push(s);
    }
    if sentences.is_empty() {
        return Err(AnnotationError::EmptyDocument);
    }
    Ok(sentences)
}

#[derive(Default)]
struct Block {
    id: Option<String>,
    text: Option<String>,
    meta: BTreeMap<String, String>,
    tokens: Vec<Token>,
}

impl Block {
    fn comment(&mut self, key: &str, value: &str) {
        match key {
            "sent_id" => self.id = Some(value.to_string()),
            "text" => self.text = Some(value.to_string()),
            _ => {
                self.meta.insert(key.to_string(), value.to_string());
            }
        }
    }

    fn finish(&mut self, ordinal: usize) -> Option<AnnotatedSentence> {
        let block = std::mem::take(self);
        if block.tokens.is_empty() {
            // Comments between sentences (e.g. `# newdoc`) carry over.
            self.meta = block.meta;
            return None;
        }
        let text = block
            .text
            .unwrap_or_else(|| join_plain(block.tokens.iter().map(|t| t.form.as_str())));
        Some(AnnotatedSentence {
            sentence_id: block.id.unwrap_or_else(|| format!("s{}", ordinal + 1)),
            text,
            tokens: block.tokens,
            meta: block.meta,
        })
    }
}

/// Writes sentences back out as CoNLL-U. Columns not carried by [`Token`]
/// (XPOS, FEATS, HEAD, DEPS, MISC) are written as `_`.
pub fn write_conllu(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&format!("# sent_id = {}\n", s.sentence_id));
        out.push_str(&format!("# text = {}\n", s.text));
        for (k, v) in &s.meta {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        for t in &s.tokens {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t_\t_\t_\t{}\t_\t_\n",
                t.index + 1,
                t.form,
                t.lemma,
                t.upos,
                t.deprel.as_deref().unwrap_or("_"),
            ));
        }
        out.push('\n');
    }
    out
}

/// Lowercase word to UPOS map, loaded from a two-column TSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon(HashMap<String, Upos>);

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

impl Lexicon {
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED_LEXICON).expect("bundled lexicon is well-formed")
    }

    pub fn from_tsv(text: &str) -> Result<Self, AnnotationError> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or(AnnotationError::BadLexicon {
                line: i + 1,
                reason: "expected word<TAB>UPOS".into(),
            })?;
            let upos = Upos::from_str(tag.trim()).map_err(|tag| AnnotationError::BadLexicon {
                line: i + 1,
                reason: format!("unknown UPOS `{tag}`"),
            })?;
            map.insert(word.trim().to_lowercase(), upos);
        }
        Ok(Lexicon(map))
    }

    pub fn insert(&mut self, word: &str, upos: Upos) {
        self.0.insert(word.to_lowercase(), upos);
    }

    pub fn get(&self, word: &str) -> Option<Upos> {
        self.0.get(&word.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, Upos)> for Lexicon {
    fn from_iter<I: IntoIterator<Item = (String, Upos)>>(iter: I) -> Self {
        Lexicon(iter.into_iter().map(|(w, u)| (w.to_lowercase(), u)).collect())
    }
}

/// Splits on whitespace and detaches leading and trailing punctuation
/// characters as separate tokens.
pub fn simple_tokenize(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in raw.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars
            .iter()
            .position(|c| !is_punct(*c))
            .unwrap_or(chars.len());
        let end = chars
            .iter()
            .rposition(|c| !is_punct(*c))
            .map_or(start, |p| p + 1);
        out.extend(chars[..start].iter().map(char::to_string));
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end.max(start)..].iter().map(char::to_string));
    }
    out
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}')
}

/// Tags a raw sentence without a parser: lexicon lookup, then suffix rules
/// (`-ly` ADV, `-ing`/`-ed` VERB), then NOUN. Punctuation-only tokens are
/// PUNCT. Never assigns dependency labels.
pub fn fallback_tag(raw: &str, lexicon: &Lexicon) -> Result<AnnotatedSentence, AnnotationError> {
    let words = simple_tokenize(raw);
    if words.is_empty() {
        return Err(AnnotationError::EmptyInput);
    }
    let tokens = words
        .into_iter()
        .enumerate()
        .map(|(index, form)| {
            let upos = guess_upos(&form, lexicon);
            Token::new(index, form, upos)
        })
        .collect();
    Ok(AnnotatedSentence {
        sentence_id: "s1".to_string(),
        text: raw.split_whitespace().collect::<Vec<_>>().join(" "),
        tokens,
        meta: BTreeMap::new(),
    })
}

fn guess_upos(form: &str, lexicon: &Lexicon) -> Upos {
    if let Some(u) = lexicon.get(form) {
        return u;
    }
    if form.chars().all(is_punct) {
        return Upos::Punct;
    }
    let lower = form.to_lowercase();
    if lower.len() > 2 && lower.ends_with("ly") {
        Upos::Adv
    } else if (lower.len() > 3 && lower.ends_with("ing")) || (lower.len() > 2 && lower.ends_with("ed")) {
        Upos::Verb
    } else {
        Upos::Noun
    }
}

const CLITICS: &[&str] = &["'s", "'re", "'m", "'ll", "'ve", "'d", "n't", "'"];
const CLOSING: &[&str] = &["?", "!", ".", ",", ";", ":", ")", "]", "}", "...", "\u{201d}"];
const OPENING: &[&str] = &["(", "[", "{", "\u{201c}"];

fn attaches_left(form: &str) -> bool {
    let lower = form.to_lowercase().replace('\u{2019}', "'");
    CLOSING.contains(&form) || CLITICS.contains(&lower.as_str())
}

fn join_plain<'a>(forms: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for form in forms {
        let form = form.trim();
        if form.is_empty() {
            continue;
        }
        if !glue_next && !attaches_left(form) {
            out.push(' ');
        }
        out.push_str(form);
        glue_next = OPENING.contains(&form);
    }
    out
}

/// Joins token forms into surface text. Closing punctuation and clitics
/// attach to the previous word and the first character is capitalized.
/// When any `?` token is present the result ends in exactly one `?`.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> Result<String, AnnotationError> {
    let forms: Vec<&str> = tokens
        .iter()
        .map(|t| t.as_ref().trim())
        .filter(|t| !t.is_empty())
        .collect();
    if forms.is_empty() {
        return Err(AnnotationError::EmptyInput);
    }
    let is_question = forms.contains(&"?");
    let text = if is_question {
        let mut body: Vec<&str> = forms.iter().copied().filter(|f| *f != "?").collect();
        while body.last().is_some_and(|f| matches!(*f, "." | "!" | "," | ";" | ":")) {
            body.pop();
        }
        let mut text = join_plain(body.into_iter());
        text.push('?');
        text
    } else {
        join_plain(forms.into_iter())
    };
    Ok(capitalize_first(&text))
}

pub fn capitalize_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Whether a slot abstracts a dependency relation or a POS tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Dependency,
    Pos,
}

/// An abstracted template position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SlotLabel {
    Nsubj,
    Dobj,
    Pobj,
    Root,
    Aux,
    Det,
    Prep,
    Noun,
    Verb,
    Adj,
    Propn,
}

impl SlotLabel {
    pub const ALL: [SlotLabel; 11] = [
        SlotLabel::Nsubj,
        SlotLabel::Dobj,
        SlotLabel::Pobj,
        SlotLabel::Root,
        SlotLabel::Aux,
        SlotLabel::Det,
        SlotLabel::Prep,
        SlotLabel::Noun,
        SlotLabel::Verb,
        SlotLabel::Adj,
        SlotLabel::Propn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotLabel::Nsubj => "NSUBJ",
            SlotLabel::Dobj => "DOBJ",
            SlotLabel::Pobj => "POBJ",
            SlotLabel::Root => "ROOT",
            SlotLabel::Aux => "AUX",
            SlotLabel::Det => "DET",
            SlotLabel::Prep => "PREP",
            SlotLabel::Noun => "NOUN",
            SlotLabel::Verb => "VERB",
            SlotLabel::Adj => "ADJ",
            SlotLabel::Propn => "PROPN",
        }
    }

    pub fn kind(self) -> SlotKind {
        match self {
            SlotLabel::Nsubj | SlotLabel::Dobj | SlotLabel::Pobj | SlotLabel::Root => {
                SlotKind::Dependency
            }
            _ => SlotKind::Pos,
        }
    }

    /// The dependency label a dependency slot abstracts.
    pub fn deprel(self) -> Option<&'static str> {
        match self {
            SlotLabel::Nsubj => Some("nsubj"),
            SlotLabel::Dobj => Some("dobj"),
            SlotLabel::Pobj => Some("pobj"),
            SlotLabel::Root => Some("root"),
            _ => None,
        }
    }

    pub fn from_deprel(deprel: &str) -> Option<SlotLabel> {
        SlotLabel::ALL
            .iter()
            .copied()
            .find(|s| s.deprel() == Some(deprel))
    }

    /// The POS slot a UPOS tag maps to (ADP maps to PREP).
    pub fn from_upos(upos: Upos) -> Option<SlotLabel> {
        match upos {
            Upos::Aux => Some(SlotLabel::Aux),
            Upos::Det => Some(SlotLabel::Det),
            Upos::Adp => Some(SlotLabel::Prep),
            Upos::Noun => Some(SlotLabel::Noun),
            Upos::Verb => Some(SlotLabel::Verb),
            Upos::Adj => Some(SlotLabel::Adj),
            Upos::Propn => Some(SlotLabel::Propn),
            _ => None,
        }
    }
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlotLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_uppercase();
        // `NSUB` is how the label is sometimes abbreviated in write-ups.
        let upper = if upper == "NSUB" { "NSUBJ".to_string() } else { upper };
        SlotLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == upper)
            .ok_or_else(|| s.to_string())
    }
}
