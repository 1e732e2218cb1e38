//! Question templates: extraction from annotated questions, deduplicated
//! JSONL persistence, and TF-IDF ranking by demographic sensitivity.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotatedSentence, SlotKind, SlotLabel};
use crate::corpus::{CarCode, OpenCode, SurveyCorpus};
use crate::fsio;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("question `{0}` has no abstractable token")]
    NonGenerative(String),
    #[error("question `{0}` is empty")]
    EmptyQuestion(String),
    #[error("no annotation for question `{0}`")]
    MissingAnnotation(String),
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("duplicate template id `{0}`")]
    DuplicateTemplateId(String),
    #[error("template corpus is empty")]
    EmptyCorpus,
    #[error("k = {k} exceeds corpus size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// Labels that may be abstracted and the interrogative words kept as
/// literals when they open a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotConfig {
    pub slots: BTreeSet<SlotLabel>,
    pub interrogatives: Vec<String>,
}

pub const DEFAULT_INTERROGATIVES: [&str; 18] = [
    "what", "why", "how", "who", "when", "where", "which", "do", "does", "did", "have", "has",
    "can", "could", "would", "will", "is", "are",
];

impl Default for SlotConfig {
    fn default() -> Self {
        SlotConfig {
            slots: SlotLabel::ALL.into_iter().collect(),
            interrogatives: DEFAULT_INTERROGATIVES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SlotConfig {
    pub fn with_slots(slots: impl IntoIterator<Item = SlotLabel>) -> Self {
        SlotConfig {
            slots: slots.into_iter().collect(),
            ..SlotConfig::default()
        }
    }

    fn is_interrogative(&self, form: &str) -> bool {
        let lower = form.to_lowercase();
        self.interrogatives.iter().any(|w| w.eq_ignore_ascii_case(&lower))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Element {
    #[serde(rename = "lit")]
    Literal(String),
    #[serde(rename = "slot")]
    Slot(SlotLabel),
}

impl Element {
    pub fn lit(word: &str) -> Self {
        Element::Literal(word.to_string())
    }

    pub fn slot(&self) -> Option<SlotLabel> {
        match self {
            Element::Slot(s) => Some(*s),
            Element::Literal(_) => None,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Literal(w) => f.write_str(w),
            Element::Slot(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Demographic {
    pub latinx: bool,
    pub caregiver: bool,
}

/// The four demographic pools, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicGroup {
    NonlatinxCaregiver,
    LatinxNoncaregiver,
    LatinxCaregiver,
    NonlatinxNoncaregiver,
}

impl DemographicGroup {
    pub const ALL: [DemographicGroup; 4] = [
        DemographicGroup::NonlatinxCaregiver,
        DemographicGroup::LatinxNoncaregiver,
        DemographicGroup::LatinxCaregiver,
        DemographicGroup::NonlatinxNoncaregiver,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DemographicGroup::NonlatinxCaregiver => "Parents",
            DemographicGroup::LatinxNoncaregiver => "Latinx",
            DemographicGroup::LatinxCaregiver => "Latinx Caregivers",
            DemographicGroup::NonlatinxNoncaregiver => "Non-Latinx non-Caregivers",
        }
    }

    pub fn demographic(self) -> Demographic {
        let (latinx, caregiver) = match self {
            DemographicGroup::NonlatinxCaregiver => (false, true),
            DemographicGroup::LatinxNoncaregiver => (true, false),
            DemographicGroup::LatinxCaregiver => (true, true),
            DemographicGroup::NonlatinxNoncaregiver => (false, false),
        };
        Demographic { latinx, caregiver }
    }
}

impl From<Demographic> for DemographicGroup {
    fn from(d: Demographic) -> Self {
        match (d.latinx, d.caregiver) {
            (false, true) => DemographicGroup::NonlatinxCaregiver,
            (true, false) => DemographicGroup::LatinxNoncaregiver,
            (true, true) => DemographicGroup::LatinxCaregiver,
            (false, false) => DemographicGroup::NonlatinxNoncaregiver,
        }
    }
}

impl FromStr for DemographicGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "nonlatinx_caregiver" | "parents" => Ok(DemographicGroup::NonlatinxCaregiver),
            "latinx_noncaregiver" | "latinx" => Ok(DemographicGroup::LatinxNoncaregiver),
            "latinx_caregiver" => Ok(DemographicGroup::LatinxCaregiver),
            "nonlatinx_noncaregiver" => Ok(DemographicGroup::NonlatinxNoncaregiver),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: String,
    pub elements: Vec<Element>,
    pub car_code: CarCode,
    pub open_code: OpenCode,
    pub demographic: Demographic,
    pub source_question_id: String,
    #[serde(default = "one")]
    pub duplicate_count: usize,
}

fn one() -> usize {
    1
}

impl Template {
    pub fn slots(&self) -> impl Iterator<Item = SlotLabel> + '_ {
        self.elements.iter().filter_map(Element::slot)
    }

    pub fn slot_count(&self) -> usize {
        self.slots().count()
    }

    /// Space-joined elements, e.g. `What AUX DET NSUBJ`.
    pub fn stored_form(&self) -> String {
        self.elements
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn group(&self) -> DemographicGroup {
        self.demographic.into()
    }

    fn validate(&self) -> Result<(), String> {
        if self.template_id.is_empty() {
            return Err("empty template_id".into());
        }
        if self.elements.is_empty() {
            return Err("template has no elements".into());
        }
        if self.slot_count() == 0 {
            return Err("template has no slot".into());
        }
        if self
            .elements
            .iter()
            .any(|e| matches!(e, Element::Literal(w) if w.trim().is_empty()))
        {
            return Err("empty literal".into());
        }
        Ok(())
    }
}

/// An extracted element together with the question token it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedElement {
    pub element: Element,
    pub token_index: usize,
}

/// Applies the extraction rule token by token. Trailing `?` tokens are
/// dropped; the result may contain no slot.
pub fn extract_elements(
    question: &AnnotatedSentence,
    config: &SlotConfig,
) -> Result<Vec<ExtractedElement>, TemplateError> {
    let mut end = question.tokens.len();
    while end > 0 && question.tokens[end - 1].form == "?" {
        end -= 1;
    }
    if end == 0 {
        return Err(TemplateError::EmptyQuestion(question.sentence_id.clone()));
    }
    let out = question.tokens[..end]
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let element = if i == 0 && config.is_interrogative(&tok.form) {
                Element::Literal(crate::annotation::capitalize_first(&tok.form.to_lowercase()))
            } else if let Some(slot) = tok
                .deprel
                .as_deref()
                .and_then(SlotLabel::from_deprel)
                .filter(|s| config.slots.contains(s))
            {
                Element::Slot(slot)
            } else if let Some(slot) = SlotLabel::from_upos(tok.upos)
                .filter(|s| s.kind() == SlotKind::Pos && config.slots.contains(s))
            {
                Element::Slot(slot)
            } else {
                Element::Literal(tok.form.clone())
            };
            ExtractedElement {
                element,
                token_index: i,
            }
        })
        .collect();
    Ok(out)
}

/// Converts one annotated question into a template. The template id is
/// derived from the question id; [`build_corpus`] renumbers.
pub fn extract_template(
    question: &AnnotatedSentence,
    car_code: CarCode,
    open_code: OpenCode,
    demographic: Demographic,
    config: &SlotConfig,
) -> Result<Template, TemplateError> {
    let elements: Vec<Element> = extract_elements(question, config)?
        .into_iter()
        .map(|e| e.element)
        .collect();
    if !elements.iter().any(|e| e.slot().is_some()) {
        return Err(TemplateError::NonGenerative(question.sentence_id.clone()));
    }
    Ok(Template {
        template_id: format!("t-{}", question.sentence_id),
        elements,
        car_code,
        open_code,
        demographic,
        source_question_id: question.sentence_id.clone(),
        duplicate_count: 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateCorpus {
    pub templates: Vec<Template>,
    pub slot_config: SlotConfig,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl TemplateCorpus {
    pub fn new(templates: Vec<Template>, slot_config: SlotConfig) -> Result<Self, TemplateError> {
        let corpus = TemplateCorpus {
            templates,
            slot_config,
            provenance: Vec::new(),
        };
        corpus.check_ids()?;
        Ok(corpus)
    }

    fn check_ids(&self) -> Result<(), TemplateError> {
        let mut seen = HashSet::new();
        for t in &self.templates {
            if !seen.insert(t.template_id.as_str()) {
                return Err(TemplateError::DuplicateTemplateId(t.template_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn by_car(&self, code: CarCode) -> impl Iterator<Item = &Template> {
        self.templates.iter().filter(move |t| t.car_code == code)
    }

    /// Appends another corpus (e.g. the open/closed augmentation set).
    pub fn extend(&mut self, other: TemplateCorpus) -> Result<(), TemplateError> {
        self.templates.extend(other.templates);
        self.provenance.extend(other.provenance);
        for s in other.slot_config.slots {
            self.slot_config.slots.insert(s);
        }
        self.check_ids()
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub slot_config: SlotConfig,
    /// Template ids are `{id_prefix}{n:05}`.
    pub id_prefix: String,
    pub provenance: Option<String>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            slot_config: SlotConfig::default(),
            id_prefix: "t".to_string(),
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub corpus: TemplateCorpus,
    pub questions_seen: usize,
    pub non_generative: Vec<String>,
    pub duplicates_merged: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationJoin {
    pub by_question: BTreeMap<String, AnnotatedSentence>,
    /// Questions with no annotation under either join key.
    pub unmatched: Vec<String>,
    /// Annotated sentences no question claimed.
    pub unused: Vec<String>,
}

fn normalized_text(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pairs each coded question with its annotation: by `sent_id` equal to the
/// question id, otherwise by normalized sentence text. Each sentence is
/// used at most once by the text join.
pub fn join_annotations(corpus: &SurveyCorpus, sentences: &[AnnotatedSentence]) -> AnnotationJoin {
    let by_id: HashMap<&str, &AnnotatedSentence> =
        sentences.iter().map(|s| (s.sentence_id.as_str(), s)).collect();
    let mut by_text: HashMap<String, Vec<&AnnotatedSentence>> = HashMap::new();
    for s in sentences.iter().rev() {
        by_text.entry(normalized_text(&s.text)).or_default().push(s);
    }
    let mut join = AnnotationJoin::default();
    let mut claimed: std::collections::HashSet<&str> = Default::default();
    let questions: Vec<_> = corpus.questions().map(|(_, q)| q).collect();
    for q in &questions {
        if let Some(s) = by_id.get(q.question_id.as_str()) {
            claimed.insert(&s.sentence_id);
            join.by_question.insert(q.question_id.clone(), (*s).clone());
        }
    }
    for q in &questions {
        if join.by_question.contains_key(&q.question_id) {
            continue;
        }
        let found = by_text.get_mut(&normalized_text(&q.text)).and_then(|cands| {
            while let Some(s) = cands.pop() {
                if !claimed.contains(s.sentence_id.as_str()) {
                    return Some(s);
                }
            }
            None
        });
        match found {
            Some(s) => {
                claimed.insert(&s.sentence_id);
                join.by_question
                    .insert(q.question_id.clone(), (*s).clone().with_id(q.question_id.clone()));
            }
            None => join.unmatched.push(q.question_id.clone()),
        }
    }
    join.unused = sentences
        .iter()
        .filter(|s| !claimed.contains(s.sentence_id.as_str()))
        .map(|s| s.sentence_id.clone())
        .collect();
    join
}

/// Extracts a template from every coded question, skipping non-generative
/// ones and merging exact duplicates with identical codes.
pub fn build_corpus(
    corpus: &SurveyCorpus,
    annotations: &BTreeMap<String, AnnotatedSentence>,
    opts: &BuildOptions,
) -> Result<BuildReport, TemplateError> {
    let mut templates = Vec::new();
    let mut non_generative = Vec::new();
    let mut seen = 0;
    for (profile, q) in corpus.questions() {
        seen += 1;
        let annotation = annotations
            .get(&q.question_id)
            .ok_or_else(|| TemplateError::MissingAnnotation(q.question_id.clone()))?;
        let demographic = Demographic {
            latinx: profile.is_latinx,
            caregiver: profile.is_caregiver,
        };
        match extract_template(annotation, q.car_code, q.open_code, demographic, &opts.slot_config) {
            Ok(mut t) => {
                t.source_question_id = q.question_id.clone();
                templates.push(t);
            }
            Err(TemplateError::NonGenerative(_) | TemplateError::EmptyQuestion(_)) => {
                non_generative.push(q.question_id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    let before = templates.len();
    let mut templates = dedupe_templates(templates);
    let duplicates_merged = before - templates.len();
    for (i, t) in templates.iter_mut().enumerate() {
        t.template_id = format!("{}{:05}", opts.id_prefix, i + 1);
    }
    let mut out = TemplateCorpus::new(templates, opts.slot_config.clone())?;
    out.provenance.extend(opts.provenance.clone());
    Ok(BuildReport {
        corpus: out,
        questions_seen: seen,
        non_generative,
        duplicates_merged,
    })
}

/// Merges templates whose elements and codes are identical. The first
/// occurrence is kept and absorbs the others' duplicate counts.
pub fn dedupe_templates(templates: Vec<Template>) -> Vec<Template> {
    let mut index: HashMap<(Vec<Element>, CarCode, OpenCode), usize> = HashMap::new();
    let mut out: Vec<Template> = Vec::new();
    for t in templates {
        let key = (t.elements.clone(), t.car_code, t.open_code);
        match index.get(&key) {
            Some(&i) => out[i].duplicate_count += t.duplicate_count,
            None => {
                index.insert(key, out.len());
                out.push(t);
            }
        }
    }
    out
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize, Deserialize)]
struct StoreMeta {
    slot_config: SlotConfig,
    provenance: Vec<String>,
}

/// Writes one template per line, plus a `.meta.json` sidecar holding the
/// slot configuration and provenance.
pub fn persist_store(corpus: &TemplateCorpus, path: &Path) -> Result<(), TemplateError> {
    let mut body = String::new();
    for t in &corpus.templates {
        body.push_str(&serde_json::to_string(t).map_err(|e| TemplateError::Io(e.to_string()))?);
        body.push('\n');
    }
    fsio::write_atomic(path, body.as_bytes()).map_err(|e| TemplateError::Io(e.to_string()))?;
    let meta = StoreMeta {
        slot_config: corpus.slot_config.clone(),
        provenance: corpus.provenance.clone(),
    };
    let meta = serde_json::to_string_pretty(&meta).map_err(|e| TemplateError::Io(e.to_string()))?;
    fsio::write_atomic(&meta_path(path), meta.as_bytes()).map_err(|e| TemplateError::Io(e.to_string()))
}

/// Writes ranked output (templates with `score` and `rank`) with the same
/// sidecar as [`persist_store`], so it loads back with [`load_store`].
pub fn persist_ranked(ranked: &RankedTemplates, provenance: &[String], path: &Path) -> Result<(), TemplateError> {
    fsio::write_atomic(path, ranked.to_jsonl().as_bytes()).map_err(|e| TemplateError::Io(e.to_string()))?;
    let meta = StoreMeta {
        slot_config: ranked.slot_config.clone(),
        provenance: provenance.to_vec(),
    };
    let meta = serde_json::to_string_pretty(&meta).map_err(|e| TemplateError::Io(e.to_string()))?;
    fsio::write_atomic(&meta_path(path), meta.as_bytes()).map_err(|e| TemplateError::Io(e.to_string()))
}

/// Loads a template store. Extra fields on a line (such as the `score` and
/// `rank` of ranked output) are ignored. Without a sidecar the default slot
/// configuration is assumed.
pub fn load_store(path: &Path) -> Result<TemplateCorpus, TemplateError> {
    let file = std::fs::File::open(path).map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
    let meta = match std::fs::read_to_string(meta_path(path)) {
        Ok(text) => Some(
            serde_json::from_str::<StoreMeta>(&text)
                .map_err(|e| TemplateError::Io(format!("bad sidecar: {e}")))?,
        ),
        Err(_) => None,
    };
    let (slot_config, provenance) = match meta {
        Some(m) => (m.slot_config, m.provenance),
        None => (SlotConfig::default(), Vec::new()),
    };
    let templates = read_templates(BufReader::new(file), &slot_config)?;
    let corpus = TemplateCorpus {
        templates,
        slot_config,
        provenance,
    };
    corpus.check_ids()?;
    Ok(corpus)
}

pub fn read_templates<R: BufRead>(reader: R, config: &SlotConfig) -> Result<Vec<Template>, TemplateError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TemplateError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Template = serde_json::from_str(&line).map_err(|e| TemplateError::BadRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        t.validate()
            .map_err(|reason| TemplateError::BadRecord { line: line_no, reason })?;
        if let Some(s) = t.slots().find(|s| !config.slots.contains(s)) {
            return Err(TemplateError::BadRecord {
                line: line_no,
                reason: format!("slot {s} is not in the slot configuration"),
            });
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Term {
    Word(String),
    Slot(SlotLabel),
}

fn terms(t: &Template) -> Vec<Term> {
    t.elements
        .iter()
        .map(|e| match e {
            Element::Literal(w) => Term::Word(w.to_lowercase()),
            Element::Slot(s) => Term::Slot(*s),
        })
        .collect()
}

/// Per-template TF-IDF sensitivity scores, in input order.
///
/// Each template is a document over lowercased literal words and slot
/// labels. With `tf = count / len` and `idf = ln((1 + N) / (1 + df)) + 1`,
/// a template's score is the sum, over its distinct terms, of the 2-norm of
/// that term's column in the document-term matrix.
pub fn tfidf_scores(templates: &[Template]) -> Result<Vec<f64>, TemplateError> {
    if templates.is_empty() {
        return Err(TemplateError::EmptyCorpus);
    }
    let n_docs = templates.len() as f64;
    let docs: Vec<BTreeMap<Term, f64>> = templates
        .iter()
        .map(|t| {
            let ts = terms(t);
            let len = ts.len() as f64;
            let mut tf: BTreeMap<Term, f64> = BTreeMap::new();
            for term in ts {
                *tf.entry(term).or_default() += 1.0;
            }
            tf.values_mut().for_each(|c| *c /= len);
            tf
        })
        .collect();

    let mut df: BTreeMap<&Term, usize> = BTreeMap::new();
    for d in &docs {
        for term in d.keys() {
            *df.entry(term).or_default() += 1;
        }
    }
    let idf: BTreeMap<&Term, f64> = df
        .iter()
        .map(|(t, &c)| (*t, ((1.0 + n_docs) / (1.0 + c as f64)).ln() + 1.0))
        .collect();

    let mut column: BTreeMap<&Term, Vec<f64>> = BTreeMap::new();
    for d in &docs {
        for (term, tf) in d {
            column.entry(term).or_default().push((tf * idf[term]).powi(2));
        }
    }
    let norms: BTreeMap<&Term, f64> = column
        .into_iter()
        .map(|(t, mut sq)| {
            // Sorted summation keeps norms bit-identical under corpus permutation.
            sq.sort_by(f64::total_cmp);
            (t, sq.iter().sum::<f64>().sqrt())
        })
        .collect();

    Ok(docs
        .iter()
        .map(|d| d.keys().map(|t| norms[t]).sum())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTemplate {
    pub template: Template,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedTemplates {
    pub entries: Vec<RankedTemplate>,
    pub slot_config: SlotConfig,
}

impl RankedTemplates {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSONL lines: the template record plus `score` and 1-based `rank`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            let mut v = serde_json::to_value(&e.template).expect("template serializes");
            if let serde_json::Value::Object(m) = &mut v {
                m.insert("score".into(), serde_json::json!(e.score));
                m.insert("rank".into(), serde_json::json!(i + 1));
            }
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

/// Sorts the corpus by descending TF-IDF score, ties broken by template id.
pub fn rank_templates(corpus: &TemplateCorpus) -> Result<RankedTemplates, TemplateError> {
    let scores = tfidf_scores(&corpus.templates)?;
    let mut entries: Vec<RankedTemplate> = corpus
        .templates
        .iter()
        .cloned()
        .zip(scores)
        .map(|(template, score)| RankedTemplate { template, score })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.template.template_id.cmp(&b.template.template_id))
    });
    Ok(RankedTemplates {
        entries,
        slot_config: corpus.slot_config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub k: usize,
    /// Percentage of the top-k held by each group, in report order.
    pub shares: Vec<(DemographicGroup, f64)>,
}

impl Proportions {
    pub fn share(&self, group: DemographicGroup) -> f64 {
        self.shares
            .iter()
            .find(|(g, _)| *g == group)
            .map_or(0.0, |(_, p)| *p)
    }
}

pub fn top_k_proportions(ranked: &RankedTemplates, k: usize) -> Result<Proportions, TemplateError> {
    if ranked.is_empty() {
        return Err(TemplateError::EmptyCorpus);
    }
    if k == 0 || k > ranked.len() {
        return Err(TemplateError::KTooLarge { k, size: ranked.len() });
    }
    let mut counts: BTreeMap<DemographicGroup, usize> = BTreeMap::new();
    for e in &ranked.entries[..k] {
        *counts.entry(e.template.group()).or_default() += 1;
    }
    Ok(Proportions {
        k,
        shares: DemographicGroup::ALL
            .iter()
            .map(|g| (*g, 100.0 * *counts.get(g).unwrap_or(&0) as f64 / k as f64))
            .collect(),
    })
}

/// Ranks the pooled corpus and reports the demographic make-up of the top-k.
pub fn rank_and_proportions(
    corpus: &TemplateCorpus,
    k: usize,
) -> Result<(RankedTemplates, Proportions), TemplateError> {
    let ranked = rank_templates(corpus)?;
    let props = top_k_proportions(&ranked, k)?;
    Ok((ranked, props))
}
