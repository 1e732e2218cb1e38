//! Coded survey responses: loading, question splitting, inter-rater
//! agreement and per-group descriptive statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: invalid value `{value}`")]
    BadEnumValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label sequences are empty")]
    EmptySequence,
    #[error("kappa is undefined: chance agreement is 1")]
    DegenerateMarginals,
    #[error("unknown grouping factor `{0}`")]
    UnknownFactor(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<csv::Error> for CorpusError {
    fn from(e: csv::Error) -> Self {
        CorpusError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CarCode {
    C,
    A,
    R,
}

impl CarCode {
    pub const ALL: [CarCode; 3] = [CarCode::C, CarCode::A, CarCode::R];

    pub fn as_str(self) -> &'static str {
        match self {
            CarCode::C => "C",
            CarCode::A => "A",
            CarCode::R => "R",
        }
    }
}

impl fmt::Display for CarCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CarCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C" | "CONCRETE" => Ok(CarCode::C),
            "A" | "ABSTRACT" => Ok(CarCode::A),
            "R" | "RELATIONAL" => Ok(CarCode::R),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpenCode {
    Open,
    Closed,
}

impl OpenCode {
    pub fn as_str(self) -> &'static str {
        match self {
            OpenCode::Open => "open",
            OpenCode::Closed => "closed",
        }
    }
}

impl fmt::Display for OpenCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpenCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" | "o" => Ok(OpenCode::Open),
            "closed" | "c" => Ok(OpenCode::Closed),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Mturk,
    Prolific,
    Other,
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mturk" => Ok(Platform::Mturk),
            "prolific" => Ok(Platform::Prolific),
            "other" => Ok(Platform::Other),
            _ => Err(s.to_string()),
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::Mturk => "MTurk",
            Platform::Prolific => "Prolific",
            Platform::Other => "Other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Story {
    BestFarm,
    Celebrations,
    Other(String),
}

impl From<String> for Story {
    fn from(s: String) -> Self {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "best_farm" | "bf" => Story::BestFarm,
            "celebrations" | "cb" => Story::Celebrations,
            _ => Story::Other(s.trim().to_string()),
        }
    }
}

impl From<Story> for String {
    fn from(s: Story) -> Self {
        match s {
            Story::BestFarm => "best_farm".to_string(),
            Story::Celebrations => "celebrations".to_string(),
            Story::Other(name) => name,
        }
    }
}

impl fmt::Display for Story {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Story::BestFarm => f.write_str("Best Farm"),
            Story::Celebrations => f.write_str("Celebrations"),
            Story::Other(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    During,
    After,
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "during" => Ok(Phase::During),
            "after" => Ok(Phase::After),
            _ => Err(s.to_string()),
        }
    }
}

/// How often the respondent reads with children, 0 (Rarely) to 3 (Very Frequently).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ReadFrequency(u8);

impl ReadFrequency {
    pub const LABELS: [&'static str; 4] = ["Rarely", "Sometimes", "Frequently", "Very Frequently"];

    pub fn new(level: u8) -> Option<Self> {
        (level <= 3).then_some(ReadFrequency(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        Self::LABELS[self.0 as usize]
    }
}

impl TryFrom<u8> for ReadFrequency {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ReadFrequency::new(v).ok_or_else(|| format!("read frequency {v} out of range 0-3"))
    }
}

impl From<ReadFrequency> for u8 {
    fn from(r: ReadFrequency) -> u8 {
        r.0
    }
}

impl FromStr for ReadFrequency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Ok(n) = t.parse::<u8>() {
            return ReadFrequency::new(n).ok_or_else(|| s.to_string());
        }
        Self::LABELS
            .iter()
            .position(|l| l.eq_ignore_ascii_case(t))
            .map(|p| ReadFrequency(p as u8))
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub is_caregiver: bool,
    pub is_latinx: bool,
    pub platform: Platform,
    pub read_frequency: ReadFrequency,
    pub experience_related_to_story: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedQuestion {
    pub question_id: String,
    pub participant_id: String,
    pub story: Story,
    pub page: u32,
    pub phase: Phase,
    pub text: String,
    pub car_code: CarCode,
    pub open_code: OpenCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coder_id: Option<String>,
}

impl CodedQuestion {
    /// Whitespace token count.
    pub fn length(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub profile: DemographicProfile,
    pub questions: Vec<CodedQuestion>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyCorpus {
    pub responses: BTreeMap<String, Participant>,
}

impl SurveyCorpus {
    pub fn questions(&self) -> impl Iterator<Item = (&DemographicProfile, &CodedQuestion)> {
        self.responses
            .values()
            .flat_map(|p| p.questions.iter().map(move |q| (&p.profile, q)))
    }

    pub fn question_count(&self) -> usize {
        self.responses.values().map(|p| p.questions.len()).sum()
    }

    pub fn stories_of(&self, participant_id: &str) -> BTreeSet<Story> {
        self.responses
            .get(participant_id)
            .map(|p| p.questions.iter().map(|q| q.story.clone()).collect())
            .unwrap_or_default()
    }

    /// Participants with questions under both stories.
    pub fn repeated_participants(&self) -> Vec<&str> {
        self.responses
            .keys()
            .filter(|id| {
                let s = self.stories_of(id);
                s.contains(&Story::BestFarm) && s.contains(&Story::Celebrations)
            })
            .map(String::as_str)
            .collect()
    }

    /// A corpus restricted to the given participants.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> SurveyCorpus {
        let keep: BTreeSet<&str> = ids.into_iter().collect();
        SurveyCorpus {
            responses: self
                .responses
                .iter()
                .filter(|(id, _)| keep.contains(id.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Participants who answered exactly one story.
    pub fn single_survey_participants(&self) -> Vec<&str> {
        self.responses
            .keys()
            .filter(|id| self.stories_of(id).len() == 1)
            .map(String::as_str)
            .collect()
    }
}

/// Maps CSV header names onto canonical column names.
#[derive(Debug, Clone, Default)]
pub struct SchemaConfig {
    pub aliases: BTreeMap<String, String>,
}

pub const REQUIRED_COLUMNS: [&str; 12] = [
    "participant_id",
    "platform",
    "story",
    "is_caregiver",
    "is_latinx",
    "read_frequency",
    "experience_related",
    "page",
    "phase",
    "question_text",
    "car_code",
    "open_code",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub participant_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadedSurvey {
    pub corpus: SurveyCorpus,
    pub rejected: Vec<RejectedRow>,
    pub warnings: Vec<String>,
}

/// Splits a response cell into single questions on `?` boundaries. Every
/// non-empty fragment ends with exactly one `?`.
pub fn split_questions(cell: &str) -> Vec<String> {
    cell.split('?')
        .map(|frag| frag.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|frag| !frag.is_empty())
        .map(|frag| format!("{frag}?"))
        .collect()
}

pub fn load_survey_csv(path: &Path, schema: &SchemaConfig) -> Result<LoadedSurvey, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    load_survey_reader(file, schema)
}

pub fn load_survey_reader<R: Read>(reader: R, schema: &SchemaConfig) -> Result<LoadedSurvey, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut loaded = LoadedSurvey::default();
    if headers.iter().all(str::is_empty) {
        loaded.warnings.push("survey file is empty".to_string());
        return Ok(loaded);
    }
    let column_of: BTreeMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let h = h.trim().trim_start_matches('\u{feff}');
            let name = schema.aliases.get(h).cloned().unwrap_or_else(|| h.to_string());
            (name, i)
        })
        .collect();
    for col in REQUIRED_COLUMNS {
        if !column_of.contains_key(col) {
            return Err(CorpusError::MissingColumn(col.to_string()));
        }
    }

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let get = |name: &str| -> &str {
            column_of
                .get(name)
                .and_then(|&c| record.get(c))
                .unwrap_or("")
        };
        let participant_id = get("participant_id").to_string();
        let reject = |reason: &str| RejectedRow {
            row,
            participant_id: participant_id.clone(),
            reason: reason.to_string(),
        };
        if participant_id.is_empty() {
            loaded.rejected.push(reject("missing participant_id"));
            continue;
        }
        if get("car_code").is_empty() || get("open_code").is_empty() {
            loaded.rejected.push(reject("missing question code"));
            continue;
        }

        let profile = DemographicProfile {
            is_caregiver: parse_field(row, "is_caregiver", get("is_caregiver"), parse_bool)?,
            is_latinx: parse_field(row, "is_latinx", get("is_latinx"), parse_bool)?,
            platform: parse_field(row, "platform", get("platform"), str::parse)?,
            read_frequency: parse_field(row, "read_frequency", get("read_frequency"), str::parse)?,
            experience_related_to_story: parse_field(
                row,
                "experience_related",
                get("experience_related"),
                parse_bool,
            )?,
        };
        let story = Story::from(get("story").to_string());
        let page: u32 = parse_field(row, "page", get("page"), |s| {
            s.parse::<u32>().ok().filter(|p| *p >= 1).ok_or(())
        })?;
        let phase: Phase = parse_field(row, "phase", get("phase"), str::parse)?;
        let car_code: CarCode = parse_field(row, "car_code", get("car_code"), str::parse)?;
        let open_code: OpenCode = parse_field(row, "open_code", get("open_code"), str::parse)?;
        let trigger = Some(get("trigger_sentence").to_string()).filter(|s| !s.is_empty());
        let coder = Some(get("coder_id").to_string()).filter(|s| !s.is_empty());

        let fragments = split_questions(get("question_text"));
        if fragments.is_empty() {
            loaded.rejected.push(reject("no question text"));
            continue;
        }

        let entry = loaded
            .corpus
            .responses
            .entry(participant_id.clone())
            .or_insert_with(|| Participant {
                profile: profile.clone(),
                questions: Vec::new(),
            });
        if entry.profile != profile {
            loaded.warnings.push(format!(
                "row {row}: demographics for participant `{participant_id}` differ from an earlier row; keeping the first"
            ));
        }
        for (k, text) in fragments.into_iter().enumerate() {
            entry.questions.push(CodedQuestion {
                question_id: question_id(row, k),
                participant_id: participant_id.clone(),
                story: story.clone(),
                page,
                phase,
                text,
                car_code,
                open_code,
                trigger_sentence: trigger.clone(),
                coder_id: coder.clone(),
            });
        }
    }
    if loaded.corpus.responses.is_empty() && loaded.rejected.is_empty() {
        loaded.warnings.push("survey file has no data rows".to_string());
    }
    Ok(loaded)
}

/// Identifier of the `fragment`-th (0-based) question split from data row `row`.
pub fn question_id(row: usize, fragment: usize) -> String {
    format!("q{row}_{}", fragment + 1)
}

fn parse_field<T, E>(
    row: usize,
    column: &str,
    value: &str,
    parse: impl Fn(&str) -> Result<T, E>,
) -> Result<T, CorpusError> {
    parse(value).map_err(|_| CorpusError::BadEnumValue {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn parse_bool(s: &str) -> Result<bool, ()> {
    match s.trim().to_ascii_lowercase().as_str() {
        "yes" | "y" | "true" | "1" => Ok(true),
        "no" | "n" | "false" | "0" => Ok(false),
        _ => Err(()),
    }
}

/// Cohen's kappa between two coders' label sequences.
pub fn cohen_kappa<L: Ord>(labels_a: &[L], labels_b: &[L]) -> Result<f64, CorpusError> {
    if labels_a.len() != labels_b.len() {
        return Err(CorpusError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    if labels_a.is_empty() {
        return Err(CorpusError::EmptySequence);
    }
    let n = labels_a.len() as f64;
    let mut marginals: BTreeMap<&L, (usize, usize)> = BTreeMap::new();
    let mut agree = 0usize;
    for (a, b) in labels_a.iter().zip(labels_b) {
        if a == b {
            agree += 1;
        }
        marginals.entry(a).or_default().0 += 1;
        marginals.entry(b).or_default().1 += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marginals
        .values()
        .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(CorpusError::DegenerateMarginals);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    IsCaregiver,
    IsLatinx,
    Platform,
    ReadFrequency,
    Experience,
    Story,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::IsCaregiver => "is_caregiver",
            Factor::IsLatinx => "is_latinx",
            Factor::Platform => "platform",
            Factor::ReadFrequency => "read_frequency",
            Factor::Experience => "experience_related",
            Factor::Story => "story",
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            Factor::IsCaregiver => "Caregiver",
            Factor::IsLatinx => "Hispanic/Latinx",
            Factor::Platform => "Platform",
            Factor::ReadFrequency => "Read Frequency",
            Factor::Experience => "Related Experience",
            Factor::Story => "Story",
        }
    }
}

impl FromStr for Factor {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "is_caregiver" | "caregiver" => Ok(Factor::IsCaregiver),
            "is_latinx" | "latinx" => Ok(Factor::IsLatinx),
            "platform" => Ok(Factor::Platform),
            "read_frequency" | "frequency" => Ok(Factor::ReadFrequency),
            "experience_related" | "experience" => Ok(Factor::Experience),
            "story" => Ok(Factor::Story),
            _ => Err(CorpusError::UnknownFactor(s.to_string())),
        }
    }
}

pub fn parse_factors(names: &[&str]) -> Result<Vec<Factor>, CorpusError> {
    names.iter().map(|n| n.parse()).collect()
}

/// The value one unit takes on a grouping factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorValue {
    Bool(bool),
    Platform(Platform),
    Frequency(ReadFrequency),
    Story(Story),
}

impl FactorValue {
    pub fn label(&self) -> String {
        match self {
            FactorValue::Bool(true) => "Yes".to_string(),
            FactorValue::Bool(false) => "No".to_string(),
            FactorValue::Platform(p) => p.to_string(),
            FactorValue::Frequency(f) => f.label().to_string(),
            FactorValue::Story(s) => s.to_string(),
        }
    }

    fn sort_key(&self) -> (u8, String) {
        match self {
            FactorValue::Bool(b) => (u8::from(!*b), String::new()),
            FactorValue::Platform(p) => (*p as u8, String::new()),
            FactorValue::Frequency(f) => (f.level(), String::new()),
            FactorValue::Story(s) => match s {
                Story::BestFarm => (0, String::new()),
                Story::Celebrations => (1, String::new()),
                Story::Other(n) => (2, n.clone()),
            },
        }
    }
}

pub type GroupKey = Vec<(Factor, FactorValue)>;

pub fn group_label(key: &GroupKey) -> String {
    key.iter().map(|(_, v)| v.label()).collect::<Vec<_>>().join("/")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Relational,
    Abstract,
    OpenEnded,
}

impl Outcome {
    pub fn counts(self, q: &CodedQuestion) -> bool {
        match self {
            Outcome::Relational => q.car_code == CarCode::R,
            Outcome::Abstract => q.car_code == CarCode::A,
            Outcome::OpenEnded => q.open_code == OpenCode::Open,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Relational => "#Relational",
            Outcome::Abstract => "#Abstract",
            Outcome::OpenEnded => "#Openended",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Outcome::Relational => "Relational",
            Outcome::Abstract => "Abstract",
            Outcome::OpenEnded => "Open-ended",
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "relational" | "r" => Ok(Outcome::Relational),
            "abstract" | "a" => Ok(Outcome::Abstract),
            "open_ended" | "openended" | "open" => Ok(Outcome::OpenEnded),
            _ => Err(s.to_string()),
        }
    }
}

/// Which prompts count towards per-participant totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountOptions {
    pub phases: BTreeSet<Phase>,
}

impl Default for CountOptions {
    fn default() -> Self {
        CountOptions {
            phases: [Phase::During, Phase::After].into_iter().collect(),
        }
    }
}

/// One counting unit: a participant, or a participant within one story
/// when story is among the grouping factors.
#[derive(Debug, Clone)]
pub struct Unit<'a> {
    pub participant_id: &'a str,
    pub profile: &'a DemographicProfile,
    pub story: Option<Story>,
    pub questions: Vec<&'a CodedQuestion>,
}

impl Unit<'_> {
    pub fn value(&self, factor: Factor) -> FactorValue {
        match factor {
            Factor::IsCaregiver => FactorValue::Bool(self.profile.is_caregiver),
            Factor::IsLatinx => FactorValue::Bool(self.profile.is_latinx),
            Factor::Platform => FactorValue::Platform(self.profile.platform),
            Factor::ReadFrequency => FactorValue::Frequency(self.profile.read_frequency),
            Factor::Experience => FactorValue::Bool(self.profile.experience_related_to_story),
            Factor::Story => FactorValue::Story(
                self.story
                    .clone()
                    .unwrap_or_else(|| Story::Other("unknown".to_string())),
            ),
        }
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.questions.iter().filter(|q| outcome.counts(q)).count()
    }
}

pub fn units<'a>(corpus: &'a SurveyCorpus, by_story: bool, opts: &CountOptions) -> Vec<Unit<'a>> {
    let mut out = Vec::new();
    for (id, p) in &corpus.responses {
        let kept: Vec<&CodedQuestion> = p
            .questions
            .iter()
            .filter(|q| opts.phases.contains(&q.phase))
            .collect();
        if by_story {
            let stories: BTreeSet<&Story> = p.questions.iter().map(|q| &q.story).collect();
            for story in stories {
                out.push(Unit {
                    participant_id: id,
                    profile: &p.profile,
                    story: Some(story.clone()),
                    questions: kept.iter().copied().filter(|q| &q.story == story).collect(),
                });
            }
        } else {
            out.push(Unit {
                participant_id: id,
                profile: &p.profile,
                story: None,
                questions: kept,
            });
        }
    }
    out
}

fn group_units<'a, 'b>(units: &'b [Unit<'a>], grouping: &[Factor]) -> Vec<(GroupKey, Vec<&'b Unit<'a>>)> {
    let mut groups: Vec<(GroupKey, Vec<&Unit>)> = Vec::new();
    for u in units {
        let key: GroupKey = grouping.iter().map(|&f| (f, u.value(f))).collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(u),
            None => groups.push((key, vec![u])),
        }
    }
    // Last factor varies slowest, so `[caregiver, latinx]` gives
    // Yes/Yes, No/Yes, Yes/No, No/No.
    groups.sort_by(|(a, _), (b, _)| {
        let ka: Vec<_> = a.iter().rev().map(|(_, v)| v.sort_key()).collect();
        let kb: Vec<_> = b.iter().rev().map(|(_, v)| v.sort_key()).collect();
        ka.cmp(&kb)
    });
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: GroupKey,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n < 2`.
    pub sd: f64,
    pub n_lt_2: bool,
}

fn summarize(key: GroupKey, values: &[f64]) -> GroupSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    GroupSummary {
        key,
        n,
        mean,
        sd,
        n_lt_2: n < 2,
    }
}

/// Mean and SD of per-unit outcome counts in each group.
pub fn descriptive_counts(
    corpus: &SurveyCorpus,
    grouping: &[Factor],
    outcome: Outcome,
    opts: &CountOptions,
) -> Vec<GroupSummary> {
    let units = units(corpus, grouping.contains(&Factor::Story), opts);
    group_units(&units, grouping)
        .into_iter()
        .map(|(key, members)| {
            let values: Vec<f64> = members.iter().map(|u| u.count(outcome) as f64).collect();
            summarize(key, &values)
        })
        .collect()
}

/// Reading frequency per group on the survey's 1 (Rarely) to 4 (Very
/// Frequently) answer scale.
pub fn frequency_summary(corpus: &SurveyCorpus, grouping: &[Factor]) -> Vec<GroupSummary> {
    let units = units(corpus, grouping.contains(&Factor::Story), &CountOptions::default());
    group_units(&units, grouping)
        .into_iter()
        .map(|(key, members)| {
            let values: Vec<f64> = members
                .iter()
                .map(|u| f64::from(u.profile.read_frequency.level()) + 1.0)
                .collect();
            summarize(key, &values)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub key: GroupKey,
    pub n_questions: usize,
    /// `None` when the group asked no Relational questions.
    pub mean: Option<f64>,
}

/// Mean whitespace token count of Relational questions per group.
pub fn mean_question_length(corpus: &SurveyCorpus, grouping: &[Factor]) -> Vec<LengthSummary> {
    let units = units(corpus, grouping.contains(&Factor::Story), &CountOptions::default());
    group_units(&units, grouping)
        .into_iter()
        .map(|(key, members)| {
            let lengths: Vec<usize> = members
                .iter()
                .flat_map(|u| u.questions.iter())
                .filter(|q| q.car_code == CarCode::R)
                .map(|q| q.length())
                .collect();
            let mean = (!lengths.is_empty())
                .then(|| lengths.iter().sum::<usize>() as f64 / lengths.len() as f64);
            LengthSummary {
                key,
                n_questions: lengths.len(),
                mean,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "participant_id,platform,story,is_caregiver,is_latinx,read_frequency,experience_related,page,phase,question_text,car_code,open_code\n";

    fn load(body: &str) -> Result<LoadedSurvey, CorpusError> {
        load_survey_reader(format!("{HEADER}{body}").as_bytes(), &SchemaConfig::default())
    }

    #[test]
    fn splits_multi_question_cells() {
        let l = load("p1,prolific,celebrations,yes,yes,2,no,1,during,Who is Sofia? What is mole?,C,closed\n").unwrap();
        let qs = &l.corpus.responses["p1"].questions;
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].text, "Who is Sofia?");
        assert_eq!(qs[1].text, "What is mole?");
        assert_eq!((qs[0].page, qs[0].car_code, &qs[0].story), (qs[1].page, qs[1].car_code, &qs[1].story));
        assert_ne!(qs[0].question_id, qs[1].question_id);
    }

    #[test]
    fn empty_inputs() {
        let l = load("").unwrap();
        assert!(l.corpus.responses.is_empty());
        assert!(!l.warnings.is_empty());
        let l = load_survey_reader("".as_bytes(), &SchemaConfig::default()).unwrap();
        assert!(l.corpus.responses.is_empty());
        assert_eq!(l.warnings, ["survey file is empty"]);
    }

    #[test]
    fn bad_enum_and_missing_codes() {
        let e = load("p1,prolific,best_farm,yes,no,1,no,1,during,Where is the cow?,X,open\n").unwrap_err();
        assert_eq!(
            e,
            CorpusError::BadEnumValue {
                row: 1,
                column: "car_code".into(),
                value: "X".into()
            }
        );
        let l = load("p1,prolific,best_farm,yes,no,1,no,1,during,Where is the cow?,,open\n").unwrap();
        assert!(l.corpus.responses.is_empty());
        assert_eq!(l.rejected.len(), 1);
        assert_eq!(l.rejected[0].row, 1);
    }

    #[test]
    fn missing_column() {
        let e = load_survey_reader("participant_id,story\np1,bf\n".as_bytes(), &SchemaConfig::default()).unwrap_err();
        assert_eq!(e, CorpusError::MissingColumn("platform".into()));
    }

    #[test]
    fn aliases_map_headers() {
        let mut schema = SchemaConfig::default();
        schema.aliases.insert("pid".into(), "participant_id".into());
        let csv = HEADER.replacen("participant_id", "pid", 1)
            + "p9,mturk,best_farm,no,no,0,yes,2,after,Do you like cows?,R,closed\n";
        let l = load_survey_reader(csv.as_bytes(), &schema).unwrap();
        assert!(l.corpus.responses.contains_key("p9"));
    }

    #[test]
    fn kappa_examples() {
        let a = ["C", "C", "A", "R"];
        let b = ["C", "A", "A", "R"];
        assert!((cohen_kappa(&a, &b).unwrap() - 0.636364).abs() < 1e-6);
        assert!((cohen_kappa(&a, &b).unwrap() - 0.4375 / 0.6875).abs() < 1e-12);
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        assert!((cohen_kappa(&["C", "A"], &["A", "C"]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cohen_kappa(&["C"], &["C", "A"]), Err(CorpusError::LengthMismatch(1, 2)));
        assert_eq!(cohen_kappa(&["C", "C"], &["C", "C"]), Err(CorpusError::DegenerateMarginals));
        assert_eq!(cohen_kappa::<&str>(&[], &[]), Err(CorpusError::EmptySequence));
    }

    fn corpus_with(counts: &[(bool, bool, usize)]) -> SurveyCorpus {
        let mut body = String::new();
        for (i, (care, latinx, r)) in counts.iter().enumerate() {
            body.push_str(&format!(
                "p{i},prolific,best_farm,{care},{latinx},2,no,1,during,What is this?,C,closed\n"
            ));
            for _ in 0..*r {
                body.push_str(&format!(
                    "p{i},prolific,best_farm,{care},{latinx},2,no,1,after,Have you ever been on a farm with your family?,R,open\n"
                ));
            }
        }
        load(&body).unwrap().corpus
    }

    #[test]
    fn descriptive_counts_mean_and_sd() {
        let c = corpus_with(&[(true, true, 0), (true, true, 1), (true, true, 2)]);
        let g = descriptive_counts(&c, &[], Outcome::Relational, &CountOptions::default());
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].n, g[0].mean, g[0].sd), (3, 1.0, 1.0));

        let c = corpus_with(&[(true, true, 4)]);
        let g = descriptive_counts(&c, &[], Outcome::Relational, &CountOptions::default());
        assert_eq!((g[0].sd, g[0].n_lt_2), (0.0, true));
    }

    #[test]
    fn table_three_row_order() {
        let c = corpus_with(&[(false, false, 1), (true, false, 1), (false, true, 1), (true, true, 1)]);
        let g = descriptive_counts(
            &c,
            &[Factor::IsCaregiver, Factor::IsLatinx],
            Outcome::Relational,
            &CountOptions::default(),
        );
        let labels: Vec<String> = g.iter().map(|s| group_label(&s.key)).collect();
        assert_eq!(labels, ["Yes/Yes", "No/Yes", "Yes/No", "No/No"]);
    }

    #[test]
    fn phase_filter_changes_counts() {
        let c = corpus_with(&[(true, true, 2)]);
        let only_during = CountOptions {
            phases: [Phase::During].into_iter().collect(),
        };
        let g = descriptive_counts(&c, &[], Outcome::Relational, &only_during);
        assert_eq!(g[0].mean, 0.0);
    }

    #[test]
    fn question_lengths() {
        let c = corpus_with(&[(true, true, 1), (false, false, 0)]);
        let l = mean_question_length(&c, &[Factor::IsLatinx]);
        assert_eq!(l[0].mean, Some(10.0));
        assert_eq!(l[1].mean, None);

        let body = "p1,prolific,best_farm,yes,yes,1,no,1,during,How are you?,R,open\n";
        let c = load(body).unwrap().corpus;
        assert_eq!(mean_question_length(&c, &[])[0].mean, Some(3.0));

        let body = "p1,prolific,best_farm,yes,yes,1,no,1,during,one two three four five six seven eight?,R,open\n\
                    p2,prolific,best_farm,yes,yes,1,no,1,during,one two three four five six seven eight nine ten?,R,open\n";
        let c = load(body).unwrap().corpus;
        assert_eq!(mean_question_length(&c, &[])[0].mean, Some(9.0));
    }

    #[test]
    fn unknown_factor() {
        assert_eq!(parse_factors(&["latinx", "zodiac"]), Err(CorpusError::UnknownFactor("zodiac".into())));
    }

    #[test]
    fn repeated_participants_cover_both_stories() {
        let body = "p1,prolific,best_farm,yes,yes,1,no,1,during,Why?,R,open\n\
                    p1,prolific,celebrations,yes,yes,1,no,1,during,Who?,R,open\n\
                    p2,prolific,celebrations,no,yes,1,no,1,during,What?,C,closed\n";
        let c = load(body).unwrap().corpus;
        assert_eq!(c.repeated_participants(), ["p1"]);
        assert_eq!(c.single_survey_participants(), ["p2"]);
        let by_story = descriptive_counts(&c, &[Factor::Story], Outcome::Relational, &CountOptions::default());
        assert_eq!(by_story.iter().map(|g| g.n).sum::<usize>(), 3);
    }

    proptest! {
        #[test]
        fn split_leaves_no_interior_question_marks(cell in "[a-z ?]{0,60}") {
            for q in split_questions(&cell) {
                let body = &q[..q.len() - 1];
                prop_assert!(!body.contains('?'));
                prop_assert!(q.ends_with('?'));
                prop_assert!(!body.trim().is_empty());
            }
        }

        #[test]
        fn kappa_is_symmetric(pairs in proptest::collection::vec((0u8..3, 0u8..3), 1..30)) {
            let a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            match (cohen_kappa(&a, &b), cohen_kappa(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
                }
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                _ => prop_assert!(false, "asymmetric result"),
            }
            if let Ok(k) = cohen_kappa(&a, &a) {
                prop_assert_eq!(k, 1.0);
            }
        }

        #[test]
        fn group_sizes_sum_to_participants(rows in proptest::collection::vec((any::<bool>(), any::<bool>(), 0usize..3), 1..12)) {
            let c = corpus_with(&rows);
            let g = descriptive_counts(&c, &[Factor::IsCaregiver, Factor::IsLatinx], Outcome::Relational, &CountOptions::default());
            prop_assert_eq!(g.iter().map(|s| s.n).sum::<usize>(), c.responses.len());
        }
    }
}
