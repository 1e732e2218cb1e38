//! Question generation: template matching against story sentences, slot
//! filling, rule-based repair and the optional paraphrase stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{capitalize_first, detokenize, simple_tokenize, AnnotatedSentence, SlotLabel, Token, Upos};
use crate::corpus::{CarCode, OpenCode};
use crate::paraphrase::ParaphraseClient;
use crate::templates::{extract_elements, DemographicGroup, Element, RankedTemplates, SlotConfig, Template};

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("template element {0} is a slot with no binding")]
    UnboundSlot(usize),
    #[error("no templates satisfy the generation filters")]
    EmptyTemplatePool,
    #[error("invalid filter: {0}")]
    BadFilter(String),
}

/// Relations that mark a token as an argument or clause head. A token
/// carrying one of these may fill any argument slot through its POS tag;
/// a token labeled with any other relation (`poss`, `det`, `dative`, ...)
/// may only fill a dependency slot whose relation it carries.
const ARGUMENT_RELATIONS: [&str; 4] = ["nsubj", "dobj", "pobj", "root"];

/// Whether `token` may fill `slot`.
pub fn slot_accepts(slot: SlotLabel, token: &Token) -> bool {
    if token.upos == Upos::Punct {
        return false;
    }
    match slot.deprel() {
        Some(rel) => {
            if token.deprel.as_deref() == Some(rel) {
                return true;
            }
            let may_fall_back = token
                .deprel
                .as_deref()
                .is_none_or(|d| ARGUMENT_RELATIONS.contains(&d));
            may_fall_back
                && match slot {
                    SlotLabel::Root => matches!(token.upos, Upos::Verb | Upos::Aux),
                    _ => matches!(token.upos, Upos::Noun | Upos::Propn | Upos::Pron),
                }
        }
        None => SlotLabel::from_upos(token.upos) == Some(slot),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundSlot {
    /// Position of the slot within the template's elements.
    pub element: usize,
    pub token: usize,
    pub form: String,
}

/// Slot assignments in template order; token indices strictly increase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBinding(pub Vec<BoundSlot>);

impl SlotBinding {
    pub fn token_indices(&self) -> Vec<usize> {
        self.0.iter().map(|b| b.token).collect()
    }

    pub fn get(&self, element: usize) -> Option<&BoundSlot> {
        self.0.iter().find(|b| b.element == element)
    }

    /// Builds a binding from explicit token choices, one per slot in order.
    pub fn from_tokens(template: &Template, sentence: &AnnotatedSentence, tokens: &[usize]) -> Self {
        let slots = template
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.slot().is_some())
            .map(|(i, _)| i);
        SlotBinding(
            slots
                .zip(tokens)
                .map(|(element, &t)| BoundSlot {
                    element,
                    token: t,
                    form: fill_form(&sentence.tokens[t]),
                })
                .collect(),
        )
    }
}

fn fill_form(token: &Token) -> String {
    let form = token.fill_form();
    if token.index == 0 && token.upos != Upos::Propn && form != "I" {
        form.to_lowercase()
    } else {
        form
    }
}

/// Greedy leftmost matching: each slot, in order, takes the earliest
/// compatible token after the previous slot's token. Literals need no
/// support in the sentence. Returns `None` when no assignment exists.
pub fn match_template(template: &Template, sentence: &AnnotatedSentence) -> Option<SlotBinding> {
    let mut next = 0;
    let mut bound = Vec::new();
    for (i, el) in template.elements.iter().enumerate() {
        let Some(slot) = el.slot() else { continue };
        let pos = sentence.tokens[next..]
            .iter()
            .position(|t| slot_accepts(slot, t))?
            + next;
        bound.push(BoundSlot {
            element: i,
            token: pos,
            form: fill_form(&sentence.tokens[pos]),
        });
        next = pos + 1;
    }
    if bound.is_empty() {
        return None;
    }
    Some(SlotBinding(bound))
}

/// Re-checks a binding against the compatibility table and ordering.
pub fn binding_is_valid(template: &Template, sentence: &AnnotatedSentence, binding: &SlotBinding) -> bool {
    let slots: Vec<(usize, SlotLabel)> = template
        .elements
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.slot().map(|s| (i, s)))
        .collect();
    slots.len() == binding.0.len()
        && slots.iter().zip(&binding.0).all(|((i, s), b)| {
            *i == b.element && sentence.tokens.get(b.token).is_some_and(|t| slot_accepts(*s, t))
        })
        && binding.0.windows(2).all(|w| w[0].token < w[1].token)
}

/// Substitutes bound forms for slots and detokenizes; the result always
/// ends in `?`.
pub fn fill_template(template: &Template, binding: &SlotBinding) -> Result<String, GeneratorError> {
    let mut words = Vec::with_capacity(template.elements.len() + 1);
    for (i, el) in template.elements.iter().enumerate() {
        match el {
            Element::Literal(w) => words.push(w.clone()),
            Element::Slot(_) => {
                let b = binding.get(i).ok_or(GeneratorError::UnboundSlot(i))?;
                words.push(b.form.clone());
            }
        }
    }
    words.push("?".to_string());
    Ok(detokenize(&words).expect("template has at least one element"))
}

/// Words after which no determiner is reinserted.
const DETERMINERS: [&str; 17] = [
    "a", "an", "the", "this", "that", "these", "those", "my", "your", "his", "her", "its", "our", "their",
    "some", "every", "any",
];

/// Deterministic repairs: reattach determiners that precede bound nouns in
/// the source sentence, capitalize, collapse repeated words and end with a
/// single `?`. Idempotent.
pub fn rule_fix(raw: &str, sentence: &AnnotatedSentence, binding: &SlotBinding) -> String {
    let mut words: Vec<String> = simple_tokenize(raw)
        .into_iter()
        .filter(|w| w != "?")
        .collect();

    let mut cursor = 0;
    for b in &binding.0 {
        let Some(tok) = sentence.tokens.get(b.token) else { continue };
        let Some(pos) = words[cursor.min(words.len())..]
            .iter()
            .position(|w| w.eq_ignore_ascii_case(&b.form))
            .map(|p| p + cursor)
        else {
            continue;
        };
        cursor = pos + 1;
        if !matches!(tok.upos, Upos::Noun | Upos::Propn) || b.token == 0 {
            continue;
        }
        let det = &sentence.tokens[b.token - 1];
        if det.upos != Upos::Det || binding.0.iter().any(|o| o.token == det.index) {
            continue;
        }
        let determined = pos > 0
            && (words[pos - 1].eq_ignore_ascii_case(&det.form)
                || DETERMINERS.iter().any(|d| words[pos - 1].eq_ignore_ascii_case(d)));
        if !determined {
            words.insert(pos, det.form.to_lowercase());
            cursor += 1;
        }
    }

    words.dedup_by(|b, a| a.eq_ignore_ascii_case(b));
    if let Some(first) = words.first_mut() {
        *first = capitalize_first(first);
    }
    words.push("?".to_string());
    detokenize(&words).unwrap_or_else(|_| "?".to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    RuleFixed,
    Paraphrased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub text: String,
    pub template_id: String,
    pub sentence_id: String,
    pub binding: SlotBinding,
    pub car_code: CarCode,
    pub open_code: OpenCode,
    pub stage: Stage,
}

/// Target C/A/R shares of generated questions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quota {
    pub concrete: f64,
    pub abstract_: f64,
    pub relational: f64,
}

impl Quota {
    pub fn equal() -> Self {
        Quota {
            concrete: 1.0 / 3.0,
            abstract_: 1.0 / 3.0,
            relational: 1.0 / 3.0,
        }
    }

    pub fn share(&self, code: CarCode) -> f64 {
        match code {
            CarCode::C => self.concrete,
            CarCode::A => self.abstract_,
            CarCode::R => self.relational,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let shares = [self.concrete, self.abstract_, self.relational];
        if shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err("quota shares must be non-negative".into());
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(format!("quota shares sum to {total}, expected 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationFilters {
    pub car_code: Option<CarCode>,
    pub open_code: Option<OpenCode>,
    pub demographic: Option<DemographicGroup>,
    pub top_k: usize,
    pub max_per_sentence: usize,
    pub quota: Option<Quota>,
}

impl Default for GenerationFilters {
    fn default() -> Self {
        GenerationFilters {
            car_code: None,
            open_code: None,
            demographic: None,
            top_k: 50,
            max_per_sentence: 3,
            quota: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub sentences: usize,
    pub pool_size: usize,
    pub matches: usize,
    pub emitted: usize,
    pub duplicates_dropped: usize,
    pub paraphrase_attempted: usize,
    pub paraphrase_succeeded: usize,
    pub paraphrase_failed: usize,
    pub failures: Vec<String>,
}

impl GenerationReport {
    pub fn absorb(&mut self, other: GenerationReport) {
        self.sentences += other.sentences;
        self.pool_size = self.pool_size.max(other.pool_size);
        self.matches += other.matches;
        self.emitted += other.emitted;
        self.duplicates_dropped += other.duplicates_dropped;
        self.paraphrase_attempted += other.paraphrase_attempted;
        self.paraphrase_succeeded += other.paraphrase_succeeded;
        self.paraphrase_failed += other.paraphrase_failed;
        self.failures.extend(other.failures);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub questions: Vec<GeneratedQuestion>,
    pub report: GenerationReport,
}

/// Templates passing the filters, in rank order, truncated to `top_k`.
/// Each entry carries its global rank.
fn template_pool<'a>(ranked: &'a RankedTemplates, filters: &GenerationFilters) -> Vec<(usize, &'a Template)> {
    ranked
        .entries
        .iter()
        .enumerate()
        .map(|(rank, e)| (rank, &e.template))
        .filter(|(_, t)| filters.car_code.is_none_or(|c| t.car_code == c))
        .filter(|(_, t)| filters.open_code.is_none_or(|o| t.open_code == o))
        .filter(|(_, t)| filters.demographic.is_none_or(|d| t.group() == d))
        .take(filters.top_k)
        .collect()
}

struct Candidate<'a> {
    rank: usize,
    template: &'a Template,
    binding: SlotBinding,
}

/// Generates questions for every sentence of a page. Output is ordered by
/// sentence, then template rank; exact duplicate texts are dropped.
pub fn generate_for_page(
    page: &[AnnotatedSentence],
    ranked: &RankedTemplates,
    filters: &GenerationFilters,
    paraphraser: Option<&ParaphraseClient>,
) -> Result<GenerationOutput, GeneratorError> {
    if filters.max_per_sentence == 0 {
        return Err(GeneratorError::BadFilter("max_per_sentence must be at least 1".into()));
    }
    if let Some(q) = &filters.quota {
        q.validate().map_err(GeneratorError::BadFilter)?;
    }
    let pool = template_pool(ranked, filters);
    if pool.is_empty() {
        return Err(GeneratorError::EmptyTemplatePool);
    }
    let mut report = GenerationReport {
        sentences: page.len(),
        pool_size: pool.len(),
        ..Default::default()
    };

    let mut picked_per_code = [0usize; 3];
    let mut drafts: Vec<(usize, Candidate)> = Vec::new();
    for (si, sentence) in page.iter().enumerate() {
        let mut chosen = match &filters.quota {
            None => pool
                .iter()
                .filter_map(|&(rank, template)| {
                    match_template(template, sentence).map(|binding| Candidate { rank, template, binding })
                })
                .take(filters.max_per_sentence)
                .collect(),
            Some(quota) => pick_with_quota(&pool, sentence, filters.max_per_sentence, quota, &mut picked_per_code),
        };
        chosen.sort_by_key(|c| c.rank);
        report.matches += chosen.len();
        drafts.extend(chosen.into_iter().map(|c| (si, c)));
    }

    let fixed: Vec<(usize, Candidate, String)> = drafts
        .into_iter()
        .map(|(si, c)| {
            let raw = fill_template(c.template, &c.binding).expect("matched bindings cover every slot");
            let text = rule_fix(&raw, &page[si], &c.binding);
            (si, c, text)
        })
        .collect();

    let texts: Vec<String> = fixed.iter().map(|(_, _, t)| t.clone()).collect();
    let outcomes = crate::paraphrase::paraphrase_all(&texts, paraphraser);

    let mut seen = std::collections::HashSet::new();
    let mut questions = Vec::new();
    for ((si, c, _), outcome) in fixed.into_iter().zip(outcomes) {
        if paraphraser.is_some() {
            report.paraphrase_attempted += 1;
            match &outcome.failure {
                None => report.paraphrase_succeeded += 1,
                Some(reason) => {
                    report.paraphrase_failed += 1;
                    report.failures.push(reason.clone());
                }
            }
        }
        if !seen.insert(outcome.text.clone()) {
            report.duplicates_dropped += 1;
            continue;
        }
        questions.push(GeneratedQuestion {
            text: outcome.text,
            template_id: c.template.template_id.clone(),
            sentence_id: page[si].sentence_id.clone(),
            binding: c.binding,
            car_code: c.template.car_code,
            open_code: c.template.open_code,
            stage: outcome.stage,
        });
    }
    report.emitted = questions.len();
    Ok(GenerationOutput { questions, report })
}

/// Weighted round-robin over C/A/R pools: each pick goes to the pool whose
/// running count lags its share the most and still has a matching template.
fn pick_with_quota<'a>(
    pool: &[(usize, &'a Template)],
    sentence: &AnnotatedSentence,
    max: usize,
    quota: &Quota,
    picked: &mut [usize; 3],
) -> Vec<Candidate<'a>> {
    let mut queues: Vec<std::collections::VecDeque<Candidate<'a>>> = CarCode::ALL
        .iter()
        .map(|code| {
            pool.iter()
                .filter(|(_, t)| t.car_code == *code)
                .filter_map(|&(rank, template)| {
                    match_template(template, sentence).map(|binding| Candidate { rank, template, binding })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < max {
        let total: usize = picked.iter().sum();
        let best = CarCode::ALL
            .iter()
            .enumerate()
            .filter(|(i, code)| quota.share(**code) > 0.0 && !queues[*i].is_empty())
            .map(|(i, code)| (i, quota.share(*code) * (total + 1) as f64 - picked[i] as f64))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = best else { break };
        out.push(queues[i].pop_front().expect("non-empty queue"));
        picked[i] += 1;
    }
    out
}

/// Generates for a whole story, grouping sentences by their `page` comment
/// (sentences without one belong to page 1).
pub fn generate_for_story(
    sentences: &[AnnotatedSentence],
    ranked: &RankedTemplates,
    filters: &GenerationFilters,
    paraphraser: Option<&ParaphraseClient>,
) -> Result<GenerationOutput, GeneratorError> {
    let mut pages: std::collections::BTreeMap<u32, Vec<AnnotatedSentence>> = Default::default();
    for s in sentences {
        pages.entry(s.page().unwrap_or(1)).or_default().push(s.clone());
    }
    let mut all = GenerationOutput {
        questions: Vec::new(),
        report: GenerationReport::default(),
    };
    for page in pages.values() {
        let out = generate_for_page(page, ranked, filters, paraphraser)?;
        all.questions.extend(out.questions);
        all.report.absorb(out.report);
    }
    all.report.emitted = all.questions.len();
    Ok(all)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundTripError {
    NoMatch,
    WrongBinding { expected: Vec<usize>, found: Vec<usize> },
    TextMismatch { expected: String, found: String },
}

fn normalize_surface(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Checks that a template matches its own source question with the
/// identity binding and that filling it reproduces the question text
/// (ignoring whitespace, case and contraction expansion).
pub fn check_round_trip(
    question: &AnnotatedSentence,
    template: &Template,
    config: &SlotConfig,
) -> Result<(), RoundTripError> {
    let extracted = extract_elements(question, config).map_err(|_| RoundTripError::NoMatch)?;
    let origins: Vec<usize> = extracted
        .iter()
        .filter(|e| e.element.slot().is_some())
        .map(|e| e.token_index)
        .collect();
    let binding = match_template(template, question).ok_or(RoundTripError::NoMatch)?;
    if binding.token_indices() != origins {
        return Err(RoundTripError::WrongBinding {
            expected: origins,
            found: binding.token_indices(),
        });
    }
    let filled = fill_template(template, &binding).map_err(|_| RoundTripError::NoMatch)?;
    let source: Vec<String> = extracted
        .iter()
        .map(|e| {
            let tok = &question.tokens[e.token_index];
            if e.element.slot().is_some() { tok.fill_form() } else { tok.form.clone() }
        })
        .collect();
    let expected = detokenize(&source).unwrap_or_default();
    let expected = if expected.ends_with('?') { expected } else { format!("{expected}?") };
    if normalize_surface(&filled) != normalize_surface(&expected) {
        return Err(RoundTripError::TextMismatch {
            expected,
            found: filled,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{Demographic, TemplateCorpus};
    use proptest::prelude::*;

    fn quake() -> AnnotatedSentence {
        let toks = [
            ("It", "it", Upos::Pron, "nsubj"),
            ("is", "be", Upos::Aux, "cop"),
            ("an", "a", Upos::Det, "det"),
            ("earthquake", "earthquake", Upos::Noun, "root"),
            ("!", "!", Upos::Punct, "punct"),
        ];
        AnnotatedSentence {
            sentence_id: "quake".into(),
            text: "It is an earthquake!".into(),
            tokens: toks
                .iter()
                .enumerate()
                .map(|(i, (f, l, u, d))| Token::new(i, *f, *u).with_lemma(*l).with_deprel(d))
                .collect(),
            meta: Default::default(),
        }
    }

    fn tpl(id: &str, elements: Vec<Element>, car: CarCode) -> Template {
        Template {
            template_id: id.into(),
            elements,
            car_code: car,
            open_code: OpenCode::Open,
            demographic: Demographic { latinx: true, caregiver: true },
            source_question_id: id.into(),
            duplicate_count: 1,
        }
    }

    fn what_aux_nsubj() -> Template {
        tpl(
            "t1",
            vec![Element::lit("What"), Element::Slot(SlotLabel::Aux), Element::Slot(SlotLabel::Nsubj)],
            CarCode::C,
        )
    }

    #[test]
    fn worked_example_chain() {
        let s = quake();
        let t = what_aux_nsubj();
        let b = match_template(&t, &s).unwrap();
        assert_eq!(b.token_indices(), [1, 3]);
        let raw = fill_template(&t, &b).unwrap();
        assert_eq!(raw, "What is earthquake?");
        assert_eq!(rule_fix(&raw, &s, &b), "What is an earthquake?");
    }

    #[test]
    fn contracted_copula_fills_as_is() {
        let mut s = quake();
        s.tokens[1].form = "'s".into();
        let b = match_template(&what_aux_nsubj(), &s).unwrap();
        assert_eq!(fill_template(&what_aux_nsubj(), &b).unwrap(), "What is earthquake?");
    }

    #[test]
    fn missing_category_and_order_violation() {
        let det = tpl("d", vec![Element::lit("Is"), Element::Slot(SlotLabel::Det)], CarCode::C);
        let mut s = quake();
        s.tokens.remove(2);
        for (i, t) in s.tokens.iter_mut().enumerate() {
            t.index = i;
        }
        assert_eq!(match_template(&det, &s), None);

        let order = tpl("o", vec![Element::Slot(SlotLabel::Noun), Element::Slot(SlotLabel::Aux)], CarCode::C);
        let s = AnnotatedSentence {
            sentence_id: "x".into(),
            text: "is cat".into(),
            tokens: vec![Token::new(0, "is", Upos::Aux), Token::new(1, "cat", Upos::Noun)],
            meta: Default::default(),
        };
        assert_eq!(match_template(&order, &s), None);
    }

    #[test]
    fn modifiers_do_not_fill_argument_slots() {
        let your = Token::new(0, "your", Upos::Pron).with_deprel("poss");
        let horse = Token::new(1, "horse", Upos::Noun).with_deprel("pobj");
        let quake = Token::new(0, "earthquake", Upos::Noun).with_deprel("root");
        let bare = Token::new(0, "it", Upos::Pron);
        assert!(!slot_accepts(SlotLabel::Pobj, &your));
        assert!(slot_accepts(SlotLabel::Pobj, &horse));
        assert!(slot_accepts(SlotLabel::Nsubj, &horse));
        assert!(slot_accepts(SlotLabel::Nsubj, &quake));
        assert!(slot_accepts(SlotLabel::Dobj, &bare));
        assert!(!slot_accepts(SlotLabel::Noun, &bare));
        assert!(!slot_accepts(SlotLabel::Noun, &Token::new(0, "!", Upos::Punct)));
    }

    #[test]
    fn fill_direct_substitution_and_unbound() {
        let t = tpl("h", vec![Element::lit("Have"), Element::lit("you"), Element::Slot(SlotLabel::Noun)], CarCode::R);
        let b = SlotBinding(vec![BoundSlot { element: 2, token: 5, form: "farm".into() }]);
        assert_eq!(fill_template(&t, &b).unwrap(), "Have you farm?");
        assert_eq!(fill_template(&t, &SlotBinding::default()), Err(GeneratorError::UnboundSlot(2)));
    }

    #[test]
    fn rule_fix_examples() {
        let s = quake();
        let b = match_template(&what_aux_nsubj(), &s).unwrap();
        assert_eq!(rule_fix("What is an earthquake?", &s, &b), "What is an earthquake?");
        assert_eq!(rule_fix("what is is it?", &s, &SlotBinding::default()), "What is it?");
        assert_eq!(rule_fix("Where is it??", &s, &SlotBinding::default()), "Where is it?");
        assert_eq!(rule_fix("What is your earthquake?", &s, &b), "What is your earthquake?");
    }

    fn ranked(templates: Vec<Template>) -> RankedTemplates {
        crate::templates::rank_templates(&TemplateCorpus::new(templates, SlotConfig::default()).unwrap()).unwrap()
    }

    #[test]
    fn empty_pool_for_filter() {
        let r = ranked(vec![what_aux_nsubj()]);
        let filters = GenerationFilters {
            car_code: Some(CarCode::R),
            ..Default::default()
        };
        assert_eq!(
            generate_for_page(&[quake()], &r, &filters, None).unwrap_err(),
            GeneratorError::EmptyTemplatePool
        );
    }

    #[test]
    fn quota_round_robins_across_codes() {
        let r = ranked(vec![
            tpl("c1", vec![Element::lit("What"), Element::Slot(SlotLabel::Noun)], CarCode::C),
            tpl("c2", vec![Element::lit("Where"), Element::Slot(SlotLabel::Noun)], CarCode::C),
            tpl("c3", vec![Element::lit("Which"), Element::Slot(SlotLabel::Noun)], CarCode::C),
            tpl("a1", vec![Element::lit("Why"), Element::Slot(SlotLabel::Det), Element::Slot(SlotLabel::Noun)], CarCode::A),
            tpl("r1", vec![Element::lit("Have"), Element::lit("you"), Element::lit("seen"), Element::Slot(SlotLabel::Det), Element::Slot(SlotLabel::Noun)], CarCode::R),
        ]);
        let filters = GenerationFilters {
            max_per_sentence: 3,
            quota: Some(Quota::equal()),
            ..Default::default()
        };
        let out = generate_for_page(&[quake()], &r, &filters, None).unwrap();
        let codes: std::collections::BTreeSet<_> = out.questions.iter().map(|q| q.car_code).collect();
        assert_eq!(codes.len(), 3);
        let plain = generate_for_page(&[quake()], &r, &GenerationFilters { max_per_sentence: 3, ..Default::default() }, None).unwrap();
        assert_eq!(plain.questions.len(), 3);
        assert!(
            plain.questions.iter().filter(|q| q.car_code == CarCode::C).count()
                >= out.questions.iter().filter(|q| q.car_code == CarCode::C).count()
        );
    }

    #[test]
    fn bad_quota_rejected() {
        let r = ranked(vec![what_aux_nsubj()]);
        let filters = GenerationFilters {
            quota: Some(Quota { concrete: 0.4, abstract_: 0.4, relational: 0.4 }),
            ..Default::default()
        };
        assert!(matches!(generate_for_page(&[quake()], &r, &filters, None), Err(GeneratorError::BadFilter(_))));
    }

    #[test]
    fn round_trip_check_on_own_question() {
        let q = AnnotatedSentence {
            sentence_id: "q".into(),
            text: "Have your parents ever forgotten the recipe?".into(),
            tokens: vec![
                Token::new(0, "Have", Upos::Aux).with_lemma("have").with_deprel("aux"),
                Token::new(1, "your", Upos::Pron).with_deprel("poss"),
                Token::new(2, "parents", Upos::Noun).with_deprel("nsubj"),
                Token::new(3, "ever", Upos::Adv).with_deprel("advmod"),
                Token::new(4, "forgotten", Upos::Verb).with_deprel("root"),
                Token::new(5, "the", Upos::Det).with_deprel("det"),
                Token::new(6, "recipe", Upos::Noun).with_deprel("dobj"),
                Token::new(7, "?", Upos::Punct).with_deprel("punct"),
            ],
            meta: Default::default(),
        };
        let config = SlotConfig::default();
        let t = crate::templates::extract_template(&q, CarCode::R, OpenCode::Open, Demographic { latinx: true, caregiver: false }, &config).unwrap();
        assert_eq!(t.stored_form(), "Have your NSUBJ ever ROOT DET DOBJ");
        assert_eq!(check_round_trip(&q, &t, &config), Ok(()));
    }

    fn arb_sentence() -> impl Strategy<Value = AnnotatedSentence> {
        let tok = (
            proptest::sample::select(vec!["the", "cow", "farm", "is", "big", "a", "ran", "Sofia", "it"]),
            proptest::sample::select(vec![Upos::Det, Upos::Noun, Upos::Aux, Upos::Adj, Upos::Verb, Upos::Propn, Upos::Pron, Upos::Adp]),
            proptest::option::of(proptest::sample::select(vec!["nsubj", "dobj", "pobj", "root", "det", "amod"])),
        );
        proptest::collection::vec(tok, 1..10).prop_map(|v| AnnotatedSentence {
            sentence_id: "s".into(),
            text: String::new(),
            tokens: v
                .into_iter()
                .enumerate()
                .map(|(i, (f, u, d))| {
                    let t = Token::new(i, f, u);
                    match d {
                        Some(d) => t.with_deprel(d),
                        None => t,
                    }
                })
                .collect(),
            meta: Default::default(),
        })
    }

    fn arb_template() -> impl Strategy<Value = Template> {
        let el = prop_oneof![
            1 => proptest::sample::select(vec!["What", "is", "your"]).prop_map(Element::lit),
            3 => proptest::sample::select(SlotLabel::ALL.to_vec()).prop_map(Element::Slot),
        ];
        proptest::collection::vec(el, 1..6)
            .prop_filter("needs a slot", |els| els.iter().any(|e| e.slot().is_some()))
            .prop_map(|els| tpl("p", els, CarCode::C))
    }

    proptest! {
        #[test]
        fn matches_are_valid_and_rule_fix_is_idempotent(t in arb_template(), s in arb_sentence()) {
            if let Some(b) = match_template(&t, &s) {
                prop_assert!(binding_is_valid(&t, &s, &b));
                let raw = fill_template(&t, &b).unwrap();
                let once = rule_fix(&raw, &s, &b);
                prop_assert_eq!(&rule_fix(&once, &s, &b), &once);
                prop_assert!(once.ends_with('?') && !once.ends_with("??"));
            }
        }
    }
}
