use std::collections::BTreeMap;
use std::path::PathBuf;

use genq_core::annotation::{parse_conllu, AnnotatedSentence, SlotLabel, Token, Upos};
use genq_core::corpus::{load_survey_csv, CarCode, OpenCode, SchemaConfig};
use genq_core::generator::{binding_is_valid, check_round_trip, fill_template, match_template, rule_fix, slot_accepts, SlotBinding};
use genq_core::templates::{build_corpus, join_annotations, BuildOptions, Demographic, Element, SlotConfig, Template};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn read_conllu(name: &str) -> Vec<AnnotatedSentence> {
    let f = std::fs::File::open(fixture(name)).unwrap();
    parse_conllu(std::io::BufReader::new(f)).unwrap()
}

#[test]
fn earthquake_fixture_chain() {
    let s = read_conllu("earthquake.conllu").remove(0);
    let t = Template {
        template_id: "t".into(),
        elements: vec![Element::lit("What"), Element::Slot(SlotLabel::Aux), Element::Slot(SlotLabel::Nsubj)],
        car_code: CarCode::C,
        open_code: OpenCode::Closed,
        demographic: Demographic { latinx: false, caregiver: true },
        source_question_id: "q".into(),
        duplicate_count: 1,
    };
    let b = match_template(&t, &s).unwrap();
    let raw = fill_template(&t, &b).unwrap();
    assert_eq!(raw, "What is earthquake?");
    assert_eq!(rule_fix(&raw, &s, &b), "What is an earthquake?");
}

#[test]
fn every_fixture_question_round_trips() {
    let survey = load_survey_csv(&fixture("survey.csv"), &SchemaConfig::default()).unwrap();
    assert_eq!(survey.rejected.len(), 1);
    let sentences = read_conllu("questions.conllu");
    let join = join_annotations(&survey.corpus, &sentences);
    assert!(join.unmatched.is_empty(), "{:?}", join.unmatched);
    assert!(join.by_question.len() >= 50);

    let config = SlotConfig::default();
    let mut generative = 0;
    for (profile, q) in survey.corpus.questions() {
        let ann = &join.by_question[&q.question_id];
        let demo = Demographic { latinx: profile.is_latinx, caregiver: profile.is_caregiver };
        let Ok(t) = genq_core::templates::extract_template(ann, q.car_code, q.open_code, demo, &config) else {
            continue;
        };
        generative += 1;
        check_round_trip(ann, &t, &config).unwrap_or_else(|e| panic!("{}: {e:?}", q.question_id));
    }
    assert!(generative >= 50, "{generative}");

    let report = build_corpus(&survey.corpus, &join.by_question, &BuildOptions::default()).unwrap();
    assert_eq!(report.non_generative.len(), 1);
    let codes: std::collections::BTreeSet<_> = report.corpus.templates.iter().map(|t| t.car_code).collect();
    assert_eq!(codes.len(), 3);
}

/// All strictly increasing token assignments that satisfy compatibility,
/// in lexicographic order.
fn enumerate(slots: &[SlotLabel], tokens: &[Token]) -> Vec<Vec<usize>> {
    fn go(slots: &[SlotLabel], tokens: &[Token], start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == slots.len() {
            out.push(cur.clone());
            return;
        }
        for i in start..tokens.len() {
            if slot_accepts(slots[cur.len()], &tokens[i]) {
                cur.push(i);
                go(slots, tokens, i + 1, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(slots, tokens, 0, &mut Vec::new(), &mut out);
    out
}

fn random_case(rng: &mut ChaCha8Rng) -> (Template, AnnotatedSentence) {
    const UPOS: [Upos; 10] = [
        Upos::Noun, Upos::Propn, Upos::Pron, Upos::Verb, Upos::Aux, Upos::Det, Upos::Adp, Upos::Adj, Upos::Adv, Upos::Punct,
    ];
    const DEPRELS: [Option<&str>; 9] = [
        None, Some("nsubj"), Some("dobj"), Some("pobj"), Some("root"), Some("det"), Some("prep"), Some("amod"), Some("poss"),
    ];
    let n = rng.random_range(1..=12);
    let tokens: Vec<Token> = (0..n)
        .map(|i| {
            let t = Token::new(i, format!("w{i}"), UPOS[rng.random_range(0..UPOS.len())]);
            match DEPRELS[rng.random_range(0..DEPRELS.len())] {
                Some(d) => t.with_deprel(d),
                None => t,
            }
        })
        .collect();
    let k = rng.random_range(1..=6);
    let mut elements = Vec::new();
    for _ in 0..k {
        if rng.random_bool(0.3) {
            elements.push(Element::lit("what"));
        }
        elements.push(Element::Slot(SlotLabel::ALL[rng.random_range(0..SlotLabel::ALL.len())]));
    }
    let template = Template {
        template_id: "r".into(),
        elements,
        car_code: CarCode::C,
        open_code: OpenCode::Open,
        demographic: Demographic { latinx: true, caregiver: true },
        source_question_id: "r".into(),
        duplicate_count: 1,
    };
    let sentence = AnnotatedSentence {
        sentence_id: "r".into(),
        text: String::new(),
        tokens,
        meta: BTreeMap::new(),
    };
    (template, sentence)
}

#[test]
fn greedy_matching_agrees_with_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut found = 0;
    for _ in 0..2000 {
        let (t, s) = random_case(&mut rng);
        let slots: Vec<SlotLabel> = t.slots().collect();
        let all = enumerate(&slots, &s.tokens);
        let got = match_template(&t, &s);
        assert_eq!(got.is_some(), !all.is_empty());
        if let Some(b) = got {
            found += 1;
            assert_eq!(b.token_indices(), all[0]);
            assert!(binding_is_valid(&t, &s, &b));
            assert_eq!(b, SlotBinding::from_tokens(&t, &s, &all[0]));
        }
    }
    assert!(found > 100);
}
