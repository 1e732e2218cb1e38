//! Seeded synthetic workloads shared by the benchmarks.

use std::collections::BTreeMap;

use genq_core::annotation::{AnnotatedSentence, SlotLabel, Token, Upos};
use genq_core::corpus::{CarCode, OpenCode};
use genq_core::stats::CountObservation;
use genq_core::templates::{Demographic, Element, Template};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

const UPOS: [Upos; 8] = [Upos::Noun, Upos::Propn, Upos::Pron, Upos::Verb, Upos::Aux, Upos::Det, Upos::Adp, Upos::Adj];
const DEPRELS: [Option<&str>; 6] = [None, Some("nsubj"), Some("dobj"), Some("pobj"), Some("det"), Some("amod")];
const WORDS: [&str; 5] = ["What", "Why", "Have", "you", "ever"];

pub fn sentences(n: usize, len: usize, seed: u64) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|s| {
            let tokens = (0..len)
                .map(|i| {
                    let t = Token::new(i, format!("w{i}"), UPOS[rng.random_range(0..UPOS.len())]);
                    match DEPRELS[rng.random_range(0..DEPRELS.len())] {
                        Some(d) => t.with_deprel(d),
                        None => t,
                    }
                })
                .collect();
            AnnotatedSentence { sentence_id: format!("s{s}"), text: String::new(), tokens, meta: BTreeMap::new() }
        })
        .collect()
}

pub fn templates(n: usize, seed: u64) -> Vec<Template> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let elements = (0..rng.random_range(2..=6))
                .map(|_| {
                    if rng.random_bool(0.35) {
                        Element::lit(WORDS[rng.random_range(0..WORDS.len())])
                    } else {
                        Element::Slot(SlotLabel::ALL[rng.random_range(0..SlotLabel::ALL.len())])
                    }
                })
                .collect();
            Template {
                template_id: format!("b{i:04}"),
                elements,
                car_code: CarCode::ALL[i % 3],
                open_code: if i % 2 == 0 { OpenCode::Open } else { OpenCode::Closed },
                demographic: Demographic { latinx: rng.random_bool(0.5), caregiver: rng.random_bool(0.5) },
                source_question_id: format!("q{i}"),
                duplicate_count: 1,
            }
        })
        .collect()
}

/// NB2 counts with `mu = exp(0.5 + 0.7 x)` for a binary `x`.
pub fn negbin_sample(n: usize, theta: f64, seed: u64) -> Vec<CountObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x = (i % 2) as f64;
            let mu = (0.5 + 0.7 * x).exp();
            let lambda: f64 = Gamma::new(theta, mu / theta).unwrap().sample(&mut rng);
            let y = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(&mut rng) as u64 } else { 0 };
            CountObservation::new(y, &[("x", x)])
        })
        .collect()
}

pub fn continuous(n: usize, shift: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() + shift).collect()
}
