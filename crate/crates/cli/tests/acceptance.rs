//! Acceptance suite: one PASS/FAIL line per criterion, each with its
//! runtime limit. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use genq_core::annotation::{parse_conllu, AnnotatedSentence, SlotLabel, Token, Upos};
use genq_core::corpus::{cohen_kappa, load_survey_csv, CarCode, OpenCode, SchemaConfig};
use genq_core::generator::{check_round_trip, fill_template, match_template, rule_fix, slot_accepts};
use genq_core::stats::{
    agrees_with_printed, check_identities, fit_negbin, fit_poisson, midranks, parse_terms, wilcoxon_rank_sum,
    CountObservation, RankSumMethod, RegressionResult, Sides,
};
use genq_core::templates::{
    extract_template, join_annotations, rank_templates, tfidf_scores, top_k_proportions, Demographic, Element,
    SlotConfig, Template, TemplateCorpus,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn read_conllu(path: &Path) -> Result<Vec<AnnotatedSentence>, String> {
    let f = std::fs::File::open(path).map_err(|e| e.to_string())?;
    parse_conllu(std::io::BufReader::new(f)).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn template(elements: Vec<Element>, car: CarCode) -> Template {
    Template {
        template_id: "t".into(),
        elements,
        car_code: car,
        open_code: OpenCode::Closed,
        demographic: Demographic { latinx: false, caregiver: true },
        source_question_id: "q".into(),
        duplicate_count: 1,
    }
}

// 1 -------------------------------------------------------------------------

fn worked_chain() -> Outcome {
    let s = read_conllu(&fixture("earthquake.conllu"))?.remove(0);
    let t = template(
        vec![Element::lit("What"), Element::Slot(SlotLabel::Aux), Element::Slot(SlotLabel::Nsubj)],
        CarCode::C,
    );
    let b = match_template(&t, &s).ok_or("template did not match")?;
    let raw = fill_template(&t, &b).map_err(|e| e.to_string())?;
    ensure(raw == "What is earthquake?", || format!("raw stage gave {raw:?}"))?;
    let fixed = rule_fix(&raw, &s, &b);
    ensure(fixed == "What is an earthquake?", || format!("rule_fix gave {fixed:?}"))?;
    Ok(format!("{raw:?} -> {fixed:?}"))
}

// 2 -------------------------------------------------------------------------

fn self_consistency() -> Outcome {
    let survey = load_survey_csv(&fixture("survey.csv"), &SchemaConfig::default()).map_err(|e| e.to_string())?;
    let join = join_annotations(&survey.corpus, &read_conllu(&fixture("questions.conllu"))?);
    ensure(join.unmatched.is_empty(), || format!("unannotated questions {:?}", join.unmatched))?;
    let config = SlotConfig::default();
    let (mut generative, mut ok) = (0, 0);
    let mut failures = Vec::new();
    for (profile, q) in survey.corpus.questions() {
        let ann = &join.by_question[&q.question_id];
        let demo = Demographic { latinx: profile.is_latinx, caregiver: profile.is_caregiver };
        let Ok(t) = extract_template(ann, q.car_code, q.open_code, demo, &config) else { continue };
        generative += 1;
        match check_round_trip(ann, &t, &config) {
            Ok(()) => ok += 1,
            Err(e) => failures.push(format!("{}: {e:?}", q.question_id)),
        }
    }
    ensure(survey.corpus.question_count() >= 50, || "fixture has fewer than 50 questions".into())?;
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("{ok}/{generative} generative questions round-trip"))
}

// 3 -------------------------------------------------------------------------

fn exhaustive(slots: &[SlotLabel], tokens: &[Token]) -> Vec<Vec<usize>> {
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

fn matching_oracle() -> Outcome {
    const UPOS: [Upos; 11] = [
        Upos::Noun, Upos::Propn, Upos::Pron, Upos::Verb, Upos::Aux, Upos::Det, Upos::Adp, Upos::Adj, Upos::Adv,
        Upos::Punct, Upos::Cconj,
    ];
    const DEPRELS: [Option<&str>; 9] = [
        None, Some("nsubj"), Some("obj"), Some("pobj"), Some("root"), Some("det"), Some("case"), Some("amod"), Some("poss"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7_340_029);
    let mut matched = 0;
    for case in 0..200 {
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
            if rng.random_bool(0.25) {
                elements.push(Element::lit("did"));
            }
            elements.push(Element::Slot(SlotLabel::ALL[rng.random_range(0..SlotLabel::ALL.len())]));
        }
        let t = template(elements, CarCode::C);
        let s = AnnotatedSentence { sentence_id: format!("c{case}"), text: String::new(), tokens, meta: BTreeMap::new() };
        let slots: Vec<SlotLabel> = t.slots().collect();
        let all = exhaustive(&slots, &s.tokens);
        let got = match_template(&t, &s);
        ensure(got.is_some() == !all.is_empty(), || format!("case {case}: existence disagrees"))?;
        if let Some(b) = got {
            matched += 1;
            ensure(b.token_indices() == all[0], || {
                format!("case {case}: got {:?}, leftmost is {:?}", b.token_indices(), all[0])
            })?;
        }
    }
    Ok(format!("200 cases agree ({matched} with a match)"))
}

// 4 -------------------------------------------------------------------------

fn kappa() -> Outcome {
    let read = |name: &str| -> Vec<String> {
        std::fs::read_to_string(fixture(name))
            .unwrap_or_default()
            .lines()
            .skip(1)
            .map(str::to_string)
            .collect()
    };
    let (a, b) = (read("kappa_a.csv"), read("kappa_b.csv"));
    let k = cohen_kappa(&a, &b).map_err(|e| e.to_string())?;
    // The printed value is rounded; the exact value is 7/11.
    ensure((k - 7.0 / 11.0).abs() < 1e-9 && format!("{k:.6}") == "0.636364", || format!("kappa {k}"))?;
    let same = cohen_kappa(&a, &a).map_err(|e| e.to_string())?;
    ensure(same == 1.0, || format!("identical sequences gave {same}"))?;
    let anti = cohen_kappa(&["x", "y"], &["y", "x"]).map_err(|e| e.to_string())?;
    ensure(anti == -1.0, || format!("antisymmetric example gave {anti}"))?;
    Ok(format!("kappa = {k:.6}, identical = {same}, antisymmetric = {anti}"))
}

// 5 -------------------------------------------------------------------------

fn random_templates(rng: &mut ChaCha8Rng, n: usize) -> Vec<Template> {
    const WORDS: [&str; 6] = ["What", "Why", "Have", "you", "ever", "your"];
    let groups = [(false, true), (true, false), (true, true), (false, false)];
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=7);
            let elements = (0..len)
                .map(|_| {
                    if rng.random_bool(0.4) {
                        Element::lit(WORDS[rng.random_range(0..WORDS.len())])
                    } else {
                        Element::Slot(SlotLabel::ALL[rng.random_range(0..SlotLabel::ALL.len())])
                    }
                })
                .collect();
            let (latinx, caregiver) = groups[rng.random_range(0..4)];
            let mut t = template(elements, CarCode::ALL[i % 3]);
            t.template_id = format!("r{i:03}");
            t.demographic = Demographic { latinx, caregiver };
            t
        })
        .collect()
}

fn tfidf() -> Outcome {
    let t1 = template(vec![Element::lit("what"), Element::Slot(SlotLabel::Aux), Element::Slot(SlotLabel::Noun)], CarCode::C);
    let mut t2 = template(vec![Element::lit("why"), Element::Slot(SlotLabel::Aux)], CarCode::A);
    t2.template_id = "t2".into();
    let s = tfidf_scores(&[t1.clone(), t2.clone()]).map_err(|e| e.to_string())?;
    ensure((s[0] - 1.537901).abs() < 1e-5 && (s[1] - 1.303658).abs() < 1e-5, || format!("scores {s:?}"))?;
    let mut t1 = t1;
    t1.template_id = "t1".into();
    let ranked = rank_templates(&TemplateCorpus::new(vec![t2, t1], SlotConfig::default()).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure(ranked.entries[0].template.template_id == "t1", || "T1 not ranked first".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let base = random_templates(&mut rng, 100);
    let corpus = TemplateCorpus::new(base.clone(), SlotConfig::default()).map_err(|e| e.to_string())?;
    let reference = rank_templates(&corpus).map_err(|e| e.to_string())?;
    let ref_scores: BTreeMap<String, u64> =
        reference.entries.iter().map(|e| (e.template.template_id.clone(), e.score.to_bits())).collect();
    for _ in 0..20 {
        let mut shuffled = base.clone();
        shuffled.shuffle(&mut rng);
        let r = rank_templates(&TemplateCorpus::new(shuffled, SlotConfig::default()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(r == reference, || "ranking changed under permutation".into())?;
        for e in &r.entries {
            ensure(ref_scores[&e.template.template_id] == e.score.to_bits(), || "score changed".into())?;
        }
    }

    let mut corpora = vec![reference];
    for n in [1, 2, 7, 33] {
        let ts = random_templates(&mut rng, n);
        corpora.push(
            rank_templates(&TemplateCorpus::new(ts, SlotConfig::default()).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?,
        );
    }
    let mut checked = 0;
    for r in &corpora {
        for k in 1..=r.len() {
            let p = top_k_proportions(r, k).map_err(|e| e.to_string())?;
            let total: f64 = p.shares.iter().map(|(_, s)| s).sum();
            ensure((total - 100.0).abs() <= 0.1, || format!("top-{k} shares sum to {total}"))?;
            checked += 1;
        }
    }
    Ok(format!("T1 {:.6}, T2 {:.6}; {checked} top-k splits sum to 100%; permutation invariant", s[0], s[1]))
}

// 6 -------------------------------------------------------------------------

fn nb_sample(n: usize, beta: (f64, f64), theta: f64, seed: u64) -> Vec<CountObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x = (i % 2) as f64;
            let mu = (beta.0 + beta.1 * x).exp();
            let lambda: f64 = Gamma::new(theta, mu / theta).unwrap().sample(&mut rng);
            let y = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(&mut rng) as u64 } else { 0 };
            CountObservation::new(y, &[("x", x)])
        })
        .collect()
}

/// Maximizer of the NB2 log-likelihood over a fixed coarse lattice,
/// written with the gamma function rather than the fit's finite sums.
fn grid_oracle(data: &[CountObservation]) -> (f64, f64, f64) {
    use statrs::function::gamma::ln_gamma;
    let ll = |b0: f64, b1: f64, th: f64| -> f64 {
        data.iter()
            .map(|o| {
                let mu = (b0 + b1 * o.covariates["x"]).exp();
                let y = o.outcome as f64;
                ln_gamma(y + th) - ln_gamma(th) - ln_gamma(y + 1.0) + th * (th / (th + mu)).ln() + y * (mu / (th + mu)).ln()
            })
            .sum()
    };
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for i in 0..=12 {
        let b0 = 0.2 + 0.05 * i as f64;
        for j in 0..=12 {
            let b1 = 0.4 + 0.05 * j as f64;
            for k in 0..=8 {
                let th = 1.0 + 0.25 * k as f64;
                let v = ll(b0, b1, th);
                if v > best.0 {
                    best = (v, b0, b1, th);
                }
            }
        }
    }
    (best.1, best.2, best.3)
}

fn negbin() -> Outcome {
    let mut fits: Vec<RegressionResult> = Vec::new();
    let terms = parse_terms("x").map_err(|e| e.to_string())?;

    ensure(agrees_with_printed(0.66647 / 0.18201, "3.662"), || "reference z does not reproduce".into())?;

    let data = nb_sample(2000, (0.5, 0.7), 2.0, 2024);
    let r = fit_negbin(&data, &terms).map_err(|e| e.to_string())?;
    let (b0, b1, th) = (r.coefficients[0], r.coefficients[1], r.theta);
    ensure((b0 - 0.5).abs() <= 0.1 && (b1 - 0.7).abs() <= 0.1 && (th - 2.0).abs() <= 0.4, || {
        format!("recovered β=({b0:.4}, {b1:.4}) θ={th:.4}")
    })?;
    let (g0, g1, gt) = grid_oracle(&data);
    ensure((b0 - g0).abs() <= 0.05 && (b1 - g1).abs() <= 0.05 && (th - gt).abs() <= 0.25, || {
        format!("fit ({b0:.4}, {b1:.4}, {th:.4}) vs grid ({g0}, {g1}, {gt})")
    })?;
    ensure(r.loglik_trace.windows(2).all(|w| w[1] >= w[0]), || "log-likelihood decreased".into())?;
    fits.push(r.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pois: Vec<CountObservation> = (0..1000)
        .map(|i| {
            let x = (i % 2) as f64;
            let y = Poisson::new((0.3 + 0.5 * x).exp()).unwrap().sample(&mut rng) as u64;
            CountObservation::new(y, &[("x", x)])
        })
        .collect();
    let nb = fit_negbin(&pois, &terms).map_err(|e| e.to_string())?;
    let po = fit_poisson(&pois, &terms).map_err(|e| e.to_string())?;
    let gap = nb.coefficients.iter().zip(&po.coefficients).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(gap < 1e-4, || format!("negbin vs poisson gap {gap:e}"))?;
    fits.push(nb);
    fits.push(po);

    let constant: Vec<CountObservation> = (0..10).map(|_| CountObservation::new(3, &[("x", 0.0)])).collect();
    let c = fit_negbin(&constant, &parse_terms("").unwrap()).map_err(|e| e.to_string())?;
    ensure(c.underdispersed, || "constant outcome did not hit the θ cap".into())?;
    fits.push(c);

    for f in &fits {
        check_identities(f)?;
    }
    Ok(format!(
        "β=({b0:.4}, {b1:.4}) θ={th:.4}, grid ({g0:.2}, {g1:.2}, {gt:.2}); poisson gap {gap:.1e}; identities hold on {} fits",
        fits.len()
    ))
}

// 7 -------------------------------------------------------------------------

fn enumeration_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, _) = midranks(&pooled);
    let n1 = x.len();
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let w = ranks[..n1].iter().sum::<f64>() - offset;
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << pooled.len()) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let u = (0..pooled.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum::<f64>() - offset;
        total += 1;
        le += u64::from(u <= w);
        ge += u64::from(u >= w);
    }
    (w, (2.0 * (le.min(ge) as f64) / total as f64).min(1.0))
}

fn wilcoxon() -> Outcome {
    let hand = wilcoxon_rank_sum(&[1., 2.], &[3., 4.], Sides::TwoSided).map_err(|e| e.to_string())?;
    ensure(hand.w == 0.0 && (hand.p - 0.333333).abs() < 5e-7, || format!("hand example {hand:?}"))?;
    let mut cases = 0;
    for n1 in 1..=6usize {
        for n2 in 1..=6usize {
            let n = n1 + n2;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != n1 {
                    continue;
                }
                // Distinct integers, interleaved according to `mask`.
                let value = |i: usize| (2 * i + 1) as f64;
                let x: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(value).collect();
                let y: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(value).collect();
                let r = wilcoxon_rank_sum(&x, &y, Sides::TwoSided).map_err(|e| e.to_string())?;
                let (w, p) = enumeration_oracle(&x, &y);
                ensure(r.method == RankSumMethod::Exact && r.w == w && (r.p - p).abs() < 1e-12, || {
                    format!("x={x:?} y={y:?}: got ({}, {}), oracle ({w}, {p})", r.w, r.p)
                })?;
                cases += 1;
            }
        }
    }
    Ok(format!("W=0 p={:.6}; {cases} exact cases match enumeration", hand.p))
}

// 8, 9 ----------------------------------------------------------------------

fn genq(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_genq"))
        .args(args)
        .env_remove("GENQ_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`genq {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn pipeline(dir: &Path, extra: &[&str]) -> Result<PathBuf, String> {
    let p = |name: &str| dir.join(name).display().to_string();
    let (survey, ann, story, config) = (
        fixture("survey.csv").display().to_string(),
        fixture("questions.conllu").display().to_string(),
        fixture("story.conllu").display().to_string(),
        fixture("config.toml").display().to_string(),
    );
    genq(&["ingest", "--survey", &survey, "--annotations", &ann, "--out", &p("bundle.json")])?;
    genq(&["extract", "--corpus", &p("bundle.json"), "--out", &p("templates.jsonl")])?;
    genq(&["rank", "--templates", &p("templates.jsonl"), "--out", &p("ranked.jsonl")])?;
    let (ranked, out) = (p("ranked.jsonl"), p("questions.jsonl"));
    let mut args = vec!["--config", &config, "generate", "--story", &story, "--templates", &ranked, "--out", &out];
    args.extend_from_slice(extra);
    genq(&args)?;
    Ok(dir.join("questions.jsonl"))
}

fn read_questions(path: &Path) -> Result<Vec<serde_json::Value>, String> {
    std::fs::read_to_string(path)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn end_to_end() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let qa = pipeline(a.path(), &[])?;
    let qb = pipeline(b.path(), &[])?;
    let (ba, bb) = (std::fs::read(&qa).map_err(|e| e.to_string())?, std::fs::read(&qb).map_err(|e| e.to_string())?);
    ensure(ba == bb, || "outputs differ between runs".into())?;
    let qs = read_questions(&qa)?;
    let mut per_code = BTreeMap::new();
    for q in &qs {
        *per_code.entry(q["car_code"].as_str().unwrap_or("?").to_string()).or_insert(0) += 1;
    }
    ensure(["C", "A", "R"].iter().all(|c| per_code.get(*c).copied().unwrap_or(0) >= 1), || {
        format!("per-code counts {per_code:?}")
    })?;
    ensure(qs.iter().all(|q| q["stage"] == "rule_fixed"), || "unexpected stage".into())?;
    Ok(format!("{} questions {per_code:?}, identical across runs", qs.len()))
}

fn fail_open() -> Outcome {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let url = format!("http://{}/paraphrase", listener.local_addr().map_err(|e| e.to_string())?);
    drop(listener);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let q = pipeline(dir.path(), &["--paraphrase-url", &url])?;
    let qs = read_questions(&q)?;
    ensure(!qs.is_empty(), || "no questions".into())?;
    ensure(qs.iter().all(|q| q["stage"] == "rule_fixed"), || "a question left the rule_fixed stage".into())?;
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("questions.jsonl.report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let failed = report["paraphrase_failed"].as_u64().unwrap_or(0);
    ensure(failed > 0 && failed == report["paraphrase_attempted"].as_u64().unwrap_or(0), || {
        format!("report counts: {report}")
    })?;
    Ok(format!("{} questions at rule_fixed; {failed} paraphrase failures reported", qs.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "worked generation chain", Duration::from_millis(100), worked_chain),
        (2, "extraction self-consistency", Duration::from_secs(1), self_consistency),
        (3, "matching oracle", Duration::from_secs(5), matching_oracle),
        (4, "cohen kappa", Duration::from_secs(1), kappa),
        (5, "tf-idf ranking", Duration::from_secs(5), tfidf),
        (6, "negative binomial regression", Duration::from_secs(10), negbin),
        (7, "wilcoxon rank-sum", Duration::from_secs(5), wilcoxon),
        (8, "end-to-end cli", Duration::from_secs(2), end_to_end),
        (9, "paraphrase fail-open", Duration::from_secs(10), fail_open),
    ];
    let mut failed = 0;
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (status, detail) = match result {
            Ok(_) if elapsed > limit => ("FAIL", format!("took {elapsed:.3?}, limit {limit:?}")),
            Ok(d) => ("PASS", d),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} criterion {id} ({name}) [{elapsed:.3?}]: {detail}");
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
