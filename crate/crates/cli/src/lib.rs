//! The `genq` command line: ingest a coded survey, extract and rank
//! templates, generate questions for a story and run the analyses.

pub mod config;

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use genq_core::annotation::{fallback_tag, parse_conllu, AnnotatedSentence, Lexicon};
use genq_core::corpus::{
    self, cohen_kappa, load_survey_csv, CarCode, CountOptions, Factor, OpenCode, Outcome, RejectedRow, SchemaConfig,
    SurveyCorpus,
};
use genq_core::generator::{generate_for_story, GenerationFilters};
use genq_core::paraphrase::ParaphraseClient;
use genq_core::stats::{
    self, fit_negbin_with, observations_from_corpus, parse_terms, report_table, wilcoxon_rank_sum, CountObservation,
    FitOptions, Layout, NamedFit, NamedRankSum, RenderedTable, ReportInput, Sides,
};
use genq_core::templates::{
    build_corpus, join_annotations, load_store, persist_ranked, persist_store, rank_templates, top_k_proportions,
    BuildOptions, DemographicGroup, Proportions,
};
use genq_core::write_atomic;

pub use config::{load_config, Config, ConfigError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Parser, Debug)]
#[command(name = "genq", version, about = "Template-based question generation for shared reading")]
pub struct Cli {
    /// TOML configuration file (falls back to $GENQ_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a coded survey CSV and attach CoNLL-U annotations.
    Ingest {
        #[arg(long)]
        survey: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cohen's kappa between two label files.
    Kappa {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Extract templates from an ingested corpus bundle.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank templates by TF-IDF and report top-k demographic shares.
    Rank {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Generate questions for each page of a story.
    Generate {
        /// Story CoNLL-U with `# page` comments.
        #[arg(long)]
        story: PathBuf,
        /// Template store from `extract` or `rank`.
        #[arg(long)]
        templates: PathBuf,
        /// Question JSONL; the run report goes to `<out>.report.json`.
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one question type: C, A or R.
        #[arg(long)]
        car: Option<CarCode>,
        /// Restrict to open or closed templates.
        #[arg(long)]
        open: Option<OpenCode>,
        /// Restrict to one group, e.g. latinx_caregiver.
        #[arg(long)]
        demographic: Option<DemographicGroup>,
        /// Pool size after filtering; overrides the config.
        #[arg(long)]
        top_k: Option<usize>,
        /// Recorded in the run report; generation itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Paraphrase endpoint; overrides the config url.
        #[arg(long)]
        paraphrase_url: Option<String>,
    },
    /// Descriptive tables, count regressions and rank-sum tests.
    Analyze {
        #[arg(long, required_unless_present = "observations")]
        corpus: Option<PathBuf>,
        /// Observation CSV to fit instead of counts derived from a corpus.
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long, default_value = "story + latinx + caregiver + experience")]
        formula: String,
        /// Directory for CSV tables and observation files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combined text report over a corpus and, optionally, templates.
    Report {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// What `ingest` writes: the validated corpus plus one annotation per
/// coded question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub survey: SurveyCorpus,
    pub annotations: BTreeMap<String, AnnotatedSentence>,
    pub warnings: Vec<String>,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { survey, annotations, out: path } => ingest(&survey, &annotations, &path, out),
        Command::Kappa { a, b } => kappa(&a, &b, out),
        Command::Extract { corpus, out: path } => extract(&config, &corpus, &path, out),
        Command::Rank { templates, out: path, top_k } => rank(&templates, &path, top_k.unwrap_or(config.top_k), out),
        Command::Generate {
            story,
            templates,
            out: path,
            car,
            open,
            demographic,
            top_k,
            seed,
            paraphrase_url,
        } => {
            let filters = GenerationFilters {
                car_code: car,
                open_code: open,
                demographic,
                top_k: top_k.unwrap_or(config.top_k),
                max_per_sentence: config.max_per_sentence,
                quota: config.quota,
            };
            let mut paraphrase = config.paraphrase.clone();
            if let Some(url) = paraphrase_url {
                let mut p = paraphrase.unwrap_or_else(|| genq_core::ParaphraseConfig::new(url.clone()));
                p.url = url;
                paraphrase = Some(p);
            }
            generate(&story, &templates, &path, &filters, paraphrase, seed, out)
        }
        Command::Analyze {
            corpus,
            observations,
            formula,
            out: dir,
        } => analyze(&config, corpus.as_deref(), observations.as_deref(), &formula, dir.as_deref(), out),
        Command::Report { corpus, templates, out: path } => report(&config, &corpus, templates.as_deref(), path.as_deref(), out),
    }
}

fn write_line(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(data("stdout"))
}

fn save(path: &Path, body: &str) -> Result<(), CliError> {
    write_atomic(path, body.as_bytes()).map_err(data(&path.display().to_string()))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn read_sentences(path: &Path) -> Result<Vec<AnnotatedSentence>, CliError> {
    let f = std::fs::File::open(path).map_err(data(&path.display().to_string()))?;
    parse_conllu(BufReader::new(f)).map_err(data(&path.display().to_string()))
}

fn load_bundle(path: &Path) -> Result<Bundle, CliError> {
    let text = std::fs::read_to_string(path).map_err(data(&path.display().to_string()))?;
    serde_json::from_str(&text).map_err(data(&path.display().to_string()))
}

fn ingest(survey: &Path, annotations: &Path, path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load_survey_csv(survey, &SchemaConfig::default()).map_err(data(&survey.display().to_string()))?;
    let sentences = read_sentences(annotations)?;
    let join = join_annotations(&loaded.corpus, &sentences);
    let mut warnings = loaded.warnings.clone();
    let mut by_question = join.by_question;
    if !join.unmatched.is_empty() {
        let lexicon = Lexicon::bundled();
        let texts: BTreeMap<&str, &str> = loaded
            .corpus
            .questions()
            .map(|(_, q)| (q.question_id.as_str(), q.text.as_str()))
            .collect();
        for id in &join.unmatched {
            let tagged = fallback_tag(texts[id.as_str()], &lexicon).map_err(data(id))?;
            warnings.push(format!("{id}: no annotation found; used the fallback tagger"));
            by_question.insert(id.clone(), tagged.with_id(id.clone()));
        }
    }
    if !join.unused.is_empty() {
        warnings.push(format!("{} annotated sentences matched no question", join.unused.len()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    for r in &loaded.rejected {
        log::warn!("row {} rejected: {}", r.row, r.reason);
    }
    let bundle = Bundle {
        survey: loaded.corpus,
        annotations: by_question,
        warnings,
    };
    save(path, &serde_json::to_string_pretty(&bundle).map_err(data("bundle"))?)?;
    save(&sidecar(path, ".rejected.csv"), &rejected_csv(&loaded.rejected)?)?;
    write_line(
        out,
        &format!(
            "ingested {} participants, {} questions ({} rows rejected)",
            bundle.survey.responses.len(),
            bundle.survey.question_count(),
            loaded.rejected.len()
        ),
    )
}

fn rejected_csv(rows: &[RejectedRow]) -> Result<String, CliError> {
    let mut s = String::from("row,participant_id,reason\n");
    for r in rows {
        let quoted = r.reason.replace('"', "\"\"");
        s.push_str(&format!("{},{},\"{quoted}\"\n", r.row, r.participant_id));
    }
    Ok(s)
}

/// One label per line; a first line reading `label`, `code` or `car_code`
/// is treated as a header.
fn read_labels(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(data(&path.display().to_string()))?;
    let mut labels: Vec<String> = text
        .lines()
        .map(|l| l.split(',').next().unwrap_or("").trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if labels
        .first()
        .is_some_and(|h| ["label", "code", "car_code"].contains(&h.to_ascii_lowercase().as_str()))
    {
        labels.remove(0);
    }
    Ok(labels)
}

fn kappa(a: &Path, b: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let la = read_labels(a)?;
    let lb = read_labels(b)?;
    let k = cohen_kappa(&la, &lb).map_err(data("kappa"))?;
    write_line(out, &format!("kappa = {k:.6} (n = {})", la.len()))
}

fn extract(config: &Config, corpus: &Path, path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let bundle = load_bundle(corpus)?;
    let opts = BuildOptions {
        slot_config: config.slot_config(),
        provenance: Some(format!("extracted from {}", corpus.display())),
        ..Default::default()
    };
    let report = build_corpus(&bundle.survey, &bundle.annotations, &opts).map_err(data("extract"))?;
    for id in &report.non_generative {
        log::info!("{id}: no slot, skipped");
    }
    persist_store(&report.corpus, path).map_err(data(&path.display().to_string()))?;
    write_line(
        out,
        &format!(
            "{} templates from {} questions ({} non-generative, {} duplicates merged)",
            report.corpus.len(),
            report.questions_seen,
            report.non_generative.len(),
            report.duplicates_merged
        ),
    )
}

/// Top-k cutoffs reported alongside ranking: the configured k plus the
/// conventional 50 and 100 where the corpus is large enough.
fn cutoffs(k: usize, len: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = [k.min(len), 50, 100].into_iter().filter(|&x| x > 0 && x <= len).collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

fn proportions_for(
    ranked: &genq_core::RankedTemplates,
    k: usize,
) -> Result<Vec<Proportions>, CliError> {
    cutoffs(k, ranked.len())
        .into_iter()
        .map(|k| top_k_proportions(ranked, k).map_err(data("proportions")))
        .collect()
}

fn rank(templates: &Path, path: &Path, k: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_store(templates).map_err(data(&templates.display().to_string()))?;
    let ranked = rank_templates(&corpus).map_err(data("rank"))?;
    persist_ranked(&ranked, &corpus.provenance, path).map_err(data(&path.display().to_string()))?;
    let props = proportions_for(&ranked, k)?;
    let table = report_table(&ReportInput::Proportions(&props), Layout::Table8).map_err(data("table"))?;
    save(&sidecar(path, ".proportions.csv"), &table.to_csv())?;
    write!(out, "{}", table.to_text()).map_err(data("stdout"))
}

#[derive(Serialize)]
struct RunReport<'a> {
    seed: u64,
    pages: usize,
    #[serde(flatten)]
    generation: &'a genq_core::GenerationReport,
}

fn generate(
    story: &Path,
    templates: &Path,
    path: &Path,
    filters: &GenerationFilters,
    paraphrase: Option<genq_core::ParaphraseConfig>,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let sentences = read_sentences(story)?;
    let corpus = load_store(templates).map_err(data(&templates.display().to_string()))?;
    let ranked = rank_templates(&corpus).map_err(data("rank"))?;
    let client = paraphrase
        .map(ParaphraseClient::new)
        .transpose()
        .map_err(|e| CliError::Usage(format!("paraphrase client: {e}")))?;
    let output = generate_for_story(&sentences, &ranked, filters, client.as_ref()).map_err(data("generate"))?;

    let mut body = String::new();
    for q in &output.questions {
        body.push_str(&serde_json::to_string(q).map_err(data("question"))?);
        body.push('\n');
    }
    save(path, &body)?;
    let pages: std::collections::BTreeSet<u32> = sentences.iter().map(|s| s.page().unwrap_or(1)).collect();
    let run_report = RunReport {
        seed,
        pages: pages.len(),
        generation: &output.report,
    };
    save(
        &sidecar(path, ".report.json"),
        &serde_json::to_string_pretty(&run_report).map_err(data("report"))?,
    )?;
    if output.report.paraphrase_failed > 0 {
        log::warn!(
            "paraphrasing failed for {} of {} questions; kept rule-fixed text",
            output.report.paraphrase_failed,
            output.report.paraphrase_attempted
        );
    }
    let by_code = |c: CarCode| output.questions.iter().filter(|q| q.car_code == c).count();
    write_line(
        out,
        &format!(
            "{} questions over {} pages (C {}, A {}, R {})",
            output.questions.len(),
            pages.len(),
            by_code(CarCode::C),
            by_code(CarCode::A),
            by_code(CarCode::R)
        ),
    )
}

struct Analysis {
    tables: Vec<(String, RenderedTable)>,
    notes: Vec<String>,
    observations: Vec<(String, Vec<CountObservation>)>,
}

const GROUPING: [Factor; 2] = [Factor::IsCaregiver, Factor::IsLatinx];
const OUTCOMES: [Outcome; 3] = [Outcome::Relational, Outcome::Abstract, Outcome::OpenEnded];

fn fit_options(config: &Config) -> FitOptions {
    FitOptions {
        tol: config.tolerances.glm_tol,
        max_iter: config.tolerances.max_iter,
        ..FitOptions::default()
    }
}

fn fit_models(
    config: &Config,
    sets: &[(String, Vec<CountObservation>)],
    formula: &str,
    notes: &mut Vec<String>,
) -> Result<Vec<NamedFit>, CliError> {
    let terms = parse_terms(formula).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut fits = Vec::new();
    for (name, obs) in sets {
        match fit_negbin_with(obs, &terms, &fit_options(config)) {
            Ok(result) => fits.push(NamedFit { model: name.clone(), result }),
            Err(stats::StatsError::UnknownCovariate(c)) => {
                return Err(CliError::Usage(format!("formula uses unknown covariate `{c}`")))
            }
            Err(e) => notes.push(format!("{name}: not fitted ({e})")),
        }
    }
    Ok(fits)
}

fn corpus_analysis(config: &Config, survey: &SurveyCorpus, formula: &str) -> Result<Analysis, CliError> {
    let opts = CountOptions::default();
    let mut tables = Vec::new();
    let mut notes = Vec::new();

    for outcome in OUTCOMES {
        let groups = corpus::descriptive_counts(survey, &GROUPING, outcome, &opts);
        let input = ReportInput::Descriptive { outcome, factors: &GROUPING, groups: &groups };
        if let Ok(t) = report_table(&input, Layout::Table3) {
            tables.push((format!("table3_{}", outcome_slug(outcome)), t));
        }
    }

    let sets: Vec<(String, Vec<CountObservation>)> = OUTCOMES
        .iter()
        .map(|&o| (o.label().to_string(), observations_from_corpus(survey, o, &opts)))
        .collect();
    let fits = fit_models(config, &sets, formula, &mut notes)?;
    if let Ok(t) = report_table(&ReportInput::Regression(&fits), Layout::Table4) {
        tables.push(("table4".into(), t));
    }

    let mut tests = Vec::new();
    for (name, obs) in &sets {
        for (cov, label) in [("latinx", "Latinx vs non-Latinx"), ("caregiver", "Caregivers vs non-caregivers")] {
            let split = |v: f64| -> Vec<f64> {
                obs.iter().filter(|o| o.covariates[cov] == v).map(|o| o.outcome as f64).collect()
            };
            match wilcoxon_rank_sum(&split(1.0), &split(0.0), Sides::TwoSided) {
                Ok(result) => tests.push(NamedRankSum { comparison: format!("{name}: {label}"), result }),
                Err(e) => notes.push(format!("{name}: {label}: not tested ({e})")),
            }
        }
    }
    if let Ok(t) = report_table(&ReportInput::RankSum(&tests), Layout::Table5) {
        tables.push(("table5".into(), t));
    }

    let lengths = corpus::mean_question_length(survey, &GROUPING);
    if let Ok(t) = report_table(&ReportInput::Lengths { factors: &GROUPING, groups: &lengths }, Layout::Table6) {
        tables.push(("table6".into(), t));
    }
    Ok(Analysis { tables, notes, observations: sets })
}

fn outcome_slug(o: Outcome) -> &'static str {
    match o {
        Outcome::Relational => "relational",
        Outcome::Abstract => "abstract",
        Outcome::OpenEnded => "open_ended",
    }
}

fn analyze(
    config: &Config,
    corpus: Option<&Path>,
    observations: Option<&Path>,
    formula: &str,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let analysis = match observations {
        Some(p) => {
            let obs = stats::load_observations_csv(p).map_err(data(&p.display().to_string()))?;
            let mut notes = Vec::new();
            let sets = vec![("outcome".to_string(), obs)];
            let fits = fit_models(config, &sets, formula, &mut notes)?;
            let tables = report_table(&ReportInput::Regression(&fits), Layout::Table4)
                .map(|t| vec![("table4".to_string(), t)])
                .unwrap_or_default();
            Analysis { tables, notes, observations: Vec::new() }
        }
        None => {
            let path = corpus.ok_or_else(|| CliError::Usage("--corpus or --observations is required".into()))?;
            corpus_analysis(config, &load_bundle(path)?.survey, formula)?
        }
    };
    for (_, t) in &analysis.tables {
        write_line(out, &t.to_text())?;
    }
    for n in &analysis.notes {
        write_line(out, n)?;
    }
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(data(&dir.display().to_string()))?;
        for (name, t) in &analysis.tables {
            save(&dir.join(format!("{name}.csv")), &t.to_csv())?;
        }
        for (name, obs) in &analysis.observations {
            let slug = name.trim_start_matches('#').to_lowercase();
            save(
                &dir.join(format!("observations_{slug}.csv")),
                &stats::observations_to_csv(obs).map_err(data("observations"))?,
            )?;
        }
    }
    Ok(())
}

fn report(
    config: &Config,
    corpus: &Path,
    templates: Option<&Path>,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let bundle = load_bundle(corpus)?;
    let survey = &bundle.survey;
    let mut text = String::new();
    text.push_str(&format!(
        "Survey: {} participants, {} questions, {} answered both stories\n\n",
        survey.responses.len(),
        survey.question_count(),
        survey.repeated_participants().len()
    ));
    let analysis = corpus_analysis(config, survey, "story + latinx + caregiver + experience")?;
    for (_, t) in &analysis.tables {
        text.push_str(&t.to_text());
        text.push('\n');
    }
    for n in &analysis.notes {
        text.push_str(n);
        text.push('\n');
    }
    if let Some(tp) = templates {
        let store = load_store(tp).map_err(data(&tp.display().to_string()))?;
        let ranked = rank_templates(&store).map_err(data("rank"))?;
        let props = proportions_for(&ranked, config.top_k)?;
        let t = report_table(&ReportInput::Proportions(&props), Layout::Table8).map_err(data("table"))?;
        text.push_str(&t.to_text());
    }
    match path {
        Some(p) => save(p, &text),
        None => write!(out, "{text}").map_err(data("stdout")),
    }
}
