//! Count regression (Poisson and negative binomial, log link), the
//! Wilcoxon rank-sum test and plain-text/CSV report tables.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

use crate::corpus::{
    group_label, CountOptions, Factor, GroupSummary, LengthSummary, Outcome, Platform, Story, SurveyCorpus,
};
use crate::templates::{DemographicGroup, Proportions};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no observations")]
    EmptyObservations,
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,
    #[error("fit did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("observation lacks covariate `{0}`")]
    UnknownCovariate(String),
    #[error("bad model term `{0}`")]
    BadTerm(String),
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFiniteSample,
    #[error("results do not fit layout {0}")]
    LayoutMismatch(String),
    #[error("row {row}: bad value `{value}` in column `{column}`")]
    BadValue { row: usize, column: String, value: String },
    #[error("observation file lacks an `outcome` column")]
    MissingOutcome,
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<csv::Error> for StatsError {
    fn from(e: csv::Error) -> Self {
        StatsError::Csv(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Observations and model terms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountObservation {
    pub outcome: u64,
    pub covariates: BTreeMap<String, f64>,
}

impl CountObservation {
    pub fn new(outcome: u64, covariates: &[(&str, f64)]) -> Self {
        CountObservation {
            outcome,
            covariates: covariates.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Term {
    Intercept,
    Covariate(String),
    /// Product of two or more covariates.
    Interaction(Vec<String>),
}

impl Term {
    fn value(&self, obs: &CountObservation) -> Result<f64, StatsError> {
        let get = |name: &String| {
            obs.covariates
                .get(name)
                .copied()
                .ok_or_else(|| StatsError::UnknownCovariate(name.clone()))
        };
        match self {
            Term::Intercept => Ok(1.0),
            Term::Covariate(name) => get(name),
            Term::Interaction(names) => names.iter().map(get).product(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("(Intercept)"),
            Term::Covariate(n) => f.write_str(n),
            Term::Interaction(ns) => f.write_str(&ns.join(":")),
        }
    }
}

impl FromStr for Term {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let valid = |n: &str| !n.is_empty() && n.chars().all(|c| c.is_alphanumeric() || c == '_');
        if s == "1" || s.eq_ignore_ascii_case("(intercept)") || s.eq_ignore_ascii_case("intercept") {
            return Ok(Term::Intercept);
        }
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if !parts.iter().all(|p| valid(p)) {
            return Err(StatsError::BadTerm(s.to_string()));
        }
        Ok(match parts.as_slice() {
            [one] => Term::Covariate(one.to_string()),
            many => Term::Interaction(many.iter().map(|p| p.to_string()).collect()),
        })
    }
}

/// Parses `a + b + a:b` into terms with a leading intercept.
pub fn parse_terms(formula: &str) -> Result<Vec<Term>, StatsError> {
    let mut terms = vec![Term::Intercept];
    for piece in formula.split('+').map(str::trim).filter(|p| !p.is_empty()) {
        let t: Term = piece.parse()?;
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    Ok(terms)
}

/// One observation per participant and story: the number of questions of
/// the given kind, with 0/1 covariates `story` (1 = Celebrations), `latinx`,
/// `caregiver`, `experience`, `prolific` and the ordinal `read_frequency`.
pub fn observations_from_corpus(
    corpus: &SurveyCorpus,
    outcome: Outcome,
    options: &CountOptions,
) -> Vec<CountObservation> {
    crate::corpus::units(corpus, true, options)
        .iter()
        .map(|u| {
            let flag = |b: bool| if b { 1.0 } else { 0.0 };
            CountObservation::new(
                u.questions.iter().filter(|q| outcome.counts(q)).count() as u64,
                &[
                    ("story", flag(u.story == Some(Story::Celebrations))),
                    ("latinx", flag(u.profile.is_latinx)),
                    ("caregiver", flag(u.profile.is_caregiver)),
                    ("experience", flag(u.profile.experience_related_to_story)),
                    ("prolific", flag(u.profile.platform == Platform::Prolific)),
                    ("read_frequency", f64::from(u.profile.read_frequency.level())),
                ],
            )
        })
        .collect()
}

fn parse_number(raw: &str) -> Option<f64> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "yes" | "true" | "y" => Some(1.0),
        "no" | "false" | "n" => Some(0.0),
        other => other.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

/// Reads an observation CSV: an `outcome` column of non-negative integers
/// and any number of numeric (or yes/no) covariate columns.
pub fn load_observations_reader<R: Read>(reader: R) -> Result<Vec<CountObservation>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let outcome_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("outcome"))
        .ok_or(StatsError::MissingOutcome)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |column: &str, value: &str| StatsError::BadValue {
            row,
            column: column.to_string(),
            value: value.to_string(),
        };
        let raw = rec.get(outcome_col).unwrap_or("");
        let outcome = raw.parse::<u64>().map_err(|_| bad("outcome", raw))?;
        let mut covariates = BTreeMap::new();
        for (j, h) in headers.iter().enumerate() {
            if j == outcome_col {
                continue;
            }
            let v = rec.get(j).unwrap_or("");
            covariates.insert(h.to_string(), parse_number(v).ok_or_else(|| bad(h, v))?);
        }
        out.push(CountObservation { outcome, covariates });
    }
    if out.is_empty() {
        return Err(StatsError::EmptyObservations);
    }
    Ok(out)
}

pub fn load_observations_csv(path: &Path) -> Result<Vec<CountObservation>, StatsError> {
    let f = std::fs::File::open(path).map_err(|e| StatsError::Io(format!("{}: {e}", path.display())))?;
    load_observations_reader(f)
}

/// Renders observations back to CSV with covariates in name order.
pub fn observations_to_csv(obs: &[CountObservation]) -> Result<String, StatsError> {
    let names: Vec<&String> = obs.first().map(|o| o.covariates.keys().collect()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["outcome".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    for o in obs {
        let mut rec = vec![o.outcome.to_string()];
        rec.extend(names.iter().map(|n| o.covariates.get(*n).map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| StatsError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    NegativeBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Outer convergence threshold on the change in log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub theta_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 100,
            theta_cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub family: Family,
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub log_likelihood: f64,
    pub aic: f64,
    /// Dispersion, variance = μ + μ²/θ. Infinite for Poisson fits.
    pub theta: f64,
    /// θ reached the cap: the data show no overdispersion.
    pub underdispersed: bool,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    /// Log-likelihood after each outer iteration.
    pub loglik_trace: Vec<f64>,
}

impl RegressionResult {
    /// Estimated parameters counted by the AIC: β terms, plus θ for the
    /// negative binomial.
    pub fn n_params(&self) -> usize {
        match self.family {
            Family::Poisson => self.coefficients.len(),
            Family::NegativeBinomial => self.coefficients.len() + 1,
        }
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coefficients[i])
    }
}

pub fn aic_from(log_likelihood: f64, n_params: usize) -> f64 {
    -2.0 * log_likelihood + 2.0 * n_params as f64
}

/// Two-sided normal p-value, kept strictly positive.
pub fn wald_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Verifies `z = β/se` per term and `aic = −2ℓ + 2k` bit for bit.
pub fn check_identities(r: &RegressionResult) -> Result<(), String> {
    for (i, term) in r.terms.iter().enumerate() {
        let z = r.coefficients[i] / r.std_errors[i];
        if z.to_bits() != r.z[i].to_bits() {
            return Err(format!("{term}: z {} != β/se {z}", r.z[i]));
        }
        if !(r.p[i] > 0.0 && r.p[i] <= 1.0) {
            return Err(format!("{term}: p {} outside (0, 1]", r.p[i]));
        }
    }
    let aic = aic_from(r.log_likelihood, r.n_params());
    if aic.to_bits() != r.aic.to_bits() {
        return Err(format!("aic {} != −2ℓ + 2k = {aic}", r.aic));
    }
    Ok(())
}

/// Whether `value` rounds to the decimal string `printed` at the
/// precision `printed` is written in.
pub fn agrees_with_printed(value: f64, printed: &str) -> bool {
    let Ok(p) = printed.trim().parse::<f64>() else { return false };
    let decimals = printed.trim().split_once('.').map_or(0, |(_, d)| d.len());
    let half_ulp = 0.5 * 10f64.powi(-(decimals as i32));
    (value - p).abs() <= half_ulp * (1.0 + 1e-12)
}

struct Design {
    x: DMatrix<f64>,
    y: DVector<f64>,
    ln_fact: Vec<f64>,
    names: Vec<String>,
}

fn design(observations: &[CountObservation], terms: &[Term]) -> Result<Design, StatsError> {
    if observations.is_empty() {
        return Err(StatsError::EmptyObservations);
    }
    if terms.is_empty() {
        return Err(StatsError::BadTerm("empty model".into()));
    }
    let n = observations.len();
    let p = terms.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, o) in observations.iter().enumerate() {
        for (j, t) in terms.iter().enumerate() {
            x[(i, j)] = t.value(o)?;
        }
    }
    if n < p {
        return Err(StatsError::RankDeficientDesign);
    }
    let xtx = x.tr_mul(&x);
    let sv = xtx.svd(false, false).singular_values;
    let (min, max) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if max == 0.0 || min / max < 1e-12 {
        return Err(StatsError::RankDeficientDesign);
    }
    Ok(Design {
        x,
        y: DVector::from_iterator(n, observations.iter().map(|o| o.outcome as f64)),
        ln_fact: observations.iter().map(|o| ln_factorial(o.outcome)).collect(),
        names: terms.iter().map(Term::to_string).collect(),
    })
}

const ETA_MAX: f64 = 700.0;

fn mean(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    (x * beta).map(|e| e.clamp(-ETA_MAX, ETA_MAX).exp())
}

/// Solves the weighted normal equations `X'WX b = X'Wz`.
fn weighted_solve(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>, StatsError> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let a = x.tr_mul(&xw);
    let b = xw.tr_mul(z);
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or(StatsError::RankDeficientDesign)
}

fn weighted_info(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    x.tr_mul(&xw)
}

fn poisson_loglik(d: &Design, mu: &DVector<f64>) -> f64 {
    let mut terms: Vec<f64> = (0..mu.len())
        .map(|i| {
            let y = d.y[i];
            let ym = if y > 0.0 { y * mu[i].ln() } else { 0.0 };
            ym - mu[i] - d.ln_fact[i]
        })
        .collect();
    sorted_sum(&mut terms)
}

/// Order-independent summation for bit-stable results.
fn sorted_sum(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

struct PoissonState {
    beta: DVector<f64>,
    converged: bool,
    iterations: usize,
}

fn poisson_irls(d: &Design) -> Result<PoissonState, StatsError> {
    let mut mu = d.y.map(|y| y + 0.1);
    let mut eta = mu.map(f64::ln);
    let mut beta = DVector::zeros(d.x.ncols());
    for it in 1..=50 {
        let z = DVector::from_iterator(mu.len(), (0..mu.len()).map(|i| eta[i] + (d.y[i] - mu[i]) / mu[i]));
        let next = weighted_solve(&d.x, &mu, &z)?;
        let delta = if it == 1 { f64::INFINITY } else { (&next - &beta).amax() };
        beta = next;
        eta = (&d.x * &beta).map(|e| e.clamp(-ETA_MAX, ETA_MAX));
        mu = eta.map(f64::exp);
        if delta < 1e-8 {
            return Ok(PoissonState { beta, converged: true, iterations: it });
        }
    }
    Ok(PoissonState { beta, converged: false, iterations: 50 })
}

fn finish(
    d: &Design,
    family: Family,
    beta: &DVector<f64>,
    cov: &DMatrix<f64>,
    ll: f64,
    theta: f64,
) -> Result<RegressionResult, StatsError> {
    let p = beta.len();
    let mut std_errors = Vec::with_capacity(p);
    for j in 0..p {
        let v = cov[(j, j)];
        if !(v.is_finite() && v > 0.0) {
            return Err(StatsError::RankDeficientDesign);
        }
        std_errors.push(v.sqrt());
    }
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let z: Vec<f64> = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z.iter().map(|z| wald_p(*z)).collect();
    let n_params = match family {
        Family::Poisson => p,
        Family::NegativeBinomial => p + 1,
    };
    Ok(RegressionResult {
        family,
        terms: d.names.clone(),
        coefficients,
        std_errors,
        z,
        p: p_values,
        log_likelihood: ll,
        aic: aic_from(ll, n_params),
        theta,
        underdispersed: false,
        converged: true,
        iterations: 0,
        n_obs: d.y.len(),
        loglik_trace: Vec::new(),
    })
}

/// Poisson log-link maximum likelihood by IRLS.
pub fn fit_poisson(observations: &[CountObservation], terms: &[Term]) -> Result<RegressionResult, StatsError> {
    let d = design(observations, terms)?;
    let st = poisson_irls(&d)?;
    if !st.converged {
        return Err(StatsError::NonConvergence(st.iterations));
    }
    let mu = mean(&d.x, &st.beta);
    let cov = weighted_info(&d.x, &mu)
        .cholesky()
        .ok_or(StatsError::RankDeficientDesign)?
        .inverse();
    let ll = poisson_loglik(&d, &mu);
    let mut r = finish(&d, Family::Poisson, &st.beta, &cov, ll, f64::INFINITY)?;
    r.iterations = st.iterations;
    r.loglik_trace = vec![ll];
    Ok(r)
}

fn nb_loglik(d: &Design, mu: &DVector<f64>, theta: f64) -> f64 {
    let mut terms: Vec<f64> = (0..mu.len())
        .map(|i| {
            let y = d.y[i];
            let m = mu[i];
            let lg: f64 = (0..y as u64).map(|j| (theta + j as f64).ln()).sum();
            let ym = if y > 0.0 { y * (m / (theta + m)).ln() } else { 0.0 };
            lg - d.ln_fact[i] + theta * (theta / (theta + m)).ln() + ym
        })
        .collect();
    sorted_sum(&mut terms)
}

/// First and second derivatives of the log-likelihood in θ.
fn theta_derivatives(d: &Design, mu: &DVector<f64>, theta: f64) -> (f64, f64) {
    let (mut g, mut h) = (0.0, 0.0);
    for i in 0..mu.len() {
        let y = d.y[i];
        let m = mu[i];
        let (mut psi, mut tri) = (0.0, 0.0);
        for j in 0..y as u64 {
            let t = theta + j as f64;
            psi += 1.0 / t;
            tri += 1.0 / (t * t);
        }
        g += psi + (theta / (theta + m)).ln() + 1.0 - (theta + y) / (theta + m);
        h += -tri + 1.0 / theta - 2.0 / (theta + m) + (theta + y) / ((theta + m) * (theta + m));
    }
    (g, h)
}

/// Negative binomial (NB2) log-link maximum likelihood. β and θ are
/// updated alternately; each update is step-halved so the log-likelihood
/// never decreases.
pub fn fit_negbin(observations: &[CountObservation], terms: &[Term]) -> Result<RegressionResult, StatsError> {
    fit_negbin_with(observations, terms, &FitOptions::default())
}

pub fn fit_negbin_with(
    observations: &[CountObservation],
    terms: &[Term],
    opts: &FitOptions,
) -> Result<RegressionResult, StatsError> {
    let d = design(observations, terms)?;
    let cap = opts.theta_cap;
    let mut beta = poisson_irls(&d)?.beta;
    let mut mu = mean(&d.x, &beta);

    let num: f64 = mu.iter().map(|m| m * m).sum();
    let den: f64 = (0..mu.len()).map(|i| (d.y[i] - mu[i]).powi(2) - mu[i]).sum();
    let mut theta = if den > 0.0 && (num / den).is_finite() { (num / den).clamp(1e-8, cap) } else { cap };

    let mut ll = nb_loglik(&d, &mu, theta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    for outer in 1..=opts.max_iter {
        iterations = outer;
        let ll_start = ll;

        // β: Fisher scoring at fixed θ.
        for _ in 0..25 {
            let w = mu.map(|m| m / (1.0 + m / theta));
            let eta = &d.x * &beta;
            let z = DVector::from_iterator(mu.len(), (0..mu.len()).map(|i| eta[i] + (d.y[i] - mu[i]) / mu[i]));
            let target = weighted_solve(&d.x, &w, &z)?;
            let step = &target - &beta;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &beta + &step * scale;
                let cmu = mean(&d.x, &cand);
                let cll = nb_loglik(&d, &cmu, theta);
                if cll >= ll {
                    accepted = true;
                    beta = cand;
                    mu = cmu;
                    ll = cll;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted || (step * scale).amax() < 1e-10 {
                break;
            }
        }

        // θ: Newton on ln θ.
        for _ in 0..25 {
            let (g, h) = theta_derivatives(&d, &mu, theta);
            let g_phi = theta * g;
            let h_phi = theta * theta * h + theta * g;
            let mut step = if h_phi < 0.0 { -g_phi / h_phi } else { g_phi.signum() };
            step = step.clamp(-5.0, 5.0);
            let phi = theta.ln();
            let mut accepted = false;
            for _ in 0..30 {
                let cand = (phi + step).exp().clamp(1e-8, cap);
                let cll = nb_loglik(&d, &mu, cand);
                if cll >= ll {
                    accepted = cand != theta;
                    theta = cand;
                    ll = cll;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step.abs() < 1e-10 || theta >= cap {
                break;
            }
        }

        trace.push(ll);
        if (ll - ll_start).abs() < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(StatsError::NonConvergence(iterations));
    }

    let underdispersed = theta >= cap;
    let p = beta.len();
    let obs_w = DVector::from_iterator(
        mu.len(),
        (0..mu.len()).map(|i| theta * mu[i] * (theta + d.y[i]) / (theta + mu[i]).powi(2)),
    );
    let i_bb = weighted_info(&d.x, &obs_w);
    let beta_only = || {
        i_bb.clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(StatsError::RankDeficientDesign)
    };
    let cov = if underdispersed {
        beta_only()?
    } else {
        let (_, h) = theta_derivatives(&d, &mu, theta);
        let mut joint = DMatrix::zeros(p + 1, p + 1);
        joint.view_mut((0, 0), (p, p)).copy_from(&i_bb);
        for j in 0..p {
            let cross: f64 = (0..mu.len())
                .map(|i| -d.x[(i, j)] * (d.y[i] - mu[i]) * mu[i] / (theta + mu[i]).powi(2))
                .sum();
            joint[(j, p)] = cross;
            joint[(p, j)] = cross;
        }
        joint[(p, p)] = -h;
        match joint.cholesky() {
            Some(c) => c.inverse().view((0, 0), (p, p)).into_owned(),
            None => beta_only()?,
        }
    };

    let mut r = finish(&d, Family::NegativeBinomial, &beta, &cov, ll, theta)?;
    r.underdispersed = underdispersed;
    r.converged = converged;
    r.iterations = iterations;
    r.loglik_trace = trace;
    Ok(r)
}

// ---------------------------------------------------------------------------
// Wilcoxon rank-sum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sides {
    TwoSided,
    /// x tends to be smaller than y.
    Less,
    /// x tends to be larger than y.
    Greater,
}

impl FromStr for Sides {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "two_sided" | "two" => Ok(Sides::TwoSided),
            "less" => Ok(Sides::Less),
            "greater" => Ok(Sides::Greater),
            other => Err(format!("unknown alternative `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSumMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSumResult {
    pub w: f64,
    pub p: f64,
    pub method: RankSumMethod,
    pub n1: usize,
    pub n2: usize,
}

/// Midranks (1-based) of `values` and the sizes of tied groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of size-`n1` subsets of {1..n1+n2} for each value of
/// U = rank sum − n1(n1+1)/2.
fn rank_sum_counts(n1: usize, n2: usize) -> Vec<f64> {
    // f[a][b][u] built incrementally over b with a rolling table per a.
    let max_u = n1 * n2;
    let mut table: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n2 + 1]; n1 + 1];
    for (a, row) in table.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = vec![0.0; a * b + 1];
        }
    }
    for a in 0..=n1 {
        for b in 0..=n2 {
            if a == 0 || b == 0 {
                table[a][b][0] = 1.0;
                continue;
            }
            for u in 0..=a * b {
                let with_top = if u >= b { table[a - 1][b].get(u - b).copied().unwrap_or(0.0) } else { 0.0 };
                let without = table[a][b - 1].get(u).copied().unwrap_or(0.0);
                table[a][b][u] = with_top + without;
            }
        }
    }
    let out = std::mem::take(&mut table[n1][n2]);
    debug_assert_eq!(out.len(), max_u + 1);
    out
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Rank-sum test of `x` against `y`. Exact when the pooled size is at most
/// 20 and there are no ties, otherwise a normal approximation with tie
/// correction and continuity correction.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64], sides: Sides) -> Result<RankSumResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFiniteSample);
    }
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let w = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    if n1 + n2 <= 20 && ties.is_empty() {
        let counts = rank_sum_counts(n1, n2);
        let total: f64 = counts.iter().sum();
        let wu = w.round() as usize;
        let le: f64 = counts[..=wu].iter().sum::<f64>() / total;
        let ge: f64 = counts[wu..].iter().sum::<f64>() / total;
        let p = match sides {
            Sides::TwoSided => (2.0 * le.min(ge)).min(1.0),
            Sides::Less => le,
            Sides::Greater => ge,
        };
        return Ok(RankSumResult { w, p, method: RankSumMethod::Exact, n1, n2 });
    }

    let n = (n1 + n2) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / (n * (n - 1.0));
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term);
    let d = w - (n1 * n2) as f64 / 2.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let sd = var.sqrt();
        match sides {
            Sides::TwoSided => {
                let correction = if d > 0.0 { 0.5 } else if d < 0.0 { -0.5 } else { 0.0 };
                let z = (d - correction) / sd;
                (2.0 * normal_cdf(-z.abs())).min(1.0)
            }
            Sides::Less => normal_cdf((d + 0.5) / sd),
            Sides::Greater => 1.0 - normal_cdf((d - 0.5) / sd),
        }
    };
    Ok(RankSumResult { w, p, method: RankSumMethod::NormalApprox, n1, n2 })
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Table3,
    Table4,
    Table5,
    Table6,
    Table8,
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "table3" => Ok(Layout::Table3),
            "table4" => Ok(Layout::Table4),
            "table5" => Ok(Layout::Table5),
            "table6" => Ok(Layout::Table6),
            "table8" => Ok(Layout::Table8),
            other => Err(format!("unknown layout `{other}`")),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Layout::Table3 => "table3",
            Layout::Table4 => "table4",
            Layout::Table5 => "table5",
            Layout::Table6 => "table6",
            Layout::Table8 => "table8",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedFit {
    pub model: String,
    pub result: RegressionResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedRankSum {
    pub comparison: String,
    pub result: RankSumResult,
}

pub enum ReportInput<'a> {
    Descriptive {
        outcome: Outcome,
        factors: &'a [Factor],
        groups: &'a [GroupSummary],
    },
    Regression(&'a [NamedFit]),
    RankSum(&'a [NamedRankSum]),
    Lengths {
        factors: &'a [Factor],
        groups: &'a [LengthSummary],
    },
    Proportions(&'a [Proportions]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl RenderedTable {
    pub fn to_text(&self) -> String {
        let ncol = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(ncol) {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{c:<w$}", w = widths[i]))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n{}\n", self.title, line(&self.header));
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * ncol.saturating_sub(1)));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.0001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

fn with_stars(p: f64) -> String {
    match significance_stars(p) {
        "" => six_significant(p),
        stars => format!("{} {stars}", six_significant(p)),
    }
}

/// Formats with six significant digits; very small values use exponent
/// notation.
pub fn six_significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn factor_headers(factors: &[Factor]) -> Vec<String> {
    factors.iter().map(|f| f.header().to_string()).collect()
}

fn key_cells(key: &crate::corpus::GroupKey, factors: &[Factor]) -> Vec<String> {
    if factors.is_empty() {
        return Vec::new();
    }
    key.iter().map(|(_, v)| v.label()).collect()
}

/// Renders results in one of the report layouts. The input kind must suit
/// the layout and must not be empty.
pub fn report_table(input: &ReportInput<'_>, layout: Layout) -> Result<RenderedTable, StatsError> {
    let mismatch = || StatsError::LayoutMismatch(layout.to_string());
    match (layout, input) {
        (Layout::Table3, ReportInput::Descriptive { outcome, factors, groups }) if !groups.is_empty() => {
            let mut header = factor_headers(factors);
            header.push("N".into());
            header.push(format!("Mean {} (SD)", outcome.label()));
            let rows = groups
                .iter()
                .map(|g| {
                    let mut r = key_cells(&g.key, factors);
                    if factors.is_empty() {
                        r.clear();
                    }
                    r.push(g.n.to_string());
                    let flag = if g.n_lt_2 { " [n<2]" } else { "" };
                    r.push(format!("{:.2} ({:.2}){flag}", g.mean, g.sd));
                    r
                })
                .collect();
            Ok(RenderedTable {
                title: format!("{} by group", outcome.title()),
                header,
                rows,
                notes: Vec::new(),
            })
        }
        (Layout::Table4, ReportInput::Regression(fits)) if !fits.is_empty() => {
            let header = [
                "Model",
                "Term",
                "Coefficient Estimate",
                "Coefficient Std. Error",
                "Z-value",
                "AIC",
                "2xloglikelihood",
                "p-val",
            ]
            .map(String::from)
            .to_vec();
            let mut rows = Vec::new();
            let mut notes = Vec::new();
            for f in fits.iter() {
                let r = &f.result;
                for i in 0..r.terms.len() {
                    let first = i == 0;
                    rows.push(vec![
                        if first { f.model.clone() } else { String::new() },
                        r.terms[i].clone(),
                        format!("{:.5}", r.coefficients[i]),
                        format!("{:.5}", r.std_errors[i]),
                        format!("{:.3}", r.z[i]),
                        if first { format!("{:.3}", r.aic) } else { String::new() },
                        if first { format!("{:.3}", 2.0 * r.log_likelihood) } else { String::new() },
                        with_stars(r.p[i]),
                    ]);
                }
                let theta = if r.theta.is_finite() { format!("{:.4}", r.theta) } else { "inf".into() };
                let flag = if r.underdispersed { ", underdispersed" } else { "" };
                notes.push(format!("{}: theta = {theta}, n = {}{flag}", f.model, r.n_obs));
            }
            notes.push("Signif. codes: *** <0.0001, ** <0.01, * <0.05, . <0.1".into());
            Ok(RenderedTable {
                title: "Count regression".into(),
                header,
                rows,
                notes,
            })
        }
        (Layout::Table5, ReportInput::RankSum(tests)) if !tests.is_empty() => {
            let header = ["Comparison", "W-value", "p-value", "Method"].map(String::from).to_vec();
            let rows = tests
                .iter()
                .map(|t| {
                    vec![
                        t.comparison.clone(),
                        format!("{}", t.result.w),
                        with_stars(t.result.p),
                        match t.result.method {
                            RankSumMethod::Exact => "exact".into(),
                            RankSumMethod::NormalApprox => "normal".into(),
                        },
                    ]
                })
                .collect();
            Ok(RenderedTable {
                title: "Wilcoxon rank-sum tests".into(),
                header,
                rows,
                notes: Vec::new(),
            })
        }
        (Layout::Table6, ReportInput::Lengths { factors, groups }) if !groups.is_empty() => {
            let mut header = factor_headers(factors);
            header.push("N".into());
            header.push("Mean length of Relational questions".into());
            let rows = groups
                .iter()
                .map(|g| {
                    let mut r = key_cells(&g.key, factors);
                    r.push(g.n_questions.to_string());
                    r.push(g.mean.map_or("NA".into(), |m| format!("{m:.2}")));
                    r
                })
                .collect();
            Ok(RenderedTable {
                title: "Relational question length".into(),
                header,
                rows,
                notes: Vec::new(),
            })
        }
        (Layout::Table8, ReportInput::Proportions(props)) if !props.is_empty() => {
            let mut header = vec!["Group".to_string()];
            header.extend(props.iter().map(|p| format!("Top {}", p.k)));
            let mut rows: Vec<Vec<String>> = DemographicGroup::ALL
                .iter()
                .map(|g| {
                    let mut r = vec![g.label().to_string()];
                    r.extend(props.iter().map(|p| format!("{:.1}%", p.share(*g))));
                    r
                })
                .collect();
            let mut total = vec!["Total".to_string()];
            total.extend(props.iter().map(|p| format!("{:.1}%", p.shares.iter().map(|(_, s)| s).sum::<f64>())));
            rows.push(total);
            Ok(RenderedTable {
                title: "Demographic share of top-ranked templates".into(),
                header,
                rows,
                notes: Vec::new(),
            })
        }
        _ => Err(mismatch()),
    }
}

/// Label used for a descriptive group in text output.
pub fn group_row_label(g: &GroupSummary) -> String {
    group_label(&g.key)
}
