//! Maximum-likelihood meta-d' under the ideal-observer Type-2 model.
//!
//! Evidence is `x | incorrect ~ N(-meta_d/2, 1)` and
//! `x | correct ~ N(+meta_d/2, 1/s)`. The Type-1 criterion `meta_c` sits at
//! the same relative position as in the observed data, `meta_c = (c/d')
//! meta_d`, and K-1 Type-2 criteria on each side of it split each response
//! side into K confidence levels. Only the confidence distributions
//! conditional on (class, response side) enter the likelihood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binning::RatingCounts;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, Minimum, NelderMeadOptions};
use crate::sdt::{compute_type1_with_s, gaussian_cdf, gaussian_sf, z};

/// Model probabilities are floored here inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// |d'| below this leaves the relative criterion c/d' undefined.
pub const MIN_ABS_D_PRIME: f64 = 1e-6;
pub const META_D_BOUND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type2Params {
    pub meta_d: f64,
    pub meta_c: f64,
    /// Criteria below `meta_c`, increasing.
    pub t2c_low: Vec<f64>,
    /// Criteria above `meta_c`, increasing.
    pub t2c_high: Vec<f64>,
    pub s: f64,
}

impl Type2Params {
    pub fn k(&self) -> usize {
        self.t2c_low.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.t2c_low.len() != self.t2c_high.len() || self.t2c_low.is_empty() {
            return Err(Error::InvalidInput(
                "need K-1 >= 1 criteria on each side of meta_c".into(),
            ));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidInput(format!("s must be positive, got {}", self.s)));
        }
        let mut all = self.t2c_low.clone();
        all.push(self.meta_c);
        all.extend_from_slice(&self.t2c_high);
        if all.iter().any(|v| !v.is_finite()) || !self.meta_d.is_finite() {
            return Err(Error::InvalidInput("non-finite Type-2 parameter".into()));
        }
        if all.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "criteria must satisfy t2c_low < meta_c < t2c_high, each increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Conditional confidence distributions. Entries `0..K` are
/// P(rating | class, response "incorrect") and sum to one; entries `K..2K`
/// are P(rating | class, response "correct") and sum to one. Index 0 is the
/// most confident "incorrect" rating, index 2K-1 the most confident
/// "correct" rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type2Probs {
    pub k: usize,
    pub incorrect: Vec<f64>,
    pub correct: Vec<f64>,
}

pub fn type2_model_probs(params: &Type2Params) -> Result<Type2Probs> {
    params.validate()?;
    let k = params.k();
    let mut incorrect = vec![0.0; 2 * k];
    let mut correct = vec![0.0; 2 * k];
    fill_probs(
        params.meta_d,
        params.meta_c,
        &params.t2c_low,
        &params.t2c_high,
        params.s,
        &mut incorrect,
        &mut correct,
    );
    Ok(Type2Probs {
        k,
        incorrect,
        correct,
    })
}

/// Writes conditional probabilities for both classes into the buffers.
#[inline]
fn fill_probs(
    meta_d: f64,
    meta_c: f64,
    low: &[f64],
    high: &[f64],
    s: f64,
    incorrect: &mut [f64],
    correct: &mut [f64],
) {
    let k = low.len() + 1;
    let half = 0.5 * meta_d;
    // incorrect class: standardised point is x + meta_d/2
    // correct class:   standardised point is (x - meta_d/2) * s
    let std_inc = |x: f64| x + half;
    let std_cor = |x: f64| (x - half) * s;

    for (out, stdz) in [
        (&mut *incorrect, &std_inc as &dyn Fn(f64) -> f64),
        (&mut *correct, &std_cor as &dyn Fn(f64) -> f64),
    ] {
        // "incorrect" response side: intervals (-inf, low0), ..., (low_{K-2}, meta_c)
        let denom = gaussian_cdf(stdz(meta_c));
        let mut prev = 0.0;
        for r in 0..k {
            let upper = if r + 1 < k { gaussian_cdf(stdz(low[r])) } else { denom };
            out[r] = (upper - prev) / denom;
            prev = upper;
        }
        // "correct" response side via survival functions
        let denom = gaussian_sf(stdz(meta_c));
        let mut prev = denom;
        for r in 0..k {
            let next = if r + 1 < k { gaussian_sf(stdz(high[r])) } else { 0.0 };
            out[k + r] = (prev - next) / denom;
            prev = next;
        }
    }
}

/// Multinomial log-likelihood of the counts under the given parameters.
pub fn log_likelihood(counts: &RatingCounts, params: &Type2Params) -> Result<f64> {
    let probs = type2_model_probs(params)?;
    if probs.k != counts.k {
        return Err(Error::InvalidInput("K mismatch between counts and parameters".into()));
    }
    Ok(ll_from_probs(counts, &probs.incorrect, &probs.correct))
}

#[inline]
fn ll_from_probs(counts: &RatingCounts, incorrect: &[f64], correct: &[f64]) -> f64 {
    let mut ll = 0.0;
    for r in 0..incorrect.len() {
        ll += counts.n_r_s1[r] * incorrect[r].max(PROB_FLOOR).ln();
        ll += counts.n_r_s2[r] * correct[r].max(PROB_FLOOR).ln();
    }
    ll
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDFit {
    pub meta_d: f64,
    pub meta_c: f64,
    pub t2c_low: Vec<f64>,
    pub t2c_high: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    /// Variance ratio used by the forward model (1 = equal variance).
    pub s: f64,
    /// Type-1 d' under the same variance assumption.
    pub d_prime: f64,
    /// Type-1 criterion under the same variance assumption.
    pub c: f64,
    pub m_ratio: f64,
    pub evaluations: usize,
}

impl MetaDFit {
    pub fn params(&self) -> Type2Params {
        Type2Params {
            meta_d: self.meta_d,
            meta_c: self.meta_c,
            t2c_low: self.t2c_low.clone(),
            t2c_high: self.t2c_high.clone(),
            s: self.s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub simplex: NelderMeadOptions,
    /// Additional simplex runs from perturbations of the best point.
    pub restarts: usize,
    /// Standard deviation of the restart perturbation (raw parameter scale).
    pub restart_jitter: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            simplex: NelderMeadOptions::default(),
            restarts: 2,
            restart_jitter: 0.1,
            seed: 42,
        }
    }
}

/// Equal-variance fit.
pub fn fit_meta_d(counts: &RatingCounts) -> Result<MetaDFit> {
    fit_meta_d_with(counts, 1.0, &FitOptions::default())
}

/// Unequal-variance fit with correct-class standard deviation `1/s`.
pub fn fit_meta_d_uv(counts: &RatingCounts, s: f64) -> Result<MetaDFit> {
    fit_meta_d_with(counts, s, &FitOptions::default())
}

/// Raw parameter layout: `[meta_d, log gaps below meta_c (inner first),
/// log gaps above meta_c (inner first)]`. Exponentiated gaps keep every
/// candidate criterion vector strictly ordered.
struct Problem<'a> {
    counts: &'a RatingCounts,
    k: usize,
    s: f64,
    relative_c: f64,
}

impl Problem<'_> {
    fn decode_into(&self, raw: &[f64], low: &mut [f64], high: &mut [f64]) -> (f64, f64) {
        let k = self.k;
        let meta_d = raw[0];
        let meta_c = self.relative_c * meta_d;
        let mut edge = meta_c;
        for i in 0..k - 1 {
            edge -= raw[1 + i].exp();
            low[k - 2 - i] = edge;
        }
        let mut edge = meta_c;
        for i in 0..k - 1 {
            edge += raw[k + i].exp();
            high[i] = edge;
        }
        (meta_d, meta_c)
    }

    fn decode(&self, raw: &[f64]) -> Type2Params {
        let mut low = vec![0.0; self.k - 1];
        let mut high = vec![0.0; self.k - 1];
        let (meta_d, meta_c) = self.decode_into(raw, &mut low, &mut high);
        Type2Params {
            meta_d,
            meta_c,
            t2c_low: low,
            t2c_high: high,
            s: self.s,
        }
    }

    fn objective(&self) -> impl FnMut(&[f64]) -> f64 + '_ {
        let k = self.k;
        let mut low = vec![0.0; k - 1];
        let mut high = vec![0.0; k - 1];
        let mut inc = vec![0.0; 2 * k];
        let mut cor = vec![0.0; 2 * k];
        move |raw: &[f64]| {
            if !(raw[0].abs() <= META_D_BOUND) {
                return f64::INFINITY;
            }
            let (meta_d, meta_c) = self.decode_into(raw, &mut low, &mut high);
            if low.iter().chain(&high).any(|v| !v.is_finite()) {
                return f64::INFINITY;
            }
            fill_probs(meta_d, meta_c, &low, &high, self.s, &mut inc, &mut cor);
            -ll_from_probs(self.counts, &inc, &cor)
        }
    }

    /// Start at meta_d = d' with criteria at the z-transformed cumulative
    /// rating proportions.
    fn initial_raw(&self, d_prime: f64) -> Result<Vec<f64>> {
        let k = self.k;
        let c = self.counts;
        let n1 = c.n_incorrect();
        let n2 = c.n_correct();
        let mut crit = Vec::with_capacity(2 * k - 1);
        for j in 1..2 * k {
            let hr: f64 = c.n_r_s2[j..].iter().sum::<f64>() / n2;
            let far: f64 = c.n_r_s1[j..].iter().sum::<f64>() / n1;
            crit.push(-0.5 * (z(hr)? / self.s + z(far)?));
        }
        let meta_c = self.relative_c * d_prime;
        // shift so the middle boundary coincides with meta_c exactly
        let shift = meta_c - crit[k - 1];
        let mut raw = vec![d_prime];
        let mut prev = meta_c;
        for j in (0..k - 1).rev() {
            let gap = (prev - (crit[j] + shift)).max(1e-4);
            raw.push(gap.ln());
            prev -= gap;
        }
        let mut prev = meta_c;
        for j in k..2 * k - 1 {
            let gap = ((crit[j] + shift) - prev).max(1e-4);
            raw.push(gap.ln());
            prev += gap;
        }
        Ok(raw)
    }
}

pub fn fit_meta_d_with(counts: &RatingCounts, s: f64, options: &FitOptions) -> Result<MetaDFit> {
    if !counts.corrected {
        return Err(Error::NotCorrected);
    }
    let t1 = compute_type1_with_s(counts, s)?;
    if !(t1.d_prime.abs() >= MIN_ABS_D_PRIME) {
        return Err(Error::Unstable(format!(
            "|d'| = {:.3e} is too small to anchor meta_c",
            t1.d_prime.abs()
        )));
    }
    let problem = Problem {
        counts,
        k: counts.k,
        s,
        relative_c: t1.c / t1.d_prime,
    };
    let x0 = problem.initial_raw(t1.d_prime.clamp(-META_D_BOUND, META_D_BOUND))?;

    let mut evaluations = 0;
    let mut best: Minimum = nelder_mead(problem.objective(), &x0, &options.simplex);
    evaluations += best.evaluations;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.restarts {
        let start: Vec<f64> = best
            .x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * options.restart_jitter;
                if i == 0 {
                    (v + jitter).clamp(-META_D_BOUND, META_D_BOUND)
                } else {
                    v + jitter
                }
            })
            .collect();
        let run = nelder_mead(problem.objective(), &start, &options.simplex);
        evaluations += run.evaluations;
        if run.f < best.f || (run.f == best.f && run.converged && !best.converged) {
            best = run;
        }
    }

    let params = problem.decode(&best.x);
    let log_likelihood = -best.f;
    Ok(MetaDFit {
        meta_d: params.meta_d,
        meta_c: params.meta_c,
        t2c_low: params.t2c_low,
        t2c_high: params.t2c_high,
        log_likelihood,
        converged: best.converged && log_likelihood.is_finite(),
        s,
        d_prime: t1.d_prime,
        c: t1.c,
        m_ratio: params.meta_d / t1.d_prime,
        evaluations,
    })
}
