//! Spike-and-slab variable selection over a region by Metropolis-Hastings on
//! whitened data.
//!
//! With `γ` the inclusion vector, `β | γ ~ N(0, φ² diag(γ))` and
//! `Pr(γ) = Π p₁^{γᵢ}(1 - p₁)^{1-γᵢ}`, the posterior is proportional to
//! `Pr(γ) · ABF(φ² diag(γ))`. After whitening by the null covariance every
//! ABF is evaluated with `Σ = I` and the null `τ̃`, so the information of any
//! subset is a sub-block of one precomputed `p × p` matrix.

use std::collections::HashMap;
use std::f64::consts::LN_10;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::abf::FactorSpectrum;
use crate::error::{Error, Result};
use crate::linalg;
use crate::lmm::{Dataset, EffectInformation, Lmm, Spectrum, VarianceFit};
use crate::priors::PhiGrid;
use crate::sim::stream_rng;

/// Data transformed by `Σ̃^{-1/2}`, with the null fit it came from.
#[derive(Debug, Clone)]
pub struct WhitenedData {
    /// Whitened `(y, X, G)` with no kinship.
    pub data: Dataset,
    pub lambda: f64,
    pub tau: f64,
}

/// `(Σ̃^{-1/2}y, Σ̃^{-1/2}X, Σ̃^{-1/2}G)` with the symmetric inverse square root.
pub fn whiten(data: &Dataset, null_fit: &VarianceFit) -> Result<WhitenedData> {
    if null_fit.kappa != 0.0 {
        return Err(Error::invalid(format!("whitening needs the null fit (kappa = 0), got kappa = {}", null_fit.kappa)));
    }
    let spectrum = Spectrum::new(data.kinship(), data.n())?;
    let lambda = null_fit.lambda_check;
    let y = spectrum.inv_sqrt_apply(lambda, &DMatrix::from_column_slice(data.n(), 1, data.y().as_slice())).column(0).into_owned();
    let x = spectrum.inv_sqrt_apply(lambda, data.x());
    let g = spectrum.inv_sqrt_apply(lambda, data.g());
    Ok(WhitenedData { data: Dataset::transformed(y, x, g)?, lambda, tau: null_fit.tau_check })
}

/// Prior inclusion probability: a point value or a uniform grid on `log₁₀ p₁`.
#[derive(Debug, Clone, PartialEq)]
pub enum P1Spec {
    Point(f64),
    Log10Uniform { lo: f64, hi: f64, points: usize },
}

impl Default for P1Spec {
    /// `log₁₀ p₁ ~ U[-2.71, -1.40]` on 17 points.
    fn default() -> Self {
        P1Spec::Log10Uniform { lo: -2.71, hi: -1.40, points: 17 }
    }
}

impl P1Spec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let vals = match *self {
            P1Spec::Point(p) => vec![p],
            P1Spec::Log10Uniform { lo, hi, points } => {
                if points == 0 || !(lo <= hi) {
                    return Err(Error::invalid("p1 grid needs lo <= hi and at least one point"));
                }
                if points == 1 {
                    vec![10f64.powf(0.5 * (lo + hi))]
                } else {
                    (0..points).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64)).collect()
                }
            }
        };
        if let Some(p) = vals.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(format!("p1 = {p} outside (0, 1)")));
        }
        Ok(vals)
    }
}

/// `ln Pr(γ)` for a model with `k` of `p` SNPs included.
pub fn log_prior_size(k: usize, p: usize, p1: &P1Spec) -> Result<f64> {
    if k > p {
        return Err(Error::invalid(format!("model size {k} exceeds p = {p}")));
    }
    let terms: Vec<f64> = p1
        .values()?
        .iter()
        .map(|&q| k as f64 * q.ln() + (p - k) as f64 * (-q).ln_1p())
        .collect();
    Ok(linalg::log_sum_exp(&terms) - (terms.len() as f64).ln())
}

pub fn log_prior_gamma(gamma: &[bool], p1: &P1Spec) -> Result<f64> {
    log_prior_size(gamma.iter().filter(|&&g| g).count(), gamma.len(), p1)
}

/// One inclusion vector with its posterior score.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionState {
    pub gamma: Vec<bool>,
    pub log_prior: f64,
    pub log10_abf: f64,
    pub log_post_score: f64,
}

impl InclusionState {
    pub fn size(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }

    pub fn included(&self) -> Vec<usize> {
        included(&self.gamma)
    }
}

fn included(gamma: &[bool]) -> Vec<usize> {
    gamma.iter().enumerate().filter(|(_, &g)| g).map(|(i, _)| i).collect()
}

/// Posterior scorer for one region.
#[derive(Debug, Clone)]
pub struct FinemapModel {
    info: EffectInformation,
    log_prior: Vec<f64>,
    scales: Vec<f64>,
    ln_weights: Vec<f64>,
}

impl FinemapModel {
    /// With `standardized`, `φ` is on the residual-SD scale (`W = φ²/τ̃ · diag(γ)`).
    pub fn new(whitened: &WhitenedData, p1: &P1Spec, grid: &PhiGrid, standardized: bool) -> Result<Self> {
        let lmm = Lmm::new(whitened.data.clone())?;
        let info = lmm.effect_information(0.0, whitened.tau, &lmm.all_columns())?;
        let p = info.p();
        if p == 0 {
            return Err(Error::invalid("region has no SNPs"));
        }
        let log_prior = (0..=p).map(|k| log_prior_size(k, p, p1)).collect::<Result<Vec<_>>>()?;
        let unit = if standardized { whitened.tau.sqrt().recip() } else { 1.0 };
        Ok(FinemapModel {
            info,
            log_prior,
            scales: grid.phis.iter().map(|phi| phi * unit).collect(),
            ln_weights: grid.weights.iter().map(|w| w.ln()).collect(),
        })
    }

    pub fn p(&self) -> usize {
        self.info.p()
    }

    /// Grid-averaged `log₁₀ ABF` of `φ² diag(γ)`.
    pub fn log10_abf(&self, gamma: &[bool]) -> f64 {
        let idx = included(gamma);
        if idx.is_empty() {
            return 0.0;
        }
        let sub = self.info.subset(&idx);
        let spec = FactorSpectrum::from_parts(sub.precision, &sub.score);
        let terms: Vec<f64> = self.scales.iter().zip(&self.ln_weights).map(|(&c, &lw)| lw + spec.ln_abf(c)).collect();
        linalg::log_sum_exp(&terms) / LN_10
    }

    pub fn state(&self, gamma: Vec<bool>) -> InclusionState {
        let log10_abf = self.log10_abf(&gamma);
        let log_prior = self.log_prior[gamma.iter().filter(|&&g| g).count()];
        InclusionState { gamma, log_prior, log10_abf, log_post_score: log_prior + LN_10 * log10_abf }
    }
}

/// Proposal kinds of the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Add,
    Remove,
    Swap,
}

const MOVE_WEIGHTS: [f64; 3] = [0.4, 0.4, 0.2];

/// Probabilities of add, remove and swap from a model of size `k`, renormalized
/// over the moves that exist.
pub fn move_probabilities(k: usize, p: usize) -> [f64; 3] {
    let avail = [k < p, k > 0, k > 0 && k < p];
    let total: f64 = (0..3).filter(|&i| avail[i]).map(|i| MOVE_WEIGHTS[i]).sum();
    let mut out = [0.0; 3];
    for i in 0..3 {
        if avail[i] {
            out[i] = MOVE_WEIGHTS[i] / total;
        }
    }
    out
}

/// `ln q(from → to)`, or `None` when no single move connects the two states.
pub fn log_proposal(from: &[bool], to: &[bool]) -> Option<f64> {
    if from.len() != to.len() {
        return None;
    }
    let p = from.len();
    let k = from.iter().filter(|&&g| g).count();
    let gained = from.iter().zip(to).filter(|(a, b)| !**a && **b).count();
    let lost = from.iter().zip(to).filter(|(a, b)| **a && !**b).count();
    let probs = move_probabilities(k, p);
    let q = match (gained, lost) {
        (1, 0) => probs[0] / (p - k) as f64,
        (0, 1) => probs[1] / k as f64,
        (1, 1) => probs[2] / (k * (p - k)) as f64,
        _ => return None,
    };
    (q > 0.0).then(|| q.ln())
}

/// Metropolis-Hastings acceptance probability of `from → to`.
pub fn acceptance(from: &InclusionState, to: &InclusionState) -> f64 {
    match (log_proposal(&from.gamma, &to.gamma), log_proposal(&to.gamma, &from.gamma)) {
        (Some(fwd), Some(back)) => (to.log_post_score - from.log_post_score + back - fwd).exp().min(1.0),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct McmcConfig {
    pub n_burn: usize,
    pub n_keep: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Rows of the model table (most visited first).
    pub top_models: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { n_burn: 150_000, n_keep: 300_000, n_chains: 2, seed: 1, top_models: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub included: Vec<usize>,
    pub probability: f64,
    pub log10_abf: f64,
    pub log_post_score: f64,
}

#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub chain: usize,
    pub acceptance_rate: f64,
    pub pip: Vec<f64>,
    /// Batch-means Monte Carlo standard errors of `pip` (20 batches).
    pub pip_se: Vec<f64>,
    /// Every proposal after burn-in was rejected.
    pub all_rejected: bool,
}

#[derive(Debug, Clone)]
pub struct FinemapReport {
    pub pip: Vec<f64>,
    pub model_table: Vec<ModelEntry>,
    /// Posterior mass of models with `0..=p` SNPs.
    pub size_distribution: Vec<f64>,
    pub chains: Vec<ChainSummary>,
    pub n_kept: usize,
}

type Key = Vec<u64>;

const BATCHES: usize = 20;

fn key_of(gamma: &[bool]) -> Key {
    let mut key = vec![0u64; gamma.len().div_ceil(64)];
    for (i, &g) in gamma.iter().enumerate() {
        if g {
            key[i / 64] |= 1 << (i % 64);
        }
    }
    key
}

struct ChainRun {
    summary: ChainSummary,
    visits: HashMap<Key, (usize, InclusionState)>,
}

fn propose<R: Rng>(rng: &mut R, gamma: &[bool]) -> Vec<bool> {
    let p = gamma.len();
    let inc = included(gamma);
    let exc: Vec<usize> = (0..p).filter(|&i| !gamma[i]).collect();
    let probs = move_probabilities(inc.len(), p);
    let u: f64 = rng.random();
    let mv = if u < probs[0] {
        Move::Add
    } else if u < probs[0] + probs[1] {
        Move::Remove
    } else {
        Move::Swap
    };
    let mut next = gamma.to_vec();
    match mv {
        Move::Add => next[exc[rng.random_range(0..exc.len())]] = true,
        Move::Remove => next[inc[rng.random_range(0..inc.len())]] = false,
        Move::Swap => {
            next[inc[rng.random_range(0..inc.len())]] = false;
            next[exc[rng.random_range(0..exc.len())]] = true;
        }
    }
    next
}

fn run_chain(model: &FinemapModel, config: &McmcConfig, chain: usize) -> ChainRun {
    let p = model.p();
    let mut rng = stream_rng(config.seed, chain as u64);
    let mut cache: HashMap<Key, InclusionState> = HashMap::new();
    let mut current = model.state(vec![false; p]);
    cache.insert(key_of(&current.gamma), current.clone());
    let mut visits: HashMap<Key, (usize, InclusionState)> = HashMap::new();
    let mut counts = vec![0usize; p];
    let batches = BATCHES.min(config.n_keep);
    let batch_len = config.n_keep / batches;
    let mut batch_counts = vec![vec![0usize; p]; batches];
    let mut accepted = 0usize;
    for step in 0..config.n_burn + config.n_keep {
        let next = propose(&mut rng, &current.gamma);
        let proposal = cache.entry(key_of(&next)).or_insert_with(|| model.state(next)).clone();
        let a = acceptance(&current, &proposal);
        let take = a >= 1.0 || rng.random::<f64>() < a;
        if take {
            current = proposal;
        }
        if step >= config.n_burn {
            accepted += take as usize;
            let b = ((step - config.n_burn) / batch_len).min(batches - 1);
            for (j, &g) in current.gamma.iter().enumerate() {
                counts[j] += g as usize;
                batch_counts[b][j] += g as usize;
            }
            visits.entry(key_of(&current.gamma)).or_insert_with(|| (0, current.clone())).0 += 1;
        }
    }
    let kept = config.n_keep as f64;
    let pip: Vec<f64> = counts.iter().map(|&c| c as f64 / kept).collect();
    let pip_se = (0..p)
        .map(|j| {
            if batches < 2 {
                return f64::NAN;
            }
            let means: Vec<f64> = (0..batches)
                .map(|b| {
                    let len = if b + 1 == batches { config.n_keep - batch_len * (batches - 1) } else { batch_len };
                    batch_counts[b][j] as f64 / len as f64
                })
                .collect();
            crate::stats::sd(&means) / (batches as f64).sqrt()
        })
        .collect();
    ChainRun {
        summary: ChainSummary {
            chain,
            acceptance_rate: accepted as f64 / kept,
            pip,
            pip_se,
            all_rejected: accepted == 0,
        },
        visits,
    }
}

/// Runs `n_chains` independent chains from the empty model and pools their kept states.
pub fn mcmc_finemap(model: &FinemapModel, config: &McmcConfig) -> Result<FinemapReport> {
    if config.n_keep == 0 {
        return Err(Error::NoSamples);
    }
    if config.n_chains == 0 {
        return Err(Error::invalid("MCMC needs at least one chain"));
    }
    let runs: Vec<ChainRun> = (0..config.n_chains).into_par_iter().map(|c| run_chain(model, config, c)).collect();
    let p = model.p();
    let total = (config.n_keep * config.n_chains) as f64;
    let mut pooled: HashMap<Key, (usize, InclusionState)> = HashMap::new();
    for run in &runs {
        for (key, (count, state)) in &run.visits {
            pooled.entry(key.clone()).or_insert_with(|| (0, state.clone())).0 += count;
        }
    }
    let mut size_distribution = vec![0.0; p + 1];
    let mut entries: Vec<(Key, usize, InclusionState)> = pooled.into_iter().map(|(k, (c, s))| (k, c, s)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (_, c, s) in &entries {
        size_distribution[s.size()] += *c as f64 / total;
    }
    let model_table = entries
        .into_iter()
        .take(config.top_models)
        .map(|(_, c, s)| ModelEntry {
            included: s.included(),
            probability: c as f64 / total,
            log10_abf: s.log10_abf,
            log_post_score: s.log_post_score,
        })
        .collect();
    let chains: Vec<ChainSummary> = runs.into_iter().map(|r| r.summary).collect();
    let pip = (0..p).map(|j| chains.iter().map(|c| c.pip[j]).sum::<f64>() / chains.len() as f64).collect();
    Ok(FinemapReport { pip, model_table, size_distribution, chains, n_kept: config.n_keep * config.n_chains })
}

/// Exact posterior over all `2^p` inclusion vectors.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub states: Vec<InclusionState>,
    pub probabilities: Vec<f64>,
    pub pip: Vec<f64>,
}

impl ExactPosterior {
    /// Total variation distance to a model table, missing models counting as zero.
    pub fn total_variation(&self, table: &[ModelEntry]) -> f64 {
        let estimated: HashMap<&[usize], f64> = table.iter().map(|e| (e.included.as_slice(), e.probability)).collect();
        let incl: Vec<Vec<usize>> = self.states.iter().map(|s| s.included()).collect();
        let mut tv: f64 = incl
            .iter()
            .zip(&self.probabilities)
            .map(|(i, &p)| (p - estimated.get(i.as_slice()).copied().unwrap_or(0.0)).abs())
            .sum();
        let known: std::collections::HashSet<&[usize]> = incl.iter().map(|v| v.as_slice()).collect();
        tv += table.iter().filter(|e| !known.contains(e.included.as_slice())).map(|e| e.probability).sum::<f64>();
        0.5 * tv
    }
}

pub fn enumerate_posterior(model: &FinemapModel, max_p: usize) -> Result<ExactPosterior> {
    let p = model.p();
    if p > max_p || p >= 64 {
        return Err(Error::TooManyVariables { p, max: max_p.min(63) });
    }
    let states: Vec<InclusionState> = (0u64..1 << p)
        .into_par_iter()
        .map(|bits| model.state((0..p).map(|i| bits >> i & 1 == 1).collect()))
        .collect();
    let scores: Vec<f64> = states.iter().map(|s| s.log_post_score).collect();
    let norm = linalg::log_sum_exp(&scores);
    let probabilities: Vec<f64> = scores.iter().map(|s| (s - norm).exp()).collect();
    let mut pip = vec![0.0; p];
    for (s, &pr) in states.iter().zip(&probabilities) {
        for j in s.included() {
            pip[j] += pr;
        }
    }
    Ok(ExactPosterior { states, probabilities, pip })
}

/// Convenience: whiten, score and sample in one call.
pub fn finemap_region(
    data: &Dataset,
    null_fit: &VarianceFit,
    p1: &P1Spec,
    grid: &PhiGrid,
    config: &McmcConfig,
) -> Result<FinemapReport> {
    let w = whiten(data, null_fit)?;
    mcmc_finemap(&FinemapModel::new(&w, p1, grid, true)?, config)
}
