//! Data generation: block-LD genotypes, kinship-driven random effects and
//! phenotypes under the null and the rare-variant, common-variant and
//! prior-model alternatives.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::priors::{EffectPrior, PriorKind};

/// Correlation of the latent liabilities of two SNPs in one LD block.
pub const LD_CORRELATION: f64 = 0.7;

/// Seeded stream `stream` of the master seed; streams are independent of
/// thread scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Null,
    SignConsistent,
    SignMixed,
    CommonVariant,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Null => "null",
            Scenario::SignConsistent => "sign_consistent",
            Scenario::SignMixed => "sign_mixed",
            Scenario::CommonVariant => "common_variant",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_individuals: usize,
    pub n_sets: usize,
    pub snps_per_set: usize,
    pub null_fraction: f64,
    /// Weights of (SignConsistent, SignMixed, CommonVariant) among non-null sets.
    pub scenario_mix: [f64; 3],
    pub causal_fraction: f64,
    pub effect_c: f64,
    pub protective_fraction: f64,
    pub maf_range: (f64, f64),
    pub ld_block_size: usize,
    pub lambda_true: f64,
    pub tau_true: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    /// The small panel geometry: 200 sets of 100 SNPs on 500 individuals, 140 null.
    fn default() -> Self {
        SimConfig {
            n_individuals: 500,
            n_sets: 200,
            snps_per_set: 100,
            null_fraction: 0.7,
            scenario_mix: [0.5, 0.5, 0.0],
            causal_fraction: 0.2,
            effect_c: 0.1,
            protective_fraction: 0.4,
            maf_range: (0.001, 0.05),
            ld_block_size: 10,
            lambda_true: 0.0,
            tau_true: 1.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    /// Full-size geometry: 5,000 sets of 1,000 SNPs on 2,000 individuals, 3,500 null.
    pub fn full() -> Self {
        SimConfig { n_individuals: 2000, n_sets: 5000, snps_per_set: 1000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_individuals < 3 || self.snps_per_set == 0 || self.ld_block_size == 0 {
            return Err(Error::invalid("simulation needs n >= 3, at least one SNP per set and block size >= 1"));
        }
        if !(0.0..=1.0).contains(&self.null_fraction) {
            return Err(Error::invalid("null_fraction must lie in [0, 1]"));
        }
        if self.scenario_mix.iter().any(|&p| !(p >= 0.0)) || (self.scenario_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("scenario_mix must be a probability vector"));
        }
        if !(self.causal_fraction > 0.0 && self.causal_fraction <= 1.0) {
            return Err(Error::invalid("causal_fraction must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.protective_fraction) {
            return Err(Error::invalid("protective_fraction must lie in [0, 1]"));
        }
        let (lo, hi) = self.maf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::invalid(format!("maf_range ({lo}, {hi}) must lie inside (0, 0.5]")));
        }
        if !(self.lambda_true >= 0.0) || !(self.tau_true > 0.0) {
            return Err(Error::invalid("lambda_true must be >= 0 and tau_true > 0"));
        }
        Ok(())
    }
}

/// Dosages `n × p` in `{0, 1, 2}` with the target MAF of each column.
#[derive(Debug, Clone)]
pub struct Genotypes {
    pub dosages: DMatrix<f64>,
    pub mafs: Vec<f64>,
}

impl Genotypes {
    /// Sample minor-allele frequencies (the mean dosage over two).
    pub fn empirical_mafs(&self) -> Vec<f64> {
        self.dosages.column_iter().map(|c| c.mean() / 2.0).collect()
    }

    /// Empirical MAFs floored to the smallest frequency observable in `n` samples
    /// so that Beta weights stay defined for monomorphic columns.
    pub fn weight_mafs(&self) -> Vec<f64> {
        let n = self.dosages.nrows() as f64;
        self.empirical_mafs().into_iter().map(|m| m.min(1.0 - m).max(0.5 / n).min(0.5)).collect()
    }
}

/// Log-uniform MAF on `[lo, hi]`.
pub fn draw_maf<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Two haplotypes per individual; within an LD block the latent liabilities
/// share a common factor (pairwise correlation 0.7), each thresholded at its
/// MAF quantile.
pub fn simulate_genotypes<R: Rng>(rng: &mut R, n: usize, p: usize, maf_range: (f64, f64), ld_block_size: usize) -> Genotypes {
    let std_normal = Normal::standard();
    let mafs: Vec<f64> = (0..p).map(|_| draw_maf(rng, maf_range)).collect();
    let thresholds: Vec<f64> = mafs.iter().map(|&m| std_normal.inverse_cdf(1.0 - m)).collect();
    let block = ld_block_size.max(1);
    let (a, b) = if block == 1 { (0.0, 1.0) } else { (LD_CORRELATION.sqrt(), (1.0 - LD_CORRELATION).sqrt()) };
    let mut dosages = DMatrix::zeros(n, p);
    for i in 0..n {
        for _hap in 0..2 {
            let mut shared = 0.0;
            for j in 0..p {
                if j % block == 0 {
                    shared = rng.sample(StandardNormal);
                }
                let e: f64 = rng.sample(StandardNormal);
                if a * shared + b * e > thresholds[j] {
                    dosages[(i, j)] += 1.0;
                }
            }
        }
    }
    Genotypes { dosages, mafs }
}

pub fn simulate_covariate<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `y = 0.5 x + e`, `e ~ N(0, I)`.
pub fn simulate_null_phenotype<R: Rng>(rng: &mut R, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| 0.5 * x[i] + rng.sample::<f64, _>(StandardNormal))
}

/// Effect of a causal rare variant, `βⱼ = c |log₁₀ mⱼ|`.
pub fn rare_effect(maf: f64, c: f64) -> f64 {
    c * maf.log10().abs()
}

/// `(y, causal columns, effects)`.
pub type Alternative = (DVector<f64>, Vec<usize>, Vec<f64>);

pub fn simulate_rare_alternative<R: Rng>(
    rng: &mut R,
    genotypes: &Genotypes,
    x: &DVector<f64>,
    config: &SimConfig,
    scheme: Scenario,
) -> Result<Alternative> {
    let p = genotypes.mafs.len();
    let n_causal = ((config.causal_fraction * p as f64).ceil() as usize).clamp(1, p);
    let mut causal: Vec<usize> = sample(rng, p, n_causal).into_vec();
    causal.sort_unstable();
    let n_protective = match scheme {
        Scenario::SignConsistent => 0,
        Scenario::SignMixed => (config.protective_fraction * n_causal as f64).round() as usize,
        _ => return Err(Error::invalid("rare-variant alternative needs a sign-consistent or sign-mixed scheme")),
    };
    let protective: Vec<usize> = sample(rng, n_causal, n_protective).into_vec();
    let effects: Vec<f64> = (0..n_causal)
        .map(|k| {
            let c = if protective.contains(&k) { -config.effect_c.abs() } else { config.effect_c.abs() };
            rare_effect(genotypes.mafs[causal[k]], c)
        })
        .collect();
    let y = phenotype_with_effects(rng, &genotypes.dosages, x, &causal, &effects);
    Ok((y, causal, effects))
}

/// One to three SNPs with MAF ≥ 0.05 get `βᵢ ~ N(0, 1)`.
pub fn simulate_cv_alternative<R: Rng>(rng: &mut R, genotypes: &Genotypes, x: &DVector<f64>) -> Result<Alternative> {
    let common: Vec<usize> = (0..genotypes.mafs.len()).filter(|&j| genotypes.mafs[j] >= 0.05).collect();
    if common.is_empty() {
        return Err(Error::NoCommonVariant(0.05));
    }
    let size = rng.random_range(1..=3).min(common.len());
    let mut causal: Vec<usize> = sample(rng, common.len(), size).into_iter().map(|i| common[i]).collect();
    causal.sort_unstable();
    let effects: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
    let y = phenotype_with_effects(rng, &genotypes.dosages, x, &causal, &effects);
    Ok((y, causal, effects))
}

fn phenotype_with_effects<R: Rng>(rng: &mut R, g: &DMatrix<f64>, x: &DVector<f64>, causal: &[usize], effects: &[f64]) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let signal: f64 = causal.iter().zip(effects).map(|(&j, b)| b * g[(i, j)]).sum();
        0.5 * x[i] + signal + rng.sample::<f64, _>(StandardNormal)
    })
}

/// `y = 0.5 x + G β + e` with `β ~ N(0, W)` drawn from the prior model itself.
pub fn simulate_prior_alternative<R: Rng>(rng: &mut R, g: &DMatrix<f64>, x: &DVector<f64>, prior: &EffectPrior) -> Result<DVector<f64>> {
    if prior.p() != g.ncols() {
        return Err(Error::dims("prior dimension differs from genotype columns"));
    }
    let b = prior.factor(1.0)?;
    let z = DVector::from_fn(b.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = b * z;
    let signal = g * beta;
    Ok(DVector::from_fn(x.len(), |i, _| 0.5 * x[i] + signal[i] + rng.sample::<f64, _>(StandardNormal)))
}

/// `y = mean + u + e`, `u ~ N(0, λτ⁻¹K)`, `e ~ N(0, τ⁻¹I)`.
pub fn simulate_with_random_effect<R: Rng>(
    rng: &mut R,
    mean: &DVector<f64>,
    lambda: f64,
    tau: f64,
    k: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = mean.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::dims("kinship does not match the mean vector"));
    }
    if !(lambda >= 0.0) || !(tau > 0.0) {
        return Err(Error::invalid("lambda must be >= 0 and tau > 0"));
    }
    let tol = 1e-8 * crate::linalg::max_abs(k).max(1.0);
    let eig = crate::linalg::psd_eigen(k, tol).map_err(|min| Error::DegenerateKinship { min_eigenvalue: min })?;
    let z = DVector::from_fn(n, |i, _| eig.eigenvalues[i].sqrt() * rng.sample::<f64, _>(StandardNormal));
    let u = &eig.eigenvectors * z * (lambda / tau).sqrt();
    Ok(DVector::from_fn(n, |i, _| mean[i] + u[i] + rng.sample::<f64, _>(StandardNormal) / tau.sqrt()))
}

/// One simulated SNP set with its own phenotype.
#[derive(Debug, Clone)]
pub struct SimSet {
    pub set_id: String,
    pub genotypes: Genotypes,
    pub covariate: DVector<f64>,
    pub y: DVector<f64>,
    pub scenario: Scenario,
    pub causal: Vec<usize>,
}

impl SimSet {
    pub fn is_null(&self) -> bool {
        self.scenario == Scenario::Null
    }

    /// Covariates `[1, x]`.
    pub fn design(&self) -> DMatrix<f64> {
        let n = self.covariate.len();
        DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { self.covariate[i] })
    }
}

fn draw_scenario<R: Rng>(rng: &mut R, mix: &[f64; 3]) -> Scenario {
    let u: f64 = rng.random();
    let kinds = [Scenario::SignConsistent, Scenario::SignMixed, Scenario::CommonVariant];
    let mut acc = 0.0;
    for (k, &p) in kinds.iter().zip(mix) {
        acc += p;
        if u < acc {
            return *k;
        }
    }
    *kinds.iter().zip(mix).rev().find(|(_, &p)| p > 0.0).map(|(k, _)| k).unwrap_or(&Scenario::SignConsistent)
}

/// Set `index` of a panel: null for the first `round(null_fraction · n_sets)`
/// sets, otherwise a scenario drawn from the mix. Each set uses its own stream
/// so panels can be generated in parallel.
pub fn simulate_set(config: &SimConfig, index: usize) -> Result<SimSet> {
    let mut rng = stream_rng(config.seed, index as u64);
    let n_null = (config.null_fraction * config.n_sets as f64).round() as usize;
    let scenario = if index < n_null { Scenario::Null } else { draw_scenario(&mut rng, &config.scenario_mix) };
    let maf_range = if scenario == Scenario::CommonVariant { (config.maf_range.0, 0.5) } else { config.maf_range };
    let mut genotypes = simulate_genotypes(&mut rng, config.n_individuals, config.snps_per_set, maf_range, config.ld_block_size);
    if scenario == Scenario::CommonVariant && genotypes.mafs.iter().all(|&m| m < 0.05) {
        // guarantee the precondition of the common-variant model
        let j = rng.random_range(0..config.snps_per_set);
        let extra = simulate_genotypes(&mut rng, config.n_individuals, 1, (0.05, 0.5), 1);
        genotypes.dosages.column_mut(j).copy_from(&extra.dosages.column(0));
        genotypes.mafs[j] = extra.mafs[0];
    }
    let x = simulate_covariate(&mut rng, config.n_individuals);
    let (y, causal) = match scenario {
        Scenario::Null => (simulate_null_phenotype(&mut rng, &x), Vec::new()),
        Scenario::CommonVariant => {
            let (y, c, _) = simulate_cv_alternative(&mut rng, &genotypes, &x)?;
            (y, c)
        }
        s => {
            let (y, c, _) = simulate_rare_alternative(&mut rng, &genotypes, &x, config, s)?;
            (y, c)
        }
    };
    Ok(SimSet { set_id: format!("set{:05}", index + 1), genotypes, covariate: x, y, scenario, causal })
}

pub fn simulate_panel(config: &SimConfig) -> Result<Vec<SimSet>> {
    config.validate()?;
    (0..config.n_sets).into_par_iter().map(|i| simulate_set(config, i)).collect()
}

/// Panel for recovering mixture weights: each non-null set draws its effects
/// from the burden (probability `pi_burden`) or SKAT prior with unit weights.
pub fn simulate_prior_panel(
    seed: u64,
    n_sets: usize,
    n: usize,
    p: usize,
    null_fraction: f64,
    pi_burden: f64,
    phi: f64,
) -> Result<Vec<(SimSet, Option<PriorKind>)>> {
    (0..n_sets)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let genotypes = simulate_genotypes(&mut rng, n, p, (0.05, 0.5), 1);
            let x = simulate_covariate(&mut rng, n);
            let is_null = (i as f64) < null_fraction * n_sets as f64;
            let kind = if is_null {
                None
            } else if rng.random::<f64>() < pi_burden {
                Some(PriorKind::Burden)
            } else {
                Some(PriorKind::Skat)
            };
            let y = match &kind {
                None => simulate_null_phenotype(&mut rng, &x),
                Some(k) => {
                    let w = DVector::from_element(p, 1.0 / p as f64);
                    let prior = EffectPrior::new(k.clone(), w, phi, false)?;
                    simulate_prior_alternative(&mut rng, &genotypes.dosages, &x, &prior)?
                }
            };
            let scenario = match kind {
                None => Scenario::Null,
                Some(PriorKind::Burden) => Scenario::SignConsistent,
                _ => Scenario::SignMixed,
            };
            let set = SimSet { set_id: format!("set{:05}", i + 1), genotypes, covariate: x, y, scenario, causal: (0..p).collect() };
            Ok((set, kind))
        })
        .collect()
}

/// Dosages for `n` individuals grouped into lines of `line_size`: within a
/// line each genotype is copied from the line founder with probability
/// `copy_prob`, otherwise drawn afresh. Founders and fresh draws are
/// Hardy-Weinberg at a log-uniform MAF on `maf_range`.
pub fn simulate_structured_genotypes<R: Rng>(
    rng: &mut R,
    n: usize,
    p: usize,
    line_size: usize,
    copy_prob: f64,
    maf_range: (f64, f64),
) -> Genotypes {
    let mafs: Vec<f64> = (0..p).map(|_| draw_maf(rng, maf_range)).collect();
    let draw = |rng: &mut R, m: f64| (rng.random::<f64>() < m) as u8 as f64 + (rng.random::<f64>() < m) as u8 as f64;
    let line_size = line_size.max(1);
    let mut dosages = DMatrix::zeros(n, p);
    for j in 0..p {
        let mut founder = 0.0;
        for i in 0..n {
            if i % line_size == 0 {
                founder = draw(rng, mafs[j]);
            }
            dosages[(i, j)] = if rng.random::<f64>() < copy_prob { founder } else { draw(rng, mafs[j]) };
        }
    }
    Genotypes { dosages, mafs }
}

/// Genome-wide style data on a population of related lines: `n_snps` scanned
/// SNPs, kinship estimated from `n_background` further SNPs, `n_causal`
/// scanned SNPs with effects drawn from `N(0, effect_sd²)` and a polygenic
/// random effect with parameters `(lambda, tau)`.
#[derive(Debug, Clone)]
pub struct GwasSim {
    pub genotypes: Genotypes,
    pub kinship: DMatrix<f64>,
    pub y: DVector<f64>,
    pub causal: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct GwasConfig {
    pub n: usize,
    pub n_snps: usize,
    pub n_background: usize,
    pub n_causal: usize,
    pub effect_sd: f64,
    pub lambda: f64,
    pub tau: f64,
    pub line_size: usize,
    pub copy_prob: f64,
    pub seed: u64,
}

impl Default for GwasConfig {
    fn default() -> Self {
        GwasConfig {
            n: 336,
            n_snps: 500,
            n_background: 2000,
            n_causal: 10,
            effect_sd: 0.3,
            lambda: 1.0,
            tau: 1.0,
            line_size: 4,
            copy_prob: 0.85,
            seed: 1,
        }
    }
}

pub fn simulate_gwas(config: &GwasConfig) -> Result<GwasSim> {
    let c = config;
    if c.n < 3 || c.n_snps == 0 || c.n_background == 0 || !(0.0..=1.0).contains(&c.copy_prob) {
        return Err(Error::invalid("GWAS simulation needs n >= 3, SNPs on both panels and copy_prob in [0, 1]"));
    }
    let mut rng = stream_rng(c.seed, 0);
    let background = simulate_structured_genotypes(&mut rng, c.n, c.n_background, c.line_size, c.copy_prob, (0.05, 0.5));
    let kinship = crate::kinship::estimate_kinship(&background.dosages)?;
    let genotypes = simulate_structured_genotypes(&mut rng, c.n, c.n_snps, c.line_size, c.copy_prob, (0.05, 0.5));
    let mut causal: Vec<usize> = sample(&mut rng, c.n_snps, c.n_causal.min(c.n_snps)).into_vec();
    causal.sort_unstable();
    let mut mean = DVector::zeros(c.n);
    for &j in &causal {
        let b = c.effect_sd * rng.sample::<f64, _>(StandardNormal);
        mean += genotypes.dosages.column(j) * b;
    }
    let y = simulate_with_random_effect(&mut rng, &mean, c.lambda, c.tau, &kinship)?;
    Ok(GwasSim { genotypes, kinship, y, causal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, pearson, sd};

    #[test]
    fn rare_effect_examples() {
        assert!((rare_effect(0.1, 0.1) - 0.1).abs() < 1e-15);
        assert!((rare_effect(0.01, -0.1) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn marginal_maf_matches_target() {
        let mut rng = stream_rng(1, 0);
        let g = simulate_genotypes(&mut rng, 10_000, 1, (0.25, 0.25), 1);
        let maf = g.empirical_mafs()[0];
        assert!((maf - 0.25).abs() < 0.01, "{maf}");
    }

    #[test]
    fn independence_without_blocks_and_ld_within_blocks() {
        let mut rng = stream_rng(2, 0);
        let g = simulate_genotypes(&mut rng, 10_000, 2, (0.3, 0.3), 1);
        let c = pearson(g.dosages.column(0).as_slice(), g.dosages.column(1).as_slice());
        // 4 standard errors at n = 10⁴
        assert!(c.abs() < 0.04, "{c}");
        let g = simulate_genotypes(&mut rng, 10_000, 2, (0.3, 0.3), 2);
        let c = pearson(g.dosages.column(0).as_slice(), g.dosages.column(1).as_slice());
        assert!(c > 0.3, "{c}");
    }

    #[test]
    fn null_phenotype_moments() {
        let mut rng = stream_rng(3, 0);
        let n = 10_000;
        let x = simulate_covariate(&mut rng, n);
        let y = simulate_null_phenotype(&mut rng, &x);
        let v = sd(y.as_slice()).powi(2);
        assert!((v - 1.25).abs() < 4.0 * 1.25 * (2.0 / n as f64).sqrt());
        assert!(mean(y.as_slice()).abs() < 4.0 * (1.25 / n as f64).sqrt());
        let xm = x.mean();
        let ym = y.mean();
        let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - xm) * (b - ym)).sum();
        let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
        assert!((sxy / sxx - 0.5).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn rare_alternative_counts_and_signs() {
        let mut rng = stream_rng(4, 0);
        let g = simulate_genotypes(&mut rng, 100, 50, (0.001, 0.05), 5);
        let x = simulate_covariate(&mut rng, 100);
        let cfg = SimConfig::default();
        let (_, causal, effects) = simulate_rare_alternative(&mut rng, &g, &x, &cfg, Scenario::SignMixed).unwrap();
        assert_eq!(causal.len(), 10);
        assert_eq!(effects.iter().filter(|&&b| b < 0.0).count(), 4);
        let (_, _, effects) = simulate_rare_alternative(&mut rng, &g, &x, &cfg, Scenario::SignConsistent).unwrap();
        assert!(effects.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn cv_alternative_requires_common_snp() {
        let mut rng = stream_rng(5, 0);
        let g = simulate_genotypes(&mut rng, 50, 10, (0.001, 0.01), 1);
        let x = simulate_covariate(&mut rng, 50);
        assert!(matches!(simulate_cv_alternative(&mut rng, &g, &x), Err(Error::NoCommonVariant(_))));
        let g = simulate_genotypes(&mut rng, 50, 10, (0.1, 0.5), 1);
        let (_, causal, _) = simulate_cv_alternative(&mut rng, &g, &x).unwrap();
        assert!((1..=3).contains(&causal.len()));
        assert!(causal.iter().all(|&j| g.mafs[j] >= 0.05));
    }

    #[test]
    fn random_effect_variance_identity() {
        let mut rng = stream_rng(6, 0);
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (lambda, tau) = (2.0, 4.0);
        let reps = 20_000;
        let mut s = vec![0.0; reps];
        for r in s.iter_mut() {
            *r = simulate_with_random_effect(&mut rng, &DVector::zeros(2), lambda, tau, &k).unwrap()[0];
        }
        let target = lambda / tau + 1.0 / tau;
        let v = sd(&s).powi(2);
        assert!((v - target).abs() < 4.0 * target * (2.0 / reps as f64).sqrt());
        let iid = simulate_with_random_effect(&mut rng, &DVector::zeros(2), 0.0, 1.0, &k).unwrap();
        assert!(iid.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn panels_are_seed_deterministic() {
        let cfg = SimConfig { n_sets: 6, snps_per_set: 8, n_individuals: 30, scenario_mix: [0.3, 0.3, 0.4], ..SimConfig::default() };
        let a = simulate_panel(&cfg).unwrap();
        let b = simulate_panel(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.y, y.y);
            assert_eq!(x.genotypes.dosages, y.genotypes.dosages);
            assert_eq!(x.scenario, y.scenario);
        }
        assert!(a[..4].iter().all(|s| s.is_null()));
    }
}
