//! SNP-set Bayes factors (burden, SKAT, common-variant average), their model
//! averages and EM estimation of the mixture weights across many sets.

use std::f64::consts::LN_10;

use crate::abf::{abf_phi_grid, abf_scalar_grid, Anchor};
use crate::error::{Error, Result};
use crate::linalg;
use crate::fdr::{bayes_fdr, DiscoverySet};
use crate::lmm::{Dataset, Lmm, VarianceFit};
use crate::priors::{snp_weights, EffectPrior, PhiGrid, PriorKind};

/// How component BFs are computed for every set.
#[derive(Debug, Clone)]
pub struct SetTestConfig {
    pub kappa: f64,
    pub grid: PhiGrid,
    /// Divide `W` by `τ̌`.
    pub standardized: bool,
}

impl Default for SetTestConfig {
    fn default() -> Self {
        SetTestConfig { kappa: 0.0, grid: PhiGrid::default(), standardized: true }
    }
}

/// Grid-averaged component BFs of one set, on the log₁₀ scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetComponents {
    pub burden: f64,
    pub skat: f64,
    pub cv: f64,
}

impl SetComponents {
    pub fn as_array(&self) -> [f64; 3] {
        [self.burden, self.skat, self.cv]
    }
}

#[derive(Debug, Clone)]
pub struct SetBfRecord {
    pub set_id: String,
    pub log10_bf_burden: f64,
    pub log10_bf_skat: f64,
    pub log10_bf_cv: f64,
    pub log10_bf_combined: f64,
    pub pis_used: [f64; 3],
}

impl SetBfRecord {
    pub fn new(set_id: impl Into<String>, c: SetComponents, pis: [f64; 3]) -> Result<Self> {
        Ok(SetBfRecord {
            set_id: set_id.into(),
            log10_bf_burden: c.burden,
            log10_bf_skat: c.skat,
            log10_bf_cv: c.cv,
            log10_bf_combined: bf_three_way(&c, pis)?,
            pis_used: pis,
        })
    }
}

fn anchor_for(lmm: &Lmm, null_fit: &VarianceFit, kappa: f64, cols: &[usize]) -> Result<Anchor> {
    if kappa == 0.0 {
        Anchor::null(lmm, null_fit, cols)
    } else {
        Anchor::fit(lmm, kappa, cols)
    }
}

/// `log₁₀[(1/p) Σᵢ BF(Wᵢ)]` over the single-SNP models of the set, each via the
/// scalar formula and averaged over the φ grid.
pub fn bf_cv(lmm: &Lmm, null_fit: &VarianceFit, cols: &[usize], config: &SetTestConfig) -> Result<f64> {
    if cols.is_empty() {
        return Err(Error::invalid("empty SNP set"));
    }
    let mut per_snp = Vec::with_capacity(cols.len());
    for &c in cols {
        let a = anchor_for(lmm, null_fit, config.kappa, &[c])?;
        per_snp.push(single_snp_log10(&a, &config.grid, config.standardized));
    }
    Ok(linalg::log10_mean(&per_snp))
}

/// Grid-averaged scalar ABF of a 1-column anchor. A column with no information
/// (e.g. monomorphic) gives BF = 1.
pub fn single_snp_log10(anchor: &Anchor, grid: &PhiGrid, standardized: bool) -> f64 {
    let prec = anchor.info.precision[(0, 0)];
    if !(prec > 1e-12 * anchor.tau) {
        return 0.0;
    }
    let v = 1.0 / prec;
    let beta = anchor.info.score[0] * v;
    abf_scalar_grid(beta, v, anchor.tau, grid, standardized)
}

/// Burden, SKAT and CV BFs for one set. `mafs` drive the Beta(1, 25) weights,
/// renormalized to sum to one.
pub fn set_components(
    lmm: &Lmm,
    null_fit: &VarianceFit,
    cols: &[usize],
    mafs: &[f64],
    config: &SetTestConfig,
) -> Result<SetComponents> {
    if cols.is_empty() {
        return Err(Error::invalid("empty SNP set"));
    }
    if mafs.len() != cols.len() {
        return Err(Error::dims(format!("{} MAFs for {} SNPs", mafs.len(), cols.len())));
    }
    let w = snp_weights(mafs, true)?;
    let anchor = anchor_for(lmm, null_fit, config.kappa, cols)?;
    let burden = EffectPrior::new(PriorKind::Burden, w.clone(), 1.0, config.standardized)?;
    let skat = EffectPrior::new(PriorKind::Skat, w, 1.0, config.standardized)?;
    Ok(SetComponents {
        burden: abf_phi_grid(&anchor, &burden, &config.grid)?,
        skat: abf_phi_grid(&anchor, &skat, &config.grid)?,
        cv: bf_cv(lmm, null_fit, cols, config)?,
    })
}

/// `log₁₀[π BF_burden + (1-π) BF_skat]`.
pub fn bf_two_way(log10_burden: f64, log10_skat: f64, pi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::invalid(format!("pi must lie in [0, 1], got {pi}")));
    }
    Ok(linalg::log10_weighted_mean(&[log10_burden, log10_skat], &[pi, 1.0 - pi]))
}

/// `log₁₀[π_b BF_burden + π_s BF_skat + π_c BF_cv]`.
pub fn bf_three_way(c: &SetComponents, pis: [f64; 3]) -> Result<f64> {
    check_probability(&pis)?;
    Ok(linalg::log10_weighted_mean(&c.as_array(), &pis))
}

fn check_probability(pis: &[f64]) -> Result<()> {
    if pis.iter().any(|&p| !(p >= 0.0)) || (pis.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("mixture weights {pis:?} are not a probability vector")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub estimate_p0: bool,
    pub estimate_pis: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { estimate_p0: true, estimate_pis: true, max_iter: 1000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub p0: f64,
    pub pis: Vec<f64>,
    /// Per set: posterior probability of the null followed by each component.
    pub posteriors: Vec<Vec<f64>>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The data carry no information on `π` (identical BFs across components).
    pub flat: bool,
}

const CLAMP: f64 = 1e-3;

/// Maximizes `Σₛ ln[p₀ + (1-p₀) Σₖ πₖ BFₛₖ]` by EM over latent null/component
/// indicators. `log10_bfs[s][k]` is the log₁₀ BF of component `k` in set `s`.
pub fn em_estimate_weights(log10_bfs: &[Vec<f64>], p0_init: f64, pis_init: &[f64], config: &EmConfig) -> Result<EmResult> {
    let s_count = log10_bfs.len();
    let k = pis_init.len();
    if s_count == 0 {
        return Err(Error::invalid("EM needs at least one set"));
    }
    if k < 2 {
        return Err(Error::invalid("EM needs at least 2 components"));
    }
    if log10_bfs.iter().any(|row| row.len() != k) {
        return Err(Error::dims(format!("every set needs {k} component BFs")));
    }
    if log10_bfs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("component Bayes factors".into()));
    }
    if !(0.0..=1.0).contains(&p0_init) || (config.estimate_p0 && (p0_init == 0.0 || p0_init == 1.0)) {
        return Err(Error::invalid(format!("p0 must lie in (0, 1) when estimated, got {p0_init}")));
    }
    check_probability(pis_init)?;

    let ln_bf: Vec<Vec<f64>> = log10_bfs.iter().map(|r| r.iter().map(|v| v * LN_10).collect()).collect();
    // a single set cannot separate p0 from the mixture weights
    let flat = s_count == 1
        || ln_bf.iter().all(|r| r.iter().all(|&v| (v - r[0]).abs() <= 1e-12 * r[0].abs().max(1.0)));
    let estimate_pis = config.estimate_pis && !flat;
    let estimate_p0 = config.estimate_p0 && s_count > 1;

    let mut p0 = p0_init;
    let mut pis = pis_init.to_vec();
    // a zero initial weight would stay zero forever
    if estimate_pis {
        for p in pis.iter_mut() {
            *p = p.max(CLAMP);
        }
        let t: f64 = pis.iter().sum();
        pis.iter_mut().for_each(|p| *p /= t);
    }

    let mut trace = Vec::new();
    let mut posteriors = vec![vec![0.0; k + 1]; s_count];
    let mut converged = false;
    let mut iterations = 0;
    let mut last = f64::NEG_INFINITY;
    for iter in 0..=config.max_iter {
        let ll = e_step(&ln_bf, p0, &pis, &mut posteriors);
        trace.push(ll);
        if ll - last < config.tol && iter > 0 {
            converged = true;
            iterations = iter;
            break;
        }
        last = ll;
        iterations = iter;
        if iter == config.max_iter || (!estimate_p0 && !estimate_pis) {
            converged = !estimate_p0 && !estimate_pis;
            break;
        }
        if estimate_p0 {
            p0 = posteriors.iter().map(|z| z[0]).sum::<f64>() / s_count as f64;
        }
        if estimate_pis {
            let mut totals = vec![0.0; k];
            for z in &posteriors {
                for j in 0..k {
                    totals[j] += z[j + 1];
                }
            }
            let t: f64 = totals.iter().sum();
            if t > 0.0 {
                for j in 0..k {
                    pis[j] = totals[j] / t;
                }
            }
        }
    }

    if estimate_p0 {
        p0 = p0.clamp(CLAMP, 1.0 - CLAMP);
    }
    if estimate_pis {
        for p in pis.iter_mut() {
            *p = p.clamp(CLAMP, 1.0 - CLAMP);
        }
        let t: f64 = pis.iter().sum();
        pis.iter_mut().for_each(|p| *p /= t);
    }
    e_step(&ln_bf, p0, &pis, &mut posteriors);
    Ok(EmResult { p0, pis, posteriors, loglik_trace: trace, iterations, converged, flat })
}

/// Fills the membership posteriors and returns the observed-data log-likelihood.
fn e_step(ln_bf: &[Vec<f64>], p0: f64, pis: &[f64], out: &mut [Vec<f64>]) -> f64 {
    let ln_p0 = p0.ln();
    let ln_p1 = (1.0 - p0).ln();
    let mut ll = 0.0;
    let mut terms = vec![0.0; pis.len() + 1];
    for (row, z) in ln_bf.iter().zip(out.iter_mut()) {
        terms[0] = ln_p0;
        for j in 0..pis.len() {
            terms[j + 1] = ln_p1 + pis[j].ln() + row[j];
        }
        let lse = linalg::log_sum_exp(&terms);
        ll += lse;
        for (zi, t) in z.iter_mut().zip(&terms) {
            *zi = (t - lse).exp();
        }
    }
    ll
}

/// Component BFs of a dataset whose effect columns form one set, with its own null fit.
pub fn dataset_components(data: Dataset, mafs: &[f64], config: &SetTestConfig) -> Result<SetComponents> {
    let lmm = Lmm::new(data)?;
    let fit = lmm.fit_null()?;
    set_components(&lmm, &fit, &lmm.all_columns(), mafs, config)
}

/// Mixture weights used before FDR control: fixed (`π = 0.5` two-way, uniform
/// three-way) or estimated by EM. The null proportion is estimated by EM in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Fixed,
    Estimated,
}

#[derive(Debug, Clone)]
pub struct SetAnalysis {
    pub records: Vec<SetBfRecord>,
    pub em: EmResult,
    pub discoveries: DiscoverySet,
}

/// Combined BFs, mixture weights and discoveries at level `alpha` for a panel.
/// The two-way model uses burden and SKAT only.
pub fn analyze_sets(
    ids: &[String],
    components: &[SetComponents],
    three_way: bool,
    weighting: Weighting,
    alpha: f64,
) -> Result<SetAnalysis> {
    if ids.len() != components.len() {
        return Err(Error::dims(format!("{} set ids for {} component rows", ids.len(), components.len())));
    }
    let k = if three_way { 3 } else { 2 };
    let bfs: Vec<Vec<f64>> = components.iter().map(|c| c.as_array()[..k].to_vec()).collect();
    let init = vec![1.0 / k as f64; k];
    let config = EmConfig { estimate_pis: weighting == Weighting::Estimated, ..EmConfig::default() };
    let em = em_estimate_weights(&bfs, 0.5, &init, &config)?;
    let mut pis = [0.0; 3];
    pis[..k].copy_from_slice(&em.pis);
    let records = ids
        .iter()
        .zip(components)
        .map(|(id, c)| SetBfRecord::new(id.clone(), *c, pis))
        .collect::<Result<Vec<_>>>()?;
    let combined: Vec<f64> = records.iter().map(|r| r.log10_bf_combined).collect();
    let discoveries = bayes_fdr(&combined, em.p0, alpha)?;
    Ok(SetAnalysis { records, em, discoveries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::Rng;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn comps(a: f64, b: f64, c: f64) -> SetComponents {
        SetComponents { burden: a, skat: b, cv: c }
    }

    #[test]
    fn two_way_endpoints() {
        assert_eq!(bf_two_way(3.0, -1.0, 1.0).unwrap(), 3.0);
        assert!((bf_two_way(2.5, 2.5, 0.5).unwrap() - 2.5).abs() < 1e-14);
        let (a, b, pi) = (1.3_f64, 0.2_f64, 0.3);
        let direct = (pi * 10f64.powf(a) + (1.0 - pi) * 10f64.powf(b)).log10();
        assert!((bf_two_way(a, b, pi).unwrap() - direct).abs() < 1e-12);
        assert!(bf_two_way(1.0, 1.0, 1.2).is_err());
    }

    #[test]
    fn three_way_cv_only_and_sum() {
        let c = comps(1.0, 2.0, 0.7);
        assert_eq!(bf_three_way(&c, [0.0, 0.0, 1.0]).unwrap(), 0.7);
        let pis = [0.2, 0.5, 0.3];
        let direct = (0.2 * 10f64.powf(1.0) + 0.5 * 100.0 + 0.3 * 10f64.powf(0.7)).log10();
        assert!((bf_three_way(&c, pis).unwrap() - direct).abs() < 1e-12);
        assert!(bf_three_way(&c, [0.5, 0.5, 0.5]).is_err());
    }

    fn small_panel(rng: &mut Rng, n: usize, p: usize, signal: Option<usize>) -> (Lmm, VarianceFit) {
        let g = DMatrix::from_fn(n, p, |_, _| rng.normal());
        let y = DVector::from_fn(n, |i, _| signal.map_or(0.0, |j| 1.2 * g[(i, j)]) + rng.normal());
        let data = crate::Dataset::new(y, crate::Dataset::intercept(n), g, None).unwrap();
        let lmm = Lmm::new(data).unwrap();
        let fit = lmm.fit_null().unwrap();
        (lmm, fit)
    }

    #[test]
    fn cv_single_snp_equals_its_bf() {
        let mut rng = Rng::new(1);
        let (lmm, fit) = small_panel(&mut rng, 80, 3, Some(1));
        let cfg = SetTestConfig::default();
        let a = Anchor::null(&lmm, &fit, &[1]).unwrap();
        let single = single_snp_log10(&a, &cfg.grid, cfg.standardized);
        assert!((bf_cv(&lmm, &fit, &[1], &cfg).unwrap() - single).abs() < 1e-14);
        assert!(bf_cv(&lmm, &fit, &[], &cfg).is_err());
    }

    #[test]
    fn cv_with_strong_signal_matches_compensated_sum() {
        let mut rng = Rng::new(2);
        let (lmm, fit) = small_panel(&mut rng, 150, 5, Some(2));
        let cfg = SetTestConfig::default();
        let cols = [0, 1, 2, 3, 4];
        let per: Vec<f64> = cols
            .iter()
            .map(|&c| single_snp_log10(&Anchor::null(&lmm, &fit, &[c]).unwrap(), &cfg.grid, true))
            .collect();
        let top = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
        for x in &per {
            let t = 10f64.powf(x - top) / 5.0;
            let s = sum + t;
            comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
            sum = s;
        }
        let oracle = top + (sum + comp).log10();
        assert!((bf_cv(&lmm, &fit, &cols, &cfg).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn permutation_within_set_is_invariant() {
        let mut rng = Rng::new(3);
        let (lmm, fit) = small_panel(&mut rng, 100, 4, Some(0));
        let cfg = SetTestConfig::default();
        let mafs = [0.01, 0.02, 0.03, 0.04];
        let a = set_components(&lmm, &fit, &[0, 1, 2, 3], &mafs, &cfg).unwrap();
        let b = set_components(&lmm, &fit, &[2, 0, 3, 1], &[0.03, 0.01, 0.04, 0.02], &cfg).unwrap();
        for (x, y) in a.as_array().iter().zip(b.as_array()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn em_flat_when_all_bfs_are_one() {
        let bfs = vec![vec![0.0, 0.0, 0.0]; 5];
        let r = em_estimate_weights(&bfs, 0.5, &[0.2, 0.3, 0.5], &EmConfig::default()).unwrap();
        assert!(r.flat);
        assert_eq!(r.pis, vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn em_dominated_component_hits_clamp() {
        let bfs = vec![vec![6.0, 0.0], vec![6.0, 0.0]];
        let cfg = EmConfig { estimate_p0: false, ..EmConfig::default() };
        let r = em_estimate_weights(&bfs, 0.0, &[0.5, 0.5], &cfg).unwrap();
        assert!((r.pis[0] - (1.0 - 1e-3)).abs() < 1e-12);
        assert!((r.pis[1] - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn em_single_set_is_flat() {
        let r = em_estimate_weights(&[vec![1.0, 2.0]], 0.5, &[0.3, 0.7], &EmConfig::default()).unwrap();
        assert!(r.flat);
        assert_eq!((r.p0, r.pis.clone()), (0.5, vec![0.3, 0.7]));
    }

    #[test]
    fn em_rejects_bad_input() {
        assert!(em_estimate_weights(&[], 0.5, &[0.5, 0.5], &EmConfig::default()).is_err());
        let bad = vec![vec![f64::NAN, 1.0], vec![0.0, 1.0]];
        assert!(matches!(
            em_estimate_weights(&bad, 0.5, &[0.5, 0.5], &EmConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    proptest! {
        #[test]
        fn combination_within_component_bounds(a in -5.0f64..50.0, b in -5.0f64..50.0, c in -5.0f64..50.0,
                                                x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let (u, v) = (x.min(y), x.max(y));
            let pis = [u, v - u, 1.0 - v];
            let t = pis.iter().sum::<f64>();
            let pis = [pis[0] / t, pis[1] / t, 1.0 - pis[0] / t - pis[1] / t];
            let m = bf_three_way(&comps(a, b, c), pis).unwrap();
            prop_assert!(m >= a.min(b).min(c) - 1e-12 && m <= a.max(b).max(c) + 1e-12);
        }

        #[test]
        fn em_loglik_is_monotone(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let bfs: Vec<Vec<f64>> = (0..30)
                .map(|_| (0..3).map(|_| if rng.uniform() < 0.4 { 4.0 * rng.uniform() } else { -rng.uniform() }).collect())
                .collect();
            let r = em_estimate_weights(&bfs, 0.5, &[1.0 / 3.0; 3], &EmConfig::default()).unwrap();
            for w in r.loglik_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-10);
            }
        }
    }
}
