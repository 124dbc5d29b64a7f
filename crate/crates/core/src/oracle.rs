//! Bayes factors by numerical integration under `p(λ, τ) ∝ 1/(λτ)`, used to
//! check the analytic approximation.
//!
//! With the standardized prior `β ~ N(0, τ⁻¹Φ)` and a flat prior on `α`, the
//! marginal covariance is `τ⁻¹Ω(λ)` with `Ω = Σ(λ) + GΦGᵀ`. Integrating `α` and
//! then `τ` (shape `a = (n - q)/2`) gives, up to a constant shared by both
//! models,
//!
//! ```text
//! m(λ) = |Ω|^{-1/2} |XᵀΩ⁻¹X|^{-1/2} Γ(a) (R/2)^{-a},
//! R = yᵀΩ⁻¹y - yᵀΩ⁻¹X (XᵀΩ⁻¹X)⁻¹ XᵀΩ⁻¹y.
//! ```
//!
//! The `1/λ` prior is integrated as `d ln λ` over a truncated range and the
//! Bayes factor is the ratio of the two integrals.

use std::f64::consts::LN_10;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::abf::{abf_phi_grid, Anchor};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lmm::{Dataset, Lmm, Spectrum};
use crate::priors::{EffectPrior, PhiGrid, PriorKind};
use crate::settest::single_snp_log10;
use crate::stats::median;

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Bounds on `ln λ`.
    pub ln_lambda_bounds: (f64, f64),
    /// Relative tolerance of the adaptive Simpson rule.
    pub quad_tol: f64,
    pub initial_panels: usize,
    pub max_depth: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { ln_lambda_bounds: (-8.0, 8.0), quad_tol: 1e-6, initial_panels: 32, max_depth: 40 }
    }
}

/// Data rotated once by the kinship eigenvectors; `Z = [X G y]`.
pub struct MarginalModel {
    spectrum: Spectrum,
    z: DMatrix<f64>,
    n: usize,
    q: usize,
    p: usize,
}

impl MarginalModel {
    pub fn new(data: &Dataset) -> Result<Self> {
        let spectrum = Spectrum::new(data.kinship(), data.n())?;
        Ok(Self::with_spectrum(data, spectrum))
    }

    pub fn with_spectrum(data: &Dataset, spectrum: Spectrum) -> Self {
        let (n, q, p) = (data.n(), data.q(), data.p());
        let mut z = DMatrix::zeros(n, q + p + 1);
        z.columns_mut(0, q).copy_from(data.x());
        z.columns_mut(q, p).copy_from(data.g());
        z.column_mut(q + p).copy_from(data.y());
        let z = spectrum.rotate(&z);
        MarginalModel { spectrum, z, n, q, p }
    }

    /// `[X G y]ᵀ Σ(λ)⁻¹ [X G y]`.
    fn weighted_gram(&self, lambda: f64) -> DMatrix<f64> {
        let w = self.spectrum.weights(lambda);
        let mut zw = self.z.clone();
        for (i, mut row) in zw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        self.z.tr_mul(&zw)
    }

    /// `ln |Ω|` and `R` at `λ` for the factor `Φ = B Bᵀ` (an empty `B` is the null).
    fn omega_parts(&self, lambda: f64, b: &DMatrix<f64>) -> Result<(f64, f64, f64)> {
        let (q, p) = (self.q, self.p);
        let s = self.weighted_gram(lambda);
        let yi = q + p;
        let sxx = s.view((0, 0), (q, q)).into_owned();
        let sxy = s.view((0, yi), (q, 1)).into_owned();
        let syy = s[(yi, yi)];
        let mut log_det = self.spectrum.log_det(lambda);
        let (axx, axy, ayy) = if b.ncols() == 0 {
            (sxx, sxy, syy)
        } else {
            let sgg = s.view((q, q), (p, p)).into_owned();
            let sxg = s.view((0, q), (q, p)).into_owned();
            let sgy = s.view((q, yi), (p, 1)).into_owned();
            let r = b.ncols();
            let h = DMatrix::identity(r, r) + b.transpose() * &sgg * b;
            let chol = h.cholesky().ok_or_else(|| Error::OracleFailure("I + BᵀGᵀΣ⁻¹GB not positive definite".into()))?;
            log_det += 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let xb = &sxg * b;
            let yb = sgy.transpose() * b;
            let hx = chol.solve(&xb.transpose());
            let hy = chol.solve(&yb.transpose());
            (&sxx - &xb * &hx, &sxy - &xb * &hy, syy - (&yb * &hy)[(0, 0)])
        };
        let chol = axx.cholesky().ok_or(Error::SingularDesign)?;
        let log_det_x = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let coef = chol.solve(&axy);
        let rss = ayy - (axy.transpose() * coef)[(0, 0)];
        if !(rss > 0.0) {
            return Err(Error::PerfectFit);
        }
        Ok((log_det, log_det_x, rss))
    }

    fn shape(&self) -> f64 {
        0.5 * (self.n - self.q) as f64
    }

    /// `ln m(λ)` with `τ` integrated in closed form.
    pub fn ln_marginal(&self, lambda: f64, b: &DMatrix<f64>) -> Result<f64> {
        let (log_det, log_det_x, rss) = self.omega_parts(lambda, b)?;
        let a = self.shape();
        Ok(-0.5 * log_det - 0.5 * log_det_x + ln_gamma(a) - a * (0.5 * rss).ln())
    }

    /// `ln m(λ)` with the `τ` integral done by quadrature over `ln τ`, for
    /// checking the closed form.
    pub fn ln_marginal_tau_quadrature(&self, lambda: f64, b: &DMatrix<f64>, tol: f64) -> Result<f64> {
        let (log_det, log_det_x, rss) = self.omega_parts(lambda, b)?;
        let a = self.shape();
        // integrand over t = ln τ: τ^a exp(-τR/2); mode at τ = 2a/R
        let mode = (2.0 * a / rss).ln();
        let g = |t: f64| a * t - 0.5 * rss * t.exp();
        let peak = g(mode);
        let width = 40.0 / a.sqrt().max(1.0) + 5.0;
        let integral = integrate(|t| (g(t) - peak).exp(), mode - width, mode + width, tol, 64, 40)?;
        Ok(-0.5 * log_det - 0.5 * log_det_x + peak + integral.ln())
    }
}

/// Adaptive Simpson on `initial_panels` equal panels, relative tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, initial_panels: usize, max_depth: usize) -> Result<f64> {
    let panels = initial_panels.max(1);
    let h = (b - a) / panels as f64;
    let mut coarse = Vec::with_capacity(panels);
    let mut total = 0.0;
    for k in 0..panels {
        let (lo, hi) = (a + h * k as f64, a + h * (k + 1) as f64);
        let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let s = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += s;
        coarse.push((lo, hi, flo, fmid, fhi, s));
    }
    if !total.is_finite() {
        return Err(Error::OracleFailure(format!("non-finite integrand on [{a}, {b}]")));
    }
    let eps = tol * total.abs().max(f64::MIN_POSITIVE) / panels as f64;
    let mut out = 0.0;
    for (lo, hi, flo, fmid, fhi, s) in coarse {
        out += simpson_rec(&f, lo, hi, flo, fmid, fhi, s, eps, max_depth)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: usize) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * eps {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::OracleFailure(format!(
            "adaptive Simpson did not converge on [{a:.6}, {b:.6}] (error estimate {:.3e}, target {:.3e})",
            delta.abs() / 15.0,
            eps
        )));
    }
    Ok(simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)?
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)?)
}

/// `ln ∫ m(λ) d ln λ` with the integrand rescaled by its maximum on a coarse grid.
fn ln_evidence(model: &MarginalModel, b: &DMatrix<f64>, config: &OracleConfig) -> Result<f64> {
    let (lo, hi) = config.ln_lambda_bounds;
    if !(lo < hi) {
        return Err(Error::invalid("ln lambda bounds must satisfy lo < hi"));
    }
    let probe = 4 * config.initial_panels.max(1);
    let mut shift = f64::NEG_INFINITY;
    for i in 0..=probe {
        let u = lo + (hi - lo) * i as f64 / probe as f64;
        shift = shift.max(model.ln_marginal(u.exp(), b)?);
    }
    let f = |u: f64| match model.ln_marginal(u.exp(), b) {
        Ok(v) => (v - shift).exp(),
        Err(_) => f64::NAN,
    };
    let val = integrate(f, lo, hi, config.quad_tol, config.initial_panels, config.max_depth)?;
    if !(val > 0.0) || !val.is_finite() {
        return Err(Error::OracleFailure(format!("evidence integral evaluated to {val}")));
    }
    Ok(shift + val.ln())
}

/// `log₁₀ BF` for the standardized prior `W = τ⁻¹Φ` with `Φ` given as a matrix.
pub fn bf_numeric(data: &Dataset, phi_matrix: &DMatrix<f64>, config: &OracleConfig) -> Result<f64> {
    let model = MarginalModel::new(data)?;
    if phi_matrix.nrows() != data.p() || phi_matrix.ncols() != data.p() {
        return Err(Error::dims("Phi does not match the effect columns"));
    }
    let b = linalg::psd_factor(phi_matrix)?;
    bf_numeric_factor(&model, &b, config)
}

pub fn bf_numeric_factor(model: &MarginalModel, b: &DMatrix<f64>, config: &OracleConfig) -> Result<f64> {
    if b.ncols() == 0 {
        return Ok(0.0);
    }
    let null = ln_evidence(model, &DMatrix::zeros(model.p, 0), config)?;
    let alt = ln_evidence(model, b, config)?;
    Ok((alt - null) / LN_10)
}

/// `log₁₀` of the grid-averaged BF for one prior structure (standardized).
pub fn bf_numeric_grid(model: &MarginalModel, b0: &DMatrix<f64>, grid: &PhiGrid, config: &OracleConfig) -> Result<f64> {
    let null = ln_evidence(model, &DMatrix::zeros(model.p, 0), config)?;
    let mut per = Vec::with_capacity(grid.len());
    for &phi in &grid.phis {
        per.push((ln_evidence(model, &(b0 * phi), config)? - null) / LN_10);
    }
    Ok(linalg::log10_weighted_mean(&per, &grid.weights))
}

#[derive(Debug, Clone)]
pub struct AccuracyRow {
    pub n: usize,
    pub snp: usize,
    pub log10_bf_numeric: f64,
    pub log10_abf_k0: f64,
    pub log10_abf_k1: f64,
}

impl AccuracyRow {
    pub fn error(&self, kappa_one: bool) -> f64 {
        if kappa_one {
            self.log10_abf_k1 - self.log10_bf_numeric
        } else {
            self.log10_abf_k0 - self.log10_bf_numeric
        }
    }
}

#[derive(Debug, Clone)]
pub struct AccuracySummary {
    pub n: usize,
    pub snps: usize,
    pub median_abs_k0: f64,
    pub median_abs_k1: f64,
    pub median_signed_k0: f64,
    pub median_signed_k1: f64,
}

pub fn summarize(rows: &[AccuracyRow], n: usize) -> AccuracySummary {
    let sel: Vec<&AccuracyRow> = rows.iter().filter(|r| r.n == n).collect();
    let col = |f: &dyn Fn(&AccuracyRow) -> f64| median(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
    AccuracySummary {
        n,
        snps: sel.len(),
        median_abs_k0: col(&|r| r.error(false).abs()),
        median_abs_k1: col(&|r| r.error(true).abs()),
        median_signed_k0: col(&|r| r.error(false)),
        median_signed_k1: col(&|r| r.error(true)),
    }
}

/// Single-SNP accuracy of the ABF at `κ = 0` and `κ = 1` against the
/// quadrature BF, on the first `n` individuals for every `n` in `sample_sizes`.
/// All BFs average the standardized prior over `grid`.
pub fn abf_accuracy_sweep(
    genotypes: &DMatrix<f64>,
    y: &DVector<f64>,
    kinship: &DMatrix<f64>,
    sample_sizes: &[usize],
    grid: &PhiGrid,
    config: &OracleConfig,
) -> Result<Vec<AccuracyRow>> {
    let mut rows = Vec::new();
    for &n in sample_sizes {
        if n > y.len() || n < 4 {
            return Err(Error::invalid(format!("sample size {n} outside [4, {}]", y.len())));
        }
        let g = genotypes.rows(0, n).into_owned();
        let k = kinship.view((0, 0), (n, n)).into_owned();
        let yn = y.rows(0, n).into_owned();
        let data = Dataset::new(yn, Dataset::intercept(n), g, Some(k))?;
        let spectrum = Spectrum::new(data.kinship(), n)?;
        let lmm = Lmm::with_spectrum(data.clone(), spectrum.clone());
        let null_fit = lmm.fit_null()?;
        let polymorphic: Vec<usize> = (0..data.p())
            .filter(|&j| {
                let c = data.g().column(j);
                c.iter().any(|&v| v != c[0])
            })
            .collect();
        let per_snp: Vec<Result<AccuracyRow>> = polymorphic
            .par_iter()
            .map(|&j| {
                let gj = data.g().columns(j, 1).into_owned();
                let dj = data.with_effects(gj)?;
                let lmm_j = Lmm::with_spectrum(dj.clone(), spectrum.clone());
                let k0 = Anchor::null(&lmm_j, &null_fit, &[0])?;
                let k1 = Anchor::fit(&lmm_j, 1.0, &[0])?;
                let model = MarginalModel::with_spectrum(&dj, spectrum.clone());
                let b0 = DMatrix::from_element(1, 1, 1.0);
                let numeric = bf_numeric_grid(&model, &b0, grid, config)?;
                Ok(AccuracyRow {
                    n,
                    snp: j,
                    log10_bf_numeric: numeric,
                    log10_abf_k0: single_snp_log10(&k0, grid, true),
                    log10_abf_k1: single_snp_log10(&k1, grid, true),
                })
            })
            .collect();
        for r in per_snp {
            rows.push(r?);
        }
    }
    Ok(rows)
}

/// Grid-averaged ABF for a multi-column prior, matching [`bf_numeric_grid`].
pub fn abf_for_structure(lmm: &Lmm, kappa: f64, kind: PriorKind, weights: DVector<f64>, grid: &PhiGrid) -> Result<f64> {
    let cols = lmm.all_columns();
    let anchor = if kappa == 0.0 { Anchor::null(lmm, &lmm.fit_null()?, &cols)? } else { Anchor::fit(lmm, kappa, &cols)? };
    let prior = EffectPrior::new(kind, weights, 1.0, true)?;
    abf_phi_grid(&anchor, &prior, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_dataset, Rng};

    #[test]
    fn null_prior_gives_zero() {
        let mut rng = Rng::new(1);
        let data = random_dataset(&mut rng, 40, 1, 2, true);
        assert_eq!(bf_numeric(&data, &DMatrix::zeros(2, 2), &OracleConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_tau_integral_matches_quadrature() {
        let mut rng = Rng::new(2);
        let data = random_dataset(&mut rng, 60, 2, 2, true);
        let model = MarginalModel::new(&data).unwrap();
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.3]));
        for &lambda in &[0.01, 1.0, 30.0] {
            for bb in [&b, &DMatrix::zeros(2, 0)] {
                let closed = model.ln_marginal(lambda, bb).unwrap();
                let quad = model.ln_marginal_tau_quadrature(lambda, bb, 1e-10).unwrap();
                assert!(((closed - quad) / closed.abs().max(1.0)).abs() < 1e-6, "{closed} vs {quad}");
            }
        }
    }

    /// Direct evaluation of `m(λ)` with dense `Ω`.
    #[test]
    fn woodbury_matches_dense_omega() {
        let mut rng = Rng::new(3);
        let data = random_dataset(&mut rng, 30, 2, 2, true);
        let model = MarginalModel::new(&data).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.2, 0.4]);
        let lambda = 0.8;
        let omega = data.covariance(lambda).unwrap().sigma() + data.g() * &b * b.transpose() * data.g().transpose();
        let oi = omega.clone().try_inverse().unwrap();
        let x = data.x();
        let xox = x.transpose() * &oi * x;
        let alpha = xox.clone().try_inverse().unwrap() * x.transpose() * &oi * data.y();
        let r = data.y() - x * alpha;
        let rss = (r.transpose() * &oi * &r)[(0, 0)];
        let a = 0.5 * (30.0 - 2.0);
        let dense = -0.5 * omega.determinant().ln() - 0.5 * xox.determinant().ln() + ln_gamma(a) - a * (0.5 * rss).ln();
        assert!((model.ln_marginal(lambda, &b).unwrap() - dense).abs() < 1e-8);
    }

    #[test]
    fn integrator_on_known_integrals() {
        let v = integrate(|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-10, 16, 40).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-9);
        let v = integrate(|x: f64| x.cos(), 0.0, 1.0, 1e-12, 1, 40).unwrap();
        assert!((v - 1f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn halving_tolerance_is_stable() {
        let mut rng = Rng::new(4);
        let data = random_dataset(&mut rng, 80, 1, 1, true);
        let phi = DMatrix::from_element(1, 1, 0.16);
        let tol = 1e-6;
        let a = bf_numeric(&data, &phi, &OracleConfig { quad_tol: tol, ..OracleConfig::default() }).unwrap();
        let b = bf_numeric(&data, &phi, &OracleConfig { quad_tol: tol / 2.0, ..OracleConfig::default() }).unwrap();
        assert!((a - b).abs() < 10.0 * tol);
    }

    #[test]
    fn abf_tracks_oracle_on_moderate_sample() {
        let mut rng = Rng::new(5);
        let n = 300;
        let k = crate::testutil::random_kinship(&mut rng, n);
        let g = DMatrix::from_fn(n, 1, |_, _| (rng.below(3)) as f64);
        let mean = DVector::from_fn(n, |i, _| 0.2 * g[(i, 0)]);
        let mut srng = crate::sim::stream_rng(5, 1);
        let y = crate::sim::simulate_with_random_effect(&mut srng, &mean, 1.0, 1.0, &k).unwrap();
        let data = Dataset::new(y, Dataset::intercept(n), g, Some(k)).unwrap();
        let lmm = Lmm::new(data.clone()).unwrap();
        let grid = PhiGrid::default();
        let abf0 = abf_for_structure(&lmm, 0.0, PriorKind::Skat, DVector::from_element(1, 1.0), &grid).unwrap();
        let model = MarginalModel::new(&data).unwrap();
        let numeric = bf_numeric_grid(&model, &DMatrix::from_element(1, 1, 1.0), &grid, &OracleConfig::default()).unwrap();
        assert!((abf0 - numeric).abs() < 0.15, "abf {abf0} numeric {numeric}");
    }

    #[test]
    fn empty_sweep_is_empty() {
        let rows = abf_accuracy_sweep(
            &DMatrix::zeros(10, 0),
            &DVector::from_fn(10, |i, _| i as f64),
            &DMatrix::identity(10, 10),
            &[10],
            &PhiGrid::default(),
            &OracleConfig::default(),
        )
        .unwrap();
        assert!(rows.is_empty());
    }
}
