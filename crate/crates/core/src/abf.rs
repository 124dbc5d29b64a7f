//! Approximate Bayes factors and their frequentist companions.
//!
//! With `A = V̌⁻¹`, `s = V̌⁻¹β̌` and a prior factor `W = B Bᵀ`,
//!
//! ```text
//! ln ABF = -½ ln|I + BᵀAB| + ½ sᵀB (I + BᵀAB)⁻¹ Bᵀs
//! ```
//!
//! which equals `|I + V̌⁻¹W|^{-1/2} exp(½ β̌ᵀV̌⁻¹ W (I + V̌⁻¹W)⁻¹ V̌⁻¹β̌)` and only
//! needs the symmetric eigendecomposition of the small matrix `BᵀAB`. It stays
//! finite for singular `W` and for collinear effect columns (singular `A`).

use std::f64::consts::LN_10;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lmm::{build_covariance, Dataset, EffectInformation, GlsEffect, Lmm, OptimizerConfig, VarianceFit};
use crate::priors::{EffectPrior, PhiGrid, PriorKind};

/// Effect summary at the variance parameters selected by `κ`.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub kappa: f64,
    pub lambda: f64,
    pub tau: f64,
    pub info: EffectInformation,
}

impl Anchor {
    /// `κ = 0` anchor for the columns `cols`, reusing one null fit.
    pub fn null(lmm: &Lmm, null_fit: &VarianceFit, cols: &[usize]) -> Result<Self> {
        let info = lmm.effect_information(null_fit.lambda_check, null_fit.tau_check, cols)?;
        Ok(Anchor { kappa: 0.0, lambda: null_fit.lambda_check, tau: null_fit.tau_check, info })
    }

    /// Anchor at an arbitrary `κ`, refitting `λ` for these columns.
    pub fn fit(lmm: &Lmm, kappa: f64, cols: &[usize]) -> Result<Self> {
        let fit = lmm.optimize_lambda(kappa, cols, &OptimizerConfig::default())?;
        let info = lmm.effect_information(fit.lambda_check, fit.tau_check, cols)?;
        Ok(Anchor { kappa, lambda: fit.lambda_check, tau: fit.tau_check, info })
    }

    pub fn p(&self) -> usize {
        self.info.p()
    }
}

#[derive(Debug, Clone)]
pub struct AbfResult {
    pub log10_abf: f64,
    pub kappa: f64,
    pub prior: String,
    pub beta_check: DVector<f64>,
    /// `β̌ᵀV̌⁻¹β̌`
    pub quad_form: f64,
}

/// Eigen-summary of `B₀ᵀAB₀` and `B₀ᵀs`; a prior factor `cB₀` then costs `O(r)`.
#[derive(Debug, Clone)]
pub struct FactorSpectrum {
    d: DVector<f64>,
    v: DVector<f64>,
}

impl FactorSpectrum {
    pub fn new(info: &EffectInformation, b: &DMatrix<f64>) -> Result<Self> {
        if b.nrows() != info.p() {
            return Err(Error::dims(format!("prior factor has {} rows, effect has p = {}", b.nrows(), info.p())));
        }
        if b.ncols() == 0 {
            return Ok(FactorSpectrum { d: DVector::zeros(0), v: DVector::zeros(0) });
        }
        let mut m = b.transpose() * &info.precision * b;
        linalg::symmetrize(&mut m);
        let u = b.transpose() * &info.score;
        Ok(Self::from_parts(m, &u))
    }

    /// From `M = BᵀAB` and `u = Bᵀs` directly.
    pub fn from_parts(m: DMatrix<f64>, u: &DVector<f64>) -> Self {
        let eig = SymmetricEigen::new(m);
        let d = eig.eigenvalues.map(|x| x.max(0.0));
        let v = eig.eigenvectors.tr_mul(u);
        FactorSpectrum { d, v }
    }

    /// `ln ABF` for the prior factor `c B₀`.
    pub fn ln_abf(&self, c: f64) -> f64 {
        let c2 = c * c;
        let mut out = 0.0;
        for (d, v) in self.d.iter().zip(self.v.iter()) {
            let a = c2 * d;
            out += -0.5 * a.ln_1p() + 0.5 * c2 * v * v / (1.0 + a);
        }
        out
    }

    pub fn log10_abf(&self, c: f64) -> f64 {
        self.ln_abf(c) / LN_10
    }
}

/// `log₁₀ ABF` for an explicit prior covariance `W`.
pub fn abf_matrix(info: &EffectInformation, w: &DMatrix<f64>) -> Result<f64> {
    if w.nrows() != info.p() || w.ncols() != info.p() {
        return Err(Error::dims(format!("W is {}x{}, effect has p = {}", w.nrows(), w.ncols(), info.p())));
    }
    if !linalg::all_finite(w.iter()) || !linalg::is_symmetric(w, 1e-10) {
        return Err(Error::invalid("prior covariance must be finite and symmetric"));
    }
    let b = linalg::psd_factor(w)?;
    Ok(FactorSpectrum::new(info, &b)?.log10_abf(1.0))
}

/// `log₁₀[√(v/(v+ω)) exp(½ ω/(v+ω) β²/v)]`.
pub fn abf_scalar(beta: f64, v: f64, omega: f64) -> f64 {
    debug_assert!(v > 0.0 && omega >= 0.0);
    let ln = 0.5 * (v / (v + omega)).ln() + 0.5 * omega / (v + omega) * beta * beta / v;
    ln / LN_10
}

/// `log₁₀ ABF` under `W = c V̌`, a function of `p` and `β̌ᵀV̌⁻¹β̌` only.
pub fn implicit_pvalue_abf(info: &EffectInformation, c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("scale c must be positive, got {c}")));
    }
    let q = info.quad_form();
    let p = info.p() as f64;
    Ok((0.5 * p * (1.0 / (c + 1.0)).ln() + 0.5 * c / (c + 1.0) * q) / LN_10)
}

/// ABF of one prior at the anchor's `τ̌`.
pub fn abf(anchor: &Anchor, prior: &EffectPrior) -> Result<AbfResult> {
    if prior.p() != anchor.p() {
        return Err(Error::dims(format!("prior has p = {}, effect has p = {}", prior.p(), anchor.p())));
    }
    let log10_abf = match prior.kind {
        PriorKind::ScaledV(c) => implicit_pvalue_abf(&anchor.info, c)?,
        _ => {
            let spec = FactorSpectrum::new(&anchor.info, &prior.base_factor()?)?;
            spec.log10_abf(prior.factor_scale(anchor.tau))
        }
    };
    Ok(AbfResult {
        log10_abf,
        kappa: anchor.kappa,
        prior: prior.kind.tag(),
        beta_check: anchor.info.beta(),
        quad_form: anchor.info.quad_form(),
    })
}

/// Grid-averaged ABF, `log₁₀ Σᵢ wᵢ ABF(φᵢ)`. The `phi` stored in `prior` is ignored.
pub fn abf_phi_grid(anchor: &Anchor, prior: &EffectPrior, grid: &PhiGrid) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("phi grid is empty"));
    }
    if prior.p() != anchor.p() {
        return Err(Error::dims(format!("prior has p = {}, effect has p = {}", prior.p(), anchor.p())));
    }
    let per_phi: Vec<f64> = match prior.kind {
        PriorKind::ScaledV(_) => {
            let mut out = Vec::with_capacity(grid.len());
            for &phi in &grid.phis {
                out.push(implicit_pvalue_abf(&anchor.info, phi * phi)?);
            }
            out
        }
        _ => {
            let spec = FactorSpectrum::new(&anchor.info, &prior.base_factor()?)?;
            let unit = prior.factor_scale(anchor.tau) / prior.phi;
            grid.phis.iter().map(|&phi| spec.log10_abf(unit * phi)).collect()
        }
    };
    Ok(linalg::log10_weighted_mean(&per_phi, &grid.weights))
}

/// Grid average of the scalar ABF with `ω = φ²` (or `φ²/τ` when standardized).
pub fn abf_scalar_grid(beta: f64, v: f64, tau: f64, grid: &PhiGrid, standardized: bool) -> f64 {
    let per: Vec<f64> = grid
        .phis
        .iter()
        .map(|&phi| {
            let omega = if standardized { phi * phi / tau } else { phi * phi };
            abf_scalar(beta, v, omega)
        })
        .collect();
    linalg::log10_weighted_mean(&per, &grid.weights)
}

/// `β̂ᵀV̂⁻¹β̂`; meant for the `κ = 1` anchor.
pub fn wald_stat(effect: &GlsEffect) -> Result<f64> {
    let vinv = linalg::spd_inverse(&effect.v_check).ok_or(Error::CollinearEffects)?;
    Ok((effect.beta_check.transpose() * vinv * &effect.beta_check)[(0, 0)])
}

/// Pieces of the null model at `(λ̃, τ̃)` evaluated by dense Cholesky solves:
/// the residual `r = y - Xα̃`, `Σ̃⁻¹r`, `Σ̃⁻¹G` and `Σ̃⁻¹X`.
struct NullResiduals {
    sinv_r: DVector<f64>,
    sinv_g: DMatrix<f64>,
    sinv_x: DMatrix<f64>,
}

fn null_residuals(data: &Dataset, null_fit: &VarianceFit) -> Result<NullResiduals> {
    if null_fit.kappa != 0.0 {
        return Err(Error::invalid("score statistics need the null (kappa = 0) fit"));
    }
    let cov = match data.kinship() {
        Some(k) => build_covariance(null_fit.lambda_check, k)?,
        None => build_covariance(0.0, &DMatrix::zeros(data.n(), data.n()))?,
    };
    let chol = nalgebra::Cholesky::new(cov.sigma()).ok_or(Error::DegenerateKinship { min_eigenvalue: f64::NAN })?;
    let r = data.y() - data.x() * &null_fit.alpha;
    Ok(NullResiduals { sinv_r: chol.solve(&r), sinv_g: chol.solve(data.g()), sinv_x: chol.solve(data.x()) })
}

/// Fixed-effect score statistic `τ̃ rᵀΣ̃⁻¹G Q̃ GᵀΣ̃⁻¹r` with
/// `Q̃ = (GᵀP̃G)⁻¹` and `P̃ = Σ̃⁻¹ - Σ̃⁻¹X(XᵀΣ̃⁻¹X)⁻¹XᵀΣ̃⁻¹`.
pub fn score_stat_fixed(data: &Dataset, null_fit: &VarianceFit) -> Result<f64> {
    let nr = null_residuals(data, null_fit)?;
    let g = data.g();
    let x = data.x();
    let xtsx = x.transpose() * &nr.sinv_x;
    let xtsx_inv = linalg::spd_inverse(&xtsx).ok_or(Error::SingularDesign)?;
    let gtsg = g.transpose() * &nr.sinv_g;
    let gtsx = g.transpose() * &nr.sinv_x;
    let gpg = &gtsg - &gtsx * xtsx_inv * gtsx.transpose();
    let q = linalg::spd_inverse(&gpg).ok_or(Error::CollinearEffects)?;
    let score = g.transpose() * &nr.sinv_r;
    Ok(null_fit.tau_check * (score.transpose() * q * &score)[(0, 0)])
}

/// Variance-component score `T = τ̃² rᵀΣ̃⁻¹G M GᵀΣ̃⁻¹r`.
pub fn variance_component_score(data: &Dataset, null_fit: &VarianceFit, m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != data.p() || m.ncols() != data.p() {
        return Err(Error::dims(format!("M is {}x{}, expected p = {}", m.nrows(), m.ncols(), data.p())));
    }
    linalg::psd_factor(m)?;
    let nr = null_residuals(data, null_fit)?;
    let score = data.g().transpose() * &nr.sinv_r;
    let t = null_fit.tau_check.powi(2) * (score.transpose() * m * &score)[(0, 0)];
    Ok(t.max(0.0))
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreStats {
    pub wald: f64,
    pub score_fixed: f64,
    pub t_score: f64,
}

/// Wald at the `κ = 1` anchor, fixed-effect score and `T` (for `M`) at the null fit.
pub fn score_stats(lmm: &Lmm, null_fit: &VarianceFit, m: &DMatrix<f64>) -> Result<ScoreStats> {
    let cols = lmm.all_columns();
    let full = lmm.optimize_lambda(1.0, &cols, &OptimizerConfig::default())?;
    let effect = lmm.gls_effect(full.lambda_check, full.tau_check, &cols)?;
    Ok(ScoreStats {
        wald: wald_stat(&effect)?,
        score_fixed: score_stat_fixed(lmm.dataset(), null_fit)?,
        t_score: variance_component_score(lmm.dataset(), null_fit, m)?,
    })
}
