//! Linear mixed model `y = Xα + Gβ + u + e` with `u ~ N(0, λτ⁻¹K)` and
//! `e ~ N(0, τ⁻¹I)`, so that `y ~ N(Xα + Gβ, τ⁻¹Σ(λ))` with `Σ(λ) = I + λK`.
//!
//! Two routes compute the GLS quantities:
//!
//! * [`build_covariance`], [`gls_null_alpha`] and [`gls_effect`] factor `Σ(λ)`
//!   by Cholesky for a single `λ`.
//! * [`Lmm`] caches the eigendecomposition `K = U D Uᵀ` once, after which every
//!   `λ` costs a diagonal reweighting of the rotated data. The optimizer and the
//!   scans use this route.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, all_finite};
use crate::optim::brent_max;

/// Observed quantities of one analysis: response, fixed covariates (first column
/// the intercept), candidate-effect columns and optional kinship.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    g: DMatrix<f64>,
    k: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, g: DMatrix<f64>, k: Option<DMatrix<f64>>) -> Result<Self> {
        Self::build(y, x, g, k, true)
    }

    /// Data already transformed by `Σ^{-1/2}`, whose covariates no longer
    /// contain a literal intercept column.
    pub(crate) fn transformed(y: DVector<f64>, x: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        Self::build(y, x, g, None, false)
    }

    fn build(y: DVector<f64>, x: DMatrix<f64>, g: DMatrix<f64>, k: Option<DMatrix<f64>>, intercept: bool) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || g.nrows() != n {
            return Err(Error::dims(format!(
                "y has {n} rows, X has {}, G has {}",
                x.nrows(),
                g.nrows()
            )));
        }
        let q = x.ncols();
        if q == 0 {
            return Err(Error::invalid("X must contain at least the intercept column"));
        }
        if n < q + 1 {
            return Err(Error::invalid(format!("need n >= q + 1, got n = {n}, q = {q}")));
        }
        if !all_finite(y.iter()) {
            return Err(Error::NonFinite("response".into()));
        }
        if !all_finite(x.iter()) {
            return Err(Error::NonFinite("covariates".into()));
        }
        if !all_finite(g.iter()) {
            return Err(Error::NonFinite("effect matrix".into()));
        }
        if intercept && x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("first column of X must be the all-ones intercept"));
        }
        if x.clone().qr().r().diagonal().iter().any(|d| d.abs() < 1e-10 * (n as f64).sqrt()) {
            return Err(Error::SingularDesign);
        }
        if let Some(k) = &k {
            if k.nrows() != n || k.ncols() != n {
                return Err(Error::dims(format!("kinship is {}x{}, expected {n}x{n}", k.nrows(), k.ncols())));
            }
            if !all_finite(k.iter()) {
                return Err(Error::NonFinite("kinship".into()));
            }
            if !linalg::is_symmetric(k, 1e-8) {
                return Err(Error::invalid("kinship matrix is not symmetric"));
            }
        }
        Ok(Dataset { y, x, g, k })
    }

    /// Intercept-only covariates.
    pub fn intercept(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn kinship(&self) -> Option<&DMatrix<f64>> {
        self.k.as_ref()
    }
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn q(&self) -> usize {
        self.x.ncols()
    }
    pub fn p(&self) -> usize {
        self.g.ncols()
    }

    /// Same response, covariates and kinship with a different effect matrix.
    pub fn with_effects(&self, g: DMatrix<f64>) -> Result<Self> {
        Dataset::build(self.y.clone(), self.x.clone(), g, self.k.clone(), false)
    }

    pub fn covariance(&self, lambda: f64) -> Result<CovarianceModel> {
        match &self.k {
            Some(k) => build_covariance(lambda, k),
            None => build_covariance(lambda, &DMatrix::zeros(self.n(), self.n())),
        }
    }
}

/// `Σ(λ) = I + λK` with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub lambda: f64,
    pub sigma_factor: DMatrix<f64>,
    pub log_det_sigma: f64,
}

impl CovarianceModel {
    /// `L⁻¹ v`, a valid `Σ^{-1/2}` for inner products.
    pub fn whiten(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.sigma_factor
            .solve_lower_triangular(m)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn whiten_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.sigma_factor
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        &self.sigma_factor * self.sigma_factor.transpose()
    }
}

pub fn build_covariance(lambda: f64, k: &DMatrix<f64>) -> Result<CovarianceModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("variance ratio must be finite and >= 0, got {lambda}")));
    }
    if !k.is_square() {
        return Err(Error::dims("kinship must be square"));
    }
    let n = k.nrows();
    let sigma = DMatrix::identity(n, n) + k * lambda;
    match sigma.cholesky() {
        Some(ch) => {
            let l = ch.unpack();
            let log_det_sigma = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Ok(CovarianceModel { lambda, sigma_factor: l, log_det_sigma })
        }
        None => {
            let min = nalgebra::SymmetricEigen::new(k.clone())
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            Err(Error::DegenerateKinship { min_eigenvalue: min })
        }
    }
}

/// Null-model GLS coefficients `(XᵀΣ⁻¹X)⁻¹XᵀΣ⁻¹y`.
pub fn gls_null_alpha(data: &Dataset, cov: &CovarianceModel) -> Result<DVector<f64>> {
    check_cov_dims(data, cov)?;
    let xt = cov.whiten(data.x());
    let yt = cov.whiten_vec(data.y());
    let gram = xt.transpose() * &xt;
    let rhs = xt.transpose() * yt;
    let inv = linalg::spd_inverse(&gram).ok_or(Error::SingularDesign)?;
    Ok(inv * rhs)
}

/// GLS estimate `β̂(λ)` and its covariance `V̂(λ, τ) = τ⁻¹(G_xᵀG_x)⁻¹`, where
/// `G_x` is the whitened effect design with the whitened covariates projected out.
pub fn gls_effect(data: &Dataset, cov: &CovarianceModel, tau: f64) -> Result<GlsEffect> {
    check_cov_dims(data, cov)?;
    if data.p() == 0 {
        return Err(Error::invalid("effect matrix has no columns"));
    }
    check_tau(tau)?;
    let xt = cov.whiten(data.x());
    let gt = cov.whiten(data.g());
    let yt = cov.whiten_vec(data.y());
    let proj = NullProjection::new(&xt, &yt)?;
    let gx = proj.residualize(&gt);
    let gram = gx.transpose() * &gx;
    let inv = linalg::spd_inverse(&gram).ok_or(Error::CollinearEffects)?;
    let beta = &inv * (gx.transpose() * &yt);
    let mut v = inv / tau;
    linalg::symmetrize(&mut v);
    Ok(GlsEffect { beta_check: beta, v_check: v })
}

fn check_cov_dims(data: &Dataset, cov: &CovarianceModel) -> Result<()> {
    if cov.sigma_factor.nrows() != data.n() {
        return Err(Error::dims(format!(
            "covariance is {}x{}, dataset has n = {}",
            cov.sigma_factor.nrows(),
            cov.sigma_factor.ncols(),
            data.n()
        )));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be positive and finite, got {tau}")));
    }
    Ok(())
}

/// `β̌` with covariance `V̌`.
#[derive(Debug, Clone)]
pub struct GlsEffect {
    pub beta_check: DVector<f64>,
    pub v_check: DMatrix<f64>,
}

impl GlsEffect {
    pub fn p(&self) -> usize {
        self.beta_check.len()
    }

    pub fn information(&self) -> Result<EffectInformation> {
        let precision = linalg::spd_inverse(&self.v_check).ok_or(Error::CollinearEffects)?;
        let score = &precision * &self.beta_check;
        Ok(EffectInformation { precision, score })
    }
}

/// Information form of an effect estimate: `V̌⁻¹` and `V̌⁻¹β̌`. Both stay well
/// defined when the effect columns are collinear, which is what the ABF needs.
#[derive(Debug, Clone)]
pub struct EffectInformation {
    pub precision: DMatrix<f64>,
    pub score: DVector<f64>,
}

impl EffectInformation {
    pub fn p(&self) -> usize {
        self.score.len()
    }

    /// `β̌ᵀV̌⁻¹β̌`, with a pseudo-inverse when `V̌⁻¹` is singular.
    pub fn quad_form(&self) -> f64 {
        let pinv = linalg::pinv_psd(&self.precision);
        (self.score.transpose() * pinv * &self.score)[(0, 0)].max(0.0)
    }

    /// `β̌` (minimum-norm when collinear).
    pub fn beta(&self) -> DVector<f64> {
        linalg::pinv_psd(&self.precision) * &self.score
    }

    pub fn subset(&self, idx: &[usize]) -> EffectInformation {
        EffectInformation {
            precision: linalg::select_square(&self.precision, idx),
            score: linalg::select_entries(&self.score, idx),
        }
    }
}

impl TryFrom<&GlsEffect> for EffectInformation {
    type Error = Error;
    fn try_from(e: &GlsEffect) -> Result<Self> {
        e.information()
    }
}

/// Orthogonal projection onto the complement of the whitened covariates.
pub(crate) struct NullProjection {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub resid: DVector<f64>,
    pub rss: f64,
}

impl NullProjection {
    pub fn new(xt: &DMatrix<f64>, yt: &DVector<f64>) -> Result<Self> {
        let qr = xt.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let scale = (0..xt.ncols()).map(|j| xt.column(j).norm()).fold(0.0_f64, f64::max);
        if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularDesign);
        }
        let qty = q.transpose() * yt;
        let alpha = r.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)?;
        let resid = yt - &q * qty;
        let rss = resid.norm_squared();
        Ok(NullProjection { q, r, alpha, resid, rss })
    }

    pub fn residualize(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m - &self.q * (self.q.transpose() * m)
    }

    /// Covariate coefficients after removing `offset` from the response.
    pub fn alpha_for(&self, yt_minus: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.transpose() * yt_minus;
        self.r.solve_upper_triangular(&qty).expect("checked at construction")
    }
}

/// Residual sums of squares of the null and full models at one `λ`, plus the
/// sufficient statistics of the effect estimate.
#[derive(Debug, Clone)]
pub struct GlsParts {
    pub alpha_null: DVector<f64>,
    pub rss_null: f64,
    /// `G_xᵀG_x`
    pub gram: DMatrix<f64>,
    /// `G_xᵀ Σ^{-1/2} y`
    pub cross: DVector<f64>,
    pub beta: DVector<f64>,
    pub alpha_full: DVector<f64>,
    pub rss_full: f64,
    pub yty: f64,
}

impl GlsParts {
    pub fn information(&self, tau: f64) -> EffectInformation {
        EffectInformation { precision: &self.gram * tau, score: &self.cross * tau }
    }
}

/// Eigendecomposition of the kinship with negative noise clamped to zero. A
/// missing kinship is the zero matrix (identity rotation, zero spectrum).
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: DVector<f64>,
    vectors: Option<DMatrix<f64>>,
}

impl Spectrum {
    pub fn new(k: Option<&DMatrix<f64>>, n: usize) -> Result<Self> {
        match k {
            None => Ok(Spectrum { values: DVector::zeros(n), vectors: None }),
            Some(k) => {
                let tol = 1e-8 * linalg::max_abs(k).max(1.0);
                let eig = linalg::psd_eigen(k, tol).map_err(|min| Error::DegenerateKinship { min_eigenvalue: min })?;
                Ok(Spectrum { values: eig.eigenvalues, vectors: Some(eig.eigenvectors) })
            }
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn rotate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.vectors {
            Some(u) => u.tr_mul(m),
            None => m.clone(),
        }
    }

    pub fn rotate_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.vectors {
            Some(u) => u.tr_mul(v),
            None => v.clone(),
        }
    }

    fn unrotate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.vectors {
            Some(u) => u * m,
            None => m.clone(),
        }
    }

    /// Diagonal of `Σ(λ)⁻¹` in the rotated basis.
    pub fn weights(&self, lambda: f64) -> DVector<f64> {
        self.values.map(|d| 1.0 / (1.0 + lambda * d))
    }

    pub fn log_det(&self, lambda: f64) -> f64 {
        self.values.iter().map(|d| (lambda * d).ln_1p()).sum()
    }

    /// Symmetric `Σ(λ)^{-1/2} M`.
    pub fn inv_sqrt_apply(&self, lambda: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = self.rotate(m);
        let w = self.weights(lambda);
        for (i, mut row) in r.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
        self.unrotate(&r)
    }
}

/// Parameters of the bracketed variance-ratio search (on `log10 λ`).
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub log10_lambda_min: f64,
    pub log10_lambda_max: f64,
    pub grid_points: usize,
    /// Bracket width tolerance on the `log10 λ` scale.
    pub tol: f64,
    pub objective_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            log10_lambda_min: -6.0,
            log10_lambda_max: 6.0,
            grid_points: 64,
            tol: 1e-6,
            objective_tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Maximizer of the profile objective `l(λ; κ)` and the matching `τ` and `α`.
#[derive(Debug, Clone)]
pub struct VarianceFit {
    pub kappa: f64,
    pub lambda_check: f64,
    pub tau_check: f64,
    pub alpha: DVector<f64>,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// The objective did not vary over the search grid (e.g. no kinship).
    pub flat_objective: bool,
}

/// A dataset with its kinship spectrum cached and data pre-rotated.
#[derive(Debug, Clone)]
pub struct Lmm {
    data: Dataset,
    spectrum: Spectrum,
    y_rot: DVector<f64>,
    x_rot: DMatrix<f64>,
    g_rot: DMatrix<f64>,
}

impl Lmm {
    pub fn new(data: Dataset) -> Result<Self> {
        let spectrum = Spectrum::new(data.kinship(), data.n())?;
        Ok(Self::with_spectrum(data, spectrum))
    }

    /// Reuses a spectrum computed for the same kinship (e.g. many phenotypes
    /// sharing one relatedness matrix).
    pub fn with_spectrum(data: Dataset, spectrum: Spectrum) -> Self {
        let y_rot = spectrum.rotate_vec(data.y());
        let x_rot = spectrum.rotate(data.x());
        let g_rot = spectrum.rotate(data.g());
        Lmm { data, spectrum, y_rot, x_rot, g_rot }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    pub fn n(&self) -> usize {
        self.data.n()
    }
    pub fn p(&self) -> usize {
        self.data.p()
    }
    pub fn all_columns(&self) -> Vec<usize> {
        (0..self.p()).collect()
    }

    fn check_cols(&self, cols: &[usize]) -> Result<()> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.p()) {
            return Err(Error::invalid(format!("effect column {c} out of range (p = {})", self.p())));
        }
        Ok(())
    }

    fn whitened(&self, lambda: f64, cols: &[usize]) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let sw = self.spectrum.weights(lambda).map(f64::sqrt);
        let yt = self.y_rot.component_mul(&sw);
        let mut xt = self.x_rot.clone();
        for (i, mut row) in xt.row_iter_mut().enumerate() {
            row *= sw[i];
        }
        let mut gt = linalg::select_columns(&self.g_rot, cols);
        for (i, mut row) in gt.row_iter_mut().enumerate() {
            row *= sw[i];
        }
        (yt, xt, gt)
    }

    pub fn null_alpha(&self, lambda: f64) -> Result<DVector<f64>> {
        let (yt, xt, _) = self.whitened(lambda, &[]);
        Ok(NullProjection::new(&xt, &yt)?.alpha)
    }

    /// All GLS quantities at `λ` for the effect columns `cols`.
    pub fn gls_parts(&self, lambda: f64, cols: &[usize]) -> Result<GlsParts> {
        check_lambda(lambda)?;
        self.check_cols(cols)?;
        let (yt, xt, gt) = self.whitened(lambda, cols);
        let proj = NullProjection::new(&xt, &yt)?;
        let gx = proj.residualize(&gt);
        let gram = gx.transpose() * &gx;
        let cross = gx.transpose() * &proj.resid;
        let beta = linalg::pinv_psd(&gram) * &cross;
        let fitted = &gt * &beta;
        let alpha_full = proj.alpha_for(&(&yt - &fitted));
        let resid_full = &proj.resid - &gx * &beta;
        Ok(GlsParts {
            alpha_null: proj.alpha.clone(),
            rss_null: proj.rss,
            gram,
            cross,
            beta,
            alpha_full,
            rss_full: resid_full.norm_squared(),
            yty: yt.norm_squared(),
        })
    }

    pub fn effect_information(&self, lambda: f64, tau: f64, cols: &[usize]) -> Result<EffectInformation> {
        check_tau(tau)?;
        Ok(self.gls_parts(lambda, cols)?.information(tau))
    }

    pub fn gls_effect(&self, lambda: f64, tau: f64, cols: &[usize]) -> Result<GlsEffect> {
        check_tau(tau)?;
        if cols.is_empty() {
            return Err(Error::invalid("no effect columns selected"));
        }
        let parts = self.gls_parts(lambda, cols)?;
        let inv = linalg::spd_inverse(&parts.gram).ok_or(Error::CollinearEffects)?;
        let beta = &inv * &parts.cross;
        let mut v = inv / tau;
        linalg::symmetrize(&mut v);
        Ok(GlsEffect { beta_check: beta, v_check: v })
    }

    /// `τ̂(λ; κ) = n / {(1-κ) RSS_null(λ) + κ RSS_full(λ)}`.
    pub fn tau_profile(&self, lambda: f64, kappa: f64, cols: &[usize]) -> Result<f64> {
        let parts = self.gls_parts_for_kappa(lambda, kappa, cols)?;
        tau_from_parts(&parts, kappa, self.n())
    }

    fn gls_parts_for_kappa(&self, lambda: f64, kappa: f64, cols: &[usize]) -> Result<GlsParts> {
        check_kappa(kappa)?;
        // the null objective does not depend on the effect columns
        if kappa == 0.0 {
            self.gls_parts(lambda, &[])
        } else {
            self.gls_parts(lambda, cols)
        }
    }

    /// `l(λ; κ) = (n/2) log τ̂(λ; κ) - (1/2) log|Σ(λ)|`.
    pub fn profile_objective(&self, lambda: f64, kappa: f64, cols: &[usize]) -> Result<f64> {
        let tau = self.tau_profile(lambda, kappa, cols)?;
        Ok(0.5 * self.n() as f64 * tau.ln() - 0.5 * self.spectrum.log_det(lambda))
    }

    /// Null-model fit (`κ = 0`): `λ̃`, `τ̃`, `α̃`.
    pub fn fit_null(&self) -> Result<VarianceFit> {
        self.optimize_lambda(0.0, &[], &OptimizerConfig::default())
    }

    pub fn optimize_lambda(&self, kappa: f64, cols: &[usize], config: &OptimizerConfig) -> Result<VarianceFit> {
        check_kappa(kappa)?;
        self.check_cols(cols)?;
        if kappa > 0.0 && cols.is_empty() {
            return Err(Error::invalid("kappa > 0 requires effect columns"));
        }
        let n_grid = config.grid_points.max(3);
        let (lo, hi) = (config.log10_lambda_min, config.log10_lambda_max);
        let step = (hi - lo) / (n_grid - 1) as f64;
        let grid: Vec<f64> = (0..n_grid).map(|i| lo + step * i as f64).collect();

        let objective = |log10_lambda: f64| self.profile_objective(10f64.powf(log10_lambda), kappa, cols);

        let mut values = Vec::with_capacity(n_grid);
        for &t in &grid {
            match objective(t) {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(v) => {
                    return Err(Error::OptimizationFailure(format!(
                        "objective is {v} at log10(lambda) = {t:.3} on the initial grid"
                    )))
                }
                Err(Error::PerfectFit) => return Err(Error::PerfectFit),
                Err(e) => {
                    return Err(Error::OptimizationFailure(format!(
                        "objective failed at log10(lambda) = {t:.3} on the initial grid: {e}"
                    )))
                }
            }
        }

        let (best_idx, best_val) = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let worst = values.iter().cloned().fold(f64::INFINITY, f64::min);

        let (log10_lambda, value, iterations, converged, flat) =
            if best_val - worst <= config.objective_tol * (1.0 + best_val.abs()) {
                (lo, values[0], 0, true, true)
            } else {
                let a = grid[best_idx.saturating_sub(1)];
                let b = grid[(best_idx + 1).min(n_grid - 1)];
                let r = brent_max(|t| objective(t).unwrap_or(f64::NEG_INFINITY), a, b, config.tol, config.max_iter);
                if r.value >= best_val {
                    (r.x, r.value, r.iterations, r.converged, false)
                } else {
                    (grid[best_idx], best_val, r.iterations, r.converged, false)
                }
            };

        let lambda = 10f64.powf(log10_lambda);
        let parts = self.gls_parts_for_kappa(lambda, kappa, cols)?;
        let tau = tau_from_parts(&parts, kappa, self.n())?;
        let alpha = if kappa == 1.0 { parts.alpha_full } else { parts.alpha_null };
        Ok(VarianceFit {
            kappa,
            lambda_check: lambda,
            tau_check: tau,
            alpha,
            objective_value: value,
            converged,
            iterations,
            flat_objective: flat,
        })
    }
}

fn tau_from_parts(parts: &GlsParts, kappa: f64, n: usize) -> Result<f64> {
    let floor = 1e-14 * parts.yty.max(f64::MIN_POSITIVE);
    if parts.rss_null <= floor || (kappa > 0.0 && parts.rss_full <= floor) {
        return Err(Error::PerfectFit);
    }
    let denom = (1.0 - kappa) * parts.rss_null + kappa * parts.rss_full;
    Ok(n as f64 / denom)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("variance ratio must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::invalid(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_dataset, Rng};

    fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
        m.clone().try_inverse().unwrap()
    }

    #[test]
    fn identity_covariance_at_zero_lambda() {
        let k = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.3 });
        let c = build_covariance(0.0, &k).unwrap();
        assert!((c.sigma() - DMatrix::identity(4, 4)).abs().max() < 1e-15);
        assert_eq!(c.log_det_sigma, 0.0);
    }

    #[test]
    fn scaled_identity_log_det() {
        let c = build_covariance(1.0, &DMatrix::identity(3, 3)).unwrap();
        assert!((c.log_det_sigma - 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_det_matches_eigenvalue_sum() {
        let mut rng = Rng::new(11);
        let data = random_dataset(&mut rng, 50, 1, 1, true);
        let k = data.kinship().unwrap();
        let c = build_covariance(0.5, k).unwrap();
        let eig = nalgebra::SymmetricEigen::new(k.clone());
        let oracle: f64 = eig.eigenvalues.iter().map(|e| (1.0 + 0.5 * e).ln()).sum();
        assert!((c.log_det_sigma - oracle).abs() < 1e-8 * oracle.abs().max(1.0));
        let two_sum = 2.0 * c.sigma_factor.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        assert!((c.log_det_sigma - two_sum).abs() <= 1e-8 * two_sum.abs().max(1.0));
    }

    #[test]
    fn indefinite_kinship_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(build_covariance(2.0, &k), Err(Error::DegenerateKinship { .. })));
        assert!(matches!(Spectrum::new(Some(&k), 2), Err(Error::DegenerateKinship { .. })));
    }

    #[test]
    fn tiny_negative_eigenvalues_clamped() {
        let v = DVector::from_vec(vec![1.0, -1.0, 0.0]) / 2f64.sqrt();
        let k = DMatrix::identity(3, 3) - &v * v.transpose() * (1.0 + 5e-9);
        let s = Spectrum::new(Some(&k), 3).unwrap();
        assert!(s.values().iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn intercept_only_alpha_is_mean() {
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 7.0]);
        let data = Dataset::new(y, Dataset::intercept(4), DMatrix::zeros(4, 0), None).unwrap();
        let cov = data.covariance(0.0).unwrap();
        let a = gls_null_alpha(&data, &cov).unwrap();
        assert!((a[0] - 3.5).abs() < 1e-14);
    }

    #[test]
    fn identity_sigma_gives_ols() {
        let mut rng = Rng::new(3);
        let data = random_dataset(&mut rng, 40, 3, 1, false);
        let cov = data.covariance(0.0).unwrap();
        let a = gls_null_alpha(&data, &cov).unwrap();
        let x = data.x();
        let ols = dense_inverse(&(x.transpose() * x)) * x.transpose() * data.y();
        assert!((a - ols).abs().max() < 1e-10);
    }

    #[test]
    fn gls_alpha_matches_dense_inverse() {
        let mut rng = Rng::new(5);
        let data = random_dataset(&mut rng, 100, 2, 1, true);
        let cov = data.covariance(0.7).unwrap();
        let a = gls_null_alpha(&data, &cov).unwrap();
        let si = dense_inverse(&cov.sigma());
        let x = data.x();
        let oracle = dense_inverse(&(x.transpose() * &si * x)) * x.transpose() * &si * data.y();
        assert!((&a - &oracle).abs().max() < 1e-8);
        let lmm = Lmm::new(data.clone()).unwrap();
        assert!((lmm.null_alpha(0.7).unwrap() - oracle).abs().max() < 1e-8);
    }

    #[test]
    fn whitening_identity_matches_ols_on_whitened_data() {
        let mut rng = Rng::new(17);
        for _ in 0..5 {
            let data = random_dataset(&mut rng, 60, 2, 1, true);
            let lambda = rng.uniform() * 3.0;
            let cov = data.covariance(lambda).unwrap();
            let a = gls_null_alpha(&data, &cov).unwrap();
            let lmm = Lmm::new(data.clone()).unwrap();
            let xs = lmm.spectrum.inv_sqrt_apply(lambda, data.x());
            let ys = lmm.spectrum.inv_sqrt_apply(lambda, &DMatrix::from_column_slice(data.n(), 1, data.y().as_slice()));
            let ols = dense_inverse(&(xs.transpose() * &xs)) * xs.transpose() * ys;
            assert!((a - ols.column(0)).abs().max() < 1e-8);
        }
    }

    #[test]
    fn simple_regression_effect() {
        let mut rng = Rng::new(8);
        let n = 30;
        let g = DMatrix::from_fn(n, 1, |_, _| rng.normal());
        let y = DVector::from_fn(n, |i, _| 0.4 * g[(i, 0)] + rng.normal());
        let data = Dataset::new(y.clone(), Dataset::intercept(n), g.clone(), None).unwrap();
        let cov = data.covariance(0.0).unwrap();
        let tau = 2.0;
        let e = gls_effect(&data, &cov, tau).unwrap();
        let gm = g.mean();
        let ym = y.mean();
        let sxx: f64 = g.iter().map(|v| (v - gm).powi(2)).sum();
        let sxy: f64 = g.iter().zip(y.iter()).map(|(a, b)| (a - gm) * (b - ym)).sum();
        assert!((e.beta_check[0] - sxy / sxx).abs() < 1e-12);
        assert!((e.v_check[(0, 0)] - 1.0 / (tau * sxx)).abs() < 1e-14);
    }

    #[test]
    fn projection_identity_for_orthogonal_effects() {
        // G ⟂ X: dropping X leaves β̂ unchanged
        let n = 8;
        let g = DMatrix::from_column_slice(n, 1, &[1.0, -1.0, 1.0, -1.0, 2.0, -2.0, 0.5, -0.5]);
        let y = DVector::from_vec(vec![0.3, 1.2, -0.4, 2.0, 0.1, 0.5, -1.0, 0.8]);
        let data = Dataset::new(y.clone(), Dataset::intercept(n), g.clone(), None).unwrap();
        let e = gls_effect(&data, &data.covariance(0.0).unwrap(), 1.0).unwrap();
        let direct = (g.transpose() * &y)[(0, 0)] / (g.transpose() * &g)[(0, 0)];
        assert!((e.beta_check[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn effect_matches_joint_whitened_regression() {
        let mut rng = Rng::new(21);
        let data = random_dataset(&mut rng, 200, 2, 3, true);
        let lambda = 0.8;
        let tau = 1.7;
        let cov = data.covariance(lambda).unwrap();
        let e = gls_effect(&data, &cov, tau).unwrap();
        // oracle: OLS of Σ^{-1/2}y on Σ^{-1/2}[X G] using the symmetric root
        let lmm = Lmm::new(data.clone()).unwrap();
        let mut full = DMatrix::zeros(data.n(), data.q() + data.p());
        full.columns_mut(0, data.q()).copy_from(data.x());
        full.columns_mut(data.q(), data.p()).copy_from(data.g());
        let zs = lmm.spectrum.inv_sqrt_apply(lambda, &full);
        let ys = lmm.spectrum.inv_sqrt_apply(lambda, &DMatrix::from_column_slice(data.n(), 1, data.y().as_slice()));
        let inv = dense_inverse(&(zs.transpose() * &zs));
        let coef = &inv * zs.transpose() * ys;
        for j in 0..data.p() {
            assert!((e.beta_check[j] - coef[(data.q() + j, 0)]).abs() < 1e-8);
            for k in 0..data.p() {
                let oracle_v = inv[(data.q() + j, data.q() + k)] / tau;
                assert!((e.v_check[(j, k)] - oracle_v).abs() < 1e-8 * oracle_v.abs().max(1e-3));
            }
        }
        // spectral route agrees
        let e2 = lmm.gls_effect(lambda, tau, &[0, 1, 2]).unwrap();
        assert!((&e.beta_check - &e2.beta_check).abs().max() < 1e-8);
        assert!((&e.v_check - &e2.v_check).abs().max() < 1e-10);
    }

    #[test]
    fn collinear_effects_reported() {
        let mut rng = Rng::new(2);
        let data = random_dataset(&mut rng, 50, 1, 1, false);
        let g = data.g().clone();
        let mut g2 = DMatrix::zeros(50, 2);
        g2.column_mut(0).copy_from(&g.column(0));
        g2.column_mut(1).copy_from(&g.column(0));
        let d2 = data.with_effects(g2).unwrap();
        let r = gls_effect(&d2, &d2.covariance(0.0).unwrap(), 1.0);
        assert!(matches!(r, Err(Error::CollinearEffects)));
    }

    #[test]
    fn tau_profile_null_formula() {
        let mut rng = Rng::new(4);
        let data = random_dataset(&mut rng, 80, 2, 1, true);
        let lmm = Lmm::new(data.clone()).unwrap();
        let lambda = 1.3;
        let tau = lmm.tau_profile(lambda, 0.0, &[0]).unwrap();
        let cov = data.covariance(lambda).unwrap();
        let a = gls_null_alpha(&data, &cov).unwrap();
        let r = data.y() - data.x() * a;
        let si = dense_inverse(&cov.sigma());
        let rss = (r.transpose() * si * &r)[(0, 0)];
        assert!((tau - 80.0 / rss).abs() < 1e-9 * tau);
    }

    #[test]
    fn perfect_fit_detected() {
        let n = 20;
        let mut rng = Rng::new(9);
        let g = DMatrix::from_fn(n, 1, |_, _| rng.normal());
        let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * g[(i, 0)]);
        let data = Dataset::new(y, Dataset::intercept(n), g, None).unwrap();
        let lmm = Lmm::new(data).unwrap();
        assert!(matches!(lmm.tau_profile(0.0, 1.0, &[0]), Err(Error::PerfectFit)));
    }

    /// g_a(λ, τ) for fixed λ, maximized over a fine τ grid.
    #[test]
    fn tau_profile_maximizes_g() {
        let mut rng = Rng::new(13);
        let data = random_dataset(&mut rng, 90, 2, 2, true);
        let lmm = Lmm::new(data).unwrap();
        let (lambda, kappa) = (0.6, 0.5);
        let parts = lmm.gls_parts(lambda, &[0, 1]).unwrap();
        let n = 90.0;
        let g_a = |tau: f64| {
            0.5 * n * tau.ln()
                - 0.5 * lmm.spectrum.log_det(lambda)
                - 0.5 * tau * ((1.0 - kappa) * parts.rss_null + kappa * parts.rss_full)
        };
        let tau_hat = lmm.tau_profile(lambda, kappa, &[0, 1]).unwrap();
        // golden-section on log tau around a coarse grid max
        let grid: Vec<f64> = (0..2001).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 2000.0)).collect();
        let best = grid.iter().cloned().fold((0.0, f64::NEG_INFINITY), |acc, t| {
            let v = g_a(t);
            if v > acc.1 {
                (t, v)
            } else {
                acc
            }
        });
        let refined = brent_max(|lt| g_a(lt.exp()), (best.0 / 1.01).ln(), (best.0 * 1.01).ln(), 1e-12, 500);
        let tau_grid = refined.x.exp();
        assert!((tau_grid - tau_hat).abs() < 1e-6 * tau_hat);
    }

    #[test]
    fn decomposition_identity() {
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 70, 2, 3, true);
            let lmm = Lmm::new(data).unwrap();
            let lambda = rng.uniform() * 4.0;
            let tau = 0.2 + rng.uniform() * 3.0;
            let parts = lmm.gls_parts(lambda, &[0, 1, 2]).unwrap();
            let e = lmm.gls_effect(lambda, tau, &[0, 1, 2]).unwrap();
            let vinv = dense_inverse(&e.v_check);
            let quad = (e.beta_check.transpose() * vinv * &e.beta_check)[(0, 0)];
            let lhs = tau * parts.rss_null;
            let rhs = quad + tau * parts.rss_full;
            assert!((lhs - rhs).abs() < 1e-6 * lhs);
        }
    }

    #[test]
    fn kinship_free_objective_is_flat() {
        let mut rng = Rng::new(1);
        let data = random_dataset(&mut rng, 50, 2, 1, false);
        let lmm = Lmm::new(data.clone()).unwrap();
        let a = lmm.profile_objective(1e-3, 0.0, &[]).unwrap();
        let b = lmm.profile_objective(1e3, 0.0, &[]).unwrap();
        assert!((a - b).abs() < 1e-10);
        let fit = lmm.fit_null().unwrap();
        assert!(fit.flat_objective);
        assert!((fit.lambda_check - 1e-6).abs() < 1e-18);
        let cov = data.covariance(0.0).unwrap();
        let alpha = gls_null_alpha(&data, &cov).unwrap();
        let r = data.y() - data.x() * alpha;
        assert!((fit.tau_check - 50.0 / r.norm_squared()).abs() < 1e-10 * fit.tau_check);
    }

    #[test]
    fn zero_lambda_objective_is_ols_profile() {
        let mut rng = Rng::new(6);
        let data = random_dataset(&mut rng, 40, 2, 1, true);
        let lmm = Lmm::new(data.clone()).unwrap();
        let l = lmm.profile_objective(0.0, 0.0, &[]).unwrap();
        let x = data.x();
        let beta = dense_inverse(&(x.transpose() * x)) * x.transpose() * data.y();
        let rss = (data.y() - x * beta).norm_squared();
        assert!((l - 20.0 * (40.0 / rss).ln()).abs() < 1e-10);
    }

    #[test]
    fn optimizer_beats_random_probes_and_grid() {
        let mut rng = Rng::new(44);
        let data = crate::testutil::random_effect_dataset(&mut rng, 100, 1.0, 1.0);
        let lmm = Lmm::new(data).unwrap();
        let fit = lmm.fit_null().unwrap();
        assert!(fit.converged);
        for _ in 0..50 {
            let t = -6.0 + 12.0 * rng.uniform();
            let v = lmm.profile_objective(10f64.powf(t), 0.0, &[]).unwrap();
            assert!(fit.objective_value >= v - 1e-9);
        }
        let grid: Vec<f64> = (0..200).map(|i| -6.0 + 12.0 * i as f64 / 199.0).collect();
        let (bt, _) = grid.iter().fold((0.0, f64::NEG_INFINITY), |acc, &t| {
            let v = lmm.profile_objective(10f64.powf(t), 0.0, &[]).unwrap();
            if v > acc.1 {
                (t, v)
            } else {
                acc
            }
        });
        assert!((fit.lambda_check.log10() - bt).abs() <= 12.0 / 199.0);
        // local maximum: one-sided decrease
        let h = 1e-3;
        let at = |t: f64| lmm.profile_objective(10f64.powf(t), 0.0, &[]).unwrap();
        let t0 = fit.lambda_check.log10();
        assert!(at(t0 - h) <= fit.objective_value + 1e-10);
        assert!(at(t0 + h) <= fit.objective_value + 1e-10);
    }

    #[test]
    fn endpoint_consistency() {
        let mut rng = Rng::new(45);
        let data = crate::testutil::random_effect_dataset(&mut rng, 80, 2.0, 1.0);
        let lmm = Lmm::new(data).unwrap();
        let f0 = lmm.fit_null().unwrap();
        assert_eq!(f0.tau_check, lmm.tau_profile(f0.lambda_check, 0.0, &[]).unwrap());
        let f1 = lmm.optimize_lambda(1.0, &[0], &OptimizerConfig::default()).unwrap();
        assert_eq!(f1.tau_check, lmm.tau_profile(f1.lambda_check, 1.0, &[0]).unwrap());
        // null alpha at κ=0
        let a = lmm.null_alpha(f0.lambda_check).unwrap();
        assert!((a - &f0.alpha).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = DVector::from_vec(vec![1.0, f64::NAN, 2.0]);
        assert!(matches!(
            Dataset::new(y, Dataset::intercept(3), DMatrix::zeros(3, 0), None),
            Err(Error::NonFinite(_))
        ));
        let y = DVector::from_vec(vec![1.0]);
        assert!(Dataset::new(y, Dataset::intercept(1), DMatrix::zeros(1, 0), None).is_err());
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(Dataset::new(y, x, DMatrix::zeros(3, 0), None), Err(Error::SingularDesign)));
    }
}
