//! Prior covariances `W` for the effects of interest.
//!
//! Every prior is stored through a factor `B` with `W = B Bᵀ`. The ABF only
//! ever needs `B`, which keeps rank-deficient priors (burden, single SNP) exact
//! and lets a φ grid reuse one eigendecomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PriorKind {
    /// `(√w)(√w)ᵀ`: one shared, sign-consistent effect.
    Burden,
    /// `diag(w)`: independent effects of either sign.
    Skat,
    /// `(1-ρ) diag(w) + ρ (√w)(√w)ᵀ`.
    SkatO(f64),
    /// Only SNP `i` has an effect.
    CvSingleton(usize),
    /// `diag(γ)` for a binary inclusion vector.
    SpikeSlab(Vec<bool>),
    /// `c V̌`, the prior under which the ABF is a monotone transform of the
    /// Wald or score statistic. It depends on the data and is resolved in [`crate::abf`].
    ScaledV(f64),
}

impl PriorKind {
    pub fn tag(&self) -> String {
        match self {
            PriorKind::Burden => "burden".into(),
            PriorKind::Skat => "skat".into(),
            PriorKind::SkatO(rho) => format!("skato({rho})"),
            PriorKind::CvSingleton(i) => format!("cv({i})"),
            PriorKind::SpikeSlab(g) => format!("spikeslab({})", g.iter().filter(|&&b| b).count()),
            PriorKind::ScaledV(c) => format!("scaledv({c})"),
        }
    }
}

/// `W = φ² W₀(kind, w)`, additionally divided by `τ̌` when `standardized`.
#[derive(Debug, Clone)]
pub struct EffectPrior {
    pub kind: PriorKind,
    pub weights: DVector<f64>,
    pub phi: f64,
    pub standardized: bool,
}

impl EffectPrior {
    pub fn new(kind: PriorKind, weights: DVector<f64>, phi: f64, standardized: bool) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("prior weights must be finite and nonnegative"));
        }
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::invalid(format!("phi must be positive, got {phi}")));
        }
        let p = weights.len();
        match &kind {
            PriorKind::SkatO(rho) if !(0.0..=1.0).contains(rho) => {
                return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
            }
            PriorKind::CvSingleton(i) if *i >= p => {
                return Err(Error::invalid(format!("singleton index {i} out of range (p = {p})")));
            }
            PriorKind::SpikeSlab(g) if g.len() != p => {
                return Err(Error::dims(format!("inclusion vector has length {}, expected {p}", g.len())));
            }
            PriorKind::ScaledV(c) if !(*c > 0.0) || !c.is_finite() => {
                return Err(Error::invalid(format!("scale c must be positive, got {c}")));
            }
            _ => {}
        }
        Ok(EffectPrior { kind, weights, phi, standardized })
    }

    /// Unit-weight prior of dimension `p`.
    pub fn unweighted(kind: PriorKind, p: usize, phi: f64, standardized: bool) -> Result<Self> {
        Self::new(kind, DVector::from_element(p, 1.0), phi, standardized)
    }

    pub fn p(&self) -> usize {
        self.weights.len()
    }

    pub fn with_phi(&self, phi: f64) -> Result<Self> {
        Self::new(self.kind.clone(), self.weights.clone(), phi, self.standardized)
    }

    /// Factor of the unscaled structure `W₀` (`φ = 1`, no `τ` scaling).
    pub fn base_factor(&self) -> Result<DMatrix<f64>> {
        let p = self.p();
        let sw = self.weights.map(f64::sqrt);
        let b = match &self.kind {
            PriorKind::Burden => DMatrix::from_column_slice(p, 1, sw.as_slice()),
            PriorKind::Skat => diag_columns(&sw, |_| true),
            PriorKind::SkatO(rho) => {
                let s = diag_columns(&sw, |_| true) * (1.0 - rho).sqrt();
                let mut b = DMatrix::zeros(p, s.ncols() + 1);
                b.columns_mut(0, s.ncols()).copy_from(&s);
                b.column_mut(s.ncols()).copy_from(&(&sw * rho.sqrt()));
                b
            }
            PriorKind::CvSingleton(i) => diag_columns(&DVector::from_element(p, 1.0), |j| j == *i),
            PriorKind::SpikeSlab(g) => diag_columns(&DVector::from_element(p, 1.0), |j| g[j]),
            PriorKind::ScaledV(_) => {
                return Err(Error::invalid("the scaled-V prior depends on the data; use abf::implicit_pvalue_abf"))
            }
        };
        Ok(b)
    }

    /// Multiplier on `B₀` at the given `τ̌`.
    pub fn factor_scale(&self, tau_check: f64) -> f64 {
        if self.standardized {
            self.phi / tau_check.sqrt()
        } else {
            self.phi
        }
    }

    pub fn factor(&self, tau_check: f64) -> Result<DMatrix<f64>> {
        Ok(self.base_factor()? * self.factor_scale(tau_check))
    }

    /// Dense `W` at the given `τ̌`.
    pub fn materialize(&self, tau_check: f64) -> Result<DMatrix<f64>> {
        if self.standardized && (!(tau_check > 0.0) || !tau_check.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {tau_check}")));
        }
        let b = self.factor(tau_check)?;
        let mut w = &b * b.transpose();
        crate::linalg::symmetrize(&mut w);
        Ok(w)
    }
}

fn diag_columns(values: &DVector<f64>, keep: impl Fn(usize) -> bool) -> DMatrix<f64> {
    let p = values.len();
    let idx: Vec<usize> = (0..p).filter(|&j| keep(j) && values[j] > 0.0).collect();
    let mut b = DMatrix::zeros(p, idx.len());
    for (c, &j) in idx.iter().enumerate() {
        b[(j, c)] = values[j];
    }
    b
}

/// `wⱼ = Beta(MAFⱼ; 1, 25) = 25 (1 - MAFⱼ)²⁴`, optionally rescaled to sum to one.
pub fn snp_weights(mafs: &[f64], renormalize: bool) -> Result<DVector<f64>> {
    if let Some(m) = mafs.iter().find(|&&m| !(m > 0.0 && m <= 0.5)) {
        return Err(Error::invalid(format!("minor allele frequency {m} outside (0, 0.5]")));
    }
    let mut w = DVector::from_iterator(mafs.len(), mafs.iter().map(|m| 25.0 * (1.0 - m).powi(24)));
    if renormalize && !w.is_empty() {
        let s = w.sum();
        w /= s;
    }
    Ok(w)
}

/// Discrete mixture over the effect scale φ.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiGrid {
    pub phis: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PhiGrid {
    pub fn new(phis: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if phis.is_empty() {
            return Err(Error::invalid("phi grid is empty"));
        }
        if phis.len() != weights.len() {
            return Err(Error::dims("phi grid and weights differ in length"));
        }
        if phis.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("phi values must be positive and finite"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("phi weights must be a probability vector"));
        }
        Ok(PhiGrid { phis, weights })
    }

    pub fn uniform(phis: Vec<f64>) -> Result<Self> {
        let w = vec![1.0 / phis.len().max(1) as f64; phis.len()];
        Self::new(phis, w)
    }

    pub fn single(phi: f64) -> Result<Self> {
        Self::new(vec![phi], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phis.is_empty()
    }
}

impl Default for PhiGrid {
    /// `{0.1, 0.2, 0.4, 0.8, 1.6}` with equal weights.
    fn default() -> Self {
        PhiGrid::uniform(vec![0.1, 0.2, 0.4, 0.8, 1.6]).expect("valid default grid")
    }
}
