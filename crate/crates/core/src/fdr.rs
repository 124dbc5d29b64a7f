//! Discovery sets at a target false discovery rate: a Bayesian rule on posterior
//! null probabilities derived from Bayes factors, and the Benjamini-Hochberg and
//! Storey step-up procedures for p-values.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdrMethod {
    BayesEbf,
    BenjaminiHochberg,
    Storey,
}

#[derive(Debug, Clone)]
pub struct DiscoverySet {
    pub decisions: Vec<bool>,
    /// Posterior null probabilities (Bayesian rule only, empty otherwise).
    pub posterior_null: Vec<f64>,
    /// Largest accepted posterior null probability or p-value; `NaN` when nothing is rejected.
    pub threshold: f64,
    pub target_alpha: f64,
    pub method: FdrMethod,
    /// Null proportion used by the rule.
    pub pi0: f64,
}

impl DiscoverySet {
    pub fn n_rejected(&self) -> usize {
        self.decisions.iter().filter(|&&d| d).count()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `P₀ᵢ = π₀ / (π₀ + (1-π₀) BFᵢ)`, computed on the log scale.
pub fn posterior_null(log10_bf: f64, pi0: f64) -> f64 {
    if pi0 >= 1.0 {
        return 1.0;
    }
    // 1 / (1 + exp(ln((1-π₀)/π₀) + ln BF))
    let z = ((1.0 - pi0) / pi0).ln() + log10_bf * std::f64::consts::LN_10;
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Rejects the largest set of smallest posterior null probabilities whose mean
/// stays at or below `alpha`. `pi0 = 1` never rejects.
pub fn bayes_fdr(log10_bfs: &[f64], pi0: f64, alpha: f64) -> Result<DiscoverySet> {
    check_alpha(alpha)?;
    if !(pi0 > 0.0 && pi0 <= 1.0) {
        return Err(Error::invalid(format!("pi0 must lie in (0, 1], got {pi0}")));
    }
    if log10_bfs.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::NonFinite("Bayes factors".into()));
    }
    let post: Vec<f64> = log10_bfs.iter().map(|&b| posterior_null(b, pi0)).collect();
    let mut order: Vec<usize> = (0..post.len()).collect();
    order.sort_by(|&a, &b| post[a].total_cmp(&post[b]).then(a.cmp(&b)));
    let mut running = 0.0;
    let mut accepted = 0;
    for (i, &idx) in order.iter().enumerate() {
        running += post[idx];
        if running / (i + 1) as f64 <= alpha {
            accepted = i + 1;
        }
    }
    let mut decisions = vec![false; post.len()];
    for &idx in &order[..accepted] {
        decisions[idx] = true;
    }
    let threshold = if accepted > 0 { post[order[accepted - 1]] } else { f64::NAN };
    Ok(DiscoverySet { decisions, posterior_null: post, threshold, target_alpha: alpha, method: FdrMethod::BayesEbf, pi0 })
}

fn check_pvalues(p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("p-value {v} outside [0, 1]")));
    }
    Ok(())
}

fn step_up(p: &[f64], alpha: f64, pi0: f64, method: FdrMethod) -> DiscoverySet {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut k = 0;
    for (i, &idx) in order.iter().enumerate() {
        if p[idx] * pi0 * m as f64 <= alpha * (i + 1) as f64 {
            k = i + 1;
        }
    }
    let threshold = if k > 0 { p[order[k - 1]] } else { f64::NAN };
    let decisions = p.iter().map(|&v| k > 0 && v <= threshold).collect();
    DiscoverySet { decisions, posterior_null: Vec::new(), threshold, target_alpha: alpha, method, pi0 }
}

pub fn bh_fdr(pvalues: &[f64], alpha: f64) -> Result<DiscoverySet> {
    check_alpha(alpha)?;
    check_pvalues(pvalues)?;
    Ok(step_up(pvalues, alpha, 1.0, FdrMethod::BenjaminiHochberg))
}

/// `π̂₀ = #{p > λ} / ((1-λ) m)`, clamped to `(0, 1]`.
pub fn storey_pi0(pvalues: &[f64], lambda_tuning: f64) -> f64 {
    let m = pvalues.len() as f64;
    let above = pvalues.iter().filter(|&&p| p > lambda_tuning).count() as f64;
    (above / ((1.0 - lambda_tuning) * m)).clamp(1.0 / m.max(1.0), 1.0)
}

pub fn storey_fdr(pvalues: &[f64], alpha: f64, lambda_tuning: f64) -> Result<DiscoverySet> {
    check_alpha(alpha)?;
    check_pvalues(pvalues)?;
    if !(lambda_tuning > 0.0 && lambda_tuning < 1.0) {
        return Err(Error::invalid(format!("Storey tuning must lie in (0, 1), got {lambda_tuning}")));
    }
    let pi0 = storey_pi0(pvalues, lambda_tuning);
    Ok(step_up(pvalues, alpha, pi0, FdrMethod::Storey))
}
