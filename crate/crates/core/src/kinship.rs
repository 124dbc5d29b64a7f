//! Genomic relatedness from genotype dosages.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `K = Z Zᵀ / m`, where `Z` holds the standardized polymorphic columns of the
/// `n × m` dosage matrix. Monomorphic columns are dropped before counting `m`.
pub fn estimate_kinship(genotypes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = genotypes.nrows();
    if n == 0 || genotypes.ncols() == 0 {
        return Err(Error::EmptyGenotypes);
    }
    if !crate::linalg::all_finite(genotypes.iter()) {
        return Err(Error::NonFinite("genotypes".into()));
    }
    let mut kept = Vec::new();
    for col in genotypes.column_iter() {
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if var > 1e-12 {
            let sd = var.sqrt();
            kept.push(col.map(|v| (v - mean) / sd));
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyGenotypes);
    }
    let z = DMatrix::from_columns(&kept);
    let mut k = &z * z.transpose() / kept.len() as f64;
    crate::linalg::symmetrize(&mut k);
    Ok(k)
}
