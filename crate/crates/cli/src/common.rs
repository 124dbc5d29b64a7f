use std::fmt;
use std::path::{Path, PathBuf};

use blmm::io::{self, GenotypeTable};
use blmm::priors::PhiGrid;
use blmm::Error;
use clap::Args;
use nalgebra::{DMatrix, DVector};

pub const DEFAULT_PHI: [f64; 5] = [0.1, 0.2, 0.4, 0.8, 1.6];

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Flat `key=value` file of flag values; flags given on the command line win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (0 = one per core); results do not depend on it
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// 2 for bad input, 3 for numerical failures, 4 when the quadrature oracle fails.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::OracleFailure(_) => 4,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for blmm::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure { code: exit_code(&e), message: format!("{}: {e}", what()) })
    }
}

pub fn phi_grid(phis: &[f64]) -> CliResult<PhiGrid> {
    Ok(PhiGrid::uniform(phis.to_vec())?)
}

pub fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| io::fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

/// Genotypes with phenotype, covariates (intercept first) and kinship aligned
/// to the genotype sample order.
pub struct Inputs {
    pub genotypes: GenotypeTable,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub kinship: Option<DMatrix<f64>>,
}

pub fn load_covariates(path: Option<&Path>, samples: &[String]) -> CliResult<DMatrix<f64>> {
    let n = samples.len();
    let Some(path) = path else {
        return Ok(DMatrix::from_element(n, 1, 1.0));
    };
    let c = io::load_labeled(path)?;
    let idx = io::align(samples, &c.row_ids, "covariates")?;
    Ok(DMatrix::from_fn(n, c.values.ncols() + 1, |i, j| if j == 0 { 1.0 } else { c.values[(idx[i], j - 1)] }))
}

pub fn load_kinship(path: &Path, samples: &[String]) -> CliResult<DMatrix<f64>> {
    let (ids, k) = io::load_kinship(path)?;
    let idx = io::align(samples, &ids, "kinship")?;
    Ok(DMatrix::from_fn(samples.len(), samples.len(), |i, j| k[(idx[i], idx[j])]))
}

pub fn load_inputs(
    genotypes: &Path,
    phenotype: &Path,
    covariates: Option<&Path>,
    kinship: Option<&Path>,
) -> CliResult<Inputs> {
    let table = io::load_genotypes(genotypes)?;
    let (ids, values) = io::load_phenotype(phenotype)?;
    let idx = io::align(&table.sample_ids, &ids, "phenotype")?;
    let y = DVector::from_fn(idx.len(), |i, _| values[idx[i]]);
    let x = load_covariates(covariates, &table.sample_ids)?;
    let kinship = kinship.map(|p| load_kinship(p, &table.sample_ids)).transpose()?;
    Ok(Inputs { genotypes: table, y, x, kinship })
}

pub fn is_monomorphic(col: nalgebra::DVectorView<'_, f64>) -> bool {
    col.iter().all(|&v| v == col[0])
}
