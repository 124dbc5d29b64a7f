use std::path::PathBuf;

use blmm::io::{self, fmt_f64, write_table};
use blmm::oracle::{abf_accuracy_sweep, summarize, OracleConfig};
use clap::{ArgAction, Args};
use nalgebra::DVector;

use crate::common::{join_f64, load_kinship, phi_grid, CliResult, Failure, RunArgs, DEFAULT_PHI};

/// Single-SNP ABF accuracy against the quadrature Bayes factor on the first
/// `n` individuals, for each requested `n`.
#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ValidateArgs {
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long)]
    pub phenotype: PathBuf,
    #[arg(long)]
    pub kinship: PathBuf,
    /// Sample sizes (default: all individuals)
    #[arg(long, action = ArgAction::Set, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = DEFAULT_PHI)]
    pub phi: Vec<f64>,
    /// Accuracy threshold on |log10 ABF - log10 BF|
    #[arg(long, default_value_t = 0.15)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub quad_tol: f64,
    #[arg(long, default_value_t = 40)]
    pub quad_max_depth: usize,
    #[arg(long, default_value_t = -8.0, allow_negative_numbers = true)]
    pub ln_lambda_lo: f64,
    #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
    pub ln_lambda_hi: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn run(args: &ValidateArgs) -> CliResult<()> {
    let grid = phi_grid(&args.phi)?;
    let table = io::load_genotypes(&args.genotypes)?;
    let (ids, values) = io::load_phenotype(&args.phenotype)?;
    let idx = io::align(&table.sample_ids, &ids, "phenotype")?;
    let y = DVector::from_fn(idx.len(), |i, _| values[idx[i]]);
    let kinship = load_kinship(&args.kinship, &table.sample_ids)?;
    let sizes = if args.sizes.is_empty() { vec![y.len()] } else { args.sizes.clone() };
    if sizes.iter().any(|&n| n > y.len()) {
        return Err(Failure::input(format!("sample sizes {sizes:?} exceed the {} individuals", y.len())));
    }
    let config = OracleConfig {
        ln_lambda_bounds: (args.ln_lambda_lo, args.ln_lambda_hi),
        quad_tol: args.quad_tol,
        max_depth: args.quad_max_depth,
        ..OracleConfig::default()
    };
    let rows = abf_accuracy_sweep(&table.dosages, &y, &kinship, &sizes, &grid, &config)?;

    let mut preamble = vec![
        "command=validate-abf".to_string(),
        format!("sizes={}", sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
        format!("phi={}", join_f64(&args.phi)),
        format!("tolerance={}", fmt_f64(args.tolerance)),
        format!("quad_tol={}", fmt_f64(args.quad_tol)),
        format!("ln_lambda_bounds={},{}", fmt_f64(args.ln_lambda_lo), fmt_f64(args.ln_lambda_hi)),
    ];
    for &n in &sizes {
        let s = summarize(&rows, n);
        let in_range: Vec<_> = rows.iter().filter(|r| r.n == n && (0.0..=10.0).contains(&r.log10_bf_numeric)).collect();
        let within = |k1: bool| {
            let hits = in_range.iter().filter(|r| r.error(k1).abs() < args.tolerance).count();
            if in_range.is_empty() { f64::NAN } else { hits as f64 / in_range.len() as f64 }
        };
        preamble.push(format!(
            "n={n} snps={} median_abs_k0={} median_abs_k1={} median_signed_k0={} median_signed_k1={} in_range={} within_tol_k0={} within_tol_k1={}",
            s.snps,
            fmt_f64(s.median_abs_k0),
            fmt_f64(s.median_abs_k1),
            fmt_f64(s.median_signed_k0),
            fmt_f64(s.median_signed_k1),
            in_range.len(),
            fmt_f64(within(false)),
            fmt_f64(within(true)),
        ));
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                table.snp_ids[r.snp].clone(),
                fmt_f64(r.log10_bf_numeric),
                fmt_f64(r.log10_abf_k0),
                fmt_f64(r.log10_abf_k1),
                fmt_f64(r.error(false)),
                fmt_f64(r.error(true)),
            ]
        })
        .collect();
    let header = ["n", "snp_id", "log10_bf_numeric", "log10_abf_k0", "log10_abf_k1", "error_k0", "error_k1"];
    write_table(&args.run.out, &preamble, &header, &body)?;
    Ok(())
}
