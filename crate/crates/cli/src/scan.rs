use std::path::PathBuf;

use blmm::abf::Anchor;
use blmm::io::{fmt_f64, write_table};
use blmm::kinship::estimate_kinship;
use blmm::settest::single_snp_log10;
use blmm::{Dataset, Lmm};
use clap::{ArgAction, Args};
use rayon::prelude::*;

use crate::common::{is_monomorphic, join_f64, load_inputs, phi_grid, CliResult, Context, RunArgs, DEFAULT_PHI};

/// Single-SNP scan: one null fit, then per-SNP ABFs at κ = 0 and κ = 1.
#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ScanArgs {
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long)]
    pub phenotype: PathBuf,
    /// Covariates; an intercept is always added
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Kinship matrix; estimated from the scanned genotypes when absent
    #[arg(long)]
    pub kinship: Option<PathBuf>,
    /// Prior effect scales, averaged with equal weights
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = DEFAULT_PHI)]
    pub phi: Vec<f64>,
    /// Scale the prior by the residual variance
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub standardized: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

struct Row {
    beta: f64,
    se: f64,
    k0: f64,
    k1: f64,
    wald: f64,
    score: f64,
    flag: &'static str,
}

impl Row {
    fn uninformative(flag: &'static str) -> Self {
        Row { beta: f64::NAN, se: f64::NAN, k0: 0.0, k1: 0.0, wald: f64::NAN, score: f64::NAN, flag }
    }
}

pub fn run(args: &ScanArgs) -> CliResult<()> {
    let grid = phi_grid(&args.phi)?;
    let inputs = load_inputs(&args.genotypes, &args.phenotype, args.covariates.as_deref(), args.kinship.as_deref())?;
    let table = &inputs.genotypes;
    let (kinship, kinship_source) = match inputs.kinship {
        Some(k) => (k, "provided"),
        None => (estimate_kinship(&table.dosages).context(|| "estimating kinship".into())?, "estimated"),
    };
    let data = Dataset::new(inputs.y, inputs.x, table.dosages.clone(), Some(kinship))?;
    let lmm = Lmm::new(data)?;
    let null = lmm.fit_null().context(|| "null model fit".into())?;

    let rows: Vec<CliResult<Row>> = (0..lmm.p())
        .into_par_iter()
        .map(|j| {
            if is_monomorphic(lmm.dataset().g().column(j)) {
                return Ok(Row::uninformative("monomorphic"));
            }
            let ctx = || format!("SNP {}", table.snp_ids[j]);
            let a0 = Anchor::null(&lmm, &null, &[j]).context(ctx)?;
            let a1 = Anchor::fit(&lmm, 1.0, &[j]).context(ctx)?;
            // no variation left after removing the covariates
            if !(a0.info.precision[(0, 0)] > 1e-12 * a0.tau && a1.info.precision[(0, 0)] > 1e-12 * a1.tau) {
                return Ok(Row::uninformative("collinear"));
            }
            let v = 1.0 / a1.info.precision[(0, 0)];
            Ok(Row {
                beta: a1.info.score[0] * v,
                se: v.sqrt(),
                k0: single_snp_log10(&a0, &grid, args.standardized),
                k1: single_snp_log10(&a1, &grid, args.standardized),
                wald: a1.info.quad_form(),
                score: a0.info.quad_form(),
                flag: "ok",
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].k0.total_cmp(&rows[a].k0).then(a.cmp(&b)));
    let mut rank = vec![0; rows.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }

    let na = |v: f64| if v.is_nan() { "NA".to_string() } else { fmt_f64(v) };
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(j, r)| {
            vec![
                table.snp_ids[j].clone(),
                na(r.beta),
                na(r.se),
                fmt_f64(r.k0),
                fmt_f64(r.k1),
                na(r.wald),
                na(r.score),
                rank[j].to_string(),
                r.flag.to_string(),
            ]
        })
        .collect();
    let preamble = vec![
        "command=scan".to_string(),
        format!("n={}", lmm.n()),
        format!("snps={}", lmm.p()),
        format!("kinship={kinship_source}"),
        format!("phi={}", join_f64(&args.phi)),
        format!("standardized={}", args.standardized),
        format!("null_lambda={}", fmt_f64(null.lambda_check)),
        format!("null_tau={}", fmt_f64(null.tau_check)),
    ];
    let header = ["snp_id", "beta", "se", "log10_abf_k0", "log10_abf_k1", "wald", "score", "rank", "flag"];
    write_table(&args.run.out, &preamble, &header, &body)?;
    Ok(())
}
