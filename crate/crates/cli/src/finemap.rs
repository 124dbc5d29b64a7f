use std::collections::HashMap;
use std::path::PathBuf;

use blmm::finemap::{enumerate_posterior, mcmc_finemap, whiten, FinemapModel, McmcConfig, P1Spec};
use blmm::io::{fmt_f64, write_table};
use blmm::{Dataset, Lmm};
use clap::{ArgAction, Args};
use nalgebra::DMatrix;

use crate::common::{join_f64, load_inputs, phi_grid, CliResult, Context, Failure, RunArgs, DEFAULT_PHI};

/// Fine-mapping of one region by MCMC over inclusion indicators. `--out` is a
/// directory receiving `pip.tsv` and `models.tsv`.
#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct FinemapArgs {
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long)]
    pub phenotype: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub kinship: Option<PathBuf>,
    /// Restrict the region to these SNP ids (default: every SNP in the file)
    #[arg(long, action = ArgAction::Set, value_delimiter = ',')]
    pub snps: Vec<String>,
    /// Fixed prior inclusion probability; overrides the log10 grid
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long, default_value_t = -2.71, allow_negative_numbers = true)]
    pub p1_log10_lo: f64,
    #[arg(long, default_value_t = -1.40, allow_negative_numbers = true)]
    pub p1_log10_hi: f64,
    #[arg(long, default_value_t = 17)]
    pub p1_points: usize,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = DEFAULT_PHI)]
    pub phi: Vec<f64>,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub standardized: bool,
    #[arg(long, default_value_t = 150_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 300_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, default_value_t = 20)]
    pub top_models: usize,
    /// Also enumerate the exact posterior when the region has at most this many SNPs
    #[arg(long, default_value_t = 12)]
    pub enumerate_max: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

impl FinemapArgs {
    fn p1_spec(&self) -> P1Spec {
        match self.p1 {
            Some(p) => P1Spec::Point(p),
            None => P1Spec::Log10Uniform { lo: self.p1_log10_lo, hi: self.p1_log10_hi, points: self.p1_points },
        }
    }

    fn echo(&self, n: usize, p: usize) -> Vec<String> {
        let p1 = match self.p1_spec() {
            P1Spec::Point(v) => format!("point:{}", fmt_f64(v)),
            P1Spec::Log10Uniform { lo, hi, points } => format!("log10-uniform:{},{},{points}", fmt_f64(lo), fmt_f64(hi)),
        };
        vec![
            "command=finemap".to_string(),
            format!("n={n}"),
            format!("snps={p}"),
            format!("p1={p1}"),
            format!("phi={}", join_f64(&self.phi)),
            format!("standardized={}", self.standardized),
            format!("burn_in={}", self.burn_in),
            format!("samples={}", self.samples),
            format!("chains={}", self.chains),
            format!("top_models={}", self.top_models),
            format!("seed={}", self.run.seed),
        ]
    }
}

pub fn run(args: &FinemapArgs) -> CliResult<()> {
    let grid = phi_grid(&args.phi)?;
    let p1 = args.p1_spec();
    p1.values()?;
    let inputs = load_inputs(&args.genotypes, &args.phenotype, args.covariates.as_deref(), args.kinship.as_deref())?;
    let table = &inputs.genotypes;
    let cols: Vec<usize> = if args.snps.is_empty() {
        (0..table.snp_ids.len()).collect()
    } else {
        let index: HashMap<&str, usize> = table.snp_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        args.snps
            .iter()
            .map(|s| index.get(s.as_str()).copied().ok_or_else(|| Failure::input(format!("unknown SNP `{s}`"))))
            .collect::<CliResult<_>>()?
    };
    let ids: Vec<&String> = cols.iter().map(|&j| &table.snp_ids[j]).collect();
    let g = DMatrix::from_fn(table.dosages.nrows(), cols.len(), |i, j| table.dosages[(i, cols[j])]);
    let data = Dataset::new(inputs.y, inputs.x, g, inputs.kinship)?;
    let null = Lmm::new(data.clone())?.fit_null().context(|| "null model fit".into())?;
    let whitened = whiten(&data, &null)?;
    let model = FinemapModel::new(&whitened, &p1, &grid, args.standardized)?;
    let config = McmcConfig {
        n_burn: args.burn_in,
        n_keep: args.samples,
        n_chains: args.chains,
        seed: args.run.seed,
        top_models: args.top_models,
    };
    let report = mcmc_finemap(&model, &config)?;
    let exact = if model.p() <= args.enumerate_max { Some(enumerate_posterior(&model, args.enumerate_max)?) } else { None };

    let mut preamble = args.echo(data.n(), model.p());
    preamble.push(format!("null_lambda={}", fmt_f64(null.lambda_check)));
    preamble.push(format!("null_tau={}", fmt_f64(null.tau_check)));
    for c in &report.chains {
        preamble.push(format!("chain{}_acceptance={}", c.chain + 1, fmt_f64(c.acceptance_rate)));
    }

    let mut header: Vec<String> = vec!["snp_id".into(), "pip".into()];
    for c in &report.chains {
        header.push(format!("pip_chain{}", c.chain + 1));
        header.push(format!("se_chain{}", c.chain + 1));
    }
    if exact.is_some() {
        header.push("pip_exact".into());
    }
    let rows: Vec<Vec<String>> = (0..model.p())
        .map(|j| {
            let mut r = vec![ids[j].clone(), fmt_f64(report.pip[j])];
            for c in &report.chains {
                r.push(fmt_f64(c.pip[j]));
                r.push(fmt_f64(c.pip_se[j]));
            }
            if let Some(e) = &exact {
                r.push(fmt_f64(e.pip[j]));
            }
            r
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(args.run.out.join("pip.tsv"), &preamble, &header_refs, &rows)?;

    let mut model_preamble = preamble.clone();
    model_preamble.push(format!("kept_samples={}", report.n_kept));
    model_preamble.push(format!("size_distribution={}", join_f64(&report.size_distribution)));
    if let Some(e) = &exact {
        model_preamble.push(format!("total_variation_vs_exact={}", fmt_f64(e.total_variation(&report.model_table))));
    }
    let models: Vec<Vec<String>> = report
        .model_table
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let snps = if m.included.is_empty() {
                "-".to_string()
            } else {
                m.included.iter().map(|&j| ids[j].as_str()).collect::<Vec<_>>().join(",")
            };
            vec![
                (i + 1).to_string(),
                snps,
                m.included.len().to_string(),
                fmt_f64(m.probability),
                fmt_f64(m.log10_abf),
                fmt_f64(m.log_post_score),
            ]
        })
        .collect();
    write_table(
        args.run.out.join("models.tsv"),
        &model_preamble,
        &["rank", "snps", "size", "probability", "log10_abf", "log_post_score"],
        &models,
    )?;
    Ok(())
}
