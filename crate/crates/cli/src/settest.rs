use std::collections::HashMap;
use std::path::PathBuf;

use blmm::io::{self, fmt_f64, write_table, SnpSet};
use blmm::lmm::Spectrum;
use blmm::settest::{analyze_sets, set_components, SetComponents, SetTestConfig, Weighting};
use blmm::{Dataset, Lmm};
use clap::{ArgAction, Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::common::{
    join_f64, load_covariates, load_inputs, load_kinship, phi_grid, CliResult, Context, Failure, RunArgs, DEFAULT_PHI,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    /// π = 0.5 two-way, uniform three-way ("Bayesian-D")
    Fixed,
    /// π estimated by EM ("Bayesian-E")
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    /// Burden and SKAT
    TwoWay,
    /// Burden, SKAT and the common-variant average
    ThreeWay,
}

/// SNP-set Bayes factors, mixture weights and Bayesian FDR decisions.
#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SettestArgs {
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long)]
    pub phenotype: PathBuf,
    /// Two columns: set id, SNP id
    #[arg(long)]
    pub sets: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub kinship: Option<PathBuf>,
    /// Phenotype (and covariate) files hold one column per set id
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    pub per_set_phenotype: bool,
    #[arg(long, value_enum, default_value_t = ModelArg::TwoWay)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value_t = WeightingArg::Estimated)]
    pub weighting: WeightingArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = DEFAULT_PHI)]
    pub phi: Vec<f64>,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub standardized: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

fn set_columns(set: &SnpSet, index: &HashMap<&str, usize>) -> CliResult<Vec<usize>> {
    set.snps
        .iter()
        .map(|s| index.get(s.as_str()).copied().ok_or_else(|| Failure::input(format!("set {}: unknown SNP `{s}`", set.id))))
        .collect()
}

fn shared_phenotype(args: &SettestArgs, sets: &[SnpSet], config: &SetTestConfig) -> CliResult<Vec<SetComponents>> {
    let inputs = load_inputs(&args.genotypes, &args.phenotype, args.covariates.as_deref(), args.kinship.as_deref())?;
    let table = &inputs.genotypes;
    let index: HashMap<&str, usize> = table.snp_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let cols: Vec<Vec<usize>> = sets.iter().map(|s| set_columns(s, &index)).collect::<CliResult<_>>()?;
    let lmm = Lmm::new(Dataset::new(inputs.y, inputs.x, table.dosages.clone(), inputs.kinship)?)?;
    let null = lmm.fit_null().context(|| "null model fit".into())?;
    sets.par_iter()
        .zip(&cols)
        .map(|(set, c)| {
            let mafs: Vec<f64> = c.iter().map(|&j| table.mafs[j]).collect();
            set_components(&lmm, &null, c, &mafs, config).context(|| format!("set {}", set.id))
        })
        .collect()
}

/// Column of `m` named `name`.
fn named_column(m: &io::LabeledMatrix, name: &str) -> Option<usize> {
    m.col_names.iter().position(|c| c == name)
}

fn per_set_phenotype(args: &SettestArgs, sets: &[SnpSet], config: &SetTestConfig) -> CliResult<Vec<SetComponents>> {
    let table = io::load_genotypes(&args.genotypes)?;
    let samples = &table.sample_ids;
    let pheno = io::load_labeled(&args.phenotype)?;
    let pidx = io::align(samples, &pheno.row_ids, "phenotype")?;
    // covariates either keyed by set id or shared by every set
    let covariates = args.covariates.as_deref().map(io::load_labeled).transpose()?;
    let shared_x = match &covariates {
        Some(c) if sets.iter().all(|s| named_column(c, &s.id).is_some()) => None,
        _ => Some(load_covariates(args.covariates.as_deref(), samples)?),
    };
    let cidx = match &covariates {
        Some(c) => Some(io::align(samples, &c.row_ids, "covariates")?),
        None => None,
    };
    let kinship = args.kinship.as_deref().map(|p| load_kinship(p, samples)).transpose()?;
    let n = samples.len();
    let spectrum = Spectrum::new(kinship.as_ref(), n)?;
    let index: HashMap<&str, usize> = table.snp_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    sets.par_iter()
        .map(|set| {
            let ctx = || format!("set {}", set.id);
            let cols = set_columns(set, &index)?;
            let pc = named_column(&pheno, &set.id)
                .ok_or_else(|| Failure::input(format!("phenotype file has no column for set {}", set.id)))?;
            let y = DVector::from_fn(n, |i, _| pheno.values[(pidx[i], pc)]);
            let x = match (&shared_x, &covariates, &cidx) {
                (Some(x), _, _) => x.clone(),
                (None, Some(c), Some(ci)) => {
                    let cc = named_column(c, &set.id).expect("checked above");
                    DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { c.values[(ci[i], cc)] })
                }
                _ => unreachable!("covariates resolved above"),
            };
            let g = DMatrix::from_fn(n, cols.len(), |i, j| table.dosages[(i, cols[j])]);
            let mafs: Vec<f64> = cols.iter().map(|&j| table.mafs[j]).collect();
            let data = Dataset::new(y, x, g, kinship.clone()).context(ctx)?;
            let lmm = Lmm::with_spectrum(data, spectrum.clone());
            let null = lmm.fit_null().context(ctx)?;
            set_components(&lmm, &null, &lmm.all_columns(), &mafs, config).context(ctx)
        })
        .collect()
}

pub fn run(args: &SettestArgs) -> CliResult<()> {
    let config = SetTestConfig { kappa: args.kappa, grid: phi_grid(&args.phi)?, standardized: args.standardized };
    if !(0.0..=1.0).contains(&args.kappa) {
        return Err(Failure::input(format!("kappa must lie in [0, 1], got {}", args.kappa)));
    }
    let sets = io::load_sets(&args.sets)?;
    let components =
        if args.per_set_phenotype { per_set_phenotype(args, &sets, &config)? } else { shared_phenotype(args, &sets, &config)? };
    let ids: Vec<String> = sets.iter().map(|s| s.id.clone()).collect();
    let three_way = args.model == ModelArg::ThreeWay;
    let weighting = match args.weighting {
        WeightingArg::Fixed => Weighting::Fixed,
        WeightingArg::Estimated => Weighting::Estimated,
    };
    let analysis = analyze_sets(&ids, &components, three_way, weighting, args.alpha)?;

    let d = &analysis.discoveries;
    let body: Vec<Vec<String>> = analysis
        .records
        .iter()
        .zip(&sets)
        .enumerate()
        .map(|(i, (r, s))| {
            vec![
                r.set_id.clone(),
                s.snps.len().to_string(),
                fmt_f64(r.log10_bf_burden),
                fmt_f64(r.log10_bf_skat),
                fmt_f64(r.log10_bf_cv),
                fmt_f64(r.log10_bf_combined),
                fmt_f64(d.posterior_null[i]),
                u8::from(d.decisions[i]).to_string(),
            ]
        })
        .collect();
    let em = &analysis.em;
    let preamble = vec![
        "command=settest".to_string(),
        format!("model={}", if three_way { "three-way" } else { "two-way" }),
        format!("weighting={}", if weighting == Weighting::Fixed { "fixed" } else { "estimated" }),
        format!("alpha={}", fmt_f64(args.alpha)),
        format!("kappa={}", fmt_f64(args.kappa)),
        format!("phi={}", join_f64(&args.phi)),
        format!("standardized={}", args.standardized),
        format!("p0={}", fmt_f64(em.p0)),
        format!("pis={}", join_f64(&analysis.records.first().map_or([0.0; 3], |r| r.pis_used))),
        format!("em_iterations={}", em.iterations),
        format!("em_converged={}", em.converged),
        format!("em_flat={}", em.flat),
        format!("rejected={}", d.n_rejected()),
    ];
    let header = [
        "set_id",
        "n_snps",
        "log10_bf_burden",
        "log10_bf_skat",
        "log10_bf_cv",
        "log10_bf_combined",
        "posterior_null",
        "rejected",
    ];
    write_table(&args.run.out, &preamble, &header, &body)?;
    Ok(())
}
