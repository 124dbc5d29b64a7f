use std::path::Path;

use blmm::io::{self, fmt_f64, write_table, GenotypeTable, LabeledMatrix, SnpSet};
use blmm::sim::{simulate_gwas, simulate_panel, GwasConfig, SimConfig};
use clap::{ArgAction, Args, ValueEnum};
use nalgebra::DMatrix;

use crate::common::{join_f64, CliResult, Failure, RunArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimModel {
    /// SNP-set panel with one phenotype per set
    Panel,
    /// Related lines with a kinship-driven random effect
    Gwas,
}

/// Writes a simulated dataset into the `--out` directory.
#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: SimModel,
    /// Individuals (default 500 for panels, 336 for gwas)
    #[arg(long)]
    pub individuals: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub sets: usize,
    #[arg(long, default_value_t = 100)]
    pub snps_per_set: usize,
    #[arg(long, default_value_t = 0.7)]
    pub null_fraction: f64,
    /// Weights of sign-consistent, sign-mixed and common-variant sets
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = [0.5, 0.5, 0.0])]
    pub mix: Vec<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub causal_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub effect_c: f64,
    #[arg(long, default_value_t = 0.4)]
    pub protective_fraction: f64,
    #[arg(long, default_value_t = 0.001)]
    pub maf_lo: f64,
    #[arg(long, default_value_t = 0.05)]
    pub maf_hi: f64,
    #[arg(long, default_value_t = 10)]
    pub ld_block: usize,
    /// Scanned SNPs (gwas)
    #[arg(long, default_value_t = 500)]
    pub snps: usize,
    /// SNPs used only to estimate the kinship (gwas)
    #[arg(long, default_value_t = 2000)]
    pub background_snps: usize,
    #[arg(long, default_value_t = 10)]
    pub causal: usize,
    #[arg(long, default_value_t = 0.3)]
    pub effect_sd: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 4)]
    pub line_size: usize,
    #[arg(long, default_value_t = 0.85)]
    pub copy_prob: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

fn sample_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ind{:05}", i + 1)).collect()
}

fn write_echo(dir: &Path, lines: Vec<String>) -> CliResult<()> {
    let rows: Vec<Vec<String>> = lines
        .iter()
        .map(|l| {
            let (k, v) = l.split_once('=').expect("key=value");
            vec![k.to_string(), v.to_string()]
        })
        .collect();
    write_table(dir.join("config.tsv"), &[], &["key", "value"], &rows)?;
    Ok(())
}

fn panel(args: &SimulateArgs, dir: &Path) -> CliResult<()> {
    if args.mix.len() != 3 {
        return Err(Failure::input(format!("--mix needs 3 weights, got {}", args.mix.len())));
    }
    let config = SimConfig {
        n_individuals: args.individuals.unwrap_or(500),
        n_sets: args.sets,
        snps_per_set: args.snps_per_set,
        null_fraction: args.null_fraction,
        scenario_mix: [args.mix[0], args.mix[1], args.mix[2]],
        causal_fraction: args.causal_fraction,
        effect_c: args.effect_c,
        protective_fraction: args.protective_fraction,
        maf_range: (args.maf_lo, args.maf_hi),
        ld_block_size: args.ld_block,
        seed: args.run.seed,
        ..SimConfig::default()
    };
    let sets = simulate_panel(&config)?;
    let n = config.n_individuals;
    let ids = sample_ids(n);
    let p = config.snps_per_set;

    let mut snp_ids = Vec::with_capacity(sets.len() * p);
    let mut positions = Vec::with_capacity(sets.len() * p);
    let mut mafs = Vec::with_capacity(sets.len() * p);
    let mut blocks = Vec::with_capacity(sets.len());
    let mut snp_sets = Vec::with_capacity(sets.len());
    for (s, set) in sets.iter().enumerate() {
        let names: Vec<String> = (0..p).map(|j| format!("{}_{:04}", set.set_id, j + 1)).collect();
        snp_ids.extend(names.iter().cloned());
        positions.extend((0..p).map(|j| format!("{}:{}", s + 1, j + 1)));
        mafs.extend(set.genotypes.weight_mafs());
        blocks.push(&set.genotypes.dosages);
        snp_sets.push(SnpSet { id: set.set_id.clone(), snps: names });
    }
    let dosages = DMatrix::from_fn(n, sets.len() * p, |i, j| blocks[j / p][(i, j % p)]);
    io::save_genotypes(dir.join("genotypes.tsv"), &GenotypeTable { sample_ids: ids.clone(), snp_ids, positions, mafs, dosages })?;
    io::save_sets(dir.join("sets.tsv"), &snp_sets)?;

    let set_ids: Vec<String> = sets.iter().map(|s| s.set_id.clone()).collect();
    let y = DMatrix::from_fn(n, sets.len(), |i, s| sets[s].y[i]);
    let x = DMatrix::from_fn(n, sets.len(), |i, s| sets[s].covariate[i]);
    io::save_labeled(dir.join("phenotypes.tsv"), "sample", &LabeledMatrix { row_ids: ids.clone(), col_names: set_ids.clone(), values: y })?;
    io::save_labeled(dir.join("covariates.tsv"), "sample", &LabeledMatrix { row_ids: ids, col_names: set_ids, values: x })?;

    let truth: Vec<Vec<String>> = sets
        .iter()
        .map(|s| {
            let causal = if s.causal.is_empty() {
                "-".to_string()
            } else {
                s.causal.iter().map(|j| format!("{}_{:04}", s.set_id, j + 1)).collect::<Vec<_>>().join(",")
            };
            vec![s.set_id.clone(), s.scenario.name().to_string(), causal]
        })
        .collect();
    write_table(dir.join("truth.tsv"), &[], &["set_id", "scenario", "causal"], &truth)?;
    write_echo(
        dir,
        vec![
            "command=simulate".into(),
            "model=panel".into(),
            format!("individuals={n}"),
            format!("sets={}", config.n_sets),
            format!("snps_per_set={p}"),
            format!("null_fraction={}", fmt_f64(config.null_fraction)),
            format!("mix={}", join_f64(&config.scenario_mix)),
            format!("causal_fraction={}", fmt_f64(config.causal_fraction)),
            format!("effect_c={}", fmt_f64(config.effect_c)),
            format!("protective_fraction={}", fmt_f64(config.protective_fraction)),
            format!("maf_range={},{}", fmt_f64(config.maf_range.0), fmt_f64(config.maf_range.1)),
            format!("ld_block={}", config.ld_block_size),
            format!("seed={}", config.seed),
        ],
    )
}

fn gwas(args: &SimulateArgs, dir: &Path) -> CliResult<()> {
    let config = GwasConfig {
        n: args.individuals.unwrap_or(336),
        n_snps: args.snps,
        n_background: args.background_snps,
        n_causal: args.causal,
        effect_sd: args.effect_sd,
        lambda: args.lambda,
        tau: args.tau,
        line_size: args.line_size,
        copy_prob: args.copy_prob,
        seed: args.run.seed,
    };
    let sim = simulate_gwas(&config)?;
    let ids = sample_ids(config.n);
    let snp_ids: Vec<String> = (0..config.n_snps).map(|j| format!("snp{:06}", j + 1)).collect();
    let table = GenotypeTable {
        sample_ids: ids.clone(),
        snp_ids: snp_ids.clone(),
        positions: (0..config.n_snps).map(|j| format!("1:{}", 1000 * (j + 1))).collect(),
        mafs: sim.genotypes.weight_mafs(),
        dosages: sim.genotypes.dosages,
    };
    io::save_genotypes(dir.join("genotypes.tsv"), &table)?;
    io::save_phenotype(dir.join("phenotype.tsv"), &ids, &sim.y)?;
    io::save_kinship(dir.join("kinship.tsv"), &ids, &sim.kinship)?;
    let truth: Vec<Vec<String>> = snp_ids
        .iter()
        .enumerate()
        .map(|(j, s)| vec![s.clone(), u8::from(sim.causal.contains(&j)).to_string()])
        .collect();
    write_table(dir.join("truth.tsv"), &[], &["snp_id", "causal"], &truth)?;
    write_echo(
        dir,
        vec![
            "command=simulate".into(),
            "model=gwas".into(),
            format!("individuals={}", config.n),
            format!("snps={}", config.n_snps),
            format!("background_snps={}", config.n_background),
            format!("causal={}", config.n_causal),
            format!("effect_sd={}", fmt_f64(config.effect_sd)),
            format!("lambda={}", fmt_f64(config.lambda)),
            format!("tau={}", fmt_f64(config.tau)),
            format!("line_size={}", config.line_size),
            format!("copy_prob={}", fmt_f64(config.copy_prob)),
            format!("seed={}", config.seed),
        ],
    )
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    match args.model {
        SimModel::Panel => panel(args, &args.run.out),
        SimModel::Gwas => gwas(args, &args.run.out),
    }
}
