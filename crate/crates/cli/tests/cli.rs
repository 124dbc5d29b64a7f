use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use blmm::abf::Anchor;
use blmm::io::{self, GenotypeTable};
use blmm::settest::single_snp_log10;
use blmm::priors::PhiGrid;
use blmm::{Dataset, Lmm};
use nalgebra::{DMatrix, DVector};

fn blmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blmm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = blmm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_gwas(dir: &Path, seed: &str) {
    ok(&[
        "simulate", "--model", "gwas", "--individuals", "80", "--snps", "12", "--background-snps", "200", "--causal", "2",
        "--effect-sd", "0.6", "--seed", seed, "--out", p(dir),
    ]);
}

fn preamble(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter_map(|l| l.strip_prefix("## ").map(str::to_string)).collect()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    small_gwas(&a, "7");
    small_gwas(&b, "7");
    small_gwas(&c, "8");
    for f in ["genotypes.tsv", "phenotype.tsv", "kinship.tsv", "truth.tsv", "config.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("genotypes.tsv")).unwrap(), fs::read(c.join("genotypes.tsv")).unwrap());

    let (pa, pb) = (dir.path().join("pa"), dir.path().join("pb"));
    for (d, threads) in [(&pa, "1"), (&pb, "3")] {
        ok(&["simulate", "--model", "panel", "--individuals", "60", "--sets", "6", "--snps-per-set", "8", "--threads", threads, "--out", p(d)]);
    }
    for f in ["genotypes.tsv", "phenotypes.tsv", "covariates.tsv", "sets.tsv", "truth.tsv"] {
        assert_eq!(fs::read(pa.join(f)).unwrap(), fs::read(pb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn scan_output_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_gwas(&d.join("g"), "3");
    let g = d.join("g");
    let run = |threads: &str, out: &str| {
        ok(&[
            "scan", "--genotypes", p(&g.join("genotypes.tsv")), "--phenotype", p(&g.join("phenotype.tsv")), "--kinship",
            p(&g.join("kinship.tsv")), "--threads", threads, "--out", p(&d.join(out)),
        ]);
        fs::read(d.join(out)).unwrap()
    };
    assert_eq!(run("1", "s1.tsv"), run("4", "s4.tsv"));
    let r = rows(&d.join("s1.tsv"));
    assert_eq!(r.len(), 12);
    let mut ranks: Vec<usize> = r.iter().map(|x| x[7].parse().unwrap()).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=12).collect::<Vec<_>>());
}

fn write_region(dir: &Path, g: &DMatrix<f64>, y: &DVector<f64>) -> (String, String) {
    let (n, m) = g.shape();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let table = GenotypeTable {
        sample_ids: ids.clone(),
        snp_ids: (0..m).map(|j| format!("v{j}")).collect(),
        positions: (0..m).map(|j| format!("1:{}", j + 1)).collect(),
        mafs: vec![0.3; m],
        dosages: g.clone(),
    };
    let (gp, yp) = (dir.join("geno.tsv"), dir.join("pheno.tsv"));
    io::save_genotypes(&gp, &table).unwrap();
    io::save_phenotype(&yp, &ids, y).unwrap();
    (p(&gp).to_string(), p(&yp).to_string())
}

fn lcg_data(n: usize, m: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut s = seed;
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let g = DMatrix::from_fn(n, m, |_, _| (next() < 0.3) as u8 as f64 + (next() < 0.3) as u8 as f64);
    let y = DVector::from_fn(n, |i, _| 0.4 * g[(i, 0)] + next() - 0.5);
    (g, y)
}

#[test]
fn single_snp_scan_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (g, y) = lcg_data(70, 1, 11);
    // unrelated individuals plus a little structure
    let k = DMatrix::from_fn(70, 70, |i, j| if i == j { 1.0 } else if i / 5 == j / 5 { 0.4 } else { 0.0 });
    let ids: Vec<String> = (0..70).map(|i| format!("s{i}")).collect();
    let (gp, yp) = write_region(dir.path(), &g, &y);
    let kp = dir.path().join("kin.tsv");
    io::save_kinship(&kp, &ids, &k).unwrap();
    let out = dir.path().join("scan.tsv");
    ok(&["scan", "--genotypes", &gp, "--phenotype", &yp, "--kinship", p(&kp), "--out", p(&out)]);

    let lmm = Lmm::new(Dataset::new(y, Dataset::intercept(70), g, Some(k)).unwrap()).unwrap();
    let null = lmm.fit_null().unwrap();
    let grid = PhiGrid::default();
    let a0 = Anchor::null(&lmm, &null, &[0]).unwrap();
    let a1 = Anchor::fit(&lmm, 1.0, &[0]).unwrap();
    let r = &rows(&out)[0];
    let val = |i: usize| r[i].parse::<f64>().unwrap();
    assert_eq!(val(3), single_snp_log10(&a0, &grid, true));
    assert_eq!(val(4), single_snp_log10(&a1, &grid, true));
    assert_eq!(val(6), a0.info.quad_form());
    assert_eq!(val(5), a1.info.quad_form());
}

#[test]
fn monomorphic_snp_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (mut g, y) = lcg_data(60, 3, 5);
    g.column_mut(1).fill(1.0);
    let (gp, yp) = write_region(dir.path(), &g, &y);
    let out = dir.path().join("scan.tsv");
    ok(&["scan", "--genotypes", &gp, "--phenotype", &yp, "--out", p(&out)]);
    let r = rows(&out);
    assert_eq!(r[1][8], "monomorphic");
    assert_eq!(r[1][1], "NA");
    assert_eq!(r[1][3], "0");
    assert_eq!(r[0][8], "ok");
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (g, y) = lcg_data(50, 2, 9);
    let (gp, yp) = write_region(dir.path(), &g, &y);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# scan settings\nphi = 0.5\nstandardized = false\n").unwrap();
    let out = dir.path().join("a.tsv");
    ok(&["scan", "--config", p(&cfg), "--genotypes", &gp, "--phenotype", &yp, "--out", p(&out)]);
    let pre = preamble(&out);
    assert!(pre.contains(&format!("phi={}", io::fmt_f64(0.5))));
    assert!(pre.contains(&"standardized=false".to_string()));
    ok(&["scan", "--config", p(&cfg), "--genotypes", &gp, "--phenotype", &yp, "--phi", "0.25", "--out", p(&out)]);
    assert!(preamble(&out).contains(&format!("phi={}", io::fmt_f64(0.25))));

    fs::write(&cfg, "phi 0.5\n").unwrap();
    assert_eq!(blmm(&["scan", "--config", p(&cfg), "--genotypes", &gp, "--phenotype", &yp, "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (g, y) = lcg_data(40, 2, 3);
    let (gp, yp) = write_region(d, &g, &y);
    let out = p(&d.join("o.tsv")).to_string();

    let missing = blmm(&["scan", "--genotypes", "/nonexistent/g.tsv", "--phenotype", &yp, "--out", &out]);
    assert_eq!(missing.status.code(), Some(2));

    let ids: Vec<String> = (0..40).map(|i| format!("s{i}")).collect();
    let mut k = DMatrix::<f64>::identity(40, 40);
    k[(0, 1)] = 0.3;
    let kp = d.join("asym.tsv");
    io::save_labeled(&kp, "kinship", &io::LabeledMatrix { row_ids: ids.clone(), col_names: ids.clone(), values: k }).unwrap();
    let asym = blmm(&["scan", "--genotypes", &gp, "--phenotype", &yp, "--kinship", p(&kp), "--out", &out]);
    assert_eq!(asym.status.code(), Some(2));

    let flat = d.join("flat.tsv");
    io::save_phenotype(&flat, &ids, &DVector::from_element(40, 1.5)).unwrap();
    let perfect = blmm(&["scan", "--genotypes", &gp, "--phenotype", p(&flat), "--out", &out]);
    assert_eq!(perfect.status.code(), Some(3), "{}", String::from_utf8_lossy(&perfect.stderr));

    let kid = d.join("kid.tsv");
    io::save_kinship(&kid, &ids, &DMatrix::from_fn(40, 40, |i, j| if i == j { 1.0 } else if i / 4 == j / 4 { 0.5 } else { 0.0 }))
        .unwrap();
    let oracle = blmm(&[
        "validate-abf", "--genotypes", &gp, "--phenotype", &yp, "--kinship", p(&kid), "--quad-max-depth", "0", "--quad-tol",
        "1e-15", "--out", &out,
    ]);
    assert_eq!(oracle.status.code(), Some(4), "{}", String::from_utf8_lossy(&oracle.stderr));

    let usage = blmm(&["scan", "--phenotype", &yp, "--out", &out]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn settest_panel_and_single_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let panel = d.join("panel");
    ok(&["simulate", "--model", "panel", "--individuals", "120", "--sets", "10", "--snps-per-set", "10", "--out", p(&panel)]);
    let (gp, yp, cp) = (panel.join("genotypes.tsv"), panel.join("phenotypes.tsv"), panel.join("covariates.tsv"));
    let run = |sets: &Path, out: &Path, extra: &[&str]| {
        let mut args = vec![
            "settest", "--genotypes", p(&gp), "--phenotype", p(&yp), "--covariates", p(&cp), "--sets", p(sets),
            "--per-set-phenotype", "true", "--out", p(out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
    };
    let all = d.join("all.tsv");
    run(&panel.join("sets.tsv"), &all, &["--model", "three-way", "--weighting", "fixed"]);
    let r = rows(&all);
    assert_eq!(r.len(), 10);
    assert!(preamble(&all).contains(&"model=three-way".to_string()));
    for row in &r {
        let parts: Vec<f64> = row[2..6].iter().map(|v| v.parse().unwrap()).collect();
        let (lo, hi) = (parts[..3].iter().cloned().fold(f64::INFINITY, f64::min), parts[..3].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        assert!(parts[3] >= lo - 1e-12 && parts[3] <= hi + 1e-12);
    }

    let sets = io::load_sets(panel.join("sets.tsv")).unwrap();
    let one = d.join("one.tsv");
    io::save_sets(&one, &sets[..1]).unwrap();
    let single = d.join("single.tsv");
    run(&one, &single, &[]);
    assert!(preamble(&single).contains(&"em_flat=true".to_string()));
    assert_eq!(rows(&single).len(), 1);
}

#[test]
fn finemap_single_snp_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (g, y) = lcg_data(90, 4, 21);
    let (gp, yp) = write_region(d, &g, &y);
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["finemap", "--genotypes", &gp, "--phenotype", &yp, "--burn-in", "1000", "--samples", "40000", "--out", p(out)];
        args.extend_from_slice(extra);
        ok(&args);
    };
    let one = d.join("one");
    run(&one, &["--snps", "v0", "--p1", "0.01"]);
    let r = rows(&one.join("pip.tsv"));
    assert_eq!(r.len(), 1);
    let (pip, exact): (f64, f64) = (r[0][1].parse().unwrap(), r[0][6].parse().unwrap());
    let se: f64 = r[0][3].parse().unwrap();
    assert!((pip - exact).abs() < 5.0 * se.max(1e-3), "{pip} vs {exact}");
    let pre = preamble(&one.join("pip.tsv"));
    assert!(pre.contains(&format!("p1=point:{}", io::fmt_f64(0.01))));
    assert!(pre.contains(&"samples=40000".to_string()));
    assert!(pre.contains(&"seed=1".to_string()));

    let (a, b) = (d.join("a"), d.join("b"));
    run(&a, &["--seed", "5", "--threads", "1"]);
    run(&b, &["--seed", "5", "--threads", "2"]);
    for f in ["pip.tsv", "models.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validate_abf_reports_every_size() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    small_gwas(&g, "2");
    let out = dir.path().join("v.tsv");
    ok(&[
        "validate-abf", "--genotypes", p(&g.join("genotypes.tsv")), "--phenotype", p(&g.join("phenotype.tsv")), "--kinship",
        p(&g.join("kinship.tsv")), "--sizes", "40,80", "--out", p(&out),
    ]);
    let pre = preamble(&out);
    assert!(pre.iter().any(|l| l.starts_with("n=40 ")));
    assert!(pre.iter().any(|l| l.starts_with("n=80 ")));
    let r = rows(&out);
    assert!(r.len() > 12 && r.iter().all(|x| x[5].parse::<f64>().unwrap().abs() < 1.0));
}
