//! Tab-separated text formats for phenotypes, covariates, genotypes, kinship,
//! SNP weights and SNP sets.
//!
//! Lines starting with `#` are headers; the first header line names the
//! columns. Floats are written with 17 significant digits so that reading a
//! written file reproduces every finite value exactly.
//!
//! | kind       | header                                  | row                              |
//! |------------|-----------------------------------------|----------------------------------|
//! | phenotype  | `#sample_id  <name>`                    | `id  y`                          |
//! | covariates | `#sample_id  <name>...`                 | `id  x₁ … x_q`                   |
//! | genotypes  | `#snp_id  position  maf  <sample>...`   | `snp  chr:pos  maf  d₁ … d_n`    |
//! | kinship    | `#kinship  <sample>...`                 | `id  k₁ … k_n`                   |
//! | weights    | `#snp_id  weight`                       | `snp  w`                         |
//! | sets       | `#set_id  snp_id`                       | `set  snp`                       |

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rows of numbers keyed by an id, with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_ids: Vec<String>,
    pub col_names: Vec<String>,
    pub values: DMatrix<f64>,
}

/// SNP-major genotype file held sample-major in memory (`dosages` is `n × p`).
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeTable {
    pub sample_ids: Vec<String>,
    pub snp_ids: Vec<String>,
    pub positions: Vec<String>,
    pub mafs: Vec<f64>,
    pub dosages: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnpSet {
    pub id: String,
    pub snps: Vec<String>,
}

/// Formats a float with 17 significant digits; integral values (dosages,
/// counts) print as plain integers, which parse back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 && !(v == 0.0 && v.is_sign_negative()) {
        format!("{}", v as i64)
    } else {
        format!("{v:.16e}")
    }
}

struct Parsed {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn location(path: &Path, line: usize) -> String {
    format!("{}:{line}", path.display())
}

fn read_lines(path: &Path) -> Result<Parsed> {
    let text = fs::read_to_string(path)?;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with("##") {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_none() {
                header = Some(rest.split('\t').map(str::to_string).collect());
            }
            continue;
        }
        rows.push((i + 1, line.split('\t').map(str::to_string).collect()));
    }
    let header = header.ok_or_else(|| Error::Parse { location: location(path, 1), message: "missing `#` header line".into() })?;
    if rows.is_empty() {
        return Err(Error::Parse { location: location(path, 1), message: "no data rows".into() });
    }
    Ok(Parsed { header, rows })
}

fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        location: location(path, line),
        message: format!("cannot parse `{field}` as a number ({what})"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{what} at {}", location(path, line))));
    }
    Ok(v)
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateSampleId(id.clone()));
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads `#id  name...` followed by `id  v...` rows.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<LabeledMatrix> {
    let path = path.as_ref();
    let parsed = read_lines(path)?;
    let cols = parsed.header.len().saturating_sub(1);
    if cols == 0 {
        return Err(Error::Parse { location: location(path, 1), message: "header names no value columns".into() });
    }
    let mut row_ids = Vec::with_capacity(parsed.rows.len());
    let mut values = DMatrix::zeros(parsed.rows.len(), cols);
    for (r, (line, fields)) in parsed.rows.iter().enumerate() {
        if fields.len() != cols + 1 {
            return Err(Error::dims(format!("{}: expected {} fields, found {}", location(path, *line), cols + 1, fields.len())));
        }
        row_ids.push(fields[0].clone());
        for c in 0..cols {
            values[(r, c)] = parse_f64(path, *line, &fields[c + 1], &parsed.header[c + 1])?;
        }
    }
    check_unique(&row_ids)?;
    Ok(LabeledMatrix { row_ids, col_names: parsed.header[1..].to_vec(), values })
}

pub fn save_labeled(path: impl AsRef<Path>, id_name: &str, m: &LabeledMatrix) -> Result<()> {
    if m.row_ids.len() != m.values.nrows() || m.col_names.len() != m.values.ncols() {
        return Err(Error::dims("labels do not match the matrix shape"));
    }
    let mut out = format!("#{id_name}\t{}\n", m.col_names.join("\t"));
    for (r, id) in m.row_ids.iter().enumerate() {
        out.push_str(id);
        for v in m.values.row(r).iter() {
            out.push('\t');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_file(path.as_ref(), &out)
}

/// Single-column phenotype file.
pub fn load_phenotype(path: impl AsRef<Path>) -> Result<(Vec<String>, DVector<f64>)> {
    let m = load_labeled(path)?;
    if m.values.ncols() != 1 {
        return Err(Error::dims(format!("phenotype file has {} value columns, expected 1", m.values.ncols())));
    }
    Ok((m.row_ids, m.values.column(0).into_owned()))
}

pub fn save_phenotype(path: impl AsRef<Path>, ids: &[String], y: &DVector<f64>) -> Result<()> {
    let m = LabeledMatrix { row_ids: ids.to_vec(), col_names: vec!["y".into()], values: DMatrix::from_column_slice(y.len(), 1, y.as_slice()) };
    save_labeled(path, "sample_id", &m)
}

pub fn load_kinship(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<f64>)> {
    let path = path.as_ref();
    let m = load_labeled(path)?;
    check_unique(&m.col_names)?;
    if m.values.nrows() != m.values.ncols() {
        return Err(Error::dims(format!("kinship is {}x{}, expected square", m.values.nrows(), m.values.ncols())));
    }
    if m.row_ids != m.col_names {
        return Err(Error::Parse { location: location(path, 1), message: "kinship row ids differ from the header sample ids".into() });
    }
    if !crate::linalg::is_symmetric(&m.values, 1e-10) {
        return Err(Error::invalid(format!("kinship in {} is not symmetric", path.display())));
    }
    Ok((m.row_ids, m.values))
}

pub fn save_kinship(path: impl AsRef<Path>, ids: &[String], k: &DMatrix<f64>) -> Result<()> {
    let m = LabeledMatrix { row_ids: ids.to_vec(), col_names: ids.to_vec(), values: k.clone() };
    save_labeled(path, "kinship", &m)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(Vec<String>, DVector<f64>)> {
    let m = load_labeled(path)?;
    if m.values.ncols() != 1 {
        return Err(Error::dims(format!("weights file has {} value columns, expected 1", m.values.ncols())));
    }
    Ok((m.row_ids, m.values.column(0).into_owned()))
}

pub fn save_weights(path: impl AsRef<Path>, snp_ids: &[String], w: &DVector<f64>) -> Result<()> {
    let m = LabeledMatrix { row_ids: snp_ids.to_vec(), col_names: vec!["weight".into()], values: DMatrix::from_column_slice(w.len(), 1, w.as_slice()) };
    save_labeled(path, "snp_id", &m)
}

pub fn load_genotypes(path: impl AsRef<Path>) -> Result<GenotypeTable> {
    let path = path.as_ref();
    let parsed = read_lines(path)?;
    if parsed.header.len() < 4 {
        return Err(Error::Parse { location: location(path, 1), message: "genotype header needs snp_id, position, maf and sample ids".into() });
    }
    let sample_ids = parsed.header[3..].to_vec();
    check_unique(&sample_ids)?;
    let (n, p) = (sample_ids.len(), parsed.rows.len());
    let mut dosages = DMatrix::zeros(n, p);
    let (mut snp_ids, mut positions, mut mafs) = (Vec::with_capacity(p), Vec::with_capacity(p), Vec::with_capacity(p));
    for (j, (line, fields)) in parsed.rows.iter().enumerate() {
        if fields.len() != n + 3 {
            return Err(Error::dims(format!("{}: expected {} fields, found {}", location(path, *line), n + 3, fields.len())));
        }
        snp_ids.push(fields[0].clone());
        positions.push(fields[1].clone());
        mafs.push(parse_f64(path, *line, &fields[2], "maf")?);
        for i in 0..n {
            dosages[(i, j)] = parse_f64(path, *line, &fields[i + 3], &sample_ids[i])?;
        }
    }
    let mut seen = HashSet::new();
    if let Some(dup) = snp_ids.iter().find(|s| !seen.insert(s.as_str())) {
        return Err(Error::Parse { location: path.display().to_string(), message: format!("duplicate SNP id `{dup}`") });
    }
    Ok(GenotypeTable { sample_ids, snp_ids, positions, mafs, dosages })
}

pub fn save_genotypes(path: impl AsRef<Path>, g: &GenotypeTable) -> Result<()> {
    let (n, p) = g.dosages.shape();
    if g.sample_ids.len() != n || g.snp_ids.len() != p || g.positions.len() != p || g.mafs.len() != p {
        return Err(Error::dims("genotype labels do not match the dosage matrix"));
    }
    let mut out = format!("#snp_id\tposition\tmaf\t{}\n", g.sample_ids.join("\t"));
    for j in 0..p {
        let _ = write!(out, "{}\t{}\t{}", g.snp_ids[j], g.positions[j], fmt_f64(g.mafs[j]));
        for i in 0..n {
            out.push('\t');
            out.push_str(&fmt_f64(g.dosages[(i, j)]));
        }
        out.push('\n');
    }
    write_file(path.as_ref(), &out)
}

/// Sets in order of first appearance; SNPs keep their file order within a set.
pub fn load_sets(path: impl AsRef<Path>) -> Result<Vec<SnpSet>> {
    let path = path.as_ref();
    let parsed = read_lines(path)?;
    let mut sets: Vec<SnpSet> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (line, fields) in &parsed.rows {
        if fields.len() != 2 {
            return Err(Error::dims(format!("{}: expected 2 fields, found {}", location(path, *line), fields.len())));
        }
        let k = *index.entry(fields[0].clone()).or_insert_with(|| {
            sets.push(SnpSet { id: fields[0].clone(), snps: Vec::new() });
            sets.len() - 1
        });
        sets[k].snps.push(fields[1].clone());
    }
    Ok(sets)
}

pub fn save_sets(path: impl AsRef<Path>, sets: &[SnpSet]) -> Result<()> {
    let mut out = String::from("#set_id\tsnp_id\n");
    for s in sets {
        for snp in &s.snps {
            let _ = writeln!(out, "{}\t{}", s.id, snp);
        }
    }
    write_file(path.as_ref(), &out)
}

/// Writes an output table; `preamble` lines are emitted first as `##` comments,
/// which the loaders skip.
pub fn write_table(path: impl AsRef<Path>, preamble: &[String], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for line in preamble {
        let _ = writeln!(out, "## {line}");
    }
    let _ = writeln!(out, "#{}", header.join("\t"));
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::dims(format!("table row has {} fields, header has {}", row.len(), header.len())));
        }
        let _ = writeln!(out, "{}", row.join("\t"));
    }
    write_file(path.as_ref(), &out)
}

/// Row order mapping `ids` onto `reference`; every reference id must be present.
pub fn align(reference: &[String], ids: &[String], what: &str) -> Result<Vec<usize>> {
    let pos: std::collections::HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    reference
        .iter()
        .map(|r| pos.get(r.as_str()).copied().ok_or_else(|| Error::dims(format!("sample `{r}` missing from {what}"))))
        .collect()
}
