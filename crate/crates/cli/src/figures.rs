//! `tg figures`: tidy plot-data CSVs from a run directory.
//!
//! * `fig_fwt_vs_delta.csv`: `method,k,mean,std,n_seeds`. Per seed, the mean
//!   loss over rows at horizon `k = j - t`; then mean and sample standard
//!   deviation across seeds.
//! * `fig_mse_log.csv`: every results row plus `log10_value`.
//! * `fig_norms.csv`, `fig_pca.csv`: copies of the run's norm and PCA rows.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};

use crate::output::{float, write_csv};

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_owned).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(str::to_owned).collect()))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("missing column `{name}`"))
    }
}

/// Writes the figure files into `dir` and returns their names.
pub fn figures(dir: &Path) -> Result<Vec<String>> {
    let results = Table::read(&dir.join("results.csv"))?;
    let (cm, cs, ct, cj, cv) = (
        results.col("method")?,
        results.col("seed")?,
        results.col("t")?,
        results.col("j")?,
        results.col("value")?,
    );
    let oracle = results.col("oracle").ok();
    let mut written = Vec::new();

    // (method order, k) -> seed -> (sum, count)
    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, i64), BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    let mut mse_rows = Vec::new();
    for r in &results.rows {
        let m = &r[cm];
        let mi = match methods.iter().position(|x| x == m) {
            Some(i) => i,
            None => {
                methods.push(m.clone());
                methods.len() - 1
            }
        };
        let seed: u64 = r[cs].parse().context("seed column")?;
        let t: i64 = r[ct].parse().context("t column")?;
        let j: i64 = r[cj].parse().context("j column")?;
        let v: f64 = r[cv].parse().context("value column")?;
        let e = cells.entry((mi, j - t)).or_default().entry(seed).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
        let mut out = vec![m.clone(), r[cs].clone(), r[ct].clone(), r[cj].clone(), r[cv].clone(), float(v.log10())];
        if let Some(c) = oracle {
            out.push(r[c].clone());
        }
        mse_rows.push(out);
    }

    let mut fwt_rows = Vec::new();
    for ((mi, k), per_seed) in &cells {
        let means: Vec<f64> = per_seed.values().map(|(s, n)| s / *n as f64).collect();
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let std = if means.len() > 1 {
            (means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        fwt_rows.push(vec![methods[*mi].clone(), k.to_string(), float(mean), float(std), means.len().to_string()]);
    }
    write_csv(&dir.join("fig_fwt_vs_delta.csv"), &["method", "k", "mean", "std", "n_seeds"], &fwt_rows)?;
    written.push("fig_fwt_vs_delta.csv".to_owned());

    let mut mse_header = vec!["method", "seed", "t", "j", "value", "log10_value"];
    if oracle.is_some() {
        mse_header.push("oracle");
    }
    write_csv(&dir.join("fig_mse_log.csv"), &mse_header, &mse_rows)?;
    written.push("fig_mse_log.csv".to_owned());

    for (src, dst) in [("norms.csv", "fig_norms.csv"), ("pca.csv", "fig_pca.csv")] {
        let p = dir.join(src);
        if !p.exists() {
            eprintln!("{} not found; skipping {dst}", p.display());
            continue;
        }
        let t = Table::read(&p)?;
        let header: Vec<&str> = t.header.iter().map(String::as_str).collect();
        write_csv(&dir.join(dst), &header, &t.rows)?;
        written.push(dst.to_owned());
    }
    Ok(written)
}

pub fn has_inputs(dir: &Path) -> bool {
    fs::metadata(dir.join("results.csv")).map(|m| m.is_file()).unwrap_or(false)
}
