//! Collect earlier outputs into one document plus renamed figure series.
//! Reads files only; nothing is re-estimated.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::io::write_text;
use crate::{Error, Result};

pub struct ReportFiles {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

/// Data series and the figure file each becomes.
const FIGURES: [(&str, &str); 5] = [
    ("bound_curve.csv", "figure_harm_bounds.csv"),
    ("health_disparities.csv", "figure_health_disparities.csv"),
    ("series_marginal_reliance.csv", "figure_marginal_reliance.csv"),
    ("series_subgroup_scan.csv", "figure_subgroup_scan.csv"),
    ("regime_disparities.csv", "figure_regime_disparities.csv"),
];

const SUMMARIES: [&str; 4] = ["cohort_summary.csv", "bound_summary.csv", "mvpf.csv", "proposition_report.txt"];

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|x| x.iter().map(String::from).collect())
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}|\n", header.join(" | "), vec!["---"; header.len()].join("|"));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

/// Pivot a long-format result table to one line per (model, outcome, term).
fn pivot(path: &Path) -> Result<String> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let (m, o, t, s, v) = (col("model")?, col("outcome")?, col("term")?, col("statistic")?, col("value")?);
    let mut keys: Vec<(String, String, String)> = Vec::new();
    let mut stats: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, String), String> = BTreeMap::new();
    for r in &rows {
        let key = (r[m].clone(), r[o].clone(), r[t].clone());
        let k = match keys.iter().position(|x| *x == key) {
            Some(k) => k,
            None => {
                keys.push(key);
                keys.len() - 1
            }
        };
        if !stats.contains(&r[s]) {
            stats.push(r[s].clone());
        }
        cells.insert((k, r[s].clone()), r[v].clone());
    }
    let mut h: Vec<String> = ["model", "outcome", "term"].map(String::from).to_vec();
    h.extend(stats.iter().cloned());
    let body: Vec<Vec<String>> = keys
        .iter()
        .enumerate()
        .map(|(k, (a, b, c))| {
            let mut row = vec![a.clone(), b.clone(), c.clone()];
            row.extend(stats.iter().map(|st| cells.get(&(k, st.clone())).cloned().unwrap_or_default()));
            row
        })
        .collect();
    Ok(markdown(&h, &body))
}

fn listing(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().to_str().map(String::from))
        .collect();
    names.sort();
    Ok(names)
}

pub fn assemble(dirs: &[PathBuf], out: &Path) -> Result<ReportFiles> {
    let mut doc = String::from("# Run report\n");
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for dir in dirs {
        let names = listing(dir)?;
        doc.push_str(&format!("\n## {}\n", dir.display()));
        for name in names.iter().filter(|n| n.starts_with("table_") && n.ends_with(".csv")) {
            let p = dir.join(name);
            let title = name.trim_start_matches("table_").trim_end_matches(".csv");
            doc.push_str(&format!("\n### Table: {title}\n\n{}", pivot(&p)?));
            inputs.push(p);
        }
        for name in SUMMARIES.iter().filter(|n| names.iter().any(|x| x == *n)) {
            let p = dir.join(name);
            if name.ends_with(".txt") {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                doc.push_str(&format!("\n### {name}\n\n```\n{text}```\n"));
            } else {
                let (h, rows) = read_csv(&p)?;
                doc.push_str(&format!("\n### {name}\n\n{}", markdown(&h, &rows)));
            }
            inputs.push(p);
        }
        for (src, dst) in FIGURES.iter().filter(|(s, _)| names.iter().any(|x| x == *s)) {
            let p = dir.join(src);
            let (h, rows) = read_csv(&p)?;
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            // later directories win when the same series appears twice
            let target = out.join(dst);
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            fs::write(&target, bytes).map_err(|e| Error::io(&target, e))?;
            if !outputs.contains(&dst.to_string()) {
                outputs.push(dst.to_string());
            }
            doc.push_str(&format!("\n### Figure series: {dst}\n\ncolumns: {}; rows: {}\n", h.join(", "), rows.len()));
            inputs.push(p);
        }
    }
    if inputs.is_empty() {
        return Err(Error::Data(format!(
            "no tables or series found in {}",
            dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    write_text(&out.join("report.md"), &doc)?;
    outputs.insert(0, "report.md".to_string());
    Ok(ReportFiles { inputs, outputs })
}
