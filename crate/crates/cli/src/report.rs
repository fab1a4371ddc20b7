//! Plain-text summary tables built from run artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;

use featscope::analysis::{BenchmarkEntry, RelevanceReport};
use featscope::dict::DictKind;

use crate::commands::{DescriptionSummary, BENCHMARK, DESCRIPTION, RELEVANCE};
use crate::CliError;

/// One row of the method table.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub r_population: f64,
    pub r_description: Option<f64>,
}

fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(v))
}

fn method_name(kind: &str) -> String {
    kind.parse::<DictKind>().map_or_else(|_| kind.to_string(), |k| k.display_name().to_string())
}

/// Collects method rows and benchmark entries from each run directory.
pub fn collect(dirs: &[PathBuf]) -> Result<(Vec<MethodRow>, Vec<BenchmarkEntry>), CliError> {
    let mut methods = Vec::new();
    let mut bench = Vec::new();
    for dir in dirs {
        let relevance: Option<RelevanceReport> = read_optional(&dir.join(RELEVANCE))?;
        let description: Option<DescriptionSummary> = read_optional(&dir.join(DESCRIPTION))?;
        if let Some(rel) = relevance {
            methods.push(MethodRow {
                method: method_name(&rel.kind),
                r_population: rel.r_population,
                r_description: description.map(|d| d.r_description),
            });
        }
        if let Some(entries) = read_optional::<Vec<BenchmarkEntry>>(&dir.join(BENCHMARK))? {
            bench.extend(entries);
        }
    }
    if methods.is_empty() && bench.is_empty() {
        return Err(CliError::Domain(anyhow::anyhow!(
            "no {RELEVANCE} or {BENCHMARK} found in {}",
            dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    bench.sort_by(|a, b| a.mean_error_count.total_cmp(&b.mean_error_count).then_with(|| a.model_name.cmp(&b.model_name)));
    Ok((methods, bench))
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(s, "  {cell:>w$}", w = widths[c]);
            }
        }
        s.trim_end().to_string()
    };
    let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "{}", line(&head));
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
}

/// Renders the method and benchmark tables.
pub fn render(dirs: &[PathBuf]) -> Result<String, CliError> {
    let (methods, bench) = collect(dirs)?;
    let mut out = String::new();
    if !methods.is_empty() {
        out.push_str("Feature relevance by method\n\n");
        let rows: Vec<Vec<String>> = methods
            .iter()
            .map(|m| {
                vec![
                    m.method.clone(),
                    pct(m.r_population),
                    m.r_description.map_or_else(|| "-".to_string(), pct),
                ]
            })
            .collect();
        table(&mut out, &["Method", "R_population", "R_description"], &rows);
    }
    if !bench.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("Relevant latents per generated image\n\n");
        let rows: Vec<Vec<String>> = bench
            .iter()
            .map(|b| vec![b.model_name.clone(), b.n_images.to_string(), format!("{:.3}", b.mean_error_count)])
            .collect();
        table(&mut out, &["Model", "Images", "Mean error count"], &rows);
    }
    Ok(out)
}
