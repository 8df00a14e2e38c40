//! Plain-text tables and plot data.
//!
//! Table fixtures are JSON documents:
//! `{"title", "columns": [...], "groups": [{"name"?, "rows": [{"label", "values": [number|null]}]}]}`.
//! Numbers are printed at most to two decimals with trailing zeros removed;
//! `null` cells print as `--`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agreement::{HumanEvalSummary, Scale};
use crate::error::{Error, Result};

pub const MISSING_CELL: &str = "--";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowGroup {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub groups: Vec<RowGroup>,
}

impl ReportTable {
    pub fn validate(&self) -> Result<()> {
        if self.columns.len() < 2 {
            return Err(Error::Invalid(format!("table `{}` needs a label column and a value column", self.title)));
        }
        for row in self.groups.iter().flat_map(|g| &g.rows) {
            if row.values.len() != self.columns.len() - 1 {
                return Err(Error::Invalid(format!(
                    "table `{}`, row `{}`: {} values for {} value columns",
                    self.title,
                    row.label,
                    row.values.len(),
                    self.columns.len() - 1
                )));
            }
            if row.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("table `{}`, row `{}`: non-finite value", self.title, row.label)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

pub fn format_cell(v: Option<f64>) -> String {
    match v {
        None => MISSING_CELL.to_string(),
        Some(x) => {
            let s = format!("{:.2}", x);
            let s = s.trim_end_matches('0').trim_end_matches('.');
            if s == "-0" {
                "0".to_string()
            } else {
                s.to_string()
            }
        }
    }
}

/// Render with the label column left-aligned and value columns right-aligned.
pub fn render_table(t: &ReportTable) -> Result<String> {
    t.validate()?;
    const INDENT: &str = "  ";
    let cells: Vec<Vec<Vec<String>>> = t
        .groups
        .iter()
        .map(|g| {
            g.rows
                .iter()
                .map(|r| {
                    let label = if g.name.is_some() {
                        format!("{INDENT}{}", r.label)
                    } else {
                        r.label.clone()
                    };
                    std::iter::once(label).chain(r.values.iter().map(|v| format_cell(*v))).collect()
                })
                .collect()
        })
        .collect();
    let mut widths: Vec<usize> = t.columns.iter().map(|c| c.chars().count()).collect();
    for row in cells.iter().flatten() {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    for g in &t.groups {
        if let Some(n) = &g.name {
            widths[0] = widths[0].max(n.chars().count());
        }
    }
    let line = |row: &[String]| -> String {
        let mut s = format!("{:<w$}", row[0], w = widths[0]);
        for (c, w) in row[1..].iter().zip(&widths[1..]) {
            write!(s, "  {:>w$}", c, w = *w).unwrap();
        }
        s.trim_end().to_string()
    };
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
    let mut out = String::new();
    writeln!(out, "{}", t.title).unwrap();
    writeln!(out, "{rule}").unwrap();
    writeln!(out, "{}", line(&t.columns)).unwrap();
    writeln!(out, "{rule}").unwrap();
    for (g, rows) in t.groups.iter().zip(&cells) {
        if let Some(n) = &g.name {
            writeln!(out, "{n}").unwrap();
        }
        for r in rows {
            writeln!(out, "{}", line(r)).unwrap();
        }
    }
    writeln!(out, "{rule}").unwrap();
    Ok(out)
}

/// Mean human-evaluation scores per model.
pub fn human_eval_table(summary: &HumanEvalSummary, title: &str) -> ReportTable {
    let scales = [Scale::Persuasiveness, Scale::Fluency, Scale::ArgumentQuality, Scale::Meaning];
    ReportTable {
        title: title.to_string(),
        columns: std::iter::once("Model".to_string())
            .chain(scales.iter().map(|s| s.title().to_string()))
            .collect(),
        groups: vec![RowGroup {
            name: None,
            rows: summary
                .models
                .iter()
                .map(|(m, s)| TableRow {
                    label: m.clone(),
                    values: scales.iter().map(|sc| s.means.get(sc).copied()).collect(),
                })
                .collect(),
        }],
    }
}

/// Kappa and alpha per model and scale, as `kappa/alpha` text cells.
pub fn render_agreement_table(summary: &HumanEvalSummary, title: &str) -> String {
    let scales = [Scale::Persuasiveness, Scale::Fluency, Scale::ArgumentQuality, Scale::Meaning];
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("Model".to_string())
        .chain(scales.iter().map(|s| s.title().to_string()))
        .collect()];
    for (m, s) in &summary.models {
        let mut row = vec![m.clone()];
        for sc in &scales {
            row.push(match s.agreement.get(sc) {
                Some(a) => format!("{}/{}", format_cell(Some(a.kappa)), format_cell(Some(a.alpha))),
                None => MISSING_CELL.to_string(),
            });
        }
        rows.push(row);
    }
    let mut widths = vec![0; scales.len() + 1];
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
    let mut out = format!("{title}\n{rule}\n");
    for (i, r) in rows.iter().enumerate() {
        let mut s = format!("{:<w$}", r[0], w = widths[0]);
        for (c, w) in r[1..].iter().zip(&widths[1..]) {
            write!(s, "  {:>w$}", c, w = *w).unwrap();
        }
        writeln!(out, "{}", s.trim_end()).unwrap();
        if i == 0 {
            writeln!(out, "{rule}").unwrap();
        }
    }
    writeln!(out, "{rule}").unwrap();
    out
}

/// Score-versus-shots series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSeries {
    pub name: String,
    pub points: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotData {
    #[serde(default = "default_x")]
    pub x_label: String,
    pub series: Vec<PlotSeries>,
}

fn default_x() -> String {
    "k".into()
}

impl PlotData {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// Tab-separated columns, one row per x value; missing points are empty.
pub fn render_plot_tsv(p: &PlotData) -> Result<String> {
    let xs: BTreeSet<u32> = p.series.iter().flat_map(|s| s.points.iter().map(|pt| pt.0)).collect();
    for s in &p.series {
        let distinct: BTreeSet<u32> = s.points.iter().map(|pt| pt.0).collect();
        if distinct.len() != s.points.len() {
            return Err(Error::Invalid(format!("series `{}` repeats an x value", s.name)));
        }
        if s.points.iter().any(|pt| !pt.1.is_finite()) {
            return Err(Error::Invalid(format!("series `{}` has a non-finite value", s.name)));
        }
    }
    let mut out = p.x_label.clone();
    for s in &p.series {
        write!(out, "\t{}", s.name).unwrap();
    }
    out.push('\n');
    for x in xs {
        write!(out, "{x}").unwrap();
        for s in &p.series {
            out.push('\t');
            if let Some(pt) = s.points.iter().find(|pt| pt.0 == x) {
                write!(out, "{:?}", pt.1).unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}
