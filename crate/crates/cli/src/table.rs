//! Report model and its text, CSV and JSON renderings.
//!
//! Numbers are rounded once when a [`Cell`] is built, so every format prints
//! the same value.

use serde::Serialize;
use spatconv::report::{round_to, significance_tier};

use crate::error::CliResult;

pub const DIGITS: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Value {
        value: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        tier: Option<&'static str>,
    },
    Count {
        value: f64,
    },
    Text(String),
    NotApplicable,
}

impl Cell {
    pub fn num(v: f64) -> Self {
        Cell::Value {
            value: round_to(v, DIGITS),
            tier: None,
        }
    }

    /// Estimate flagged with its significance tier.
    pub fn est(v: f64, p: Option<f64>) -> Self {
        let tier = p.map(significance_tier).filter(|t| !t.is_empty());
        Cell::Value {
            value: round_to(v, DIGITS),
            tier,
        }
    }

    pub fn opt(v: Option<f64>) -> Self {
        v.map_or(Cell::NotApplicable, Cell::num)
    }

    pub fn count(v: usize) -> Self {
        Cell::Count { value: v as f64 }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    fn value_str(&self) -> String {
        match self {
            Cell::Count { value } => format!("{value:.0}"),
            Cell::Value { value, .. } => format!("{value:.prec$}", prec = DIGITS as usize),
            Cell::Text(s) => s.clone(),
            Cell::NotApplicable => "n/a".into(),
        }
    }

    fn tier_str(&self) -> &'static str {
        match self {
            Cell::Value { tier: Some(t), .. } => t,
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(Row {
            label: label.into(),
            cells,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            tables: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn extend(&mut self, other: Report) {
        for mut t in other.tables {
            t.name = format!("{}/{}", other.command, t.name);
            self.tables.push(t);
        }
        self.notes.extend(other.notes.into_iter().map(|n| format!("{}: {n}", other.command)));
    }

    pub fn render(&self, format: Format) -> CliResult<String> {
        match format {
            Format::Text => Ok(self.text()),
            Format::Csv => self.csv(),
            Format::Json => Ok(serde_json::to_string_pretty(self)? + "\n"),
        }
    }

    fn text(&self) -> String {
        let mut out = String::new();
        for table in &self.tables {
            out.push_str(&format!("== {} ==\n", table.name));
            let cells: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| r.cells.iter().map(|c| format!("{}{}", c.value_str(), c.tier_str())).collect())
                .collect();
            let label_w = table.rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0);
            let widths: Vec<usize> = table
                .columns
                .iter()
                .enumerate()
                .map(|(j, c)| cells.iter().map(|r| r[j].chars().count()).chain([c.chars().count()]).max().unwrap())
                .collect();
            out.push_str(&format!("{:label_w$}", ""));
            for (c, w) in table.columns.iter().zip(&widths) {
                out.push_str(&format!("  {c:>w$}"));
            }
            out.push('\n');
            for (row, cs) in table.rows.iter().zip(&cells) {
                out.push_str(&format!("{:label_w$}", row.label));
                for (c, w) in cs.iter().zip(&widths) {
                    out.push_str(&format!("  {c:>w$}"));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        if self.tables.iter().any(|t| t.rows.iter().any(|r| r.cells.iter().any(|c| !c.tier_str().is_empty())))
        {
            out.push_str("a: p < 0.01, b: p < 0.05, c: p < 0.10\n");
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }

    /// Long format: one line per cell.
    fn csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["table", "row", "column", "value", "tier"])?;
        for table in &self.tables {
            for row in &table.rows {
                for (col, cell) in table.columns.iter().zip(&row.cells) {
                    w.write_record([
                        table.name.as_str(),
                        row.label.as_str(),
                        col.as_str(),
                        &cell.value_str(),
                        cell.tier_str(),
                    ])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut t = Table::new("t", vec!["a".into(), "b".into()]);
        t.push("x", vec![Cell::est(-0.20004, Some(0.001)), Cell::NotApplicable]);
        t.push("y", vec![Cell::count(12), Cell::num(0.43078)]);
        Report {
            command: "demo".into(),
            tables: vec![t],
            notes: Vec::new(),
        }
    }

    #[test]
    fn formats_carry_the_same_numbers() {
        let r = sample();
        let json: serde_json::Value = serde_json::from_str(&r.render(Format::Json).unwrap()).unwrap();
        assert_eq!(json["tables"][0]["rows"][1]["cells"][1]["value"], 0.431);
        let csv = r.render(Format::Csv).unwrap();
        assert!(csv.contains("t,x,a,-0.200,a\n"));
        assert!(csv.contains("t,y,b,0.431,\n"));
        let text = r.render(Format::Text).unwrap();
        assert!(text.contains("-0.200a"));
        assert!(text.contains("n/a"));
    }

    #[test]
    fn negative_zero_is_printed_as_zero() {
        assert_eq!(Cell::num(-0.0001).value_str(), "0.000");
    }
}
