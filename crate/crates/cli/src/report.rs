//! Selection tables: one column per budget, a 0/1 row per SCM unit and a row
//! per DCM unit listing its selected sample times.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::ObjectiveTag;
use crate::error::{CliError, Result};
use crate::pipeline::SolutionDocument;

/// The selection at one budget.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionColumn {
    pub budget: i64,
    pub scm: Vec<(String, f64)>,
    /// `(time, value)` of every nonzero sample; value is 1 for integral solutions.
    pub dcm: Vec<(String, Vec<(f64, f64)>)>,
}

impl SelectionColumn {
    pub fn from_document(doc: &SolutionDocument) -> Self {
        SelectionColumn {
            budget: doc.budget,
            scm: doc.scm_units.clone(),
            dcm: doc.dcm_units.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionTable {
    pub objective: ObjectiveTag,
    /// Ascending in budget.
    pub columns: Vec<SelectionColumn>,
}

/// Reads every `solution_*.json` in `dir`, sorted by objective then budget.
pub fn load_documents(dir: &Path) -> Result<Vec<SolutionDocument>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut docs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if !(name.starts_with("solution_") && name.ends_with(".json")) {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        docs.push(serde_json::from_str::<SolutionDocument>(&text)?);
    }
    if docs.is_empty() {
        return Err(CliError::NoData(dir.to_path_buf()));
    }
    docs.sort_by_key(|d| (d.objective, d.budget));
    Ok(docs)
}

pub fn build_tables(docs: &[SolutionDocument]) -> Result<Vec<SelectionTable>> {
    let mut tables: Vec<SelectionTable> = Vec::new();
    for d in docs {
        let col = SelectionColumn::from_document(d);
        match tables.iter_mut().find(|t| t.objective == d.objective) {
            Some(t) => t.columns.push(col),
            None => tables.push(SelectionTable {
                objective: d.objective,
                columns: vec![col],
            }),
        }
    }
    for t in &mut tables {
        t.columns.sort_by_key(|c| c.budget);
        t.check_layout()?;
    }
    tables.sort_by_key(|t| t.objective);
    Ok(tables)
}

fn scm_cell(v: f64, exact: bool) -> String {
    if exact || v == 0.0 || v == 1.0 {
        format!("{v}")
    } else {
        format!("{v:.3}")
    }
}

fn sample_cell(t: f64, w: f64, exact: bool) -> String {
    if w == 1.0 {
        format!("{t}")
    } else if exact {
        format!("{t}({w})")
    } else {
        format!("{t}({w:.2})")
    }
}

fn parse_sample(s: &str) -> Option<(f64, f64)> {
    match s.split_once('(') {
        Some((t, rest)) => Some((t.parse().ok()?, rest.strip_suffix(')')?.parse().ok()?)),
        None => Some((s.parse().ok()?, 1.0)),
    }
}

impl SelectionTable {
    fn check_layout(&self) -> Result<()> {
        let names = |c: &SelectionColumn| {
            (
                c.scm.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
                c.dcm.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
            )
        };
        let first = names(&self.columns[0]);
        if self.columns.iter().any(|c| names(c) != first) {
            return Err(CliError::Report(format!(
                "{} solutions disagree on the unit list; were they produced by one config?",
                self.objective
            )));
        }
        if self.columns.windows(2).any(|w| w[0].budget == w[1].budget) {
            return Err(CliError::Report(format!("{} has duplicate budgets", self.objective)));
        }
        Ok(())
    }

    fn budget_label(b: i64) -> String {
        format!("{:.1}", b as f64 / 1000.0)
    }

    /// Fixed-width table; DCM times are stacked one per line.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["budget [$k]".to_string()];
        header.extend(self.columns.iter().map(|c| Self::budget_label(c.budget)));
        rows.push(header);
        for (k, (name, _)) in self.columns[0].scm.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.columns.iter().map(|c| scm_cell(c.scm[k].1, false)));
            rows.push(row);
        }
        for (k, (name, _)) in self.columns[0].dcm.iter().enumerate() {
            let depth = self.columns.iter().map(|c| c.dcm[k].1.len()).max().unwrap_or(0).max(1);
            for line in 0..depth {
                let mut row = vec![if line == 0 { name.clone() } else { String::new() }];
                row.extend(self.columns.iter().map(|c| match c.dcm[k].1.get(line) {
                    Some(&(t, w)) => sample_cell(t, w, false),
                    None if line == 0 => "-".into(),
                    None => String::new(),
                }));
                rows.push(row);
            }
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut s = format!("{} selections\n", self.objective);
        for r in rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s
    }

    /// Machine-readable form with exact values; [`SelectionTable::from_csv`] inverts it.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["unit".to_string(), "kind".to_string()];
        header.extend(self.columns.iter().map(|c| c.budget.to_string()));
        w.write_record(&header)?;
        for (k, (name, _)) in self.columns[0].scm.iter().enumerate() {
            let mut row = vec![name.clone(), "scm".into()];
            row.extend(self.columns.iter().map(|c| scm_cell(c.scm[k].1, true)));
            w.write_record(&row)?;
        }
        for (k, (name, _)) in self.columns[0].dcm.iter().enumerate() {
            let mut row = vec![name.clone(), "dcm".into()];
            row.extend(self.columns.iter().map(|c| {
                c.dcm[k].1.iter().map(|&(t, v)| sample_cell(t, v, true)).collect::<Vec<_>>().join(";")
            }));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Report(e.to_string()))
    }

    pub fn from_csv(objective: ObjectiveTag, text: &str) -> Result<Self> {
        let bad = |m: String| CliError::Report(m);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "unit" || &header[1] != "kind" {
            return Err(bad("header must be unit,kind,<budget>...".into()));
        }
        let mut columns: Vec<SelectionColumn> = header
            .iter()
            .skip(2)
            .map(|b| {
                Ok(SelectionColumn {
                    budget: b.parse().map_err(|_| bad(format!("bad budget {b:?}")))?,
                    scm: Vec::new(),
                    dcm: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        for rec in r.records() {
            let rec = rec?;
            let name = rec[0].to_string();
            for (c, cell) in columns.iter_mut().zip(rec.iter().skip(2)) {
                match &rec[1] {
                    "scm" => {
                        let v = cell.parse().map_err(|_| bad(format!("bad SCM value {cell:?}")))?;
                        c.scm.push((name.clone(), v));
                    }
                    "dcm" => {
                        let picks = cell
                            .split(';')
                            .filter(|s| !s.is_empty())
                            .map(|s| parse_sample(s).ok_or_else(|| bad(format!("bad sample {s:?}"))))
                            .collect::<Result<_>>()?;
                        c.dcm.push((name.clone(), picks));
                    }
                    k => return Err(bad(format!("unknown row kind {k:?}"))),
                }
            }
        }
        let t = SelectionTable { objective, columns };
        t.check_layout()?;
        Ok(t)
    }
}

pub fn report_text_name(tag: ObjectiveTag) -> String {
    format!("report_{tag}.txt")
}

pub fn report_csv_name(tag: ObjectiveTag) -> String {
    format!("selection_{tag}.csv")
}

/// `report <dir>`: writes text and CSV tables per objective and verifies that
/// each CSV parses back to the table it came from.
pub fn cmd_report(dir: &Path) -> Result<Vec<SelectionTable>> {
    let docs = load_documents(dir)?;
    let tables = build_tables(&docs)?;
    for t in &tables {
        let csv_text = t.to_csv()?;
        let back = SelectionTable::from_csv(t.objective, &csv_text)?;
        if &back != t {
            return Err(CliError::Report(format!("{} table does not survive a CSV round trip", t.objective)));
        }
        let p = dir.join(report_csv_name(t.objective));
        fs::write(&p, csv_text).map_err(|e| CliError::io(&p, e))?;
        let p = dir.join(report_text_name(t.objective));
        fs::write(&p, t.render_text()).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SelectionTable {
        let col = |b, s: [f64; 2], d: Vec<(f64, f64)>| SelectionColumn {
            budget: b,
            scm: vec![("CA_SCM".into(), s[0]), ("CB_SCM".into(), s[1])],
            dcm: vec![("CA_DCM".into(), d), ("CB_DCM".into(), vec![])],
        };
        SelectionTable {
            objective: ObjectiveTag::AMilp,
            columns: vec![
                col(0, [0.0, 0.0], vec![]),
                col(1000, [0.0, 0.0], vec![(45.0, 1.0), (60.0, 1.0)]),
                col(2200, [0.0, 1.0], vec![]),
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = table();
        let back = SelectionTable::from_csv(t.objective, &t.to_csv().unwrap()).unwrap();
        assert_eq!(back, t);
        let mut frac = table();
        frac.objective = ObjectiveTag::DNlp;
        frac.columns[1].scm[0].1 = 0.123456789012345;
        frac.columns[1].dcm[0].1[0].1 = 1.0 / 3.0;
        let back = SelectionTable::from_csv(frac.objective, &frac.to_csv().unwrap()).unwrap();
        assert_eq!(back, frac);
    }

    #[test]
    fn empty_budget_renders_an_all_zero_column() {
        let text = table().render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("budget [$k]"));
        assert!(lines[1].contains("0.0") && lines[1].contains("2.2"));
        let cells = |l: &str| l.split_whitespace().skip(1).map(str::to_string).collect::<Vec<_>>();
        assert_eq!(cells(lines[2]), ["0", "0", "0"]);
        assert_eq!(cells(lines[3]), ["0", "0", "1"]);
        assert_eq!(cells(lines[4]), ["-", "45", "-"]);
        assert_eq!(lines[5].trim(), "60");
        assert_eq!(cells(lines[6]), ["-", "-", "-"]);
    }

    #[test]
    fn empty_dir_is_a_no_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(cmd_report(dir.path()), Err(CliError::NoData(_))));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(SelectionTable::from_csv(ObjectiveTag::AMilp, "unit,kind,1000\nX,other,1\n").is_err());
        assert!(SelectionTable::from_csv(ObjectiveTag::AMilp, "unit,kind,abc\nX,scm,1\n").is_err());
        assert!(SelectionTable::from_csv(ObjectiveTag::AMilp, "name,1000\n").is_err());
    }
}
