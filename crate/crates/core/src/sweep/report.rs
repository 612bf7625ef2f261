use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::store::StoreContents;
use crate::algorithms::{AlgorithmKind, Family};
use crate::error::{Error, Result};
use crate::selection::{select, select_loo, Choice, RetrainDirective, SelectionMethod, TrialRecord};

/// Rendered for a cell without any successful seed.
pub const MISSING_CELL: &str = "\u{2014}";
/// Appended to a cell backed by a single seed.
pub const SINGLE_SEED_FLAG: &str = "*";

/// Records of one (dataset, test modality, algorithm).
#[derive(Clone, Debug)]
pub struct Group<'a> {
    pub dataset: String,
    pub perceptor: String,
    pub test_modality: String,
    pub algorithm: AlgorithmKind,
    pub records: Vec<&'a TrialRecord>,
}

impl Group<'_> {
    /// Training modalities seen by any record of the group.
    pub fn training_modalities(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for r in &self.records {
            let a = &r.accuracies;
            names.extend(a.train_val.keys().cloned());
            names.extend(a.loo.keys().cloned());
            names.extend(a.loo_failed.iter().cloned());
        }
        names.into_iter().collect()
    }

    /// True when the group was swept with leave-one-out sub-runs.
    pub fn has_loo(&self) -> bool {
        self.records
            .iter()
            .any(|r| !r.accuracies.loo.is_empty() || !r.accuracies.loo_failed.is_empty())
    }

    fn owned(&self) -> Vec<TrialRecord> {
        self.records.iter().map(|&r| r.clone()).collect()
    }
}

pub fn group_records(contents: &StoreContents) -> Vec<Group<'_>> {
    let mut groups: BTreeMap<(String, String, String, AlgorithmKind), Group<'_>> = BTreeMap::new();
    for r in &contents.trials {
        let p = &r.provenance;
        let perceptor = p.perceptor.clone().unwrap_or_else(|| "-".into());
        let key = (p.dataset.clone(), perceptor.clone(), p.test_modality.clone(), p.algorithm);
        groups
            .entry(key)
            .or_insert_with(|| Group {
                dataset: p.dataset.clone(),
                perceptor,
                test_modality: p.test_modality.clone(),
                algorithm: p.algorithm,
                records: Vec::new(),
            })
            .records
            .push(r);
    }
    groups.into_values().collect()
}

/// Selection outcome of one group under one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub dataset: String,
    pub perceptor: String,
    pub test_modality: String,
    pub algorithm: AlgorithmKind,
    pub method: SelectionMethod,
    pub choices: Vec<Choice>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrain: Vec<RetrainDirective>,
}

/// Runs `method` over every group; groups without any usable trial are reported with
/// no choices. Leave-one-out skips groups that were not swept with sub-runs.
pub fn select_all(contents: &StoreContents, method: SelectionMethod) -> Result<Vec<GroupSelection>> {
    let mut out = Vec::new();
    for g in group_records(contents) {
        if method == SelectionMethod::Loo && !g.has_loo() {
            continue;
        }
        let records = g.owned();
        let training = g.training_modalities();
        let (choices, retrain) = if method == SelectionMethod::Loo {
            match select_loo(&records, &training) {
                Ok(v) => v.into_iter().unzip(),
                Err(Error::EmptySelection(_)) => (Vec::new(), Vec::new()),
                Err(e) => return Err(e),
            }
        } else {
            match select(method, &records, &training) {
                Ok(v) => (v, Vec::new()),
                Err(Error::EmptySelection(_)) => (Vec::new(), Vec::new()),
                Err(e) => return Err(e),
            }
        };
        out.push(GroupSelection {
            dataset: g.dataset,
            perceptor: g.perceptor,
            test_modality: g.test_modality,
            algorithm: g.algorithm,
            method,
            choices,
            retrain,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation (`n - 1`); the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

/// `"52.0 ± 2.0"`, flagged when backed by one seed, or the missing marker.
pub fn format_cell(values: &[f64]) -> String {
    match mean_std(values) {
        None => MISSING_CELL.to_string(),
        Some((m, s)) if values.len() == 1 => format!("{m:.1} \u{b1} {s:.1}{SINGLE_SEED_FLAG}"),
        Some((m, s)) => format!("{m:.1} \u{b1} {s:.1}"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Test accuracy of the chosen trial, per seed.
    pub values: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Cell {
    fn new(values: Vec<f64>) -> Self {
        let ms = mean_std(&values);
        Self {
            mean: ms.map(|(m, _)| m),
            std: ms.map(|(_, s)| s),
            values,
        }
    }

    pub fn render(&self) -> String {
        format_cell(&self.values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub perceptor: String,
    pub family: Family,
    pub algorithm: AlgorithmKind,
    /// Aligned with the table's modalities.
    pub cells: Vec<Cell>,
    /// Unweighted mean of the modality means; absent unless every cell has one.
    pub avg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub dataset: String,
    pub method: SelectionMethod,
    pub modalities: Vec<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub tables: Vec<ReportTable>,
}

/// One table per (dataset, selection method): rows are algorithms (grouped by perceptor
/// and family), columns are test modalities plus their average.
pub fn aggregate_report(contents: &StoreContents) -> Result<SelectionReport> {
    let mut tables = Vec::new();
    for method in SelectionMethod::ALL {
        let selections = select_all(contents, method)?;
        let datasets: BTreeSet<&str> = selections.iter().map(|s| s.dataset.as_str()).collect();
        for dataset in datasets {
            let here: Vec<&GroupSelection> = selections.iter().filter(|s| s.dataset == dataset).collect();
            let modalities: Vec<String> = here
                .iter()
                .map(|s| s.test_modality.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut rows: BTreeMap<(String, u8, usize), ReportRow> = BTreeMap::new();
            for s in &here {
                let family = s.algorithm.family();
                let order = AlgorithmKind::ALL.iter().position(|&k| k == s.algorithm).unwrap_or(0);
                let key = (s.perceptor.clone(), (family == Family::Dg) as u8, order);
                let row = rows.entry(key).or_insert_with(|| ReportRow {
                    perceptor: s.perceptor.clone(),
                    family,
                    algorithm: s.algorithm,
                    cells: vec![Cell::new(Vec::new()); modalities.len()],
                    avg: None,
                });
                let col = modalities.iter().position(|m| *m == s.test_modality).expect("collected above");
                row.cells[col] = Cell::new(s.choices.iter().map(|c| c.test).collect());
            }
            let rows = rows
                .into_values()
                .map(|mut r| {
                    let means: Option<Vec<f64>> = r.cells.iter().map(|c| c.mean).collect();
                    r.avg = means.map(|m| m.iter().sum::<f64>() / m.len() as f64);
                    r
                })
                .collect();
            tables.push(ReportTable {
                dataset: dataset.to_string(),
                method,
                modalities,
                rows,
            });
        }
    }
    Ok(SelectionReport { tables })
}

impl SelectionReport {
    /// Aligned plain-text tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut flagged = false;
        for t in &self.tables {
            let mut header = vec!["Perceptor".to_string(), "Family".into(), "Algorithm".into()];
            header.extend(t.modalities.iter().cloned());
            header.push("Avg".into());
            let mut body: Vec<Vec<String>> = Vec::new();
            for r in &t.rows {
                let mut line = vec![r.perceptor.clone(), r.family.to_string(), r.algorithm.to_string()];
                for c in &r.cells {
                    flagged |= c.values.len() == 1;
                    line.push(c.render());
                }
                line.push(r.avg.map_or_else(|| MISSING_CELL.to_string(), |a| format!("{a:.1}")));
                body.push(line);
            }
            let widths: Vec<usize> = (0..header.len())
                .map(|i| {
                    std::iter::once(&header)
                        .chain(&body)
                        .map(|l| l[i].chars().count())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let fmt_line = |cells: &[String]| {
                let mut s = String::new();
                for (i, c) in cells.iter().enumerate() {
                    let pad = widths[i] - c.chars().count();
                    if i > 0 {
                        s.push_str("  ");
                    }
                    if i < 3 {
                        s.push_str(c);
                        s.push_str(&" ".repeat(pad));
                    } else {
                        s.push_str(&" ".repeat(pad));
                        s.push_str(c);
                    }
                }
                s.trim_end().to_string()
            };
            let _ = writeln!(out, "{} | {}", t.dataset, t.method.title());
            let head = fmt_line(&header);
            let _ = writeln!(out, "{head}");
            let _ = writeln!(out, "{}", "-".repeat(head.chars().count()));
            for l in &body {
                let _ = writeln!(out, "{}", fmt_line(l));
            }
            out.push('\n');
        }
        if flagged {
            let _ = writeln!(out, "{SINGLE_SEED_FLAG} only one seed succeeded; its deviation is reported as 0.0");
        }
        out
    }

    /// One CSV row per (table, algorithm); empty fields mark missing values.
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        let all_modalities: BTreeSet<&String> = self.tables.iter().flat_map(|t| &t.modalities).collect();
        let mut header = vec!["dataset".to_string(), "selection".into(), "perceptor".into(), "family".into(), "algorithm".into()];
        for m in &all_modalities {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        header.push("avg".into());
        let _ = writeln!(out, "{}", header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
        for t in &self.tables {
            for r in &t.rows {
                let mut line = vec![
                    csv_field(&t.dataset),
                    t.method.name().to_string(),
                    csv_field(&r.perceptor),
                    r.family.to_string(),
                    csv_field(r.algorithm.name()),
                ];
                for m in &all_modalities {
                    let cell = t.modalities.iter().position(|x| x == *m).map(|i| &r.cells[i]);
                    line.push(num(cell.and_then(|c| c.mean)));
                    line.push(num(cell.and_then(|c| c.std)));
                }
                line.push(num(r.avg));
                let _ = writeln!(out, "{}", line.join(","));
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Regime;
    use crate::selection::{Accuracies, Provenance, TrialStatus, SCHEMA_VERSION};

    fn rec(alg: AlgorithmKind, test_modality: &str, trial: usize, seed: usize, val: f64, test: Option<f64>) -> TrialRecord {
        TrialRecord {
            provenance: Provenance {
                schema_version: SCHEMA_VERSION,
                plan_hash: format!("h-{test_modality}"),
                dataset_id: "toy@0".into(),
                dataset: "toy".into(),
                perceptor: Some("bind".into()),
                regime: Regime::Weak,
                test_modality: test_modality.into(),
                algorithm: alg,
                trial,
                seed_index: seed,
                seed: seed as u64,
                steps: 1,
            },
            hparams: BTreeMap::new(),
            status: if test.is_some() { TrialStatus::Ok } else { TrialStatus::Failed },
            error: None,
            accuracies: Accuracies {
                train_val: [("x".to_string(), val)].into(),
                test_val: Some(val),
                test,
                ..Accuracies::default()
            },
        }
    }

    #[test]
    fn cell_formatting() {
        assert_eq!(format_cell(&[50.0, 52.0, 54.0]), "52.0 \u{b1} 2.0");
        assert_eq!(format_cell(&[41.26]), "41.3 \u{b1} 0.0*");
        assert_eq!(format_cell(&[]), MISSING_CELL);
    }

    #[test]
    fn report_fixture() {
        let mut trials = Vec::new();
        // ERM: modality a seeds {50, 52, 54}; modality b seeds {30, 30, 30}.
        for (seed, t) in [50.0, 52.0, 54.0].iter().enumerate() {
            trials.push(rec(AlgorithmKind::Erm, "a", 0, seed, 1.0, Some(*t)));
            trials.push(rec(AlgorithmKind::Erm, "a", 1, seed, 0.5, Some(99.0)));
            trials.push(rec(AlgorithmKind::Erm, "b", 0, seed, 1.0, Some(30.0)));
        }
        // Concat: a has one surviving seed, b failed everywhere.
        trials.push(rec(AlgorithmKind::Concat, "a", 0, 0, 1.0, Some(20.0)));
        trials.push(rec(AlgorithmKind::Concat, "a", 0, 1, 1.0, None));
        trials.push(rec(AlgorithmKind::Concat, "b", 0, 0, 1.0, None));
        let contents = StoreContents {
            trials,
            ..StoreContents::default()
        };
        let report = aggregate_report(&contents).unwrap();
        // No leave-one-out records: TM and oracle only.
        assert_eq!(report.tables.len(), 2);
        let tm = &report.tables[0];
        assert_eq!(tm.modalities, vec!["a", "b"]);
        assert_eq!(tm.rows[0].algorithm, AlgorithmKind::Concat);
        let erm = &tm.rows[1];
        assert_eq!(erm.cells[0].render(), "52.0 \u{b1} 2.0");
        assert_eq!(erm.avg, Some((52.0 + 30.0) / 2.0));
        assert_eq!(tm.rows[0].cells[1].render(), MISSING_CELL);
        assert_eq!(tm.rows[0].avg, None);
        let text = report.render_text();
        assert!(text.contains("52.0 \u{b1} 2.0") && text.contains("20.0 \u{b1} 0.0*") && text.contains("only one seed"));
        let csv = report.render_csv();
        assert!(csv.starts_with("dataset,selection,perceptor,family,algorithm,a_mean,a_std,b_mean,b_std,avg\n"));
        assert!(csv.contains("toy,tm,bind,DG,ERM,52.0000,2.0000,30.0000,0.0000,41.0000"));
        assert_eq!(aggregate_report(&contents).unwrap().render_text(), text);
    }
}
