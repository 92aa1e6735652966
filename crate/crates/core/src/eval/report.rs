use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::classifiers::ClassifierKind;

/// Accuracy of one classifier on one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub variant: String,
    pub category: String,
    pub classifier: ClassifierKind,
    pub k: usize,
    pub seed: u64,
    pub correct: usize,
    pub total: usize,
    /// `correct / total`.
    pub accuracy: f64,
}

/// Mean accuracy over seeds for one `(variant, category, classifier, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub variant: String,
    pub category: String,
    pub classifier: ClassifierKind,
    pub k: usize,
    pub seeds: usize,
    pub mean: f64,
}

/// Unweighted mean of the per-category cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageCell {
    pub variant: String,
    pub classifier: ClassifierKind,
    pub k: usize,
    pub categories: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            "text" | "text-table" => Some(ReportFormat::Text),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Text => "txt",
        }
    }
}

/// Episode accuracies in canonical order: variant (as listed), category,
/// classifier, K, seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    variants: Vec<String>,
    rows: Vec<ResultRow>,
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    variants: Vec<String>,
    rows: Vec<ResultRow>,
    #[serde(default)]
    cells: Vec<CellMean>,
    #[serde(default)]
    averages: Vec<AverageCell>,
}

type RowKey = (usize, String, ClassifierKind, usize, u64);

impl ResultTable {
    /// Variants not listed in `variants` are appended in order of appearance.
    pub fn new(mut variants: Vec<String>, rows: Vec<ResultRow>) -> Result<Self, EvalError> {
        for r in &rows {
            if !variants.contains(&r.variant) {
                variants.push(r.variant.clone());
            }
            if r.total == 0 || r.correct > r.total {
                return Err(EvalError::Format(format!(
                    "row {}/{}/{}/K={}/seed={} has {} of {} correct",
                    r.variant, r.category, r.classifier, r.k, r.seed, r.correct, r.total
                )));
            }
        }
        let key = |r: &ResultRow| -> RowKey {
            (
                variants.iter().position(|v| v == &r.variant).expect("added above"),
                r.category.clone(),
                r.classifier,
                r.k,
                r.seed,
            )
        };
        let mut keyed: Vec<(RowKey, ResultRow)> = rows.into_iter().map(|r| (key(&r), r)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
            let r = &w[0].1;
            return Err(EvalError::Format(format!(
                "duplicate result {}/{}/{}/K={}/seed={}",
                r.variant, r.category, r.classifier, r.k, r.seed
            )));
        }
        Ok(ResultTable {
            variants,
            rows: keyed.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn variants(&self) -> &[String] {
        &self.variants
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Concatenates tables; variant names must not overlap.
    pub fn merge(tables: Vec<ResultTable>) -> Result<Self, EvalError> {
        let mut variants = Vec::new();
        let mut rows = Vec::new();
        for t in tables {
            variants.extend(t.variants);
            rows.extend(t.rows);
        }
        ResultTable::new(variants, rows)
    }

    fn grouped<K: Ord>(&self, key: impl Fn(&ResultRow) -> K) -> BTreeMap<K, Vec<&ResultRow>> {
        let mut m: BTreeMap<K, Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            m.entry(key(r)).or_default().push(r);
        }
        m
    }

    pub fn cell_means(&self) -> Vec<CellMean> {
        self.grouped(|r| {
            (
                self.variants.iter().position(|v| v == &r.variant),
                r.category.clone(),
                r.classifier,
                r.k,
            )
        })
        .into_values()
        .map(|rows| CellMean {
            variant: rows[0].variant.clone(),
            category: rows[0].category.clone(),
            classifier: rows[0].classifier,
            k: rows[0].k,
            seeds: rows.len(),
            mean: rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64,
        })
        .collect()
    }

    pub fn averages(&self) -> Vec<AverageCell> {
        let mut groups: BTreeMap<(Option<usize>, ClassifierKind, usize), Vec<CellMean>> = BTreeMap::new();
        for c in self.cell_means() {
            let v = self.variants.iter().position(|v| v == &c.variant);
            groups.entry((v, c.classifier, c.k)).or_default().push(c);
        }
        groups
            .into_values()
            .map(|cells| AverageCell {
                variant: cells[0].variant.clone(),
                classifier: cells[0].classifier,
                k: cells[0].k,
                categories: cells.len(),
                mean: cells.iter().map(|c| c.mean).sum::<f64>() / cells.len() as f64,
            })
            .collect()
    }

    /// Average for one row of the report, if present.
    pub fn average(&self, variant: &str, classifier: ClassifierKind, k: usize) -> Option<f64> {
        self.averages()
            .into_iter()
            .find(|a| a.variant == variant && a.classifier == classifier && a.k == k)
            .map(|a| a.mean)
    }

    pub fn to_json(&self) -> String {
        let doc = JsonDoc {
            variants: self.variants.clone(),
            rows: self.rows.clone(),
            cells: self.cell_means(),
            averages: self.averages(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
        s.push('\n');
        s
    }

    /// Aggregates in the document are ignored and recomputed.
    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        let doc: JsonDoc = serde_json::from_str(s).map_err(|e| EvalError::Format(e.to_string()))?;
        ResultTable::new(doc.variants, doc.rows)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("serializable");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8")
    }

    pub fn from_csv(s: &str) -> Result<Self, EvalError> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let rows = rdr
            .deserialize()
            .collect::<Result<Vec<ResultRow>, _>>()
            .map_err(|e| EvalError::Format(e.to_string()))?;
        ResultTable::new(Vec::new(), rows)
    }

    /// One block per variant and K: a row per classifier, a column per
    /// category plus the average, accuracies in percent at one decimal.
    pub fn to_text(&self) -> String {
        let cells = self.cell_means();
        let averages = self.averages();
        let mut out = String::new();
        for variant in &self.variants {
            let mut ks: Vec<usize> = self.rows.iter().filter(|r| &r.variant == variant).map(|r| r.k).collect();
            ks.sort_unstable();
            ks.dedup();
            for k in ks {
                let mut categories: Vec<&str> = cells
                    .iter()
                    .filter(|c| &c.variant == variant && c.k == k)
                    .map(|c| c.category.as_str())
                    .collect();
                categories.sort_unstable();
                categories.dedup();
                let mut classifiers: Vec<ClassifierKind> = cells
                    .iter()
                    .filter(|c| &c.variant == variant && c.k == k)
                    .map(|c| c.classifier)
                    .collect();
                classifiers.sort_unstable();
                classifiers.dedup();

                let mut header = vec!["Model".to_string()];
                header.extend(categories.iter().map(|c| c.to_string()));
                header.push("Average".into());
                let mut lines = vec![header];
                for &clf in &classifiers {
                    let mut line = vec![clf.display_name().to_string()];
                    for cat in &categories {
                        let v = cells
                            .iter()
                            .find(|c| &c.variant == variant && c.k == k && c.classifier == clf && c.category == *cat)
                            .map(|c| format!("{:.1}", 100.0 * c.mean))
                            .unwrap_or_else(|| "-".into());
                        line.push(v);
                    }
                    let avg = averages
                        .iter()
                        .find(|a| &a.variant == variant && a.k == k && a.classifier == clf)
                        .map(|a| format!("{:.1}", 100.0 * a.mean))
                        .unwrap_or_else(|| "-".into());
                    line.push(avg);
                    lines.push(line);
                }
                let widths: Vec<usize> = (0..lines[0].len())
                    .map(|j| lines.iter().map(|l| l[j].len()).max().unwrap_or(0))
                    .collect();
                let _ = writeln!(out, "[{variant}] {k}-shot");
                for l in &lines {
                    let cols: Vec<String> = l
                        .iter()
                        .enumerate()
                        .map(|(j, s)| {
                            if j == 0 {
                                format!("{s:<w$}", w = widths[j])
                            } else {
                                format!("{s:>w$}", w = widths[j])
                            }
                        })
                        .collect();
                    let _ = writeln!(out, "{}", cols.join("  ").trim_end());
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> Result<String, EvalError> {
        if self.rows.is_empty() {
            return Err(EvalError::EmptyTable);
        }
        Ok(match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Text => self.to_text(),
        })
    }
}

/// Writes `table` in `format`; an empty table is an error and nothing is written.
pub fn emit_report(table: &ResultTable, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    let body = table.render(format)?;
    std::fs::write(path, body).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
