use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Average, ClassMetrics, ConfusionMatrix, Degenerate, EvalError, EvalReport};
use crate::dataio::ClassLabel;
use crate::train::TrainHistory;

fn title(k: ClassLabel) -> &'static str {
    match k {
        ClassLabel::Truth => "Truth",
        ClassLabel::Lie => "Lie",
    }
}

impl EvalReport {
    /// Aligned table with rows Truth, Lie, Accuracy, Macro avg, Weighted avg;
    /// rates shown to two decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>12} {:>10} {:>10} {:>10} {:>10}\n\n", "", "precision", "recall", "f1-score", "support");
        for k in ClassLabel::ALL {
            let c = self.class(k);
            let _ = writeln!(
                out,
                "{:>12} {:>10.2} {:>10.2} {:>10.2} {:>10}",
                title(k),
                c.precision,
                c.recall,
                c.f1,
                c.support
            );
        }
        out.push('\n');
        let total = self.confusion.total();
        let _ = writeln!(out, "{:>12} {:>10} {:>10} {:>10.2} {:>10}", "Accuracy", "", "", self.accuracy, total);
        for (name, a) in [("Macro avg", &self.macro_avg), ("Weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{:>12} {:>10.2} {:>10.2} {:>10.2} {:>10}",
                name, a.precision, a.recall, a.f1, a.support
            );
        }
        if let Some(l) = self.test_loss {
            let _ = writeln!(out, "\ntest loss: {l:.4}");
        }
        let flagged: Vec<String> = ClassLabel::ALL
            .iter()
            .filter(|&&k| self.class(k).degenerate.any())
            .map(|&k| format!("{} ({})", title(k), degenerate_text(&self.class(k).degenerate)))
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "zero-denominator metrics set to 0: {}", flagged.join(", "));
        }
        out
    }

    /// `key = value` lines at full precision; inverse of
    /// [`from_kv`](Self::from_kv).
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy = {}", self.accuracy);
        if let Some(l) = self.test_loss {
            let _ = writeln!(out, "test_loss = {l}");
        }
        for k in ClassLabel::ALL {
            let c = self.class(k);
            let n = k.name();
            let _ = writeln!(out, "{n}.precision = {}", c.precision);
            let _ = writeln!(out, "{n}.recall = {}", c.recall);
            let _ = writeln!(out, "{n}.f1 = {}", c.f1);
            let _ = writeln!(out, "{n}.support = {}", c.support);
            let _ = writeln!(out, "{n}.degenerate = {}", degenerate_text(&c.degenerate));
        }
        for (n, a) in [("macro", &self.macro_avg), ("weighted", &self.weighted_avg)] {
            let _ = writeln!(out, "{n}.precision = {}", a.precision);
            let _ = writeln!(out, "{n}.recall = {}", a.recall);
            let _ = writeln!(out, "{n}.f1 = {}", a.f1);
            let _ = writeln!(out, "{n}.support = {}", a.support);
        }
        for a in ClassLabel::ALL {
            for p in ClassLabel::ALL {
                let _ = writeln!(out, "confusion.{}.{} = {}", a.name(), p.name(), self.confusion.get(a, p));
            }
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| format!("missing {k}"));
        let f = |k: &str| get(k)?.parse::<f64>().map_err(|e| format!("{k}: {e}"));
        let u = |k: &str| get(k)?.parse::<u64>().map_err(|e| format!("{k}: {e}"));
        let mut per_class = [ClassMetrics::default(); 2];
        for k in ClassLabel::ALL {
            let n = k.name();
            per_class[k.index()] = ClassMetrics {
                precision: f(&format!("{n}.precision"))?,
                recall: f(&format!("{n}.recall"))?,
                f1: f(&format!("{n}.f1"))?,
                support: u(&format!("{n}.support"))?,
                degenerate: parse_degenerate(get(&format!("{n}.degenerate"))?)?,
            };
        }
        let avg = |n: &str| -> Result<Average, String> {
            Ok(Average {
                precision: f(&format!("{n}.precision"))?,
                recall: f(&format!("{n}.recall"))?,
                f1: f(&format!("{n}.f1"))?,
                support: u(&format!("{n}.support"))?,
            })
        };
        let mut counts = [[0u64; 2]; 2];
        for a in ClassLabel::ALL {
            for p in ClassLabel::ALL {
                counts[a.index()][p.index()] = u(&format!("confusion.{}.{}", a.name(), p.name()))?;
            }
        }
        Ok(Self {
            per_class,
            accuracy: f("accuracy")?,
            macro_avg: avg("macro")?,
            weighted_avg: avg("weighted")?,
            test_loss: if kv.contains_key("test_loss") { Some(f("test_loss")?) } else { None },
            confusion: ConfusionMatrix::from_counts(counts),
        })
    }
}

fn degenerate_text(d: &Degenerate) -> String {
    let parts: Vec<&str> = [(d.precision, "precision"), (d.recall, "recall"), (d.f1, "f1")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(",")
    }
}

fn parse_degenerate(s: &str) -> Result<Degenerate, String> {
    let mut d = Degenerate::default();
    if s == "none" {
        return Ok(d);
    }
    for part in s.split(',') {
        match part.trim() {
            "precision" => d.precision = true,
            "recall" => d.recall = true,
            "f1" => d.f1 = true,
            other => return Err(format!("unknown degenerate flag {other}")),
        }
    }
    Ok(d)
}

impl ConfusionMatrix {
    /// 2×2 CSV with row labels `actual_*` and column labels `predicted_*`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(",predicted_truth,predicted_lie\n");
        for a in ClassLabel::ALL {
            let _ = writeln!(
                out,
                "actual_{},{},{}",
                a.name(),
                self.get(a, ClassLabel::Truth),
                self.get(a, ClassLabel::Lie)
            );
        }
        out
    }
}

/// Output file locations for [`export_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub table: PathBuf,
    pub kv: PathBuf,
    pub history: PathBuf,
    pub confusion: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            table: dir.join("report.txt"),
            kv: dir.join("metrics.kv"),
            history: dir.join("history.csv"),
            confusion: dir.join("confusion.csv"),
        }
    }
}

/// Writes the table, the key-value metrics, the curve CSV (header only for
/// an empty history) and the confusion CSV.
pub fn export_report(report: &EvalReport, history: &TrainHistory, paths: &ReportPaths) -> Result<(), EvalError> {
    let write = |p: &Path, text: String| {
        fs::write(p, text).map_err(|source| EvalError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    write(&paths.table, report.to_table())?;
    write(&paths.kv, report.to_kv())?;
    write(&paths.history, history.to_csv())?;
    write(&paths.confusion, report.confusion.to_csv())
}
