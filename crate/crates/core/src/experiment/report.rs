use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Layout;
use crate::error::{Error, Result};
use crate::metrics::{NerCounting, TaskKind};

/// Rounds to the 4 decimals reports carry, so emitted values parse back
/// to the same number.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    /// Best validation weighted F1, rounded to 4 decimals.
    pub weighted_f1: f64,
    /// Id of the trial the value comes from; its artifacts live under
    /// `trials/<id>`.
    pub trial: String,
    pub lr: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub cells: Vec<ReportCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub task: TaskKind,
    pub layout: Layout,
    pub counting: NerCounting,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "text" | "text-table" => Ok(ReportFormat::Text),
            other => Err(Error::config("format", format!("expected `tsv` or `text`, got `{other}`"))),
        }
    }
}

const SELECTION_HEADER: &str = "row\tcolumn\ttrial\tlr\tbest_epoch";

impl ExperimentReport {
    fn header(&self) -> String {
        let mut s = format!(
            "# experiment={}; task={}; layout={}\n",
            self.name,
            self.task.as_str(),
            self.layout.as_str()
        );
        s.push_str("# metric: weighted F1 (weights n_i = N_true) at the best validation epoch; ");
        match self.task {
            TaskKind::Tc => s.push_str("labels: all 7 categories including others\n"),
            TaskKind::Ner => {
                let _ = writeln!(s, "counting={}; O tag excluded", self.counting.as_str());
            }
        }
        s
    }

    /// The table, a blank line, then one selection line per cell naming the
    /// trial behind it.
    pub fn to_tsv(&self) -> String {
        let mut s = self.header();
        let _ = writeln!(s, "{}\t{}", self.layout.corner(), self.columns.join("\t"));
        for r in &self.rows {
            s.push_str(&r.label);
            for c in &r.cells {
                let _ = write!(s, "\t{:.4}", c.weighted_f1);
            }
            s.push('\n');
        }
        s.push('\n');
        s.push_str(SELECTION_HEADER);
        s.push('\n');
        for r in &self.rows {
            for (col, c) in self.columns.iter().zip(&r.cells) {
                let _ = writeln!(s, "{}\t{col}\t{}\t{}\t{}", r.label, c.trial, c.lr, c.best_epoch);
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut table = vec![std::iter::once(self.layout.corner().to_string()).chain(self.columns.iter().cloned()).collect::<Vec<_>>()];
        for r in &self.rows {
            table.push(
                std::iter::once(r.label.clone())
                    .chain(r.cells.iter().map(|c| format!("{:.4}", c.weighted_f1)))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|j| table.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = self.header();
        for (i, row) in table.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, w))| if j == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            s.push_str(line.join("  ").trim_end());
            s.push('\n');
            if i == 0 {
                let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                s.push_str(&"-".repeat(rule));
                s.push('\n');
            }
        }
        s
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Tsv => self.to_tsv(),
            ReportFormat::Text => self.to_text(),
        }
    }

    pub fn emit(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render(format)).map_err(|e| Error::io(path, e))
    }

    /// Inverse of [`ExperimentReport::to_tsv`].
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "report.tsv".into(),
            line,
            msg: msg.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        let first = lines.first().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| bad(1, "missing header"))?;
        let mut name = None;
        let mut task = None;
        let mut layout = None;
        for kv in first.split("; ") {
            match kv.split_once('=') {
                Some(("experiment", v)) => name = Some(v.to_string()),
                Some(("task", "tc")) => task = Some(TaskKind::Tc),
                Some(("task", "ner")) => task = Some(TaskKind::Ner),
                Some(("layout", "models_by_sources")) => layout = Some(Layout::ModelsBySources),
                Some(("layout", "lr_by_models")) => layout = Some(Layout::LrByModels),
                _ => return Err(bad(1, &format!("unexpected header field `{kv}`"))),
            }
        }
        let (Some(name), Some(task), Some(layout)) = (name, task, layout) else {
            return Err(bad(1, "header needs experiment, task and layout"));
        };
        let counting = match lines.get(1) {
            Some(l) if l.contains("counting=token") => NerCounting::Token,
            Some(l) if l.starts_with('#') => NerCounting::ExactSpan,
            _ => return Err(bad(2, "missing metric comment")),
        };
        let head: Vec<&str> = lines.get(2).ok_or_else(|| bad(3, "missing table header"))?.split('\t').collect();
        if head[0] != layout.corner() {
            return Err(bad(3, "table header does not match the layout"));
        }
        let columns: Vec<String> = head[1..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        let mut i = 3;
        while i < lines.len() && !lines[i].is_empty() {
            let f: Vec<&str> = lines[i].split('\t').collect();
            if f.len() != columns.len() + 1 {
                return Err(bad(i + 1, "wrong number of cells"));
            }
            let cells = f[1..]
                .iter()
                .map(|v| {
                    Ok(ReportCell {
                        weighted_f1: v.parse().map_err(|_| bad(i + 1, "cell is not a number"))?,
                        trial: String::new(),
                        lr: 0.0,
                        best_epoch: 0,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(ReportRow {
                label: f[0].to_string(),
                cells,
            });
            i += 1;
        }
        i += 1;
        if lines.get(i) != Some(&SELECTION_HEADER) {
            return Err(bad(i + 1, "missing selection block"));
        }
        let mut filled = 0;
        for (k, line) in lines.iter().enumerate().skip(i + 1) {
            let f: Vec<&str> = line.split('\t').collect();
            let [row, col, trial, lr, epoch] = f[..] else {
                return Err(bad(k + 1, "selection lines have 5 fields"));
            };
            let r = rows.iter().position(|r| r.label == row).ok_or_else(|| bad(k + 1, "unknown row"))?;
            let c = columns.iter().position(|c| c == col).ok_or_else(|| bad(k + 1, "unknown column"))?;
            let cell = &mut rows[r].cells[c];
            if !cell.trial.is_empty() {
                return Err(bad(k + 1, "cell selected twice"));
            }
            cell.trial = trial.to_string();
            cell.lr = lr.parse().map_err(|_| bad(k + 1, "bad learning rate"))?;
            cell.best_epoch = epoch.parse().map_err(|_| bad(k + 1, "bad epoch"))?;
            filled += 1;
        }
        if filled != rows.len() * columns.len() {
            return Err(bad(lines.len(), "some cells have no selection line"));
        }
        Ok(Self {
            name,
            task,
            layout,
            counting,
            columns,
            rows,
        })
    }
}
