//! Result tables, as JSON and as aligned text.

use serde::Serialize;

use super::{Metrics, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary { mean: f64::NAN, std: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Summary { mean, std }
}

/// Test metrics of one configuration across seeds.
#[derive(Clone, Debug, Serialize)]
pub struct RunGroup {
    pub name: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<Metrics>,
    pub accuracy: Summary,
    pub auc: Summary,
}

impl RunGroup {
    pub fn new(name: impl Into<String>, seeds: Vec<u64>, runs: Vec<Metrics>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|m| m.accuracy).collect();
        let auc: Vec<f64> = runs.iter().map(|m| m.auc).collect();
        Self {
            name: name.into(),
            seeds,
            accuracy: summarize(&acc),
            auc: summarize(&auc),
            runs,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub variants: Vec<(Variant, RunGroup)>,
    /// FULL model at each subsequence length.
    pub sweep: Vec<(usize, RunGroup)>,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.variants.is_empty() {
            let groups: Vec<&RunGroup> = self.variants.iter().map(|(_, g)| g).collect();
            out.push_str(&table("model", &groups));
        }
        if !self.sweep.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            let groups: Vec<&RunGroup> = self.sweep.iter().map(|(_, g)| g).collect();
            out.push_str(&table("n", &groups));
        }
        out
    }
}

fn cell(s: Summary, runs: usize) -> String {
    if runs > 1 {
        format!("{:.4} ± {:.4}", s.mean, s.std)
    } else {
        format!("{:.4}", s.mean)
    }
}

/// Aligned text table with ACC and AUC columns.
pub fn table(header: &str, groups: &[&RunGroup]) -> String {
    let rows: Vec<[String; 3]> = groups
        .iter()
        .map(|g| [g.name.clone(), cell(g.accuracy, g.runs.len()), cell(g.auc, g.runs.len())])
        .collect();
    let head = [header.to_owned(), "ACC".to_owned(), "AUC".to_owned()];
    let width = |i: usize| {
        rows.iter()
            .map(|r| r[i].chars().count())
            .chain([head[i].chars().count()])
            .max()
            .unwrap_or(0)
    };
    let widths = [width(0), width(1), width(2)];
    let line = |r: &[String; 3]| {
        format!(
            "{:<w0$}  {:>w1$}  {:>w2$}\n",
            r[0],
            r[1],
            r[2],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        )
    };
    let mut out = line(&head);
    for r in &rows {
        out.push_str(&line(r));
    }
    out
}
