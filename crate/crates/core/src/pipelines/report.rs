use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress,
    Rsa,
    Physchem,
    NoiseCeiling,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::Regress => "regress",
            Task::Rsa => "rsa",
            Task::Physchem => "physchem",
            Task::NoiseCeiling => "noise_ceiling",
        })
    }
}

/// Descriptor label of rows that average over descriptors.
pub const AGGREGATE: &str = "mean";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub task: Task,
    pub dataset: String,
    pub model: String,
    pub layer: String,
    pub descriptor: String,
    pub metric: String,
    pub mean: f64,
    /// Standard deviation across repetitions (population); absent for single values.
    pub std: Option<f64>,
    pub n: usize,
    pub input_digest: String,
}

pub const REPORT_HEADER: [&str; 10] = [
    "task",
    "dataset",
    "model",
    "layer",
    "descriptor",
    "metric",
    "mean",
    "std",
    "n",
    "input_digest",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub task: Task,
    pub rows: Vec<ReportRow>,
    /// Snapshot of the configuration that produced the rows.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
}

impl AlignmentReport {
    pub fn new(task: Task, config: serde_json::Value, seed: Option<u64>) -> Self {
        AlignmentReport {
            task,
            rows: Vec::new(),
            config,
            seed,
        }
    }

    pub fn extend(&mut self, other: AlignmentReport) {
        self.rows.extend(other.rows);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows_for<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.task.to_string(),
                r.dataset.clone(),
                r.model.clone(),
                r.layer.clone(),
                r.descriptor.clone(),
                r.metric.clone(),
                r.mean.to_string(),
                r.std.map(|s| s.to_string()).unwrap_or_default(),
                r.n.to_string(),
                r.input_digest.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// JSON with the task, seed, configuration snapshot and column labels.
    pub fn config_json(&self) -> Result<String> {
        let snapshot = serde_json::json!({
            "task": self.task,
            "seed": self.seed,
            "config": self.config,
            "columns": {
                "std": "population standard deviation of the values behind mean: repetitions for probe rows \
                        (aggregate rows: the per-repetition descriptor average), subjects for noise-ceiling rows",
                "sem": "not a column; standard error of the mean = std / sqrt(number of values behind mean)",
                "n": "values behind mean; aggregate probe rows count descriptors instead",
            },
        });
        Ok(serde_json::to_string_pretty(&snapshot)?)
    }
}

/// Combines file digests into one provenance token (first 16 hex digits of each).
pub fn combine_digests<S: AsRef<str>>(digests: &[S]) -> String {
    digests
        .iter()
        .map(|d| d.as_ref().chars().take(16).collect::<String>())
        .collect::<Vec<_>>()
        .join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut report = AlignmentReport::new(Task::Regress, serde_json::json!({"k": 1}), Some(3));
        report.rows.push(ReportRow {
            task: Task::Regress,
            dataset: "keller".into(),
            model: "m".into(),
            layer: "final".into(),
            descriptor: "sweet, fruity".into(),
            metric: "cc".into(),
            mean: 0.25,
            std: None,
            n: 30,
            input_digest: combine_digests(&["aaaaaaaaaaaaaaaaaaaa", "bbbbbbbbbbbbbbbbbbbbbbbb"]),
        });
        let csv = report.to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "task,dataset,model,layer,descriptor,metric,mean,std,n,input_digest");
        assert_eq!(
            lines.next().unwrap(),
            "regress,keller,m,final,\"sweet, fruity\",cc,0.25,,30,aaaaaaaaaaaaaaaa+bbbbbbbbbbbbbbbb"
        );
        assert!(report.config_json().unwrap().contains("\"seed\": 3"));
    }
}
