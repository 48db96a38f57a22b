//! End-to-end analyses that turn loaded inputs into [`AlignmentReport`]s and
//! plot data.
//!
//! Every function here is a single orchestration thread; parallelism happens
//! inside the probe protocol. Report rows are assembled in a fixed order so
//! that identical inputs, configuration and seed give identical files.

mod report;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::Serialize;
use serde_json::json;

use crate::data::{mixture_embedding, resolvable, BinaryLabelSet, DatasetBundle, EmbeddingTable, Odorant, PerSubjectRatings, SimilarityJudgmentSet};
use crate::error::{Error, Result};
use crate::metrics::{self, noise_ceiling, roc_auc_micro, roc_curve, NoiseCeiling, RocCurve, Summary};
use crate::physchem::{run_physchem_decoding, DescriptorTable, PhyschemResult};
use crate::preproc::fit_pca_with;
use crate::probes::{run_probe_protocol, ModelKind, ProbeConfig, ProbeRun, RegressionScore, SplitPlan};
use crate::rsa::{layer_order, rsa_for_table, RsaResult, SimilarityMode};

pub use report::{combine_digests, AlignmentReport, ReportRow, Task, AGGREGATE, REPORT_HEADER};

/// Descriptor label of RSA rows, which cover all rated pairs.
pub const ALL_PAIRS: &str = "all_pairs";

/// An embedding table with the digest of the files it was read from.
#[derive(Debug, Clone, Copy)]
pub struct TableInput<'a> {
    pub table: &'a EmbeddingTable,
    pub digest: &'a str,
}

/// A named pairwise-similarity dataset with its file digest.
#[derive(Debug, Clone, Copy)]
pub struct PairsInput<'a> {
    pub name: &'a str,
    pub judgments: &'a SimilarityJudgmentSet,
    pub digest: &'a str,
}

fn row(task: Task, dataset: &str, model: &str, layer: &str, descriptor: &str, metric: &str) -> ReportRow {
    ReportRow {
        task,
        dataset: dataset.to_string(),
        model: model.to_string(),
        layer: layer.to_string(),
        descriptor: descriptor.to_string(),
        metric: metric.to_string(),
        mean: f64::NAN,
        std: None,
        n: 0,
        input_digest: String::new(),
    }
}

fn summary_row(mut base: ReportRow, values: &[f64], digest: &str) -> ReportRow {
    if !values.is_empty() {
        let s = Summary::of(values);
        base.mean = s.mean;
        base.std = Some(s.std);
        base.n = s.n;
    }
    base.input_digest = digest.to_string();
    base
}

fn probe_snapshot(bundle: &DatasetBundle, plan: &SplitPlan, config: &ProbeConfig) -> serde_json::Value {
    json!({
        "dataset": bundle.provenance.dataset,
        "model": bundle.provenance.model_name,
        "layer": bundle.provenance.layer,
        "rows": bundle.n(),
        "dropped_rows": bundle.dropped,
        "plan": plan.with_n(bundle.n()),
        "probe": config,
    })
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Debug, Clone)]
pub struct ClassificationOutput {
    pub report: AlignmentReport,
    /// Micro-pooled test ROC curve of each scored repetition.
    pub curves: Vec<RocCurve>,
    pub run: ProbeRun,
}

/// Micro-pooled ROC curve of one repetition over its fitted descriptors.
fn repetition_curve(run: &ProbeRun, r: usize) -> Option<RocCurve> {
    let rep = &run.repetitions[r];
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (d, outcome) in rep.outcomes.iter().enumerate() {
        let Some(pred) = outcome.predictions() else { continue };
        scores.extend_from_slice(pred);
        labels.extend(run.y_true(r, d));
    }
    match roc_curve(&scores, &labels) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("repetition {r} has no scorable test pool: {e}");
            None
        }
    }
}

pub fn run_label_classification(
    bundle: &DatasetBundle,
    plan: &SplitPlan,
    config: &ProbeConfig,
    digest: &str,
) -> Result<ClassificationOutput> {
    if config.kind != ModelKind::Logistic {
        return Err(Error::InvalidArgument("label classification uses logistic probes".into()));
    }
    if !matches!(bundle.targets, crate::data::Targets::Labels { .. }) {
        return Err(Error::InvalidArgument("label classification needs a binary label bundle".into()));
    }
    let run = run_probe_protocol(bundle, plan, config)?;
    let curves: Vec<RocCurve> = (0..run.repetitions.len())
        .filter_map(|r| repetition_curve(&run, r))
        .collect();
    let aucs: Vec<f64> = curves.iter().map(|c| c.auc).collect();

    let p = &bundle.provenance;
    let layer = p.layer.to_string();
    let mut report = AlignmentReport::new(Task::Classify, probe_snapshot(bundle, plan, config), Some(plan.base_seed));
    report.rows.push(summary_row(
        row(Task::Classify, &p.dataset, &p.model_name, &layer, AGGREGATE, "roc_auc_micro"),
        &aucs,
        digest,
    ));
    Ok(ClassificationOutput { report, curves, run })
}

/// Vertical average of ROC curves on `points` evenly spaced FPR values.
pub fn mean_roc_curve(curves: &[RocCurve], points: usize) -> Vec<(f64, f64)> {
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let f = i as f64 / (points - 1) as f64;
            let t = curves.iter().map(|c| c.tpr_at(f)).sum::<f64>() / curves.len() as f64;
            (f, t)
        })
        .collect()
}

/// CSV `curve,fpr,tpr`: one block per repetition curve, then the mean curve.
pub fn write_roc_csv<W: Write>(curves: &[RocCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["curve", "fpr", "tpr"])?;
    for (i, c) in curves.iter().enumerate() {
        for (f, t) in c.fpr.iter().zip(&c.tpr) {
            w.write_record([i.to_string(), f.to_string(), t.to_string()])?;
        }
    }
    if !curves.is_empty() {
        for (f, t) in mean_roc_curve(curves, 101) {
            w.write_record(["mean".to_string(), f.to_string(), t.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<roc>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Regression (ratings and descriptor decoding)

/// Per-descriptor CC/NRMSE rows followed by the aggregate rows.
///
/// The aggregate mean is the mean of the per-descriptor means; its std is
/// taken across repetitions of the per-repetition descriptor average, and its
/// `n` is the number of descriptors averaged.
#[allow(clippy::too_many_arguments)]
fn regression_rows(
    task: Task,
    dataset: &str,
    model: &str,
    layer: &str,
    descriptors: &[String],
    per_rep: &[Vec<Option<RegressionScore>>],
    undefined: &[bool],
    digest: &str,
) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    type Pick = fn(&RegressionScore) -> f64;
    let metrics: [(&str, Pick); 2] = [("cc", |s| s.cc), ("nrmse", |s| s.nrmse)];
    let mut aggregates = Vec::new();
    for (metric, pick) in metrics {
        let mut means = Vec::new();
        let mut contributing = Vec::new();
        for (d, name) in descriptors.iter().enumerate() {
            let values: Vec<f64> = if undefined[d] {
                Vec::new()
            } else {
                per_rep.iter().filter_map(|r| r[d].as_ref().map(pick)).collect()
            };
            let r = summary_row(row(task, dataset, model, layer, name, metric), &values, digest);
            if r.n > 0 {
                means.push(r.mean);
                contributing.push(d);
            }
            rows.push(r);
        }
        let mut agg = row(task, dataset, model, layer, AGGREGATE, metric);
        agg.input_digest = digest.to_string();
        if !means.is_empty() {
            let rep_means: Vec<f64> = per_rep
                .iter()
                .filter_map(|r| {
                    let v: Vec<f64> = contributing.iter().filter_map(|&d| r[d].as_ref().map(pick)).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            agg.mean = means.iter().sum::<f64>() / means.len() as f64;
            agg.std = Some(metrics::mean_std(&rep_means).1);
            agg.n = means.len();
        }
        aggregates.push(agg);
    }
    rows.extend(aggregates);
    rows
}

#[derive(Debug, Clone)]
pub struct RegressionOutput {
    pub report: AlignmentReport,
    pub run: ProbeRun,
}

pub fn run_rating_regression(
    bundle: &DatasetBundle,
    plan: &SplitPlan,
    config: &ProbeConfig,
    digest: &str,
) -> Result<RegressionOutput> {
    if config.kind != ModelKind::Lasso {
        return Err(Error::InvalidArgument("rating regression uses lasso probes".into()));
    }
    if !matches!(bundle.targets, crate::data::Targets::Ratings { .. }) {
        return Err(Error::InvalidArgument("rating regression needs a ratings bundle".into()));
    }
    let run = run_probe_protocol(bundle, plan, config)?;
    let p = &bundle.provenance;
    let mut report = AlignmentReport::new(Task::Regress, probe_snapshot(bundle, plan, config), Some(plan.base_seed));
    report.rows = regression_rows(
        Task::Regress,
        &p.dataset,
        &p.model_name,
        &p.layer.to_string(),
        &run.descriptors,
        &run.regression_scores(),
        &vec![false; run.descriptors.len()],
        digest,
    );
    Ok(RegressionOutput { report, run })
}

#[derive(Debug, Clone)]
pub struct PhyschemOutput {
    pub report: AlignmentReport,
    /// One result per table, in layer order.
    pub results: Vec<PhyschemResult>,
}

/// Descriptor decoding for one or more layers of a model.
pub fn run_physchem(
    tables: &[TableInput<'_>],
    descriptors: &DescriptorTable,
    descriptor_digest: &str,
    dataset: &str,
    plan: &SplitPlan,
    config: &ProbeConfig,
) -> Result<PhyschemOutput> {
    let owned: Vec<EmbeddingTable> = tables.iter().map(|t| t.table.clone()).collect();
    let order = layer_order(&owned)?;
    let snapshot = json!({
        "dataset": dataset,
        "model": owned[0].model_name,
        "layers": order.iter().map(|&i| owned[i].layer).collect::<Vec<_>>(),
        "plan": plan,
        "probe": config,
        "note": "descriptor decoding reuses the lasso probe with nested CV; targets are z-scored on training rows and predictions mapped back",
    });
    let mut report = AlignmentReport::new(Task::Physchem, snapshot, Some(plan.base_seed));
    let mut results = Vec::new();
    for i in order {
        let t = tables[i];
        let result = run_physchem_decoding(t.table, descriptors, plan, config)?;
        let undefined: Vec<bool> = result.scores.iter().map(|s| s.cc.is_none()).collect();
        report.rows.extend(regression_rows(
            Task::Physchem,
            dataset,
            &result.model_name,
            &result.layer.to_string(),
            &result.run.descriptors,
            &result.run.regression_scores(),
            &undefined,
            &combine_digests(&[t.digest, descriptor_digest]),
        ));
        results.push(result);
    }
    Ok(PhyschemOutput { report, results })
}

// ---------------------------------------------------------------------------
// RSA

#[derive(Debug, Clone)]
pub struct RsaOutput {
    pub report: AlignmentReport,
    /// `(dataset, result)` in report order.
    pub results: Vec<(String, RsaResult)>,
}

/// RSA of every table against every pairs dataset. Tables are ordered by
/// model name, then layer.
pub fn run_similarity_rsa(tables: &[TableInput<'_>], datasets: &[PairsInput<'_>], mode: SimilarityMode) -> Result<RsaOutput> {
    if tables.is_empty() || datasets.is_empty() {
        return Err(Error::InvalidArgument("RSA needs at least one table and one pairs dataset".into()));
    }
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (tables[a].table, tables[b].table);
        (&ta.model_name, ta.layer).cmp(&(&tb.model_name, tb.layer))
    });
    let snapshot = json!({
        "similarity": mode,
        "datasets": datasets.iter().map(|d| d.name).collect::<Vec<_>>(),
        "tables": order.iter().map(|&i| json!({"model": tables[i].table.model_name, "layer": tables[i].table.layer})).collect::<Vec<_>>(),
        "p_value": "naive n-2 degrees of freedom; pairs are not independent",
    });
    let mut report = AlignmentReport::new(Task::Rsa, snapshot, None);
    let mut results = Vec::new();
    for d in datasets {
        for &i in &order {
            let t = tables[i];
            let result = rsa_for_table(t.table, d.judgments, mode)?;
            let digest = combine_digests(&[t.digest, d.digest]);
            let layer = result.layer.to_string();
            for (metric, value) in [("rsa_r", result.r), ("rsa_p", result.p)] {
                let mut r = row(Task::Rsa, d.name, &result.model_name, &layer, ALL_PAIRS, metric);
                r.mean = value;
                r.n = result.n_pairs;
                r.input_digest = digest.clone();
                report.rows.push(r);
            }
            results.push((d.name.to_string(), result));
        }
    }
    Ok(RsaOutput { report, results })
}

// ---------------------------------------------------------------------------
// Noise ceiling

#[derive(Debug, Clone)]
pub struct NoiseCeilingOutput {
    pub report: AlignmentReport,
    pub ceiling: NoiseCeiling,
}

/// Per-descriptor ceilings (std and n over qualifying subjects) and an
/// overall row (std and n over defined descriptors).
pub fn run_noise_ceiling(data: &PerSubjectRatings, dataset: &str, digest: &str, leave_one_out: bool) -> Result<NoiseCeilingOutput> {
    let ceiling = noise_ceiling(data, leave_one_out)?;
    let snapshot = json!({
        "dataset": dataset,
        "subjects": data.subjects.len(),
        "odorants": data.odorants.len(),
        "leave_one_out": leave_one_out,
    });
    let mut report = AlignmentReport::new(Task::NoiseCeiling, snapshot, None);
    for (d, name) in ceiling.descriptors.iter().enumerate() {
        let rs: Vec<f64> = ceiling.per_subject.iter().filter_map(|s| s[d]).collect();
        let mut r = row(Task::NoiseCeiling, dataset, "", "", name, "noise_ceiling");
        r.input_digest = digest.to_string();
        if let Some(nc) = ceiling.per_descriptor[d] {
            r.mean = nc;
            r.std = Some(metrics::mean_std(&rs).1);
            r.n = rs.len();
        }
        report.rows.push(r);
    }
    let defined = ceiling.per_descriptor.iter().flatten().count();
    let mut overall = row(Task::NoiseCeiling, dataset, "", "", AGGREGATE, "noise_ceiling");
    overall.input_digest = digest.to_string();
    if defined > 0 {
        overall.mean = ceiling.overall_mean;
        overall.std = Some(ceiling.overall_std);
        overall.n = defined;
    }
    report.rows.push(overall);
    Ok(NoiseCeilingOutput { report, ceiling })
}

// ---------------------------------------------------------------------------
// PCA scatter

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub id: String,
    pub pc1: f64,
    pub pc2: f64,
    /// First broad category (in the order given) the odorant carries.
    pub broad: Option<String>,
    pub narrow: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterData {
    pub model_name: String,
    pub broad: Vec<String>,
    pub narrow: Vec<String>,
    pub explained_variance: [f64; 2],
    pub points: Vec<ScatterPoint>,
}

impl ScatterData {
    /// CSV `id,pc1,pc2,broad,narrow` with narrow labels joined by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "pc1", "pc2", "broad", "narrow"])?;
        for p in &self.points {
            w.write_record([
                p.id.clone(),
                p.pc1.to_string(),
                p.pc2.to_string(),
                p.broad.clone().unwrap_or_default(),
                p.narrow.join(";"),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<scatter>", e))?;
        Ok(())
    }
}

fn label_columns(labels: &BinaryLabelSet, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            labels
                .descriptors
                .iter()
                .position(|d| d == n)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown label {n:?}")))
        })
        .collect()
}

/// First two principal components of the labelled odorants' embeddings.
/// A rank-1 table yields a second coordinate of exactly zero.
pub fn run_pca_scatter(table: &EmbeddingTable, labels: &BinaryLabelSet, broad: &[String], narrow: &[String]) -> Result<ScatterData> {
    let missing: Vec<String> = labels
        .odorants
        .iter()
        .filter(|o| !resolvable(table, o))
        .map(|o| o.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Lookup(missing));
    }
    let broad_cols = label_columns(labels, broad)?;
    let narrow_cols = label_columns(labels, narrow)?;
    let n = labels.odorants.len();
    let mut x = Array2::zeros((n, table.dim()));
    for (i, o) in labels.odorants.iter().enumerate() {
        x.row_mut(i).assign(&mixture_embedding(table, o)?);
    }
    let pca = fit_pca_with(x.view(), 2.min(table.dim()), false)?;
    let z = crate::preproc::apply_pca(&pca, x.view())?;
    let coord = |i: usize, c: usize| if c < z.ncols() { z[[i, c]] } else { 0.0 };
    let points = (0..n)
        .map(|i| ScatterPoint {
            id: labels.odorants[i].to_string(),
            pc1: coord(i, 0),
            pc2: coord(i, 1),
            broad: broad_cols
                .iter()
                .zip(broad)
                .find(|(&c, _)| labels.labels[[i, c]] == 1.0)
                .map(|(_, name)| name.clone()),
            narrow: narrow_cols
                .iter()
                .zip(narrow)
                .filter(|(&c, _)| labels.labels[[i, c]] == 1.0)
                .map(|(_, name)| name.clone())
                .collect(),
        })
        .collect();
    let ev = |c: usize| pca.explained_variance.get(c).copied().unwrap_or(0.0);
    Ok(ScatterData {
        model_name: table.model_name.clone(),
        broad: broad.to_vec(),
        narrow: narrow.to_vec(),
        explained_variance: [ev(0), ev(1)],
        points,
    })
}

// ---------------------------------------------------------------------------
// Externally produced predictions

/// Scores from a model outside this toolkit, one per (row, descriptor).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPredictions {
    pub row_ids: Vec<String>,
    pub descriptors: Vec<String>,
    pub scores: Array2<f64>,
}

impl ExternalPredictions {
    /// Label matrix matching `scores`, looked up by odorant key and descriptor name.
    pub fn aligned_labels(&self, labels: &BinaryLabelSet) -> Result<Array2<f64>> {
        let rows: HashMap<String, usize> = labels
            .odorants
            .iter()
            .enumerate()
            .map(|(i, o)| (o.canonical_key(), i))
            .collect();
        let mut missing = Vec::new();
        let row_idx: Vec<Option<usize>> = self
            .row_ids
            .iter()
            .map(|id| {
                let found = id.parse::<Odorant>().ok().and_then(|o| rows.get(&o.canonical_key()).copied());
                if found.is_none() {
                    missing.push(format!("row {id}"));
                }
                found
            })
            .collect();
        let col_idx: Vec<Option<usize>> = self
            .descriptors
            .iter()
            .map(|d| {
                let found = labels.descriptors.iter().position(|l| l == d);
                if found.is_none() {
                    missing.push(format!("descriptor {d}"));
                }
                found
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lookup(missing));
        }
        let rows: Vec<usize> = row_idx.into_iter().flatten().collect();
        let cols: Vec<usize> = col_idx.into_iter().flatten().collect();
        Ok(labels.labels.select(Axis(0), &rows).select(Axis(1), &cols))
    }

    pub fn micro_auc(&self, labels: &BinaryLabelSet) -> Result<f64> {
        let y = self.aligned_labels(labels)?;
        roc_auc_micro(self.scores.view(), y.view())
    }
}

pub fn ingest_external_predictions(path: &Path) -> Result<ExternalPredictions> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_external_predictions(&bytes, &path.display().to_string())
}

/// Parses CSV `row_id,descriptor,score`. Rows and descriptors keep their
/// first-appearance order; every combination must be present exactly once.
pub fn parse_external_predictions(bytes: &[u8], label: &str) -> Result<ExternalPredictions> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["row_id", "descriptor", "score"] {
        return Err(Error::schema(format!("{label}: header must be row_id,descriptor,score")));
    }
    let mut row_ids: Vec<String> = Vec::new();
    let mut descriptors: Vec<String> = Vec::new();
    let mut row_pos = HashMap::new();
    let mut desc_pos = HashMap::new();
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (id, desc, score) = (&rec[0], &rec[1], &rec[2]);
        let score: f64 = score
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::schema(format!("{label}: row {}: score {score:?} is not a finite number", line + 1)))?;
        let r = *row_pos.entry(id.to_string()).or_insert_with(|| {
            row_ids.push(id.to_string());
            row_ids.len() - 1
        });
        let d = *desc_pos.entry(desc.to_string()).or_insert_with(|| {
            descriptors.push(desc.to_string());
            descriptors.len() - 1
        });
        if cells.insert((r, d), score).is_some() {
            return Err(Error::schema(format!("{label}: duplicate score for ({id}, {desc})")));
        }
    }
    if cells.is_empty() {
        return Err(Error::schema(format!("{label}: no predictions")));
    }
    let mut missing = BTreeSet::new();
    let mut scores = Array2::zeros((row_ids.len(), descriptors.len()));
    for r in 0..row_ids.len() {
        for d in 0..descriptors.len() {
            match cells.get(&(r, d)) {
                Some(&v) => scores[[r, d]] = v,
                None => {
                    missing.insert((r, d));
                }
            }
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing
            .iter()
            .map(|&(r, d)| format!("({}, {})", row_ids[r], descriptors[d]))
            .collect();
        return Err(Error::schema(format!("{label}: missing scores for {}", list.join(", "))));
    }
    Ok(ExternalPredictions {
        row_ids,
        descriptors,
        scores,
    })
}

/// Classification report for externally produced scores; no probes are fit.
pub fn run_external_classification(
    predictions: &ExternalPredictions,
    labels: &BinaryLabelSet,
    dataset: &str,
    model: &str,
    digest: &str,
) -> Result<AlignmentReport> {
    let auc = predictions.micro_auc(labels)?;
    let snapshot = json!({
        "dataset": dataset,
        "model": model,
        "source": "external predictions, scores used as-is",
        "rows": predictions.row_ids.len(),
        "descriptors": predictions.descriptors.len(),
    });
    let mut report = AlignmentReport::new(Task::Classify, snapshot, None);
    let mut r = row(Task::Classify, dataset, model, "", AGGREGATE, "roc_auc_micro");
    r.mean = auc;
    r.n = 1;
    r.input_digest = digest.to_string();
    report.rows.push(r);
    Ok(report)
}
