use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use olfalign_core::data::{
    bytes_digest, dataset_name, file_digest, join, load_embedding_table, load_perceptual, EmbeddingTable, Layer, Odorant,
    PerceptualData, PerceptualKind, SimilarityJudgmentSet,
};
use olfalign_core::physchem::{load_descriptor_table, physchem_config};
use olfalign_core::pipelines::{
    self, run_external_classification, run_label_classification, run_noise_ceiling, run_pca_scatter, run_physchem,
    run_rating_regression, run_similarity_rsa, AlignmentReport, PairsInput, TableInput, AGGREGATE,
};
use olfalign_core::plot;
use olfalign_core::probes::{GridScale, HyperGrid, ModelKind, PcaFit, ProbeConfig, SplitPlan};
use olfalign_core::rsa::{build_rsm, SimilarityMode};
use olfalign_core::Error;
use serde_json::json;

use crate::args::*;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Core(e) => match e {
                Error::Schema(_) | Error::Csv(_) | Error::Json(_) => "schema",
                Error::Ingestion { .. } => "ingestion",
                Error::Lookup(_) => "lookup",
                Error::Join(_) => "join",
                Error::Dimension { .. } => "dimension",
                Error::InvalidArgument(_) => "invalid-argument",
                Error::DegenerateTarget(_) => "degenerate-target",
                Error::Undefined(_) => "undefined",
                Error::Selection(_) => "selection",
                Error::Convergence(_) => "convergence",
                Error::Io { .. } => "io",
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Files read and written by one invocation, for `run.json`.
struct Run {
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Run {
    fn new(out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Run {
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    fn digest(&mut self, path: &Path) -> CliResult<String> {
        let d = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), d.clone());
        Ok(d)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> olfalign_core::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }

    fn report(&mut self, report: &AlignmentReport) -> CliResult<()> {
        self.write("report.csv", report.to_csv_string()?)?;
        self.write("config.json", report.config_json()? + "\n")
    }

    fn finish(mut self, command: &str, argv: &[String], seed: Option<u64>) -> CliResult<()> {
        self.outputs.push("run.json".into());
        self.outputs.sort();
        let manifest = json!({
            "tool": "olfalign",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "argv": argv,
            "seed": seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
        let path = self.out.join("run.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> CliResult<()> {
    for p in paths {
        if !p.is_file() {
            return Err(invalid(format!("input file not found: {}", p.display())));
        }
    }
    Ok(())
}

fn load_table(run: &mut Run, csv: &Path, manifest: &Path) -> CliResult<(EmbeddingTable, String)> {
    let table = load_embedding_table(csv, manifest)?;
    let digest = bytes_digest(format!("{}{}", run.digest(csv)?, run.digest(manifest)?).as_bytes());
    Ok((table, digest))
}

fn load_tables(run: &mut Run, args: &TableArgs) -> CliResult<Vec<(EmbeddingTable, String)>> {
    if args.embeddings.len() != args.manifests.len() {
        return Err(invalid(format!(
            "{} embedding files but {} manifests; pass one --manifest per --embeddings",
            args.embeddings.len(),
            args.manifests.len()
        )));
    }
    args.embeddings
        .iter()
        .zip(&args.manifests)
        .map(|(e, m)| load_table(run, e, m))
        .collect()
}

fn load_pairs(run: &mut Run, path: &Path) -> CliResult<(String, SimilarityJudgmentSet, String)> {
    let PerceptualData::Pairs(p) = load_perceptual(path, PerceptualKind::Pairs)? else {
        unreachable!("pairs loader returns pairs")
    };
    Ok((dataset_name(path), p, run.digest(path)?))
}

fn plan(args: &PlanArgs) -> CliResult<SplitPlan> {
    plan_from(args.seed, args.repetitions, args.test_fraction, args.inner_folds)
}

fn plan_from(seed: u64, repetitions: usize, test_fraction: f64, inner_folds: usize) -> CliResult<SplitPlan> {
    let mut plan = SplitPlan::new(0, seed);
    plan.repetitions = repetitions;
    plan.test_fraction = test_fraction;
    plan.inner_folds = inner_folds;
    if repetitions == 0 {
        return Err(invalid("--repetitions must be positive"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid("--test-fraction must lie strictly between 0 and 1"));
    }
    if inner_folds < 2 {
        return Err(invalid("--inner-folds must be at least 2"));
    }
    Ok(plan)
}

fn probe_config(mut config: ProbeConfig, args: &ProbeArgs) -> CliResult<ProbeConfig> {
    let prep = &mut config.preprocessing;
    prep.pca_k = (!args.no_pca).then_some(args.pca_k);
    if args.pca_k == 0 && !args.no_pca {
        return Err(invalid("--pca-k must be positive (use --no-pca to disable PCA)"));
    }
    prep.zscore = !args.no_zscore;
    prep.strict_pca = args.strict_pca;
    prep.pca_fit = match args.pca_fit {
        PcaFitArg::Train => PcaFit::TrainSplit,
        PcaFitArg::Global => PcaFit::Global,
    };
    if let Some(values) = &args.grid {
        let scale = match (config.kind, args.grid_absolute) {
            (ModelKind::Lasso, false) => GridScale::RelativeToAlphaMax,
            _ => GridScale::Absolute,
        };
        config.grid = HyperGrid::new(values.clone(), scale).map_err(|e| invalid(format!("--grid: {e}")))?;
    }
    if args.jobs == Some(0) {
        return Err(invalid("--jobs must be positive"));
    }
    config.jobs = args.jobs;
    Ok(config)
}

/// Numeric x position of each layer; the final layer sits after the highest index.
fn layer_positions(layers: &[Layer]) -> Vec<f64> {
    let top = layers
        .iter()
        .filter_map(|l| match l {
            Layer::Index(i) => Some(*i as f64),
            Layer::Final => None,
        })
        .fold(-1.0, f64::max);
    layers
        .iter()
        .map(|l| match l {
            Layer::Index(i) => *i as f64,
            Layer::Final => top + 1.0,
        })
        .collect()
}

fn descriptor_bars(run: &mut Run, report: &AlignmentReport, metric: &str, name: &str, title: &str) -> CliResult<()> {
    let rows: Vec<_> = report.rows_for(metric).filter(|r| r.descriptor != AGGREGATE).collect();
    let labels: Vec<String> = rows.iter().map(|r| r.descriptor.clone()).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let errors: Vec<Option<f64>> = rows.iter().map(|r| r.std).collect();
    run.write(name, plot::bar_svg(title, metric, &labels, &values, &errors))
}

/// `series,layer,x,value` rows plus a line chart.
fn layer_lines(run: &mut Run, stem: &str, title: &str, y_label: &str, series: &[(String, Vec<(Layer, f64)>)]) -> CliResult<()> {
    let mut csv = String::from("series,layer,x,value\n");
    let mut lines = Vec::new();
    for (name, points) in series {
        let layers: Vec<Layer> = points.iter().map(|p| p.0).collect();
        let xs = layer_positions(&layers);
        let mut pts = Vec::new();
        for ((layer, value), x) in points.iter().zip(xs) {
            csv.push_str(&format!("{},{layer},{x},{value}\n", name.replace(',', ";")));
            pts.push((x, *value));
        }
        lines.push((name.clone(), pts));
    }
    run.write(&format!("{stem}.csv"), csv)?;
    run.write(&format!("{stem}.svg"), plot::line_svg(title, "layer", y_label, &lines))
}

fn warn_if_empty(report: &AlignmentReport) -> bool {
    if report.is_empty() {
        log::warn!("report has no rows; skipping plots");
    }
    !report.is_empty()
}

pub fn classify(a: &ClassifyArgs, argv: &[String]) -> CliResult<()> {
    let mut inputs = vec![&a.labels];
    inputs.extend(a.embeddings.iter().chain(&a.manifest).chain(&a.predictions));
    require_files(inputs)?;
    let mut run = Run::new(&a.out.out)?;
    let labels_digest = run.digest(&a.labels)?;
    let PerceptualData::Labels(labels) = load_perceptual(&a.labels, PerceptualKind::Labels)? else {
        unreachable!("labels loader returns labels")
    };
    let dataset = dataset_name(&a.labels);

    if let Some(pred_path) = &a.predictions {
        let digest = run.digest(pred_path)?;
        let predictions = pipelines::ingest_external_predictions(pred_path)?;
        let report = run_external_classification(
            &predictions,
            &labels,
            &dataset,
            &a.model_name,
            &pipelines::combine_digests(&[digest, labels_digest]),
        )?;
        run.report(&report)?;
        return run.finish("classify", argv, None);
    }

    let (Some(emb), Some(man)) = (&a.embeddings, &a.manifest) else {
        return Err(invalid("classify needs --embeddings and --manifest, or --predictions"));
    };
    let (table, table_digest) = load_table(&mut run, emb, man)?;
    let bundle = join(&table, &PerceptualData::Labels(labels), &dataset)?;
    let mut config = probe_config(ProbeConfig::new(ModelKind::Logistic), &a.probe)?;
    config.stratified = a.stratified;
    let plan = plan(&a.plan)?;
    let out = run_label_classification(
        &bundle,
        &plan,
        &config,
        &pipelines::combine_digests(&[table_digest, labels_digest]),
    )?;
    run.report(&out.report)?;
    run.write_with("predictions.csv", |w| out.run.write_predictions_csv(w))?;
    run.write_with("roc.csv", |w| pipelines::write_roc_csv(&out.curves, w))?;
    if warn_if_empty(&out.report) {
        let title = format!("{} ({}) on {dataset}", table.model_name, table.layer);
        run.write("roc.svg", plot::roc_svg(&title, &out.curves))?;
    }
    run.finish("classify", argv, Some(plan.base_seed))
}

pub fn regress(a: &RegressArgs, argv: &[String]) -> CliResult<()> {
    require_files([&a.embeddings, &a.manifest, &a.ratings])?;
    let mut run = Run::new(&a.out.out)?;
    let (table, table_digest) = load_table(&mut run, &a.embeddings, &a.manifest)?;
    let ratings_digest = run.digest(&a.ratings)?;
    let ratings = load_perceptual(&a.ratings, PerceptualKind::Ratings)?;
    let dataset = dataset_name(&a.ratings);
    let bundle = join(&table, &ratings, &dataset)?;
    let mut config = probe_config(ProbeConfig::new(ModelKind::Lasso), &a.probe)?;
    config.preprocessing.zscore_targets = a.zscore_targets;
    let plan = plan(&a.plan)?;
    let out = run_rating_regression(
        &bundle,
        &plan,
        &config,
        &pipelines::combine_digests(&[table_digest, ratings_digest]),
    )?;
    run.report(&out.report)?;
    run.write_with("predictions.csv", |w| out.run.write_predictions_csv(w))?;
    if warn_if_empty(&out.report) {
        let title = format!("{} ({}) on {dataset}: test CC per descriptor", table.model_name, table.layer);
        descriptor_bars(&mut run, &out.report, "cc", "descriptors_cc.svg", &title)?;
    }
    run.finish("regress", argv, Some(plan.base_seed))
}

fn similarity_mode(angle: bool) -> SimilarityMode {
    if angle {
        SimilarityMode::Angle
    } else {
        SimilarityMode::Cosine
    }
}

fn rsa_series(report: &AlignmentReport) -> Vec<(String, Vec<(Layer, f64)>)> {
    let mut series: BTreeMap<String, Vec<(Layer, f64)>> = BTreeMap::new();
    for r in report.rows_for("rsa_r") {
        let layer = if r.layer == "final" {
            Layer::Final
        } else {
            Layer::Index(r.layer.parse().unwrap_or(0))
        };
        series
            .entry(format!("{} / {}", r.model, r.dataset))
            .or_default()
            .push((layer, r.mean));
    }
    series
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|p| p.0);
            (k, v)
        })
        .collect()
}

pub fn rsa(a: &RsaArgs, argv: &[String]) -> CliResult<()> {
    require_files(a.tables.embeddings.iter().chain(&a.tables.manifests).chain(&a.pairs))?;
    let mut run = Run::new(&a.out.out)?;
    let tables = load_tables(&mut run, &a.tables)?;
    let pairs = a.pairs.iter().map(|p| load_pairs(&mut run, p)).collect::<CliResult<Vec<_>>>()?;
    let table_inputs: Vec<TableInput> = tables.iter().map(|(t, d)| TableInput { table: t, digest: d }).collect();
    let pair_inputs: Vec<PairsInput> = pairs
        .iter()
        .map(|(n, j, d)| PairsInput {
            name: n,
            judgments: j,
            digest: d,
        })
        .collect();
    let out = run_similarity_rsa(&table_inputs, &pair_inputs, similarity_mode(a.angle))?;
    run.report(&out.report)?;
    if warn_if_empty(&out.report) {
        let labels: Vec<String> = out
            .results
            .iter()
            .map(|(d, r)| format!("{} {} / {d}", r.model_name, r.layer))
            .collect();
        let values: Vec<f64> = out.results.iter().map(|(_, r)| r.r).collect();
        run.write("rsa.svg", plot::bar_svg("RSA: Pearson r", "r", &labels, &values, &vec![None; values.len()]))?;
        let series = rsa_series(&out.report);
        if series.iter().any(|(_, pts)| pts.len() > 1) {
            layer_lines(&mut run, "rsa_layers", "RSA across layers", "r", &series)?;
        }
    }
    run.finish("rsa", argv, None)
}

fn physchem_series(report: &AlignmentReport) -> Vec<(String, Vec<(Layer, f64)>)> {
    let mut points: Vec<(Layer, f64)> = report
        .rows_for("cc")
        .filter(|r| r.descriptor == AGGREGATE)
        .map(|r| {
            let layer = if r.layer == "final" {
                Layer::Final
            } else {
                Layer::Index(r.layer.parse().unwrap_or(0))
            };
            (layer, r.mean)
        })
        .collect();
    points.sort_by_key(|p| p.0);
    let model = report.rows.first().map(|r| r.model.clone()).unwrap_or_default();
    vec![(format!("{model} mean CC"), points)]
}

pub fn physchem(a: &PhyschemArgs, argv: &[String]) -> CliResult<()> {
    require_files(a.tables.embeddings.iter().chain(&a.tables.manifests).chain([&a.descriptors]))?;
    let mut run = Run::new(&a.out.out)?;
    let tables = load_tables(&mut run, &a.tables)?;
    let desc_digest = run.digest(&a.descriptors)?;
    let descriptors = load_descriptor_table(&a.descriptors)?;
    let config = probe_config(physchem_config(), &a.probe)?;
    let plan = plan(&a.plan)?;
    let inputs: Vec<TableInput> = tables.iter().map(|(t, d)| TableInput { table: t, digest: d }).collect();
    let out = run_physchem(&inputs, &descriptors, &desc_digest, &dataset_name(&a.descriptors), &plan, &config)?;
    run.report(&out.report)?;
    for result in &out.results {
        run.write_with(&format!("predictions_layer-{}.csv", result.layer), |w| {
            result.run.write_predictions_csv(w)
        })?;
    }
    if warn_if_empty(&out.report) {
        if out.results.len() == 1 {
            let r = &out.results[0];
            let title = format!("{} ({}): descriptor decoding CC", r.model_name, r.layer);
            descriptor_bars(&mut run, &out.report, "cc", "physchem_cc.svg", &title)?;
        } else {
            layer_lines(&mut run, "physchem_layers", "Descriptor decoding across layers", "mean CC", &physchem_series(&out.report))?;
        }
    }
    run.finish("physchem", argv, Some(plan.base_seed))
}

pub fn noise_ceiling(a: &NoiseCeilingArgs, argv: &[String]) -> CliResult<()> {
    require_files([&a.ratings])?;
    let mut run = Run::new(&a.out.out)?;
    let digest = run.digest(&a.ratings)?;
    let PerceptualData::PerSubject(data) = load_perceptual(&a.ratings, PerceptualKind::PerSubject)? else {
        unreachable!("per-subject loader returns per-subject ratings")
    };
    let dataset = dataset_name(&a.ratings);
    let out = run_noise_ceiling(&data, &dataset, &digest, a.loo)?;
    run.report(&out.report)?;
    if warn_if_empty(&out.report) {
        let title = format!("{dataset}: noise ceiling per descriptor");
        descriptor_bars(&mut run, &out.report, "noise_ceiling", "noise_ceiling.svg", &title)?;
    }
    run.finish("noise-ceiling", argv, None)
}

pub fn layers(a: &LayersArgs, argv: &[String]) -> CliResult<()> {
    if a.pairs.is_empty() && a.descriptors.is_none() {
        return Err(invalid("layers needs --pairs and/or --descriptors"));
    }
    if a.descriptors.is_some() && a.seed.is_none() {
        return Err(invalid("--seed is required for the descriptor decoding sweep"));
    }
    require_files(a.tables.embeddings.iter().chain(&a.tables.manifests).chain(&a.pairs).chain(&a.descriptors))?;
    let mut run = Run::new(&a.out.out)?;
    let tables = load_tables(&mut run, &a.tables)?;
    let inputs: Vec<TableInput> = tables.iter().map(|(t, d)| TableInput { table: t, digest: d }).collect();
    let owned: Vec<EmbeddingTable> = tables.iter().map(|(t, _)| t.clone()).collect();
    // Same model, same molecules, distinct layers.
    olfalign_core::rsa::layer_order(&owned)?;

    let mut combined: Option<AlignmentReport> = None;
    if !a.pairs.is_empty() {
        let pairs = a.pairs.iter().map(|p| load_pairs(&mut run, p)).collect::<CliResult<Vec<_>>>()?;
        let pair_inputs: Vec<PairsInput> = pairs
            .iter()
            .map(|(n, j, d)| PairsInput {
                name: n,
                judgments: j,
                digest: d,
            })
            .collect();
        let out = run_similarity_rsa(&inputs, &pair_inputs, similarity_mode(a.angle))?;
        layer_lines(&mut run, "layers_rsa", "RSA across layers", "r", &rsa_series(&out.report))?;
        combined = Some(out.report);
    }
    if let Some(desc_path) = &a.descriptors {
        let desc_digest = run.digest(desc_path)?;
        let descriptors = load_descriptor_table(desc_path)?;
        let config = probe_config(physchem_config(), &a.probe)?;
        let plan = plan_from(a.seed.expect("checked above"), a.repetitions, a.test_fraction, a.inner_folds)?;
        let out = run_physchem(&inputs, &descriptors, &desc_digest, &dataset_name(desc_path), &plan, &config)?;
        layer_lines(&mut run, "layers_physchem", "Descriptor decoding across layers", "mean CC", &physchem_series(&out.report))?;
        combined = Some(match combined {
            Some(mut r) => {
                r.config = json!({"rsa": r.config, "physchem": out.report.config});
                r.seed = out.report.seed;
                r.extend(out.report);
                r
            }
            None => out.report,
        });
    }
    let report = combined.expect("at least one sweep ran");
    run.report(&report)?;
    run.finish("layers", argv, a.seed)
}

pub fn rsm(a: &RsmArgs, argv: &[String]) -> CliResult<()> {
    require_files([&a.embeddings, &a.manifest, &a.pairs])?;
    let mut run = Run::new(&a.out.out)?;
    let (table, _) = load_table(&mut run, &a.embeddings, &a.manifest)?;
    let (dataset, pairs, _) = load_pairs(&mut run, &a.pairs)?;
    let mut seen = std::collections::HashSet::new();
    let odorants: Vec<Odorant> = pairs
        .pairs
        .iter()
        .flat_map(|(x, y)| [x, y])
        .filter(|o| seen.insert(o.canonical_key()))
        .cloned()
        .collect();
    let rsm = build_rsm(&table, &odorants, Some(&pairs), similarity_mode(a.angle))?;
    run.write_with("rsm_model.csv", |w| rsm.model.write_matrix_csv(w))?;
    run.write_with("rsm_model_mask.csv", |w| rsm.model.write_mask_csv(w))?;
    let title = format!("{} ({}) similarity", table.model_name, table.layer);
    run.write("rsm_model.svg", plot::heatmap_svg(&title, &rsm.model))?;
    if let Some(human) = &rsm.human {
        run.write_with("rsm_human.csv", |w| human.write_matrix_csv(w))?;
        run.write_with("rsm_human_mask.csv", |w| human.write_mask_csv(w))?;
        run.write("rsm_human.svg", plot::heatmap_svg(&format!("{dataset}: human similarity"), human))?;
    }
    run.finish("rsm", argv, None)
}

pub fn pca_scatter(a: &PcaScatterArgs, argv: &[String]) -> CliResult<()> {
    require_files([&a.embeddings, &a.manifest, &a.labels])?;
    let mut run = Run::new(&a.out.out)?;
    let (table, _) = load_table(&mut run, &a.embeddings, &a.manifest)?;
    run.digest(&a.labels)?;
    let PerceptualData::Labels(labels) = load_perceptual(&a.labels, PerceptualKind::Labels)? else {
        unreachable!("labels loader returns labels")
    };
    let data = run_pca_scatter(&table, &labels, &a.broad, &a.narrow)?;
    run.write_with("scatter.csv", |w| data.write_csv(w))?;
    let title = format!("{} ({}): first two principal components", table.model_name, table.layer);
    run.write("scatter.svg", plot::scatter_svg(&title, &data))?;
    run.finish("pca-scatter", argv, None)
}
