//! End-to-end pipeline behaviour on synthetic bundles with known answers.

mod common;

use ndarray::{s, Array2};
use olfalign_core::data::{
    join, BinaryLabelSet, EmbeddingTable, Layer, MoleculeId, Odorant, PerSubjectRatings, PerceptualData, RatingSet,
};
use olfalign_core::physchem::{
    physchem_config, physchem_layer_sweep, run_physchem_decoding, DescriptorTable, DESCRIPTOR_COUNT,
};
use olfalign_core::pipelines::{
    parse_external_predictions, run_external_classification, run_label_classification, run_noise_ceiling,
    run_pca_scatter, run_physchem, run_rating_regression, AlignmentReport, TableInput, AGGREGATE,
};
use olfalign_core::probes::{ModelKind, ProbeConfig, SplitPlan};
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

fn ids(n: usize) -> Vec<MoleculeId> {
    (0..n).map(|i| MoleculeId::new(format!("m{i}")).unwrap()).collect()
}

fn odorants(n: usize) -> Vec<Odorant> {
    ids(n).into_iter().map(Odorant::single).collect()
}

fn table(x: Array2<f64>, layer: Layer) -> EmbeddingTable {
    EmbeddingTable::new(ids(x.nrows()), x, "synthetic", layer).unwrap()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn aggregate(report: &AlignmentReport, metric: &str) -> f64 {
    report
        .rows
        .iter()
        .find(|r| r.descriptor == AGGREGATE && r.metric == metric)
        .unwrap()
        .mean
}

/// 200 x 30 embeddings whose first two coordinates carry most of the variance,
/// with labels that are threshold functions of those coordinates.
fn separable_fixture() -> (EmbeddingTable, BinaryLabelSet) {
    let mut rng = rng(31);
    let mut x = gaussian_matrix(&mut rng, 200, 30);
    x.slice_mut(s![.., ..2]).mapv_inplace(|v| 5.0 * v);
    let labels = Array2::from_shape_fn((200, 3), |(i, d)| {
        let v = match d {
            0 => x[[i, 0]] > 0.0,
            1 => x[[i, 0]] <= 0.0,
            _ => x[[i, 1]] > 0.0,
        };
        if v { 1.0 } else { 0.0 }
    });
    let set = BinaryLabelSet::new(odorants(200), names("l", 3), labels).unwrap();
    (table(x, Layer::Final), set)
}

fn plan(reps: usize, seed: u64) -> SplitPlan {
    let mut plan = SplitPlan::new(0, seed);
    plan.repetitions = reps;
    plan
}

#[test]
fn separable_labels_are_recovered() {
    let (t, labels) = separable_fixture();
    let bundle = join(&t, &PerceptualData::Labels(labels), "separable").unwrap();
    let out = run_label_classification(&bundle, &plan(10, 1), &ProbeConfig::new(ModelKind::Logistic), "d").unwrap();
    let auc = aggregate(&out.report, "roc_auc_micro");
    assert!(auc >= 0.99, "auc {auc}");
    assert_eq!(out.curves.len(), 10);
}

#[test]
fn shuffled_labels_are_at_chance() {
    let (t, mut labels) = separable_fixture();
    let mut order: Vec<usize> = (0..200).collect();
    order.shuffle(&mut rng(32));
    labels = BinaryLabelSet::new(
        order.iter().map(|&i| labels.odorants[i].clone()).collect(),
        labels.descriptors.clone(),
        labels.labels.clone(),
    )
    .unwrap();
    let bundle = join(&t, &PerceptualData::Labels(labels), "shuffled").unwrap();
    let out = run_label_classification(&bundle, &plan(30, 2), &ProbeConfig::new(ModelKind::Logistic), "d").unwrap();
    let auc = aggregate(&out.report, "roc_auc_micro");
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc}");
}

fn regression_fixture(noise: f64) -> (EmbeddingTable, RatingSet) {
    let mut rng = rng(33);
    let x = gaussian_matrix(&mut rng, 150, 15);
    let w = Array2::from_shape_fn((15, 4), |(j, d)| if j % 4 == d { rng.random_range(0.5..2.0) } else { 0.0 });
    let y = x.dot(&w) + gaussian_matrix(&mut rng, 150, 4) * noise;
    let ratings = RatingSet::new(odorants(150), names("r", 4), y, (-50.0, 50.0)).unwrap();
    (table(x, Layer::Final), ratings)
}

#[test]
fn planted_ratings_are_recovered_without_pca() {
    // D = 15 <= 20, so the PCA step is skipped automatically.
    let (t, ratings) = regression_fixture(0.0);
    let bundle = join(&t, &PerceptualData::Ratings(ratings), "planted").unwrap();
    let out = run_rating_regression(&bundle, &plan(5, 3), &ProbeConfig::new(ModelKind::Lasso), "d").unwrap();
    let cc = aggregate(&out.report, "cc");
    assert!(cc >= 0.99, "cc {cc}");
    assert!(out.run.repetitions.iter().all(|r| r.pca_components.is_none()));
}

#[test]
fn aggregate_rows_average_descriptor_rows() {
    let (t, ratings) = regression_fixture(1.5);
    let bundle = join(&t, &PerceptualData::Ratings(ratings), "noisy").unwrap();
    let out = run_rating_regression(&bundle, &plan(6, 4), &ProbeConfig::new(ModelKind::Lasso), "digest").unwrap();
    for metric in ["cc", "nrmse"] {
        let per: Vec<f64> = out.report.rows_for(metric).filter(|r| r.descriptor != AGGREGATE).map(|r| r.mean).collect();
        assert_eq!(per.len(), 4);
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert!((aggregate(&out.report, metric) - mean).abs() <= 1e-12);
    }
    assert!(out.report.rows.iter().all(|r| !r.input_digest.is_empty()));
}

fn descriptor_fixture(n: usize) -> (EmbeddingTable, DescriptorTable) {
    let mut rng = rng(34);
    let x = gaussian_matrix(&mut rng, n, 16) * 2.0;
    let values = x.slice(s![.., ..DESCRIPTOR_COUNT]).to_owned();
    let desc = DescriptorTable::new(ids(n), names("p", DESCRIPTOR_COUNT), values).unwrap();
    (table(x, Layer::Final), desc)
}

#[test]
fn physchem_identity_columns_are_decoded() {
    let (t, desc) = descriptor_fixture(200);
    let res = run_physchem_decoding(&t, &desc, &plan(5, 5), &physchem_config()).unwrap();
    for s in &res.scores {
        assert!(s.cc.unwrap().mean >= 0.999, "{}: {:?}", s.name, s.cc);
    }
}

#[test]
fn physchem_shuffled_values_are_unpredictable() {
    let (t, desc) = descriptor_fixture(200);
    let mut order: Vec<usize> = (0..200).collect();
    order.shuffle(&mut rng(35));
    let shuffled = DescriptorTable::new(desc.ids.clone(), desc.names.clone(), desc.values.select(ndarray::Axis(0), &order))
        .unwrap();
    let res = run_physchem_decoding(&t, &shuffled, &plan(10, 6), &physchem_config()).unwrap();
    let cc = res.mean_cc();
    assert!(cc.abs() < 0.15, "mean cc {cc}");
}

#[test]
fn physchem_sweep_matches_standalone_runs() {
    let (t, desc) = descriptor_fixture(80);
    let layers: Vec<EmbeddingTable> = (0..3)
        .map(|l| EmbeddingTable::new(t.ids().to_vec(), t.matrix().clone(), "synthetic", Layer::Index(l)).unwrap())
        .collect();
    let p = plan(3, 7);
    let sweep = physchem_layer_sweep(&layers, &desc, &p, &physchem_config()).unwrap();
    let alone = run_physchem_decoding(&layers[1], &desc, &p, &physchem_config()).unwrap();
    assert_eq!(sweep[1].scores, alone.scores);
    assert_eq!(sweep[1].run, alone.run);
    // Identical tables at every layer give a flat series.
    assert!(sweep.iter().all(|r| r.scores == sweep[0].scores));

    let single = physchem_layer_sweep(&layers[..1], &desc, &p, &physchem_config()).unwrap();
    assert_eq!(single[0].scores, run_physchem_decoding(&layers[0], &desc, &p, &physchem_config()).unwrap().scores);

    let inputs: Vec<TableInput<'_>> = layers.iter().map(|table| TableInput { table, digest: "t" }).collect();
    let report = run_physchem(&inputs, &desc, "d", "desc", &p, &physchem_config()).unwrap().report;
    let layer_means: Vec<f64> = report.rows.iter().filter(|r| r.descriptor == AGGREGATE && r.metric == "cc").map(|r| r.mean).collect();
    assert_eq!(layer_means.len(), 3);
    assert!(layer_means.iter().all(|&m| m == layer_means[0]));
}

#[test]
fn noise_ceiling_report_layout() {
    let mut rng = rng(36);
    let truth: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
    let ratings: Vec<Vec<Vec<Option<f64>>>> = (0..4)
        .map(|_| truth.iter().map(|row| row.iter().map(|v| Some(v + rng.random_range(-3.0..3.0))).collect()).collect())
        .collect();
    let data = PerSubjectRatings::new(names("s", 4), odorants(20), names("d", 3), ratings).unwrap();
    let out = run_noise_ceiling(&data, "subjects", "dig", false).unwrap();
    let rows = &out.report.rows;
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3].descriptor, AGGREGATE);
    let mean = rows[..3].iter().map(|r| r.mean).sum::<f64>() / 3.0;
    assert!((rows[3].mean - mean).abs() <= 1e-12);
    assert!(rows.iter().all(|r| r.metric == "noise_ceiling" && r.input_digest == "dig"));
}

#[test]
fn rank_one_scatter_is_horizontal() {
    let direction = [1.0, -2.0, 0.5, 3.0];
    let x = Array2::from_shape_fn((12, 4), |(i, j)| (i as f64 - 4.0) * direction[j]);
    let t = table(x, Layer::Final);
    let labels = Array2::from_shape_fn((12, 3), |(i, d)| if i % 3 == d { 1.0 } else { 0.0 });
    let set = BinaryLabelSet::new(odorants(12), vec!["floral".into(), "meaty".into(), "ethereal".into()], labels).unwrap();
    let broad: Vec<String> = set.descriptors.clone();
    let data = run_pca_scatter(&t, &set, &broad, &[]).unwrap();
    assert!(data.points.iter().all(|p| p.pc2 == 0.0));
    assert_eq!(data, run_pca_scatter(&t, &set, &broad, &[]).unwrap());
    assert_eq!(data.points[1].broad.as_deref(), Some("meaty"));
}

#[test]
fn external_predictions_are_scored_as_is() {
    let labels = BinaryLabelSet::new(
        odorants(3),
        vec!["a".into(), "b".into()],
        ndarray::array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
    )
    .unwrap();
    // Scores outside [0, 1] are accepted; AUC only uses their order.
    let csv = "row_id,descriptor,score\nm0,a,7\nm0,b,-3\nm1,a,-2\nm1,b,4\nm2,a,5\nm2,b,6\n";
    let preds = parse_external_predictions(csv.as_bytes(), "preds").unwrap();
    assert_eq!(preds.micro_auc(&labels).unwrap(), 1.0);
    let report = run_external_classification(&preds, &labels, "labels", "external", "dig").unwrap();
    assert_eq!(report.rows[0].mean, 1.0);

    let missing = "row_id,descriptor,score\nm0,a,0.1\nm0,b,0.2\nm1,a,0.3\n";
    let err = parse_external_predictions(missing.as_bytes(), "preds").unwrap_err().to_string();
    assert!(err.contains("(m1, b)"), "{err}");
}
