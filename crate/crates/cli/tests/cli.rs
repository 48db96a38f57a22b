use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const N: usize = 40;
const D: usize = 8;

fn value(i: usize, j: usize) -> f64 {
    // Deterministic, irregular and full rank.
    ((i * 7 + j * 13) as f64 * 0.37).sin() + 0.1 * ((i * j) as f64).cos()
}

fn embedding_csv(layer_shift: f64) -> String {
    let mut s = String::from("id");
    for j in 0..D {
        s.push_str(&format!(",f{j}"));
    }
    s.push('\n');
    for i in 0..N {
        s.push_str(&format!("m{i}"));
        for j in 0..D {
            s.push_str(&format!(",{}", value(i, j) + layer_shift * value(j, i)));
        }
        s.push('\n');
    }
    s
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("emb.csv"), embedding_csv(0.0)).unwrap();
        fs::write(root.join("emb.json"), format!(r#"{{"model_name": "toy", "layer": "final", "dim": {D}}}"#)).unwrap();
        for l in 0..3 {
            fs::write(root.join(format!("l{l}.csv")), embedding_csv(0.2 * l as f64)).unwrap();
            fs::write(root.join(format!("l{l}.json")), format!(r#"{{"model_name": "toy", "layer": {l}, "dim": {D}}}"#)).unwrap();
        }

        let mut labels = String::from("odorant,floral,meaty,ethereal\n");
        let mut ratings = String::from("odorant,sweet,sour\n");
        let mut per_subject = String::from("subject,odorant,sweet,sour\n");
        let mut descriptors = String::from("id");
        for k in 0..15 {
            descriptors.push_str(&format!(",d{k}"));
        }
        descriptors.push('\n');
        for i in 0..N {
            let a = value(i, 0) + 0.5 * value(i, 1);
            let b = value(i, 2) - value(i, 3);
            let floral = u8::from(a > 0.0);
            let meaty = u8::from(b > 0.0);
            let ethereal = u8::from(floral == 0 && meaty == 0);
            labels.push_str(&format!("m{i},{floral},{meaty},{ethereal}\n"));
            ratings.push_str(&format!("m{i},{},{}\n", 50.0 + 20.0 * a, 40.0 + 10.0 * b));
            for s in 0..3 {
                let jitter = ((i + 3 * s) as f64).sin();
                per_subject.push_str(&format!("s{s},m{i},{},{}\n", 50.0 + 20.0 * a + jitter, 40.0 + 10.0 * b - jitter));
            }
            descriptors.push_str(&format!("m{i}"));
            for k in 0..15 {
                descriptors.push_str(&format!(",{}", value(i, k % D) * (k + 1) as f64 + value(i, (k + 3) % D)));
            }
            descriptors.push('\n');
        }
        fs::write(root.join("labels.csv"), labels).unwrap();
        fs::write(root.join("ratings.csv"), ratings).unwrap();
        fs::write(root.join("ratings.json"), r#"{"range": [0, 100]}"#).unwrap();
        fs::write(root.join("subjects.csv"), per_subject).unwrap();
        fs::write(root.join("subjects.json"), r#"{"range": [0, 100]}"#).unwrap();
        fs::write(root.join("physchem.csv"), descriptors).unwrap();

        let mut pairs = String::from("odorant_a,odorant_b,score\n");
        for i in 0..12 {
            for j in i + 1..12 {
                let score = value(i, 0) * value(j, 0) + value(i, 1) * value(j, 1);
                pairs.push_str(&format!("m{i},m{j},{score}\n"));
            }
        }
        pairs.push_str("m0;m1,m2,0.3\n");
        fs::write(root.join("pairs.csv"), pairs).unwrap();
        fs::write(root.join("pairs.json"), r#"{"range": [-2, 2], "polarity": "similarity"}"#).unwrap();

        let mut preds = String::from("row_id,descriptor,score\n");
        for i in 0..N {
            for (k, d) in ["floral", "meaty", "ethereal"].iter().enumerate() {
                preds.push_str(&format!("m{i},{d},{}\n", value(i, k) * 3.0));
            }
        }
        fs::write(root.join("preds.csv"), preds).unwrap();
        Fixture { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }
}

fn olfalign(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_olfalign"));
    cmd.args(args).env_remove("OLFALIGN_CONFIG");
    if let Some(c) = config {
        cmd.env("OLFALIGN_CONFIG", c);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn classify_args<'a>(f: &'a Fixture, out: &'a str, owned: &'a mut Vec<String>) -> Vec<&'a str> {
    *owned = vec![f.p("emb.csv"), f.p("emb.json"), f.p("labels.csv")];
    vec![
        "classify",
        "--embeddings",
        &owned[0],
        "--manifest",
        &owned[1],
        "--labels",
        &owned[2],
        "--seed",
        "7",
        "--repetitions",
        "4",
        "--pca-k",
        "4",
        "--out",
        out,
    ]
}

#[test]
fn classify_writes_reproducible_outputs() {
    let f = Fixture::new();
    let (a, b) = (f.p("out_a"), f.p("out_b"));
    let mut owned = Vec::new();
    ok(&olfalign(&classify_args(&f, &a, &mut owned), None));
    let mut owned = Vec::new();
    ok(&olfalign(&classify_args(&f, &b, &mut owned), None));

    for name in ["report.csv", "config.json", "roc.svg", "roc.csv", "predictions.csv"] {
        let x = fs::read(Path::new(&a).join(name)).unwrap();
        let y = fs::read(Path::new(&b).join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between reruns");
    }
    let report = fs::read_to_string(Path::new(&a).join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), "task,dataset,model,layer,descriptor,metric,mean,std,n,input_digest");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..6], ["classify", "labels", "toy", "final", "mean", "roc_auc_micro"]);
    let auc: f64 = row[6].parse().unwrap();
    assert!(auc > 0.8, "auc {auc}");
    assert_eq!(row[8], "4");

    let run: serde_json::Value = serde_json::from_slice(&fs::read(Path::new(&a).join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "classify");
    assert_eq!(run["seed"], 7);
    assert!(run["outputs"].as_array().unwrap().iter().any(|o| o == "roc.svg"));
    assert_eq!(run["inputs"].as_object().unwrap().len(), 3);

    let svg = fs::read_to_string(Path::new(&a).join("roc.svg")).unwrap();
    assert_eq!(svg.matches("stroke-width=\"0.8\"").count(), 4);
    assert_eq!(svg.matches("stroke-width=\"3\"").count(), 1);
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let out = f.p("out");
    let missing = f.p("nope.csv");
    let r = olfalign(
        &["classify", "--embeddings", &missing, "--manifest", &f.p("emb.json"), "--labels", &f.p("labels.csv"), "--seed", "1", "--out", &out],
        None,
    );
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nope.csv"));

    assert_eq!(olfalign(&["frobnicate"], None).status.code(), Some(2));
    // Missing --seed is a usage error.
    let r = olfalign(
        &["classify", "--embeddings", &f.p("emb.csv"), "--manifest", &f.p("emb.json"), "--labels", &f.p("labels.csv"), "--out", &out],
        None,
    );
    assert_eq!(r.status.code(), Some(2));

    for sub in ["classify", "regress", "rsa", "physchem", "noise-ceiling", "layers", "rsm", "pca-scatter"] {
        let r = olfalign(&[sub, "--help"], None);
        assert_eq!(r.status.code(), Some(0), "{sub} --help");
        assert!(String::from_utf8_lossy(&r.stdout).contains("Usage"));
    }

    // Validation failure inside the run.
    let r = olfalign(
        &["regress", "--embeddings", &f.p("emb.csv"), "--manifest", &f.p("emb.json"), "--ratings", &f.p("ratings.csv"), "--seed", "1", "--test-fraction", "1.5", "--out", &out],
        None,
    );
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("error[validation]"));
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let f = Fixture::new();
    let cfg = f.root.join("cfg.json");
    fs::write(&cfg, r#"{"seed": 11, "repetitions": 2, "test_fraction": 0.25, "pca-k": 4}"#).unwrap();
    let out = f.p("out");
    let r = olfalign(
        &["regress", "--embeddings", &f.p("emb.csv"), "--manifest", &f.p("emb.json"), "--ratings", &f.p("ratings.csv"), "--repetitions", "3", "--out", &out],
        Some(&cfg),
    );
    ok(&r);
    let config: serde_json::Value = serde_json::from_slice(&fs::read(Path::new(&out).join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 11);
    assert_eq!(config["config"]["plan"]["repetitions"], 3);
    assert_eq!(config["config"]["plan"]["test_fraction"], 0.25);
    assert_eq!(config["config"]["probe"]["preprocessing"]["pca_k"], 4);
    let report = fs::read_to_string(Path::new(&out).join("report.csv")).unwrap();
    // 2 descriptors x {cc, nrmse} plus 2 aggregate rows.
    assert_eq!(report.lines().count(), 1 + 6);
    assert!(Path::new(&out).join("descriptors_cc.svg").exists());
}

#[test]
fn rsa_rsm_and_layers() {
    let f = Fixture::new();
    let out = f.p("rsa");
    let (e, m, p) = (f.p("emb.csv"), f.p("emb.json"), f.p("pairs.csv"));
    ok(&olfalign(&["rsa", "--embeddings", &e, "--manifest", &m, "--pairs", &p, "--out", &out], None));
    let report = fs::read_to_string(Path::new(&out).join("report.csv")).unwrap();
    assert!(report.contains("rsa,pairs,toy,final,all_pairs,rsa_r,"));
    assert!(Path::new(&out).join("rsa.svg").exists());

    let out = f.p("rsm");
    ok(&olfalign(&["rsm", "--embeddings", &e, "--manifest", &m, "--pairs", &p, "--out", &out], None));
    for name in ["rsm_model.csv", "rsm_model_mask.csv", "rsm_human.csv", "rsm_human_mask.csv", "rsm_model.svg", "run.json"] {
        assert!(Path::new(&out).join(name).exists(), "{name}");
    }

    let out = f.p("layers");
    let mut args = vec!["layers".to_string()];
    for l in [2, 0, 1] {
        args.extend(["--embeddings".into(), f.p(&format!("l{l}.csv")), "--manifest".into(), f.p(&format!("l{l}.json"))]);
    }
    args.extend(["--pairs".into(), p.clone(), "--descriptors".into(), f.p("physchem.csv")]);
    args.extend(["--seed", "3", "--repetitions", "2", "--out"].map(String::from));
    args.push(out.clone());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&olfalign(&argv, None));
    let series = fs::read_to_string(Path::new(&out).join("layers_rsa.csv")).unwrap();
    let layers: Vec<&str> = series.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(layers, ["0", "1", "2"]);
    assert!(Path::new(&out).join("layers_physchem.svg").exists());

    // Descriptor sweep without a seed is rejected before any work.
    let argv: Vec<&str> = argv.iter().copied().filter(|a| *a != "--seed" && *a != "3").collect();
    assert_eq!(olfalign(&argv, None).status.code(), Some(1));
}

#[test]
fn noise_ceiling_physchem_scatter_and_external() {
    let f = Fixture::new();
    let out = f.p("nc");
    ok(&olfalign(&["noise-ceiling", "--ratings", &f.p("subjects.csv"), "--loo", "--out", &out], None));
    let report = fs::read_to_string(Path::new(&out).join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);
    assert!(report.lines().last().unwrap().starts_with("noise_ceiling,subjects,,,mean,noise_ceiling,"));

    let out = f.p("pc");
    ok(&olfalign(
        &["physchem", "--embeddings", &f.p("emb.csv"), "--manifest", &f.p("emb.json"), "--descriptors", &f.p("physchem.csv"), "--seed", "5", "--repetitions", "2", "--out", &out],
        None,
    ));
    let report = fs::read_to_string(Path::new(&out).join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 15 * 2 + 2);
    assert!(Path::new(&out).join("physchem_cc.svg").exists());

    let out = f.p("scatter");
    ok(&olfalign(
        &["pca-scatter", "--embeddings", &f.p("emb.csv"), "--manifest", &f.p("emb.json"), "--labels", &f.p("labels.csv"), "--narrow", "meaty", "--out", &out],
        None,
    ));
    let csv = fs::read_to_string(Path::new(&out).join("scatter.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + N);
    assert!(Path::new(&out).join("scatter.svg").exists());

    let out = f.p("ext");
    ok(&olfalign(
        &["classify", "--predictions", &f.p("preds.csv"), "--labels", &f.p("labels.csv"), "--model-name", "pom", "--seed", "1", "--out", &out],
        None,
    ));
    let report = fs::read_to_string(Path::new(&out).join("report.csv")).unwrap();
    assert!(report.contains("classify,labels,pom,,mean,roc_auc_micro,"));
}
