use std::path::Path;
use std::process::{Command, Output};

use xmodal::checkpoint::{sha256_hex, Checkpoint, RunSettings, SplitSettings};
use xmodal::pipeline::{self, EvalSettings, SplitChoice};
use xmodal::report::parse_report;
use xmodal_core::model::{aligned_set, manifold_metrics, ManifoldMetrics, Method};
use xmodal_core::synth::{generate, SynthConfig};
use xmodal_core::{AblationFlags, Domain, ProcrustesTransform, TrainConfig};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmodal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn xmodal")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--classes",
        "4",
        "--per-class",
        "12",
        "--seed",
        "2",
        "--out",
        name,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn report_value(text: &str, key: &str) -> String {
    parse_report(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no {key} in report"))
        .1
}

#[test]
fn synth_writes_one_line_per_pair_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "synth",
            "--classes",
            "5",
            "--per-class",
            "40",
            "--seed",
            "7",
            "--out",
            "a.jsonl",
        ],
    );
    ok(
        p,
        &[
            "synth",
            "--classes",
            "5",
            "--per-class",
            "40",
            "--seed",
            "7",
            "--out",
            "b.jsonl",
        ],
    );
    let a = std::fs::read_to_string(p.join("a.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 200);
    assert_eq!(a, std::fs::read_to_string(p.join("b.jsonl")).unwrap());
    ok(
        p,
        &[
            "synth",
            "--classes",
            "5",
            "--per-class",
            "40",
            "--seed",
            "8",
            "--out",
            "c.jsonl",
        ],
    );
    assert_ne!(a, std::fs::read_to_string(p.join("c.jsonl")).unwrap());
}

#[test]
fn invalid_arguments_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["synth", "--classes", "many", "--out", "x"][..],
        &["train", "--metric", "manhattan"],
        &["eval", "--bogus"],
    ] {
        assert_eq!(run(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn checkpoint_reload_reproduces_embeddings_bit_for_bit() {
    let ds = generate(&SynthConfig {
        per_class: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for method in Method::ALL {
        let settings = RunSettings {
            method,
            train: TrainConfig {
                embed_dim: 8,
                max_epochs: 5,
                ..TrainConfig::default()
            },
            ..RunSettings::default()
        };
        let (ckpt, _) = pipeline::train(&ds, &settings).unwrap();
        let path = dir.path().join(format!("{}.json", method.name()));
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt, "{method}");
        for r in ds.records().iter().take(10) {
            for d in [Domain::Vision, Domain::Language] {
                let a = ckpt.model.embed(r.vector(d), d).unwrap();
                let b = back.model.embed(r.vector(d), d).unwrap();
                assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        assert_eq!(back.to_bytes(), ckpt.to_bytes());
    }
}

#[test]
fn no_procrustes_stores_identity_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p, "d.jsonl", &[]);
    ok(
        p,
        &[
            "train",
            "--dataset",
            "d.jsonl",
            "--embed-dim",
            "6",
            "--no-procrustes",
            "--out",
            "m.json",
        ],
    );
    let ckpt = Checkpoint::load(p.join("m.json")).unwrap();
    assert_eq!(ckpt.settings.refinement, AblationFlags::NONE);
    assert_eq!(ckpt.transform, ProcrustesTransform::identity(6));
    assert!(p.join("m.history.jsonl").exists());
}

#[test]
fn unsupervised_training_accepts_unlabeled_data_and_supervised_refuses_it() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p, "u.jsonl", &["--unlabeled"]);
    ok(
        p,
        &[
            "train",
            "--dataset",
            "u.jsonl",
            "--method",
            "triplet-unsupervised",
            "--embed-dim",
            "6",
            "--out",
            "u.json",
        ],
    );
    // the heads were trained without labels; the pair ids stand in as classes at eval time
    let report = ok(
        p,
        &[
            "eval",
            "--checkpoint",
            "u.json",
            "--dataset",
            "u.jsonl",
            "--split",
            "test",
        ],
    );
    let mrr: f64 = report_value(&report, "mrr").parse().unwrap();
    assert!((0.0..=1.0).contains(&mrr));

    let out = run(
        p,
        &[
            "train",
            "--dataset",
            "u.jsonl",
            "--method",
            "triplet",
            "--out",
            "s.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("label"));
    assert!(!p.join("s.json").exists());
}

#[test]
fn eval_is_repeatable_and_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p, "d.jsonl", &[]);
    ok(
        p,
        &[
            "train",
            "--dataset",
            "d.jsonl",
            "--embed-dim",
            "8",
            "--out",
            "m.json",
        ],
    );
    let hash = |f: &str| sha256_hex(&std::fs::read(p.join(f)).unwrap());
    let before = (hash("d.jsonl"), hash("m.json"));
    let args = [
        "eval",
        "--checkpoint",
        "m.json",
        "--dataset",
        "d.jsonl",
        "--split",
        "test",
        "--out",
        "r1",
    ];
    let first = ok(p, &args);
    let second = ok(
        p,
        &[
            "eval",
            "--checkpoint",
            "m.json",
            "--dataset",
            "d.jsonl",
            "--split",
            "test",
            "--out",
            "r2",
        ],
    );
    assert_eq!(first, second);
    for f in ["report.txt", "auc.csv", "dc.csv"] {
        assert_eq!(hash(&format!("r1/{f}")), hash(&format!("r2/{f}")));
    }
    assert_eq!((hash("d.jsonl"), hash("m.json")), before);
    assert_eq!(report_value(&first, "split"), "test");
    let ds = xmodal::load_dataset(p.join("d.jsonl")).unwrap();
    let ckpt = Checkpoint::load(p.join("m.json")).unwrap();
    let test = pipeline::select(&ckpt, &ds, SplitChoice::Test).unwrap();
    assert_eq!(report_value(&first, "pairs"), test.len().to_string());
}

#[test]
fn dimension_mismatch_names_both_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p, "d.jsonl", &[]);
    small_synth(p, "other.jsonl", &["--dim-vision", "17"]);
    ok(
        p,
        &[
            "train",
            "--dataset",
            "d.jsonl",
            "--embed-dim",
            "6",
            "--out",
            "m.json",
        ],
    );
    let out = run(
        p,
        &["eval", "--checkpoint", "m.json", "--dataset", "other.jsonl"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    let want = SynthConfig::default().dim_vision.to_string();
    assert!(
        err.contains("vision") && err.contains("17") && err.contains(&want),
        "{err}"
    );
}

#[test]
fn split_selection_needs_the_training_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p, "d.jsonl", &[]);
    ok(
        p,
        &[
            "synth",
            "--classes",
            "4",
            "--per-class",
            "12",
            "--seed",
            "3",
            "--out",
            "e.jsonl",
        ],
    );
    ok(
        p,
        &[
            "train",
            "--dataset",
            "d.jsonl",
            "--embed-dim",
            "6",
            "--out",
            "m.json",
        ],
    );
    let out = run(
        p,
        &[
            "eval",
            "--checkpoint",
            "m.json",
            "--dataset",
            "e.jsonl",
            "--split",
            "test",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    // scoring every record of a foreign dataset is allowed
    let report = ok(
        p,
        &["eval", "--checkpoint", "m.json", "--dataset", "e.jsonl"],
    );
    assert_eq!(report_value(&report, "pairs"), "48");
}

#[test]
fn training_split_scores_at_least_as_well_as_held_out() {
    let (mut train_mrr, mut test_mrr) = (0.0, 0.0);
    for seed in 0..3 {
        let ds = generate(&SynthConfig {
            seed,
            class_separation: 1.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let settings = RunSettings {
            train: TrainConfig {
                embed_dim: 16,
                seed,
                ..TrainConfig::default()
            },
            split: SplitSettings {
                seed,
                ..SplitSettings::default()
            },
            ..RunSettings::default()
        };
        let (ckpt, _) = pipeline::train(&ds, &settings).unwrap();
        // equal gallery sizes, since MRR falls as the gallery grows
        let test = pipeline::select(&ckpt, &ds, SplitChoice::Test).unwrap();
        let train = pipeline::select(&ckpt, &ds, SplitChoice::Train).unwrap();
        let train = train.subset(&(0..test.len()).collect::<Vec<_>>());
        let opts = EvalSettings::default().options(&ckpt);
        let score = |part| {
            let ts = aligned_set(&ckpt.model, &ckpt.transform, part).unwrap();
            manifold_metrics(&ts, &opts).unwrap().mrr
        };
        train_mrr += score(&train);
        test_mrr += score(&test);
    }
    assert!(train_mrr >= test_mrr, "train {train_mrr} test {test_mrr}");
}

#[test]
fn ablate_writes_four_variants_with_three_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p, "d.jsonl", &[]);
    ok(
        p,
        &[
            "train",
            "--dataset",
            "d.jsonl",
            "--embed-dim",
            "8",
            "--out",
            "m.json",
        ],
    );
    let stdout = ok(
        p,
        &[
            "ablate",
            "--checkpoint",
            "m.json",
            "--dataset",
            "d.jsonl",
            "--out",
            "ab.csv",
        ],
    );
    let csv = std::fs::read_to_string(p.join("ab.csv")).unwrap();
    assert_eq!(csv, stdout);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,mrr,knn,dc");
    let names: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        names,
        ["full", "no-translation", "no-scaling", "no-rotation"]
    );
    for line in &lines[1..] {
        let values: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(values.len(), 3);
        assert!(values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn unrefined_variant_matches_a_checkpoint_trained_without_refinement() {
    let ds = generate(&SynthConfig {
        per_class: 15,
        ..SynthConfig::default()
    })
    .unwrap();
    let with = RunSettings {
        train: TrainConfig {
            embed_dim: 8,
            seed: 4,
            ..TrainConfig::default()
        },
        ..RunSettings::default()
    };
    let without = RunSettings {
        refinement: AblationFlags::NONE,
        ..with.clone()
    };
    let (a, _) = pipeline::train(&ds, &with).unwrap();
    let (b, _) = pipeline::train(&ds, &without).unwrap();
    assert_eq!(a.model, b.model);
    let s = EvalSettings {
        split: SplitChoice::Test,
        ..EvalSettings::default()
    };
    let variant = pipeline::ablation_variant(&a, &ds, AblationFlags::NONE, &s).unwrap();
    let r = pipeline::eval(&b, &ds, &s).unwrap();
    assert_eq!(
        variant,
        ManifoldMetrics {
            mrr: r.mrr.both,
            knn: r.knn.both,
            dc: r.distance_correlation
        }
    );
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_synth(p, "d.jsonl", &[]);
    std::fs::write(
        p.join("run.toml"),
        "dataset = \"d.jsonl\"\nembed_dim = 5\nmargin = 0.25\nmethod = \"triplet-euclidean\"\n",
    )
    .unwrap();
    ok(
        p,
        &[
            "--config",
            "run.toml",
            "train",
            "--embed-dim",
            "7",
            "--out",
            "m.json",
        ],
    );
    let ckpt = Checkpoint::load(p.join("m.json")).unwrap();
    assert_eq!(ckpt.settings.train.embed_dim, 7);
    assert_eq!(ckpt.settings.train.margin, 0.25);
    assert_eq!(ckpt.settings.method, Method::TripletEuclidean);

    std::fs::write(p.join("bad.toml"), "embed_dimension = 5\n").unwrap();
    let out = run(p, &["--config", "bad.toml", "train", "--out", "x.json"]);
    assert_ne!(out.status.code(), Some(0));
}
