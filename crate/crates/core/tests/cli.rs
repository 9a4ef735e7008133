use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const GAUSS: &str = r#""g": {"kind": "mixture", "mixture": {"shape": [2], "weights": [1.0], "means": [[3.0, 3.0]], "variances": [1.0]}}"#;
const TWO_MODES: &str = r#""m": {"kind": "mixture", "mixture": {"shape": [2], "weights": [0.3, 0.7], "means": [[2.0, -1.0], [-1.5, 1.0]], "variances": [0.25, 0.5]}}"#;

struct Run {
    out: PathBuf,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().unwrap()
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn read(&self, name: &str) -> Vec<u8> {
        std::fs::read(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}; stderr: {}", self.stderr()))
    }

    fn text(&self, name: &str) -> String {
        String::from_utf8(self.read(name)).unwrap()
    }

    fn metric(&self, name: &str) -> f64 {
        let csv = self.text("metrics.csv");
        let row = csv
            .lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|f| f[1] == name)
            .unwrap_or_else(|| panic!("no metric {name} in {csv}"));
        row[2].parse().unwrap()
    }
}

fn run(dir: &Path, tag: &str, command: &str, json: &str, extra: &[&str]) -> Run {
    let config = dir.join(format!("{tag}.json"));
    std::fs::write(&config, json).unwrap();
    let out = dir.join(tag);
    let output = Command::new(env!("CARGO_BIN_EXE_coopdiff"))
        .args([command, "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    Run { out, output }
}

fn ok(dir: &Path, tag: &str, command: &str, json: &str) -> Run {
    let r = run(dir, tag, command, json, &[]);
    assert_eq!(r.code(), 0, "{command} failed: {}", r.stderr());
    r
}

fn sample_config(seed: u64, sample: &str) -> String {
    format!(r#"{{"seed": {seed}, "models": {{{GAUSS}}}, "sampler": {{"steps": 20}}, "sample": {sample}}}"#)
}

#[test]
fn seeded_sample_runs_repeat_and_seed_override_changes_them() {
    let tmp = TempDir::new().unwrap();
    let json = sample_config(7, r#"{"model": "g", "chains": 200, "trajectory": true}"#);
    let a = ok(tmp.path(), "a", "sample", &json);
    let b = ok(tmp.path(), "b", "sample", &json);
    for f in ["samples.csv", "trajectory.csv", "metrics.csv", "hist.pgm"] {
        assert_eq!(a.read(f), b.read(f), "{f}");
    }
    let c = run(tmp.path(), "c", "sample", &json, &["--seed", "8"]);
    assert_eq!(c.code(), 0);
    assert_ne!(a.read("samples.csv"), c.read("samples.csv"));
    assert!(a.text("samples.csv").starts_with("chain,x0,x1\n"));
    assert_eq!(a.text("samples.csv").lines().count(), 201);
    assert!(a.metric("frechet") < 0.2);

    let manifest: serde_json::Value = serde_json::from_slice(&a.read("manifest.json")).unwrap();
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let seeded: serde_json::Value = serde_json::from_slice(&c.read("manifest.json")).unwrap();
    assert_eq!(seeded["seed"], 8);
    assert_eq!(seeded["config_sha256"], manifest["config_sha256"]);
}

#[test]
fn bad_configs_exit_two_and_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let fuse = |d: &str| {
        format!(
            r#"{{"models": {{{TWO_MODES}}}, "codecs": {{"c": {{"kind": "identity", "shape": [2]}}}},
                "fuse": {{"mode": {{"kind": "latent", "d": {d}}}, "a": {{"model": "m", "codec": "c"}}, "b": {{"model": "m", "codec": "c"}}, "chains": 10}}}}"#
        )
    };
    let r = run(tmp.path(), "d", "fuse", &fuse("1.5"), &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("fuse.mode.d"), "{}", r.stderr());

    let r = run(tmp.path(), "file", "sample", r#"{"models": {"x": {"kind": "mlp_file", "path": "absent.bin"}}, "sample": {"model": "x", "chains": 1}}"#, &[]);
    assert_eq!(r.code(), 2, "{}", r.stderr());
    assert!(r.stderr().contains("models.x"), "{}", r.stderr());

    let r = run(tmp.path(), "typo", "sample", r#"{"sede": 3}"#, &[]);
    assert_eq!(r.code(), 2);

    let r = run(tmp.path(), "no_section", "fuse", &sample_config(1, r#"{"model": "g", "chains": 1}"#), &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("fuse"), "{}", r.stderr());

    let missing = tmp.path().join("nothing.json");
    let out = Command::new(env!("CARGO_BIN_EXE_coopdiff")).args(["eval", "--config"]).arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn latent_fusion_at_zero_matches_sampling_model_a() {
    let tmp = TempDir::new().unwrap();
    let common = format!(
        r#""seed": 11,
           "models": {{{TWO_MODES}, "a": {{"kind": "encoded_mixture", "of": "m", "codec": "ca"}}, "b": {{"kind": "encoded_mixture", "of": "m", "codec": "cb"}}}},
           "codecs": {{"ca": {{"kind": "random_orthogonal", "shape": [2], "bias_scale": 0.5, "seed": 42}}, "cb": {{"kind": "random_orthogonal", "shape": [2], "seed": 43}}}},
           "sampler": {{"method": {{"kind": "ddim", "eta": 0.0}}, "steps": 40}}"#
    );
    let fuse = |d: &str| {
        format!(
            r#"{{{common}, "fuse": {{"mode": {{"kind": "latent", "d": {d}}}, "a": {{"model": "a", "codec": "ca"}}, "b": {{"model": "b", "codec": "cb"}}, "chains": 300, "reference": "m"}}}}"#
        )
    };
    let fused = ok(tmp.path(), "fused", "fuse", &fuse("0.0"));
    let solo = ok(
        tmp.path(),
        "solo",
        "sample",
        &format!(r#"{{{common}, "sample": {{"model": "a", "codec": "ca", "chains": 300, "reference": "m"}}}}"#),
    );
    assert_eq!(fused.read("samples.csv"), solo.read("samples.csv"));
    let half = ok(tmp.path(), "half", "fuse", &fuse("0.5"));
    assert_ne!(half.read("samples.csv"), fused.read("samples.csv"));
}

#[test]
fn resolution_fusion_keeps_the_bridge_noise_white() {
    let tmp = TempDir::new().unwrap();
    let json = |mode: &str| {
        format!(
            r#"{{"seed": 5,
                "models": {{"lo": {{"kind": "mixture", "mixture": {{"shape": [4, 4], "weights": [1.0], "means": [[0,1,0,1,1,0,1,0,0,1,0,1,1,0,1,0]], "variances": [0.2]}}}},
                           "hi": {{"kind": "upsampled_mixture", "of": "lo", "factor": 2}}}},
                "codecs": {{"l": {{"kind": "identity", "shape": [4, 4]}}, "h": {{"kind": "identity", "shape": [8, 8]}}}},
                "sampler": {{"method": {{"kind": "ancestral"}}, "steps": 20}},
                "fuse": {{"mode": {{"kind": "resolution", "t_low": 500, "upsample": "{mode}"}}, "a": {{"model": "hi", "codec": "h"}}, "b": {{"model": "lo", "codec": "l"}},
                         "chains": 200, "trajectory": true, "reference": "hi"}}}}"#
        )
    };
    let coop = ok(tmp.path(), "coop", "fuse", &json("coop"));
    let naive = ok(tmp.path(), "naive", "fuse", &json("naive"));
    assert!(coop.metric("coop_rho").abs() < 0.05);
    assert!(coop.metric("naive_rho") > 0.3);
    assert!((coop.metric("coop_noise_var") - 1.0).abs() < 0.05);
    assert_ne!(coop.read("samples.csv"), naive.read("samples.csv"));
    let low = coop.text("trajectory_b.csv");
    assert!(low.lines().skip(1).all(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap() >= 500));
}

#[test]
fn identical_halves_match_single_model_sampling() {
    let tmp = TempDir::new().unwrap();
    let sampler = r#""sampler": {"method": {"kind": "ancestral"}, "steps": 50}"#;
    let split = ok(
        tmp.path(),
        "split",
        "sample",
        &format!(r#"{{"seed": 2, "models": {{{TWO_MODES}}}, {sampler}, "sample": {{"model": "m", "texture_model": "m", "t_struct": 500, "chains": 100}}}}"#),
    );
    let single = ok(
        tmp.path(),
        "single",
        "sample",
        &format!(r#"{{"seed": 2, "models": {{{TWO_MODES}}}, {sampler}, "sample": {{"model": "m", "chains": 100}}}}"#),
    );
    assert_eq!(split.read("samples.csv"), single.read("samples.csv"));
}

fn train_config(lr: f64) -> String {
    format!(
        r#"{{"seed": 3, "models": {{"d": {{"kind": "mixture", "mixture": {{"shape": [2], "weights": [0.5, 0.5], "means": [[2.0, 2.0], [-2.0, -2.0]], "variances": [0.1, 0.1]}}}}}},
            "train": {{"role": "monolithic", "mlp": {{"layout": {{"kind": "dense", "shape": [2]}}, "hidden": [16], "time_embed_dim": 4, "skip": true, "schedule_steps": 1000}},
                      "data": {{"high": "d"}}, "steps": 600, "learning_rate": {lr}, "batch_size": 8}}}}"#
    )
}

#[test]
fn training_is_reproducible_and_its_model_samples() {
    let tmp = TempDir::new().unwrap();
    let a = ok(tmp.path(), "a", "train", &train_config(0.02));
    let b = ok(tmp.path(), "b", "train", &train_config(0.02));
    assert_eq!(a.read("model.bin"), b.read("model.bin"));
    assert_eq!(a.read("loss_curve.csv"), b.read("loss_curve.csv"));

    let curve = a.text("loss_curve.csv");
    assert!(curve.starts_with("step,loss,smoothed\n"));
    let smoothed: Vec<f64> = curve.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(smoothed.len(), 600);
    assert!(smoothed[599] < smoothed[99], "{} vs {}", smoothed[599], smoothed[99]);
    assert!(a.metric("params") > 0.0);

    let model = a.out.join("model.bin");
    let s = ok(
        tmp.path(),
        "s",
        "sample",
        &format!(
            r#"{{"models": {{"net": {{"kind": "mlp_file", "path": {:?}}}, "d": {{"kind": "mixture", "mixture": {{"shape": [2], "weights": [0.5, 0.5], "means": [[2.0, 2.0], [-2.0, -2.0]], "variances": [0.1, 0.1]}}}}}},
                "sample": {{"model": "net", "chains": 50, "reference": "d"}}}}"#,
            model.to_str().unwrap()
        ),
    );
    assert_eq!(s.text("samples.csv").lines().count(), 51);
}

#[test]
fn diverging_training_exits_three() {
    let tmp = TempDir::new().unwrap();
    let r = run(tmp.path(), "boom", "train", &train_config(1e6), &[]);
    assert_eq!(r.code(), 3, "{}", r.stderr());
    assert!(r.stderr().contains("diverged"), "{}", r.stderr());
}

const SMALL_STRATEGY: &str = r#""strategy": {"total_steps": 60, "n_low": 60, "eval_samples": 100}"#;

#[test]
fn strategy_commands_write_their_tables() {
    let tmp = TempDir::new().unwrap();
    let schedule = r#""schedule": {"steps": 1000, "beta_min": 0.0001, "beta_max": 0.01}"#;
    let one = ok(tmp.path(), "one", "ablate-tstruct", &format!(r#"{{{schedule}, "ablate": {{{SMALL_STRATEGY}, "values": [500]}}}}"#));
    let table = one.text("ablate.csv");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "t_struct,frechet,seeds");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("500,") && lines[1].ends_with(",0"));
    assert!(String::from_utf8_lossy(&one.output.stdout).contains("argmin t_struct = 500"));

    let r = run(tmp.path(), "bad", "ablate-tstruct", &format!(r#"{{{schedule}, "ablate": {{"values": [500, 1000]}}}}"#), &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("ablate.values"), "{}", r.stderr());

    let cmp = ok(tmp.path(), "cmp", "compare-strategies", &format!(r#"{{{schedule}, "compare": {{{SMALL_STRATEGY}, "seeds": [1, 2]}}}}"#));
    let table = cmp.text("compare.csv");
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["arm", "params", "optimizer_steps", "param_x_steps", "frechet", "seeds"]);
    let arms: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
    assert_eq!(arms, ["monolithic", "decoupled", "decoupled_high_res_structure"]);
    for r in &rows[1..] {
        let (params, steps, cost): (u64, u64, u64) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        assert_eq!(r[5], "1;2");
        assert!(r[4].parse::<f64>().unwrap().is_finite());
        if r[0] == "monolithic" {
            assert_eq!(params * steps, cost);
        }
    }
}

#[test]
fn eval_scores_a_sample_file() {
    let tmp = TempDir::new().unwrap();
    let gen = ok(tmp.path(), "gen", "sample", &sample_config(4, r#"{"model": "g", "chains": 300}"#));
    let samples = gen.out.join("samples.csv");
    let e = ok(
        tmp.path(),
        "eval",
        "eval",
        &format!(r#"{{"models": {{{GAUSS}}}, "eval": {{"samples": {:?}, "reference": "g"}}}}"#, samples.to_str().unwrap()),
    );
    assert_eq!(e.metric("frechet"), gen.metric("frechet"));
    let two = ok(
        tmp.path(),
        "two",
        "eval",
        &format!(r#"{{"eval": {{"samples": {0:?}, "reference_samples": {0:?}}}}}"#, samples.to_str().unwrap()),
    );
    assert!(two.metric("frechet").abs() < 1e-9);
    let r = run(tmp.path(), "gone", "eval", &format!(r#"{{"models": {{{GAUSS}}}, "eval": {{"samples": "gone.csv", "reference": "g"}}}}"#), &[]);
    assert_eq!(r.code(), 2);
}
