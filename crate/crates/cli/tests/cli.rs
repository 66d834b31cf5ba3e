//! End-to-end tests of the `dsgan` binary: every subcommand, the exit-code
//! contract, config snapshots and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dilated_sgan::data::load_source;
use dilated_sgan::eval::load_report;

fn dsgan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsgan"))
}

fn run(args: &[&str]) -> Output {
    dsgan().args(args).output().expect("binary runs")
}

fn assert_status(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Reduced-architecture config that trains in a couple of seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let text = r#"
[output]
dir = "OUT"

[data]
patch_size = 16

[data.toy]
kind = "stripes"
height = 64
width = 64
band_width = 4
orientation = "vertical"
band_count = 0
seed = 1

[train]
learning_rate = 5e-4
beta1 = 0.5
batch_size = 2
epochs = 1
minibatches_per_epoch = 3
checkpoint_every = 1
sample_every = 1
seed = 9

[network]
deconv_filters = [4, 4]
dilated_hidden_filters = [4]
dilation_rates = [1, 2]
discriminator_filters = [4, 4]
discriminator_kernel = 5

[generate]
noise_height = 4
noise_width = 4
count = 2
seed = 5

[metrics]
max_lag = 8
"#;
    let text = text.replace("OUT", &dir.join("train_out").display().to_string());
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn make_toy_data_writes_binary_png_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy.png");
    let output = run(&[
        "make-toy-data",
        "--kind",
        "stripes",
        "--height",
        "32",
        "--width",
        "48",
        "--seed",
        "3",
        "--band-width",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_status(&output, 0);

    let img = load_source(&out).unwrap();
    assert_eq!((img.height(), img.width()), (32, 48));
    assert!(img.pixels.iter().all(|&v| v == 0.0 || v == 1.0));

    let snapshot = dir.path().join("toy_config.toml");
    let text = std::fs::read_to_string(snapshot).unwrap();
    assert!(text.contains("kind = \"stripes\""), "{text}");
    assert!(text.contains("band_width = 4"));
}

#[test]
fn train_generate_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let train_out = dir.path().join("train_out");

    // train
    let output = run(&["train", "--config", config.to_str().unwrap()]);
    assert_status(&output, 0);
    assert!(train_out.join("checkpoint_final.bin").exists());
    assert!(train_out.join("config_resolved.toml").exists());
    assert!(train_out.join("training_source.png").exists());
    assert!(train_out.join("samples_epoch0001.png").exists());
    let log = std::fs::read_to_string(train_out.join("log.csv")).unwrap();
    assert!(log.starts_with("step,epoch,loss_g,loss_d,mean_d_real,mean_d_fake,wall_time_s"));
    assert_eq!(log.lines().count(), 4, "{log}");

    // generate: four samples, as in the default sheet layout
    let gen_out = dir.path().join("gen_out");
    let ck = train_out.join("checkpoint_final.bin");
    let output = run(&[
        "generate",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--noise-h",
        "4",
        "--noise-w",
        "4",
        "--count",
        "4",
        "--seed",
        "11",
        "--out",
        gen_out.to_str().unwrap(),
    ]);
    assert_status(&output, 0);
    let pngs: Vec<_> = (0..4)
        .map(|i| gen_out.join(format!("gen_{i:04}.png")))
        .collect();
    for p in &pngs {
        assert!(p.exists(), "{}", p.display());
        let img = load_source(p).unwrap();
        assert_eq!((img.height(), img.width()), (16, 16));
    }
    assert!(!gen_out.join("gen_0004.png").exists());

    // rerunning from the emitted snapshot reproduces the images exactly
    let rerun_out = dir.path().join("gen_rerun");
    let snapshot = gen_out.join("config_resolved.toml");
    let output = run(&[
        "generate",
        "--config",
        snapshot.to_str().unwrap(),
        "--out",
        rerun_out.to_str().unwrap(),
    ]);
    assert_status(&output, 0);
    for i in 0..4 {
        let a = std::fs::read(gen_out.join(format!("gen_{i:04}.png"))).unwrap();
        let b = std::fs::read(rerun_out.join(format!("gen_{i:04}.png"))).unwrap();
        assert_eq!(a, b, "image {i} differs after snapshot rerun");
    }

    // evaluate the generated images against themselves: identical sets
    let eval_out = dir.path().join("eval_out");
    let output = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--real-dir",
        gen_out.to_str().unwrap(),
        "--synthetic-dir",
        gen_out.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_status(&output, 0);
    let report = load_report(eval_out.join("report.json")).unwrap();
    for entry in &report.chi2 {
        assert!(entry.distance.abs() < 1e-9);
    }
    assert_eq!(report.tv_real, report.tv_synthetic);
    assert!(eval_out.join("connectivity_synthetic_mean.csv").exists());
    assert!(eval_out.join("connectivity_real_envelope.csv").exists());

    // evaluate straight from the checkpoint
    let eval_ck_out = dir.path().join("eval_ck_out");
    let output = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--real-dir",
        gen_out.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--count",
        "3",
        "--out",
        eval_ck_out.to_str().unwrap(),
    ]);
    assert_status(&output, 0);
    let report = load_report(eval_ck_out.join("report.json")).unwrap();
    assert_eq!(report.synthetic_count, 3);
    assert!(report.checkpoint_id.unwrap().contains("checkpoint_final"));
}

#[test]
fn zero_epochs_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let output = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--epochs",
        "0",
    ]);
    assert_status(&output, 1);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("epochs"), "{stderr}");
}

#[test]
fn unknown_config_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[train]\nlerning_rate = 0.1\n").unwrap();
    let output = run(&["train", "--config", config.to_str().unwrap()]);
    assert_status(&output, 1);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("lerning_rate"), "{stderr}");
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "generate",
        "--checkpoint",
        dir.path().join("nope.bin").to_str().unwrap(),
        "--count",
        "1",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_status(&output, 2);
}

#[test]
fn bad_flags_are_validation_errors() {
    let output = run(&["generate", "--definitely-not-a-flag"]);
    assert_status(&output, 1);
}

#[test]
fn output_root_env_rebases_relative_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsgan()
        .args([
            "make-toy-data",
            "--kind",
            "channels",
            "--height",
            "24",
            "--width",
            "24",
            "--seed",
            "4",
            "--out",
            "nested/toy.png",
        ])
        .env("DSGAN_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_status(&out, 0);
    assert!(dir.path().join("nested/toy.png").exists());
}
