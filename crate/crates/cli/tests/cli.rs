use std::path::Path;
use std::process::{Command, Output};

use seau::config::ExperimentConfig;
use seau::corpus::SplitSizes;
use seau::nn::{EncoderConfig, SpecAugmentConfig};

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.name = "cli".into();
    cfg.output_dir = dir.to_path_buf();
    cfg.corpus.splits = SplitSizes {
        labeled: 8,
        unlabeled: 8,
        finetune: 0,
        test: 3,
    };
    cfg.frontend.n_mels = 16;
    cfg.encoder = EncoderConfig {
        input_dim: 16,
        extractor_channels: 2,
        n_blocks: 2,
        model_dim: 16,
        ffn_dim: 32,
        n_heads: 2,
        conv_kernel: 3,
        dropout: 0.0,
        layerdrop: 0.0,
        projection_dim: 16,
        positional_encoding: false,
    };
    cfg.decoder.model_dim = 16;
    cfg.decoder.ffn_dim = 32;
    cfg.decoder.n_heads = 2;
    cfg.decoder.n_layers = 1;
    cfg.decoder.memory_dim = 16;
    for t in [&mut cfg.supervised, &mut cfg.finetune] {
        t.epochs = 1;
        t.batch_size = 4;
        t.warmup_steps = 1;
        t.specaugment = SpecAugmentConfig::disabled();
    }
    cfg.pretrain.steps = 3;
    cfg.pretrain.batch_size = 4;
    cfg.quantizer.clusters = 4;
    cfg
}

fn seau(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seau"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("spawn seau")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, tiny(dir).to_toml().unwrap()).unwrap();
    path
}

#[test]
fn usage_errors_exit_with_one() {
    let bin = env!("CARGO_BIN_EXE_seau");
    assert_eq!(
        Command::new(bin)
            .arg("--help")
            .output()
            .unwrap()
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        Command::new(bin)
            .arg("--no-such-flag")
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    let o = Command::new(bin)
        .args(["--preset", "huge", "show-config"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let dir = tempfile::tempdir().unwrap();
    let o = seau(&write_config(dir.path()), &["score", "--run", "sideways"]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("unknown run"));
}

#[test]
fn show_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = seau(&cfg, &["show-config"]);
    assert_eq!(code(&o), 0);
    let back = ExperimentConfig::from_toml(&text(&o.stdout)).unwrap();
    assert_eq!(back, tiny(dir.path()));
}

#[test]
fn missing_stage_is_named_and_chain_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for stage in ["corpus-gen", "featurize"] {
        let o = seau(&cfg, &[stage]);
        assert_eq!(code(&o), 0, "{stage}: {}", text(&o.stderr));
    }
    let o = seau(&cfg, &["extract-units", "--source", "seau"]);
    assert_eq!(code(&o), 1);
    assert!(
        text(&o.stderr).contains("train-supervised"),
        "{}",
        text(&o.stderr)
    );

    for args in [
        &["train-supervised"][..],
        &["extract-units", "--source", "seau"],
        &["pretrain", "--units", "seau"],
        &["finetune", "--init", "checkpoint", "--units", "seau"],
        &["decode", "--run", "from-seau"],
    ] {
        let o = seau(&cfg, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", text(&o.stderr));
    }
    let o = seau(&cfg, &["score", "--run", "from-seau"]);
    assert_eq!(code(&o), 0);
    let path = dir.path().join("cli/score/from-seau/score.json");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(report["wer"].as_f64().unwrap() >= 0.0);
    assert!(text(&o.stdout).contains("\"wer\""));

    let o = seau(&cfg, &["extract-units", "--source", "seau"]);
    assert!(text(&o.stdout).contains("skipped"), "{}", text(&o.stdout));
}
