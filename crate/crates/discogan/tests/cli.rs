//! End-to-end runs of the command-line workflow on a miniature setup:
//! synthesize source pools, mix a dataset, train both stages, then
//! enhance, evaluate, and ablate through the public entry point.

use std::fs;
use std::path::{Path, PathBuf};

use discogan::audio::{read_wav, write_wav, WavFormat};
use discogan::cli::run_from;
use discogan::config::{AdversaryConfig, DiscModelConfig, RunConfig};
use discogan::datagen::{synth_noise, synth_speech_like};

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["discogan".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    run_from(full)
}

fn micro_cfg() -> RunConfig {
    let mut cfg = RunConfig::toy();
    cfg.stft.window_size = 32;
    cfg.stft.hop = 8;
    cfg.generator.base_channels = 4;
    cfg.generator.num_blocks = 2;
    cfg.generator.lstm_units = 8;
    cfg.generator.latent_dim = 8;
    cfg.attention.model_dim = 8;
    cfg.attention.num_heads = 2;
    cfg.disc_model = DiscModelConfig { channels: vec![4, 8], lstm_hidden: 8, lstm_layers: 2 };
    cfg.adversary = AdversaryConfig { scales: vec![256, 128], base_channels: 4 };
    cfg.train.batch_size = 2;
    cfg.train.seed = 11;
    cfg.train.steps = 2;
    cfg.train.checkpoint_every = 0;
    cfg.validate().unwrap();
    cfg
}

/// Lays out clean/ and noise/ pools under `root`.
fn write_pools(root: &Path) -> (PathBuf, PathBuf) {
    let clean = root.join("clean");
    let noise = root.join("noise");
    fs::create_dir_all(&clean).unwrap();
    fs::create_dir_all(&noise).unwrap();
    for i in 0..3 {
        let c = synth_speech_like(8_000, 16_000, 100 + i);
        write_wav(&c, &clean.join(format!("speech{i}.wav")), WavFormat::Float32).unwrap();
    }
    for i in 0..2 {
        let n = synth_noise(8_000, 16_000, 200 + i);
        write_wav(&n, &noise.join(format!("noise{i}.wav")), WavFormat::Float32).unwrap();
    }
    (clean, noise)
}

fn path(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn workflow_mix_train_enhance_eval_ablate() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let (clean, noise) = write_pools(root);
    let data = root.join("data");

    // --- mix ---------------------------------------------------------
    let mix_args = [
        "mix",
        "--clean",
        &path(&clean),
        "--noise",
        &path(&noise),
        "--out",
        &path(&data),
        "--count",
        "4",
        "--duration",
        "0.25",
        "--snr-min",
        "-12",
        "--snr-max",
        "-8",
        "--seed",
        "5",
    ];
    assert_eq!(cli(&mix_args), 0);
    let manifest_path = data.join("manifest.jsonl");
    assert!(manifest_path.is_file());
    for i in 0..4 {
        assert!(data.join(format!("{i:05}_mix.wav")).is_file());
        assert!(data.join(format!("{i:05}_ref.wav")).is_file());
    }
    let manifest_bytes = fs::read(&manifest_path).unwrap();
    assert_eq!(cli(&mix_args), 0);
    assert_eq!(fs::read(&manifest_path).unwrap(), manifest_bytes, "mix rerun must be byte-stable");

    // --- train: stage 1 ----------------------------------------------
    let cfg_path = root.join("micro.toml");
    fs::write(&cfg_path, toml::to_string(&micro_cfg()).unwrap()).unwrap();
    let run1 = root.join("run_disc");
    let train_disc = [
        "train",
        "--stage",
        "disc",
        "--config",
        &path(&cfg_path),
        "--data",
        &path(&data),
        "--out",
        &path(&run1),
    ];
    assert_eq!(cli(&train_disc), 0);
    let disc_ckpt = run1.join("disc.ckpt");
    assert!(disc_ckpt.is_file());
    let log = fs::read_to_string(run1.join("disc_train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    // Rerunning the same training overwrites with identical bytes.
    let ckpt_bytes = fs::read(&disc_ckpt).unwrap();
    assert_eq!(cli(&train_disc), 0);
    assert_eq!(fs::read(&disc_ckpt).unwrap(), ckpt_bytes, "train rerun must be byte-stable");

    // --- train: stage 2 ----------------------------------------------
    // Without the first-stage checkpoint the command must refuse.
    let run2 = root.join("run_gan");
    assert_eq!(
        cli(&[
            "train",
            "--stage",
            "gan",
            "--config",
            &path(&cfg_path),
            "--data",
            &path(&data),
            "--out",
            &path(&run2),
        ]),
        1
    );
    assert_eq!(
        cli(&[
            "train",
            "--stage",
            "gan",
            "--config",
            &path(&cfg_path),
            "--data",
            &path(&data),
            "--out",
            &path(&run2),
            "--disc-ckpt",
            &path(&disc_ckpt),
        ]),
        0
    );
    let gan_ckpt = run2.join("gan.ckpt");
    assert!(gan_ckpt.is_file());

    let run3 = root.join("run_nocond");
    assert_eq!(
        cli(&[
            "train",
            "--stage",
            "gan_nocond",
            "--config",
            &path(&cfg_path),
            "--data",
            &path(&data),
            "--out",
            &path(&run3),
            "--disc-ckpt",
            &path(&disc_ckpt),
        ]),
        0
    );
    let nocond_ckpt = run3.join("gan_nocond.ckpt");
    assert!(nocond_ckpt.is_file());

    // --- enhance -------------------------------------------------------
    let input = data.join("00000_mix.wav");
    let single_out = root.join("enhanced.wav");
    assert_eq!(
        cli(&[
            "enhance",
            "--input",
            &path(&input),
            "--out",
            &path(&single_out),
            "--chain",
            "disc",
            "--disc-ckpt",
            &path(&disc_ckpt),
        ]),
        0
    );
    let enhanced = read_wav(&single_out).unwrap();
    let original = read_wav(&input).unwrap();
    assert_eq!(enhanced.len(), original.len());
    assert_eq!(enhanced.sample_rate, original.sample_rate);

    let batch_in = root.join("batch_in");
    fs::create_dir_all(&batch_in).unwrap();
    fs::copy(data.join("00000_mix.wav"), batch_in.join("a.wav")).unwrap();
    fs::copy(data.join("00001_mix.wav"), batch_in.join("b.wav")).unwrap();
    let batch_out = root.join("batch_out");
    assert_eq!(
        cli(&[
            "enhance",
            "--input",
            &path(&batch_in),
            "--out",
            &path(&batch_out),
            "--chain",
            "disc,gan",
            "--disc-ckpt",
            &path(&disc_ckpt),
            "--gan-ckpt",
            &path(&gan_ckpt),
        ]),
        0
    );
    assert!(batch_out.join("a.wav").is_file());
    assert!(batch_out.join("b.wav").is_file());

    // Only the cpu device exists.
    assert_eq!(
        cli(&[
            "enhance",
            "--input",
            &path(&input),
            "--out",
            &path(&single_out),
            "--chain",
            "disc",
            "--disc-ckpt",
            &path(&disc_ckpt),
            "--device",
            "cuda",
        ]),
        1
    );

    // --- eval ----------------------------------------------------------
    let report_path = root.join("report_gan.txt");
    let eval_args = [
        "eval",
        "--manifest",
        &path(&manifest_path),
        "--data",
        &path(&data),
        "--chain",
        "gan",
        "--gan-ckpt",
        &path(&gan_ckpt),
        "--out",
        &path(&report_path),
    ];
    assert_eq!(cli(&eval_args), 0);
    let report = fs::read_to_string(&report_path).unwrap();
    let rows: Vec<&str> =
        report.lines().skip(1).take_while(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 4, "one row per rendered clip:\n{report}");
    assert!(report.contains("# buckets"));

    assert_eq!(cli(&eval_args), 0);
    assert_eq!(
        fs::read_to_string(&report_path).unwrap(),
        report,
        "eval rerun must be byte-stable"
    );

    // --- ablate --------------------------------------------------------
    let ab = root.join("ablation");
    assert_eq!(
        cli(&[
            "ablate",
            "--manifest",
            &path(&manifest_path),
            "--data",
            &path(&data),
            "--out",
            &path(&ab),
            "--disc-ckpt",
            &path(&disc_ckpt),
            "--gan-ckpt",
            &path(&gan_ckpt),
            "--nocond-ckpt",
            &path(&nocond_ckpt),
        ]),
        0
    );
    let table = fs::read_to_string(ab.join("ablation.txt")).unwrap();
    for label in ["gan_nocond", "disc+gan_nocond", "gan", "disc+gan", "gan+disc"] {
        assert!(table.contains(&format!("\n{label}\t")), "missing row {label}:\n{table}");
    }
    for name in [
        "report_gan_nocond.txt",
        "report_disc_gan_nocond.txt",
        "report_gan.txt",
        "report_disc_gan.txt",
        "report_gan_disc.txt",
    ] {
        assert!(ab.join(name).is_file(), "missing {name}");
    }
    // The per-chain report equals a separately invoked eval of that chain.
    assert_eq!(
        fs::read_to_string(ab.join("report_gan.txt")).unwrap(),
        report,
        "ablation row must equal the standalone evaluation"
    );

    // A missing checkpoint fails the run but leaves the other reports.
    let ab2 = root.join("ablation_partial");
    assert_eq!(
        cli(&[
            "ablate",
            "--manifest",
            &path(&manifest_path),
            "--data",
            &path(&data),
            "--out",
            &path(&ab2),
            "--disc-ckpt",
            &path(&disc_ckpt),
            "--nocond-ckpt",
            &path(&nocond_ckpt),
        ]),
        1
    );
    assert!(ab2.join("report_gan_nocond.txt").is_file());
    assert!(!ab2.join("report_gan.txt").exists());
    assert!(ab2.join("ablation.txt").is_file());
}

#[test]
fn train_resume_continues_to_the_requested_steps() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let (clean, noise) = write_pools(root);
    let data = root.join("data");
    assert_eq!(
        cli(&[
            "mix",
            "--clean",
            &path(&clean),
            "--noise",
            &path(&noise),
            "--out",
            &path(&data),
            "--count",
            "2",
            "--duration",
            "0.25",
            "--snr-min",
            "-10",
            "--snr-max",
            "-6",
            "--seed",
            "9",
        ]),
        0
    );
    let cfg_path = root.join("micro.toml");
    fs::write(&cfg_path, toml::to_string(&micro_cfg()).unwrap()).unwrap();

    // Straight 2-step run.
    let full = root.join("full");
    assert_eq!(
        cli(&[
            "train", "--stage", "disc", "--config", &path(&cfg_path), "--data", &path(&data),
            "--out", &path(&full),
        ]),
        0
    );

    // 1 step, then resume to 2; the final checkpoint must match the
    // uninterrupted run byte for byte.
    let split = root.join("split");
    assert_eq!(
        cli(&[
            "train", "--stage", "disc", "--config", &path(&cfg_path), "--data", &path(&data),
            "--out", &path(&split), "--steps", "1",
        ]),
        0
    );
    assert_eq!(
        cli(&[
            "train",
            "--stage",
            "disc",
            "--data",
            &path(&data),
            "--out",
            &path(&split),
            "--resume",
            &path(&split.join("disc.ckpt")),
            "--steps",
            "2",
        ]),
        0
    );
    assert_eq!(
        fs::read(split.join("disc.ckpt")).unwrap(),
        fs::read(full.join("disc.ckpt")).unwrap()
    );
}
