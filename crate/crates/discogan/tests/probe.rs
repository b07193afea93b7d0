//! Temporary measurement rig — not part of the suite, never committed.

use std::time::Instant;

use discogan::audio::AudioClip;
use discogan::config::{RunConfig, StageKind};
use discogan::datagen::{make_mixture, synth_noise, synth_speech_like, MixtureSpec};
use discogan::discmodel::{DiscModel, FrozenDisc};
use discogan::metrics::snr;
use discogan::trainer::{Stage1Trainer, Stage2Trainer, TrainItem};

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
    cfg.disc_model.channels = vec![4, 8];
    cfg.disc_model.lstm_hidden = 8;
    cfg.disc_model.lstm_layers = 2;
    cfg.adversary.scales = vec![256, 128];
    cfg.adversary.base_channels = 4;
    cfg.train.batch_size = 2;
    cfg.train.seed = 11;
    cfg.validate().unwrap();
    cfg
}

fn mixture_at(snr_db: f64, len: usize, seed: u64) -> TrainItem {
    let clean = synth_speech_like(2 * len, 16_000, seed);
    let noise = synth_noise(2 * len, 16_000, seed.wrapping_add(900));
    let spec = MixtureSpec {
        clean_id: "c".into(),
        noise_id: "n".into(),
        rir_id: None,
        target_snr: snr_db,
        duration: len as f64 / 16_000.0,
        seed,
    };
    let (mix, reference) = make_mixture(&spec, &clean, &noise, None).unwrap();
    TrainItem { mix, reference }
}

#[test]
#[ignore]
fn probe_overfit_micro() {
    let mut cfg = micro_cfg();
    cfg.train.batch_size = 4;
    cfg.train.lr = 1e-3;
    let data: Vec<TrainItem> = (0..4).map(|i| mixture_at(-10.0, 4000, 40 + i)).collect();

    let frozen = FrozenDisc::new(DiscModel::new(&cfg.disc_model, &cfg.stft, 77));
    let mut tr = Stage2Trainer::new(&cfg, StageKind::Gan, frozen).unwrap();

    let t0 = Instant::now();
    let mut head = Vec::new();
    let mut window = Vec::new();
    for s in 0..500u64 {
        let rec = tr.step(&data).unwrap();
        let v = rec.l_t + rec.l_f;
        if s < 10 {
            head.push(v);
        }
        window.push(v);
        if window.len() > 10 {
            window.remove(0);
        }
        if (s + 1) % 50 == 0 {
            let h: f64 = head.iter().sum::<f64>() / head.len() as f64;
            let w: f64 = window.iter().sum::<f64>() / window.len() as f64;
            println!(
                "step {:3}  l_t+l_f {:8.5}  head {:8.5}  tail10 {:8.5}  ratio {:.3}  {:6.1}s",
                s + 1,
                v,
                h,
                w,
                w / h,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}

#[test]
#[ignore]
fn probe_trend_toy_timing() {
    let cfg = {
        let mut c = RunConfig::toy();
        c.train.batch_size = 4;
        c.train.lr = 1e-3;
        c.train.seed = 21;
        c.validate().unwrap();
        c
    };
    let train: Vec<TrainItem> = (0..50).map(|i| mixture_at(-10.0, 4000, 100 + i)).collect();

    // stage 1 timing
    let mut s1 = Stage1Trainer::new(&cfg);
    let t0 = Instant::now();
    for _ in 0..10 {
        s1.step(&train).unwrap();
    }
    println!("stage1: {:.2} s/step", t0.elapsed().as_secs_f64() / 10.0);

    // stage 2 timing (conditioned)
    let frozen = s1.into_frozen();
    let mut s2 = Stage2Trainer::new(&cfg, StageKind::Gan, frozen).unwrap();
    let t1 = Instant::now();
    for _ in 0..10 {
        s2.step(&train).unwrap();
    }
    println!("stage2 gan: {:.2} s/step", t1.elapsed().as_secs_f64() / 10.0);

    // held-out delta-snr after this tiny amount of training
    let held: Vec<TrainItem> = (0..10).map(|i| mixture_at(-10.0, 4000, 700 + i)).collect();
    let d = mean_delta_snr(&s2, &held);
    println!("delta snr after 10 gan steps: {d:.2} dB");
}

fn mean_delta_snr(tr: &Stage2Trainer, held: &[TrainItem]) -> f64 {
    let mut acc = 0.0;
    for item in held {
        let latents = if tr.gan.is_conditioned() {
            let input = discogan::discmodel::analyze(&item.mix, &tr.cfg.stft).unwrap();
            Some(tr.frozen.latents(&input))
        } else {
            None
        };
        let enh: AudioClip = tr.gan.enhance(&item.mix, latents.as_ref()).unwrap();
        acc += snr(&item.reference, &enh) - snr(&item.reference, &item.mix);
    }
    acc / held.len() as f64
}
