use vaesr_core::degradation::{degrade, DegradationSpec};
use vaesr_core::imaging::Image;
use vaesr_core::models::{sample_latent, standard_normal, LatentDistribution, ModelConfig, Network, ParameterSet};
use vaesr_core::training::{
    read_log, train, train_dae, train_sr, write_log, Checkpoint, DatasetHandle, Phase, TrainConfig,
};
use vaesr_core::Error;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        latent_len: 8,
        srsn_blocks: 1,
        srsn_channels: 4,
        decoder_resblocks: 1,
        decoder_channels: 4,
        encoder_channels: [4, 4, 4, 4],
        disc_channels: [4, 4, 4, 4, 4],
        feature_channels: [4, 4, 4, 4],
        ..ModelConfig::desk()
    }
}

fn tiny_config(phase: Phase, iterations: usize) -> TrainConfig {
    TrainConfig { phase, iterations, batch: 2, lr_patch: 16, ref_patch: 16, seed: 5, model: tiny_model(), ..TrainConfig::desk() }
}

fn textured(h: usize, w: usize, k: usize) -> Image {
    Image::from_fn(h, w, |y, x, c| (((y * 7 + x * 13 + c * 5 + k * 3) % 23) as f64 / 22.0) * 0.8 + 0.1)
}

fn dataset() -> DatasetHandle {
    let clean: Vec<Image> = (0..3).map(|k| textured(80, 80, k)).collect();
    let spec = DegradationSpec { scale: 4, seed: 1, ..DegradationSpec::default() };
    let lr = clean.iter().map(|c| degrade(c, &spec).unwrap()).collect();
    DatasetHandle::from_images(lr, clean)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let ck = train_dae(&dataset(), &tiny_config(Phase::Dae, 3)).unwrap();
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), ck.to_bytes());
}

#[test]
fn truncated_or_corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    let bytes = Checkpoint::fresh(ParameterSet::init(&tiny_model(), 0).unwrap(), 0).to_bytes();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    assert!(Checkpoint::from_bytes(&flipped).is_err());
    let mut version = bytes;
    version[8] = 99;
    let err = Checkpoint::from_bytes(&version).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}

#[test]
fn mismatched_model_config_names_the_array() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::fresh(ParameterSet::init(&tiny_model(), 0).unwrap(), 0).save(&path).unwrap();
    let other = ModelConfig { srsn_channels: 8, ..tiny_model() };
    let err = Checkpoint::load_for(&path, &other).unwrap_err().to_string();
    assert!(err.contains("srsn."), "{err}");
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let cfg = tiny_config(Phase::Dae, 0);
    let ck = train_dae(&dataset(), &cfg).unwrap();
    assert_eq!(ck.params, ParameterSet::init(&cfg.model, cfg.seed).unwrap());
    assert!(ck.meta.history.is_empty());
}

#[test]
fn log_is_complete_and_consistent() {
    let cfg = tiny_config(Phase::Dae, 4);
    let ck = train_dae(&dataset(), &cfg).unwrap();
    assert_eq!(ck.meta.iteration, 4);
    assert_eq!(ck.meta.history.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    for r in &ck.meta.history {
        assert!((r.losses.total - r.losses.weighted_total(&cfg.weights)).abs() < 1e-9);
    }
    let mut buf = Vec::new();
    write_log(&ck.meta.history, &mut buf).unwrap();
    assert_eq!(read_log(&buf[..]).unwrap(), ck.meta.history);
}

#[test]
fn sr_training_leaves_frozen_arrays_untouched() {
    let ds = dataset();
    let dae = train_dae(&ds, &tiny_config(Phase::Dae, 2)).unwrap();
    let sr = train_sr(&ds, &tiny_config(Phase::Sr, 3), dae.clone()).unwrap();
    assert_eq!(sr.meta.iteration, 3);
    for (before, after) in dae.params.entries().iter().zip(sr.params.entries()) {
        let frozen = matches!(before.spec.network, Network::Encoder | Network::Decoder | Network::Features);
        if frozen {
            assert_eq!(before.tensor, after.tensor, "{} changed", before.spec.name);
        }
    }
    let srsn_changed = dae
        .params
        .entries()
        .iter()
        .zip(sr.params.entries())
        .any(|(a, b)| a.spec.network == Network::Srsn && a.tensor != b.tensor);
    assert!(srsn_changed);
    assert!(sr.meta.history.iter().all(|r| r.discriminator.is_some()));
}

#[test]
fn sr_phase_needs_a_denoiser_checkpoint() {
    assert!(matches!(train(&dataset(), &tiny_config(Phase::Sr, 1), None), Err(Error::Config(_))));
}

#[test]
fn model_mismatch_with_start_checkpoint_is_rejected() {
    let ds = dataset();
    let dae = train_dae(&ds, &tiny_config(Phase::Dae, 0)).unwrap();
    let mut cfg = tiny_config(Phase::Sr, 1);
    cfg.model.srsn_blocks = 2;
    let err = train_sr(&ds, &cfg, dae).unwrap_err().to_string();
    assert!(err.contains("srsn.res1"), "{err}");
}

#[test]
fn non_finite_input_aborts_with_last_good_state() {
    let bad = Image::filled(32, 32, [0.5, f64::NAN, 0.5]);
    let ds = DatasetHandle::from_images(Vec::new(), vec![bad]);
    let cfg = tiny_config(Phase::Dae, 5);
    match train_dae(&ds, &cfg) {
        Err(Error::Diverged(d)) => {
            assert_eq!(d.iteration, 1);
            assert_eq!(d.recent.len(), 1);
            assert!(!d.recent[0].losses.all_finite());
            assert_eq!(d.last_good.params, ParameterSet::init(&cfg.model, cfg.seed).unwrap());
            assert_eq!(d.last_good.meta.iteration, 0);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn crop_positions_are_uniform() {
    // Chi-square statistic of 10,000 crops over the 33 x 33 valid corners
    // must lie within 3 standard deviations of its expectation.
    let ds = DatasetHandle::from_images(vec![textured(64, 64, 0)], Vec::new());
    let cells = 33 * 33;
    let mut counts = vec![0usize; cells];
    let n = 10_000;
    for seed in 0..n {
        let p = ds.sample_lr_patch(32, seed as u64).unwrap();
        counts[p.y * 33 + p.x] += 1;
    }
    let expected = n as f64 / cells as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dof = (cells - 1) as f64;
    assert!((chi2 - dof).abs() < 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2} for {dof} dof");
}

#[test]
fn reparameterized_samples_have_the_requested_moments() {
    let dist = LatentDistribution { mean: vec![1.5, -0.5], log_variance: vec![0.8f64.ln(), 2.0f64.ln()] };
    let n = 20_000;
    let samples: Vec<Vec<f64>> = (0..n).map(|s| sample_latent(&dist, None, s).unwrap()).collect();
    for j in 0..2 {
        let mean = samples.iter().map(|z| z[j]).sum::<f64>() / n as f64;
        let var = samples.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want_var = dist.log_variance[j].exp();
        // Standard errors: sqrt(var / n) for the mean, var * sqrt(2 / n) for the variance.
        assert!((mean - dist.mean[j]).abs() < 4.0 * (want_var / n as f64).sqrt(), "mean {mean}");
        assert!((var - want_var).abs() < 4.0 * want_var * (2.0 / n as f64).sqrt(), "var {var}");
    }
    let eps = standard_normal(2, 9);
    assert_eq!(sample_latent(&dist, Some(&eps), 0).unwrap(), sample_latent(&dist, Some(&eps), 1).unwrap());
}
