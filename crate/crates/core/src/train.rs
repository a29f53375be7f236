//! Adam training loop: one random 2-second crop per utterance per epoch,
//! optional augmentation, AM-Softmax loss, and a learning rate that
//! decays by 10% every two epochs. Everything random flows from the one
//! config seed, so runs are exactly reproducible.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::audio::{read_wav, sample_train_crop, Waveform};
use crate::augment::{augment, NoiseCorpusIndex};
use crate::dsp::log_mel_features;
use crate::error::{Error, Result};
use crate::loss::AmSoftmaxHead;
use crate::net::{EmbeddingModel, ForwardCtx, Mode};
use crate::tensor::{save_store, Graph, ParamId, ParamStore, Scalar};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Epochs between learning-rate reductions.
pub const LR_DECAY_INTERVAL: usize = 2;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Multiplier applied every [`LR_DECAY_INTERVAL`] epochs.
    pub lr_decay: f64,
    pub epochs: usize,
    pub crop_len: usize,
    pub seed: u64,
    pub augment: bool,
    /// Optional global-norm gradient clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            initial_lr: 1e-3,
            lr_decay: 0.9,
            epochs: 200,
            crop_len: crate::audio::TRAIN_CROP_LEN,
            seed: 0,
            augment: false,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.crop_len < 400 {
            return Err(Error::Config(format!(
                "crop_len must cover at least one analysis window (400 samples), got {}",
                self.crop_len
            )));
        }
        Ok(())
    }
}

/// `initial_lr * decay^floor(epoch / 2)`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.initial_lr * config.lr_decay.powi((epoch / LR_DECAY_INTERVAL) as i32)
}

/// One Adam update on a single parameter tensor. `t` is the 1-based step
/// count used for bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adam_step_kernel<F: Scalar>(
    param: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let b1 = F::from_f64(beta1);
    let b2 = F::from_f64(beta2);
    let one = F::one();
    let corr1 = F::from_f64(1.0 - beta1.powi(t as i32));
    let corr2 = F::from_f64(1.0 - beta2.powi(t as i32));
    let lr_f = F::from_f64(lr);
    let eps_f = F::from_f64(eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        param[i] -= lr_f * m_hat / (v_hat.sqrt() + eps_f);
    }
}

/// First/second moment buffers per store entry plus the shared step count.
pub struct AdamState<F: Scalar> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let m = store.iter().map(|(_, e)| vec![F::zero(); e.data.len()]).collect();
        let v = store.iter().map(|(_, e)| vec![F::zero(); e.data.len()]).collect();
        Self { m, v, step: 0 }
    }

    /// Apply one optimizer step to the listed parameters. Non-finite
    /// gradients abort with the offending parameter's name.
    pub fn apply(
        &mut self,
        store: &mut ParamStore<F>,
        grads: &[(ParamId, Vec<F>)],
        lr: f64,
        grad_clip: Option<f64>,
    ) -> Result<()> {
        for (pid, grad) in grads {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {:?}",
                    store.entry(*pid).name
                )));
            }
        }
        let mut scale = 1.0;
        if let Some(clip) = grad_clip {
            let mut sq = 0.0;
            for (_, grad) in grads {
                for g in grad {
                    let gf = g.as_f64();
                    sq += gf * gf;
                }
            }
            let norm = sq.sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }
        self.step += 1;
        for (pid, grad) in grads {
            let idx = pid.index();
            let scaled: Vec<F>;
            let gref: &[F] = if scale != 1.0 {
                scaled = grad.iter().map(|&g| g * F::from_f64(scale)).collect();
                &scaled
            } else {
                grad
            };
            adam_step_kernel(
                &mut store.entry_mut(*pid).data,
                gref,
                &mut self.m[idx],
                &mut self.v[idx],
                self.step,
                lr,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPS,
            );
        }
        Ok(())
    }
}

/// Utterances grouped by speaker, scanned from a directory of per-speaker
/// subdirectories of WAV files. Speakers and files are sorted so labels
/// are stable across runs.
#[derive(Debug, Clone)]
pub struct SpeakerDataset {
    pub speakers: Vec<String>,
    /// `(speaker label, wav path)` pairs.
    pub utterances: Vec<(usize, PathBuf)>,
}

pub fn scan_speaker_dataset(root: impl AsRef<Path>) -> Result<SpeakerDataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
    }
    let mut speaker_dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    speaker_dirs.sort();
    let mut speakers = Vec::new();
    let mut utterances = Vec::new();
    for dir in speaker_dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        if files.is_empty() {
            continue;
        }
        files.sort();
        let label = speakers.len();
        speakers.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        utterances.extend(files.into_iter().map(|f| (label, f)));
    }
    if speakers.len() < 2 {
        return Err(Error::Config(format!(
            "dataset needs at least 2 speakers with audio, found {}",
            speakers.len()
        )));
    }
    Ok(SpeakerDataset { speakers, utterances })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub acc: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("epoch,step,lr,loss,acc\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.step, r.lr, r.loss, r.acc));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    /// Crop-level classification accuracy over the final epoch.
    pub final_epoch_accuracy: f64,
}

fn crop_of(w: &Waveform, crop_len: usize, rng: &mut ChaCha20Rng) -> Result<Waveform> {
    // sample_train_crop is pinned to the 2-second length; shorter training
    // crops (used by fast tests) reuse the same wrap-pad + uniform offset rule
    if crop_len == crate::audio::TRAIN_CROP_LEN {
        return sample_train_crop(w, rng);
    }
    let padded = crate::audio::wrap_pad(&w.samples, crop_len);
    let max_offset = padded.len() - crop_len;
    let offset = if max_offset == 0 { 0 } else { rand::Rng::random_range(rng, 0..=max_offset) };
    Ok(Waveform { samples: padded[offset..offset + crop_len].to_vec(), sample_rate: w.sample_rate })
}

/// Run the full loop. Checkpoints (`epoch_NNN.ckpt` plus a manifest, and a
/// `final.ckpt` copy) and `metrics.csv` land in `out_dir` when given.
pub fn train<F: Scalar>(
    config: &TrainConfig,
    model: &mut EmbeddingModel<F>,
    loss_head: &AmSoftmaxHead,
    dataset: &SpeakerDataset,
    corpus: Option<&NoiseCorpusIndex>,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.utterances.is_empty() || dataset.speakers.len() < 2 {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if config.augment && corpus.is_none() {
        return Err(Error::Config("augmentation enabled but no corpus index given".into()));
    }
    if loss_head.n_classes != dataset.speakers.len() {
        return Err(Error::Config(format!(
            "loss head has {} classes but dataset has {} speakers",
            loss_head.n_classes,
            dataset.speakers.len()
        )));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let waveforms: Vec<Waveform> = dataset
        .utterances
        .iter()
        .map(|(_, p)| read_wav(p))
        .collect::<Result<_>>()?;

    // the loop stream is decoupled from the init stream by a fixed offset
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = AdamState::new(model.store());
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut step: u64 = 0;
    let mut final_epoch_accuracy = 0.0;

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        let mut order: Vec<usize> = (0..dataset.utterances.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_correct = 0usize;
        let mut epoch_total = 0usize;

        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue; // batch statistics need at least two samples
            }
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.utterances[i].0).collect();
            let mut feats = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut crop = crop_of(&waveforms[i], config.crop_len, &mut rng)?;
                if config.augment {
                    crop = augment(&crop, corpus.expect("checked above"), &mut rng)?;
                }
                feats.push(log_mel_features(&crop)?);
            }
            let feat_refs: Vec<&crate::dsp::LogMelFeature> = feats.iter().collect();

            let mut g = Graph::new();
            let mut ctx = ForwardCtx::new(Mode::Train);
            let x = model.features_leaf(&mut g, &feat_refs)?;
            let emb = model.forward(&mut g, x, &mut ctx)?;
            let out = loss_head.forward(model.store(), &mut g, emb, &labels, &mut ctx)?;
            let loss_val = g.scalar(out.loss).as_f64();
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            let correct = g
                .data(out.cosines)
                .chunks_exact(loss_head.n_classes)
                .zip(labels.iter())
                .filter(|(row, &label)| {
                    let argmax = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(j, _)| j)
                        .unwrap();
                    argmax == label
                })
                .count();
            g.backward(out.loss)?;

            let grads: Vec<(ParamId, Vec<F>)> = ctx
                .bindings
                .iter()
                .map(|&(pid, var)| (pid, g.grad(var).to_vec()))
                .collect();
            drop(g);
            for (pid, stats) in ctx.stat_updates {
                model.store_mut().entry_mut(pid).data = stats;
            }
            adam.apply(model.store_mut(), &grads, lr, config.grad_clip)?;

            let acc = correct as f64 / batch.len() as f64;
            epoch_correct += correct;
            epoch_total += batch.len();
            rows.push(MetricsRow { epoch, step, lr, loss: loss_val, acc });
            step += 1;
        }

        if epoch_total > 0 {
            final_epoch_accuracy = epoch_correct as f64 / epoch_total as f64;
        }
        if let Some(dir) = out_dir {
            let ckpt = dir.join(format!("epoch_{epoch:03}.ckpt"));
            save_store(&ckpt, model.store())?;
            std::fs::write(
                dir.join(format!("epoch_{epoch:03}.manifest")),
                format!("{}\n", model.config.manifest_line()),
            )?;
            std::fs::write(dir.join("metrics.csv"), metrics_csv(&rows))?;
        }
    }

    if let Some(dir) = out_dir {
        save_store(dir.join("final.ckpt"), model.store())?;
        std::fs::write(
            dir.join("final.manifest"),
            format!("{}\n", model.config.manifest_line()),
        )?;
    }

    Ok(TrainReport { rows, final_epoch_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::AmSoftmaxConfig;
    use crate::net::{ModelConfig, PoolingMode, TrunkConfig};
    use std::f64::consts::PI;

    #[test]
    fn lr_schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0), 0.001);
        assert_eq!(lr_at_epoch(&cfg, 1), 0.001);
        assert_eq!(lr_at_epoch(&cfg, 2), 0.001 * 0.9);
        assert_eq!(lr_at_epoch(&cfg, 10), 0.001 * 0.9_f64.powi(5));
    }

    #[test]
    fn lr_schedule_monotone_positive() {
        let cfg = TrainConfig::default();
        let mut last = f64::INFINITY;
        for e in 0..=200 {
            let lr = lr_at_epoch(&cfg, e);
            assert!(lr > 0.0);
            assert!(lr <= last);
            last = lr;
        }
    }

    fn scalar_store(value: f64) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::<f64>::new();
        let p = store.add_param("p", vec![1], vec![value]).unwrap();
        (store, p)
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let (mut store, p) = scalar_store(1.25);
        let mut adam = AdamState::new(&store);
        adam.apply(&mut store, &[(p, vec![0.0])], 0.01, None).unwrap();
        assert_eq!(store.entry(p).data[0], 1.25);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_zero_lr_only_counts() {
        let (mut store, p) = scalar_store(-0.5);
        let mut adam = AdamState::new(&store);
        adam.apply(&mut store, &[(p, vec![0.3])], 0.0, None).unwrap();
        assert_eq!(store.entry(p).data[0], -0.5);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_constant_gradient_approaches_lr_steps() {
        let (mut store, p) = scalar_store(0.0);
        let mut adam = AdamState::new(&store);
        let lr = 0.01;
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..2000 {
            adam.apply(&mut store, &[(p, vec![1.0])], lr, None).unwrap();
            let now = store.entry(p).data[0];
            last_delta = now - prev;
            prev = now;
        }
        assert!((last_delta + lr).abs() < 1e-6, "delta {last_delta}");
    }

    #[test]
    fn adam_three_steps_match_scripted_recurrence() {
        let (mut store, p) = scalar_store(0.7);
        let mut adam = AdamState::new(&store);
        let grads = [0.4, -0.9, 0.15];
        let lr = 0.05;
        for g in grads {
            adam.apply(&mut store, &[(p, vec![g])], lr, None).unwrap();
        }
        // scripted oracle for the same recurrence
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.7f64);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m / (1.0 - ADAM_BETA1.powi(t));
            let v_hat = v / (1.0 - ADAM_BETA2.powi(t));
            x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        assert!((store.entry(p).data[0] - x).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let (mut store, p) = scalar_store(0.0);
        let mut adam = AdamState::new(&store);
        match adam.apply(&mut store, &[(p, vec![f64::NAN])], 0.01, None) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("\"p\""), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn adam_grad_clip_scales_update() {
        let (mut store, p) = scalar_store(0.0);
        let mut adam = AdamState::new(&store);
        adam.apply(&mut store, &[(p, vec![100.0])], 0.01, Some(1.0)).unwrap();
        let clipped = store.entry(p).data[0];
        let (mut store2, p2) = scalar_store(0.0);
        let mut adam2 = AdamState::new(&store2);
        adam2.apply(&mut store2, &[(p2, vec![1.0])], 0.01, None).unwrap();
        assert!((clipped - store2.entry(p2).data[0]).abs() < 1e-12);
    }

    /// Two trivially separable synthetic speakers.
    fn synth_dataset(dir: &Path, utts_per_speaker: usize) -> SpeakerDataset {
        let sr = 16000.0;
        for (spk, f0) in [(0usize, 300.0f64), (1, 900.0)] {
            let spk_dir = dir.join(format!("spk{spk}"));
            std::fs::create_dir_all(&spk_dir).unwrap();
            for u in 0..utts_per_speaker {
                let phase = u as f64 * 0.7;
                let len = 12000 + u * 800;
                let samples: Vec<f64> = (0..len)
                    .map(|i| {
                        let t = i as f64 / sr;
                        0.4 * (2.0 * PI * f0 * t + phase).sin()
                            + 0.2 * (2.0 * PI * 2.0 * f0 * t).sin()
                            + 0.02 * ((i * 2654435761 % 9973) as f64 / 9973.0 - 0.5)
                    })
                    .collect();
                crate::audio::write_wav(
                    spk_dir.join(format!("u{u}.wav")),
                    &Waveform::new(samples, 16000).unwrap(),
                )
                .unwrap();
            }
        }
        scan_speaker_dataset(dir).unwrap()
    }

    fn tiny_model(seed: u64) -> (EmbeddingModel<f64>, AmSoftmaxHead) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let config = ModelConfig {
            trunk: TrunkConfig {
                stage_channels: [2, 2, 4, 4],
                blocks_per_stage: [1, 1, 1, 1],
                first_conv_stride: 1,
            },
            pooling: PoolingMode::Sap,
            n_mels: 64,
            embed_dim: 32,
            attn_dim: 8,
        };
        let mut model = EmbeddingModel::<f64>::new(config, &mut rng).unwrap();
        let head = AmSoftmaxHead::register(
            model.store_mut(),
            2,
            32,
            AmSoftmaxConfig::default(),
            &mut rng,
        )
        .unwrap();
        (model, head)
    }

    #[test]
    fn two_speaker_training_separates() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = synth_dataset(dir.path(), 6);
        let (mut model, head) = tiny_model(5);
        let cfg = TrainConfig {
            batch_size: 6,
            epochs: 30,
            crop_len: 8000,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = train(&cfg, &mut model, &head, &dataset, None, None).unwrap();
        assert!(
            report.final_epoch_accuracy >= 0.95,
            "final accuracy {}",
            report.final_epoch_accuracy
        );
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = synth_dataset(dir.path(), 4);
        let run = || {
            let (mut model, head) = tiny_model(9);
            let cfg = TrainConfig {
                batch_size: 4,
                epochs: 3,
                crop_len: 8000,
                seed: 9,
                ..TrainConfig::default()
            };
            train(&cfg, &mut model, &head, &dataset, None, None).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(metrics_csv(&a.rows), metrics_csv(&b.rows));
    }

    #[test]
    fn initial_loss_near_uniform_prior() {
        // with margin 0 and scale 1 the first batch is near-uniform softmax
        let dir = tempfile::tempdir().unwrap();
        let dataset = synth_dataset(dir.path(), 4);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let config = ModelConfig {
            trunk: TrunkConfig {
                stage_channels: [2, 2, 4, 4],
                blocks_per_stage: [1, 1, 1, 1],
                first_conv_stride: 1,
            },
            pooling: PoolingMode::Sap,
            n_mels: 64,
            embed_dim: 32,
            attn_dim: 8,
        };
        let mut model = EmbeddingModel::<f64>::new(config, &mut rng).unwrap();
        let head = AmSoftmaxHead::register(
            model.store_mut(),
            2,
            32,
            AmSoftmaxConfig { margin: 0.0, scale: 1.0 },
            &mut rng,
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 1,
            crop_len: 8000,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = train(&cfg, &mut model, &head, &dataset, None, None).unwrap();
        let first_loss = report.rows[0].loss;
        let uniform = (dataset.speakers.len() as f64).ln();
        assert!(
            (first_loss - uniform).abs() / uniform < 0.2,
            "first loss {first_loss} vs ln(2) {uniform}"
        );
    }

    #[test]
    fn empty_dataset_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_speaker_dataset(dir.path()), Err(Error::Config(_))));
    }
}
