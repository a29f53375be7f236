//! Command implementations behind the `svpipe` binary: a flat key=value
//! config format, training, per-utterance feature extraction, 10-crop
//! trial scoring with an embedding cache, evaluation and score fusion.
//!
//! Every config key can be overridden through the environment with the
//! `SVPIPE_` prefix (`SVPIPE_SEED=7` beats the file, CLI flags beat both).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use sv_core::audio::{extract_eval_crops, parse_trial_list, plan_eval_crops, read_wav};
use sv_core::augment::NoiseCorpusIndex;
use sv_core::dsp::{log_mel_features, write_feature_cache, LogMelFeature};
use sv_core::error::{Error, Result};
use sv_core::loss::{AmSoftmaxConfig, AmSoftmaxHead};
use sv_core::net::{EmbeddingModel, ModelConfig, PoolingMode, TrunkConfig};
use sv_core::tensor::{load_store, Scalar};
use sv_core::train::{scan_speaker_dataset, train, TrainConfig};
use sv_core::verify::{
    evaluate, fuse, minmax_normalize, pair_score, read_score_file, write_score_file, DcfParams,
    ScoreRecord, ScoreSet,
};

pub const ENV_PREFIX: &str = "SVPIPE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

/// Flat pipeline configuration for `train`.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub trunk: TrunkConfig,
    pub pooling: PoolingMode,
    pub margin: f64,
    pub scale: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub crop_len: usize,
    pub augment: bool,
    pub augment_root: Option<PathBuf>,
    pub grad_clip: Option<f64>,
    pub precision: Precision,
}

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "out_dir",
    "trunk",
    "pooling",
    "margin",
    "scale",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "lr_decay",
    "crop_len",
    "augment",
    "augment_root",
    "grad_clip",
    "precision",
];

fn parse_trunk(s: &str) -> Result<TrunkConfig> {
    match s.to_ascii_uppercase().as_str() {
        "Q" => Ok(TrunkConfig::q()),
        "H" => Ok(TrunkConfig::h()),
        "TINY" => Ok(TrunkConfig::tiny()),
        other => Err(Error::Config(format!("unknown trunk {other:?} (expected Q, H or tiny)"))),
    }
}

impl PipelineConfig {
    /// Parse a `key = value` file (one pair per line, `#` comments),
    /// apply `SVPIPE_*` environment overrides, validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key: {key}")));
            }
            kv.insert(key, v.trim().to_string());
        }
        for &key in KNOWN_KEYS {
            let env_name = format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
            if let Ok(v) = std::env::var(&env_name) {
                kv.insert(key.to_string(), v);
            }
        }
        Self::from_map(kv)
    }

    fn from_map(kv: BTreeMap<String, String>) -> Result<Self> {
        let required = |k: &str| -> Result<String> {
            kv.get(k).cloned().ok_or_else(|| Error::Config(format!("missing key: {k}")))
        };
        let num = |k: &str, default: f64| -> Result<f64> {
            match kv.get(k) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {k}: {v:?}"))),
            }
        };
        let int = |k: &str, default: u64| -> Result<u64> {
            match kv.get(k) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {k}: {v:?}"))),
            }
        };
        let flag = |k: &str, default: bool| -> Result<bool> {
            match kv.get(k).map(|s| s.as_str()) {
                None => Ok(default),
                Some("true") | Some("1") | Some("on") => Ok(true),
                Some("false") | Some("0") | Some("off") => Ok(false),
                Some(v) => Err(Error::Config(format!("bad value for {k}: {v:?}"))),
            }
        };

        let config = Self {
            dataset: PathBuf::from(required("dataset")?),
            out_dir: PathBuf::from(required("out_dir")?),
            trunk: parse_trunk(kv.get("trunk").map(|s| s.as_str()).unwrap_or("Q"))?,
            pooling: PoolingMode::parse(kv.get("pooling").map(|s| s.as_str()).unwrap_or("sap"))?,
            margin: num("margin", sv_core::loss::DEFAULT_MARGIN)?,
            scale: num("scale", sv_core::loss::DEFAULT_SCALE)?,
            seed: int("seed", 0)?,
            epochs: int("epochs", 200)? as usize,
            batch_size: int("batch_size", 50)? as usize,
            lr: num("lr", 1e-3)?,
            lr_decay: num("lr_decay", 0.9)?,
            crop_len: int("crop_len", sv_core::audio::TRAIN_CROP_LEN as u64)? as usize,
            augment: flag("augment", false)?,
            augment_root: kv.get("augment_root").map(PathBuf::from),
            grad_clip: match kv.get("grad_clip") {
                None => None,
                Some(v) => Some(v.parse().map_err(|_| {
                    Error::Config(format!("bad value for grad_clip: {v:?}"))
                })?),
            },
            precision: Precision::parse(kv.get("precision").map(|s| s.as_str()).unwrap_or("f64"))?,
        };
        config.validate_paths()?;
        Ok(config)
    }

    fn validate_paths(&self) -> Result<()> {
        if !self.dataset.is_dir() {
            return Err(Error::Config(format!(
                "dataset directory {} does not exist",
                self.dataset.display()
            )));
        }
        if self.augment {
            match &self.augment_root {
                None => {
                    return Err(Error::Config("augment=true requires augment_root".into()));
                }
                Some(root) if !root.is_dir() => {
                    return Err(Error::Config(format!(
                        "augment_root {} does not exist",
                        root.display()
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// `train --config ...`: trains a model and writes checkpoints plus
/// `metrics.csv` into the configured output directory.
pub fn cmd_train(
    config_path: &Path,
    seed_override: Option<u64>,
    precision_override: Option<Precision>,
) -> Result<()> {
    let mut config = PipelineConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(p) = precision_override {
        config.precision = p;
    }
    match config.precision {
        Precision::F64 => run_train::<f64>(&config),
        Precision::F32 => run_train::<f32>(&config),
    }
}

fn run_train<F: Scalar>(config: &PipelineConfig) -> Result<()> {
    let dataset = scan_speaker_dataset(&config.dataset)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let model_config = ModelConfig::new(config.trunk, config.pooling);
    let mut model = EmbeddingModel::<F>::new(model_config, &mut rng)?;
    let head = AmSoftmaxHead::register(
        model.store_mut(),
        dataset.speakers.len(),
        model_config.embed_dim,
        AmSoftmaxConfig { margin: config.margin, scale: config.scale },
        &mut rng,
    )?;
    let corpus = match (&config.augment, &config.augment_root) {
        (true, Some(root)) => Some(NoiseCorpusIndex::from_dir(root)?),
        _ => None,
    };
    let train_config = TrainConfig {
        batch_size: config.batch_size,
        initial_lr: config.lr,
        lr_decay: config.lr_decay,
        epochs: config.epochs,
        crop_len: config.crop_len,
        seed: config.seed,
        augment: config.augment,
        grad_clip: config.grad_clip,
    };
    let report = train(
        &train_config,
        &mut model,
        &head,
        &dataset,
        corpus.as_ref(),
        Some(&config.out_dir),
    )?;
    eprintln!(
        "trained {} epochs on {} speakers / {} utterances; final epoch accuracy {:.4}",
        config.epochs,
        dataset.speakers.len(),
        dataset.utterances.len(),
        report.final_epoch_accuracy
    );
    Ok(())
}

fn walk_wavs(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk_wavs(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// `features`: extract log-mel features for every WAV under `dataset`,
/// mirroring the directory tree as `.fea` cache files.
pub fn cmd_features(dataset: &Path, out_dir: &Path) -> Result<()> {
    if !dataset.is_dir() {
        return Err(Error::Config(format!("dataset directory {} does not exist", dataset.display())));
    }
    let mut rels = Vec::new();
    walk_wavs(dataset, dataset, &mut rels)?;
    if rels.is_empty() {
        return Err(Error::Config(format!("no WAV files under {}", dataset.display())));
    }
    for rel in &rels {
        let wav = read_wav(dataset.join(rel))?;
        let feat = log_mel_features(&wav)?;
        let target = out_dir.join(rel).with_extension("fea");
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_feature_cache(&target, &feat)?;
    }
    eprintln!("extracted features for {} files into {}", rels.len(), out_dir.display());
    Ok(())
}

pub struct ScoreArgs<'a> {
    pub checkpoint: &'a Path,
    pub trials: &'a Path,
    pub wav_root: &'a Path,
    pub out: &'a Path,
    pub workers: usize,
    pub precision: Precision,
}

/// `score`: embed ten 4-second crops per utterance (each utterance once,
/// cached) and write the mean 10x10 cosine score per trial, in trial
/// order.
pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    match args.precision {
        Precision::F64 => run_score::<f64>(args),
        Precision::F32 => run_score::<f32>(args),
    }
}

fn load_model<F: Scalar>(checkpoint: &Path) -> Result<(EmbeddingModel<F>, String)> {
    let manifest_path = checkpoint.with_extension("manifest");
    let manifest = std::fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Config(format!("cannot read manifest {}: {e}", manifest_path.display()))
    })?;
    let model_config = ModelConfig::from_manifest_line(manifest.trim())?;
    let mut rng = ChaCha20Rng::seed_from_u64(0); // weights come from the file
    let mut model = EmbeddingModel::<F>::new(model_config, &mut rng)?;
    load_store(checkpoint, model.store_mut())?;
    let bytes = std::fs::read(checkpoint)?;
    let hash: String = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok((model, hash))
}

fn embed_utterance<F: Scalar>(model: &EmbeddingModel<F>, path: &Path) -> Result<Vec<Vec<f64>>> {
    let wav = read_wav(path)?;
    let plan = plan_eval_crops(wav.len());
    let crops = extract_eval_crops(&wav, &plan);
    let feats: Vec<LogMelFeature> = crops
        .iter()
        .map(log_mel_features)
        .collect::<Result<_>>()?;
    let refs: Vec<&LogMelFeature> = feats.iter().collect();
    model.embed_batch(&refs)
}

fn run_score<F: Scalar>(args: &ScoreArgs) -> Result<()> {
    let (model, ckpt_hash) = load_model::<F>(args.checkpoint)?;
    let trials = parse_trial_list(args.trials)?;
    if trials.is_empty() {
        return Err(Error::Config("trial list is empty".into()));
    }

    let mut unique: Vec<String> = Vec::new();
    {
        let mut seen = std::collections::BTreeSet::new();
        for t in &trials {
            for utt in [&t.enroll_utt, &t.test_utt] {
                if seen.insert(utt.clone()) {
                    unique.push(utt.clone());
                }
            }
        }
    }
    for utt in &unique {
        let p = args.wav_root.join(utt);
        if !p.is_file() {
            return Err(Error::Config(format!("missing WAV for trial utterance: {}", p.display())));
        }
    }

    let model = Arc::new(model);
    let embed_all = || -> Result<Vec<Vec<Vec<f64>>>> {
        use rayon::prelude::*;
        unique
            .par_iter()
            .map(|utt| embed_utterance(model.as_ref(), &args.wav_root.join(utt)))
            .collect()
    };
    let embedded = if args.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(embed_all)?
    } else {
        embed_all()?
    };
    let cache: std::collections::HashMap<(String, String), Vec<Vec<f64>>> = unique
        .iter()
        .cloned()
        .map(|utt| (ckpt_hash.clone(), utt))
        .zip(embedded)
        .collect();

    let mut records = Vec::with_capacity(trials.len());
    for t in &trials {
        let enroll = &cache[&(ckpt_hash.clone(), t.enroll_utt.clone())];
        let test = &cache[&(ckpt_hash.clone(), t.test_utt.clone())];
        let score = pair_score(enroll, test)?;
        records.push(ScoreRecord {
            enroll: t.enroll_utt.clone(),
            test: t.test_utt.clone(),
            score,
        });
    }
    write_score_file(args.out, &records)?;
    let hits = 2 * trials.len() - unique.len();
    eprintln!(
        "scored {} trials; embedded {} unique utterances ({} cache hits)",
        trials.len(),
        unique.len(),
        hits
    );
    Ok(())
}

/// `evaluate`: EER and minDCF for a score file against its trial list.
/// Returns the rendered report.
pub fn cmd_evaluate(score_file: &Path, trials_path: &Path) -> Result<String> {
    let trials = parse_trial_list(trials_path)?;
    let records = read_score_file(score_file)?;
    let set = ScoreSet::from_trials(&trials, records)?;
    let report = evaluate(&set, &DcfParams::default())?;
    Ok(report.to_string())
}

/// `fuse`: min-max normalize both systems, then weighted-average them.
pub fn cmd_fuse(
    score_a: &Path,
    score_b: &Path,
    trials_path: &Path,
    out: &Path,
    w_a: f64,
    w_b: f64,
) -> Result<()> {
    let trials = parse_trial_list(trials_path)?;
    let set_a = ScoreSet::from_trials(&trials, read_score_file(score_a)?)?;
    let set_b = ScoreSet::from_trials(&trials, read_score_file(score_b)?)?;
    let norm_a = minmax_normalize(&set_a)?;
    let norm_b = minmax_normalize(&set_b)?;
    let fused = fuse(&norm_a, &norm_b, w_a, w_b)?;
    write_score_file(out, &fused.records)?;
    eprintln!("fused {} trials with weights a={w_a} b={w_b}", fused.len());
    Ok(())
}

/// Exit code mapping: configuration/usage problems exit 2, runtime
/// failures exit 1.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}
