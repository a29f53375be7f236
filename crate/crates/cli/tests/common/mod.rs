//! Synthetic speaker fixtures shared by the CLI and acceptance tests.
//!
//! Each synthetic "speaker" is a fixed recipe of harmonics over a
//! speaker-specific fundamental; utterances vary phase and add a little
//! seeded noise, so utterances of one speaker share a spectral signature
//! that a small model can separate.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sv_core::audio::{write_wav, Waveform};

pub const SAMPLE_RATE: f64 = 16000.0;

/// Deterministic utterance for (speaker, utt) with the given length.
pub fn synth_utterance(speaker: usize, utt: usize, tag: u64, len: usize) -> Waveform {
    let f0 = 180.0 * 1.32_f64.powi(speaker as i32);
    // fixed per-speaker harmonic amplitudes
    let harmonics = [
        1.0,
        0.6 + 0.05 * ((speaker * 7) % 5) as f64,
        0.3 + 0.05 * ((speaker * 3) % 4) as f64,
    ];
    let mut rng = ChaCha20Rng::seed_from_u64(
        0x5eed_0000 + tag.wrapping_mul(1000) + (speaker as u64) * 100 + utt as u64,
    );
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let gain: f64 = rng.random_range(0.25..0.4);
    let samples: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE;
            let mut v = 0.0;
            for (k, a) in harmonics.iter().enumerate() {
                v += a * (std::f64::consts::TAU * f0 * (k + 1) as f64 * t + phase * (k + 1) as f64).sin();
            }
            gain * v / 2.0 + 0.01 * rng.random_range(-1.0..1.0)
        })
        .collect();
    Waveform::new(samples, 16000).unwrap()
}

/// Write `speakers x utts` training WAVs as `spkN/uM.wav` under `root`.
pub fn write_train_dataset(root: &Path, speakers: usize, utts: usize, len: usize) {
    for s in 0..speakers {
        let dir = root.join(format!("spk{s}"));
        std::fs::create_dir_all(&dir).unwrap();
        for u in 0..utts {
            let w = synth_utterance(s, u, 1, len + (u % 3) * 1600);
            write_wav(dir.join(format!("u{u}.wav")), &w).unwrap();
        }
    }
}

/// Write held-out evaluation utterances (same recipes, different seeds)
/// and return their relative paths grouped by speaker.
pub fn write_eval_utterances(
    root: &Path,
    speakers: usize,
    utts: usize,
    len: usize,
) -> Vec<Vec<String>> {
    let mut paths = Vec::new();
    for s in 0..speakers {
        let dir = root.join(format!("spk{s}"));
        std::fs::create_dir_all(&dir).unwrap();
        let mut spk_paths = Vec::new();
        for u in 0..utts {
            let rel = format!("spk{s}/e{u}.wav");
            let w = synth_utterance(s, u, 2, len);
            write_wav(root.join(&rel), &w).unwrap();
            spk_paths.push(rel);
        }
        paths.push(spk_paths);
    }
    paths
}

/// All same-speaker pairs as targets plus a deterministic spread of
/// cross-speaker nontargets. Returns trial-list text.
#[allow(dead_code)] // each test binary compiles its own copy of this module
pub fn make_trial_list(eval_paths: &[Vec<String>]) -> String {
    let mut lines = Vec::new();
    for spk_paths in eval_paths {
        for i in 0..spk_paths.len() {
            for j in (i + 1)..spk_paths.len() {
                lines.push(format!("1 {} {}", spk_paths[i], spk_paths[j]));
            }
        }
    }
    let speakers = eval_paths.len();
    for a in 0..speakers {
        for b in (a + 1)..speakers {
            // one nontarget pair per ordered speaker pair, rotating utterances
            let i = (a + b) % eval_paths[a].len();
            let j = (a * 3 + b) % eval_paths[b].len();
            lines.push(format!("0 {} {}", eval_paths[a][i], eval_paths[b][j]));
        }
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
