//! Training-time augmentation: SNR-controlled additive noise from a
//! speech/music/noise corpus, and reverberation by RIR convolution.
//!
//! Each call applies exactly one recipe, drawn uniformly from
//! {none, speech, music, noise, rir}:
//!
//! - speech: 3-7 recordings, each mixed at an independent SNR in [13, 20] dB
//! - music:  one recording at [5, 15] dB
//! - noise:  one recording at [0, 15] dB
//! - rir:    convolution with a unit-energy room impulse response

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::audio::{read_wav, wrap_pad, Waveform};
use crate::error::{Error, Result};

/// File lists for the four corpus categories. Built from a root directory
/// with `speech/`, `music/`, `noise/` and `rir/` subdirectories of WAVs.
#[derive(Debug, Clone, Default)]
pub struct NoiseCorpusIndex {
    pub speech: Vec<PathBuf>,
    pub music: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
    pub rir: Vec<PathBuf>,
}

impl NoiseCorpusIndex {
    pub fn from_dir(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut index = Self::default();
        for (name, slot) in [
            ("speech", &mut index.speech),
            ("music", &mut index.music),
            ("noise", &mut index.noise),
            ("rir", &mut index.rir),
        ] {
            let dir = root.join(name);
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            files.sort(); // directory order is not deterministic
            *slot = files;
        }
        Ok(index)
    }

    fn category(&self, kind: AugmentKind) -> &[PathBuf] {
        match kind {
            AugmentKind::Speech => &self.speech,
            AugmentKind::Music => &self.music,
            AugmentKind::Noise => &self.noise,
            AugmentKind::Rir => &self.rir,
            AugmentKind::None => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    None,
    Speech,
    Music,
    Noise,
    Rir,
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Speech => "speech",
            AugmentKind::Music => "music",
            AugmentKind::Noise => "noise",
            AugmentKind::Rir => "rir",
        }
    }
}

/// SNR and source-count ranges for one recipe.
#[derive(Debug, Clone, Copy)]
pub struct AugmentationPolicy {
    pub kind: AugmentKind,
    /// `[low, high]` in dB; `None` for reverberation.
    pub snr_range: Option<(f64, f64)>,
    pub source_count_range: (usize, usize),
}

impl AugmentationPolicy {
    pub fn speech() -> Self {
        Self { kind: AugmentKind::Speech, snr_range: Some((13.0, 20.0)), source_count_range: (3, 7) }
    }

    pub fn music() -> Self {
        Self { kind: AugmentKind::Music, snr_range: Some((5.0, 15.0)), source_count_range: (1, 1) }
    }

    pub fn noise() -> Self {
        Self { kind: AugmentKind::Noise, snr_range: Some((0.0, 15.0)), source_count_range: (1, 1) }
    }

    pub fn rir() -> Self {
        Self { kind: AugmentKind::Rir, snr_range: None, source_count_range: (1, 1) }
    }

    pub fn for_kind(kind: AugmentKind) -> Option<Self> {
        match kind {
            AugmentKind::Speech => Some(Self::speech()),
            AugmentKind::Music => Some(Self::music()),
            AugmentKind::Noise => Some(Self::noise()),
            AugmentKind::Rir => Some(Self::rir()),
            AugmentKind::None => None,
        }
    }

    pub fn draw_count(&self, rng: &mut impl Rng) -> usize {
        let (lo, hi) = self.source_count_range;
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }

    pub fn draw_snr(&self, rng: &mut impl Rng) -> Option<f64> {
        self.snr_range.map(|(lo, hi)| rng.random_range(lo..hi))
    }
}

/// Room impulse response taps.
#[derive(Debug, Clone)]
pub struct RirFilter {
    taps: Vec<f64>,
}

impl RirFilter {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Degenerate("RIR has no taps".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric("RIR contains non-finite taps".into()));
        }
        if taps.iter().all(|&t| t == 0.0) {
            return Err(Error::Degenerate("RIR is all zeros".into()));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Gain to apply to a noise of power `noise_power` so that mixing it into
/// a signal of power `signal_power` yields the requested SNR in dB.
pub fn snr_gain(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10.0_f64.powf(snr_db / 10.0))).sqrt()
}

fn fit_to_length(noise: &[f64], len: usize) -> Vec<f64> {
    let mut fitted = wrap_pad(noise, len);
    fitted.truncate(len);
    fitted
}

/// Mix `noise` into `signal` at the given SNR. The noise is wrap-padded
/// or truncated to the signal length first, and the mixing gain is
/// computed from the powers of the fitted segment.
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if signal.is_empty() || noise.is_empty() {
        return Err(Error::Argument("mix_at_snr requires non-empty inputs".into()));
    }
    let fitted = fit_to_length(&noise.samples, signal.len());
    let p_s = mean_square(&signal.samples);
    let p_n = mean_square(&fitted);
    if p_s == 0.0 {
        return Err(Error::Degenerate("signal has zero power".into()));
    }
    if p_n == 0.0 {
        return Err(Error::Degenerate("noise has zero power".into()));
    }
    let g = snr_gain(p_s, p_n, snr_db);
    let samples = signal
        .samples
        .iter()
        .zip(fitted.iter())
        .map(|(s, n)| s + g * n)
        .collect();
    Ok(Waveform { samples, sample_rate: signal.sample_rate })
}

/// Convolve with a RIR scaled to unit energy, truncated to the signal
/// length.
pub fn apply_rir(signal: &Waveform, rir: &RirFilter) -> Result<Waveform> {
    if signal.is_empty() {
        return Err(Error::Argument("apply_rir requires a non-empty signal".into()));
    }
    let energy: f64 = rir.taps.iter().map(|t| t * t).sum();
    let scale = 1.0 / energy.sqrt();
    let x = &signal.samples;
    let mut out = vec![0.0; x.len()];
    for (k, &tap) in rir.taps.iter().enumerate() {
        if k >= x.len() {
            break;
        }
        let h = tap * scale;
        if h == 0.0 {
            continue;
        }
        for t in k..x.len() {
            out[t] += h * x[t - k];
        }
    }
    Ok(Waveform { samples: out, sample_rate: signal.sample_rate })
}

fn pick_file<'a>(
    index: &'a NoiseCorpusIndex,
    kind: AugmentKind,
    rng: &mut impl Rng,
) -> Result<&'a PathBuf> {
    let files = index.category(kind);
    if files.is_empty() {
        return Err(Error::Config(format!(
            "augmentation corpus category \"{}\" is empty",
            kind.name()
        )));
    }
    Ok(&files[rng.random_range(0..files.len())])
}

/// Apply one uniformly drawn recipe. Output length and sample rate always
/// match the input.
pub fn augment(
    signal: &Waveform,
    index: &NoiseCorpusIndex,
    rng: &mut impl Rng,
) -> Result<Waveform> {
    let kind = match rng.random_range(0..5) {
        0 => AugmentKind::None,
        1 => AugmentKind::Speech,
        2 => AugmentKind::Music,
        3 => AugmentKind::Noise,
        _ => AugmentKind::Rir,
    };
    augment_with_kind(signal, index, kind, rng)
}

/// Apply a specific recipe; the uniform draw in [`augment`] delegates here.
pub fn augment_with_kind(
    signal: &Waveform,
    index: &NoiseCorpusIndex,
    kind: AugmentKind,
    rng: &mut impl Rng,
) -> Result<Waveform> {
    match kind {
        AugmentKind::None => Ok(signal.clone()),
        AugmentKind::Rir => {
            let path = pick_file(index, kind, rng)?;
            let rir_wav = read_wav(path)?;
            let rir = RirFilter::new(rir_wav.samples)?;
            apply_rir(signal, &rir)
        }
        AugmentKind::Speech | AugmentKind::Music | AugmentKind::Noise => {
            let policy = AugmentationPolicy::for_kind(kind).expect("additive recipe");
            let count = policy.draw_count(rng);
            let p_s = mean_square(&signal.samples);
            if p_s == 0.0 {
                return Err(Error::Degenerate("signal has zero power".into()));
            }
            let mut out = signal.samples.clone();
            for _ in 0..count {
                let path = pick_file(index, kind, rng)?;
                let noise = read_wav(path)?;
                let snr_db = policy.draw_snr(rng).expect("additive recipe has SNR");
                let fitted = fit_to_length(&noise.samples, signal.len());
                let p_n = mean_square(&fitted);
                if p_n == 0.0 {
                    return Err(Error::Degenerate(format!(
                        "noise file {} has zero power",
                        path.display()
                    )));
                }
                // each pick is scaled against the original signal power
                let g = snr_gain(p_s, p_n, snr_db);
                for (o, n) in out.iter_mut().zip(fitted.iter()) {
                    *o += g * n;
                }
            }
            Ok(Waveform { samples: out, sample_rate: signal.sample_rate })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn wav(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16000).unwrap()
    }

    fn rand_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn snr_gain_fixed_points() {
        assert!((snr_gain(1.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((snr_gain(1.0, 1.0, 20.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mix_achieves_requested_snr() {
        let signal = wav(rand_signal(4000, 1));
        let noise = wav(rand_signal(4000, 2));
        let mixed = mix_at_snr(&signal, &noise, 13.0).unwrap();
        let injected: Vec<f64> = mixed
            .samples
            .iter()
            .zip(signal.samples.iter())
            .map(|(m, s)| m - s)
            .collect();
        let measured = 10.0 * (mean_square(&signal.samples) / mean_square(&injected)).log10();
        assert!((measured - 13.0).abs() < 1e-9, "measured {measured}");
    }

    #[test]
    fn mix_zero_power_is_degenerate() {
        let signal = wav(rand_signal(100, 3));
        let silent = wav(vec![0.0; 100]);
        assert!(matches!(mix_at_snr(&signal, &silent, 10.0), Err(Error::Degenerate(_))));
        assert!(matches!(mix_at_snr(&silent, &signal, 10.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rir_unit_impulse_is_identity() {
        let signal = wav(rand_signal(500, 4));
        let rir = RirFilter::new(vec![1.0]).unwrap();
        let out = apply_rir(&signal, &rir).unwrap();
        assert_eq!(out.samples, signal.samples);
    }

    #[test]
    fn rir_single_delay() {
        let signal = wav(rand_signal(64, 5));
        let rir = RirFilter::new(vec![0.0, 1.0]).unwrap();
        let out = apply_rir(&signal, &rir).unwrap();
        assert_eq!(out.samples[0], 0.0);
        for t in 1..64 {
            assert_eq!(out.samples[t], signal.samples[t - 1]);
        }
    }

    #[test]
    fn rir_energy_normalization() {
        // [3, 0, 0] normalizes to [1, 0, 0]: identity
        let signal = wav(rand_signal(128, 6));
        let rir = RirFilter::new(vec![3.0, 0.0, 0.0]).unwrap();
        let out = apply_rir(&signal, &rir).unwrap();
        for (a, b) in out.samples.iter().zip(signal.samples.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rir_all_zero_rejected() {
        assert!(matches!(RirFilter::new(vec![0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(RirFilter::new(vec![]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rir_preserves_white_noise_energy() {
        // statistical: unit-energy RIR keeps white-noise energy within 5%
        let signal = wav(rand_signal(16000, 7));
        let taps = rand_signal(64, 8);
        let rir = RirFilter::new(taps).unwrap();
        let out = apply_rir(&signal, &rir).unwrap();
        let ratio = mean_square(&out.samples) / mean_square(&signal.samples);
        assert!((ratio - 1.0).abs() < 0.05, "energy ratio {ratio}");
    }

    fn fixture_corpus(dir: &Path) -> NoiseCorpusIndex {
        for sub in ["speech", "music", "noise", "rir"] {
            std::fs::create_dir_all(dir.join(sub)).unwrap();
        }
        for (i, seed) in [(0usize, 11u64), (1, 12), (2, 13)] {
            write_wav(
                dir.join(format!("speech/s{i}.wav")),
                &wav(rand_signal(2000, seed)),
            )
            .unwrap();
        }
        write_wav(dir.join("music/m0.wav"), &wav(rand_signal(3000, 14))).unwrap();
        write_wav(dir.join("noise/n0.wav"), &wav(rand_signal(1000, 15))).unwrap();
        let mut rir_taps = vec![0.0; 32];
        rir_taps[0] = 1.0;
        rir_taps[7] = 0.5;
        rir_taps[19] = -0.25;
        write_wav(dir.join("rir/r0.wav"), &wav(rir_taps)).unwrap();
        NoiseCorpusIndex::from_dir(dir).unwrap()
    }

    #[test]
    fn augment_none_is_identity() {
        let tmp = tempfile::tempdir().unwrap();
        let index = fixture_corpus(tmp.path());
        let signal = wav(rand_signal(4000, 20));
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let out = augment_with_kind(&signal, &index, AugmentKind::None, &mut rng).unwrap();
        assert_eq!(out.samples, signal.samples);
    }

    #[test]
    fn augment_missing_category_is_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut index = fixture_corpus(tmp.path());
        index.music.clear();
        let signal = wav(rand_signal(4000, 21));
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        match augment_with_kind(&signal, &index, AugmentKind::Music, &mut rng) {
            Err(Error::Config(msg)) => assert!(msg.contains("music"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn augment_preserves_length_for_all_kinds() {
        let tmp = tempfile::tempdir().unwrap();
        let index = fixture_corpus(tmp.path());
        let signal = wav(rand_signal(5000, 22));
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for kind in [
            AugmentKind::None,
            AugmentKind::Speech,
            AugmentKind::Music,
            AugmentKind::Noise,
            AugmentKind::Rir,
        ] {
            let out = augment_with_kind(&signal, &index, kind, &mut rng).unwrap();
            assert_eq!(out.len(), signal.len(), "kind {:?}", kind);
            assert_eq!(out.sample_rate, signal.sample_rate);
        }
    }

    #[test]
    fn speech_pick_count_covers_range() {
        // Monte-Carlo over seeded draws: counts stay in {3..7} and hit all values
        let policy = AugmentationPolicy::speech();
        let mut rng = ChaCha20Rng::seed_from_u64(123);
        let mut seen = [false; 8];
        for _ in 0..1000 {
            let c = policy.draw_count(&mut rng);
            assert!((3..=7).contains(&c));
            seen[c] = true;
        }
        for c in 3..=7 {
            assert!(seen[c], "count {c} never drawn");
        }
    }

    #[test]
    fn policy_ranges_match_recipes() {
        assert_eq!(AugmentationPolicy::speech().snr_range, Some((13.0, 20.0)));
        assert_eq!(AugmentationPolicy::speech().source_count_range, (3, 7));
        assert_eq!(AugmentationPolicy::music().snr_range, Some((5.0, 15.0)));
        assert_eq!(AugmentationPolicy::music().source_count_range, (1, 1));
        assert_eq!(AugmentationPolicy::noise().snr_range, Some((0.0, 15.0)));
        assert!(AugmentationPolicy::rir().snr_range.is_none());
    }

    proptest::proptest! {
        #[test]
        fn mix_snr_property(snr in -5.0f64..25.0, seed in 0u64..100) {
            let signal = wav(rand_signal(1500, seed.wrapping_mul(2).wrapping_add(1)));
            let noise = wav(rand_signal(900, seed.wrapping_mul(2).wrapping_add(2)));
            let mixed = mix_at_snr(&signal, &noise, snr).unwrap();
            let injected: Vec<f64> = mixed.samples.iter().zip(signal.samples.iter()).map(|(m, s)| m - s).collect();
            let measured = 10.0 * (mean_square(&signal.samples) / mean_square(&injected)).log10();
            proptest::prop_assert!((measured - snr).abs() < 1e-9);
        }
    }
}
