//! Waveform to 64-band log-mel features.
//!
//! Fixed frontend: pre-emphasis (reflect-padded first-order difference),
//! 25 ms / 10 ms Hamming-window STFT with a 512-point FFT, and a 64-band
//! HTK-mel triangular filterbank over 125-7500 Hz. Log magnitudes are
//! floored at 1e-6 so silence stays finite. No CMVN, no VAD.

use std::path::Path;
use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const N_FFT: usize = 512;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const WIN_LEN: usize = 400; // 25 ms at 16 kHz
pub const HOP_LEN: usize = 160; // 10 ms at 16 kHz
pub const N_MELS: usize = 64;
pub const FMIN_HZ: f64 = 125.0;
pub const FMAX_HZ: f64 = 7500.0;
pub const LOG_FLOOR: f64 = 1e-6;
/// Conventional pre-emphasis coefficient used throughout the pipeline.
pub const PRE_EMPHASIS: f64 = 0.97;

/// First-order pre-emphasis filter, `y[t] = x[t] - coefficient * x[t-1]`.
#[derive(Debug, Clone, Copy)]
pub struct PreEmphasisFilter {
    coefficient: f64,
}

impl PreEmphasisFilter {
    pub fn new(coefficient: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&coefficient) {
            return Err(Error::Argument(format!(
                "pre-emphasis coefficient must be in [0, 1), got {coefficient}"
            )));
        }
        Ok(Self { coefficient })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

impl Default for PreEmphasisFilter {
    fn default() -> Self {
        Self { coefficient: PRE_EMPHASIS }
    }
}

/// STFT magnitudes, `frames x 257` row-major.
#[derive(Debug, Clone)]
pub struct Magnitudes {
    pub frames: usize,
    pub data: Vec<f64>,
}

impl Magnitudes {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * N_BINS..(t + 1) * N_BINS]
    }
}

/// Log-mel feature map, `frames x 64` row-major. Frames are 25 ms wide
/// with a 10 ms shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelFeature {
    pub frames: usize,
    pub data: Vec<f64>,
}

impl LogMelFeature {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }
}

/// Apply pre-emphasis with reflect padding: the sample before the signal
/// is taken to be `x[1]`, so output length equals input length.
pub fn pre_emphasize(w: &Waveform, filter: PreEmphasisFilter) -> Result<Waveform> {
    let x = &w.samples;
    if x.len() < 2 {
        return Err(Error::Argument(format!(
            "pre-emphasis needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let a = filter.coefficient;
    let mut out = Vec::with_capacity(x.len());
    out.push(x[0] - a * x[1]); // reflect pad: x[-1] := x[1]
    for t in 1..x.len() {
        out.push(x[t] - a * x[t - 1]);
    }
    Ok(Waveform { samples: out, sample_rate: w.sample_rate })
}

fn hamming_window(len: usize) -> Vec<f64> {
    // periodic Hamming
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Short-time magnitude spectrogram: 400-sample Hamming-windowed frames
/// with 160-sample hop, zero-padded to a 512-point FFT, one-sided
/// magnitude output. Frames lie fully inside the signal, so the frame
/// count is `1 + floor((len - 400) / 160)`.
pub fn stft_magnitude(w: &Waveform) -> Result<Magnitudes> {
    let x = &w.samples;
    if x.len() < WIN_LEN {
        return Err(Error::Argument(format!(
            "stft needs at least {WIN_LEN} samples, got {}",
            x.len()
        )));
    }
    let frames = 1 + (x.len() - WIN_LEN) / HOP_LEN;
    let window = hamming_window(WIN_LEN);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let mut data = vec![0.0; frames * N_BINS];
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    for t in 0..frames {
        let start = t * HOP_LEN;
        for n in 0..WIN_LEN {
            buf[n] = Complex64::new(x[start + n] * window[n], 0.0);
        }
        for slot in buf.iter_mut().skip(WIN_LEN) {
            *slot = Complex64::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        for (k, slot) in data[t * N_BINS..(t + 1) * N_BINS].iter_mut().enumerate() {
            *slot = buf[k].norm();
        }
    }
    Ok(Magnitudes { frames, data })
}

/// Triangular mel filterbank, `64 x 257` row-major.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub edges_hz: Vec<f64>,
    pub fmin: f64,
    pub fmax: f64,
    pub n_fft: usize,
}

impl MelFilterbank {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * N_BINS..(k + 1) * N_BINS]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0_f64.powf(m / 2595.0) - 1.0)
}

/// Build the 64-band filterbank: 66 mel-spaced edges between 125 and
/// 7500 Hz; band `k` is the triangle over edges `k`, `k+1`, `k+2`
/// evaluated at the FFT bin center frequencies.
pub fn build_mel_filterbank() -> MelFilterbank {
    let m_lo = hz_to_mel(FMIN_HZ);
    let m_hi = hz_to_mel(FMAX_HZ);
    let n_edges = N_MELS + 2;
    let edges_hz: Vec<f64> = (0..n_edges)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_edges - 1) as f64))
        .collect();
    let bin_hz = crate::audio::SAMPLE_RATE as f64 / N_FFT as f64;
    let mut weights = vec![0.0; N_MELS * N_BINS];
    for k in 0..N_MELS {
        let (lo, mid, hi) = (edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]);
        for bin in 0..N_BINS {
            let f = bin as f64 * bin_hz;
            let w = if f >= lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f <= hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            weights[k * N_BINS + bin] = w.max(0.0);
        }
    }
    MelFilterbank {
        weights,
        edges_hz,
        fmin: FMIN_HZ,
        fmax: FMAX_HZ,
        n_fft: N_FFT,
    }
}

fn shared_filterbank() -> &'static MelFilterbank {
    static BANK: OnceLock<MelFilterbank> = OnceLock::new();
    BANK.get_or_init(build_mel_filterbank)
}

/// Full frontend: pre-emphasis, STFT magnitude, mel projection, floored
/// natural log. Requires a 16 kHz signal of at least 400 samples.
pub fn log_mel_features(w: &Waveform) -> Result<LogMelFeature> {
    if w.sample_rate != crate::audio::SAMPLE_RATE {
        return Err(Error::Argument(format!(
            "expected {} Hz input, got {}",
            crate::audio::SAMPLE_RATE,
            w.sample_rate
        )));
    }
    let emphasized = pre_emphasize(w, PreEmphasisFilter::default())?;
    let mags = stft_magnitude(&emphasized)?;
    let bank = shared_filterbank();
    let mut data = vec![0.0; mags.frames * N_MELS];
    for t in 0..mags.frames {
        let frame = mags.row(t);
        let out = &mut data[t * N_MELS..(t + 1) * N_MELS];
        for (k, slot) in out.iter_mut().enumerate() {
            let row = bank.row(k);
            let mut acc = 0.0;
            for (w_kb, m_b) in row.iter().zip(frame.iter()) {
                acc += w_kb * m_b;
            }
            *slot = acc.max(LOG_FLOOR).ln();
        }
    }
    Ok(LogMelFeature { frames: mags.frames, data })
}

/// Write a feature map to the binary cache format: two 32-bit
/// little-endian ints (frames, 64) followed by row-major 32-bit floats.
pub fn write_feature_cache(path: impl AsRef<Path>, feat: &LogMelFeature) -> Result<()> {
    let mut out = Vec::with_capacity(8 + feat.data.len() * 4);
    out.extend_from_slice(&(feat.frames as u32).to_le_bytes());
    out.extend_from_slice(&(N_MELS as u32).to_le_bytes());
    for &v in &feat.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a feature map written by [`write_feature_cache`].
pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<LogMelFeature> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Format {
            field: "header".into(),
            msg: "feature cache shorter than 8-byte header".into(),
        });
    }
    let frames = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let mels = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if mels != N_MELS {
        return Err(Error::Format {
            field: "mel_bands".into(),
            msg: format!("expected {N_MELS}, got {mels}"),
        });
    }
    let need = frames * N_MELS * 4;
    if bytes.len() - 8 != need {
        return Err(Error::Format {
            field: "payload".into(),
            msg: format!("expected {need} bytes, got {}", bytes.len() - 8),
        });
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(LogMelFeature { frames, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn wav(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn sine(freq: f64, len: usize, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    #[test]
    fn pre_emphasis_zero_coeff_is_identity() {
        let w = wav(vec![0.5, -0.25, 0.125]);
        let out = pre_emphasize(&w, PreEmphasisFilter::new(0.0).unwrap()).unwrap();
        assert_eq!(out.samples, w.samples);
    }

    #[test]
    fn pre_emphasis_reflect_pad_hand_case() {
        // hand evaluation: x[-1] = x[1] = 1, so every output is 1 - 0.97
        let w = wav(vec![1.0, 1.0, 1.0]);
        let out = pre_emphasize(&w, PreEmphasisFilter::new(0.97).unwrap()).unwrap();
        for v in out.samples {
            assert!((v - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn pre_emphasis_constant_signal() {
        let c = -0.42;
        let a = 0.9;
        let w = wav(vec![c; 100]);
        let out = pre_emphasize(&w, PreEmphasisFilter::new(a).unwrap()).unwrap();
        for v in out.samples {
            assert!((v - (1.0 - a) * c).abs() < 1e-12);
        }
    }

    #[test]
    fn pre_emphasis_single_sample_rejected() {
        let w = wav(vec![1.0]);
        assert!(matches!(
            pre_emphasize(&w, PreEmphasisFilter::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn pre_emphasis_coefficient_range() {
        assert!(PreEmphasisFilter::new(1.0).is_err());
        assert!(PreEmphasisFilter::new(-0.1).is_err());
        assert!(PreEmphasisFilter::new(0.0).is_ok());
    }

    #[test]
    fn stft_frame_count() {
        let mags = stft_magnitude(&wav(vec![0.1; 32000])).unwrap();
        assert_eq!(mags.frames, 198);
        assert_eq!(mags.data.len(), 198 * 257);
    }

    #[test]
    fn stft_zero_signal() {
        let mags = stft_magnitude(&wav(vec![0.0; 1000])).unwrap();
        assert!(mags.data.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn stft_short_input_rejected() {
        assert!(matches!(
            stft_magnitude(&wav(vec![0.1; 399])),
            Err(Error::Argument(_))
        ));
    }

    /// Direct DFT of one windowed frame; independent of the FFT path.
    fn dft_oracle_frame(x: &[f64], start: usize) -> Vec<f64> {
        let window = hamming_window(WIN_LEN);
        let mut mags = Vec::with_capacity(N_BINS);
        for k in 0..N_BINS {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..WIN_LEN {
                let v = x[start + n] * window[n];
                let phase = -2.0 * std::f64::consts::PI * (k * n) as f64 / N_FFT as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            mags.push((re * re + im * im).sqrt());
        }
        mags
    }

    #[test]
    fn stft_sine_peaks_at_expected_bin() {
        // 1 kHz -> bin round(1000 * 512 / 16000) = 32
        let x = sine(1000.0, 4000, 0.8);
        let w = wav(x.clone());
        let mags = stft_magnitude(&w).unwrap();
        for t in 0..mags.frames {
            let row = mags.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 32, "frame {t}");
        }
        // and the FFT path agrees with a direct DFT
        for t in [0usize, 5, 20] {
            let oracle = dft_oracle_frame(&x, t * HOP_LEN);
            let row = mags.row(t);
            for (a, b) in row.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-8, "frame {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn filterbank_shape_and_band_limits() {
        let bank = build_mel_filterbank();
        assert_eq!(bank.weights.len(), 64 * 257);
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        for bin in 0..N_BINS {
            let f = bin as f64 * bin_hz;
            if f < FMIN_HZ || f > FMAX_HZ {
                let col_sum: f64 = (0..N_MELS).map(|k| bank.row(k)[bin]).sum();
                assert_eq!(col_sum, 0.0, "bin {bin} at {f} Hz");
            }
        }
        assert!(bank.weights.iter().all(|&w| w >= 0.0));
        for k in 0..N_MELS {
            assert!(bank.row(k).iter().any(|&w| w > 0.0), "row {k} empty");
        }
    }

    #[test]
    fn filterbank_edges_increasing_with_endpoints() {
        let bank = build_mel_filterbank();
        assert_eq!(bank.edges_hz.len(), 66);
        for pair in bank.edges_hz.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert!((bank.edges_hz[0] - 125.0).abs() < 1e-9);
        assert!((bank.edges_hz[65] - 7500.0).abs() < 1e-9);
    }

    #[test]
    fn filterbank_adjacent_rows_overlap() {
        let bank = build_mel_filterbank();
        for k in 0..N_MELS - 1 {
            let overlap = (0..N_BINS).any(|b| bank.row(k)[b] > 0.0 && bank.row(k + 1)[b] > 0.0);
            assert!(overlap, "rows {k} and {} do not overlap", k + 1);
        }
    }

    #[test]
    fn log_mel_shape() {
        let feat = log_mel_features(&wav(sine(440.0, 32000, 0.5))).unwrap();
        assert_eq!(feat.frames, 198);
        assert_eq!(feat.data.len(), 198 * 64);
    }

    #[test]
    fn log_mel_zero_signal_hits_floor() {
        let feat = log_mel_features(&wav(vec![0.0; 1000])).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(feat.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn log_mel_amplitude_doubling_shifts_by_ln2() {
        let x = sine(700.0, 3200, 0.3);
        let w1 = wav(x.clone());
        let w2 = wav(x.iter().map(|v| v * 2.0).collect());
        let f1 = log_mel_features(&w1).unwrap();
        let f2 = log_mel_features(&w2).unwrap();
        let floor = LOG_FLOOR.ln();
        for (a, b) in f1.data.iter().zip(f2.data.iter()) {
            if *a > floor && *b > floor {
                assert!((b - a - std::f64::consts::LN_2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn log_mel_rejects_wrong_rate() {
        let w = Waveform::new(vec![0.1; 1000], 8000).unwrap();
        assert!(matches!(log_mel_features(&w), Err(Error::Argument(_))));
    }

    #[test]
    fn feature_extraction_deterministic() {
        let w = wav(sine(333.0, 8000, 0.4));
        let a = log_mel_features(&w).unwrap();
        let b = log_mel_features(&w).unwrap();
        assert_eq!(a.data, b.data); // bit-identical
    }

    #[test]
    fn feature_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.fea");
        let feat = log_mel_features(&wav(sine(500.0, 2000, 0.6))).unwrap();
        write_feature_cache(&p, &feat).unwrap();
        let back = read_feature_cache(&p).unwrap();
        assert_eq!(back.frames, feat.frames);
        for (a, b) in feat.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() <= (a.abs() + 1.0) * 1e-6); // f32 quantization
        }
    }

    proptest::proptest! {
        #[test]
        fn stft_is_homogeneous(scale in 0.0f64..4.0, seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..800).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w1 = wav(x.clone());
            let w2 = wav(x.iter().map(|v| v * scale).collect());
            let m1 = stft_magnitude(&w1).unwrap();
            let m2 = stft_magnitude(&w2).unwrap();
            for (a, b) in m1.data.iter().zip(m2.data.iter()) {
                let want = a * scale;
                proptest::prop_assert!((b - want).abs() <= 1e-10 * want.abs().max(1e-30) + 1e-12);
            }
        }
    }
}
