//! Audio I/O, trial lists and fixed-length crop sampling.
//!
//! The pipeline runs entirely on 16 kHz mono PCM. Training consumes random
//! 2-second crops (32000 samples); evaluation takes ten 4-second crops
//! (64000 samples) at regular intervals. Signals shorter than the crop are
//! wrap-padded (tiled), never zero-padded.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Pipeline-wide sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16000;
/// Training crop length: 2 seconds at 16 kHz.
pub const TRAIN_CROP_LEN: usize = 32000;
/// Evaluation crop length: 4 seconds at 16 kHz.
pub const EVAL_CROP_LEN: usize = 64000;
/// Number of evaluation crops per utterance.
pub const EVAL_CROP_COUNT: usize = 10;

/// Mono audio signal with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("waveform must be non-empty".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One verification trial: an enrollment/test utterance pair with its
/// target (same speaker) label. Utterance identifiers are paths relative
/// to the corpus root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub is_target: bool,
    pub enroll_utt: String,
    pub test_utt: String,
}

/// Placement of the ten evaluation crops inside a (possibly wrap-padded)
/// signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropPlan {
    pub crop_len: usize,
    pub count: usize,
    pub offsets: Vec<usize>,
}

fn rd_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(Error::Io)
}

fn rd_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    rd_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn rd_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    rd_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

struct FmtChunk {
    audio_format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Read a RIFF/WAVE file. Only PCM 16-bit mono is accepted; samples are
/// scaled to `[-1, 1]` by dividing by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();

    let mut tag = [0u8; 4];
    rd_exact(&mut r, &mut tag)?;
    if &tag != b"RIFF" {
        return Err(Error::Format {
            field: "riff".into(),
            msg: "missing RIFF header".into(),
        });
    }
    let _riff_size = rd_u32(&mut r)?;
    rd_exact(&mut r, &mut tag)?;
    if &tag != b"WAVE" {
        return Err(Error::Format {
            field: "wave".into(),
            msg: "missing WAVE marker".into(),
        });
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<Vec<u8>> = None;
    while !r.is_empty() {
        rd_exact(&mut r, &mut tag)?;
        let size = rd_u32(&mut r)? as usize;
        match &tag {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format {
                        field: "fmt".into(),
                        msg: format!("chunk too small ({size} bytes)"),
                    });
                }
                let mut body = vec![0u8; size];
                rd_exact(&mut r, &mut body)?;
                let mut f = body.as_slice();
                let audio_format = rd_u16(&mut f)?;
                let channels = rd_u16(&mut f)?;
                let sample_rate = rd_u32(&mut f)?;
                let _byte_rate = rd_u32(&mut f)?;
                let _block_align = rd_u16(&mut f)?;
                let bits_per_sample = rd_u16(&mut f)?;
                fmt = Some(FmtChunk {
                    audio_format,
                    channels,
                    sample_rate,
                    bits_per_sample,
                });
            }
            b"data" => {
                let mut body = vec![0u8; size];
                rd_exact(&mut r, &mut body)?;
                data = Some(body);
            }
            _ => {
                // skip unknown chunk, honoring the RIFF pad byte
                let skip = size + (size & 1);
                if r.len() < skip {
                    return Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::UnexpectedEof,
                        "truncated chunk",
                    )));
                }
                r = &r[skip..];
            }
        }
        if size & 1 == 1 && (&tag == b"fmt " || &tag == b"data") && !r.is_empty() {
            r = &r[1..];
        }
    }

    let fmt = fmt.ok_or_else(|| Error::Format {
        field: "fmt".into(),
        msg: "missing fmt chunk".into(),
    })?;
    if fmt.audio_format != 1 {
        return Err(Error::Format {
            field: "audio_format".into(),
            msg: format!("expected PCM (1), got {}", fmt.audio_format),
        });
    }
    if fmt.channels != 1 {
        return Err(Error::Format {
            field: "channels".into(),
            msg: format!("expected mono (1), got {}", fmt.channels),
        });
    }
    if fmt.bits_per_sample != 16 {
        return Err(Error::Format {
            field: "bits_per_sample".into(),
            msg: format!("expected 16, got {}", fmt.bits_per_sample),
        });
    }
    let data = data.ok_or_else(|| Error::Format {
        field: "data".into(),
        msg: "missing data chunk".into(),
    })?;
    if data.is_empty() {
        return Err(Error::Format {
            field: "data".into(),
            msg: "empty data chunk".into(),
        });
    }

    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, fmt.sample_rate)
}

/// Write a waveform as PCM 16-bit mono. Samples are clamped to `[-1, 1]`
/// and quantized by rounding.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let n = w.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Tile `samples` until it reaches at least `target` samples, then truncate.
pub fn wrap_pad(samples: &[f64], target: usize) -> Vec<f64> {
    if samples.len() >= target {
        return samples.to_vec();
    }
    samples.iter().copied().cycle().take(target).collect()
}

/// Sample one training crop of [`TRAIN_CROP_LEN`] samples at a uniformly
/// random offset. Shorter signals are wrap-padded to the crop length first
/// (making the offset 0).
pub fn sample_train_crop(w: &Waveform, rng: &mut impl Rng) -> Result<Waveform> {
    if w.samples.is_empty() {
        return Err(Error::Argument("cannot crop an empty waveform".into()));
    }
    let padded = wrap_pad(&w.samples, TRAIN_CROP_LEN);
    let max_offset = padded.len() - TRAIN_CROP_LEN;
    let offset = if max_offset == 0 {
        0
    } else {
        rng.random_range(0..=max_offset)
    };
    Ok(Waveform {
        samples: padded[offset..offset + TRAIN_CROP_LEN].to_vec(),
        sample_rate: w.sample_rate,
    })
}

/// Plan ten 4-second crops at regular intervals. Signals shorter than one
/// crop are treated as wrap-padded to [`EVAL_CROP_LEN`]; offsets follow
/// `round(i * (L - crop) / 9)` over the padded length `L`.
pub fn plan_eval_crops(signal_len: usize) -> CropPlan {
    let padded_len = signal_len.max(EVAL_CROP_LEN);
    let span = (padded_len - EVAL_CROP_LEN) as f64;
    let offsets = (0..EVAL_CROP_COUNT)
        .map(|i| (i as f64 * span / (EVAL_CROP_COUNT - 1) as f64).round() as usize)
        .collect();
    CropPlan {
        crop_len: EVAL_CROP_LEN,
        count: EVAL_CROP_COUNT,
        offsets,
    }
}

/// Materialize the crops of a plan, wrap-padding the signal as needed.
pub fn extract_eval_crops(w: &Waveform, plan: &CropPlan) -> Vec<Waveform> {
    let padded = wrap_pad(&w.samples, EVAL_CROP_LEN);
    plan.offsets
        .iter()
        .map(|&off| Waveform {
            samples: padded[off..off + plan.crop_len].to_vec(),
            sample_rate: w.sample_rate,
        })
        .collect()
}

/// Parse a 3-column trial list: `<label> <enroll_path> <test_path>` per
/// line with label 0 (nontarget) or 1 (target). Blank lines are skipped.
pub fn parse_trial_list(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path)?;
    parse_trials(&text)
}

pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    let mut trials = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let is_target = match fields[0] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        trials.push(Trial {
            is_target,
            enroll_utt: fields[1].to_string(),
            test_utt: fields[2].to_string(),
        });
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn wav_header_echo() {
        let dir = tmpdir();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.25; 32000], 16000).unwrap();
        write_wav(&p, &w).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.len(), 32000);
        assert_eq!(back.sample_rate, 16000);
    }

    #[test]
    fn wav_all_zero_pcm() {
        let dir = tmpdir();
        let p = dir.path().join("z.wav");
        write_wav(&p, &Waveform::new(vec![0.0; 100], 16000).unwrap()).unwrap();
        let back = read_wav(&p).unwrap();
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn wav_scale_boundary() {
        let dir = tmpdir();
        let p = dir.path().join("b.wav");
        write_wav(&p, &Waveform::new(vec![-1.0, 1.0], 16000).unwrap()).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples[0], -1.0); // PCM -32768 maps exactly to -1
        assert_eq!(back.samples[1], 32767.0 / 32768.0);
    }

    #[test]
    fn wav_rejects_stereo() {
        let dir = tmpdir();
        let p = dir.path().join("s.wav");
        let w = Waveform::new(vec![0.0; 8], 16000).unwrap();
        write_wav(&p, &w).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[22] = 2; // channel count field
        std::fs::write(&p, &bytes).unwrap();
        match read_wav(&p) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "channels"),
            other => panic!("expected channel format error, got {other:?}"),
        }
    }

    #[test]
    fn wav_truncated_is_io_error() {
        let dir = tmpdir();
        let p = dir.path().join("t.wav");
        write_wav(&p, &Waveform::new(vec![0.1; 64], 16000).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..50]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Io(_))));
    }

    #[test]
    fn train_crop_length_contract() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let w = Waveform::new((0..64000).map(|i| (i as f64).sin() * 0.1).collect(), 16000).unwrap();
        let crop = sample_train_crop(&w, &mut rng).unwrap();
        assert_eq!(crop.len(), TRAIN_CROP_LEN);
        // locate the crop inside the source: offset must be within range
        let start = w
            .samples
            .windows(8)
            .position(|win| win == &crop.samples[..8])
            .unwrap();
        assert!(start <= 32000);
        assert_eq!(&w.samples[start..start + TRAIN_CROP_LEN], &crop.samples[..]);
    }

    #[test]
    fn train_crop_exact_fit() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let w = Waveform::new((0..32000).map(|i| (i as f64 * 0.001).cos()).collect(), 16000).unwrap();
        let crop = sample_train_crop(&w, &mut rng).unwrap();
        assert_eq!(crop.samples, w.samples);
    }

    #[test]
    fn train_crop_wrap_pad_oracle() {
        // scripted oracle: tiling a 10000-sample signal gives period 10000
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let src: Vec<f64> = (0..10000).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let w = Waveform::new(src.clone(), 16000).unwrap();
        let crop = sample_train_crop(&w, &mut rng).unwrap();
        assert_eq!(crop.len(), TRAIN_CROP_LEN);
        let oracle: Vec<f64> = src.iter().copied().cycle().take(TRAIN_CROP_LEN).collect();
        assert_eq!(crop.samples, oracle);
        for t in 0..TRAIN_CROP_LEN - 10000 {
            assert_eq!(crop.samples[t], crop.samples[t + 10000]);
        }
    }

    #[test]
    fn crop_empty_is_argument_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let w = Waveform { samples: vec![], sample_rate: 16000 };
        assert!(matches!(sample_train_crop(&w, &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn eval_crops_degenerate_spacing() {
        let plan = plan_eval_crops(EVAL_CROP_LEN);
        assert_eq!(plan.offsets, vec![0; 10]);
        assert_eq!(plan.count, 10);
        assert_eq!(plan.crop_len, EVAL_CROP_LEN);
    }

    #[test]
    fn eval_crops_spacing_formula() {
        // direct evaluation of round(i * (L - C) / 9)
        let plan = plan_eval_crops(64009);
        assert_eq!(plan.offsets, (0..10).collect::<Vec<_>>());

        let plan = plan_eval_crops(208000);
        let expect: Vec<usize> = (0..10).map(|i| i * 16000).collect();
        assert_eq!(plan.offsets, expect);
    }

    #[test]
    fn eval_crops_cover_padded_signal() {
        for len in [1usize, 100, 63999, 64000, 64001, 100000, 208000] {
            let plan = plan_eval_crops(len);
            let padded = len.max(EVAL_CROP_LEN);
            for pair in plan.offsets.windows(2) {
                assert!(pair[0] <= pair[1]);
            }
            let last = *plan.offsets.last().unwrap();
            assert!((last + EVAL_CROP_LEN) as i64 - padded as i64 <= 1);
            assert!(last + EVAL_CROP_LEN <= padded + 1);
            let w = Waveform::new(vec![0.5; len], 16000).unwrap();
            for crop in extract_eval_crops(&w, &plan) {
                assert_eq!(crop.len(), EVAL_CROP_LEN);
            }
        }
    }

    #[test]
    fn trial_list_parses() {
        let trials = parse_trials("1 a/x.wav b/y.wav\n0 a/x.wav c/z.wav\n").unwrap();
        assert_eq!(trials.len(), 2);
        assert!(trials[0].is_target);
        assert!(!trials[1].is_target);
        assert_eq!(trials[0].enroll_utt, "a/x.wav");
        assert_eq!(trials[1].test_utt, "c/z.wav");
    }

    #[test]
    fn trial_list_empty() {
        assert!(parse_trials("").unwrap().is_empty());
        assert!(parse_trials("\n\n").unwrap().is_empty());
    }

    #[test]
    fn trial_list_bad_label() {
        match parse_trials("2 a b") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn trial_list_bad_field_count() {
        match parse_trials("1 a b\n1 only_two") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn crop_len_holds_for_all_inputs(len in 1usize..80000, seed in 0u64..1000) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let w = Waveform::new(vec![0.1; len], 16000).unwrap();
            let crop = sample_train_crop(&w, &mut rng).unwrap();
            proptest::prop_assert_eq!(crop.len(), TRAIN_CROP_LEN);
        }

        #[test]
        fn wav_roundtrip_quantization(samples in proptest::collection::vec(-1.0f64..=1.0, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.wav");
            let w = Waveform::new(samples.clone(), 16000).unwrap();
            write_wav(&p, &w).unwrap();
            let back = read_wav(&p).unwrap();
            for (a, b) in samples.iter().zip(back.samples.iter()) {
                proptest::prop_assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-12);
            }
        }
    }
}
