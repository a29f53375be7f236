//! Scoring and evaluation: 10x10 crop-pair cosine scores, min-max score
//! normalization, weighted fusion, and the EER / minimum-DCF metrics.
//!
//! Metric conventions: for a threshold `t`, `miss(t)` is the fraction of
//! targets scoring strictly below `t` and `fa(t)` the fraction of
//! nontargets scoring at or above `t`. The sweep visits every distinct
//! score plus the reject-all endpoint; the EER interpolates linearly
//! between the two sweep points where the error rates cross.

use std::fmt;
use std::path::Path;

use crate::audio::{Trial, EVAL_CROP_COUNT};
use crate::error::{Error, Result};

/// One scored trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

/// Scores aligned with their target/nontarget labels.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub records: Vec<ScoreRecord>,
    pub labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(records: Vec<ScoreRecord>, labels: Vec<bool>) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} records vs {} labels",
                records.len(),
                labels.len()
            )));
        }
        if let Some(i) = records.iter().position(|r| !r.score.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score at index {i}")));
        }
        Ok(Self { records, labels })
    }

    /// Pair a trial list with a score file, requiring identical order.
    pub fn from_trials(trials: &[Trial], records: Vec<ScoreRecord>) -> Result<Self> {
        if trials.len() != records.len() {
            return Err(Error::Alignment {
                index: trials.len().min(records.len()),
                msg: format!("{} trials vs {} scores", trials.len(), records.len()),
            });
        }
        for (i, (t, r)) in trials.iter().zip(records.iter()).enumerate() {
            if t.enroll_utt != r.enroll || t.test_utt != r.test {
                return Err(Error::Alignment {
                    index: i,
                    msg: format!(
                        "trial ({}, {}) vs score ({}, {})",
                        t.enroll_utt, t.test_utt, r.enroll, r.test
                    ),
                });
            }
        }
        let labels = trials.iter().map(|t| t.is_target).collect();
        Self::new(records, labels)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }
}

/// Detection-cost parameters; the defaults are the challenge settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { c_miss: 1.0, c_fa: 1.0, p_target: 0.05 }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if self.c_miss <= 0.0 || self.c_fa <= 0.0 {
            return Err(Error::Argument("DCF costs must be positive".into()));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Argument(format!(
                "p_target must be in (0, 1), got {}",
                self.p_target
            )));
        }
        Ok(())
    }
}

/// Mean cosine similarity over the 10 x 10 crop-embedding pairs.
pub fn pair_score(enroll: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
    if enroll.len() != EVAL_CROP_COUNT || test.len() != EVAL_CROP_COUNT {
        return Err(Error::Argument(format!(
            "pair_score expects {EVAL_CROP_COUNT} embeddings per side, got {} and {}",
            enroll.len(),
            test.len()
        )));
    }
    let normalize = |crops: &[Vec<f64>], side: &str| -> Result<Vec<Vec<f64>>> {
        crops
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::Numeric(format!("zero-norm embedding at {side} crop {i}")));
                }
                Ok(e.iter().map(|v| v / norm).collect())
            })
            .collect()
    };
    let en = normalize(enroll, "enroll")?;
    let tn = normalize(test, "test")?;
    let mut acc = 0.0;
    for a in &en {
        for b in &tn {
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            acc += dot.clamp(-1.0, 1.0);
        }
    }
    Ok(acc / (EVAL_CROP_COUNT * EVAL_CROP_COUNT) as f64)
}

/// Min-max scale all scores of one system onto `[0, 1]`.
pub fn minmax_normalize(set: &ScoreSet) -> Result<ScoreSet> {
    let scores = set.scores();
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if set.is_empty() || !(max > min) {
        return Err(Error::Degenerate(
            "min-max normalization needs at least two distinct scores".into(),
        ));
    }
    let span = max - min;
    let records = set
        .records
        .iter()
        .map(|r| ScoreRecord {
            enroll: r.enroll.clone(),
            test: r.test.clone(),
            score: (r.score - min) / span,
        })
        .collect();
    ScoreSet::new(records, set.labels.clone())
}

/// Per-trial weighted average of two aligned score sets.
pub fn fuse(a: &ScoreSet, b: &ScoreSet, w_a: f64, w_b: f64) -> Result<ScoreSet> {
    if w_a < 0.0 || w_b < 0.0 || (w_a + w_b - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "fusion weights must be non-negative and sum to 1, got {w_a} and {w_b}"
        )));
    }
    if a.len() != b.len() {
        return Err(Error::Alignment {
            index: a.len().min(b.len()),
            msg: format!("{} vs {} trials", a.len(), b.len()),
        });
    }
    for (i, (ra, rb)) in a.records.iter().zip(b.records.iter()).enumerate() {
        if ra.enroll != rb.enroll || ra.test != rb.test {
            return Err(Error::Alignment {
                index: i,
                msg: format!(
                    "trial ({}, {}) vs ({}, {})",
                    ra.enroll, ra.test, rb.enroll, rb.test
                ),
            });
        }
        if a.labels[i] != b.labels[i] {
            return Err(Error::Alignment { index: i, msg: "label mismatch".into() });
        }
    }
    let records = a
        .records
        .iter()
        .zip(b.records.iter())
        .map(|(ra, rb)| ScoreRecord {
            enroll: ra.enroll.clone(),
            test: ra.test.clone(),
            score: w_a * ra.score + w_b * rb.score,
        })
        .collect();
    ScoreSet::new(records, a.labels.clone())
}

#[derive(Debug, Clone, Copy)]
struct OperatingPoint {
    threshold: f64,
    miss: f64,
    fa: f64,
}

/// Sweep every distinct score ascending, plus the reject-all endpoint.
/// The first point is the accept-all operating point.
fn operating_points(set: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    let n_target = set.labels.iter().filter(|&&l| l).count();
    let n_nontarget = set.labels.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::Argument(
            "EER/DCF need at least one target and one nontarget trial".into(),
        ));
    }
    let mut pairs: Vec<(f64, bool)> = set
        .records
        .iter()
        .map(|r| r.score)
        .zip(set.labels.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));

    let mut points = Vec::with_capacity(pairs.len() + 1);
    let mut targets_below = 0usize;
    let mut nontargets_below = 0usize;
    let mut i = 0;
    while i < pairs.len() {
        let threshold = pairs[i].0;
        points.push(OperatingPoint {
            threshold,
            miss: targets_below as f64 / n_target as f64,
            fa: (n_nontarget - nontargets_below) as f64 / n_nontarget as f64,
        });
        while i < pairs.len() && pairs[i].0 == threshold {
            if pairs[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: pairs.last().expect("non-empty").0 + 1.0,
        miss: 1.0,
        fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate and its threshold. When no sweep point has
/// `miss == fa` exactly, both step functions are interpolated linearly
/// between the two bracketing points.
pub fn compute_eer(set: &ScoreSet) -> Result<(f64, f64)> {
    let points = operating_points(set)?;
    // miss - fa is non-decreasing along the sweep, from -1 to +1
    let cross = points
        .iter()
        .position(|p| p.miss - p.fa >= 0.0)
        .expect("reject-all endpoint has miss - fa = 1");
    let cur = points[cross];
    if cur.miss - cur.fa == 0.0 {
        return Ok((cur.miss, cur.threshold));
    }
    let prev = points[cross - 1]; // cross > 0: the accept-all point has miss - fa = -1
    let dm = cur.miss - prev.miss;
    let df = cur.fa - prev.fa;
    let t = (prev.fa - prev.miss) / (dm - df);
    let eer = prev.miss + t * dm;
    let threshold = prev.threshold + t * (cur.threshold - prev.threshold);
    Ok((eer, threshold))
}

/// Detection cost at one operating point:
/// `c_miss * miss * p_target + c_fa * fa * (1 - p_target)`.
pub fn dcf_at(params: &DcfParams, miss: f64, fa: f64) -> f64 {
    params.c_miss * miss * params.p_target + params.c_fa * fa * (1.0 - params.p_target)
}

/// Minimum of [`dcf_at`] over the sweep (accept-all and reject-all
/// included).
pub fn compute_min_dcf(set: &ScoreSet, params: &DcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    let points = operating_points(set)?;
    let mut best = f64::INFINITY;
    let mut best_thr = points[0].threshold;
    for p in &points {
        let dcf = dcf_at(params, p.miss, p.fa);
        if dcf < best {
            best = dcf;
            best_thr = p.threshold;
        }
    }
    Ok((best, best_thr))
}

/// Write one `<enroll> <test> <score>` line per record. Scores use the
/// shortest round-trip decimal form, so rereading is lossless.
pub fn write_score_file(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{} {} {}\n", r.enroll, r.test, r.score));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_score_file(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
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
        let score: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad score {:?}", fields[2]),
        })?;
        if !score.is_finite() {
            return Err(Error::Parse { line: line_no, msg: "non-finite score".into() });
        }
        records.push(ScoreRecord {
            enroll: fields[0].to_string(),
            test: fields[1].to_string(),
            score,
        });
    }
    Ok(records)
}

/// Full evaluation summary for one score set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub n_trials: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
    pub params: DcfParams,
}

pub fn evaluate(set: &ScoreSet, params: &DcfParams) -> Result<EvalReport> {
    let (eer, eer_threshold) = compute_eer(set)?;
    let (min_dcf, dcf_threshold) = compute_min_dcf(set, params)?;
    let n_target = set.labels.iter().filter(|&&l| l).count();
    Ok(EvalReport {
        n_trials: set.len(),
        n_target,
        n_nontarget: set.len() - n_target,
        eer,
        eer_threshold,
        min_dcf,
        dcf_threshold,
        params: *params,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "DCF params: c_miss={} c_fa={} p_target={}",
            self.params.c_miss, self.params.c_fa, self.params.p_target
        )?;
        writeln!(
            f,
            "trials: {} (targets {}, nontargets {})",
            self.n_trials, self.n_target, self.n_nontarget
        )?;
        writeln!(f, "EER {:.3}% (threshold {:.6})", self.eer * 100.0, self.eer_threshold)?;
        writeln!(f, "minDCF {:.4} (threshold {:.6})", self.min_dcf, self.dcf_threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn set_of(scores: &[f64], labels: &[bool]) -> ScoreSet {
        let records = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoreRecord {
                enroll: format!("e{i}"),
                test: format!("t{i}"),
                score: s,
            })
            .collect();
        ScoreSet::new(records, labels.to_vec()).unwrap()
    }

    fn crops(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..EVAL_CROP_COUNT)
            .map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn pair_score_identical_embeddings() {
        let e = vec![vec![0.3, -0.4, 0.5]; EVAL_CROP_COUNT];
        let s = pair_score(&e, &e).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_score_orthogonal() {
        let e = vec![vec![1.0, 0.0]; EVAL_CROP_COUNT];
        let t = vec![vec![0.0, 2.5]; EVAL_CROP_COUNT];
        assert_eq!(pair_score(&e, &t).unwrap(), 0.0);
    }

    #[test]
    fn pair_score_matches_double_loop_oracle() {
        let e = crops(1);
        let t = crops(2);
        let got = pair_score(&e, &t).unwrap();
        // independent 100-term loop
        let mut acc = 0.0;
        for a in &e {
            for b in &t {
                let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                acc += dot / (na * nb);
            }
        }
        let want = acc / 100.0;
        assert!((got - want).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&got));
    }

    #[test]
    fn pair_score_zero_norm_names_crop() {
        let mut e = crops(3);
        e[7] = vec![0.0; 32];
        match pair_score(&e, &crops(4)) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("enroll crop 7"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn minmax_basic_and_fixed_point() {
        let set = set_of(&[2.0, 4.0, 6.0], &[true, false, true]);
        let normalized = minmax_normalize(&set).unwrap();
        assert_eq!(normalized.scores(), vec![0.0, 0.5, 1.0]);

        let again = minmax_normalize(&normalized).unwrap();
        assert_eq!(again.scores(), normalized.scores());
    }

    #[test]
    fn minmax_affine_invariance() {
        let base = set_of(&[0.1, -0.4, 0.9, 0.3], &[true, false, true, false]);
        let transformed = set_of(
            &base.scores().iter().map(|s| 3.5 * s + 11.0).collect::<Vec<_>>(),
            &[true, false, true, false],
        );
        let a = minmax_normalize(&base).unwrap();
        let b = minmax_normalize(&transformed).unwrap();
        for (x, y) in a.scores().iter().zip(b.scores().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn minmax_degenerate() {
        let set = set_of(&[0.5, 0.5], &[true, false]);
        assert!(matches!(minmax_normalize(&set), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fuse_weights_and_fixed_points() {
        let a = set_of(&[1.0, 1.0], &[true, false]);
        let b = set_of(&[0.0, 0.0], &[true, false]);
        let fused = fuse(&a, &b, 0.3, 0.7).unwrap();
        assert_eq!(fused.scores(), vec![0.3, 0.3]);

        let same = fuse(&a, &a, 0.3, 0.7).unwrap();
        assert_eq!(same.scores(), a.scores());

        let ident = fuse(&a, &b, 1.0, 0.0).unwrap();
        assert_eq!(ident.scores(), a.scores());
    }

    #[test]
    fn fuse_alignment_error_carries_index() {
        let a = set_of(&[1.0, 2.0], &[true, false]);
        let mut b = set_of(&[1.0, 2.0], &[true, false]);
        b.records[1].test = "other".into();
        match fuse(&a, &b, 0.5, 0.5) {
            Err(Error::Alignment { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn fuse_rejects_bad_weights() {
        let a = set_of(&[1.0], &[true]);
        assert!(matches!(fuse(&a, &a, 0.5, 0.6), Err(Error::Argument(_))));
        assert!(matches!(fuse(&a, &a, -0.1, 1.1), Err(Error::Argument(_))));
    }

    #[test]
    fn eer_perfect_separation() {
        let set = set_of(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        let (eer, _) = compute_eer(&set).unwrap();
        assert_eq!(eer, 0.0);
    }

    #[test]
    fn eer_indistinguishable() {
        let set = set_of(&[0.5, 0.5], &[true, false]);
        let (eer, _) = compute_eer(&set).unwrap();
        assert_eq!(eer, 0.5);
    }

    #[test]
    fn eer_interleaved_case() {
        // sweep oracle: at threshold 0.6 miss = fa = 0.5
        let set = set_of(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]);
        let (eer, thr) = compute_eer(&set).unwrap();
        assert_eq!(eer, 0.5);
        assert_eq!(thr, 0.6);
    }

    #[test]
    fn eer_requires_both_classes() {
        let set = set_of(&[0.5, 0.6], &[true, true]);
        assert!(matches!(compute_eer(&set), Err(Error::Argument(_))));
    }

    #[test]
    fn min_dcf_endpoints_and_substitution() {
        let params = DcfParams::default();
        // perfect separation: some threshold has zero cost
        let set = set_of(&[0.9, 0.1], &[true, false]);
        let (dcf, _) = compute_min_dcf(&set, &params).unwrap();
        assert_eq!(dcf, 0.0);

        // reject-all costs exactly c_miss * 1 * p_target = 0.05, and the
        // minimum can never exceed it
        let worst = set_of(&[0.1, 0.9], &[true, false]); // inverted scores
        let (dcf, _) = compute_min_dcf(&worst, &params).unwrap();
        assert!(dcf <= 0.05);
        assert_eq!(dcf, 1.0 * 1.0 * 0.05);
    }

    #[test]
    fn min_dcf_formula_substitution() {
        // E_miss = 0.1, E_fa = 0.2 at the threshold just above the lowest
        // target: 10 targets (1 below), 10 nontargets (2 at or above)
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        scores.push(0.05); // one target below threshold 0.1... threshold sweep lands on 0.1
        labels.push(true);
        for i in 0..9 {
            scores.push(0.5 + i as f64 * 0.01);
            labels.push(true);
        }
        for i in 0..8 {
            scores.push(0.06 + i as f64 * 0.001);
            labels.push(false);
        }
        scores.push(0.51); // two nontargets above
        labels.push(false);
        scores.push(0.52);
        labels.push(false);
        let set = set_of(&scores, &labels);
        let points_dcf = |miss: f64, fa: f64| 1.0 * miss * 0.05 + 1.0 * fa * (1.0 - 0.05);
        // brute force over all distinct thresholds to find the 0.1/0.2 point
        let mut found = false;
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        for thr in sorted {
            let miss = scores
                .iter()
                .zip(labels.iter())
                .filter(|(s, &l)| l && **s < thr)
                .count() as f64
                / 10.0;
            let fa = scores
                .iter()
                .zip(labels.iter())
                .filter(|(s, &l)| !l && **s >= thr)
                .count() as f64
                / 10.0;
            if miss == 0.1 && fa == 0.2 {
                found = true;
                assert_eq!(points_dcf(miss, fa), 0.1 * 0.05 + 0.2 * 0.95);
            }
        }
        assert!(found, "fixture never hit the 0.1/0.2 operating point");
        let (dcf, _) = compute_min_dcf(&set, &DcfParams::default()).unwrap();
        assert!(dcf <= 0.1 * 0.05 + 0.2 * 0.95);
    }

    #[test]
    fn metrics_rank_invariant_under_monotone_transform() {
        let mut rng = ChaCha20Rng::seed_from_u64(55);
        let scores: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<bool> = (0..60).map(|_| rng.random_range(0..2) == 1).collect();
        let labels = {
            // ensure both classes exist
            let mut l = labels;
            l[0] = true;
            l[1] = false;
            l
        };
        let set = set_of(&scores, &labels);
        let (eer, _) = compute_eer(&set).unwrap();
        let (dcf, _) = compute_min_dcf(&set, &DcfParams::default()).unwrap();
        for (a, b, c) in [(2.0, 0.5, 1.0), (0.2, 3.0, -4.0), (1.0, 0.1, 100.0)] {
            let mapped: Vec<f64> = scores.iter().map(|&s| a * s * s * s + b * s + c).collect();
            let mset = set_of(&mapped, &labels);
            let (eer2, _) = compute_eer(&mset).unwrap();
            let (dcf2, _) = compute_min_dcf(&mset, &DcfParams::default()).unwrap();
            assert!((eer - eer2).abs() <= 1e-12);
            assert!((dcf - dcf2).abs() <= 1e-12);
        }
        // corollary: min-max normalization never moves the metrics
        let normalized = minmax_normalize(&set).unwrap();
        let (eer3, _) = compute_eer(&normalized).unwrap();
        assert!((eer - eer3).abs() <= 1e-12);
    }

    #[test]
    fn score_file_roundtrip_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.txt");
        let records = vec![
            ScoreRecord { enroll: "a/x.wav".into(), test: "b/y.wav".into(), score: 0.123456789012345 },
            ScoreRecord { enroll: "a/x.wav".into(), test: "c/z.wav".into(), score: -0.5 },
        ];
        write_score_file(&path, &records).unwrap();
        let back = read_score_file(&path).unwrap();
        assert_eq!(back, records); // shortest round-trip float formatting

        let trials = vec![
            Trial { is_target: true, enroll_utt: "a/x.wav".into(), test_utt: "b/y.wav".into() },
            Trial { is_target: false, enroll_utt: "a/x.wav".into(), test_utt: "c/z.wav".into() },
        ];
        let set = ScoreSet::from_trials(&trials, back).unwrap();
        assert_eq!(set.labels, vec![true, false]);

        let swapped = vec![
            Trial { is_target: false, enroll_utt: "a/x.wav".into(), test_utt: "c/z.wav".into() },
            Trial { is_target: true, enroll_utt: "a/x.wav".into(), test_utt: "b/y.wav".into() },
        ];
        let records2 = read_score_file(&path).unwrap();
        match ScoreSet::from_trials(&swapped, records2) {
            Err(Error::Alignment { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn report_renders_expected_lines() {
        let set = set_of(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        let report = evaluate(&set, &DcfParams::default()).unwrap();
        let text = report.to_string();
        assert!(text.contains("DCF params: c_miss=1 c_fa=1 p_target=0.05"), "{text}");
        assert!(text.contains("EER 0.000%"), "{text}");
        assert!(text.contains("trials: 4 (targets 2, nontargets 2)"), "{text}");
    }
}
