//! Additive-margin softmax.
//!
//! Embeddings and class weight rows are L2-normalized, so logits are
//! cosines; the margin `m` is subtracted from the target-class cosine and
//! everything is scaled by `s` before the cross-entropy:
//!
//! `loss = mean_i -log( e^{s(cos t_i - m)} / (e^{s(cos t_i - m)} + sum_j e^{s cos j}) )`
//!
//! Gradients flow through both normalizations on the tape.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::net::ForwardCtx;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, VarId};

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_SCALE: f64 = 30.0;

#[derive(Debug, Clone, Copy)]
pub struct AmSoftmaxConfig {
    pub margin: f64,
    pub scale: f64,
}

impl Default for AmSoftmaxConfig {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN, scale: DEFAULT_SCALE }
    }
}

impl AmSoftmaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Argument(format!(
                "margin must be in [0, 1), got {}",
                self.margin
            )));
        }
        if self.scale <= 0.0 {
            return Err(Error::Argument(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Loss node plus the raw cosine logits (pre-margin), which double as the
/// training-accuracy readout.
pub struct LossOutput {
    pub loss: VarId,
    pub cosines: VarId,
}

/// Class-weight matrix plus the margin/scale hyperparameters.
pub struct AmSoftmaxHead {
    pub weight: ParamId,
    pub margin: f64,
    pub scale: f64,
    pub n_classes: usize,
    pub dim: usize,
}

impl AmSoftmaxHead {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        n_classes: usize,
        dim: usize,
        config: AmSoftmaxConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        let data: Vec<F> = (0..n_classes * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::from_f64(z)
            })
            .collect();
        let weight = store.add_param("amsoftmax.weight", vec![n_classes, dim], data)?;
        Ok(Self {
            weight,
            margin: config.margin,
            scale: config.scale,
            n_classes,
            dim,
        })
    }

    /// Mean AM-Softmax loss over a batch of embeddings.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        embeddings: VarId,
        labels: &[usize],
        ctx: &mut ForwardCtx<F>,
    ) -> Result<LossOutput> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range [0, {})",
                self.n_classes
            )));
        }
        let w = ctx.bind(g, store, self.weight)?;
        let en = g.row_normalize(embeddings)?;
        let wn = g.row_normalize(w)?;
        let cosines = g.matmul_nt(en, wn)?;
        let margined = g.add_at_labels(cosines, labels, F::from_f64(-self.margin))?;
        let scaled = g.scalar_mul(margined, F::from_f64(self.scale));
        let loss = g.cross_entropy_mean(scaled, labels)?;
        Ok(LossOutput { loss, cosines })
    }
}

/// Width of the no-decision band of the two-class AM rule, measured in
/// target-class cosine terms directly from the decision function: the
/// class-1 margined score must beat the plain class-2 score and vice
/// versa, and the two flip points are located by bisection on the unit
/// circle. For a correct implementation the width equals the margin.
pub fn margin_boundary_gap(margin: f64, scale: f64) -> f64 {
    // W1 at angle 0, W2 at angle pi/2; probe at angle phi
    let decide1 = |phi: f64| scale * (phi.cos() - margin) > scale * phi.sin();
    let decide2 = |phi: f64| scale * (phi.sin() - margin) > scale * phi.cos();
    let bisect = |f: &dyn Fn(f64) -> bool, mut lo: f64, mut hi: f64| {
        // f(lo) != f(hi); returns the flip angle
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) == f(lo) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let phi1 = bisect(&decide1, 0.0, std::f64::consts::FRAC_PI_2);
    let phi2 = bisect(&decide2, 0.0, std::f64::consts::FRAC_PI_2);
    phi1.cos() - phi2.cos()
}

/// Finite-difference check of the full loss chain on a random
/// `n = 4, c = 5` instance.
pub fn am_softmax_grad_check(margin: f64, scale: f64, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let (n, c, d) = (4usize, 5usize, 512usize);
    let mut store = ParamStore::<f64>::new();
    let emb_data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let emb = store.add_param("emb", vec![n, d], emb_data)?;
    let head = AmSoftmaxHead::register(&mut store, c, d, AmSoftmaxConfig { margin, scale }, &mut rng)?;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let weight = head.weight;
    let build = move |st: &ParamStore<f64>| {
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::new(crate::net::Mode::Train);
        let ev = ctx.bind(&mut g, st, emb)?;
        let out = head.forward(st, &mut g, ev, &labels, &mut ctx)?;
        Ok((g, out.loss, ctx.bindings))
    };
    crate::tensor::grad_check(
        &mut store,
        &[emb, weight],
        build,
        &crate::tensor::GradCheckOptions::default(),
        &mut rng,
    )
}
