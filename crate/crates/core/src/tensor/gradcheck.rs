//! Central-difference gradient checking against the tape's analytic
//! gradients. Run this in `f64`; the default step is far below `f32`
//! resolution.

use rand::Rng;

use super::{Graph, ParamId, ParamStore, Scalar, VarId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per tensor; tensors at or below this size are
    /// checked exhaustively.
    pub max_coords_per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_coords_per_tensor: 200 }
    }
}

fn eval_scalar<F, B>(store: &ParamStore<F>, build: &B) -> Result<f64>
where
    F: Scalar,
    B: Fn(&ParamStore<F>) -> Result<(Graph<F>, VarId, Vec<(ParamId, VarId)>)>,
{
    let (g, out, _) = build(store)?;
    if g.data(out).len() != 1 {
        return Err(Error::Argument(format!(
            "grad_check requires a scalar output, got shape {:?}",
            g.shape(out)
        )));
    }
    let v = g.scalar(out).as_f64();
    if !v.is_finite() {
        return Err(Error::Numeric("non-finite value during gradient check".into()));
    }
    Ok(v)
}

/// Compare analytic gradients of `targets` against central differences.
///
/// `build` must deterministically reconstruct the computation from the
/// current store contents and report which graph leaf each bound
/// parameter landed on. Returns the maximum relative error
/// `|a - n| / max(1, |a|, |n|)` over all checked coordinates.
pub fn grad_check<F, B>(
    store: &mut ParamStore<F>,
    targets: &[ParamId],
    build: B,
    opts: &GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<f64>
where
    F: Scalar,
    B: Fn(&ParamStore<F>) -> Result<(Graph<F>, VarId, Vec<(ParamId, VarId)>)>,
{
    let (mut g, out, bindings) = build(store)?;
    if g.data(out).len() != 1 {
        return Err(Error::Argument(format!(
            "grad_check requires a scalar output, got shape {:?}",
            g.shape(out)
        )));
    }
    g.backward(out)?;

    let mut max_rel: f64 = 0.0;
    for &pid in targets {
        let name = store.entry(pid).name.clone();
        let var = bindings
            .iter()
            .find(|(p, _)| *p == pid)
            .ok_or_else(|| Error::Argument(format!("parameter {name:?} is not bound in the graph")))?
            .1;
        let analytic: Vec<f64> = g.grad(var).iter().map(|v| v.as_f64()).collect();
        let len = analytic.len();
        let coords: Vec<usize> = if len <= opts.max_coords_per_tensor {
            (0..len).collect()
        } else {
            rand::seq::index::sample(rng, len, opts.max_coords_per_tensor).into_vec()
        };
        let eps = F::from_f64(opts.eps);
        for i in coords {
            let orig = store.entry(pid).data[i];
            store.entry_mut(pid).data[i] = orig + eps;
            let f_plus = eval_scalar(store, &build);
            store.entry_mut(pid).data[i] = orig - eps;
            let f_minus = eval_scalar(store, &build);
            store.entry_mut(pid).data[i] = orig;
            let numeric = (f_plus? - f_minus?) / (2.0 * opts.eps);
            let a = analytic[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {name:?} coordinate {i}"
                )));
            }
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
