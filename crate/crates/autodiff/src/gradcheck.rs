//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::store::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Lower bound on coordinates checked per tensor (all of them when smaller).
pub const MIN_SAMPLES_PER_TENSOR: usize = 25;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// A loss that can be evaluated at any scalar precision.
///
/// Used by [`finite_diff_check_with_reference`], which differentiates in
/// one precision and takes central differences in a more accurate one.
pub trait LossProgram {
    fn loss<S: Scalar>(&self, store: &ParamStore<S>, tape: &mut Tape<S>) -> Result<Var, TensorError>;
}

/// Compares tape gradients of `loss_fn` against central differences with
/// step `eps` on up to `samples` coordinates of each tensor in `params`.
///
/// `loss_fn` builds a fresh forward pass on the given tape and must be a
/// deterministic function of the store. Gradients in `store` are reset
/// before the analytic pass and left holding its result.
pub fn finite_diff_check<T, F>(
    store: &mut ParamStore<T>,
    params: &[ParamId],
    eps: f64,
    samples: usize,
    seed: u64,
    mut loss_fn: F,
) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, &mut Tape<T>) -> Result<Var, TensorError>,
{
    check_step(eps)?;
    analytic_pass(store, &mut loss_fn)?;
    let mut probe = store.clone();
    compare(store, params, samples, seed, |id, c| {
        central_difference(&mut probe, id, c, eps, &mut loss_fn)
    })
}

/// Like [`finite_diff_check`], but the analytic gradients are computed in
/// `T` while the central differences are evaluated in the reference
/// scalar `R`, so that roundoff in the loss does not swamp small entries.
pub fn finite_diff_check_with_reference<T, R, P>(
    store: &mut ParamStore<T>,
    params: &[ParamId],
    eps: f64,
    samples: usize,
    seed: u64,
    program: &P,
) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    R: Scalar,
    P: LossProgram,
{
    check_step(eps)?;
    analytic_pass(store, &mut |s: &ParamStore<T>, t: &mut Tape<T>| program.loss(s, t))?;
    let mut probe: ParamStore<R> = store.cast();
    let mut loss_fn = |s: &ParamStore<R>, t: &mut Tape<R>| program.loss(s, t);
    compare(store, params, samples, seed, |id, c| {
        central_difference(&mut probe, id, c, eps, &mut loss_fn)
    })
}

fn check_step(eps: f64) -> Result<(), TensorError> {
    if eps > 0.0 {
        Ok(())
    } else {
        Err(TensorError::InvalidArgument {
            op: "finite_diff_check",
            reason: format!("step {eps} must be positive"),
        })
    }
}

fn analytic_pass<T, F>(store: &mut ParamStore<T>, loss_fn: &mut F) -> Result<(), TensorError>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, &mut Tape<T>) -> Result<Var, TensorError>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss, store)
}

fn central_difference<S, F>(
    store: &mut ParamStore<S>,
    id: ParamId,
    c: usize,
    eps: f64,
    loss_fn: &mut F,
) -> Result<f64, TensorError>
where
    S: Scalar,
    F: FnMut(&ParamStore<S>, &mut Tape<S>) -> Result<Var, TensorError>,
{
    let mut eval = |store: &ParamStore<S>| -> Result<S, TensorError> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        Ok(tape.value(loss).item())
    };
    let step = S::lit(eps);
    let orig = store.value(id).data()[c];
    store.value_mut(id).data_mut()[c] = orig + step;
    let plus = eval(store)?;
    store.value_mut(id).data_mut()[c] = orig - step;
    let minus = eval(store)?;
    store.value_mut(id).data_mut()[c] = orig;
    Ok(((plus - minus) / (step + step)).as_f64())
}

fn compare<T, F>(
    store: &ParamStore<T>,
    params: &[ParamId],
    samples: usize,
    seed: u64,
    mut numeric: F,
) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: FnMut(ParamId, usize) -> Result<f64, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_tensor = samples.max(MIN_SAMPLES_PER_TENSOR);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        params: Vec::new(),
    };
    for &id in params {
        let numel = store.value(id).numel();
        let mut coords = sample(&mut rng, numel, per_tensor.min(numel)).into_vec();
        coords.sort_unstable();
        let mut worst = 0.0f64;
        for &c in &coords {
            let analytic = store.grad(id).data()[c].as_f64();
            worst = worst.max(relative_error(analytic, numeric(id, c)?));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.params.push(ParamCheck {
            name: store.get(id).name.clone(),
            coordinates: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}
