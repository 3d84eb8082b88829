//! Finite-difference verification of analytic gradients. The estimator only
//! ever calls the forward path, so it is independent of every backward rule
//! it is used to check.

use crate::attention::{ema_forward, CaParams, EmaParams, EmaVariant, SeParams};
use crate::error::{Error, Result};
use crate::sample::randn;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use serde::Serialize;

/// Central-difference gradient of a scalar-valued function at `x`:
/// g_i = (f(x + h e_i) - f(x - h e_i)) / 2h.
pub fn finite_diff_gradient(
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Config(format!("step size must be positive and finite, got {h}")));
    }
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&Tensor::new(x.shape().clone(), probe.clone())?)?;
        probe[i] = orig - h;
        let down = f(&Tensor::new(x.shape().clone(), probe.clone())?)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "function returned a non-finite value near element {i}"
            )));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Tensor::new(x.shape().clone(), grad)
}

/// |a - n| / max(|a|, |n|, 1e-12); the floor keeps near-zero gradients from
/// inflating the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.dims(), numeric.dims(), "gradient shapes must agree");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Which attention module a gradient check targets.
#[derive(Clone, Copy, Debug)]
pub enum CheckTarget {
    Ema { groups: usize, variant: EmaVariant },
    Ca { reduction: usize },
    Se { reduction: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub module: String,
    pub input_dims: Vec<usize>,
    pub step: f64,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
    pub comparisons: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Compare the tape's gradients of `loss = sum(out^2)` against central finite
/// differences, for every parameter buffer of the module and for the input.
pub fn grad_check_attention(
    target: CheckTarget,
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let x0 = randn(&[batch, channels, h, w], seed ^ 0x5EED_CAFE);
    match target {
        CheckTarget::Ema { groups, variant } => {
            let params = EmaParams::init(channels, groups, seed)?;
            let module = format!(
                "ema[g={groups},{}]",
                match variant {
                    EmaVariant::Full => "full",
                    EmaVariant::NoCrossSpatial => "no_cross_spatial",
                }
            );
            run_check(
                module,
                params.buffers_owned(),
                x0,
                step,
                tolerance,
                move |bufs, x| {
                    let p = EmaParams::from_buffers(channels, groups, bufs.to_vec())?;
                    let mut tape = Tape::new();
                    let vars = p.bind(&mut tape);
                    let xid = tape.leaf(x.clone());
                    let y = ema_forward(&mut tape, &vars, variant, xid)?;
                    sum_of_squares(tape, y)
                },
            )
        }
        CheckTarget::Ca { reduction } => {
            let params = CaParams::init(channels, reduction, seed)?;
            run_check(
                format!("ca[r={reduction}]"),
                params.buffers_owned(),
                x0,
                step,
                tolerance,
                move |bufs, x| {
                    let p = CaParams::from_buffers(channels, reduction, bufs.to_vec())?;
                    let mut tape = Tape::new();
                    let vars = p.bind(&mut tape);
                    let xid = tape.leaf(x.clone());
                    let y = crate::attention::ca_forward(&mut tape, &vars, xid)?;
                    sum_of_squares(tape, y)
                },
            )
        }
        CheckTarget::Se { reduction } => {
            let params = SeParams::init(channels, reduction, seed)?;
            run_check(
                format!("se[r={reduction}]"),
                params.buffers_owned(),
                x0,
                step,
                tolerance,
                move |bufs, x| {
                    let p = SeParams::from_buffers(channels, reduction, bufs.to_vec())?;
                    let mut tape = Tape::new();
                    let vars = p.bind(&mut tape);
                    let xid = tape.leaf(x.clone());
                    let y = crate::attention::se_forward(&mut tape, &vars, xid)?;
                    sum_of_squares(tape, y)
                },
            )
        }
    }
}

fn sum_of_squares(mut tape: Tape, y: VarId) -> Result<(Tape, VarId)> {
    let sq = tape.mul(y, y)?;
    let loss = tape.sum_all(sq)?;
    Ok((tape, loss))
}

fn run_check(
    module: String,
    named_buffers: Vec<(&'static str, Tensor)>,
    x0: Tensor,
    step: f64,
    tolerance: f64,
    forward: impl Fn(&[Tensor], &Tensor) -> Result<(Tape, VarId)>,
) -> Result<GradCheckReport> {
    let buffers: Vec<Tensor> = named_buffers.iter().map(|(_, t)| t.clone()).collect();

    // Analytic pass: bind order on the tape matches buffer declaration order,
    // with the input recorded last.
    let (tape, loss) = forward(&buffers, &x0)?;
    let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
    // Leaves were recorded first: buffer i is node i, the input follows them.
    let analytic: Vec<Tensor> = (0..=buffers.len())
        .map(|i| {
            grads.get(VarId(i)).cloned().unwrap_or_else(|| {
                let dims = tape.value(VarId(i)).dims().to_vec();
                Tensor::zeros(&dims)
            })
        })
        .collect();

    let eval = |bufs: &[Tensor], x: &Tensor| -> Result<f64> {
        let (tape, loss) = forward(bufs, x)?;
        Ok(tape.value(loss).item())
    };

    let mut entries = Vec::new();
    let mut comparisons = 0usize;
    let mut overall: f64 = 0.0;
    for (i, (name, _)) in named_buffers.iter().enumerate() {
        let numeric = finite_diff_gradient(
            |candidate| {
                let mut bufs = buffers.clone();
                bufs[i] = candidate.clone();
                eval(&bufs, &x0)
            },
            &buffers[i],
            step,
        )?;
        let err = max_relative_error(&analytic[i], &numeric);
        overall = overall.max(err);
        comparisons += numeric.numel();
        entries.push(GradCheckEntry {
            name: (*name).to_string(),
            elements: numeric.numel(),
            max_rel_error: err,
        });
    }
    let numeric_input = finite_diff_gradient(|x| eval(&buffers, x), &x0, step)?;
    let err = max_relative_error(&analytic[buffers.len()], &numeric_input);
    overall = overall.max(err);
    comparisons += numeric_input.numel();
    entries.push(GradCheckEntry {
        name: "input".to_string(),
        elements: numeric_input.numel(),
        max_rel_error: err,
    });

    Ok(GradCheckReport {
        module,
        input_dims: x0.dims().to_vec(),
        step,
        tolerance,
        entries,
        comparisons,
        max_rel_error: overall,
        pass: overall < tolerance,
    })
}
