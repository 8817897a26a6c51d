//! Central finite-difference oracle for checking tape gradients.
//!
//! Only forward evaluations are used here, so the check stays independent
//! of the reverse sweep it validates.

use crate::diff::{DiffError, Tape, Tensor, Var};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude floor in the relative-error denominator, so components whose
/// true gradient is zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

/// Central differences of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Compares reverse-mode gradients of a scalar graph against central
/// differences, over every element of every input. Returns the worst
/// relative error.
pub fn check_graph(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|v| grads.get(*v).expect("leaf gradient").data().to_vec())
        .collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let eval = |x: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let mut off = 0;
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                let data = x[off..off + t.len()].to_vec();
                off += t.len();
                tape.constant(Tensor::new(t.shape().to_vec(), data).expect("shape"))
                    .expect("finite input")
            })
            .collect();
        let out = build(&mut tape, &vars).expect("forward");
        tape.value(out).item()
    };
    let numeric = numeric_gradient(eval, &flat, FD_STEP);
    Ok(max_relative_error(&analytic, &numeric))
}
