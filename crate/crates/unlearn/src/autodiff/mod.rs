//! First- and second-order reverse-mode differentiation of scalar
//! objectives with respect to a flat parameter vector.
//!
//! The two entry points are [`grad`] for plain gradients and
//! [`grad_of_grad_functional`] for differentiating a scalar that is itself
//! a function of gradients (the double-backprop path the orthogonality
//! regularizer rides on). Both materialize results as [`GradVector`]s;
//! algorithm code never sees per-layer structure.

mod tape;
#[cfg(test)]
mod tests;
mod vector;

pub use tape::{Tape, Var};
pub use vector::{axpy, dot, norm, GradVector, Layout, ParamVector, TensorSpec};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Gradients with Euclidean norm below this are treated as degenerate:
/// cosine-based functionals of them are defined as zero (or refused,
/// depending on the caller's contract).
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Registers one differentiable tape leaf per layout tensor, in canonical
/// order.
pub fn param_vars(tape: &mut Tape, params: &ParamVector) -> Vec<Var> {
    params
        .layout()
        .specs()
        .iter()
        .map(|spec| {
            let arr = Array2::from_shape_vec(
                (spec.rows, spec.cols),
                params.tensor(spec).to_vec(),
            )
            .expect("layout spec consistent with storage");
            tape.param(arr)
        })
        .collect()
}

/// Copies per-tensor adjoint values into one flat vector.
pub fn collect_grad(
    tape: &Tape,
    grads: &[Var],
    params: &ParamVector,
) -> GradVector {
    let layout = params.layout().clone();
    let mut values = vec![0.0; layout.total_len()];
    for (spec, var) in layout.specs().iter().zip(grads) {
        let arr = tape.value(*var);
        debug_assert_eq!(arr.dim(), (spec.rows, spec.cols));
        for (dst, src) in values[spec.offset..spec.offset + spec.len()]
            .iter_mut()
            .zip(arr.iter())
        {
            *dst = *src;
        }
    }
    GradVector::new(layout, values)
}

/// Euclidean norm over a list of tape values (a gradient still in
/// per-tensor form).
pub fn vars_norm(tape: &Tape, vars: &[Var]) -> f64 {
    vars.iter()
        .map(|v| tape.value(*v).iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// `∂objective/∂params`, with `params` left untouched.
///
/// ```
/// use unlearn::autodiff::{grad, Layout, ParamVector};
///
/// let layout = Layout::new(&[("theta", 1, 2)]);
/// let theta = ParamVector::new(layout, vec![1.0, -2.0]);
/// // ½‖θ‖²  →  gradient is θ itself
/// let g = grad(&theta, |tape, vars| {
///     let sq = tape.mul(vars[0], vars[0]);
///     let s = tape.sum(sq);
///     tape.scale(s, 0.5)
/// })
/// .unwrap();
/// assert_eq!(g.values(), &[1.0, -2.0]);
/// ```
pub fn grad<F>(params: &ParamVector, objective: F) -> Result<GradVector>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars = param_vars(&mut tape, params);
    let out = objective(&mut tape, &vars);
    let gs = tape.backward(out, &vars);
    collect_grad(&tape, &gs, params).check_finite()
}

/// `∇θ outer(∇θ inner_a, ∇θ inner_b)`.
///
/// Both inner gradients are produced as differentiable tape expressions;
/// `outer` combines them into a scalar which is then differentiated with
/// respect to the parameters, through both gradient arguments.
///
/// Errs with [`Error::DegenerateGradient`] when either inner gradient has
/// norm below [`DEGENERATE_NORM`], since cosine-style functionals are
/// undefined there.
pub fn grad_of_grad_functional<A, B, O>(
    params: &ParamVector,
    inner_a: A,
    inner_b: B,
    outer: O,
) -> Result<GradVector>
where
    A: FnOnce(&mut Tape, &[Var]) -> Var,
    B: FnOnce(&mut Tape, &[Var]) -> Var,
    O: FnOnce(&mut Tape, &[Var], &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars = param_vars(&mut tape, params);
    let a = inner_a(&mut tape, &vars);
    let b = inner_b(&mut tape, &vars);
    let ga = tape.backward(a, &vars);
    let gb = tape.backward(b, &vars);
    for g in [&ga, &gb] {
        let n = vars_norm(&tape, g);
        if n < DEGENERATE_NORM {
            return Err(Error::DegenerateGradient {
                norm: n,
                limit: DEGENERATE_NORM,
            });
        }
    }
    let out = outer(&mut tape, &ga, &gb);
    let gs = tape.backward(out, &vars);
    collect_grad(&tape, &gs, params).check_finite()
}

/// Squared cosine of two gradients-in-tape-form:
/// `(a·b)² / ((a·a)(b·b))`. Avoids square roots, which keeps the
/// second-order graph better conditioned.
pub fn cosine_sq_vars(tape: &mut Tape, a: &[Var], b: &[Var]) -> Var {
    let mut ab: Option<Var> = None;
    let mut aa: Option<Var> = None;
    let mut bb: Option<Var> = None;
    for (&x, &y) in a.iter().zip(b) {
        let dxy = tape.dot(x, y);
        let dxx = tape.dot(x, x);
        let dyy = tape.dot(y, y);
        ab = Some(match ab {
            None => dxy,
            Some(acc) => tape.add(acc, dxy),
        });
        aa = Some(match aa {
            None => dxx,
            Some(acc) => tape.add(acc, dxx),
        });
        bb = Some(match bb {
            None => dyy,
            Some(acc) => tape.add(acc, dyy),
        });
    }
    let (ab, aa, bb) = (ab.unwrap(), aa.unwrap(), bb.unwrap());
    let num = tape.mul(ab, ab);
    let den = tape.mul(aa, bb);
    tape.div(num, den)
}
