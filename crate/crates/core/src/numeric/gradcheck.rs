//! Central finite-difference gradient checking.

use super::{NumericError, Tape, Tensor, Var};

/// Compares an analytic gradient against central differences of `value`.
///
/// Returns the largest `|analytic − numeric| / max(1, |analytic|)` over all
/// coordinates of `point`.
pub fn check_gradients_with<V, G>(value: V, analytic: G, point: &[f64], epsilon: f64) -> f64
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    assert!(
        epsilon > 0.0 && epsilon <= 1e-2,
        "epsilon must lie in (0, 1e-2]"
    );
    let grad = analytic(point);
    assert_eq!(grad.len(), point.len(), "gradient length mismatch");
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let up = value(&probe);
        probe[i] = orig - epsilon;
        let down = value(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Gradient check for a function recorded on a [`Tape`].
///
/// `f` receives a fresh tape and the leaf holding the evaluation point and
/// must return a scalar loss.
pub fn check_gradients<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64, NumericError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumericError>,
{
    let shape = point.shape().to_vec();
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>), NumericError> {
        let mut tape = Tape::new();
        let leaf = tape.param(Tensor::new(shape.clone(), x.to_vec())?);
        let loss = f(&mut tape, leaf)?;
        let value = tape.value(loss).item()?;
        let grad = tape.backward(loss)?.get(leaf).into_data();
        Ok((value, grad))
    };
    // Surface errors once at the base point; perturbations are assumed to stay valid.
    eval(point.data())?;
    Ok(check_gradients_with(
        |x| eval(x).map(|r| r.0).unwrap_or(f64::NAN),
        |x| eval(x).map(|r| r.1).expect("evaluated at base point"),
        point.data(),
        epsilon,
    ))
}
