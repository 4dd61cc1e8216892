//! Central finite differences, used as the independent gradient oracle in tests.

use std::collections::BTreeMap;

use super::tensor::{ParamStore, Tensor};
use super::NumError;

/// `(f(p+ε) − f(p−ε)) / 2ε` for every scalar of every parameter.
///
/// The perturbation is applied in `f32`; the divisor uses the actually
/// representable step so rounding of `p ± ε` does not bias the estimate.
/// The loss is returned as `f64` so callers may evaluate it at higher precision.
pub fn finite_difference_grad<F>(
    mut loss_fn: F,
    params: &ParamStore,
    epsilon: f32,
) -> Result<BTreeMap<String, Tensor>, NumError>
where
    F: FnMut(&ParamStore) -> Result<f64, NumError>,
{
    if !(epsilon > 0.0) {
        return Err(NumError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.require(&name)?.len();
        let mut grad = Vec::with_capacity(n);
        for i in 0..n {
            let orig = params.require(&name)?.data()[i];
            let (hi, lo) = (orig + epsilon, orig - epsilon);
            set(&mut work, &name, i, hi);
            let f_hi = loss_fn(&work)?;
            set(&mut work, &name, i, lo);
            let f_lo = loss_fn(&work)?;
            set(&mut work, &name, i, orig);
            let d = (f_hi - f_lo) / (f64::from(hi) - f64::from(lo));
            grad.push(d as f32);
        }
        let shape = params.require(&name)?.shape().to_vec();
        out.insert(name, Tensor::new(shape, grad)?);
    }
    Ok(out)
}

fn set(store: &mut ParamStore, name: &str, i: usize, v: f32) {
    if let Some(t) = store.get_mut(name) {
        t.data_mut()[i] = v;
    }
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)` over all matching tensors.
///
/// Returns 0 when both gradients are exactly zero.
pub fn relative_error(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> f64 {
    let mut diff = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (name, ta) in a {
        let Some(tb) = b.get(name) else {
            return f64::INFINITY;
        };
        if !ta.same_shape(tb) {
            return f64::INFINITY;
        }
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let (x, y) = (f64::from(x), f64::from(y));
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    if b.keys().any(|k| !a.contains_key(k)) {
        return f64::INFINITY;
    }
    let scale = na.max(nb).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f32) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let g = finite_difference_grad(
            |p| {
                let x = f64::from(p.get("x").unwrap().item());
                Ok(x * x)
            },
            &store(3.0),
            1e-4,
        )
        .unwrap();
        assert!((g["x"].item() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_difference_grad(|_| Ok(4.0), &store(3.0), 1e-4).unwrap();
        assert_eq!(g["x"].item(), 0.0);
    }

    #[test]
    fn non_positive_epsilon_rejected() {
        assert!(finite_difference_grad(|_| Ok(0.0), &store(1.0), 0.0).is_err());
        assert!(finite_difference_grad(|_| Ok(0.0), &store(1.0), -1e-3).is_err());
    }
}
