#![allow(dead_code)]

//! Finite-difference helpers shared by the integration tests.

use dwtsep::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(rng: &mut ChaCha8Rng, t: usize, c: usize) -> FeatureMap {
    FeatureMap::from_fn(t, c, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
}

/// Central differences of `f` at `x` for every coordinate.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-12 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn dot(a: &FeatureMap, b: &FeatureMap) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks the adjoint of a map-to-map op: the analytic input gradient of
/// `<op(x), r>` against central differences.
pub fn check_map_op(
    x: &FeatureMap,
    r: &FeatureMap,
    op: impl Fn(&FeatureMap) -> FeatureMap,
    analytic: &FeatureMap,
) -> f64 {
    let (t, c) = x.shape();
    let numeric = central_diff(x.data(), |v| {
        let xm = FeatureMap::from_vec(t, c, v.to_vec()).unwrap();
        dot(&op(&xm), r)
    });
    max_rel_err(analytic.data(), &numeric)
}

/// Relative error of one analytic partial derivative against central
/// differences of `loss`, with the denominator floored at `floor`.
///
/// A leaky ReLU switching inside `[x - h, x + h]` breaks the smoothness
/// central differences rely on. When the first estimate misses `tol`, the
/// probe is repeated with a step 100 times smaller; a wrong gradient fails
/// at any step. Returns the error and whether the smaller step was needed.
pub fn param_check(
    flat: &[f64],
    i: usize,
    analytic: f64,
    floor: f64,
    tol: f64,
    loss: impl Fn(&[f64]) -> f64,
) -> (f64, bool) {
    let estimate = |h: f64| {
        let mut probe = flat.to_vec();
        probe[i] += h;
        let up = loss(&probe);
        probe[i] -= 2.0 * h;
        (up - loss(&probe)) / (2.0 * h)
    };
    let err = |numeric: f64| {
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        if denom == 0.0 {
            0.0
        } else {
            (analytic - numeric).abs() / denom
        }
    };
    let first = err(estimate(FD_STEP));
    if first < tol {
        (first, false)
    } else {
        (err(estimate(FD_STEP / 100.0)), true)
    }
}
