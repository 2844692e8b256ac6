//! Small dense-vector helpers.
//!
//! The gradient step is written `x - eta * v` per coordinate in exactly one
//! shape so the serial, replay and atomic shared-memory paths round the same
//! way.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// One coordinate of the update rule: the value after stepping `x_k` against
/// gradient component `v_k` with rate `eta`.
#[inline]
pub fn stepped(x_k: f64, eta: f64, v_k: f64) -> f64 {
    x_k - eta * v_k
}

/// Dense in-place update `x <- x - eta * v`.
pub fn step_dense(x: &mut [f64], eta: f64, v: &[f64]) {
    debug_assert_eq!(x.len(), v.len());
    for (xk, vk) in x.iter_mut().zip(v) {
        *xk = stepped(*xk, eta, *vk);
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_matches_coordinate_formula() {
        let mut x = vec![1.0, 2.0, -3.0];
        let v = vec![0.5, -1.0, 4.0];
        let before = x.clone();
        step_dense(&mut x, 0.1, &v);
        for k in 0..3 {
            assert_eq!(x[k], stepped(before[k], 0.1, v[k]));
        }
    }

    #[test]
    fn dot_and_norm() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        assert_eq!(norm_sq(&[3.0, 4.0]), 25.0);
    }
}
