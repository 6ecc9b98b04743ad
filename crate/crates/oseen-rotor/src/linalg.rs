//! Minimal fixed-size vector/matrix helpers.
//!
//! The whole crate works in ℝ³ with plain arrays so that values serialize
//! naturally and cross the FFI boundary without wrapper types.

/// A point or vector in ℝ³.
pub type Vec3 = [f64; 3];

/// A real 3×3 matrix, row major: `m[j][k]` is row `j`, column `k`.
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO_VEC: Vec3 = [0.0; 3];
pub const ZERO_MAT: Mat3 = [[0.0; 3]; 3];
pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
/// First coordinate unit vector (the translation axis).
pub const E1: Vec3 = [1.0, 0.0, 0.0];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm_sq(a: Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    norm_sq(a).sqrt()
}

/// Unit vector in the direction of `a`; `None` for the zero vector.
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n > 0.0 {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = ZERO_MAT;
    for j in 0..3 {
        for k in 0..3 {
            out[j][k] = a[j][0] * b[0][k] + a[j][1] * b[1][k] + a[j][2] * b[2][k];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = ZERO_MAT;
    for j in 0..3 {
        for k in 0..3 {
            out[j][k] = m[k][j];
        }
    }
    out
}

pub fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = ZERO_MAT;
    for j in 0..3 {
        for k in 0..3 {
            out[j][k] = a[j][k] + b[j][k];
        }
    }
    out
}

pub fn mat_scale(m: &Mat3, s: f64) -> Mat3 {
    let mut out = ZERO_MAT;
    for j in 0..3 {
        for k in 0..3 {
            out[j][k] = m[j][k] * s;
        }
    }
    out
}

/// Frobenius norm of a 3×3 matrix.
pub fn frob_norm(m: &Mat3) -> f64 {
    let mut s = 0.0;
    for row in m {
        for &v in row {
            s += v * v;
        }
    }
    s.sqrt()
}

/// `true` iff every component is finite.
pub fn vec_finite(v: Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// An orthonormal frame `(axis, p, q)` completing the given unit vector.
/// Used by sphere rules whose pole is not `e₁`.
pub fn orthonormal_frame(axis: Vec3) -> (Vec3, Vec3) {
    // Pick the coordinate axis least aligned with `axis` as the seed.
    let seed = if axis[0].abs() <= axis[1].abs() && axis[0].abs() <= axis[2].abs() {
        [1.0, 0.0, 0.0]
    } else if axis[1].abs() <= axis[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let p = normalize(sub(seed, scale(axis, dot(seed, axis)))).expect("axis must be unit");
    let q = cross(axis, p);
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_products_follow_right_hand_rule() {
        assert_eq!(cross([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), [0.0, 0.0, 1.0]);
        assert_eq!(cross([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn transpose_of_product_reverses_factors() {
        let a = [[1.0, 2.0, 3.0], [0.0, 1.0, 4.0], [5.0, 6.0, 0.0]];
        let b = [[-2.0, 1.0, 0.5], [3.0, 0.0, 1.0], [1.0, -1.0, 2.0]];
        let lhs = transpose(&mat_mul(&a, &b));
        let rhs = mat_mul(&transpose(&b), &transpose(&a));
        for j in 0..3 {
            for k in 0..3 {
                assert!((lhs[j][k] - rhs[j][k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn frames_are_orthonormal() {
        let axis = normalize([0.3, -0.7, 0.2]).unwrap();
        let (p, q) = orthonormal_frame(axis);
        assert!(dot(p, axis).abs() < 1e-14);
        assert!(dot(q, axis).abs() < 1e-14);
        assert!(dot(p, q).abs() < 1e-14);
        assert!((norm(p) - 1.0).abs() < 1e-14);
        assert!((norm(q) - 1.0).abs() < 1e-14);
    }
}
