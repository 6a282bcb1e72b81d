//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest singular value.
pub fn op_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Spectral radius of a square matrix.
pub fn spectral_radius(m: &Mat) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn symmetry_defect(m: &Mat) -> f64 {
    (m - m.transpose()).amax()
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Popov-Belevitch-Hautus test: every eigenvalue with |λ| >= 1 must leave
/// `[A - λI, B]` with full row rank.
pub fn is_stabilizable(a: &Mat, b: &Mat) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let mut pbh = DMatrix::<Complex64>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { *lambda } else { Complex64::new(0.0, 0.0) };
                pbh[(i, j)] = Complex64::new(a[(i, j)], 0.0) - diag;
            }
            for j in 0..m {
                pbh[(i, n + j)] = Complex64::new(b[(i, j)], 0.0);
            }
        }
        let sv = pbh.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= 1e-10 * smax.max(1.0) {
            return false;
        }
    }
    true
}

/// Euclidean projection onto the ball `‖v - center‖ ≤ radius`.
pub fn project_ball(v: &Vector, center: &Vector, radius: f64) -> Vector {
    let d = v - center;
    let norm = d.norm();
    if norm <= radius {
        v.clone()
    } else {
        center + d * (radius / norm)
    }
}

pub fn quad_form(m: &Mat, v: &Vector) -> f64 {
    v.dot(&(m * v))
}

pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_integrator_is_stabilizable() {
        let a = from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let b = from_rows(&[vec![0.0], vec![1.0]]);
        assert!(is_stabilizable(&a, &b));
    }

    #[test]
    fn uncontrollable_unstable_mode_detected() {
        let a = from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]);
        let b = from_rows(&[vec![0.0], vec![1.0]]);
        assert!(!is_stabilizable(&a, &b));
        // the same uncontrollable mode is fine once it is stable
        let a = from_rows(&[vec![0.9, 0.0], vec![0.0, 2.0]]);
        assert!(is_stabilizable(&a, &b));
    }

    #[test]
    fn ball_projection() {
        let c = Vector::from_vec(vec![1.0, 0.0]);
        let v = Vector::from_vec(vec![4.0, 4.0]);
        let p = project_ball(&v, &c, 1.0);
        assert!(((&p - &c).norm() - 1.0).abs() < 1e-14);
        let inside = Vector::from_vec(vec![1.5, 0.0]);
        assert_eq!(project_ball(&inside, &c, 1.0), inside);
    }

    #[test]
    fn norms() {
        let m = from_rows(&[vec![3.0, 0.0], vec![0.0, -2.0]]);
        assert!((op_norm(&m) - 3.0).abs() < 1e-12);
        assert!((spectral_radius(&m) - 3.0).abs() < 1e-12);
        let rot = from_rows(&[vec![0.0, -0.5], vec![0.5, 0.0]]);
        assert!((spectral_radius(&rot) - 0.5).abs() < 1e-12);
    }
}
