//! Dense least-squares and orthonormalization kernels.

use crate::error::{Error, Result};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};

/// Truncated-SVD factorization `A = U_r Σ_r V_rᵀ` of a design matrix.
#[derive(Clone, Debug)]
pub(crate) struct Factorization<T: Real> {
    /// Left singular vectors of the retained directions (rows × rank).
    pub u: DMatrix<T>,
    /// `V_r Σ_r⁻¹` (cols × rank).
    pub v_sinv: DMatrix<T>,
    pub singular_values: DVector<T>,
}

impl<T: Real> Factorization<T> {
    /// Factorizes `a`, discarding singular values below `rel_tol · σ_max`.
    pub fn new(a: &DMatrix<T>, rel_tol: T, label: &str) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite("design matrix"));
        }
        if a.nrows() == 0 {
            return Err(Error::EmptyDataSet);
        }
        if a.ncols() == 0 || a.iter().all(|v| *v == T::zero()) {
            return Err(Error::DegenerateFeatureMap(label.to_string()));
        }
        // Tall designs are reduced by QR first so the SVD only touches a square factor.
        let (u_full, s, v) = if a.nrows() > a.ncols() {
            let qr = a.clone().qr();
            let (u, s, v) = svd(&qr.r());
            (qr.q() * u, s, v)
        } else {
            svd(a)
        };
        let s_max = s.iter().fold(T::zero(), |m, v| m.max(*v));
        if s_max == T::zero() {
            return Err(Error::DegenerateFeatureMap(label.to_string()));
        }
        let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > rel_tol * s_max).collect();
        let rank = keep.len();
        let mut u = DMatrix::zeros(a.nrows(), rank);
        let mut v_sinv = DMatrix::zeros(a.ncols(), rank);
        let mut kept = DVector::zeros(rank);
        for (j, &i) in keep.iter().enumerate() {
            u.set_column(j, &u_full.column(i));
            let inv = T::one() / s[i];
            v_sinv.set_column(j, &(v.column(i) * inv));
            kept[j] = s[i];
        }
        Ok(Self {
            u,
            v_sinv,
            singular_values: kept,
        })
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Minimum-norm least-squares coefficients for right-hand sides `b` (rows × k).
    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        &self.v_sinv * (self.u.transpose() * b)
    }
}

/// Orthonormal basis of the column space of `a` with relative rank threshold `rel_tol`.
pub(crate) fn orthonormal_columns<T: Real>(
    a: &DMatrix<T>,
    rel_tol: T,
    label: &str,
) -> Result<DMatrix<T>> {
    Ok(Factorization::new(a, rel_tol, label)?.u)
}

/// Largest singular value of `a` (0 for empty matrices).
pub(crate) fn spectral_norm<T: Real>(a: &DMatrix<T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    svd(a).1.iter().fold(T::zero(), |m, v| m.max(*v))
}

/// Thin SVD `a = U diag(s) Vᵀ` by one-sided Jacobi rotations, returning (U, s, V).
///
/// Used instead of nalgebra's bidiagonal SVD, which can return factors that do not
/// reconstruct rank-deficient triangular inputs.
pub(crate) fn svd<T: Real>(a: &DMatrix<T>) -> (DMatrix<T>, DVector<T>, DMatrix<T>) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = svd(&a.transpose());
        return (v, s, u);
    }
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<T>::identity(n, n);
    let eps = T::default_epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sv = DVector::from_fn(n, |j, _| w.column(j).norm());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut u = DMatrix::zeros(a.nrows(), n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        s[k] = sv[j];
        if sv[j] > T::zero() {
            u.set_column(k, &(w.column(j) / sv[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    (u, s, vs)
}

fn rotate<T: Real>(m: &mut DMatrix<T>, p: usize, q: usize, c: T, s: T) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_overdetermined_system() {
        let a = DMatrix::<f64>::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let x = Factorization::new(&a, 1e-10, "t").unwrap().solve(&b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 4.0]);
        let f = Factorization::new(&a, 1e-10, "t").unwrap();
        assert_eq!(f.rank(), 1);
        let x = f.solve(&b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_design_is_degenerate() {
        let a = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(
            Factorization::new(&a, 1e-10, "z"),
            Err(Error::DegenerateFeatureMap(_))
        ));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&a) - 4.0f64).abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_rank_deficient_triangle() {
        let r = DMatrix::<f64>::from_row_slice(
            4,
            4,
            &[
                1.0, -6.938893903907228e-17, 0.7430857976826697, 0.6677541414402924, 0.0, 1.0,
                -0.3983074610577141, 0.49405864475840156, 0.0, 0.0, 0.5377496292402896,
                -0.5567858314727758, 0.0, 0.0, 0.0, 5.764959874990258e-16,
            ],
        );
        let (u, s, v) = svd(&r);
        let rec = &u * DMatrix::from_diagonal(&s) * v.transpose();
        assert!((rec - &r).amax() < 1e-14);
        assert!((v.transpose() * &v - DMatrix::identity(4, 4)).amax() < 1e-14);
        assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }
}
