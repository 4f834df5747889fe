//! Principal angles between hypothesis spaces, rate bounds and the joint least-squares oracle.

use crate::error::{check_dim, Error, Result};
use crate::hypothesis::{
    fit_projection, flatten_values, unflatten_values, values_norm, DataSet, FeatureMap,
    FeatureModel, InnerProductContext, VectorFeatureMap, VectorFeatureModel,
    VectorLeastSquaresLearner, Learner,
};
use crate::koopman::Dictionary;
use crate::linalg::{orthonormal_columns, spectral_norm, svd};
use crate::scalar::Real;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default threshold 1 − 10⁻⁸ below which singular values are not intersection directions.
pub const DEFAULT_INTERSECTION_TOL: f64 = 1e-8;
/// Relative rank threshold used when orthonormalizing generators.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of a space of functions on the data, stored as flattened evaluations
/// scaled by 1/√N so that Euclidean and empirical inner products agree.
#[derive(Clone, Debug)]
pub struct SubspaceBasis<T: Real> {
    basis: DMatrix<T>,
    n: usize,
    k: usize,
}

impl<T: Real> SubspaceBasis<T> {
    /// `generators` is `(N·K) × p`: column j holds generator j at row `i·K + k`.
    pub fn from_generators(generators: &DMatrix<T>, n: usize, k: usize) -> Result<Self> {
        check_dim("generator rows", n * k, generators.nrows())?;
        if n == 0 {
            return Err(Error::EmptyDataSet);
        }
        let scaled = generators / T::from_usize_lossy(n).sqrt();
        let basis = orthonormal_columns(&scaled, T::lit(RANK_TOL), "subspace generators")?;
        Ok(Self { basis, n, k })
    }

    /// The space {x ↦ WΨ(x)}, i.e. every output row spans Ψ independently.
    pub fn from_feature_map(data: &DataSet<T>, map: &FeatureMap<T>) -> Result<Self> {
        let design = map.design_matrix(data)?;
        Self::from_generators(&kron_outputs(&design, data.target_dim()), data.len(), data.target_dim())
    }

    pub fn from_vector_map(data: &DataSet<T>, map: &VectorFeatureMap<T>) -> Result<Self> {
        check_dim("vector feature-map output", data.target_dim(), map.dim_out())?;
        Self::from_generators(&map.design_matrix(data)?, data.len(), data.target_dim())
    }

    /// State-block hypothesis space of an EDMD learner.
    pub fn from_dictionary(data: &DataSet<T>, dict: &Dictionary<T>) -> Result<Self> {
        let design = dict.design_matrix(data)?;
        if dict.is_pointwise() {
            Self::from_generators(&design, data.len(), data.target_dim())
        } else {
            Self::from_generators(&kron_outputs(&design, data.target_dim()), data.len(), data.target_dim())
        }
    }

    /// 𝒢 + ℋ.
    pub fn sum(a: &Self, b: &Self) -> Result<Self> {
        check_dim("summed subspace rows", a.basis.nrows(), b.basis.nrows())?;
        let joint = concat_columns(&a.basis, &b.basis);
        let basis = orthonormal_columns(&joint, T::lit(RANK_TOL), "subspace sum")?;
        Ok(Self {
            basis,
            n: a.n,
            k: a.k,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Scaled orthonormal columns (`N·K × rank`).
    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    /// Gram matrix of the basis under ⟨·,·⟩_D.
    pub fn gram(&self) -> DMatrix<T> {
        self.basis.transpose() * &self.basis
    }

    /// Orthogonal projection of an `N × K` function onto the span.
    pub fn project(&self, values: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("projected rows", self.n, values.nrows())?;
        check_dim("projected columns", self.k, values.ncols())?;
        let f = flatten_values(values);
        let p = &self.basis * (self.basis.transpose() * f);
        Ok(unflatten_values(&p, self.n, self.k))
    }
}

/// Repeats each feature column once per output coordinate (I_K ⊗ Ψ), flattened row-major.
fn kron_outputs<T: Real>(design: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let (n, p) = design.shape();
    let mut out = DMatrix::zeros(n * k, p * k);
    for i in 0..n {
        for c in 0..k {
            for j in 0..p {
                out[(i * k + c, c * p + j)] = design[(i, j)];
            }
        }
    }
    out
}

fn concat_columns<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// Orthonormalizes flattened feature evaluations under the context's inner product.
pub fn orthonormalize<T: Real>(
    features: &DMatrix<T>,
    ctx: &InnerProductContext<'_, T>,
) -> Result<SubspaceBasis<T>> {
    SubspaceBasis::from_generators(features, ctx.data.len(), ctx.data.target_dim())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub c0: f64,
    pub c: f64,
    pub intersection_dim: usize,
    /// c², the contraction of the residual per iteration.
    pub rate_per_iteration: f64,
    /// ln c, the expected slope of ln‖Fⁿ − P F‖ against 2n − 1.
    pub predicted_slope: f64,
}

impl AngleReport {
    /// Writes `{c0, c, intersection_dim, predicted_slope}`; a zero angle has slope `null`.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let slope = if self.predicted_slope.is_finite() {
            serde_json::Value::from(round_sig(self.predicted_slope))
        } else {
            serde_json::Value::Null
        };
        let v = serde_json::json!({
            "c0": round_sig(self.c0),
            "c": round_sig(self.c),
            "intersection_dim": self.intersection_dim,
            "predicted_slope": slope,
        });
        std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
        Ok(())
    }
}

/// Rounds to 12 significant digits.
pub fn round_sig(v: f64) -> f64 {
    if v.is_finite() {
        format!("{v:.11e}").parse().unwrap_or(v)
    } else {
        v
    }
}

/// Cosines c₀ and c between two spaces using the default intersection threshold.
pub fn min_angle<T: Real>(g: &SubspaceBasis<T>, h: &SubspaceBasis<T>) -> Result<AngleReport> {
    min_angle_with(g, h, DEFAULT_INTERSECTION_TOL)
}

/// Singular values of Q_𝒢ᵀQ_ℋ above `1 − tol` count as intersection; c is the largest remaining.
pub fn min_angle_with<T: Real>(
    g: &SubspaceBasis<T>,
    h: &SubspaceBasis<T>,
    tol: f64,
) -> Result<AngleReport> {
    check_dim("angle context rows", g.basis.nrows(), h.basis.nrows())?;
    let cross = g.basis.transpose() * &h.basis;
    let sv: Vec<f64> = svd(&cross)
        .1
        .iter()
        .map(|s| s.to_f64_lossy().clamp(0.0, 1.0))
        .collect();
    let c0 = sv.iter().copied().fold(0.0, f64::max);
    let intersection_dim = sv.iter().filter(|&&s| s >= 1.0 - tol).count();
    let c = sv.iter().copied().filter(|&s| s < 1.0 - tol).fold(0.0, f64::max);
    Ok(AngleReport {
        c0,
        c,
        intersection_dim,
        rate_per_iteration: c * c,
        predicted_slope: c.ln(),
    })
}

/// ‖P_{𝒢⊥}P_{ℋ⊥} − P_{𝒢⊥∩ℋ⊥}‖ computed densely in the ambient space of data evaluations.
///
/// This equals c(𝒢, ℋ); intended for small instances (ambient dimension N·K).
pub fn complement_product_norm<T: Real>(g: &SubspaceBasis<T>, h: &SubspaceBasis<T>) -> Result<T> {
    check_dim("angle context rows", g.basis.nrows(), h.basis.nrows())?;
    let m = g.basis.nrows();
    let eye = DMatrix::<T>::identity(m, m);
    let pg = &eye - &g.basis * g.basis.transpose();
    let ph = &eye - &h.basis * h.basis.transpose();
    let s = SubspaceBasis::sum(g, h)?;
    let p_int = &eye - &s.basis * s.basis.transpose();
    Ok(spectral_norm(&(pg * ph - p_int)))
}

/// c(G, H_ν) for the 2D stencil spaces: sqrt(1 − 5/(9ν² + 12ν + 9)).
pub fn closed_form_c_nu(nu: f64) -> f64 {
    (1.0 - 5.0 / (9.0 * nu * nu + 12.0 * nu + 9.0)).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    APriori,
    APosteriori,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub kind: BoundKind,
    /// Combination iteration (a priori only).
    pub n: Option<usize>,
    /// Rollout step.
    pub k: usize,
    pub value: f64,
    pub c: f64,
    pub eps_f: f64,
    pub m: f64,
    pub diff_norm: Option<f64>,
    /// [(1 + c/(1 − c²)·diff)^k − 1]·M (a posteriori only).
    pub power_form: Option<f64>,
}

fn check_bound_inputs(c: f64, m: f64, k: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidParameter(format!("c = {c} outside [0, 1]")));
    }
    if !(m > 0.0) {
        return Err(Error::InvalidParameter("M must be positive".into()));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    Ok(())
}

/// [(1 + c^{2n−1} + ε_F)^k − 1]·M, stated for ‖F‖_D = 1: pass ε_F / ‖F‖_D and scale the
/// value by ‖F‖_D for unnormalized targets.
pub fn a_priori_bound(c: f64, eps_f: f64, m: f64, n: usize, k: usize) -> Result<ErrorBound> {
    check_bound_inputs(c, m, k)?;
    if n < 1 || !(eps_f >= 0.0) {
        return Err(Error::InvalidParameter("need n ≥ 1 and ε_F ≥ 0".into()));
    }
    let rate = c.powi(2 * n as i32 - 1);
    let value = ((1.0 + rate + eps_f).powi(k as i32) - 1.0) * m;
    Ok(ErrorBound {
        kind: BoundKind::APriori,
        n: Some(n),
        k,
        value,
        c,
        eps_f,
        m,
        diff_norm: None,
        power_form: None,
    })
}

/// k²·M·(c/(1 − c²))·diff while k·(c/(1 − c²))·diff < 1, otherwise the power form.
pub fn a_posteriori_bound(c: f64, diff_norm: f64, m: f64, k: usize) -> Result<ErrorBound> {
    check_bound_inputs(c, m, k)?;
    if c >= 1.0 {
        return Err(Error::DegenerateAngle);
    }
    if !(diff_norm >= 0.0) {
        return Err(Error::InvalidParameter("diff_norm must be non-negative".into()));
    }
    let gain = c / (1.0 - c * c) * diff_norm;
    let kf = k as f64;
    let power = ((1.0 + gain).powi(k as i32) - 1.0) * m;
    let value = if kf * gain < 1.0 { kf * kf * m * gain } else { power };
    Ok(ErrorBound {
        kind: BoundKind::APosteriori,
        n: None,
        k,
        value,
        c,
        eps_f: 0.0,
        m,
        diff_norm: Some(diff_norm),
        power_form: Some(power),
    })
}

/// One least-squares fit on [Ψ_𝒢, Ψ_ℋ]; its predictions are P_{𝒢⊕ℋ}F on the data.
pub fn joint_projection_oracle<T: Real>(
    data: &DataSet<T>,
    map_g: &FeatureMap<T>,
    map_h: &FeatureMap<T>,
) -> Result<FeatureModel<T>> {
    fit_projection(data, &FeatureMap::concat(map_g, map_h)?, None)
}

/// [`joint_projection_oracle`] for vector-valued feature families.
pub fn joint_projection_oracle_vector<T: Real>(
    data: &DataSet<T>,
    map_g: &VectorFeatureMap<T>,
    map_h: &VectorFeatureMap<T>,
) -> Result<VectorFeatureModel<T>> {
    let joint = VectorFeatureMap::concat(map_g, map_h)?;
    Ok(VectorLeastSquaresLearner::new(data, joint)?
        .project(data.targets())?
        .model)
}

/// P_{𝒢+ℋ}F on the data for arbitrary bases, and ε_F = ‖F − P_{𝒢+ℋ}F‖_D.
pub fn oracle_values<T: Real>(
    data: &DataSet<T>,
    g: &SubspaceBasis<T>,
    h: &SubspaceBasis<T>,
) -> Result<(DMatrix<T>, T)> {
    let joint = SubspaceBasis::sum(g, h)?;
    let p = joint.project(data.targets())?;
    let eps = values_norm(&(data.targets() - &p));
    Ok((p, eps))
}

/// Least-squares slope of ln(error) against 2n − 1; non-positive errors are skipped.
pub fn convergence_slope(points: &[(usize, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| *e > 0.0 && e.is_finite())
        .map(|&(n, e)| (2.0 * n as f64 - 1.0, e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter("slope needs two positive errors".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants(cols: &[&[f64]]) -> SubspaceBasis<f64> {
        let k = cols[0].len();
        let mut m = DMatrix::zeros(k, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        SubspaceBasis::from_generators(&m, 1, k).unwrap()
    }

    #[test]
    fn orthonormalize_examples() {
        let d = DataSet::new(&[vec![0.0]], &[vec![0.0, 0.0]]).unwrap();
        let ctx = InnerProductContext::new(&d);
        let b = orthonormalize(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &ctx).unwrap();
        assert_eq!(b.rank(), 1);
        let dup = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(orthonormalize(&dup, &ctx).unwrap().rank(), 1);
        assert!(orthonormalize(&DMatrix::zeros(2, 1), &ctx).is_err());
    }

    #[test]
    fn odd_even_features_orthogonal() {
        let xs = [-1.0f64, 0.0, 1.0];
        let d = DataSet::new(
            &xs.iter().map(|x| vec![*x]).collect::<Vec<_>>(),
            &xs.iter().map(|x| vec![*x]).collect::<Vec<_>>(),
        )
        .unwrap();
        let raw = DMatrix::from_fn(3, 2, |i, j| xs[i].powi(j as i32 + 1));
        let ctx = InnerProductContext::new(&d);
        assert!((ctx.inner(&raw.columns(0, 1).into_owned(), &raw.columns(1, 1).into_owned()).unwrap()).abs() < 1e-15);
        let b = orthonormalize(&raw, &ctx).unwrap();
        assert_eq!(b.rank(), 2);
        assert!((b.gram() - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn forty_five_degrees() {
        let s = 0.5f64.sqrt();
        let r = min_angle(&constants(&[&[1.0, 0.0]]), &constants(&[&[s, s]])).unwrap();
        assert!((r.c0 - s).abs() < 1e-12 && (r.c - s).abs() < 1e-12);
        assert_eq!(r.intersection_dim, 0);
    }

    #[test]
    fn identical_spaces() {
        let g = constants(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]]);
        let r = min_angle(&g, &g).unwrap();
        assert!((r.c0 - 1.0).abs() < 1e-12);
        assert_eq!(r.intersection_dim, 2);
        assert_eq!(r.c, 0.0);
    }

    #[test]
    fn stencil_vectors_at_nu_zero() {
        let r = min_angle(
            &constants(&[&[1.0, 1.0, -2.0, 0.0, 0.0]]),
            &constants(&[&[0.0, 0.0, -2.0, 1.0, 1.0]]),
        )
        .unwrap();
        assert!((r.c - 2.0 / 3.0).abs() < 1e-12);
        assert!((closed_form_c_nu(0.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_values() {
        assert!(closed_form_c_nu(-2.0 / 3.0).abs() < 1e-7);
        assert!((closed_form_c_nu(2.0) - (64.0f64 / 69.0).sqrt()).abs() < 1e-15);
        assert!((closed_form_c_nu(2.0) - 0.96309).abs() < 1e-5);
    }

    #[test]
    fn a_priori_examples() {
        assert_eq!(a_priori_bound(0.0, 0.0, 1.0, 3, 4).unwrap().value, 0.0);
        let s = 0.5f64.sqrt();
        assert!((a_priori_bound(s, 0.0, 1.0, 1, 1).unwrap().value - s).abs() < 1e-12);
        assert!((a_priori_bound(0.0, 0.1, 1.0, 1, 2).unwrap().value - 0.21).abs() < 1e-12);
        assert!(a_priori_bound(1.5, 0.0, 1.0, 1, 1).is_err());
    }

    #[test]
    fn a_posteriori_examples() {
        let s = 0.5f64.sqrt();
        assert_eq!(a_posteriori_bound(s, 0.0, 1.0, 3).unwrap().value, 0.0);
        let b = a_posteriori_bound(s, 0.01, 1.0, 2).unwrap();
        assert!((b.value - 4.0 * (s / 0.5) * 0.01).abs() < 1e-12);
        assert!((b.value - 0.05657).abs() < 1e-5);
        assert!(b.power_form.unwrap() <= b.value);
        assert!(matches!(a_posteriori_bound(1.0, 0.01, 1.0, 2), Err(Error::DegenerateAngle)));
        // Large argument falls back to the power form.
        let big = a_posteriori_bound(0.9, 1.0, 1.0, 3).unwrap();
        assert_eq!(big.value, big.power_form.unwrap());
    }

    #[test]
    fn oracle_examples() {
        let s = 0.5f64.sqrt();
        let d = DataSet::new(&[vec![0.0]], &[vec![0.0, 1.0]]).unwrap();
        let g = VectorFeatureMap::constant("g", 1, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let h = VectorFeatureMap::constant("h", 1, DMatrix::from_column_slice(2, 1, &[s, s]));
        let m = joint_projection_oracle_vector(&d, &g, &h).unwrap();
        let p = crate::hypothesis::Predictor::predict(&m, &[0.0]).unwrap();
        assert!(p[0].abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);

        // Scalar data with orthogonal features x and x² on symmetric points.
        let xs = [-1.0, 0.0, 1.0];
        let ys = [0.5, 2.0, 1.5];
        let d = DataSet::new(
            &xs.iter().map(|x| vec![*x]).collect::<Vec<_>>(),
            &ys.iter().map(|y| vec![*y]).collect::<Vec<_>>(),
        )
        .unwrap();
        let fx = FeatureMap::identity(1);
        let fx2 = FeatureMap::new("sq", 1, 1, |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0]);
        let joint = joint_projection_oracle(&d, &fx, &fx2).unwrap();
        let pg = fit_projection(&d, &fx, None).unwrap();
        let ph = fit_projection(&d, &fx2, None).unwrap();
        use crate::hypothesis::Predictor;
        let a = joint.predict_dataset(&d).unwrap();
        let b = pg.predict_dataset(&d).unwrap() + ph.predict_dataset(&d).unwrap();
        assert!((a - b).abs().max() < 1e-12);

        // Target orthogonal to both spaces: oracle vanishes and ε_F = ‖F‖.
        let d = DataSet::<f64>::new(&[vec![0.0]], &[vec![0.0, 0.0, 1.0]]).unwrap();
        let gb = SubspaceBasis::from_generators(&DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]), 1, 3).unwrap();
        let hb = SubspaceBasis::from_generators(&DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]), 1, 3).unwrap();
        let (p, eps) = oracle_values(&d, &gb, &hb).unwrap();
        assert!(p.abs().max() < 1e-15);
        assert!((eps - 1.0).abs() < 1e-15);
    }

    #[test]
    fn operator_norm_matches_c() {
        let s = 0.5f64.sqrt();
        let g = constants(&[&[1.0, 0.0, 0.0]]);
        let h = constants(&[&[s, s, 0.0]]);
        let c = min_angle(&g, &h).unwrap().c;
        assert!((complement_product_norm(&g, &h).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn slope_of_geometric_sequence() {
        let pts: Vec<(usize, f64)> = (1..8).map(|n| (n, 3.0 * 0.5f64.powi(2 * n as i32 - 1))).collect();
        assert!((convergence_slope(&pts).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        assert!(convergence_slope(&[(1, 1.0)]).is_err());
    }

    #[test]
    fn dense_space_dimension_counts_outputs() {
        let d = DataSet::new(&[vec![1.0], vec![2.0], vec![3.0]], &vec![vec![0.0f64, 0.0]; 3]).unwrap();
        let b = SubspaceBasis::from_feature_map(&d, &FeatureMap::polynomial(1)).unwrap();
        assert_eq!(b.rank(), 4);
    }
}
