//! Receding-horizon control over lifted predictors.
//!
//! Four operator structures are supported. Linear and both hybrid ones are affine in the
//! controls for a fixed external input, so each horizon problem is a convex box QP. The
//! nonlinear structure multiplies controls into the operator and is solved by a local
//! quasi-Newton method with restarts.

use crate::combiner::{iterate, CombinationConfig};
use crate::error::{check_dim, Error, Result};
use crate::hypothesis::{DataSet, FeatureMap, Learner, LeastSquaresLearner, Sample};
use crate::koopman::Dictionary;
use crate::linalg::Factorization;
use crate::scalar::Real;
use crate::systems::{trajectory_rng, ControlledSystem, Oscillator};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Tolerance on the projected-gradient norm of a horizon QP.
pub const KKT_TOL: f64 = 1e-8;
/// Smallest Hessian eigenvalue accepted as a convexity certificate.
pub const CONVEXITY_TOL: f64 = 1e-10;
/// Random starting points of the nonlinear solver, including the zero-control start.
pub const NONLINEAR_RESTARTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// z⁺ = K₁z + B₁c + C₁e.
    Linear,
    /// z⁺ = K₂(e)z + B₂c.
    Hybrid1,
    /// z⁺ = K₃z + B₃(e)c.
    Hybrid2,
    /// z⁺ = K₄(e, c)z.
    Nonlinear,
}

impl Structure {
    pub const ALL: [Structure; 4] = [
        Structure::Linear,
        Structure::Hybrid1,
        Structure::Hybrid2,
        Structure::Nonlinear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Structure::Linear => "linear",
            Structure::Hybrid1 => "hybrid1",
            Structure::Hybrid2 => "hybrid2",
            Structure::Nonlinear => "nonlinear",
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, Structure::Nonlinear)
    }
}

/// Feature basis φ(e) for parametric operators, applied to each external coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalBasis {
    /// [1, e].
    Affine,
    /// [1, sin e].
    Sine,
    /// [1, sin e, cos e].
    Trig,
}

impl ExternalBasis {
    pub fn len(&self, external_dim: usize) -> usize {
        match self {
            ExternalBasis::Affine | ExternalBasis::Sine => 1 + external_dim,
            ExternalBasis::Trig => 1 + 2 * external_dim,
        }
    }

    pub fn evaluate<T: Real>(&self, e: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len(e.len()));
        out.push(T::one());
        for &v in e {
            match self {
                ExternalBasis::Affine => out.push(v),
                ExternalBasis::Sine => out.push(v.sin()),
                ExternalBasis::Trig => {
                    out.push(v.sin());
                    out.push(v.cos());
                }
            }
        }
        out
    }
}

/// Operator blocks; parametric ones hold one matrix per basis function.
#[derive(Clone, Debug, PartialEq)]
pub enum Operators<T: Real> {
    Linear {
        k: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
    },
    Hybrid1 {
        k: Vec<DMatrix<T>>,
        b: DMatrix<T>,
    },
    Hybrid2 {
        k: DMatrix<T>,
        b: Vec<DMatrix<T>>,
    },
    /// `k[j·(1 + m) + l]` multiplies φ_j(e)·χ_l(c) with χ(c) = [1, c].
    Nonlinear { k: Vec<DMatrix<T>> },
}

impl<T: Real> Operators<T> {
    pub fn structure(&self) -> Structure {
        match self {
            Operators::Linear { .. } => Structure::Linear,
            Operators::Hybrid1 { .. } => Structure::Hybrid1,
            Operators::Hybrid2 { .. } => Structure::Hybrid2,
            Operators::Nonlinear { .. } => Structure::Nonlinear,
        }
    }
}

/// Training summary of a fitted predictor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Combiner iterations; 0 for single least-squares fits.
    pub iterations: usize,
    pub converged: bool,
    /// ‖Ψ(x⁺) − ẑ⁺‖_D on the training data.
    pub residual_norm: f64,
}

/// Predictor on dictionary coordinates z = Ψ(x).
#[derive(Clone, Debug)]
pub struct LiftedPredictor<T: Real> {
    dictionary: Dictionary<T>,
    basis: ExternalBasis,
    control_dim: usize,
    external_dim: usize,
    operators: Operators<T>,
    pub training: TrainingReport,
}

/// One step z⁺ = A z + B c + d with the external input fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineStep<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub d: DVector<T>,
}

impl<T: Real> LiftedPredictor<T> {
    pub fn new(
        dictionary: Dictionary<T>,
        basis: ExternalBasis,
        control_dim: usize,
        external_dim: usize,
        operators: Operators<T>,
    ) -> Result<Self> {
        if dictionary.is_pointwise() {
            return Err(Error::InvalidParameter("lifted predictors need a joint dictionary".into()));
        }
        let p = dictionary.len();
        let nphi = basis.len(external_dim);
        let square = |m: &DMatrix<T>, what| {
            check_dim(what, p, m.nrows())?;
            check_dim(what, p, m.ncols())
        };
        let tall = |m: &DMatrix<T>, cols, what| {
            check_dim(what, p, m.nrows())?;
            check_dim(what, cols, m.ncols())
        };
        match &operators {
            Operators::Linear { k, b, c } => {
                square(k, "K₁")?;
                tall(b, control_dim, "B₁")?;
                tall(c, external_dim, "C₁")?;
            }
            Operators::Hybrid1 { k, b } => {
                check_dim("K₂ blocks", nphi, k.len())?;
                for m in k {
                    square(m, "K₂")?;
                }
                tall(b, control_dim, "B₂")?;
            }
            Operators::Hybrid2 { k, b } => {
                square(k, "K₃")?;
                check_dim("B₃ blocks", nphi, b.len())?;
                for m in b {
                    tall(m, control_dim, "B₃")?;
                }
            }
            Operators::Nonlinear { k } => {
                check_dim("K₄ blocks", nphi * (1 + control_dim), k.len())?;
                for m in k {
                    square(m, "K₄")?;
                }
            }
        }
        Ok(Self {
            dictionary,
            basis,
            control_dim,
            external_dim,
            operators,
            training: TrainingReport::default(),
        })
    }

    pub fn structure(&self) -> Structure {
        self.operators.structure()
    }

    pub fn dictionary(&self) -> &Dictionary<T> {
        &self.dictionary
    }

    pub fn operators(&self) -> &Operators<T> {
        &self.operators
    }

    pub fn basis(&self) -> ExternalBasis {
        self.basis
    }

    pub fn lifted_dim(&self) -> usize {
        self.dictionary.len()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn external_dim(&self) -> usize {
        self.external_dim
    }

    fn check_inputs(&self, z: &[T], c: &[T], e: &[T]) -> Result<()> {
        check_dim("lifted state", self.lifted_dim(), z.len())?;
        check_dim("control", self.control_dim, c.len())?;
        check_dim("external input", self.external_dim, e.len())
    }

    /// Affine form for a fixed `e`; `None` for the nonlinear structure.
    pub fn affine_step(&self, e: &[T]) -> Result<Option<AffineStep<T>>> {
        check_dim("external input", self.external_dim, e.len())?;
        let phi = self.basis.evaluate(e);
        let p = self.lifted_dim();
        let step = match &self.operators {
            Operators::Linear { k, b, c } => AffineStep {
                a: k.clone(),
                b: b.clone(),
                d: c * DVector::from_column_slice(e),
            },
            Operators::Hybrid1 { k, b } => AffineStep {
                a: weighted_sum(k, &phi),
                b: b.clone(),
                d: DVector::zeros(p),
            },
            Operators::Hybrid2 { k, b } => AffineStep {
                a: k.clone(),
                b: weighted_sum(b, &phi),
                d: DVector::zeros(p),
            },
            Operators::Nonlinear { .. } => return Ok(None),
        };
        Ok(Some(step))
    }

    /// K₄(e, c) of the nonlinear structure.
    fn nonlinear_operator(&self, phi: &[T], c: &[T]) -> Option<DMatrix<T>> {
        let Operators::Nonlinear { k } = &self.operators else {
            return None;
        };
        let chi = control_basis(c);
        let w: Vec<T> = phi
            .iter()
            .flat_map(|f| chi.iter().map(move |x| *f * *x))
            .collect();
        Some(weighted_sum(k, &w))
    }

    /// Σ_j φ_j(e)·K_{j,1+m}·z, the derivative of z⁺ with respect to c_m.
    fn nonlinear_control_jacobian(&self, phi: &[T], z: &DVector<T>) -> DMatrix<T> {
        let Operators::Nonlinear { k } = &self.operators else {
            unreachable!("only called for the nonlinear structure");
        };
        let m = self.control_dim;
        let mut jac = DMatrix::zeros(self.lifted_dim(), m);
        for (j, f) in phi.iter().enumerate() {
            for l in 0..m {
                let col = &k[j * (1 + m) + 1 + l] * z * *f;
                let mut target = jac.column_mut(l);
                target += col;
            }
        }
        jac
    }

    fn step_vec(&self, z: &DVector<T>, c: &[T], e: &[T]) -> Result<DVector<T>> {
        if let Some(s) = self.affine_step(e)? {
            Ok(&s.a * z + &s.b * DVector::from_column_slice(c) + s.d)
        } else {
            let phi = self.basis.evaluate(e);
            Ok(self.nonlinear_operator(&phi, c).expect("nonlinear structure") * z)
        }
    }
}

fn weighted_sum<T: Real>(mats: &[DMatrix<T>], w: &[T]) -> DMatrix<T> {
    let mut out = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
    for (m, &wj) in mats.iter().zip(w) {
        out += m * wj;
    }
    out
}

fn control_basis<T: Real>(c: &[T]) -> Vec<T> {
    let mut chi = Vec::with_capacity(c.len() + 1);
    chi.push(T::one());
    chi.extend_from_slice(c);
    chi
}

/// Applies the structure's update rule.
pub fn predict_lifted<T: Real>(pred: &LiftedPredictor<T>, z: &[T], c: &[T], e: &[T]) -> Result<Vec<T>> {
    pred.check_inputs(z, c, e)?;
    let next = pred.step_vec(&DVector::from_column_slice(z), c, e)?;
    Ok(next.iter().copied().collect())
}

/// Lifts raw `(x, c, e) → x⁺` data to `(Ψ(x), c, e) → Ψ(x⁺)`.
pub fn lift_dataset<T: Real>(data: &DataSet<T>, dictionary: &Dictionary<T>) -> Result<DataSet<T>> {
    if data.control_dim() == 0 {
        return Err(Error::MissingInput("controls"));
    }
    if data.external_dim() == 0 {
        return Err(Error::MissingInput("external inputs"));
    }
    if dictionary.is_pointwise() {
        return Err(Error::InvalidParameter("lifted predictors need a joint dictionary".into()));
    }
    check_dim("dictionary state", dictionary.state_dim(), data.input_dim())?;
    check_dim("target state", dictionary.state_dim(), data.target_dim())?;
    let mut z = Vec::with_capacity(data.len());
    let mut zp = Vec::with_capacity(data.len());
    let mut c = Vec::with_capacity(data.len());
    let mut e = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        z.push(dictionary.lift(data.input(i))?);
        let next: Vec<T> = data.targets().row(i).iter().copied().collect();
        zp.push(dictionary.lift(&next)?);
        c.push(data.control(i).to_vec());
        e.push(data.external(i).to_vec());
    }
    DataSet::new(&z, &zp)?.with_controls(&c)?.with_externals(&e)
}

/// Feature maps on lifted samples, one per operator block.
struct BlockMaps;

impl BlockMaps {
    fn state<T: Real>(p: usize, m: usize, q: usize) -> FeatureMap<T> {
        FeatureMap::with_inputs("z", p, m, q, p, |s, out| out.copy_from_slice(s.state))
    }

    fn control<T: Real>(p: usize, m: usize, q: usize) -> FeatureMap<T> {
        FeatureMap::with_inputs("c", p, m, q, m, |s, out| out.copy_from_slice(s.control))
    }

    fn external<T: Real>(p: usize, m: usize, q: usize) -> FeatureMap<T> {
        FeatureMap::with_inputs("e", p, m, q, q, |s, out| out.copy_from_slice(s.external))
    }

    /// φ(e) ⊗ z, index j·p + i.
    fn param_state<T: Real>(basis: ExternalBasis, p: usize, m: usize, q: usize) -> FeatureMap<T> {
        let nphi = basis.len(q);
        FeatureMap::with_inputs("phi(e)z", p, m, q, nphi * p, move |s, out| {
            for (j, f) in basis.evaluate(s.external).into_iter().enumerate() {
                for (i, z) in s.state.iter().enumerate() {
                    out[j * p + i] = f * *z;
                }
            }
        })
    }

    /// φ(e) ⊗ c, index j·m + l.
    fn param_control<T: Real>(basis: ExternalBasis, p: usize, m: usize, q: usize) -> FeatureMap<T> {
        let nphi = basis.len(q);
        FeatureMap::with_inputs("phi(e)c", p, m, q, nphi * m, move |s, out| {
            for (j, f) in basis.evaluate(s.external).into_iter().enumerate() {
                for (l, c) in s.control.iter().enumerate() {
                    out[j * m + l] = f * *c;
                }
            }
        })
    }

    /// φ(e) ⊗ [1, c] ⊗ z, index (j·(1 + m) + l)·p + i.
    fn param_full<T: Real>(basis: ExternalBasis, p: usize, m: usize, q: usize) -> FeatureMap<T> {
        let nphi = basis.len(q);
        FeatureMap::with_inputs("phi(e)chi(c)z", p, m, q, nphi * (1 + m) * p, move |s, out| {
            let chi = control_basis(s.control);
            for (j, f) in basis.evaluate(s.external).into_iter().enumerate() {
                for (l, x) in chi.iter().enumerate() {
                    let w = f * *x;
                    let base = (j * (1 + m) + l) * p;
                    for (i, z) in s.state.iter().enumerate() {
                        out[base + i] = w * *z;
                    }
                }
            }
        })
    }
}

fn column_blocks<T: Real>(w: &DMatrix<T>, start: usize, width: usize, count: usize) -> Vec<DMatrix<T>> {
    (0..count)
        .map(|j| w.columns(start + j * width, width).into_owned())
        .collect()
}

/// Fits one structure on raw `(x, c, e) → x⁺` data with full lifted supervision.
///
/// Linear and nonlinear structures are single least-squares fits. Each hybrid runs the
/// combiner with the parametric block as 𝒢 and the constant block as ℋ.
pub fn fit_predictor<T: Real>(
    structure: Structure,
    data: &DataSet<T>,
    dictionary: &Dictionary<T>,
    basis: ExternalBasis,
    config: &CombinationConfig,
) -> Result<LiftedPredictor<T>> {
    let lifted = lift_dataset(data, dictionary)?;
    let (p, m, q) = (dictionary.len(), data.control_dim(), data.external_dim());
    let nphi = basis.len(q);
    let mut report = TrainingReport::default();
    let operators = match structure {
        Structure::Linear => {
            let joint = FeatureMap::concat(
                &FeatureMap::concat(&BlockMaps::state(p, m, q), &BlockMaps::control(p, m, q))?,
                &BlockMaps::external(p, m, q),
            )?;
            let fit = LeastSquaresLearner::new(&lifted, joint)?.project(lifted.targets())?;
            report.residual_norm = crate::hypothesis::values_norm(&(lifted.targets() - &fit.values)).to_f64_lossy();
            report.converged = true;
            let w = fit.model.coefficients();
            Operators::Linear {
                k: w.columns(0, p).into_owned(),
                b: w.columns(p, m).into_owned(),
                c: w.columns(p + m, q).into_owned(),
            }
        }
        Structure::Hybrid1 | Structure::Hybrid2 => {
            let (gmap, hmap) = if structure == Structure::Hybrid1 {
                (BlockMaps::param_state(basis, p, m, q), BlockMaps::control(p, m, q))
            } else {
                (BlockMaps::param_control(basis, p, m, q), BlockMaps::state(p, m, q))
            };
            let g = LeastSquaresLearner::new(&lifted, gmap)?;
            let h = LeastSquaresLearner::new(&lifted, hmap)?;
            let state = iterate(&lifted, &g, &h, config)?;
            report.iterations = state.n;
            report.converged = state.converged;
            report.residual_norm = state
                .last()
                .map_or(f64::NAN, |r| r.residual_norm.to_f64_lossy());
            let wg = state.model_g.coefficients();
            let wh = state.model_h.coefficients();
            if structure == Structure::Hybrid1 {
                Operators::Hybrid1 {
                    k: column_blocks(wg, 0, p, nphi),
                    b: wh.clone(),
                }
            } else {
                Operators::Hybrid2 {
                    k: wh.clone(),
                    b: column_blocks(wg, 0, m, nphi),
                }
            }
        }
        Structure::Nonlinear => {
            let map = BlockMaps::param_full(basis, p, m, q);
            let fit = LeastSquaresLearner::new(&lifted, map)?.project(lifted.targets())?;
            report.residual_norm = crate::hypothesis::values_norm(&(lifted.targets() - &fit.values)).to_f64_lossy();
            report.converged = true;
            Operators::Nonlinear {
                k: column_blocks(fit.model.coefficients(), 0, p, nphi * (1 + m)),
            }
        }
    };
    let mut pred = LiftedPredictor::new(dictionary.clone(), basis, m, q, operators)?;
    pred.training = report;
    Ok(pred)
}

/// Finite-horizon tracking problem in lifted coordinates.
#[derive(Clone, Debug)]
pub struct MPCProblem<T: Real> {
    pub horizon: usize,
    /// `p × p` state weight.
    pub q: DMatrix<T>,
    /// `m × m` control weight.
    pub r: DMatrix<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Lifted reference z^ref; indexes past the end repeat the last entry.
    pub reference: Vec<Vec<T>>,
    /// External input at every closed-loop step, known over the horizon.
    pub externals: Vec<Vec<T>>,
    /// Seeds the restarts of the nonlinear solver.
    pub seed: u64,
}

impl<T: Real> MPCProblem<T> {
    /// Q weights only the state block of the dictionary; the constant and observable blocks
    /// get zero weight.
    #[allow(clippy::too_many_arguments)]
    pub fn tracking(
        dictionary: &Dictionary<T>,
        horizon: usize,
        state_weights: &[T],
        control_weights: &[T],
        lower: Vec<T>,
        upper: Vec<T>,
        reference_states: &[Vec<T>],
        externals: Vec<Vec<T>>,
    ) -> Result<Self> {
        check_dim("state weights", dictionary.state_dim(), state_weights.len())?;
        let p = dictionary.len();
        let mut q = DMatrix::zeros(p, p);
        for (i, w) in dictionary.state_block().zip(state_weights) {
            q[(i, i)] = *w;
        }
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(control_weights));
        let reference = reference_states
            .iter()
            .map(|x| dictionary.lift(x))
            .collect::<Result<Vec<_>>>()?;
        let problem = Self {
            horizon,
            q,
            r,
            lower,
            upper,
            reference,
            externals,
            seed: 0,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        check_dim("bounds", self.lower.len(), self.upper.len())?;
        check_dim("R rows", self.lower.len(), self.r.nrows())?;
        for (index, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo <= hi) {
                return Err(Error::InfeasibleBounds {
                    index,
                    lower: lo.to_f64_lossy(),
                    upper: hi.to_f64_lossy(),
                });
            }
        }
        for (m, what) in [(&self.q, "Q"), (&self.r, "R")] {
            if !m.is_square() {
                return Err(Error::InvalidParameter(format!("{what} must be square")));
            }
            let scale = m.abs().max().max(T::one());
            if (m - m.transpose()).abs().max() > T::lit(1e-12) * scale {
                return Err(Error::InvalidParameter(format!("{what} must be symmetric")));
            }
            let min = m.clone().symmetric_eigenvalues().min();
            if min < -T::lit(1e-12) * scale {
                return Err(Error::InvalidParameter(format!("{what} must be positive semidefinite")));
            }
        }
        if self.reference.is_empty() {
            return Err(Error::MissingInput("reference trajectory"));
        }
        if self.externals.is_empty() {
            return Err(Error::MissingInput("external forecast"));
        }
        Ok(())
    }

    fn reference_at(&self, i: usize) -> &[T] {
        &self.reference[i.min(self.reference.len() - 1)]
    }

    fn external_at(&self, i: usize) -> &[T] {
        &self.externals[i.min(self.externals.len() - 1)]
    }
}

/// Optimal control sequence of one horizon problem.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonSolution<T: Real> {
    /// c₀ … c_{h−1}.
    pub controls: Vec<Vec<T>>,
    pub cost: T,
    /// ‖c − clamp(c − ∇J)‖∞ at the returned point.
    pub kkt_residual: T,
    /// Smallest eigenvalue of the condensed Hessian (convex structures only).
    pub min_hessian_eigenvalue: Option<T>,
    /// Set when the problem is not known to be convex, so the result may be a local optimum.
    pub nonconvex: bool,
    /// Objective evaluations spent by the solver.
    pub evaluations: usize,
}

/// Condensed quadratic ½cᵀHc + gᵀc + κ of a convex horizon problem.
#[derive(Clone, Debug)]
pub struct CondensedQp<T: Real> {
    pub hessian: DMatrix<T>,
    pub gradient: DVector<T>,
    pub constant: T,
}

impl<T: Real> CondensedQp<T> {
    pub fn cost(&self, c: &DVector<T>) -> T {
        (c.dot(&(&self.hessian * c))) * T::lit(0.5) + self.gradient.dot(c) + self.constant
    }
}

/// Stacks the horizon into J(c) = Σₖ₌₁ʰ (zₖ − zₖʳᵉᶠ)ᵀQ(zₖ − zₖʳᵉᶠ) + Σₖ₌₀ʰ⁻¹ cₖᵀRcₖ;
/// `None` for the nonlinear structure.
pub fn condense<T: Real>(
    pred: &LiftedPredictor<T>,
    problem: &MPCProblem<T>,
    z0: &[T],
    step_index: usize,
) -> Result<Option<CondensedQp<T>>> {
    check_dim("lifted state", pred.lifted_dim(), z0.len())?;
    check_dim("Q", pred.lifted_dim(), problem.q.nrows())?;
    check_dim("R", pred.control_dim(), problem.r.nrows())?;
    let (h, m, p) = (problem.horizon, pred.control_dim(), pred.lifted_dim());
    let nc = h * m;
    let mut a = DVector::from_column_slice(z0);
    let mut s = DMatrix::<T>::zeros(p, nc);
    let mut hess = DMatrix::<T>::zeros(nc, nc);
    let mut grad = DVector::<T>::zeros(nc);
    let mut constant = T::zero();
    for k in 0..h {
        let Some(step) = pred.affine_step(problem.external_at(step_index + k))? else {
            return Ok(None);
        };
        a = &step.a * &a + &step.d;
        s = &step.a * &s;
        s.columns_mut(k * m, m).copy_from(&step.b);
        let dev = &a - DVector::from_column_slice(problem.reference_at(step_index + k + 1));
        let qs = &problem.q * &s;
        hess += s.transpose() * &qs;
        grad += qs.transpose() * &dev;
        constant += dev.dot(&(&problem.q * &dev));
    }
    for k in 0..h {
        let mut block = hess.view_mut((k * m, k * m), (m, m));
        block += &problem.r;
    }
    let two = T::lit(2.0);
    Ok(Some(CondensedQp {
        hessian: hess * two,
        gradient: grad * two,
        constant,
    }))
}

fn clamp_vec<T: Real>(x: &DVector<T>, lo: &[T], hi: &[T]) -> DVector<T> {
    DVector::from_fn(x.len(), |i, _| {
        let (l, u) = (lo[i % lo.len()], hi[i % hi.len()]);
        x[i].max(l).min(u)
    })
}

fn projected_gradient_norm<T: Real>(x: &DVector<T>, g: &DVector<T>, lo: &[T], hi: &[T]) -> T {
    (x - clamp_vec(&(x - g), lo, hi)).amax()
}

/// Solution of a box-constrained convex QP.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxQpSolution<T: Real> {
    pub x: DVector<T>,
    pub kkt_residual: T,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Minimizes ½xᵀHx + gᵀx over lo ≤ x ≤ hi (bounds repeat cyclically) with a primal
/// active-set method. H must be symmetric positive semidefinite.
pub fn solve_box_qp<T: Real>(
    hessian: &DMatrix<T>,
    gradient: &DVector<T>,
    lower: &[T],
    upper: &[T],
) -> Result<BoxQpSolution<T>> {
    let n = gradient.len();
    check_dim("QP Hessian", n, hessian.nrows())?;
    let lo: Vec<T> = (0..n).map(|i| lower[i % lower.len()]).collect();
    let hi: Vec<T> = (0..n).map(|i| upper[i % upper.len()]).collect();
    let mut x = clamp_vec(&DVector::zeros(n), &lo, &hi);
    let mut set: Vec<Bound> = (0..n)
        .map(|i| {
            if x[i] <= lo[i] {
                Bound::Lower
            } else if x[i] >= hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    let scale = hessian.amax().max(gradient.amax()).max(T::one());
    let tiny = T::lit(1e-14) * scale;
    let gtol = T::lit(1e-13) * gradient.amax().max(T::one());
    let max_iter = 50 * n + 100;
    for iter in 0..max_iter {
        let g = hessian * &x + gradient;
        let free: Vec<usize> = (0..n).filter(|&i| set[i] == Bound::Free).collect();
        let mut p = DVector::zeros(n);
        let mut unbounded_ray = false;
        if !free.is_empty() {
            let hff = hessian.select_rows(&free).select_columns(&free);
            let gf = DVector::from_fn(free.len(), |r, _| g[free[r]]);
            let pf = match hff.clone().cholesky() {
                Some(ch) => -ch.solve(&gf),
                None => {
                    // Semidefinite block: Newton step on its range, steepest descent along
                    // the kernel if the gradient has a component there.
                    let gm = DMatrix::from_column_slice(gf.len(), 1, gf.as_slice());
                    // An all-zero block yields no factorization and a zero Newton step.
                    let step = match Factorization::new(&hff, T::lit(1e-12), "free Hessian block") {
                        Ok(f) => -DVector::from_column_slice(f.solve(&gm).as_slice()),
                        Err(_) => DVector::zeros(gf.len()),
                    };
                    let resid = &hff * &step + &gf;
                    if resid.amax() > tiny {
                        unbounded_ray = true;
                        -resid
                    } else {
                        step
                    }
                }
            };
            for (r, &i) in free.iter().enumerate() {
                p[i] = pf[r];
            }
        }
        let free_grad = free.iter().fold(T::zero(), |acc, &i| acc.max(g[i].abs()));
        if !unbounded_ray && (free_grad <= gtol || p.amax() <= T::lit(1e-15) * (T::one() + x.amax())) {
            // Stationary on the working set: check multipliers of the bound constraints.
            let mut worst = None;
            let mut worst_val = -gtol;
            for i in 0..n {
                let lambda = match set[i] {
                    Bound::Lower => g[i],
                    Bound::Upper => -g[i],
                    Bound::Free => continue,
                };
                if lambda < worst_val && lo[i] < hi[i] {
                    worst_val = lambda;
                    worst = Some(i);
                }
            }
            match worst {
                Some(i) => set[i] = Bound::Free,
                None => {
                    let kkt = projected_gradient_norm(&x, &g, &lo, &hi);
                    return Ok(BoxQpSolution {
                        x,
                        kkt_residual: kkt,
                        iterations: iter + 1,
                    });
                }
            }
            continue;
        }
        let mut alpha = if unbounded_ray { T::lit(f64::INFINITY) } else { T::one() };
        let mut blocking = None;
        for &i in &free {
            let ratio = if p[i] < T::zero() {
                (lo[i] - x[i]) / p[i]
            } else if p[i] > T::zero() {
                (hi[i] - x[i]) / p[i]
            } else {
                continue;
            };
            if ratio < alpha {
                alpha = ratio;
                blocking = Some(i);
            }
        }
        if !alpha.is_finite_value() {
            return Err(Error::SolverFailure {
                step: iter,
                reason: "QP unbounded below".into(),
            });
        }
        x += &p * alpha;
        if let Some(i) = blocking {
            if p[i] < T::zero() {
                x[i] = lo[i];
                set[i] = Bound::Lower;
            } else {
                x[i] = hi[i];
                set[i] = Bound::Upper;
            }
        }
    }
    Err(Error::SolverFailure {
        step: max_iter,
        reason: "active-set iteration limit".into(),
    })
}

/// J(c) and ∇J(c) for any structure, by forward simulation and the adjoint recursion.
fn horizon_cost_grad<T: Real>(
    pred: &LiftedPredictor<T>,
    problem: &MPCProblem<T>,
    z0: &[T],
    step_index: usize,
    c: &DVector<T>,
) -> Result<(T, DVector<T>)> {
    let (h, m) = (problem.horizon, pred.control_dim());
    let mut zs = Vec::with_capacity(h + 1);
    zs.push(DVector::from_column_slice(z0));
    let mut phis = Vec::with_capacity(h);
    for k in 0..h {
        let e = problem.external_at(step_index + k);
        let ck = c.rows(k * m, m);
        zs.push(pred.step_vec(&zs[k], ck.as_slice(), e)?);
        phis.push(pred.basis.evaluate(e));
    }
    let mut cost = T::zero();
    let mut grad = DVector::zeros(h * m);
    let mut lambda = DVector::zeros(pred.lifted_dim());
    let two = T::lit(2.0);
    for k in (0..h).rev() {
        let dev = &zs[k + 1] - DVector::from_column_slice(problem.reference_at(step_index + k + 1));
        let qdev = &problem.q * &dev;
        cost += dev.dot(&qdev);
        lambda += qdev * two;
        let ck = DVector::from_column_slice(c.rows(k * m, m).as_slice());
        let rc = &problem.r * &ck;
        cost += ck.dot(&rc);
        let (a, jc) = match pred.affine_step(problem.external_at(step_index + k))? {
            Some(s) => (s.a, s.b),
            None => (
                pred.nonlinear_operator(&phis[k], ck.as_slice()).expect("nonlinear structure"),
                pred.nonlinear_control_jacobian(&phis[k], &zs[k]),
            ),
        };
        let gk = rc * two + jc.transpose() * &lambda;
        grad.rows_mut(k * m, m).copy_from(&gk);
        lambda = a.transpose() * &lambda;
    }
    Ok((cost, grad))
}

struct QuasiNewtonResult<T: Real> {
    x: DVector<T>,
    cost: T,
    kkt: T,
    evaluations: usize,
}

/// Projected BFGS with an Armijo search along the projection arc.
fn projected_bfgs<T: Real, F>(mut f: F, x0: DVector<T>, lo: &[T], hi: &[T], max_iter: usize) -> Result<QuasiNewtonResult<T>>
where
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
{
    let n = x0.len();
    let mut x = clamp_vec(&x0, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut evaluations = 1;
    let mut hinv = DMatrix::<T>::identity(n, n);
    let tol = T::lit(KKT_TOL);
    for _ in 0..max_iter {
        if projected_gradient_norm(&x, &g, lo, hi) <= tol {
            break;
        }
        let active: Vec<bool> = (0..n)
            .map(|i| {
                let (l, u) = (lo[i % lo.len()], hi[i % hi.len()]);
                (x[i] <= l && g[i] > T::zero()) || (x[i] >= u && g[i] < T::zero())
            })
            .collect();
        let mut gf = g.clone();
        for i in 0..n {
            if active[i] {
                gf[i] = T::zero();
            }
        }
        let mut d = -(&hinv * &gf);
        for i in 0..n {
            if active[i] {
                d[i] = T::zero();
            }
        }
        if d.dot(&gf) >= T::zero() {
            hinv = DMatrix::identity(n, n);
            d = -gf;
        }
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let xn = clamp_vec(&(&x + &d * alpha), lo, hi);
            let (fnew, gnew) = f(&xn)?;
            evaluations += 1;
            if fnew <= fx + T::lit(1e-4) * g.dot(&(&xn - &x)) {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            alpha *= T::lit(0.5);
        }
        let Some((xn, fnew, gnew)) = accepted else { break };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > T::lit(1e-12) * s.norm() * y.norm() {
            let rho = T::one() / sy;
            let eye = DMatrix::<T>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        let stalled = (fx - fnew).abs() <= T::lit(1e-15) * fx.abs().max(T::one()) && s.amax() <= T::lit(1e-15);
        x = xn;
        fx = fnew;
        g = gnew;
        if stalled {
            break;
        }
    }
    let kkt = projected_gradient_norm(&x, &g, lo, hi);
    Ok(QuasiNewtonResult {
        x,
        cost: fx,
        kkt,
        evaluations,
    })
}

fn unstack<T: Real>(c: &DVector<T>, m: usize) -> Vec<Vec<T>> {
    c.as_slice().chunks(m).map(<[T]>::to_vec).collect()
}

/// Solves the horizon problem starting at closed-loop step `step_index`.
pub fn solve_horizon<T: Real>(
    pred: &LiftedPredictor<T>,
    problem: &MPCProblem<T>,
    z0: &[T],
    step_index: usize,
) -> Result<HorizonSolution<T>> {
    problem.validate()?;
    check_dim("bounds", pred.control_dim(), problem.lower.len())?;
    let m = pred.control_dim();
    let n = problem.horizon * m;
    if let Some(qp) = condense(pred, problem, z0, step_index)? {
        let min_eig = qp.hessian.clone().symmetric_eigenvalues().min();
        let sol = solve_box_qp(&qp.hessian, &qp.gradient, &problem.lower, &problem.upper)?;
        let tol = T::lit(KKT_TOL) * qp.gradient.amax().max(T::one());
        if !(sol.kkt_residual <= tol) {
            return Err(Error::SolverFailure {
                step: step_index,
                reason: format!("KKT residual {} above tolerance", sol.kkt_residual),
            });
        }
        return Ok(HorizonSolution {
            controls: unstack(&sol.x, m),
            cost: qp.cost(&sol.x),
            kkt_residual: sol.kkt_residual,
            min_hessian_eigenvalue: Some(min_eig),
            nonconvex: false,
            evaluations: sol.iterations,
        });
    }
    let mut rng = trajectory_rng(problem.seed, step_index);
    let mut best: Option<QuasiNewtonResult<T>> = None;
    let mut evaluations = 0;
    for restart in 0..NONLINEAR_RESTARTS {
        let x0 = if restart == 0 {
            DVector::zeros(n)
        } else {
            DVector::from_fn(n, |i, _| {
                let (l, u) = (problem.lower[i % m].to_f64_lossy(), problem.upper[i % m].to_f64_lossy());
                T::lit(if u > l { rng.random_range(l..=u) } else { l })
            })
        };
        let r = projected_bfgs(
            |c| horizon_cost_grad(pred, problem, z0, step_index, c),
            x0,
            &problem.lower,
            &problem.upper,
            200,
        )?;
        evaluations += r.evaluations;
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one restart");
    if !best.cost.is_finite_value() {
        return Err(Error::SolverFailure {
            step: step_index,
            reason: "non-finite horizon cost".into(),
        });
    }
    Ok(HorizonSolution {
        controls: unstack(&best.x, m),
        cost: best.cost,
        kkt_residual: best.kkt,
        min_hessian_eigenvalue: None,
        nonconvex: true,
        evaluations,
    })
}

/// Closed-loop record of one MPC run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingResult<T: Real> {
    /// x₀ … x_N.
    pub states: Vec<Vec<T>>,
    /// c₀ … c_{N−1}, the first element of each horizon solution.
    pub controls: Vec<Vec<T>>,
    /// Wall time per horizon solve in seconds.
    pub solve_times: Vec<f64>,
    pub evaluations: Vec<usize>,
    pub min_hessian_eigenvalues: Vec<Option<f64>>,
    pub mean_tracking_error: f64,
}

/// Receding-horizon loop with the exact [`solve_horizon`].
pub fn run_mpc<T: Real, S: ControlledSystem<T>>(
    pred: &LiftedPredictor<T>,
    problem: &MPCProblem<T>,
    x0: &[T],
    n_steps: usize,
    system: &S,
) -> Result<TrackingResult<T>> {
    run_mpc_with(pred, problem, x0, n_steps, system, solve_horizon)
}

/// Receding-horizon loop: lift, solve, apply the first control to the true system, repeat.
pub fn run_mpc_with<T, S, F>(
    pred: &LiftedPredictor<T>,
    problem: &MPCProblem<T>,
    x0: &[T],
    n_steps: usize,
    system: &S,
    mut solver: F,
) -> Result<TrackingResult<T>>
where
    T: Real,
    S: ControlledSystem<T>,
    F: FnMut(&LiftedPredictor<T>, &MPCProblem<T>, &[T], usize) -> Result<HorizonSolution<T>>,
{
    problem.validate()?;
    check_dim("initial state", system.state_dim(), x0.len())?;
    let mut states = vec![x0.to_vec()];
    let mut controls = Vec::with_capacity(n_steps);
    let mut solve_times = Vec::with_capacity(n_steps);
    let mut evaluations = Vec::with_capacity(n_steps);
    let mut min_eigs = Vec::with_capacity(n_steps);
    for i in 0..n_steps {
        let z = pred.dictionary().lift(&states[i])?;
        let start = Instant::now();
        let sol = solver(pred, problem, &z, i).map_err(|e| match e {
            Error::SolverFailure { reason, .. } => Error::SolverFailure { step: i, reason },
            other => Error::SolverFailure {
                step: i,
                reason: other.to_string(),
            },
        })?;
        solve_times.push(start.elapsed().as_secs_f64());
        let first = sol.controls.first().ok_or(Error::SolverFailure {
            step: i,
            reason: "empty control sequence".into(),
        })?;
        check_dim("control", pred.control_dim(), first.len())?;
        let c: Vec<T> = first
            .iter()
            .zip(problem.lower.iter().zip(&problem.upper))
            .map(|(v, (l, u))| v.max(*l).min(*u))
            .collect();
        let next = system
            .step(&states[i], &c, problem.external_at(i))
            .map_err(|e| Error::SolverFailure {
                step: i,
                reason: e.to_string(),
            })?;
        states.push(next);
        controls.push(c);
        evaluations.push(sol.evaluations);
        min_eigs.push(sol.min_hessian_eigenvalue.map(|v| v.to_f64_lossy()));
    }
    let block = pred.dictionary().state_block();
    let reference: Vec<Vec<T>> = (0..=n_steps)
        .map(|i| problem.reference_at(i)[block.clone()].to_vec())
        .collect();
    let tracked: Vec<usize> = (0..system.state_dim()).collect();
    let mte = mean_tracking_error(&states, &reference, &tracked)?.to_f64_lossy();
    Ok(TrackingResult {
        states,
        controls,
        solve_times,
        evaluations,
        min_hessian_eigenvalues: min_eigs,
        mean_tracking_error: mte,
    })
}

/// Mean over tracked coordinates of max_i|x_i − x_i^ref| / max_i|x_i^ref|.
pub fn mean_tracking_error<T: Real>(states: &[Vec<T>], reference: &[Vec<T>], tracked: &[usize]) -> Result<T> {
    if tracked.is_empty() {
        return Err(Error::InvalidParameter("no tracked coordinates".into()));
    }
    let len = states.len().min(reference.len());
    if len == 0 {
        return Err(Error::EmptyDataSet);
    }
    let mut total = T::zero();
    for &d in tracked {
        let mut dev = T::zero();
        let mut peak = T::zero();
        for i in 0..len {
            dev = dev.max((states[i][d] - reference[i][d]).abs());
            peak = peak.max(reference[i][d].abs());
        }
        if peak <= T::zero() {
            return Err(Error::InvalidParameter(format!("reference coordinate {d} is identically zero")));
        }
        total += dev / peak;
    }
    Ok(total / T::from_usize_lossy(tracked.len()))
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl<T: Real> TrackingResult<T> {
    pub fn median_solve_time(&self) -> Option<f64> {
        median(&self.solve_times)
    }

    pub fn median_evaluations(&self) -> Option<f64> {
        median(&self.evaluations.iter().map(|&e| e as f64).collect::<Vec<_>>())
    }

    /// `step, x_…, c_…, solve_time_ms`; with `record_wall_time` off the last column holds
    /// solver evaluation counts (`solve_evaluations`) so the file is reproducible.
    pub fn write_csv(&self, path: &Path, record_wall_time: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("c_{i}")));
        header.push(if record_wall_time { "solve_time_ms" } else { "solve_evaluations" }.into());
        w.write_record(&header)?;
        for (i, x) in self.states.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            match self.controls.get(i) {
                Some(c) => {
                    rec.extend(c.iter().map(|v| v.to_string()));
                    rec.push(if record_wall_time {
                        (self.solve_times[i] * 1e3).to_string()
                    } else {
                        self.evaluations[i].to_string()
                    });
                }
                None => rec.extend(std::iter::repeat_n(String::new(), m + 1)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{structure, mean_tracking_error, median_solve_time, median_solve_evaluations}`.
    pub fn summary(&self, structure: Structure, record_wall_time: bool) -> serde_json::Value {
        serde_json::json!({
            "structure": structure.name(),
            "mean_tracking_error": crate::diagnostics::round_sig(self.mean_tracking_error),
            "median_solve_time": if record_wall_time {
                self.median_solve_time().map(crate::diagnostics::round_sig)
            } else {
                None
            },
            "median_solve_evaluations": self.median_evaluations(),
        })
    }
}

/// Parameters of the oscillator tracking benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub system: Oscillator,
    pub training_trajectories: usize,
    pub training_steps: usize,
    pub horizon: usize,
    pub steps: usize,
    pub control_bound: f64,
    pub state_weights: [f64; 2],
    pub control_weights: [f64; 2],
    pub rbf_grid: [usize; 2],
    pub degree: usize,
    pub combiner: CombinationConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            system: Oscillator::default(),
            training_trajectories: 200,
            training_steps: 20,
            horizon: 5,
            steps: 180,
            control_bound: 2.0,
            state_weights: [1.0, 1.0],
            control_weights: [0.1, 0.1],
            rbf_grid: [6, 3],
            degree: 3,
            combiner: CombinationConfig {
                criterion: crate::combiner::StoppingCriterion::SuccessiveDifference,
                accelerate: true,
                ..CombinationConfig::default()
            },
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.training_trajectories < 1 || self.training_steps < 1 || self.steps < 1 || self.horizon < 1 {
            return Err(Error::InvalidParameter("benchmark sizes must be positive".into()));
        }
        if !(self.control_bound > 0.0) {
            return Err(Error::InvalidParameter("control bound must be positive".into()));
        }
        if self.degree < 1 {
            return Err(Error::InvalidParameter("dictionary degree must be at least 1".into()));
        }
        self.combiner.validate()
    }
}

/// Random-input training data `(x, c, e) → x⁺` from the oscillator.
pub fn oscillator_training_data(config: &BenchmarkConfig, seed: u64) -> Result<DataSet<f64>> {
    let b = config.control_bound;
    let runs = (0..config.training_trajectories)
        .map(|j| {
            let mut rng = trajectory_rng(seed, j);
            let mut x = vec![rng.random_range(-1.5..=1.5), rng.random_range(-1.5..=1.5)];
            let mut rows = Vec::with_capacity(config.training_steps);
            for _ in 0..config.training_steps {
                let c = vec![rng.random_range(-b..=b), rng.random_range(-b..=b)];
                let e = vec![rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI)];
                let next = config.system.step(&x, &c, &e)?;
                rows.push((x.clone(), c, e, next.clone()));
                x = next;
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<_> = runs.into_iter().flatten().collect();
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let cs: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let es: Vec<Vec<f64>> = rows.iter().map(|r| r.2.clone()).collect();
    let ys: Vec<Vec<f64>> = rows.iter().map(|r| r.3.clone()).collect();
    DataSet::new(&xs, &ys)?.with_controls(&cs)?.with_externals(&es)
}

/// `[1, x, x², …, RBFs]` with centers on a grid spanning the training states.
pub fn oscillator_dictionary(data: &DataSet<f64>, config: &BenchmarkConfig) -> Result<Dictionary<f64>> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in 0..data.len() {
        for a in 0..2 {
            lo[a] = lo[a].min(data.input(i)[a]);
            hi[a] = hi[a].max(data.input(i)[a]);
        }
    }
    let (centers, width) = Dictionary::<f64>::grid_centers(&lo, &hi, &config.rbf_grid)?;
    Dictionary::polynomial_rbf(2, config.degree, centers, width)
}

/// Reference states under the reference inputs with a constant external input e = 0.
pub fn oscillator_reference(config: &BenchmarkConfig) -> Result<Vec<Vec<f64>>> {
    let mut x = vec![0.5, 0.0];
    let mut out = vec![x.clone()];
    for k in 0..config.steps + config.horizon {
        let t = k as f64;
        let c = vec![
            (2.0 * std::f64::consts::PI * t / 60.0).sin(),
            0.5 * (2.0 * std::f64::consts::PI * t / 45.0).cos(),
        ];
        x = config.system.step(&x, &c, &[0.0])?;
        out.push(x.clone());
    }
    Ok(out)
}

/// Outcome of one structure on one benchmark seed.
#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    pub structure: Structure,
    pub predictor: LiftedPredictor<f64>,
    pub result: TrackingResult<f64>,
}

/// Trains every requested structure on the same data and tracks the reference while the
/// external input is redrawn uniformly from [−π, π] at every step.
pub fn oscillator_benchmark(
    config: &BenchmarkConfig,
    structures: &[Structure],
    seed: u64,
) -> Result<Vec<BenchmarkRun>> {
    config.validate()?;
    let data = oscillator_training_data(config, seed)?;
    let dictionary = oscillator_dictionary(&data, config)?;
    let reference = oscillator_reference(config)?;
    let mut rng = trajectory_rng(seed, usize::MAX >> 1);
    let externals: Vec<Vec<f64>> = (0..config.steps + config.horizon)
        .map(|_| vec![rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI)])
        .collect();
    let b = config.control_bound;
    let mut problem = MPCProblem::tracking(
        &dictionary,
        config.horizon,
        &config.state_weights,
        &config.control_weights,
        vec![-b, -b],
        vec![b, b],
        &reference,
        externals,
    )?;
    problem.seed = seed;
    structures
        .iter()
        .map(|&structure| {
            let predictor = fit_predictor(structure, &data, &dictionary, ExternalBasis::Trig, &config.combiner)?;
            let result = run_mpc(&predictor, &problem, &reference[0], config.steps, &config.system)?;
            Ok(BenchmarkRun {
                structure,
                predictor,
                result,
            })
        })
        .collect()
}

/// Predictor view of a lifted model reading control and external from the sample.
impl<T: Real> crate::hypothesis::Predictor<T> for LiftedPredictor<T> {
    fn input_dim(&self) -> usize {
        self.lifted_dim()
    }

    fn output_dim(&self) -> usize {
        self.lifted_dim()
    }

    fn predict_sample(&self, s: &Sample<'_, T>) -> Result<Vec<T>> {
        predict_lifted(self, s.state, s.control, s.external)
    }
}
