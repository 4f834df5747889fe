//! Iterative combination of two learners, its accelerated variant and the residual-learning
//! baseline.
//!
//! Iterations are counted from 1. Iterate n is Fⁿ = F_ℋⁿ + F_𝒢ⁿ with F_𝒢ⁿ = P_𝒢(F − F_ℋⁿ),
//! F_ℋ¹ = P_ℋ(F) and F_ℋⁿ⁺¹ = P_ℋ(F − F_𝒢ⁿ), so F − Fⁿ = [(I − P_𝒢)(I − P_ℋ)]ⁿ F.

use crate::error::{check_dim, Error, Result};
use crate::hypothesis::{
    mean_row_distance, values_inner, values_norm, Blend, DataSet, Fit, InnerProductContext,
    Learner, Predictor, Sample,
};
use crate::scalar::Real;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingCriterion {
    /// (1/N)Σ‖yⁿ_i − y_i‖.
    PredictionError,
    /// (1/N)Σ‖yⁿ_i − yⁿ⁻¹_i‖.
    SuccessiveDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// F_ℋ¹ = P_ℋ(F).
    Projection,
    /// F_ℋ¹ = 0.
    Zero,
}

/// Which summands the acceleration step relaxes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// F_𝒢 and F_ℋ together, i.e. Fⁿ ← Fⁿ⁻¹ + t_F(Fⁿ − Fⁿ⁻¹).
    Both,
    /// F_𝒢 only.
    GeneralOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombinationConfig {
    /// Stopping tolerance relative to ‖F‖_D.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub criterion: StoppingCriterion,
    pub accelerate: bool,
    pub initialization: Initialization,
    pub relaxation: Relaxation,
}

impl Default for CombinationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iterations: 500,
            criterion: StoppingCriterion::PredictionError,
            accelerate: false,
            initialization: Initialization::Projection,
            relaxation: Relaxation::Both,
        }
    }
}

impl CombinationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord<T> {
    pub n: usize,
    /// ‖F − Fⁿ‖_D.
    pub residual_norm: T,
    /// ‖Fⁿ − Fⁿ⁻¹‖_D, with F⁰ the initial F_ℋ.
    pub successive_difference: T,
    pub t_f: Option<T>,
    /// (1/N)Σ‖yⁿ_i − y_i‖.
    pub prediction_error: T,
    /// (1/N)Σ‖yⁿ_i − yⁿ⁻¹_i‖.
    pub mean_successive_difference: T,
}

/// Sum of two predictors.
#[derive(Clone, Debug)]
pub struct SumModel<A, B> {
    pub first: A,
    pub second: B,
}

impl<T: Real, A: Predictor<T>, B: Predictor<T>> Predictor<T> for SumModel<A, B> {
    fn input_dim(&self) -> usize {
        self.first.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.first.output_dim()
    }

    fn predict_sample(&self, sample: &Sample<'_, T>) -> Result<Vec<T>> {
        let mut a = self.first.predict_sample(sample)?;
        let b = self.second.predict_sample(sample)?;
        check_dim("summed predictions", a.len(), b.len())?;
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
        Ok(a)
    }
}

/// Iterates F_𝒢ⁿ, F_ℋⁿ of a combination run with their data evaluations.
#[derive(Clone, Debug)]
pub struct CombinationState<T: Real, G, H> {
    pub model_g: G,
    pub model_h: H,
    pub values_g: DMatrix<T>,
    pub values_h: DMatrix<T>,
    pub n: usize,
    pub history: Vec<IterationRecord<T>>,
    pub converged: bool,
    /// Residual failed to decrease for five consecutive iterations above the numerical floor.
    pub stagnation_warning: bool,
    pub warnings: Vec<String>,
    /// ‖F‖_D of the targets.
    pub target_norm: T,
}

impl<T: Real, G: Clone, H: Clone> CombinationState<T, G, H> {
    /// Fⁿ on the data.
    pub fn combined_values(&self) -> DMatrix<T> {
        &self.values_g + &self.values_h
    }

    /// Fⁿ = F_𝒢ⁿ + F_ℋⁿ as a predictor.
    pub fn combined_model(&self) -> SumModel<G, H> {
        SumModel {
            first: self.model_g.clone(),
            second: self.model_h.clone(),
        }
    }

    pub fn last(&self) -> Option<&IterationRecord<T>> {
        self.history.last()
    }

    /// Writes the history CSV `n,residual_norm,successive_difference,t_F`.
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        write_history_csv(&self.history, path)
    }
}

/// Writes history records; floats use 12 significant digits, undefined t_F is left empty.
pub fn write_history_csv<T: Real>(history: &[IterationRecord<T>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "residual_norm", "successive_difference", "t_F"])?;
    for r in history {
        w.write_record([
            r.n.to_string(),
            format_sig(r.residual_norm.to_f64_lossy()),
            format_sig(r.successive_difference.to_f64_lossy()),
            r.t_f.map(|t| format_sig(t.to_f64_lossy())).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scientific notation with 12 significant digits.
pub fn format_sig(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopDecision<T> {
    pub stop: bool,
    pub value: T,
}

/// Evaluates the configured criterion on the latest record against ε·‖F‖_D.
pub fn check_stopping<T: Real, G, H>(
    state: &CombinationState<T, G, H>,
    config: &CombinationConfig,
) -> StopDecision<T> {
    let Some(last) = state.history.last() else {
        return StopDecision {
            stop: false,
            value: T::max_value().unwrap_or_else(T::one),
        };
    };
    let value = match config.criterion {
        StoppingCriterion::PredictionError => last.prediction_error,
        StoppingCriterion::SuccessiveDifference => last.mean_successive_difference,
    };
    StopDecision {
        stop: value <= T::lit(config.epsilon) * state.target_norm,
        value,
    }
}

/// t_F = ⟨r_prev, r_prev − r_curr⟩ / ‖r_prev − r_curr‖², the minimiser of
/// ‖r_prev + t(r_curr − r_prev)‖ over t.
pub fn compute_t_f<T: Real>(
    r_prev: &DMatrix<T>,
    r_curr: &DMatrix<T>,
    ctx: &InnerProductContext<'_, T>,
) -> Result<T> {
    let d = r_prev - r_curr;
    let den = ctx.inner(&d, &d)?;
    if den <= T::zero() {
        return Err(Error::StagnantResidual);
    }
    Ok(ctx.inner(r_prev, &d)? / den)
}

fn check_learners<T: Real, G: Learner<T>, H: Learner<T>>(
    data: &DataSet<T>,
    g: &G,
    h: &H,
) -> Result<()> {
    check_dim("learner samples", data.len(), g.sample_count())?;
    check_dim("learner samples", data.len(), h.sample_count())?;
    check_dim("learner outputs", data.target_dim(), g.target_dim())?;
    check_dim("learner outputs", data.target_dim(), h.target_dim())?;
    Ok(())
}

struct Tracker<T: Real> {
    stalled: usize,
    floor: T,
}

impl<T: Real> Tracker<T> {
    fn new(target_norm: T) -> Self {
        Self {
            stalled: 0,
            floor: T::lit(1e3) * T::default_epsilon() * target_norm,
        }
    }

    fn observe<G, H>(&mut self, state: &mut CombinationState<T, G, H>) {
        let len = state.history.len();
        if len < 2 {
            return;
        }
        let (prev, curr) = (&state.history[len - 2], &state.history[len - 1]);
        let slack = T::lit(1e-10) * state.target_norm;
        if curr.residual_norm > prev.residual_norm + slack {
            state.warnings.push(format!(
                "residual increased at iteration {}: {:e} -> {:e}",
                curr.n, prev.residual_norm, curr.residual_norm
            ));
        }
        if curr.residual_norm >= prev.residual_norm && curr.residual_norm > self.floor {
            self.stalled += 1;
            if self.stalled >= 5 && !state.stagnation_warning {
                state.stagnation_warning = true;
                state
                    .warnings
                    .push(format!("residual stagnant for 5 iterations at n = {}", curr.n));
            }
        } else {
            self.stalled = 0;
        }
    }
}

fn record<T: Real>(
    n: usize,
    targets: &DMatrix<T>,
    combined: &DMatrix<T>,
    previous: &DMatrix<T>,
    t_f: Option<T>,
) -> Result<IterationRecord<T>> {
    let r = values_norm(&(targets - combined));
    let d = values_norm(&(combined - previous));
    if !r.is_finite_value() || !d.is_finite_value() {
        return Err(Error::NonFinite("combination iterate"));
    }
    Ok(IterationRecord {
        n,
        residual_norm: r,
        successive_difference: d,
        t_f,
        prediction_error: mean_row_distance(combined, targets)?,
        mean_successive_difference: mean_row_distance(combined, previous)?,
    })
}

fn initial<T: Real, G: Learner<T>, H: Learner<T>>(
    data: &DataSet<T>,
    g: &G,
    h: &H,
    config: &CombinationConfig,
) -> Result<CombinationState<T, G::Model, H::Model>> {
    config.validate()?;
    check_learners(data, g, h)?;
    let targets = data.targets();
    let (model_h, values_h) = match config.initialization {
        Initialization::Projection => {
            let Fit { model, values } = h.project(targets)?;
            (model, values)
        }
        Initialization::Zero => (h.zero_model(), DMatrix::zeros(data.len(), data.target_dim())),
    };
    Ok(CombinationState {
        model_g: g.zero_model(),
        model_h,
        values_g: DMatrix::zeros(data.len(), data.target_dim()),
        values_h,
        n: 0,
        history: Vec::new(),
        converged: false,
        stagnation_warning: false,
        warnings: Vec::new(),
        target_norm: values_norm(targets),
    })
}

/// Single pass: fit `first` to F, then `correction` to the leftover.
///
/// The first learner occupies the ℋ slot of the returned state, like the initialization of the
/// iterative scheme.
pub fn residual_learning<T: Real, A: Learner<T>, B: Learner<T>>(
    data: &DataSet<T>,
    first: &A,
    correction: &B,
) -> Result<CombinationState<T, B::Model, A::Model>> {
    check_learners(data, correction, first)?;
    let targets = data.targets();
    let a = first.project(targets)?;
    let b = correction.project(&(targets - &a.values))?;
    let combined = &a.values + &b.values;
    let rec = record(1, targets, &combined, &a.values, None)?;
    Ok(CombinationState {
        model_g: b.model,
        model_h: a.model,
        values_g: b.values,
        values_h: a.values,
        n: 1,
        history: vec![rec],
        converged: false,
        stagnation_warning: false,
        warnings: Vec::new(),
        target_norm: values_norm(targets),
    })
}

/// Runs the iterative scheme; dispatches to the accelerated variant when configured.
pub fn iterate<T: Real, G: Learner<T>, H: Learner<T>>(
    data: &DataSet<T>,
    g: &G,
    h: &H,
    config: &CombinationConfig,
) -> Result<CombinationState<T, G::Model, H::Model>> {
    iterate_with(data, g, h, config, |_| {})
}

/// [`iterate`] with a callback invoked after every recorded iteration.
pub fn iterate_with<T, G, H, O>(
    data: &DataSet<T>,
    g: &G,
    h: &H,
    config: &CombinationConfig,
    mut observer: O,
) -> Result<CombinationState<T, G::Model, H::Model>>
where
    T: Real,
    G: Learner<T>,
    H: Learner<T>,
    O: FnMut(&CombinationState<T, G::Model, H::Model>),
{
    if config.accelerate {
        return accelerated(data, g, h, config, &mut observer);
    }
    let mut state = initial(data, g, h, config)?;
    let targets = data.targets();
    let mut tracker = Tracker::new(state.target_norm);
    let mut previous = state.values_h.clone();
    for n in 1..=config.max_iterations {
        if n > 1 {
            let fit = h.project(&(targets - &state.values_g))?;
            state.model_h = fit.model;
            state.values_h = fit.values;
        }
        let fit = g.project(&(targets - &state.values_h))?;
        state.model_g = fit.model;
        state.values_g = fit.values;
        let combined = state.combined_values();
        state.history.push(record(n, targets, &combined, &previous, None)?);
        state.n = n;
        tracker.observe(&mut state);
        observer(&state);
        if check_stopping(&state, config).stop {
            state.converged = true;
            break;
        }
        previous = combined;
    }
    Ok(state)
}

/// Accelerated iteration; requires `config.accelerate`.
pub fn iterate_accelerated<T: Real, G: Learner<T>, H: Learner<T>>(
    data: &DataSet<T>,
    g: &G,
    h: &H,
    config: &CombinationConfig,
) -> Result<CombinationState<T, G::Model, H::Model>> {
    if !config.accelerate {
        return Err(Error::InvalidParameter(
            "iterate_accelerated requires accelerate = true".into(),
        ));
    }
    accelerated(data, g, h, config, &mut |_| {})
}

fn accelerated<T, G, H, O>(
    data: &DataSet<T>,
    g: &G,
    h: &H,
    config: &CombinationConfig,
    observer: &mut O,
) -> Result<CombinationState<T, G::Model, H::Model>>
where
    T: Real,
    G: Learner<T>,
    H: Learner<T>,
    O: FnMut(&CombinationState<T, G::Model, H::Model>),
{
    let mut state = initial(data, g, h, config)?;
    let targets = data.targets();
    let ctx = InnerProductContext::new(data);
    let mut tracker = Tracker::new(state.target_norm);
    let mut previous = state.values_h.clone();
    // Models and values of the previous recorded iterate.
    let mut prev_parts: Option<(G::Model, DMatrix<T>, H::Model, DMatrix<T>)> = None;
    for n in 1..=config.max_iterations {
        if n > 1 {
            let fit = h.project(&(targets - &state.values_g))?;
            state.model_h = fit.model;
            state.values_h = fit.values;
        }
        let fit = g.project(&(targets - &state.values_h))?;
        state.model_g = fit.model;
        state.values_g = fit.values;
        let mut t_f = None;
        if let Some((pg, pgv, ph, phv)) = &prev_parts {
            let r_prev = targets - &previous;
            let r_curr = targets - state.combined_values();
            match compute_t_f(&r_prev, &r_curr, &ctx) {
                Ok(t) => {
                    t_f = Some(t);
                    state.model_g = state.model_g.blend(pg, t)?;
                    state.values_g = &state.values_g * t + pgv * (T::one() - t);
                    if config.relaxation == Relaxation::Both {
                        state.model_h = state.model_h.blend(ph, t)?;
                        state.values_h = &state.values_h * t + phv * (T::one() - t);
                    }
                }
                Err(Error::StagnantResidual) => {}
                Err(e) => return Err(e),
            }
        }
        let combined = state.combined_values();
        state.history.push(record(n, targets, &combined, &previous, t_f)?);
        state.n = n;
        tracker.observe(&mut state);
        observer(&state);
        if check_stopping(&state, config).stop {
            state.converged = true;
            break;
        }
        previous = combined;
        prev_parts = Some((
            state.model_g.clone(),
            state.values_g.clone(),
            state.model_h.clone(),
            state.values_h.clone(),
        ));
    }
    Ok(state)
}

/// ⟨a, b⟩_D for value matrices, exposed for diagnostics on iterates.
pub fn inner_values<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<T> {
    values_inner(a, b, a.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{VectorFeatureMap, VectorLeastSquaresLearner};

    type L = VectorLeastSquaresLearner<f64>;

    /// ℝ² as functions on one sample; spans of constant vectors.
    fn plane(target: [f64; 2], g: [f64; 2], h: [f64; 2]) -> (DataSet<f64>, L, L) {
        let d = DataSet::new(&[vec![0.0]], &[target.to_vec()]).unwrap();
        let lg = L::new(&d, VectorFeatureMap::constant("g", 1, DMatrix::from_column_slice(2, 1, &g)))
            .unwrap();
        let lh = L::new(&d, VectorFeatureMap::constant("h", 1, DMatrix::from_column_slice(2, 1, &h)))
            .unwrap();
        (d, lg, lh)
    }

    fn toy() -> (DataSet<f64>, L, L) {
        let s = 0.5f64.sqrt();
        plane([0.0, 1.0], [1.0, 0.0], [s, s])
    }

    #[test]
    fn residual_learning_toy_error_half() {
        let (d, lg, lh) = toy();
        let st = residual_learning(&d, &lh, &lg).unwrap();
        assert!((st.values_h[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((st.values_g[(0, 0)] + 0.5).abs() < 1e-15);
        assert!((st.history[0].residual_norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn residual_learning_exact_cases() {
        let (d, lg, lh) = plane([2.0, 0.0], [1.0, 0.0], [0.6, 0.8]);
        assert!(residual_learning(&d, &lg, &lh).unwrap().history[0].residual_norm < 1e-15);
        let (d, lg, lh) = plane([2.0, -3.0], [1.0, 0.0], [0.0, 1.0]);
        assert!(residual_learning(&d, &lg, &lh).unwrap().history[0].residual_norm < 1e-15);
    }

    #[test]
    fn toy_iterates_halve() {
        let (d, lg, lh) = toy();
        let cfg = CombinationConfig {
            max_iterations: 12,
            epsilon: 1e-30,
            ..Default::default()
        };
        let st = iterate(&d, &lg, &lh, &cfg).unwrap();
        assert_eq!(st.history.len(), 12);
        assert_eq!(st.n, 12);
        for r in &st.history {
            assert!((r.residual_norm - 0.5f64.powi(r.n as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_spaces_converge_in_one_iteration() {
        let (d, lg, lh) = plane([2.0, -3.0], [1.0, 0.0], [0.0, 1.0]);
        let st = iterate(&d, &lg, &lh, &CombinationConfig::default()).unwrap();
        assert!(st.converged);
        assert_eq!(st.n, 1);
    }

    #[test]
    fn accelerated_toy_one_step() {
        let (d, lg, lh) = toy();
        let cfg = CombinationConfig {
            accelerate: true,
            ..Default::default()
        };
        let st = iterate_accelerated(&d, &lg, &lh, &cfg).unwrap();
        assert!(st.converged);
        assert_eq!(st.n, 2);
        assert!((st.history[1].t_f.unwrap() - 2.0).abs() < 1e-12);
        assert!(st.history[1].residual_norm < 1e-12);
    }

    #[test]
    fn general_only_relaxation_needs_extra_iteration() {
        let (d, lg, lh) = toy();
        let cfg = CombinationConfig {
            accelerate: true,
            relaxation: Relaxation::GeneralOnly,
            ..Default::default()
        };
        let st = iterate(&d, &lg, &lh, &cfg).unwrap();
        assert!(st.history[1].residual_norm > 0.3);
        assert!(st.converged);
    }

    #[test]
    fn accelerated_requires_flag() {
        let (d, lg, lh) = toy();
        assert!(iterate_accelerated(&d, &lg, &lh, &CombinationConfig::default()).is_err());
    }

    #[test]
    fn t_f_examples() {
        let d = DataSet::<f64>::new(&[vec![0.0]], &[vec![0.0, 0.0]]).unwrap();
        let ctx = InnerProductContext::new(&d);
        let a = DMatrix::<f64>::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!((compute_t_f(&a, &(&a * 0.5), &ctx).unwrap() - 2.0).abs() < 1e-15);
        assert!((compute_t_f(&a, &(&a * 0.0), &ctx).unwrap() - 1.0).abs() < 1e-15);
        let b = DMatrix::from_row_slice(1, 2, &[-2.0, 1.0]);
        assert!((compute_t_f(&a, &b, &ctx).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(compute_t_f(&a, &a, &ctx), Err(Error::StagnantResidual)));
    }

    #[test]
    fn stopping_examples() {
        let (d, lg, lh) = toy();
        let mut st = initial(&d, &lg, &lh, &CombinationConfig::default()).unwrap();
        st.target_norm = 1.0;
        let cfg = CombinationConfig {
            epsilon: 1e-4,
            ..Default::default()
        };
        let mk = |r: f64, s: f64| IterationRecord {
            n: 1,
            residual_norm: r,
            successive_difference: s,
            t_f: None,
            prediction_error: r,
            mean_successive_difference: s,
        };
        st.history.push(mk(0.0, 1.0));
        assert!(check_stopping(&st, &cfg).stop);
        st.history.push(mk(1e-3, 1.0));
        assert!(!check_stopping(&st, &cfg).stop);
        let cfg10 = CombinationConfig {
            criterion: StoppingCriterion::SuccessiveDifference,
            ..cfg
        };
        st.history.push(mk(1.0, 0.0));
        assert!(check_stopping(&st, &cfg10).stop);
    }

    #[test]
    fn stagnation_flags_warning() {
        // A learner pair whose projections never change: H = G = span{e1}, F = e2.
        let (d, lg, lh) = plane([0.0, 1.0], [1.0, 0.0], [1.0, 0.0]);
        let cfg = CombinationConfig {
            max_iterations: 10,
            ..Default::default()
        };
        let st = iterate(&d, &lg, &lh, &cfg).unwrap();
        assert!(st.stagnation_warning);
        assert!(!st.converged);
    }

    #[test]
    fn zero_initialization_converges_too() {
        let (d, lg, lh) = toy();
        let cfg = CombinationConfig {
            initialization: Initialization::Zero,
            ..Default::default()
        };
        let st = iterate(&d, &lg, &lh, &cfg).unwrap();
        assert!(st.converged);
        assert!(st.history[0].residual_norm > 0.9);
    }

    #[test]
    fn invalid_config_rejected() {
        let (d, lg, lh) = toy();
        let bad = CombinationConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(iterate(&d, &lg, &lh, &bad).is_err());
        let bad = CombinationConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(iterate(&d, &lg, &lh, &bad).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let (d, lg, lh) = toy();
        let cfg = CombinationConfig {
            accelerate: true,
            ..Default::default()
        };
        let st = iterate(&d, &lg, &lh, &cfg).unwrap();
        let path = std::env::temp_dir().join(format!("modcomb-hist-{}.csv", std::process::id()));
        st.write_history_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,residual_norm,successive_difference,t_F");
        assert!(lines[1].ends_with(','));
        assert!(lines[2].ends_with("2.00000000000e0"));
        std::fs::remove_file(&path).ok();
    }
}
