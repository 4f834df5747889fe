//! End-to-end studies: convergence rate against ν, the reaction-diffusion benchmark and the
//! ℝ² suboptimality example. Each returns the raw numbers behind its tables and figures.

use crate::combiner::{
    iterate, iterate_with, residual_learning, CombinationConfig, IterationRecord,
};
use crate::diagnostics::{closed_form_c_nu, convergence_slope, min_angle, oracle_values, SubspaceBasis};
use crate::error::{Error, Result};
use crate::hypothesis::{values_norm, DataSet, Predictor, VectorLeastSquaresLearner};
use crate::koopman::{fit_koopman, Dictionary, KoopmanLearner, KoopmanModel};
use crate::systems::{
    domain_relative_error, generate_dataset, laplacian_space_1d, random_reaction_diffusion_1d,
    reaction_term, rollout, stepwise_error, Grid1D, Grid2D, InitialLaw, TrajectorySet,
};
use crate::testbed::{plane_toy, NuBed, RateDesign};
use serde::{Deserialize, Serialize};

/// Relative error floor below which convergence points are left out of slope fits.
pub const SLOPE_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuRateConfig {
    pub nus: Vec<f64>,
    pub dz: f64,
    pub dt: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub fields: usize,
    /// Unit impulses instead of random fields.
    pub impulse_design: bool,
    pub combiner: CombinationConfig,
}

impl Default for NuRateConfig {
    fn default() -> Self {
        Self {
            nus: vec![0.0, 0.5, 1.0, 2.0],
            dz: 0.1,
            dt: 1e-3,
            // μ₁ ≠ μ₂ keeps F = μ₁δ₁ + μ₂δ₂ outside every ℋ_ν with ν in the sweep.
            mu1: 1.0,
            mu2: 0.8,
            fields: 2000,
            impulse_design: false,
            combiner: CombinationConfig {
                epsilon: 1e-11,
                max_iterations: 500,
                ..CombinationConfig::default()
            },
        }
    }
}

impl NuRateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nus.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("ν values must be finite".into()));
        }
        if self.fields == 0 && !self.impulse_design {
            return Err(Error::InvalidParameter("need at least one field".into()));
        }
        Grid2D::new(self.dz, self.dt)?;
        self.combiner.validate()
    }
}

/// Convergence of the combination for one ν.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuResult {
    pub nu: f64,
    /// c(𝒢, ℋ_ν) measured on the data.
    pub c_measured: f64,
    pub c_closed_form: f64,
    /// Slope of ln‖Fⁿ − P_{𝒢⊕ℋ}F‖_D against 2n − 1, fitted above [`SLOPE_FLOOR`].
    pub measured_slope: Option<f64>,
    pub predicted_slope: f64,
    /// (n, ‖Fⁿ − P_{𝒢⊕ℋ}F‖_D / ‖F‖_D).
    pub errors: Vec<(usize, f64)>,
    /// (n, ‖F − Fⁿ‖_D / ‖F‖_D).
    pub residuals: Vec<(usize, f64)>,
    pub converged: bool,
}

impl NuResult {
    /// |measured / predicted − 1|.
    pub fn slope_mismatch(&self) -> Option<f64> {
        self.measured_slope
            .map(|m| (m / self.predicted_slope - 1.0).abs())
    }
}

pub fn nu_rate_bed(config: &NuRateConfig, seed: u64) -> Result<NuBed<f64>> {
    config.validate()?;
    let grid = Grid2D::new(config.dz, config.dt)?;
    let design = if config.impulse_design {
        RateDesign::Impulses
    } else {
        RateDesign::RandomFields {
            fields: config.fields,
            seed,
        }
    };
    NuBed::new(grid, config.mu1, config.mu2, design)
}

/// Runs the combination for one ν on a prepared bed.
pub fn nu_run(bed: &NuBed<f64>, nu: f64, combiner: &CombinationConfig) -> Result<NuResult> {
    let (g, h) = bed.learners(nu)?;
    let bg = SubspaceBasis::from_vector_map(&bed.data, &bed.space_g())?;
    let bh = SubspaceBasis::from_vector_map(&bed.data, &bed.space_h(nu))?;
    let angle = min_angle(&bg, &bh)?;
    let (oracle, _) = oracle_values(&bed.data, &bg, &bh)?;
    let norm = values_norm(bed.data.targets());
    let mut errors = Vec::new();
    let state = iterate_with(&bed.data, &g, &h, combiner, |s| {
        errors.push((s.n, values_norm(&(s.combined_values() - &oracle)) / norm));
    })?;
    let residuals = state
        .history
        .iter()
        .map(|r| (r.n, r.residual_norm / norm))
        .collect();
    let fit: Vec<(usize, f64)> = errors
        .iter()
        .copied()
        .filter(|(_, e)| *e > SLOPE_FLOOR)
        .collect();
    let c_closed_form = closed_form_c_nu(nu);
    Ok(NuResult {
        nu,
        c_measured: angle.c,
        c_closed_form,
        measured_slope: convergence_slope(&fit).ok(),
        predicted_slope: c_closed_form.ln(),
        errors,
        residuals,
        converged: state.converged,
    })
}

pub fn nu_rate_study(config: &NuRateConfig, seed: u64) -> Result<Vec<NuResult>> {
    let bed = nu_rate_bed(config, seed)?;
    config
        .nus
        .iter()
        .map(|&nu| nu_run(&bed, nu, &config.combiner))
        .collect()
}

/// ν minimizing the measured c on a bed, by golden-section search on [lo, hi].
pub fn empirical_optimal_nu(bed: &NuBed<f64>, lo: f64, hi: f64) -> Result<f64> {
    let bg = SubspaceBasis::from_vector_map(&bed.data, &bed.space_g())?;
    let c_of = |nu: f64| -> Result<f64> {
        let bh = SubspaceBasis::from_vector_map(&bed.data, &bed.space_h(nu))?;
        Ok(min_angle(&bg, &bh)?.c0)
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (c_of(x1)?, c_of(x2)?);
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = c_of(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = c_of(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReactionDiffusionConfig {
    pub n: usize,
    pub mu: f64,
    pub eta: f64,
    pub dt: f64,
    pub train_trajectories: usize,
    pub train_steps: usize,
    pub test_trajectories: usize,
    pub test_steps: usize,
    pub degree: usize,
    pub law: InitialLaw,
    /// Iterations at which the learned reaction term is sampled, besides the final one.
    pub snapshot_iterations: Vec<usize>,
    pub curve_range: [f64; 2],
    pub curve_points: usize,
    pub combiner: CombinationConfig,
}

impl Default for ReactionDiffusionConfig {
    fn default() -> Self {
        Self {
            n: 20,
            mu: 1.0,
            eta: 0.25,
            dt: 1e-3,
            train_trajectories: 500,
            train_steps: 10,
            test_trajectories: 50,
            test_steps: 50,
            degree: 10,
            law: InitialLaw::StandardNormal,
            snapshot_iterations: vec![0, 10, 20],
            curve_range: [-2.0, 2.0],
            curve_points: 81,
            combiner: CombinationConfig::default(),
        }
    }
}

impl ReactionDiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let grid = Grid1D::new(self.n, self.dt)?;
        if !(grid.cfl(self.mu) <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "explicit Euler is unstable: μΔt/Δz² = {} > 1/2",
                grid.cfl(self.mu)
            )));
        }
        if self.train_trajectories == 0 || self.train_steps == 0 || self.test_trajectories == 0 || self.test_steps == 0 {
            return Err(Error::InvalidParameter("trajectory counts and lengths must be positive".into()));
        }
        if self.degree < 1 {
            return Err(Error::InvalidParameter("dictionary degree must be at least 1".into()));
        }
        if self.curve_points < 2 || !(self.curve_range[0] < self.curve_range[1]) {
            return Err(Error::InvalidParameter("curve needs two points on a nonempty range".into()));
        }
        self.combiner.validate()
    }
}

/// One row of the method comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    /// Σ|pred − ref| / Σ|ref| pooled over every test trajectory; +∞ if any rollout diverged.
    pub domain_error: f64,
    pub diverged: usize,
    /// Mean and standard deviation over test trajectories of error_k, k = 0..=steps.
    pub stepwise_mean: Vec<f64>,
    pub stepwise_std: Vec<f64>,
}

/// Learned reaction term R(u) ≈ (h(u) − u)/Δt at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionCurve {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReactionDiffusionReport {
    /// Linear regression, Koopman operator, residual learning, iterative combination.
    pub methods: Vec<MethodResult>,
    pub history: Vec<IterationRecord<f64>>,
    /// (n, |μ̂ⁿ − μ|) with μ̂ⁿ the diffusion coefficient of F_𝒢ⁿ.
    pub mu_errors: Vec<(usize, f64)>,
    pub curve_u: Vec<f64>,
    /// Reference first, then each snapshot and the final iterate.
    pub curves: Vec<ReactionCurve>,
    pub converged: bool,
    pub fitted_mu: f64,
}

pub const TABLE_METHODS: [&str; 4] = [
    "linear_regression",
    "koopman_operator",
    "residual_learning",
    "iterative_combination",
];

fn evaluate_method<M: Predictor<f64> + ?Sized>(
    name: &str,
    model: &M,
    test: &TrajectorySet<f64>,
    steps: usize,
) -> Result<MethodResult> {
    let mut pred_all = Vec::new();
    let mut ref_all = Vec::new();
    let mut per_traj = Vec::new();
    let mut diverged = 0;
    for reference in &test.trajectories {
        match rollout(model, &reference[0], steps) {
            Ok(pred) => {
                per_traj.push(stepwise_error(&pred, reference)?);
                pred_all.extend(pred);
                ref_all.extend(reference.iter().cloned());
            }
            Err(Error::NonFiniteState { .. }) => {
                diverged += 1;
                per_traj.push(vec![f64::INFINITY; steps + 1]);
            }
            Err(e) => return Err(e),
        }
    }
    let domain_error = if diverged > 0 {
        f64::INFINITY
    } else {
        domain_relative_error(&pred_all, &ref_all)?
    };
    let m = per_traj.len() as f64;
    let mean: Vec<f64> = (0..=steps)
        .map(|k| per_traj.iter().map(|e| e[k]).sum::<f64>() / m)
        .collect();
    let std: Vec<f64> = (0..=steps)
        .map(|k| {
            if mean[k].is_infinite() {
                return f64::INFINITY;
            }
            (per_traj.iter().map(|e| (e[k] - mean[k]).powi(2)).sum::<f64>() / m).sqrt()
        })
        .collect();
    Ok(MethodResult {
        method: name.into(),
        domain_error,
        diverged,
        stepwise_mean: mean,
        stepwise_std: std,
    })
}

/// R(u) ≈ (K_{state,·}Ψ(u) − u)/Δt read off the pointwise Koopman state row.
fn learned_reaction(model: &KoopmanModel<f64>, us: &[f64], dt: f64) -> Result<Vec<f64>> {
    let dict = model.dictionary();
    let row = model.operator().row(dict.state_block().start).clone_owned();
    let scalar = Dictionary::<f64>::polynomial(1, dict.len() - 1)?;
    us.iter()
        .map(|&u| {
            let psi = scalar.lift(&[u])?;
            let h: f64 = row.iter().zip(&psi).map(|(a, b)| a * b).sum();
            Ok((h - u) / dt)
        })
        .collect()
}

/// Training inputs, test trajectories and learners of the reaction-diffusion benchmark.
pub struct ReactionDiffusionBed {
    pub grid: Grid1D,
    pub data: DataSet<f64>,
    pub test: TrajectorySet<f64>,
    pub dictionary: Dictionary<f64>,
}

impl ReactionDiffusionBed {
    pub fn new(config: &ReactionDiffusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = Grid1D::new(config.n, config.dt)?;
        let train = random_reaction_diffusion_1d(
            &grid,
            config.mu,
            config.eta,
            config.law,
            config.train_trajectories,
            config.train_steps,
            seed,
        )?;
        let test = random_reaction_diffusion_1d(
            &grid,
            config.mu,
            config.eta,
            config.law,
            config.test_trajectories,
            config.test_steps,
            seed.wrapping_add(1),
        )?;
        Ok(Self {
            grid,
            data: generate_dataset(&train)?,
            test,
            dictionary: Dictionary::polynomial(config.n, config.degree)?,
        })
    }
}

pub fn reaction_diffusion_study(config: &ReactionDiffusionConfig, seed: u64) -> Result<ReactionDiffusionReport> {
    let bed = ReactionDiffusionBed::new(config, seed)?;
    let data = &bed.data;
    let lin = VectorLeastSquaresLearner::new(data, laplacian_space_1d(&bed.grid))?;
    let koop = KoopmanLearner::new(data, bed.dictionary.clone())?;
    let span = config.curve_range[1] - config.curve_range[0];
    let curve_u: Vec<f64> = (0..config.curve_points)
        .map(|i| config.curve_range[0] + span * i as f64 / (config.curve_points - 1) as f64)
        .collect();
    let mut curves = vec![ReactionCurve {
        label: "reference".into(),
        values: curve_u.iter().map(|&u| reaction_term(u, config.eta)).collect(),
    }];

    use crate::hypothesis::Learner;
    let linear_model = lin.project(data.targets())?.model;
    let koopman_model = fit_koopman(data, &bed.dictionary, None)?;
    let residual = residual_learning(data, &lin, &koop)?;

    let mut mu_errors = Vec::new();
    let mut snapshot_err = None;
    let state = iterate_with(data, &lin, &koop, &config.combiner, |s| {
        let mu_hat = s.model_g.coefficients()[0] / config.dt;
        mu_errors.push((s.n, (mu_hat - config.mu).abs()));
        let epoch = s.n - 1;
        if config.snapshot_iterations.contains(&epoch) && snapshot_err.is_none() {
            match learned_reaction(&s.model_h, &curve_u, config.dt) {
                Ok(values) => curves.push(ReactionCurve {
                    label: format!("iteration_{epoch}"),
                    values,
                }),
                Err(e) => snapshot_err = Some(e),
            }
        }
    })?;
    if let Some(e) = snapshot_err {
        return Err(e);
    }
    curves.push(ReactionCurve {
        label: "final".into(),
        values: learned_reaction(&state.model_h, &curve_u, config.dt)?,
    });

    let steps = config.test_steps;
    let methods = vec![
        evaluate_method(TABLE_METHODS[0], &linear_model, &bed.test, steps)?,
        evaluate_method(TABLE_METHODS[1], &koopman_model, &bed.test, steps)?,
        evaluate_method(TABLE_METHODS[2], &residual.combined_model(), &bed.test, steps)?,
        evaluate_method(TABLE_METHODS[3], &state.combined_model(), &bed.test, steps)?,
    ];
    Ok(ReactionDiffusionReport {
        methods,
        fitted_mu: state.model_g.coefficients()[0] / config.dt,
        history: state.history,
        mu_errors,
        curve_u,
        curves,
        converged: state.converged,
    })
}

/// Outcome of the ℝ² example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub residual_learning_error: f64,
    pub iterative_error: f64,
    pub iterative_iterations: usize,
    /// ‖F − Fⁿ‖ for the plain iteration, n = 1, 2, …
    pub errors: Vec<f64>,
    pub accelerated_error: f64,
    pub accelerated_iterations: usize,
}

pub fn toy_study(combiner: &CombinationConfig) -> Result<ToyReport> {
    let (data, g, h) = plane_toy::<f64>()?;
    // The span{(1, 1)/√2} learner goes first, as in the suboptimal single pass.
    let rl = residual_learning(&data, &h, &g)?;
    let rl_err = values_norm(&(data.targets() - rl.combined_values()));
    let plain = CombinationConfig {
        accelerate: false,
        ..combiner.clone()
    };
    let st = iterate(&data, &g, &h, &plain)?;
    let acc = iterate(
        &data,
        &g,
        &h,
        &CombinationConfig {
            accelerate: true,
            ..combiner.clone()
        },
    )?;
    Ok(ToyReport {
        residual_learning_error: rl_err,
        iterative_error: st.last().map_or(f64::NAN, |r| r.residual_norm),
        iterative_iterations: st.n,
        errors: st.history.iter().map(|r| r.residual_norm).collect(),
        accelerated_error: acc.last().map_or(f64::NAN, |r| r.residual_norm),
        accelerated_iterations: acc.n,
    })
}
