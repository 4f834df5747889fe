//! Ground-truth generators, rollouts and trajectory error metrics.

use crate::error::{check_dim, Error, Result};
use crate::hypothesis::{DataSet, FeatureMap, Predictor, Sample, VectorFeatureMap};
use crate::scalar::Real;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// R_η(u) = 4ηu(u² − 1), the derivative of η(u − 1)²(u + 1)².
pub fn reaction_term<T: Real>(u: T, eta: T) -> T {
    T::lit(4.0) * eta * u * (u * u - T::one())
}

/// Uniform 1D grid with `n` interior unknowns at z_j = j·Δz, Δz = 1/n, and zero ghost values
/// on both sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub n: usize,
    pub dz: f64,
    pub dt: f64,
}

impl Grid1D {
    pub fn new(n: usize, dt: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter("grid needs at least 3 points".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        Ok(Self {
            n,
            dz: 1.0 / n as f64,
            dt,
        })
    }

    /// μΔt/Δz²; explicit Euler diffusion is stable for values ≤ 1/2.
    pub fn cfl(&self, mu: f64) -> f64 {
        mu * self.dt / (self.dz * self.dz)
    }
}

/// Square grid on [0,1]² with spacing Δz on both axes; interior points stored row-major,
/// index `i·n + j` with i along z₁.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub n: usize,
    pub dz: f64,
    pub dt: f64,
}

impl Grid2D {
    /// Interior points per axis: 1/Δz − 1.
    pub fn new(dz: f64, dt: f64) -> Result<Self> {
        let cells = (1.0 / dz).round();
        if !(dz > 0.0) || (cells * dz - 1.0).abs() > 1e-9 || cells < 4.0 {
            return Err(Error::InvalidParameter("Δz must divide 1 with at least 3 interior points".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        Ok(Self {
            n: cells as usize - 1,
            dz,
            dt,
        })
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Per-axis μΔt/Δz²; the 2D scheme is stable when the sum is ≤ 1/2.
    pub fn cfl(&self, mu1: f64, mu2: f64) -> f64 {
        (mu1 + mu2) * self.dt / (self.dz * self.dz)
    }

    /// Sites whose five-point stencil touches no boundary value.
    pub fn interior_stencil_sites(&self) -> Vec<usize> {
        let mut s = Vec::new();
        for i in 1..self.n - 1 {
            for j in 1..self.n - 1 {
                s.push(self.index(i, j));
            }
        }
        s
    }

    /// Stencil neighbourhood `[u_{i−1,j}, u_{i+1,j}, u_{ij}, u_{i,j−1}, u_{i,j+1}]` with zero ghosts.
    pub fn neighbourhood<T: Real>(&self, u: &[T], site: usize) -> [T; 5] {
        let n = self.n;
        let (i, j) = (site / n, site % n);
        let at = |a: isize, b: isize| -> T {
            if a < 0 || b < 0 || a >= n as isize || b >= n as isize {
                T::zero()
            } else {
                u[a as usize * n + b as usize]
            }
        };
        let (i, j) = (i as isize, j as isize);
        [at(i - 1, j), at(i + 1, j), at(i, j), at(i, j - 1), at(i, j + 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    /// U(0, 1) per grid point.
    Uniform01,
    /// N(0, 1) per grid point.
    StandardNormal,
}

impl InitialLaw {
    fn draw<T: Real>(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<T> {
        (0..len)
            .map(|_| match self {
                InitialLaw::Uniform01 => T::lit(rng.random::<f64>()),
                InitialLaw::StandardNormal => T::lit(rng.sample::<f64, _>(StandardNormal)),
            })
            .collect()
    }
}

/// Per-trajectory generator: stream `j` of the ChaCha generator seeded with `seed`.
pub fn trajectory_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub system: String,
    pub mu: Vec<f64>,
    pub eta: f64,
    pub dt: f64,
    pub dz: f64,
    pub steps: usize,
}

/// `s` trajectories of `steps + 1` states each.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet<T: Real> {
    pub trajectories: Vec<Vec<Vec<T>>>,
    pub seed: Option<u64>,
    pub law: Option<InitialLaw>,
    pub meta: TrajectoryMeta,
}

impl<T: Real> TrajectorySet<T> {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories
            .first()
            .and_then(|t| t.first())
            .map_or(0, Vec::len)
    }

    /// States with the zero Dirichlet values attached (1D: both ends; 2D: a full frame).
    pub fn padded(&self) -> Vec<Vec<Vec<T>>> {
        let d = self.state_dim();
        let side = (d as f64).sqrt().round() as usize;
        let two_d = self.meta.system == "diffusion_2d" && side * side == d;
        self.trajectories
            .iter()
            .map(|traj| {
                traj.iter()
                    .map(|u| if two_d { pad_2d(u, side) } else { pad_1d(u) })
                    .collect()
            })
            .collect()
    }

    /// One CSV per trajectory (`t,z_0,…`; padded states) plus `manifest.json`.
    pub fn write_csv(&self, dir: &Path, stem: &str) -> Result<()> {
        let padded = self.padded();
        for (j, traj) in padded.iter().enumerate() {
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}_{j:04}.csv")))?;
            let width = traj.first().map_or(0, Vec::len);
            let mut header = vec!["t".to_string()];
            header.extend((0..width).map(|k| format!("z_{k}")));
            w.write_record(&header)?;
            for (step, u) in traj.iter().enumerate() {
                let mut rec = vec![step.to_string()];
                rec.extend(u.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        let manifest = serde_json::json!({
            "seed": self.seed,
            "law": self.law,
            "system": self.meta.system,
            "mu": self.meta.mu,
            "eta": self.meta.eta,
            "dt": self.meta.dt,
            "dz": self.meta.dz,
            "steps": self.meta.steps,
            "trajectories": self.len(),
        });
        std::fs::write(
            dir.join(format!("{stem}_manifest.json")),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

fn pad_1d<T: Real>(u: &[T]) -> Vec<T> {
    let mut p = Vec::with_capacity(u.len() + 2);
    p.push(T::zero());
    p.extend_from_slice(u);
    p.push(T::zero());
    p
}

fn pad_2d<T: Real>(u: &[T], n: usize) -> Vec<T> {
    let m = n + 2;
    let mut p = vec![T::zero(); m * m];
    for i in 0..n {
        for j in 0..n {
            p[(i + 1) * m + j + 1] = u[i * n + j];
        }
    }
    p
}

fn check_state<T: Real>(u: &[T], step: usize) -> Result<()> {
    if u.iter().all(|v| v.is_finite_value()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

/// Second difference with zero ghosts at both ends, divided by Δz².
pub fn laplacian_1d<T: Real>(u: &[T], dz: T) -> Vec<T> {
    let n = u.len();
    let inv = T::one() / (dz * dz);
    (0..n)
        .map(|j| {
            let l = if j == 0 { T::zero() } else { u[j - 1] };
            let r = if j + 1 == n { T::zero() } else { u[j + 1] };
            (l - T::lit(2.0) * u[j] + r) * inv
        })
        .collect()
}

fn euler_1d<T: Real>(u: &[T], mu: T, eta: T, dz: T, dt: T) -> Vec<T> {
    let lap = laplacian_1d(u, dz);
    u.iter()
        .zip(lap)
        .map(|(&v, l)| v + dt * (mu * l + reaction_term(v, eta)))
        .collect()
}

fn simulate_1d_raw<T: Real>(grid: &Grid1D, mu: T, eta: T, u0: &[T], steps: usize) -> Result<Vec<Vec<T>>> {
    check_dim("initial state", grid.n, u0.len())?;
    check_state(u0, 0)?;
    let (dz, dt) = (T::lit(grid.dz), T::lit(grid.dt));
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(u0.to_vec());
    for step in 1..=steps {
        let next = euler_1d(&traj[step - 1], mu, eta, dz, dt);
        check_state(&next, step)?;
        traj.push(next);
    }
    Ok(traj)
}

fn meta_1d(grid: &Grid1D, mu: f64, eta: f64, steps: usize) -> TrajectoryMeta {
    TrajectoryMeta {
        system: "reaction_diffusion_1d".into(),
        mu: vec![mu],
        eta,
        dt: grid.dt,
        dz: grid.dz,
        steps,
    }
}

/// Forward Euler for u_t = μu_zz + R_η(u) with homogeneous Dirichlet boundaries.
pub fn simulate_reaction_diffusion_1d<T: Real>(
    grid: &Grid1D,
    mu: f64,
    eta: f64,
    u0: &[T],
    steps: usize,
) -> Result<TrajectorySet<T>> {
    if steps < 1 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    Ok(TrajectorySet {
        trajectories: vec![simulate_1d_raw(grid, T::lit(mu), T::lit(eta), u0, steps)?],
        seed: None,
        law: None,
        meta: meta_1d(grid, mu, eta, steps),
    })
}

/// `count` trajectories from random initial states, generated in parallel.
pub fn random_reaction_diffusion_1d<T: Real>(
    grid: &Grid1D,
    mu: f64,
    eta: f64,
    law: InitialLaw,
    count: usize,
    steps: usize,
    seed: u64,
) -> Result<TrajectorySet<T>> {
    if steps < 1 || count < 1 {
        return Err(Error::InvalidParameter("need at least one trajectory and step".into()));
    }
    let trajectories = (0..count)
        .into_par_iter()
        .map(|j| {
            let u0: Vec<T> = law.draw(&mut trajectory_rng(seed, j), grid.n);
            simulate_1d_raw(grid, T::lit(mu), T::lit(eta), &u0, steps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        trajectories,
        seed: Some(seed),
        law: Some(law),
        meta: meta_1d(grid, mu, eta, steps),
    })
}

/// (δ²_{z₁}u, δ²_{z₂}u) at every interior site.
pub fn second_differences_2d<T: Real>(grid: &Grid2D, u: &[T]) -> (Vec<T>, Vec<T>) {
    let inv = T::one() / (T::lit(grid.dz) * T::lit(grid.dz));
    let two = T::lit(2.0);
    (0..grid.len())
        .map(|s| {
            let [a, b, c, d, e] = grid.neighbourhood(u, s);
            ((a + b - two * c) * inv, (d + e - two * c) * inv)
        })
        .unzip()
}

fn simulate_2d_raw<T: Real>(
    grid: &Grid2D,
    mu1: T,
    mu2: T,
    u0: &[T],
    steps: usize,
) -> Result<Vec<Vec<T>>> {
    check_dim("initial state", grid.len(), u0.len())?;
    check_state(u0, 0)?;
    let dt = T::lit(grid.dt);
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(u0.to_vec());
    for step in 1..=steps {
        let u = &traj[step - 1];
        let (d1, d2) = second_differences_2d(grid, u);
        let next: Vec<T> = (0..grid.len())
            .map(|s| u[s] + dt * (mu1 * d1[s] + mu2 * d2[s]))
            .collect();
        check_state(&next, step)?;
        traj.push(next);
    }
    Ok(traj)
}

fn meta_2d(grid: &Grid2D, mu1: f64, mu2: f64, steps: usize) -> TrajectoryMeta {
    TrajectoryMeta {
        system: "diffusion_2d".into(),
        mu: vec![mu1, mu2],
        eta: 0.0,
        dt: grid.dt,
        dz: grid.dz,
        steps,
    }
}

/// Forward Euler for u_t = μ₁u_{z₁z₁} + μ₂u_{z₂z₂} with homogeneous Dirichlet boundaries.
pub fn simulate_diffusion_2d<T: Real>(
    grid: &Grid2D,
    mu1: f64,
    mu2: f64,
    u0: &[T],
    steps: usize,
) -> Result<TrajectorySet<T>> {
    if steps < 1 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    Ok(TrajectorySet {
        trajectories: vec![simulate_2d_raw(grid, T::lit(mu1), T::lit(mu2), u0, steps)?],
        seed: None,
        law: None,
        meta: meta_2d(grid, mu1, mu2, steps),
    })
}

pub fn random_diffusion_2d<T: Real>(
    grid: &Grid2D,
    mu1: f64,
    mu2: f64,
    law: InitialLaw,
    count: usize,
    steps: usize,
    seed: u64,
) -> Result<TrajectorySet<T>> {
    if steps < 1 || count < 1 {
        return Err(Error::InvalidParameter("need at least one trajectory and step".into()));
    }
    let trajectories = (0..count)
        .into_par_iter()
        .map(|j| {
            let u0: Vec<T> = law.draw(&mut trajectory_rng(seed, j), grid.len());
            simulate_2d_raw(grid, T::lit(mu1), T::lit(mu2), &u0, steps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        trajectories,
        seed: Some(seed),
        law: Some(law),
        meta: meta_2d(grid, mu1, mu2, steps),
    })
}

/// Unit impulses at every interior point, advanced one step.
///
/// Summed over these fields, the cross-products of stencil features at fully interior sites
/// are exactly the inner products of the stencil weight vectors.
pub fn impulse_diffusion_2d<T: Real>(grid: &Grid2D, mu1: f64, mu2: f64) -> Result<TrajectorySet<T>> {
    let trajectories = (0..grid.len())
        .map(|q| {
            let mut u0 = vec![T::zero(); grid.len()];
            u0[q] = T::one();
            simulate_2d_raw(grid, T::lit(mu1), T::lit(mu2), &u0, 1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        trajectories,
        seed: None,
        law: None,
        meta: meta_2d(grid, mu1, mu2, 1),
    })
}

/// Consecutive pairs (x_k, x_{k+1}) of every trajectory.
pub fn generate_dataset<T: Real>(traj: &TrajectorySet<T>) -> Result<DataSet<T>> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in &traj.trajectories {
        for w in t.windows(2) {
            x.push(w[0].clone());
            y.push(w[1].clone());
        }
    }
    DataSet::new(&x, &y)
}

/// Pairs (u_k, (u_{k+1} − u_k)/Δt restricted to `sites`) from 2D trajectories.
pub fn rate_dataset_2d<T: Real>(traj: &TrajectorySet<T>, sites: &[usize]) -> Result<DataSet<T>> {
    let dt = T::lit(traj.meta.dt);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in &traj.trajectories {
        for w in t.windows(2) {
            x.push(w[0].clone());
            y.push(sites.iter().map(|&s| (w[1][s] - w[0][s]) / dt).collect());
        }
    }
    DataSet::new(&x, &y)
}

/// ψ(u) = (u_{j−1} − 2u_j + u_{j+1})/Δz² on one neighbourhood `[u_{j−1}, u_j, u_{j+1}]`.
pub fn stencil_feature_map<T: Real>(dz: f64) -> FeatureMap<T> {
    let inv = T::lit(1.0 / (dz * dz));
    FeatureMap::new("second_difference", 3, 1, move |u, out| {
        out[0] = (u[0] - T::lit(2.0) * u[1] + u[2]) * inv;
    })
}

/// The field-level diffusion space {λ·δ²u}: one generator, the discrete Laplacian.
pub fn laplacian_space_1d<T: Real>(grid: &Grid1D) -> VectorFeatureMap<T> {
    let dz = T::lit(grid.dz);
    VectorFeatureMap::new("laplacian_1d", grid.n, grid.n, 1, move |u, out| {
        out.copy_from_slice(&laplacian_1d(u, dz));
    })
}

/// Span of w₁δ²_{z₁}u + w₂δ²_{z₂}u evaluated at `sites` (one generator).
pub fn stencil_space_2d<T: Real>(
    grid: &Grid2D,
    sites: Vec<usize>,
    w1: f64,
    w2: f64,
    label: impl Into<String>,
) -> VectorFeatureMap<T> {
    let g = *grid;
    let (a, b) = (T::lit(w1), T::lit(w2));
    let inv = T::lit(1.0 / (grid.dz * grid.dz));
    let k = sites.len();
    VectorFeatureMap::new(label, grid.len(), k, 1, move |u, out| {
        let two = T::lit(2.0);
        for (r, &s) in sites.iter().enumerate() {
            let [l, rr, c, d, e] = g.neighbourhood(u, s);
            out[r] = (a * (l + rr - two * c) + b * (d + e - two * c)) * inv;
        }
    })
}

/// Iterates `model` from `x0`; the first entry is `x0`.
pub fn rollout<T: Real, M: Predictor<T> + ?Sized>(
    model: &M,
    x0: &[T],
    k_steps: usize,
) -> Result<Vec<Vec<T>>> {
    check_dim("rollout state", model.input_dim(), x0.len())?;
    check_dim("rollout output", model.input_dim(), model.output_dim())?;
    let mut out = Vec::with_capacity(k_steps + 1);
    out.push(x0.to_vec());
    for step in 1..=k_steps {
        let next = model.predict(&out[step - 1])?;
        check_state(&next, step)?;
        out.push(next);
    }
    Ok(out)
}

fn flat_norm<T: Real>(states: &[Vec<T>]) -> T {
    states
        .iter()
        .flat_map(|s| s.iter())
        .fold(T::zero(), |acc, v| acc + *v * *v)
        .sqrt()
}

/// error_k = ‖pred_k − ref_k‖ / ‖[ref_0, …, ref_m]‖.
pub fn stepwise_error<T: Real>(pred: &[Vec<T>], reference: &[Vec<T>]) -> Result<Vec<T>> {
    check_dim("trajectory length", reference.len(), pred.len())?;
    let scale = flat_norm(reference);
    pred.iter()
        .zip(reference)
        .map(|(p, r)| {
            check_dim("trajectory state", r.len(), p.len())?;
            let d = p
                .iter()
                .zip(r)
                .fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b))
                .sqrt();
            Ok(d / scale)
        })
        .collect()
}

/// Σ|pred − ref| / Σ|ref| over every grid and time point.
pub fn domain_relative_error<T: Real>(pred: &[Vec<T>], reference: &[Vec<T>]) -> Result<T> {
    check_dim("field length", reference.len(), pred.len())?;
    let mut num = T::zero();
    let mut den = T::zero();
    for (p, r) in pred.iter().zip(reference) {
        check_dim("field state", r.len(), p.len())?;
        for (a, b) in p.iter().zip(r) {
            num += (*a - *b).abs();
            den += b.abs();
        }
    }
    Ok(num / den)
}

/// Discrete-time system x⁺ = F(x, c, e).
pub trait ControlledSystem<T: Real>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn external_dim(&self) -> usize;
    fn step(&self, x: &[T], c: &[T], e: &[T]) -> Result<Vec<T>>;
}

/// Euler-discretized oscillator x₁' = x₂ + c₂, x₂' = −x₁ + (a₀ + a₁ sin e)x₂ + c₁.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Oscillator {
    pub dt: f64,
    pub a0: f64,
    pub a1: f64,
}

impl Default for Oscillator {
    fn default() -> Self {
        Self {
            dt: 0.1,
            a0: -0.2,
            a1: 0.5,
        }
    }
}

impl<T: Real> ControlledSystem<T> for Oscillator {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn external_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &[T], c: &[T], e: &[T]) -> Result<Vec<T>> {
        check_dim("oscillator state", 2, x.len())?;
        check_dim("oscillator control", 2, c.len())?;
        check_dim("oscillator external", 1, e.len())?;
        let dt = T::lit(self.dt);
        let damping = T::lit(self.a0) + T::lit(self.a1) * e[0].sin();
        let next = vec![
            x[0] + dt * (x[1] + c[1]),
            x[1] + dt * (-x[0] + damping * x[1] + c[0]),
        ];
        check_state(&next, 1)?;
        Ok(next)
    }
}

/// Predictor view of a controlled system, reading control and external from the sample.
pub struct SystemPredictor<'a, S>(pub &'a S);

impl<T: Real, S: ControlledSystem<T>> Predictor<T> for SystemPredictor<'_, S> {
    fn input_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn predict_sample(&self, s: &Sample<'_, T>) -> Result<Vec<T>> {
        self.0.step(s.state, s.control, s.external)
    }
}

/// Stacks `rows` into an `N × d` matrix.
pub fn rows_to_matrix<T: Real>(rows: &[Vec<T>]) -> DMatrix<T> {
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}
