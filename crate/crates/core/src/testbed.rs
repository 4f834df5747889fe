//! Synthetic instances with known direct-sum structure: random linear subspaces, the ℝ²
//! plane example and the stencil spaces of the 2D diffusion rate study.

use crate::error::{Error, Result};
use crate::hypothesis::{
    DataSet, FeatureMap, LeastSquaresLearner, VectorFeatureMap, VectorLeastSquaresLearner,
};
use crate::scalar::Real;
use crate::systems::{
    impulse_diffusion_2d, random_diffusion_2d, rate_dataset_2d, stencil_space_2d, trajectory_rng,
    Grid2D, InitialLaw,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Shape of a random linear-subspace instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub samples: usize,
    pub input_dim: usize,
    pub g_dim: usize,
    pub h_dim: usize,
    pub target_dim: usize,
    /// Generators of ℋ copied from 𝒢, giving a nontrivial intersection.
    pub shared: usize,
}

impl InstanceSpec {
    /// Random shape: d ∈ 4..=8, dim 𝒢 ∈ 1..=3, dim ℋ ∈ 1..=3, K ∈ 1..=2, occasional overlap.
    pub fn random(rng: &mut impl Rng) -> Self {
        let g_dim = rng.random_range(1..=3);
        let h_dim = rng.random_range(1..=3);
        let shared = if g_dim + h_dim > 2 && rng.random_bool(0.25) { 1 } else { 0 };
        let h_dim = h_dim.max(shared + 1);
        Self {
            samples: rng.random_range(30..=80),
            input_dim: rng.random_range((g_dim + h_dim - shared).max(4)..=8),
            g_dim,
            h_dim,
            target_dim: rng.random_range(1..=2),
            shared,
        }
    }
}

/// Gaussian inputs, linear feature maps x ↦ Aₓx for both spaces, and F = W_𝒢ψ_𝒢 + W_ℋψ_ℋ.
#[derive(Clone, Debug)]
pub struct LinearInstance<T: Real> {
    pub spec: InstanceSpec,
    pub data: DataSet<T>,
    pub map_g: FeatureMap<T>,
    pub map_h: FeatureMap<T>,
}

impl<T: Real> LinearInstance<T> {
    pub fn learners(&self) -> Result<(LeastSquaresLearner<T>, LeastSquaresLearner<T>)> {
        Ok((
            LeastSquaresLearner::new(&self.data, self.map_g.clone())?,
            LeastSquaresLearner::new(&self.data, self.map_h.clone())?,
        ))
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn linear_map<T: Real>(label: &str, forms: DMatrix<f64>) -> FeatureMap<T> {
    let (p, d) = forms.shape();
    let a: Vec<T> = forms.transpose().iter().map(|v| T::lit(*v)).collect();
    FeatureMap::new(label, d, p, move |x, out| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..d).fold(T::zero(), |acc, i| acc + a[j * d + i] * x[i]);
        }
    })
}

pub fn random_linear_instance<T: Real>(spec: InstanceSpec, seed: u64) -> Result<LinearInstance<T>> {
    if spec.g_dim == 0 || spec.h_dim == 0 || spec.shared >= spec.h_dim.max(1) || spec.shared > spec.g_dim {
        return Err(Error::InvalidParameter("instance needs nonempty spaces and shared < dim ℋ".into()));
    }
    if spec.g_dim + spec.h_dim - spec.shared > spec.input_dim {
        return Err(Error::InvalidParameter("spaces do not fit in the input dimension".into()));
    }
    let mut rng = trajectory_rng(seed, 0);
    let ag = gaussian_matrix(&mut rng, spec.g_dim, spec.input_dim);
    let mut ah = gaussian_matrix(&mut rng, spec.h_dim, spec.input_dim);
    for s in 0..spec.shared {
        ah.row_mut(s).copy_from(&ag.row(s));
    }
    let x = gaussian_matrix(&mut rng, spec.samples, spec.input_dim);
    let wg = gaussian_matrix(&mut rng, spec.target_dim, spec.g_dim);
    let wh = gaussian_matrix(&mut rng, spec.target_dim, spec.h_dim);
    let y = &x * ag.transpose() * wg.transpose() + &x * ah.transpose() * wh.transpose();
    let inputs: Vec<Vec<T>> = x
        .row_iter()
        .map(|r| r.iter().map(|v| T::lit(*v)).collect())
        .collect();
    let targets: Vec<Vec<T>> = y
        .row_iter()
        .map(|r| r.iter().map(|v| T::lit(*v)).collect())
        .collect();
    Ok(LinearInstance {
        spec,
        data: DataSet::new(&inputs, &targets)?,
        map_g: linear_map("g", ag),
        map_h: linear_map("h", ah),
    })
}

/// The ℝ² example: one sample, F = (0, 1), 𝒢 = span{(1, 0)}, ℋ = span{(1, 1)/√2}.
///
/// Functions on a single point are constant vectors, so ‖·‖_D is the Euclidean norm.
pub fn plane_toy<T: Real>() -> Result<(DataSet<T>, VectorLeastSquaresLearner<T>, VectorLeastSquaresLearner<T>)> {
    let s = T::lit(0.5f64.sqrt());
    let data = DataSet::new(&[vec![T::zero()]], &[vec![T::zero(), T::one()]])?;
    let g = VectorFeatureMap::constant("g", 1, DMatrix::from_column_slice(2, 1, &[T::one(), T::zero()]));
    let h = VectorFeatureMap::constant("h", 1, DMatrix::from_column_slice(2, 1, &[s, s]));
    Ok((
        data.clone(),
        VectorLeastSquaresLearner::new(&data, g)?,
        VectorLeastSquaresLearner::new(&data, h)?,
    ))
}

/// Data design for the ν study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateDesign {
    /// Independent U(0, 1) fields advanced one step.
    RandomFields { fields: usize, seed: u64 },
    /// Unit impulses at every interior point.
    Impulses,
}

/// Rate data (u⁰, (u¹ − u⁰)/Δt) of 2D diffusion at the interior-stencil sites, with
/// 𝒢 = span{δ²_{z₁}} and ℋ_ν = span{νδ²_{z₁} + δ²_{z₂}}.
#[derive(Clone, Debug)]
pub struct NuBed<T: Real> {
    pub grid: Grid2D,
    pub sites: Vec<usize>,
    pub data: DataSet<T>,
}

impl<T: Real> NuBed<T> {
    pub fn new(grid: Grid2D, mu1: f64, mu2: f64, design: RateDesign) -> Result<Self> {
        let traj = match design {
            RateDesign::RandomFields { fields, seed } => {
                random_diffusion_2d(&grid, mu1, mu2, InitialLaw::Uniform01, fields, 1, seed)?
            }
            RateDesign::Impulses => impulse_diffusion_2d(&grid, mu1, mu2)?,
        };
        let sites = grid.interior_stencil_sites();
        let data = rate_dataset_2d(&traj, &sites)?;
        Ok(Self { grid, sites, data })
    }

    pub fn space_g(&self) -> VectorFeatureMap<T> {
        stencil_space_2d(&self.grid, self.sites.clone(), 1.0, 0.0, "delta_1")
    }

    pub fn space_h(&self, nu: f64) -> VectorFeatureMap<T> {
        stencil_space_2d(&self.grid, self.sites.clone(), nu, 1.0, "nu_delta_1_plus_delta_2")
    }

    pub fn learners(
        &self,
        nu: f64,
    ) -> Result<(VectorLeastSquaresLearner<T>, VectorLeastSquaresLearner<T>)> {
        Ok((
            VectorLeastSquaresLearner::new(&self.data, self.space_g())?,
            VectorLeastSquaresLearner::new(&self.data, self.space_h(nu))?,
        ))
    }
}
