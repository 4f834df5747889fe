//! Non-intrusive combination of two projection-based learners of a dynamical system.
//!
//! Each learner only has to expose its own least-squares fit. The combiner alternates residual
//! fits between them until the sum approximates the best model in the direct sum of both spaces.

pub mod error;
pub mod combiner;
pub mod diagnostics;
pub mod hypothesis;
pub mod koopman;
mod linalg;
pub mod mpc;
pub mod scalar;
pub mod studies;
pub mod systems;
pub mod testbed;

pub use error::{Error, Result};
pub use hypothesis::{
    empirical_inner_product, evaluate_features, fit_projection, mean_row_distance,
    model_residual_norm, Blend, DataSet, FeatureMap, FeatureModel, Fit, InnerProductContext,
    Learner, LeastSquaresLearner, Predictor, Sample,
};
pub use combiner::{iterate, residual_learning, CombinationConfig, CombinationState};
pub use diagnostics::{min_angle, AngleReport, SubspaceBasis};
pub use koopman::{Dictionary, KoopmanLearner, KoopmanModel};
pub use mpc::{LiftedPredictor, MPCProblem, Structure};
pub use scalar::Real;
pub use systems::{Grid1D, Grid2D, TrajectorySet};

pub type DataSetF64 = DataSet<f64>;
pub type FeatureMapF64 = FeatureMap<f64>;
pub type FeatureModelF64 = FeatureModel<f64>;
pub type SubspaceBasisF64 = SubspaceBasis<f64>;
pub type DictionaryF64 = Dictionary<f64>;
pub type KoopmanModelF64 = KoopmanModel<f64>;
pub type LiftedPredictorF64 = LiftedPredictor<f64>;
pub type MPCProblemF64 = MPCProblem<f64>;
pub type TrajectorySetF64 = TrajectorySet<f64>;
