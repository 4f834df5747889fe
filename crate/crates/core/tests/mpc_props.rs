mod common;

use modcomb::koopman::Dictionary;
use modcomb::mpc::{
    condense, run_mpc, run_mpc_with, solve_horizon, ExternalBasis, LiftedPredictor, MPCProblem,
    Operators, Structure,
};
use modcomb::systems::Oscillator;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gauss(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

fn random_predictor(seed: u64, structure: Structure) -> LiftedPredictor<f64> {
    let mut r = common::rng(seed);
    let (centers, width) = Dictionary::<f64>::grid_centers(&[-1.0, -1.0], &[1.0, 1.0], &[2, 2]).unwrap();
    let dict = Dictionary::rbf(2, centers, width).unwrap();
    let (p, m, nphi) = (dict.len(), 2, 2);
    let s = 0.5 / (p as f64).sqrt();
    let ops = match structure {
        Structure::Linear => Operators::Linear {
            k: gauss(&mut r, p, p, s),
            b: gauss(&mut r, p, m, 0.5),
            c: gauss(&mut r, p, 1, 0.5),
        },
        Structure::Hybrid1 => Operators::Hybrid1 {
            k: (0..nphi).map(|_| gauss(&mut r, p, p, s)).collect(),
            b: gauss(&mut r, p, m, 0.5),
        },
        Structure::Hybrid2 => Operators::Hybrid2 {
            k: gauss(&mut r, p, p, s),
            b: (0..nphi).map(|_| gauss(&mut r, p, m, 0.5)).collect(),
        },
        Structure::Nonlinear => Operators::Nonlinear {
            k: (0..nphi * (1 + m)).map(|_| gauss(&mut r, p, p, s)).collect(),
        },
    };
    LiftedPredictor::new(dict, ExternalBasis::Sine, m, 1, ops).unwrap()
}

fn random_problem(seed: u64, pred: &LiftedPredictor<f64>, steps: usize) -> MPCProblem<f64> {
    let mut r = common::rng(seed ^ 0x5eed);
    let h = r.random_range(2..6);
    let qw = [r.random_range(0.1..2.0), r.random_range(0.1..2.0)];
    let rw = [r.random_range(0.01..1.0), r.random_range(0.01..1.0)];
    let refs: Vec<Vec<f64>> = (0..steps + h + 1)
        .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let ext: Vec<Vec<f64>> = (0..steps + h + 1).map(|_| vec![r.random_range(-3.0..3.0)]).collect();
    MPCProblem::tracking(pred.dictionary(), h, &qw, &rw, vec![-1.0, -1.5], vec![1.0, 1.5], &refs, ext).unwrap()
}

fn convex_structure() -> impl Strategy<Value = Structure> {
    prop_oneof![Just(Structure::Linear), Just(Structure::Hybrid1), Just(Structure::Hybrid2)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convex_structures_certify_convexity(seed in any::<u64>(), structure in convex_structure()) {
        let pred = random_predictor(seed, structure);
        let problem = random_problem(seed, &pred, 0);
        let z0 = pred.dictionary().lift(&[0.3, -0.4]).unwrap();
        let qp = condense(&pred, &problem, &z0, 0).unwrap().unwrap();
        let min = qp.hessian.clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * qp.hessian.amax().max(1.0), "{min}");
        let sol = solve_horizon(&pred, &problem, &z0, 0).unwrap();
        prop_assert!(!sol.nonconvex);
        prop_assert!(sol.min_hessian_eigenvalue.is_some_and(|v| v >= -1e-10));
    }

    #[test]
    fn convex_solution_beats_feasible_perturbations(seed in any::<u64>(), structure in convex_structure()) {
        let pred = random_predictor(seed, structure);
        let problem = random_problem(seed, &pred, 0);
        let z0 = pred.dictionary().lift(&[-0.2, 0.6]).unwrap();
        let qp = condense(&pred, &problem, &z0, 0).unwrap().unwrap();
        let sol = solve_horizon(&pred, &problem, &z0, 0).unwrap();
        let c = DVector::from_iterator(problem.horizon * 2, sol.controls.concat());
        let best = qp.cost(&c);
        let mut r = common::rng(seed ^ 0xfeed);
        for _ in 0..100 {
            let y = DVector::from_fn(c.len(), |i, _| {
                let j = i % 2;
                r.random_range(problem.lower[j]..problem.upper[j])
            });
            let t = r.random_range(1e-6..1.0);
            let trial = &c + (y - &c) * t;
            prop_assert!(qp.cost(&trial) >= best - 1e-8 * best.abs().max(1.0));
        }
    }

    #[test]
    fn only_the_first_control_is_applied(seed in any::<u64>(), structure in convex_structure()) {
        let pred = random_predictor(seed, structure);
        let problem = random_problem(seed, &pred, 8);
        let sys = Oscillator::default();
        let exact = run_mpc(&pred, &problem, &[0.5, 0.0], 8, &sys).unwrap();
        let garbled = run_mpc_with(&pred, &problem, &[0.5, 0.0], 8, &sys, |p, pr, z, i| {
            let mut sol = solve_horizon(p, pr, z, i)?;
            for c in sol.controls.iter_mut().skip(1) {
                c.iter_mut().for_each(|v| *v = 1e6);
            }
            Ok(sol)
        }).unwrap();
        prop_assert_eq!(exact.states, garbled.states);
        prop_assert_eq!(exact.controls, garbled.controls);
    }
}

#[test]
fn nonlinear_structure_is_flagged() {
    let pred = random_predictor(3, Structure::Nonlinear);
    let problem = random_problem(3, &pred, 0);
    let z0 = pred.dictionary().lift(&[0.1, 0.1]).unwrap();
    assert!(condense(&pred, &problem, &z0, 0).unwrap().is_none());
    let sol = solve_horizon(&pred, &problem, &z0, 0).unwrap();
    assert!(sol.nonconvex && sol.min_hessian_eigenvalue.is_none());
}
