//! Experiment drivers. Each writes its data files into the configured output directory and
//! finishes with `summary.json`.

use crate::config::{ExperimentConfig, ExperimentId};
use crate::output::{emit_summary, num, write_json, Cell, Table};
use crate::{Artifacts, CliError, CliResult};
use modcomb::combiner::write_history_csv;
use modcomb::mpc::oscillator_benchmark;
use modcomb::studies::{nu_rate_study, reaction_diffusion_study, toy_study};
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn table(&mut self, table: &Table, name: &str) -> CliResult<()> {
        let p = self.path(name);
        table.write_csv(&p)
    }

    fn summary_table(&mut self, table: &Table, stem: &str) -> CliResult<()> {
        self.files.push(format!("{stem}.csv"));
        self.files.push(format!("{stem}.json"));
        emit_summary(table, &self.dir, stem).map(|_| ())
    }

    fn json(&mut self, value: &Value, name: &str) -> CliResult<()> {
        let p = self.path(name);
        write_json(&p, value)
    }

    fn finish(self) -> Artifacts {
        Artifacts {
            dir: self.dir,
            files: self.files,
        }
    }
}

/// Runs the configured experiment and writes its artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> CliResult<Artifacts> {
    config.validate()?;
    let mut w = Writer::new(&config.out)?;
    let body = match config.experiment {
        ExperimentId::NuRate => nu_rate(config, &mut w)?,
        ExperimentId::ReactionDiffusion => reaction_diffusion(config, &mut w)?,
        ExperimentId::ToySuboptimality => toy(config, &mut w)?,
        ExperimentId::MpcCompare => mpc_compare(config, &mut w)?,
    };
    let mut summary = Map::new();
    summary.insert("experiment".into(), Value::from(config.experiment.name()));
    summary.insert("seed".into(), Value::from(config.seed));
    summary.extend(body);
    w.json(&Value::Object(summary), "summary.json")?;
    Ok(w.finish())
}

fn nu_rate(config: &ExperimentConfig, w: &mut Writer) -> CliResult<Map<String, Value>> {
    let results = nu_rate_study(&config.nu_rate, config.seed)?;
    let mut slopes = Table::new(&[
        "nu",
        "c_closed_form",
        "c_measured",
        "predicted_slope",
        "measured_slope",
        "relative_mismatch",
        "iterations",
        "converged",
    ]);
    for r in &results {
        let mut t = Table::new(&["n", "error_to_oracle", "residual"]);
        for (&(n, e), &(_, res)) in r.errors.iter().zip(&r.residuals) {
            t.push(vec![n.into(), e.into(), res.into()])?;
        }
        w.table(&t, &format!("convergence_nu_{}.csv", r.nu))?;
        slopes.push(vec![
            r.nu.into(),
            r.c_closed_form.into(),
            r.c_measured.into(),
            r.predicted_slope.into(),
            r.measured_slope.into(),
            r.slope_mismatch().into(),
            r.errors.len().into(),
            r.converged.into(),
        ])?;
    }
    w.summary_table(&slopes, "slopes")?;
    let mut m = Map::new();
    m.insert("slopes".into(), slopes.to_json());
    Ok(m)
}

fn reaction_diffusion(config: &ExperimentConfig, w: &mut Writer) -> CliResult<Map<String, Value>> {
    let report = reaction_diffusion_study(&config.reaction_diffusion, config.seed)?;
    let mut table = Table::new(&["method", "domain_relative_error", "diverged_trajectories"]);
    for m in &report.methods {
        table.push(vec![m.method.as_str().into(), m.domain_error.into(), m.diverged.into()])?;
    }
    w.summary_table(&table, "method_errors")?;

    let mut cols = vec!["step".to_string()];
    for m in &report.methods {
        cols.push(format!("{}_mean", m.method));
        cols.push(format!("{}_std", m.method));
    }
    let mut stepwise = Table::new(&cols);
    let steps = report.methods.first().map_or(0, |m| m.stepwise_mean.len());
    for k in 0..steps {
        let mut row = vec![Cell::from(k)];
        for m in &report.methods {
            row.push(m.stepwise_mean[k].into());
            row.push(m.stepwise_std[k].into());
        }
        stepwise.push(row)?;
    }
    w.table(&stepwise, "stepwise_error.csv")?;

    let p = w.path("history.csv");
    write_history_csv(&report.history, &p)?;

    let mut mu = Table::new(&["n", "relative_mu_error"]);
    for &(n, e) in &report.mu_errors {
        mu.push(vec![n.into(), e.into()])?;
    }
    w.table(&mu, "mu_error.csv")?;

    let mut cols = vec!["u".to_string()];
    cols.extend(report.curves.iter().map(|c| c.label.clone()));
    let mut curves = Table::new(&cols);
    for (i, &u) in report.curve_u.iter().enumerate() {
        let mut row = vec![Cell::from(u)];
        row.extend(report.curves.iter().map(|c| Cell::from(c.values[i])));
        curves.push(row)?;
    }
    w.table(&curves, "reaction_curves.csv")?;

    let mut m = Map::new();
    m.insert("converged".into(), Value::from(report.converged));
    m.insert("iterations".into(), Value::from(report.history.len()));
    m.insert("fitted_mu".into(), num(report.fitted_mu));
    m.insert("method_errors".into(), table.to_json());
    Ok(m)
}

fn toy(config: &ExperimentConfig, w: &mut Writer) -> CliResult<Map<String, Value>> {
    let r = toy_study(&config.toy_suboptimality.combiner)?;
    let mut t = Table::new(&["method", "error", "iterations"]);
    t.push(vec!["residual_learning".into(), r.residual_learning_error.into(), 1usize.into()])?;
    t.push(vec!["iterative".into(), r.iterative_error.into(), r.iterative_iterations.into()])?;
    t.push(vec!["accelerated".into(), r.accelerated_error.into(), r.accelerated_iterations.into()])?;
    w.summary_table(&t, "toy")?;
    let mut errors = Table::new(&["n", "error"]);
    for (i, &e) in r.errors.iter().enumerate() {
        errors.push(vec![(i + 1).into(), e.into()])?;
    }
    w.table(&errors, "toy_errors.csv")?;
    let mut m = Map::new();
    m.insert("methods".into(), t.to_json());
    Ok(m)
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn mpc_compare(config: &ExperimentConfig, w: &mut Writer) -> CliResult<Map<String, Value>> {
    let mc = &config.mpc_compare;
    let timed = config.record_wall_time;
    let mut cols = vec![
        "seed",
        "structure",
        "mean_tracking_error",
        "median_solve_evaluations",
        "min_hessian_eigenvalue",
        "training_iterations",
    ];
    if timed {
        cols.push("median_solve_time_s");
    }
    let mut runs = Table::new(&cols);
    let mut per_structure: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![Default::default(); mc.structures.len()];
    for seed in config.seed..config.seed + mc.seeds {
        let results = oscillator_benchmark(&mc.benchmark, &mc.structures, seed)?;
        for (k, run) in results.iter().enumerate() {
            let name = run.structure.name();
            let p = w.path(&format!("tracking_{name}_seed{seed}.csv"));
            run.result.write_csv(&p, timed)?;
            let min_eig = run
                .result
                .min_hessian_eigenvalues
                .iter()
                .flatten()
                .copied()
                .reduce(f64::min);
            let evals = run.result.median_evaluations();
            let mut row = vec![
                seed.into(),
                name.into(),
                run.result.mean_tracking_error.into(),
                evals.into(),
                min_eig.into(),
                run.predictor.training.iterations.into(),
            ];
            if timed {
                row.push(run.result.median_solve_time().into());
            }
            runs.push(row)?;
            let s = &mut per_structure[k];
            s.0.push(run.result.mean_tracking_error);
            s.1.extend(evals);
            s.2.extend(run.result.median_solve_time());
        }
    }
    w.summary_table(&runs, "runs")?;
    let mut cols = vec!["structure", "median_mean_tracking_error", "median_solve_evaluations"];
    if timed {
        cols.push("median_solve_time_s");
    }
    let mut agg = Table::new(&cols);
    for (s, (mte, ev, tm)) in mc.structures.iter().zip(per_structure.iter_mut()) {
        let mut row = vec![s.name().into(), median(mte).into(), median(ev).into()];
        if timed {
            row.push(median(tm).into());
        }
        agg.push(row)?;
    }
    w.summary_table(&agg, "structures")?;
    let mut m = Map::new();
    m.insert("seeds".into(), json!(mc.seeds));
    m.insert("structures".into(), agg.to_json());
    Ok(m)
}
