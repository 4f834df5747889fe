//! Datasets, feature maps, the empirical inner product and least-squares projection.

use crate::error::{check_dim, Error, Result};
use crate::linalg::Factorization;
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

/// Default relative singular-value cutoff for least squares.
pub const DEFAULT_EPS_REG: f64 = 1e-10;

/// One evaluation point: state plus optional control and external inputs.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a, T> {
    pub state: &'a [T],
    pub control: &'a [T],
    pub external: &'a [T],
}

impl<'a, T> Sample<'a, T> {
    pub fn state(state: &'a [T]) -> Self {
        Self {
            state,
            control: &[],
            external: &[],
        }
    }
}

/// Snapshot pairs `(x_i, y_i)` with optional controls and externals.
///
/// Inputs, controls and externals are stored row-major; targets as an `N × K_out` matrix,
/// which is also the layout of every function-on-data in this crate.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet<T: Real> {
    n: usize,
    input_dim: usize,
    inputs: Vec<T>,
    targets: DMatrix<T>,
    control_dim: usize,
    controls: Vec<T>,
    external_dim: usize,
    externals: Vec<T>,
}

fn flatten_rows<T: Real>(rows: &[Vec<T>], context: &'static str) -> Result<(usize, Vec<T>)> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for row in rows {
        check_dim(context, dim, row.len())?;
        if row.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite(context));
        }
        flat.extend_from_slice(row);
    }
    Ok((dim, flat))
}

impl<T: Real> DataSet<T> {
    pub fn new(inputs: &[Vec<T>], targets: &[Vec<T>]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        check_dim("dataset targets", inputs.len(), targets.len())?;
        let (input_dim, inputs_flat) = flatten_rows(inputs, "dataset inputs")?;
        let (target_dim, targets_flat) = flatten_rows(targets, "dataset targets")?;
        Ok(Self {
            n: inputs.len(),
            input_dim,
            inputs: inputs_flat,
            targets: DMatrix::from_row_slice(inputs.len(), target_dim, &targets_flat),
            control_dim: 0,
            controls: Vec::new(),
            external_dim: 0,
            externals: Vec::new(),
        })
    }

    /// Builds a dataset from row-major input storage and an `N × K_out` target matrix.
    pub fn from_parts(input_dim: usize, inputs: Vec<T>, targets: DMatrix<T>) -> Result<Self> {
        let n = targets.nrows();
        if n == 0 {
            return Err(Error::EmptyDataSet);
        }
        check_dim("dataset inputs", n * input_dim, inputs.len())?;
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self {
            n,
            input_dim,
            inputs,
            targets,
            control_dim: 0,
            controls: Vec::new(),
            external_dim: 0,
            externals: Vec::new(),
        })
    }

    pub fn with_controls(mut self, controls: &[Vec<T>]) -> Result<Self> {
        check_dim("dataset controls", self.n, controls.len())?;
        let (dim, flat) = flatten_rows(controls, "dataset controls")?;
        self.control_dim = dim;
        self.controls = flat;
        Ok(self)
    }

    pub fn with_externals(mut self, externals: &[Vec<T>]) -> Result<Self> {
        check_dim("dataset externals", self.n, externals.len())?;
        let (dim, flat) = flatten_rows(externals, "dataset externals")?;
        self.external_dim = dim;
        self.externals = flat;
        Ok(self)
    }

    /// Same inputs, controls and externals with new targets.
    pub fn with_targets(&self, targets: DMatrix<T>) -> Result<Self> {
        check_dim("dataset targets", self.n, targets.nrows())?;
        if targets.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite("dataset targets"));
        }
        Ok(Self {
            targets,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn external_dim(&self) -> usize {
        self.external_dim
    }

    pub fn input(&self, i: usize) -> &[T] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn control(&self, i: usize) -> &[T] {
        &self.controls[i * self.control_dim..(i + 1) * self.control_dim]
    }

    pub fn external(&self, i: usize) -> &[T] {
        &self.externals[i * self.external_dim..(i + 1) * self.external_dim]
    }

    pub fn sample(&self, i: usize) -> Sample<'_, T> {
        Sample {
            state: self.input(i),
            control: self.control(i),
            external: self.external(i),
        }
    }

    pub fn targets(&self) -> &DMatrix<T> {
        &self.targets
    }

    /// Evaluates `f` at every sample; returns the `N × dim` matrix of values.
    pub fn evaluate<F>(&self, dim: usize, f: F) -> Result<DMatrix<T>>
    where
        F: Fn(&Sample<'_, T>) -> Vec<T> + Sync,
    {
        let rows: Vec<Vec<T>> = (0..self.n).into_par_iter().map(|i| f(&self.sample(i))).collect();
        let mut out = DMatrix::zeros(self.n, dim);
        for (i, row) in rows.iter().enumerate() {
            check_dim("function value", dim, row.len())?;
            for (k, v) in row.iter().enumerate() {
                out[(i, k)] = *v;
            }
        }
        Ok(out)
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.input_dim).map(|k| format!("x_{k}")).collect();
        h.extend((0..self.target_dim()).map(|k| format!("y_{k}")));
        h.extend((0..self.control_dim).map(|k| format!("c_{k}")));
        h.extend((0..self.external_dim).map(|k| format!("e_{k}")));
        h
    }

    /// Writes `<stem>.csv` (one row per pair) and `<stem>.json` (dimensions manifest).
    pub fn write_csv(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(self.header())?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.input(i).iter().map(|v| v.to_string()).collect();
            rec.extend(self.targets.row(i).iter().map(|v| v.to_string()));
            rec.extend(self.control(i).iter().map(|v| v.to_string()));
            rec.extend(self.external(i).iter().map(|v| v.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        let manifest = DataSetManifest {
            count: self.n,
            input_dim: self.input_dim,
            target_dim: self.target_dim(),
            control_dim: self.control_dim,
            external_dim: self.external_dim,
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    /// Reads a dataset written by [`DataSet::write_csv`].
    pub fn read_csv(dir: &Path, stem: &str) -> Result<Self> {
        let manifest: DataSetManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let width = manifest.input_dim
            + manifest.target_dim
            + manifest.control_dim
            + manifest.external_dim;
        let (mut x, mut y, mut c, mut e) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            check_dim("dataset csv row", width, rec.len())?;
            let vals: Vec<T> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map(T::lit)
                        .map_err(|_| Error::InvalidParameter(format!("bad number `{s}`")))
                })
                .collect::<Result<_>>()?;
            let (a, rest) = vals.split_at(manifest.input_dim);
            let (b, rest) = rest.split_at(manifest.target_dim);
            let (cc, ee) = rest.split_at(manifest.control_dim);
            x.push(a.to_vec());
            y.push(b.to_vec());
            c.push(cc.to_vec());
            e.push(ee.to_vec());
        }
        check_dim("dataset csv rows", manifest.count, x.len())?;
        let mut data = Self::new(&x, &y)?;
        if manifest.control_dim > 0 {
            data = data.with_controls(&c)?;
        }
        if manifest.external_dim > 0 {
            data = data.with_externals(&e)?;
        }
        Ok(data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DataSetManifest {
    count: usize,
    input_dim: usize,
    target_dim: usize,
    control_dim: usize,
    external_dim: usize,
}

type Evaluator<T> = dyn Fn(&Sample<'_, T>, &mut [T]) + Send + Sync;

/// Deterministic map Ψ from a sample to ℝ^p.
#[derive(Clone)]
pub struct FeatureMap<T: Real> {
    label: String,
    dim_in: usize,
    dim_out: usize,
    control_dim: usize,
    external_dim: usize,
    eval: Arc<Evaluator<T>>,
}

impl<T: Real> fmt::Debug for FeatureMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMap")
            .field("label", &self.label)
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .finish()
    }
}

impl<T: Real> FeatureMap<T> {
    /// Map on states only; `eval` writes exactly `dim_out` values.
    pub fn new<F>(label: impl Into<String>, dim_in: usize, dim_out: usize, eval: F) -> Self
    where
        F: Fn(&[T], &mut [T]) + Send + Sync + 'static,
    {
        Self::with_inputs(label, dim_in, 0, 0, dim_out, move |s, out| eval(s.state, out))
    }

    /// Map reading state, control and external inputs of the given dimensions.
    pub fn with_inputs<F>(
        label: impl Into<String>,
        dim_in: usize,
        control_dim: usize,
        external_dim: usize,
        dim_out: usize,
        eval: F,
    ) -> Self
    where
        F: Fn(&Sample<'_, T>, &mut [T]) + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            dim_in,
            dim_out,
            control_dim,
            external_dim,
            eval: Arc::new(eval),
        }
    }

    /// Monomials `[1, x, …, x^degree]` of a scalar state.
    pub fn polynomial(degree: usize) -> Self {
        Self::new(format!("poly{degree}"), 1, degree + 1, |x, out| {
            let mut p = T::one();
            for o in out.iter_mut() {
                *o = p;
                p *= x[0];
            }
        })
    }

    /// Identity features Ψ(x) = x.
    pub fn identity(dim: usize) -> Self {
        Self::new(format!("identity{dim}"), dim, dim, |x, out| out.copy_from_slice(x))
    }

    /// Raw control vector as features.
    pub fn control(state_dim: usize, control_dim: usize) -> Self {
        Self::with_inputs("control", state_dim, control_dim, 0, control_dim, |s, out| {
            out.copy_from_slice(s.control)
        })
    }

    /// Features `[a(x), b(x)]`.
    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        check_dim("concatenated feature maps", a.dim_in, b.dim_in)?;
        let (fa, fb) = (a.clone(), b.clone());
        let pa = a.dim_out;
        Ok(Self::with_inputs(
            format!("{}+{}", a.label, b.label),
            a.dim_in,
            a.control_dim.max(b.control_dim),
            a.external_dim.max(b.external_dim),
            a.dim_out + b.dim_out,
            move |s, out| {
                let (oa, ob) = out.split_at_mut(pa);
                (fa.eval)(s, oa);
                (fb.eval)(s, ob);
            },
        ))
    }

    /// Applies `self` to the state components listed in `indices`.
    pub fn select(&self, dim_in: usize, indices: Vec<usize>) -> Result<Self> {
        check_dim("selected components", self.dim_in, indices.len())?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim_in) {
            return Err(Error::InvalidParameter(format!(
                "component {bad} outside state of dimension {dim_in}"
            )));
        }
        let inner = self.clone();
        Ok(Self::with_inputs(
            format!("{}@{:?}", self.label, indices),
            dim_in,
            self.control_dim,
            self.external_dim,
            self.dim_out,
            move |s, out| {
                let picked: Vec<T> = indices.iter().map(|&i| s.state[i]).collect();
                (inner.eval)(
                    &Sample {
                        state: &picked,
                        control: s.control,
                        external: s.external,
                    },
                    out,
                );
            },
        ))
    }

    /// Multiplies every feature by `factor` (same span, rescaled coefficients).
    pub fn scaled(&self, factor: T) -> Self {
        let inner = self.clone();
        Self::with_inputs(
            self.label.clone(),
            self.dim_in,
            self.control_dim,
            self.external_dim,
            self.dim_out,
            move |s, out| {
                (inner.eval)(s, out);
                for o in out.iter_mut() {
                    *o *= factor;
                }
            },
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn external_dim(&self) -> usize {
        self.external_dim
    }

    fn check_sample(&self, s: &Sample<'_, T>) -> Result<()> {
        check_dim("feature-map state", self.dim_in, s.state.len())?;
        if self.control_dim > 0 {
            check_dim("feature-map control", self.control_dim, s.control.len())?;
        }
        if self.external_dim > 0 {
            check_dim("feature-map external", self.external_dim, s.external.len())?;
        }
        Ok(())
    }

    /// Ψ evaluated at a sample.
    pub fn evaluate_sample(&self, s: &Sample<'_, T>) -> Result<Vec<T>> {
        self.check_sample(s)?;
        let mut out = vec![T::zero(); self.dim_out];
        (self.eval)(s, &mut out);
        Ok(out)
    }

    pub(crate) fn evaluate_unchecked(&self, s: &Sample<'_, T>, out: &mut [T]) {
        (self.eval)(s, out);
    }

    /// `N × p` matrix of features evaluated on every sample.
    pub fn design_matrix(&self, data: &DataSet<T>) -> Result<DMatrix<T>> {
        if data.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        check_dim("feature-map state", self.dim_in, data.input_dim())?;
        if self.control_dim > 0 && data.control_dim() == 0 {
            return Err(Error::MissingInput("controls"));
        }
        if self.external_dim > 0 && data.external_dim() == 0 {
            return Err(Error::MissingInput("externals"));
        }
        self.check_sample(&data.sample(0))?;
        let p = self.dim_out;
        let mut rows = vec![T::zero(); data.len() * p];
        rows.par_chunks_mut(p)
            .enumerate()
            .for_each(|(i, out)| (self.eval)(&data.sample(i), out));
        Ok(DMatrix::from_row_slice(data.len(), p, &rows))
    }
}

/// Ψ(x) at a bare state.
pub fn evaluate_features<T: Real>(map: &FeatureMap<T>, x: &[T]) -> Result<Vec<T>> {
    map.evaluate_sample(&Sample::state(x))
}

/// Anything that maps a sample to a prediction in target space.
pub trait Predictor<T: Real>: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict_sample(&self, sample: &Sample<'_, T>) -> Result<Vec<T>>;

    fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        self.predict_sample(&Sample::state(x))
    }

    /// `N × K_out` predictions on every sample of `data`.
    fn predict_dataset(&self, data: &DataSet<T>) -> Result<DMatrix<T>> {
        let rows: Vec<Result<Vec<T>>> = (0..data.len())
            .into_par_iter()
            .map(|i| self.predict_sample(&data.sample(i)))
            .collect();
        let mut out = DMatrix::zeros(data.len(), self.output_dim());
        for (i, row) in rows.into_iter().enumerate() {
            for (k, v) in row?.into_iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        Ok(out)
    }
}

/// Affine combination of two models of the same hypothesis space.
pub trait Blend<T: Real>: Sized {
    /// Returns `t·self + (1 − t)·previous`.
    fn blend(&self, previous: &Self, t: T) -> Result<Self>;
}

/// A fitted model and its evaluations on the training data.
#[derive(Clone, Debug)]
pub struct Fit<T: Real, M> {
    pub model: M,
    pub values: DMatrix<T>,
}

/// A projection-based learner: given targets on its dataset, returns the best fit in its space.
pub trait Learner<T: Real> {
    type Model: Predictor<T> + Blend<T> + Clone;

    fn label(&self) -> &str;
    fn sample_count(&self) -> usize;
    fn target_dim(&self) -> usize;
    /// Projects `targets` (`N × K_out`) onto the hypothesis space.
    fn project(&self, targets: &DMatrix<T>) -> Result<Fit<T, Self::Model>>;
    /// The zero function of the hypothesis space.
    fn zero_model(&self) -> Self::Model;
}

/// x ↦ W·Ψ(x).
#[derive(Clone, Debug)]
pub struct FeatureModel<T: Real> {
    map: FeatureMap<T>,
    coefficients: DMatrix<T>,
}

impl<T: Real> FeatureModel<T> {
    pub fn new(map: FeatureMap<T>, coefficients: DMatrix<T>) -> Result<Self> {
        check_dim("coefficient columns", map.dim_out(), coefficients.ncols())?;
        Ok(Self { map, coefficients })
    }

    pub fn feature_map(&self) -> &FeatureMap<T> {
        &self.map
    }

    /// `K_out × p` coefficient matrix.
    pub fn coefficients(&self) -> &DMatrix<T> {
        &self.coefficients
    }
}

impl<T: Real> Predictor<T> for FeatureModel<T> {
    fn input_dim(&self) -> usize {
        self.map.dim_in()
    }

    fn output_dim(&self) -> usize {
        self.coefficients.nrows()
    }

    fn predict_sample(&self, sample: &Sample<'_, T>) -> Result<Vec<T>> {
        let psi = self.map.evaluate_sample(sample)?;
        Ok((0..self.coefficients.nrows())
            .map(|k| {
                self.coefficients
                    .row(k)
                    .iter()
                    .zip(&psi)
                    .fold(T::zero(), |acc, (w, p)| acc + *w * *p)
            })
            .collect())
    }
}

impl<T: Real> Blend<T> for FeatureModel<T> {
    fn blend(&self, previous: &Self, t: T) -> Result<Self> {
        check_dim("blended coefficients", self.coefficients.len(), previous.coefficients.len())?;
        Ok(Self {
            map: self.map.clone(),
            coefficients: &self.coefficients * t + &previous.coefficients * (T::one() - t),
        })
    }
}

/// Least-squares projection onto span Ψ, factorized once for its dataset.
#[derive(Clone, Debug)]
pub struct LeastSquaresLearner<T: Real> {
    map: FeatureMap<T>,
    design: DMatrix<T>,
    factor: Factorization<T>,
    target_dim: usize,
}

impl<T: Real> LeastSquaresLearner<T> {
    pub fn new(data: &DataSet<T>, map: FeatureMap<T>) -> Result<Self> {
        Self::with_eps(data, map, T::lit(DEFAULT_EPS_REG))
    }

    pub fn with_eps(data: &DataSet<T>, map: FeatureMap<T>, eps_reg: T) -> Result<Self> {
        let design = map.design_matrix(data)?;
        let factor = Factorization::new(&design, eps_reg, map.label())?;
        Ok(Self {
            map,
            design,
            factor,
            target_dim: data.target_dim(),
        })
    }

    pub fn feature_map(&self) -> &FeatureMap<T> {
        &self.map
    }

    /// Numerical rank of the design matrix.
    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    /// `N × p` feature evaluations on the training data.
    pub fn design(&self) -> &DMatrix<T> {
        &self.design
    }
}

impl<T: Real> Learner<T> for LeastSquaresLearner<T> {
    type Model = FeatureModel<T>;

    fn label(&self) -> &str {
        self.map.label()
    }

    fn sample_count(&self) -> usize {
        self.design.nrows()
    }

    fn target_dim(&self) -> usize {
        self.target_dim
    }

    fn project(&self, targets: &DMatrix<T>) -> Result<Fit<T, FeatureModel<T>>> {
        check_dim("projection targets", self.design.nrows(), targets.nrows())?;
        if targets.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite("projection targets"));
        }
        let w = self.factor.solve(targets);
        let values = &self.design * &w;
        Ok(Fit {
            model: FeatureModel {
                map: self.map.clone(),
                coefficients: w.transpose(),
            },
            values,
        })
    }

    fn zero_model(&self) -> FeatureModel<T> {
        FeatureModel {
            map: self.map.clone(),
            coefficients: DMatrix::zeros(self.target_dim, self.map.dim_out()),
        }
    }
}

type VectorEvaluator<T> = dyn Fn(&Sample<'_, T>, &mut [T]) + Send + Sync;

/// Vector-valued features ψ_j: X → ℝ^K whose coefficients are shared by all outputs.
///
/// The hypothesis space is span{ψ_1, …, ψ_p}. The evaluator fills a row-major `K × p` block.
#[derive(Clone)]
pub struct VectorFeatureMap<T: Real> {
    label: String,
    dim_in: usize,
    dim_out: usize,
    features: usize,
    control_dim: usize,
    external_dim: usize,
    eval: Arc<VectorEvaluator<T>>,
}

impl<T: Real> fmt::Debug for VectorFeatureMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFeatureMap")
            .field("label", &self.label)
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("features", &self.features)
            .finish()
    }
}

impl<T: Real> VectorFeatureMap<T> {
    pub fn new<F>(
        label: impl Into<String>,
        dim_in: usize,
        dim_out: usize,
        features: usize,
        eval: F,
    ) -> Self
    where
        F: Fn(&[T], &mut [T]) + Send + Sync + 'static,
    {
        Self::with_inputs(label, dim_in, 0, 0, dim_out, features, move |s, out| {
            eval(s.state, out)
        })
    }

    pub fn with_inputs<F>(
        label: impl Into<String>,
        dim_in: usize,
        control_dim: usize,
        external_dim: usize,
        dim_out: usize,
        features: usize,
        eval: F,
    ) -> Self
    where
        F: Fn(&Sample<'_, T>, &mut [T]) + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            dim_in,
            dim_out,
            features,
            control_dim,
            external_dim,
            eval: Arc::new(eval),
        }
    }

    /// Constant vector-valued features, one per column of `columns` (`K × p`).
    pub fn constant(label: impl Into<String>, dim_in: usize, columns: DMatrix<T>) -> Self {
        let (k, p) = columns.shape();
        Self::new(label, dim_in, k, p, move |_, out| {
            for r in 0..k {
                for j in 0..p {
                    out[r * p + j] = columns[(r, j)];
                }
            }
        })
    }

    /// A scalar map applied to every state component with shared coefficients:
    /// ψ_j(x)_k = φ_j(x_k).
    pub fn pointwise(scalar: &FeatureMap<T>, dim: usize) -> Result<Self> {
        check_dim("pointwise scalar map input", 1, scalar.dim_in())?;
        let inner = scalar.clone();
        let p = scalar.dim_out();
        Ok(Self::new(
            format!("pointwise({})", scalar.label()),
            dim,
            dim,
            p,
            move |x, out| {
                for k in 0..dim {
                    inner.evaluate_unchecked(&Sample::state(&x[k..k + 1]), &mut out[k * p..(k + 1) * p]);
                }
            },
        ))
    }

    /// `[a, b]` as one family of features.
    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        check_dim("concatenated vector maps input", a.dim_in, b.dim_in)?;
        check_dim("concatenated vector maps output", a.dim_out, b.dim_out)?;
        let (fa, fb) = (a.clone(), b.clone());
        let (pa, pb, k) = (a.features, b.features, a.dim_out);
        Ok(Self::with_inputs(
            format!("{}+{}", a.label, b.label),
            a.dim_in,
            a.control_dim.max(b.control_dim),
            a.external_dim.max(b.external_dim),
            k,
            pa + pb,
            move |s, out| {
                let mut ba = vec![T::zero(); k * pa];
                let mut bb = vec![T::zero(); k * pb];
                (fa.eval)(s, &mut ba);
                (fb.eval)(s, &mut bb);
                for r in 0..k {
                    let row = &mut out[r * (pa + pb)..(r + 1) * (pa + pb)];
                    row[..pa].copy_from_slice(&ba[r * pa..(r + 1) * pa]);
                    row[pa..].copy_from_slice(&bb[r * pb..(r + 1) * pb]);
                }
            },
        ))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// Number p of generating functions.
    pub fn features(&self) -> usize {
        self.features
    }

    /// Row-major `K × p` block of feature values at a sample.
    pub fn evaluate_sample(&self, s: &Sample<'_, T>) -> Result<Vec<T>> {
        check_dim("vector feature-map state", self.dim_in, s.state.len())?;
        if self.control_dim > 0 {
            check_dim("vector feature-map control", self.control_dim, s.control.len())?;
        }
        if self.external_dim > 0 {
            check_dim("vector feature-map external", self.external_dim, s.external.len())?;
        }
        let mut out = vec![T::zero(); self.dim_out * self.features];
        (self.eval)(s, &mut out);
        Ok(out)
    }

    /// `(N·K) × p` matrix; row `i·K + k` holds output `k` of every feature at sample `i`.
    pub fn design_matrix(&self, data: &DataSet<T>) -> Result<DMatrix<T>> {
        if data.is_empty() {
            return Err(Error::EmptyDataSet);
        }
        check_dim("vector feature-map state", self.dim_in, data.input_dim())?;
        if self.control_dim > 0 && data.control_dim() == 0 {
            return Err(Error::MissingInput("controls"));
        }
        if self.external_dim > 0 && data.external_dim() == 0 {
            return Err(Error::MissingInput("externals"));
        }
        self.evaluate_sample(&data.sample(0))?;
        let block = self.dim_out * self.features;
        let mut rows = vec![T::zero(); data.len() * block];
        rows.par_chunks_mut(block)
            .enumerate()
            .for_each(|(i, out)| (self.eval)(&data.sample(i), out));
        Ok(DMatrix::from_row_slice(
            data.len() * self.dim_out,
            self.features,
            &rows,
        ))
    }
}

/// x ↦ Σ_j w_j ψ_j(x).
#[derive(Clone, Debug)]
pub struct VectorFeatureModel<T: Real> {
    map: VectorFeatureMap<T>,
    coefficients: DVector<T>,
}

impl<T: Real> VectorFeatureModel<T> {
    pub fn new(map: VectorFeatureMap<T>, coefficients: DVector<T>) -> Result<Self> {
        check_dim("shared coefficients", map.features(), coefficients.len())?;
        Ok(Self { map, coefficients })
    }

    pub fn feature_map(&self) -> &VectorFeatureMap<T> {
        &self.map
    }

    pub fn coefficients(&self) -> &DVector<T> {
        &self.coefficients
    }
}

impl<T: Real> Predictor<T> for VectorFeatureModel<T> {
    fn input_dim(&self) -> usize {
        self.map.dim_in()
    }

    fn output_dim(&self) -> usize {
        self.map.dim_out()
    }

    fn predict_sample(&self, sample: &Sample<'_, T>) -> Result<Vec<T>> {
        let block = self.map.evaluate_sample(sample)?;
        let p = self.map.features();
        Ok(block
            .chunks(p)
            .map(|row| {
                row.iter()
                    .zip(self.coefficients.iter())
                    .fold(T::zero(), |acc, (f, w)| acc + *f * *w)
            })
            .collect())
    }
}

impl<T: Real> Blend<T> for VectorFeatureModel<T> {
    fn blend(&self, previous: &Self, t: T) -> Result<Self> {
        check_dim("blended coefficients", self.coefficients.len(), previous.coefficients.len())?;
        Ok(Self {
            map: self.map.clone(),
            coefficients: &self.coefficients * t + &previous.coefficients * (T::one() - t),
        })
    }
}

/// Row-major flattening of an `N × K` value matrix into an `N·K` column.
pub(crate) fn flatten_values<T: Real>(values: &DMatrix<T>) -> DMatrix<T> {
    let (n, k) = values.shape();
    DMatrix::from_fn(n * k, 1, |r, _| values[(r / k, r % k)])
}

pub(crate) fn unflatten_values<T: Real>(flat: &DMatrix<T>, n: usize, k: usize) -> DMatrix<T> {
    DMatrix::from_fn(n, k, |i, c| flat[(i * k + c, 0)])
}

/// Least-squares projection onto the span of vector-valued features.
#[derive(Clone, Debug)]
pub struct VectorLeastSquaresLearner<T: Real> {
    map: VectorFeatureMap<T>,
    design: DMatrix<T>,
    factor: Factorization<T>,
    n: usize,
}

impl<T: Real> VectorLeastSquaresLearner<T> {
    pub fn new(data: &DataSet<T>, map: VectorFeatureMap<T>) -> Result<Self> {
        Self::with_eps(data, map, T::lit(DEFAULT_EPS_REG))
    }

    pub fn with_eps(data: &DataSet<T>, map: VectorFeatureMap<T>, eps_reg: T) -> Result<Self> {
        check_dim("vector feature-map output", data.target_dim(), map.dim_out())?;
        let design = map.design_matrix(data)?;
        let factor = Factorization::new(&design, eps_reg, map.label())?;
        Ok(Self {
            map,
            design,
            factor,
            n: data.len(),
        })
    }

    pub fn feature_map(&self) -> &VectorFeatureMap<T> {
        &self.map
    }

    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    /// `(N·K) × p` flattened feature evaluations.
    pub fn design(&self) -> &DMatrix<T> {
        &self.design
    }
}

impl<T: Real> Learner<T> for VectorLeastSquaresLearner<T> {
    type Model = VectorFeatureModel<T>;

    fn label(&self) -> &str {
        self.map.label()
    }

    fn sample_count(&self) -> usize {
        self.n
    }

    fn target_dim(&self) -> usize {
        self.map.dim_out()
    }

    fn project(&self, targets: &DMatrix<T>) -> Result<Fit<T, VectorFeatureModel<T>>> {
        check_dim("projection targets", self.n, targets.nrows())?;
        check_dim("projection target columns", self.map.dim_out(), targets.ncols())?;
        if targets.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite("projection targets"));
        }
        let w = self.factor.solve(&flatten_values(targets));
        let values = unflatten_values(&(&self.design * &w), self.n, self.map.dim_out());
        Ok(Fit {
            model: VectorFeatureModel {
                map: self.map.clone(),
                coefficients: w.column(0).into_owned(),
            },
            values,
        })
    }

    fn zero_model(&self) -> VectorFeatureModel<T> {
        VectorFeatureModel {
            map: self.map.clone(),
            coefficients: DVector::zeros(self.map.features()),
        }
    }
}

/// argmin_W (1/N)Σ‖y_i − WΨ(x_i)‖², optionally against overriding targets.
pub fn fit_projection<T: Real>(
    data: &DataSet<T>,
    map: &FeatureMap<T>,
    residual_targets: Option<&DMatrix<T>>,
) -> Result<FeatureModel<T>> {
    let targets = residual_targets.unwrap_or(data.targets());
    check_dim("residual target rows", data.len(), targets.nrows())?;
    check_dim("residual target columns", data.target_dim(), targets.ncols())?;
    let learner = LeastSquaresLearner::new(data, map.clone())?;
    Ok(learner.project(targets)?.model)
}

/// Empirical inner product ⟨f,g⟩_D over a reference dataset.
#[derive(Clone, Copy, Debug)]
pub struct InnerProductContext<'a, T: Real> {
    pub data: &'a DataSet<T>,
    pub eps_reg: T,
}

impl<'a, T: Real> InnerProductContext<'a, T> {
    pub fn new(data: &'a DataSet<T>) -> Self {
        Self {
            data,
            eps_reg: T::lit(DEFAULT_EPS_REG),
        }
    }

    /// (1/N)Σ_i f_iᵀ g_i for `N × K` value matrices.
    pub fn inner(&self, f: &DMatrix<T>, g: &DMatrix<T>) -> Result<T> {
        values_inner(f, g, self.data.len())
    }

    pub fn norm(&self, f: &DMatrix<T>) -> Result<T> {
        Ok(self.inner(f, f)?.max(T::zero()).sqrt())
    }
}

/// ⟨f, g⟩_D of two `N × K` value matrices.
pub fn values_inner<T: Real>(f: &DMatrix<T>, g: &DMatrix<T>, n: usize) -> Result<T> {
    if n == 0 {
        return Err(Error::EmptyDataSet);
    }
    check_dim("inner-product rows", n, f.nrows())?;
    check_dim("inner-product rows", f.nrows(), g.nrows())?;
    check_dim("inner-product columns", f.ncols(), g.ncols())?;
    Ok(f.dot(g) / T::from_usize_lossy(n))
}

/// ‖f‖_D of an `N × K` value matrix.
pub fn values_norm<T: Real>(f: &DMatrix<T>) -> T {
    if f.nrows() == 0 {
        return T::zero();
    }
    (f.dot(f) / T::from_usize_lossy(f.nrows())).sqrt()
}

/// ⟨f,g⟩_D for functions of the sample with output dimension `dim`.
pub fn empirical_inner_product<T, F, G>(
    f: F,
    g: G,
    dim: usize,
    ctx: &InnerProductContext<'_, T>,
) -> Result<T>
where
    T: Real,
    F: Fn(&Sample<'_, T>) -> Vec<T> + Sync,
    G: Fn(&Sample<'_, T>) -> Vec<T> + Sync,
{
    if ctx.data.is_empty() {
        return Err(Error::EmptyDataSet);
    }
    let fv = ctx.data.evaluate(dim, f)?;
    let gv = ctx.data.evaluate(dim, g)?;
    ctx.inner(&fv, &gv)
}

/// (1/N)Σ_i ‖a_i − b_i‖ over rows.
pub fn mean_row_distance<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<T> {
    check_dim("row distance rows", a.nrows(), b.nrows())?;
    check_dim("row distance columns", a.ncols(), b.ncols())?;
    if a.nrows() == 0 {
        return Err(Error::EmptyDataSet);
    }
    let d = a - b;
    let total = d
        .row_iter()
        .fold(T::zero(), |acc, r| acc + r.norm_squared().sqrt());
    Ok(total / T::from_usize_lossy(a.nrows()))
}

/// (1/N)Σ‖y_i − ŷ_i‖ for a model on its dataset.
pub fn model_residual_norm<T: Real, M: Predictor<T> + ?Sized>(
    data: &DataSet<T>,
    model: &M,
) -> Result<T> {
    check_dim("model output", data.target_dim(), model.output_dim())?;
    let pred = model.predict_dataset(data)?;
    mean_row_distance(data.targets(), &pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_data(xs: &[f64], ys: &[f64]) -> DataSet<f64> {
        let x: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
        let y: Vec<Vec<f64>> = ys.iter().map(|v| vec![*v]).collect();
        DataSet::new(&x, &y).unwrap()
    }

    #[test]
    fn polynomial_features() {
        let m = FeatureMap::<f64>::polynomial(3);
        assert_eq!(evaluate_features(&m, &[0.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(evaluate_features(&m, &[2.0]).unwrap(), vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn feature_dimension_mismatch_names_dims() {
        let m = FeatureMap::<f64>::polynomial(3);
        match evaluate_features(&m, &[1.0, 2.0]) {
            Err(Error::DimensionMismatch {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_linear_fit() {
        let d = scalar_data(&[1.0, 2.0], &[2.0, 4.0]);
        let m = fit_projection(&d, &FeatureMap::identity(1), None).unwrap();
        assert!((m.coefficients()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_compromise() {
        let d = scalar_data(&[1.0, -1.0], &[1.0, 0.0]);
        let m = fit_projection(&d, &FeatureMap::identity(1), None).unwrap();
        assert!((m.coefficients()[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cubic_interpolation() {
        let xs = [-1.0, 0.0, 1.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powi(3) - x).collect();
        let d = scalar_data(&xs, &ys);
        let m = fit_projection(&d, &FeatureMap::polynomial(3), None).unwrap();
        assert!(model_residual_norm(&d, &m).unwrap() < 1e-12);
    }

    #[test]
    fn residual_override_is_used() {
        let d = scalar_data(&[1.0, 2.0], &[2.0, 4.0]);
        let alt = DMatrix::from_row_slice(2, 1, &[3.0, 6.0]);
        let m = fit_projection(&d, &FeatureMap::identity(1), Some(&alt)).unwrap();
        assert!((m.coefficients()[(0, 0)] - 3.0).abs() < 1e-12);
        let bad = DMatrix::from_row_slice(1, 1, &[3.0]);
        assert!(fit_projection(&d, &FeatureMap::identity(1), Some(&bad)).is_err());
    }

    #[test]
    fn zero_features_are_degenerate() {
        let d = scalar_data(&[1.0, 2.0], &[2.0, 4.0]);
        let zero = FeatureMap::new("zero", 1, 2, |_, out: &mut [f64]| out.fill(0.0));
        assert!(matches!(
            fit_projection(&d, &zero, None),
            Err(Error::DegenerateFeatureMap(_))
        ));
    }

    #[test]
    fn non_finite_data_rejected() {
        assert!(DataSet::new(&[vec![f64::NAN]], &[vec![1.0]]).is_err());
        let d = scalar_data(&[1.0], &[1.0]);
        let alt = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(fit_projection(&d, &FeatureMap::identity(1), Some(&alt)).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let d = scalar_data(&[-1.0, 1.0], &[0.0, 0.0]);
        let ctx = InnerProductContext::new(&d);
        let x = |s: &Sample<'_, f64>| vec![s.state[0]];
        let one = |_: &Sample<'_, f64>| vec![1.0];
        assert_eq!(empirical_inner_product(x, one, 1, &ctx).unwrap(), 0.0);
        assert_eq!(empirical_inner_product(x, x, 1, &ctx).unwrap(), 1.0);
        let d1 = scalar_data(&[1.0], &[0.0]);
        let ctx1 = InnerProductContext::new(&d1);
        let v = empirical_inner_product(
            |s: &Sample<'_, f64>| vec![2.0 * s.state[0]],
            |s: &Sample<'_, f64>| vec![3.0 * s.state[0]],
            1,
            &ctx1,
        )
        .unwrap();
        assert_eq!(v, 6.0);
    }

    #[test]
    fn empty_inner_product_errors() {
        assert!(values_inner(&DMatrix::<f64>::zeros(0, 1), &DMatrix::zeros(0, 1), 0).is_err());
    }

    #[test]
    fn residual_norm_examples() {
        let d = DataSet::new(&[vec![0.0, 0.0]], &[vec![0.0, 1.0]]).unwrap();
        let zero = FeatureModel::new(FeatureMap::identity(2), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(model_residual_norm(&d, &zero).unwrap(), 1.0);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let b = DMatrix::zeros(2, 2);
        assert_eq!(mean_row_distance(&a, &b).unwrap(), 2.0);
        let ident = FeatureModel::new(FeatureMap::identity(1), DMatrix::from_element(1, 1, 2.0))
            .unwrap();
        let exact = scalar_data(&[1.0, 2.0], &[2.0, 4.0]);
        assert_eq!(model_residual_norm(&exact, &ident).unwrap(), 0.0);
    }

    #[test]
    fn controls_and_externals_flow_to_features() {
        let d = DataSet::new(&[vec![1.0]], &[vec![0.0]])
            .unwrap()
            .with_controls(&[vec![2.0, 3.0]])
            .unwrap();
        let m = FeatureMap::control(1, 2);
        assert_eq!(m.design_matrix(&d).unwrap().row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0]);
        let no_ctrl = DataSet::new(&[vec![1.0]], &[vec![0.0]]).unwrap();
        assert!(matches!(m.design_matrix(&no_ctrl), Err(Error::MissingInput(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("modcomb-ds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let d = DataSet::new(&[vec![0.1, 0.2], vec![1.0 / 3.0, -2.0]], &[vec![1.0, 2.0], vec![3.0, 4.0]])
            .unwrap()
            .with_externals(&[vec![0.5], vec![0.25]])
            .unwrap();
        d.write_csv(&dir, "pairs").unwrap();
        let header = std::fs::read_to_string(dir.join("pairs.csv")).unwrap();
        assert!(header.starts_with("x_0,x_1,y_0,y_1,e_0\n"));
        assert_eq!(DataSet::<f64>::read_csv(&dir, "pairs").unwrap(), d);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn generic_over_f32() {
        let d = DataSet::<f32>::new(&[vec![1.0], vec![2.0]], &[vec![2.0], vec![4.0]]).unwrap();
        let m = fit_projection(&d, &FeatureMap::identity(1), None).unwrap();
        assert!((m.coefficients()[(0, 0)] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn vector_features_share_coefficients() {
        // Single sample, ℝ² target: spans of constant vectors behave like the Euclidean plane.
        let d = DataSet::<f64>::new(&[vec![0.0]], &[vec![0.0, 1.0]]).unwrap();
        let g = VectorFeatureMap::constant("e1", 1, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let l = VectorLeastSquaresLearner::new(&d, g).unwrap();
        let fit = l.project(d.targets()).unwrap();
        assert!(fit.values.iter().all(|v| v.abs() < 1e-15));
        let h = VectorFeatureMap::constant(
            "diag",
            1,
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]) / 2f64.sqrt(),
        );
        let fit = VectorLeastSquaresLearner::new(&d, h).unwrap().project(d.targets()).unwrap();
        assert!((fit.values[(0, 0)] - 0.5).abs() < 1e-15 && (fit.values[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(fit.model.predict(&[0.0]).unwrap(), vec![fit.values[(0, 0)], fit.values[(0, 1)]]);
    }

    #[test]
    fn pointwise_map_pools_components() {
        let xs = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| 3.0 * v).collect()).collect();
        let d = DataSet::new(&xs, &ys).unwrap();
        let m = VectorFeatureMap::pointwise(&FeatureMap::polynomial(1), 2).unwrap();
        let fit = VectorLeastSquaresLearner::new(&d, m).unwrap().project(d.targets()).unwrap();
        assert!((fit.model.coefficients()[1] - 3.0).abs() < 1e-12);
        assert!(fit.model.coefficients()[0].abs() < 1e-12);
    }
}
