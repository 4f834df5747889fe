//! EDMD dictionaries and finite-dimensional Koopman models.

use crate::error::{check_dim, Error, Result};
use crate::hypothesis::{
    flatten_values, unflatten_values, Blend, DataSet, FeatureMap, Fit, Learner, Predictor,
    Sample, DEFAULT_EPS_REG,
};
use crate::linalg::Factorization;
use crate::scalar::Real;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

/// Serializable description of a dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DictionaryDescriptor {
    Polynomial {
        state_dim: usize,
        degree: usize,
    },
    Rbf {
        state_dim: usize,
        centers: Vec<Vec<f64>>,
        width: f64,
    },
    PolynomialRbf {
        state_dim: usize,
        degree: usize,
        centers: Vec<Vec<f64>>,
        width: f64,
    },
}

/// Observables Ψ(x) = [1, x, Φ(x)].
///
/// With `pointwise` set, one scalar dictionary is applied to every state component and all
/// components share the operator.
#[derive(Clone, Debug)]
pub struct Dictionary<T: Real> {
    map: FeatureMap<T>,
    state_dim: usize,
    pointwise: bool,
    descriptor: DictionaryDescriptor,
}

fn rbf_value<T: Real>(x: &[T], c: &[T], width: T) -> T {
    let r2 = x
        .iter()
        .zip(c)
        .fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b));
    (-r2 / (width * width)).exp()
}

impl<T: Real> Dictionary<T> {
    /// Monomials `[1, u, …, u^degree]`; applied per component when `state_dim > 1`.
    pub fn polynomial(state_dim: usize, degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidParameter("dictionary degree must be at least 1".into()));
        }
        if state_dim == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        Ok(Self {
            map: FeatureMap::polynomial(degree),
            state_dim,
            pointwise: state_dim > 1,
            descriptor: DictionaryDescriptor::Polynomial { state_dim, degree },
        })
    }

    /// `[1, x, exp(−‖x − c_j‖²/w²)…]` with explicit centers.
    pub fn rbf(state_dim: usize, centers: Vec<Vec<f64>>, width: f64) -> Result<Self> {
        Self::polynomial_rbf(state_dim, 1, centers, width)
    }

    /// `[1, x, x^2, …, x^degree (componentwise), RBFs…]`.
    pub fn polynomial_rbf(
        state_dim: usize,
        degree: usize,
        centers: Vec<Vec<f64>>,
        width: f64,
    ) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidParameter("dictionary degree must be at least 1".into()));
        }
        if !(width > 0.0) {
            return Err(Error::InvalidParameter("RBF width must be positive".into()));
        }
        for c in &centers {
            check_dim("RBF center", state_dim, c.len())?;
        }
        let p = 1 + state_dim * degree + centers.len();
        let cs: Vec<Vec<T>> = centers
            .iter()
            .map(|c| c.iter().map(|v| T::lit(*v)).collect())
            .collect();
        let w = T::lit(width);
        let label = format!("poly{degree}-rbf{}", centers.len());
        let map = FeatureMap::new(label, state_dim, p, move |x, out| {
            out[0] = T::one();
            out[1..=state_dim].copy_from_slice(x);
            let mut idx = 1 + state_dim;
            for power in 2..=degree {
                for v in x {
                    out[idx] = v.powi(power as i32);
                    idx += 1;
                }
            }
            for c in &cs {
                out[idx] = rbf_value(x, c, w);
                idx += 1;
            }
        });
        let descriptor = if degree == 1 {
            DictionaryDescriptor::Rbf {
                state_dim,
                centers,
                width,
            }
        } else {
            DictionaryDescriptor::PolynomialRbf {
                state_dim,
                degree,
                centers,
                width,
            }
        };
        Ok(Self {
            map,
            state_dim,
            pointwise: false,
            descriptor,
        })
    }

    /// Centers on a uniform grid over `[lo, hi]` per axis; width twice the finest spacing.
    pub fn grid_centers(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
        check_dim("grid bounds", lo.len(), hi.len())?;
        check_dim("grid counts", lo.len(), counts.len())?;
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidParameter("at least two centers per axis".into()));
        }
        let axes: Vec<Vec<f64>> = (0..lo.len())
            .map(|a| {
                (0..counts[a])
                    .map(|i| lo[a] + (hi[a] - lo[a]) * i as f64 / (counts[a] - 1) as f64)
                    .collect()
            })
            .collect();
        let spacing = (0..lo.len())
            .map(|a| (hi[a] - lo[a]) / (counts[a] - 1) as f64)
            .fold(f64::INFINITY, f64::min);
        let mut centers = vec![Vec::new()];
        for axis in &axes {
            centers = centers
                .iter()
                .flat_map(|c| {
                    axis.iter().map(move |v| {
                        let mut n = c.clone();
                        n.push(*v);
                        n
                    })
                })
                .collect();
        }
        Ok((centers, 2.0 * spacing))
    }

    pub fn from_descriptor(d: &DictionaryDescriptor) -> Result<Self> {
        match d {
            DictionaryDescriptor::Polynomial { state_dim, degree } => {
                Self::polynomial(*state_dim, *degree)
            }
            DictionaryDescriptor::Rbf {
                state_dim,
                centers,
                width,
            } => Self::rbf(*state_dim, centers.clone(), *width),
            DictionaryDescriptor::PolynomialRbf {
                state_dim,
                degree,
                centers,
                width,
            } => Self::polynomial_rbf(*state_dim, *degree, centers.clone(), *width),
        }
    }

    pub fn descriptor(&self) -> &DictionaryDescriptor {
        &self.descriptor
    }

    /// Scalar- or vector-input map producing Ψ (per component when pointwise).
    pub fn feature_map(&self) -> &FeatureMap<T> {
        &self.map
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn is_pointwise(&self) -> bool {
        self.pointwise
    }

    /// Dimension p of Ψ.
    pub fn len(&self) -> usize {
        self.map.dim_out()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the state block inside Ψ.
    fn block_width(&self) -> usize {
        if self.pointwise {
            1
        } else {
            self.state_dim
        }
    }

    pub fn constant_block(&self) -> Range<usize> {
        0..1
    }

    pub fn state_block(&self) -> Range<usize> {
        1..1 + self.block_width()
    }

    pub fn observable_block(&self) -> Range<usize> {
        1 + self.block_width()..self.len()
    }

    /// Ψ(x) for a non-pointwise dictionary, or Ψ(x_k) stacked per component when pointwise.
    pub fn lift(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim("dictionary state", self.state_dim, x.len())?;
        if self.pointwise {
            let p = self.len();
            let mut out = vec![T::zero(); p * self.state_dim];
            for (k, v) in x.iter().enumerate() {
                self.map
                    .evaluate_unchecked(&Sample::state(std::slice::from_ref(v)), &mut out[k * p..(k + 1) * p]);
            }
            Ok(out)
        } else {
            self.map.evaluate_sample(&Sample::state(x))
        }
    }

    /// g: the state block of a lifted vector, so that g(Ψ(x)) = x.
    pub fn extract_state(&self, lifted: &[T]) -> Result<Vec<T>> {
        let p = self.len();
        if self.pointwise {
            check_dim("lifted state", p * self.state_dim, lifted.len())?;
            Ok((0..self.state_dim).map(|k| lifted[k * p + 1]).collect())
        } else {
            check_dim("lifted state", p, lifted.len())?;
            Ok(lifted[self.state_block()].to_vec())
        }
    }

    /// Design matrix with one row per sample, or per (sample, component) pair when pointwise.
    pub fn design_matrix(&self, inputs: &DataSet<T>) -> Result<DMatrix<T>> {
        check_dim("dictionary state", self.state_dim, inputs.input_dim())?;
        if self.pointwise {
            let p = self.len();
            let k = self.state_dim;
            let mut m = DMatrix::zeros(inputs.len() * k, p);
            let mut buf = vec![T::zero(); p];
            for i in 0..inputs.len() {
                for (c, v) in inputs.input(i).iter().enumerate() {
                    self.map.evaluate_unchecked(&Sample::state(std::slice::from_ref(v)), &mut buf);
                    for j in 0..p {
                        m[(i * k + c, j)] = buf[j];
                    }
                }
            }
            Ok(m)
        } else {
            self.map.design_matrix(inputs)
        }
    }

    /// Lifted images Ψ(y_i) of the dataset targets, laid out like [`Dictionary::design_matrix`].
    pub fn lifted_targets(&self, data: &DataSet<T>, targets: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("dictionary target state", self.state_dim, targets.ncols())?;
        let rows: Vec<Vec<T>> = targets
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let as_inputs = DataSet::new(&rows, &rows)?;
        check_dim("lifted target rows", data.len(), as_inputs.len())?;
        self.design_matrix(&as_inputs)
    }
}

/// Which part of KΨ(x) is fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Only the state rows of K (used inside the combiner).
    StateBlock,
    /// Every row, against Ψ(y).
    Full,
}

/// x ↦ g(KΨ(x)).
#[derive(Clone, Debug)]
pub struct KoopmanModel<T: Real> {
    dictionary: Dictionary<T>,
    operator: DMatrix<T>,
    supervision: Supervision,
}

#[derive(Serialize, Deserialize)]
struct KoopmanModelFile {
    dictionary: DictionaryDescriptor,
    pointwise: bool,
    supervision: Supervision,
    rows: usize,
    cols: usize,
    operator: Vec<f64>,
}

impl<T: Real> KoopmanModel<T> {
    pub fn new(dictionary: Dictionary<T>, operator: DMatrix<T>, supervision: Supervision) -> Result<Self> {
        check_dim("Koopman operator rows", dictionary.len(), operator.nrows())?;
        check_dim("Koopman operator columns", dictionary.len(), operator.ncols())?;
        Ok(Self {
            dictionary,
            operator,
            supervision,
        })
    }

    /// K = I, so g(KΨ(x)) = x.
    pub fn identity(dictionary: Dictionary<T>) -> Self {
        let p = dictionary.len();
        Self {
            dictionary,
            operator: DMatrix::identity(p, p),
            supervision: Supervision::Full,
        }
    }

    pub fn dictionary(&self) -> &Dictionary<T> {
        &self.dictionary
    }

    pub fn operator(&self) -> &DMatrix<T> {
        &self.operator
    }

    pub fn supervision(&self) -> Supervision {
        self.supervision
    }

    /// KΨ(x) for a non-pointwise dictionary.
    pub fn advance_lifted(&self, psi: &[T]) -> Result<Vec<T>> {
        check_dim("lifted state", self.dictionary.len(), psi.len())?;
        Ok((0..self.operator.nrows())
            .map(|r| {
                self.operator
                    .row(r)
                    .iter()
                    .zip(psi)
                    .fold(T::zero(), |acc, (k, p)| acc + *k * *p)
            })
            .collect())
    }

    /// Writes the descriptor and the row-major operator as JSON.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = KoopmanModelFile {
            dictionary: self.dictionary.descriptor.clone(),
            pointwise: self.dictionary.pointwise,
            supervision: self.supervision,
            rows: self.operator.nrows(),
            cols: self.operator.ncols(),
            operator: self
                .operator
                .transpose()
                .iter()
                .map(|v| v.to_f64_lossy())
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file: KoopmanModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let dictionary = Dictionary::from_descriptor(&file.dictionary)?;
        check_dim("Koopman operator entries", file.rows * file.cols, file.operator.len())?;
        let vals: Vec<T> = file.operator.iter().map(|v| T::lit(*v)).collect();
        let operator = DMatrix::from_row_slice(file.rows, file.cols, &vals);
        Self::new(dictionary, operator, file.supervision)
    }
}

impl<T: Real> Predictor<T> for KoopmanModel<T> {
    fn input_dim(&self) -> usize {
        self.dictionary.state_dim
    }

    fn output_dim(&self) -> usize {
        self.dictionary.state_dim
    }

    fn predict_sample(&self, sample: &Sample<'_, T>) -> Result<Vec<T>> {
        koopman_predict(self, sample.state)
    }
}

impl<T: Real> Blend<T> for KoopmanModel<T> {
    fn blend(&self, previous: &Self, t: T) -> Result<Self> {
        check_dim("blended operator", self.operator.len(), previous.operator.len())?;
        Ok(Self {
            dictionary: self.dictionary.clone(),
            operator: &self.operator * t + &previous.operator * (T::one() - t),
            supervision: self.supervision,
        })
    }
}

/// State block of KΨ(x), applied per component for pointwise dictionaries.
pub fn koopman_predict<T: Real>(model: &KoopmanModel<T>, x: &[T]) -> Result<Vec<T>> {
    let dict = &model.dictionary;
    check_dim("Koopman state", dict.state_dim, x.len())?;
    let psi = dict.lift(x)?;
    let p = dict.len();
    let state = dict.state_block();
    if dict.pointwise {
        Ok(psi
            .chunks(p)
            .map(|chunk| {
                model
                    .operator
                    .row(state.start)
                    .iter()
                    .zip(chunk)
                    .fold(T::zero(), |acc, (k, v)| acc + *k * *v)
            })
            .collect())
    } else {
        Ok(state
            .map(|r| {
                model
                    .operator
                    .row(r)
                    .iter()
                    .zip(&psi)
                    .fold(T::zero(), |acc, (k, v)| acc + *k * *v)
            })
            .collect())
    }
}

/// Reshapes `N × K` state targets into the dictionary's row layout (identity unless pointwise).
fn state_targets<T: Real>(dict: &Dictionary<T>, targets: &DMatrix<T>) -> DMatrix<T> {
    if dict.pointwise {
        flatten_values(targets)
    } else {
        targets.clone()
    }
}

/// EDMD least-squares learner over a fixed dataset.
#[derive(Clone, Debug)]
pub struct KoopmanLearner<T: Real> {
    dictionary: Dictionary<T>,
    design: DMatrix<T>,
    factor: Factorization<T>,
    n: usize,
    label: String,
}

impl<T: Real> KoopmanLearner<T> {
    pub fn new(data: &DataSet<T>, dictionary: Dictionary<T>) -> Result<Self> {
        check_dim("Koopman target state", dictionary.state_dim, data.target_dim())?;
        let design = dictionary.design_matrix(data)?;
        let label = format!("koopman({})", dictionary.map.label());
        let factor = Factorization::new(&design, T::lit(DEFAULT_EPS_REG), &label)?;
        Ok(Self {
            dictionary,
            design,
            factor,
            n: data.len(),
            label,
        })
    }

    pub fn dictionary(&self) -> &Dictionary<T> {
        &self.dictionary
    }

    /// Full EDMD: every row of K fitted against Ψ(y).
    pub fn fit_full(&self, data: &DataSet<T>) -> Result<KoopmanModel<T>> {
        let lifted = self.dictionary.lifted_targets(data, data.targets())?;
        let k = self.factor.solve(&lifted).transpose();
        KoopmanModel::new(self.dictionary.clone(), k, Supervision::Full)
    }

    fn state_operator(&self, coeffs: &DMatrix<T>) -> DMatrix<T> {
        // Constant row keeps 1 ↦ 1; observable rows are not supervised in this mode.
        let p = self.dictionary.len();
        let mut k = DMatrix::zeros(p, p);
        k[(0, 0)] = T::one();
        for (j, r) in self.dictionary.state_block().enumerate() {
            k.set_row(r, &coeffs.column(j).transpose());
        }
        k
    }
}

impl<T: Real> Learner<T> for KoopmanLearner<T> {
    type Model = KoopmanModel<T>;

    fn label(&self) -> &str {
        &self.label
    }

    fn sample_count(&self) -> usize {
        self.n
    }

    fn target_dim(&self) -> usize {
        self.dictionary.state_dim
    }

    fn project(&self, targets: &DMatrix<T>) -> Result<Fit<T, KoopmanModel<T>>> {
        check_dim("projection targets", self.n, targets.nrows())?;
        check_dim("projection target columns", self.dictionary.state_dim, targets.ncols())?;
        if targets.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite("projection targets"));
        }
        let rhs = state_targets(&self.dictionary, targets);
        let coeffs = self.factor.solve(&rhs);
        let fitted = &self.design * &coeffs;
        let values = if self.dictionary.pointwise {
            unflatten_values(&fitted, self.n, self.dictionary.state_dim)
        } else {
            fitted
        };
        Ok(Fit {
            model: KoopmanModel {
                dictionary: self.dictionary.clone(),
                operator: self.state_operator(&coeffs),
                supervision: Supervision::StateBlock,
            },
            values,
        })
    }

    fn zero_model(&self) -> KoopmanModel<T> {
        let p = self.dictionary.len();
        KoopmanModel {
            dictionary: self.dictionary.clone(),
            operator: DMatrix::zeros(p, p),
            supervision: Supervision::StateBlock,
        }
    }
}

/// Fits K on `data`; with `residual_targets` only the state block is supervised, against them.
pub fn fit_koopman<T: Real>(
    data: &DataSet<T>,
    dict: &Dictionary<T>,
    residual_targets: Option<&DMatrix<T>>,
) -> Result<KoopmanModel<T>> {
    let learner = KoopmanLearner::new(data, dict.clone())?;
    match residual_targets {
        Some(r) => Ok(learner.project(r)?.model),
        None => learner.fit_full(data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::model_residual_norm;

    fn scalar_data(xs: &[f64], f: impl Fn(f64) -> f64) -> DataSet<f64> {
        let x: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
        let y: Vec<Vec<f64>> = xs.iter().map(|v| vec![f(*v)]).collect();
        DataSet::new(&x, &y).unwrap()
    }

    #[test]
    fn polynomial_dictionary_shapes() {
        let d = Dictionary::<f64>::polynomial(1, 10).unwrap();
        assert_eq!(d.len(), 11);
        let d1 = Dictionary::<f64>::polynomial(1, 1).unwrap();
        assert_eq!(d1.lift(&[0.7]).unwrap(), vec![1.0, 0.7]);
        let d3 = Dictionary::<f64>::polynomial(1, 3).unwrap();
        assert_eq!(d3.lift(&[0.5]).unwrap(), vec![1.0, 0.5, 0.25, 0.125]);
        assert!(Dictionary::<f64>::polynomial(1, 0).is_err());
    }

    #[test]
    fn block_layout() {
        let d = Dictionary::<f64>::rbf(2, vec![vec![0.0, 0.0]], 1.0).unwrap();
        assert_eq!(d.constant_block(), 0..1);
        assert_eq!(d.state_block(), 1..3);
        assert_eq!(d.observable_block(), 3..4);
        let psi = d.lift(&[0.3, -0.2]).unwrap();
        assert_eq!(&psi[..3], &[1.0, 0.3, -0.2]);
    }

    #[test]
    fn identity_dynamics_recovered() {
        let data = scalar_data(&[-1.0, -0.3, 0.2, 0.8], |x| x);
        let dict = Dictionary::polynomial(1, 4).unwrap();
        let m = fit_koopman(&data, &dict, None).unwrap();
        for x in [-1.0, -0.3, 0.2, 0.8] {
            assert!((koopman_predict(&m, &[x]).unwrap()[0] - x).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_dynamics_recovered() {
        let data = scalar_data(&[-1.0, 0.5, 1.0, 2.0], |x| 0.5 * x);
        let m = fit_koopman(&data, &Dictionary::polynomial(1, 1).unwrap(), None).unwrap();
        assert!((m.operator()[(1, 1)] - 0.5).abs() < 1e-10);
        assert!((koopman_predict(&m, &[2.0]).unwrap()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cubic_dynamics_exact_on_samples() {
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let data = scalar_data(&xs, |x| x.powi(3));
        let m = fit_koopman(&data, &Dictionary::polynomial(1, 3).unwrap(), Some(data.targets()))
            .unwrap();
        assert!(model_residual_norm(&data, &m).unwrap() < 1e-12);
    }

    #[test]
    fn identity_operator_predicts_state() {
        let m = KoopmanModel::identity(Dictionary::<f64>::polynomial(1, 3).unwrap());
        assert_eq!(koopman_predict(&m, &[0.25]).unwrap(), vec![0.25]);
        assert!(koopman_predict(&m, &[0.25, 1.0]).is_err());
    }

    #[test]
    fn pointwise_dictionary_shares_operator() {
        let xs = vec![vec![0.5, -0.5, 1.0], vec![0.2, 0.0, -1.0]];
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().map(|u| u * u * u - u).collect())
            .collect();
        let data = DataSet::new(&xs, &ys).unwrap();
        let dict = Dictionary::polynomial(3, 3).unwrap();
        assert!(dict.is_pointwise());
        let fit = KoopmanLearner::new(&data, dict).unwrap().project(data.targets()).unwrap();
        assert!((fit.values - data.targets()).abs().max() < 1e-12);
        assert!((fit.model.predict(&[0.5, 0.5, 0.5]).unwrap()[1] + 0.375).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let data = scalar_data(&[-1.0, 0.5, 1.0, 2.0], |x| 0.5 * x);
        let m = fit_koopman(&data, &Dictionary::polynomial(1, 2).unwrap(), None).unwrap();
        let path = std::env::temp_dir().join(format!("modcomb-koopman-{}.json", std::process::id()));
        m.write_json(&path).unwrap();
        let back = KoopmanModel::<f64>::read_json(&path).unwrap();
        assert_eq!(back.operator(), m.operator());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn grid_centers_cover_box() {
        let (c, w) = Dictionary::<f64>::grid_centers(&[0.0, 0.0], &[1.0, 2.0], &[3, 2]).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c[5], vec![1.0, 2.0]);
        assert!((w - 1.0).abs() < 1e-15);
    }
}
