//! Jointly Gaussian source models and linear MMSE estimation.
//!
//! Everything here is exact covariance algebra; sampling lives in the codec
//! simulator and in test oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::MatrixRepr;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const CONDITION_GUARD: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceModelRepr {
    #[serde(rename = "K")]
    k: usize,
    cov: MatrixRepr,
    coeffs: Vec<f64>,
}

/// Covariance `Sigma` of `(X_1..X_K)` and the coefficients `c` of
/// `Z = sum_i c_i X_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SourceModelRepr", into = "SourceModelRepr")]
pub struct SourceModel {
    cov: DMatrix<f64>,
    coeffs: DVector<f64>,
}

impl TryFrom<SourceModelRepr> for SourceModel {
    type Error = Error;

    fn try_from(r: SourceModelRepr) -> Result<Self> {
        let rows = r
            .cov
            .into_rows(r.k)
            .ok_or_else(|| Error::InvalidModel(format!("cov must be {0}x{0}", r.k)))?;
        let cov = DMatrix::from_fn(r.k, r.k, |i, j| rows[i][j]);
        SourceModel::new(cov, r.coeffs)
    }
}

impl From<SourceModel> for SourceModelRepr {
    fn from(m: SourceModel) -> Self {
        SourceModelRepr {
            k: m.k(),
            cov: MatrixRepr::Rows(m.cov.row_iter().map(|r| r.iter().copied().collect()).collect()),
            coeffs: m.coeffs.iter().copied().collect(),
        }
    }
}

impl SourceModel {
    pub fn new(cov: DMatrix<f64>, coeffs: Vec<f64>) -> Result<Self> {
        let k = cov.nrows();
        if k == 0 || cov.ncols() != k {
            return Err(Error::InvalidModel("covariance must be square and nonempty".into()));
        }
        if coeffs.len() != k {
            return Err(Error::InvalidModel(format!(
                "{} coefficients for {} sources",
                coeffs.len(),
                k
            )));
        }
        if cov.iter().chain(coeffs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entries".into()));
        }
        for i in 0..k {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidModel("covariance is not symmetric".into()));
                }
            }
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidModel(format!(
                "covariance is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(SourceModel {
            cov,
            coeffs: DVector::from_vec(coeffs),
        })
    }

    /// Unit-variance pair with correlation `rho` and `Z = X1 - c X2`.
    pub fn two_user(rho: f64, c: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidModel(format!("correlation {rho} outside [-1, 1]")));
        }
        SourceModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            vec![1.0, -c],
        )
    }

    pub fn k(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// `(rho, c)` of a unit-variance pair with `Z = X1 - c X2`.
    pub fn unit_pair(&self) -> Result<(f64, f64)> {
        if self.k() != 2 {
            return Err(Error::InvalidModel(format!("expected two sources, got {}", self.k())));
        }
        if (self.cov[(0, 0)] - 1.0).abs() > SYMMETRY_TOL || (self.cov[(1, 1)] - 1.0).abs() > SYMMETRY_TOL {
            return Err(Error::InvalidModel("two-user closed forms need unit variances".into()));
        }
        if self.coeffs[0] != 1.0 {
            return Err(Error::InvalidModel("two-user closed forms need Z = X1 - c X2".into()));
        }
        Ok((self.cov[(0, 1)], -self.coeffs[1]))
    }

    /// As [`unit_pair`](Self::unit_pair), additionally requiring `0 < rho < 1`.
    pub fn correlated_pair(&self) -> Result<(f64, f64)> {
        let (rho, c) = self.unit_pair()?;
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidModel(format!("correlation {rho} outside (0, 1)")));
        }
        Ok((rho, c))
    }

    /// `a Sigma b^T`.
    pub fn cross(&self, a: &[f64], b: &[f64]) -> f64 {
        let av = DVector::from_column_slice(a);
        let bv = DVector::from_column_slice(b);
        (av.transpose() * &self.cov * bv)[(0, 0)]
    }

    /// `c` restricted to `cell` (zero elsewhere).
    pub fn partial_form(&self, cell: &[usize]) -> Vec<f64> {
        let mut f = vec![0.0; self.k()];
        for &i in cell {
            f[i] = self.coeffs[i];
        }
        f
    }
}

/// `sigma_Z^2 = c Sigma c^T`.
pub fn function_variance(model: &SourceModel) -> f64 {
    let c: Vec<f64> = model.coeffs.iter().copied().collect();
    model.cross(&c, &c).max(0.0)
}

/// `1 - rho^2`.
pub fn alpha(rho: f64) -> f64 {
    1.0 - rho * rho
}

/// One noisy linear observation `a X + N`, `Var(N) = noise_var`, with `N`
/// independent of everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub form: Vec<f64>,
    pub noise_var: f64,
}

impl Observation {
    pub fn new(form: Vec<f64>, noise_var: f64) -> Self {
        Observation { form, noise_var }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimate {
    pub coeffs: Vec<f64>,
    pub error_var: f64,
}

/// Linear MMSE estimate of `t X` from the observations.
///
/// `coeffs = Cov(tX, S) Cov(S)^-1` and
/// `error_var = Var(tX) - Cov(tX, S) Cov(S)^-1 Cov(S, tX)`.
pub fn mmse_coeffs(model: &SourceModel, target: &[f64], obs: &[Observation]) -> Result<LinearEstimate> {
    let k = model.k();
    if target.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: target.len(),
        });
    }
    for o in obs {
        if o.form.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: o.form.len(),
            });
        }
        if !(o.noise_var >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance {} < 0", o.noise_var)));
        }
    }
    let var_t = model.cross(target, target);
    let m = obs.len();
    if m == 0 {
        return Ok(LinearEstimate {
            coeffs: Vec::new(),
            error_var: var_t.max(0.0),
        });
    }
    let gram = DMatrix::from_fn(m, m, |i, j| {
        let v = model.cross(&obs[i].form, &obs[j].form);
        if i == j {
            v + obs[i].noise_var
        } else {
            v
        }
    });
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let rcond = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(rcond > CONDITION_GUARD) {
        return Err(Error::SingularObservationGram(rcond));
    }
    let b = DVector::from_fn(m, |i, _| model.cross(target, &obs[i].form));
    let chol = gram
        .cholesky()
        .ok_or(Error::SingularObservationGram(rcond))?;
    let w = chol.solve(&b);
    let explained = w.dot(&b);
    Ok(LinearEstimate {
        coeffs: w.iter().copied().collect(),
        error_var: (var_t - explained).max(0.0),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanRepr {
    partition: Vec<Vec<usize>>,
    order: Vec<usize>,
    q: Vec<f64>,
}

/// A partition of the sources into cells decoded jointly, the decoding order
/// of the cells, and the per-source quantization noise variances.
///
/// Indices are 0-based in memory; the JSON form is 1-based for both the
/// source indices and the order ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanRepr", into = "PlanRepr")]
pub struct PartitionPlan {
    partition: Vec<Vec<usize>>,
    /// `order[cell]` is the decoding rank of the cell.
    order: Vec<usize>,
    q: Vec<f64>,
}

impl TryFrom<PlanRepr> for PartitionPlan {
    type Error = Error;

    fn try_from(r: PlanRepr) -> Result<Self> {
        let shift = |v: usize| {
            v.checked_sub(1)
                .ok_or_else(|| Error::InvalidPlan("indices are 1-based".into()))
        };
        let partition = r
            .partition
            .iter()
            .map(|cell| cell.iter().map(|&i| shift(i)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let order = r.order.iter().map(|&i| shift(i)).collect::<Result<Vec<_>>>()?;
        PartitionPlan::new(partition, order, r.q)
    }
}

impl From<PartitionPlan> for PlanRepr {
    fn from(p: PartitionPlan) -> Self {
        PlanRepr {
            partition: p
                .partition
                .iter()
                .map(|c| c.iter().map(|i| i + 1).collect())
                .collect(),
            order: p.order.iter().map(|i| i + 1).collect(),
            q: p.q,
        }
    }
}

impl PartitionPlan {
    pub fn new(partition: Vec<Vec<usize>>, order: Vec<usize>, q: Vec<f64>) -> Result<Self> {
        let k = q.len();
        if k == 0 {
            return Err(Error::InvalidPlan("no sources".into()));
        }
        let mut covered = vec![false; k];
        for cell in &partition {
            if cell.is_empty() {
                return Err(Error::InvalidPlan("empty cell".into()));
            }
            for &i in cell {
                if i >= k {
                    return Err(Error::InvalidPlan(format!("source index {} out of range", i + 1)));
                }
                if covered[i] {
                    return Err(Error::InvalidPlan(format!("source {} in two cells", i + 1)));
                }
                covered[i] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::InvalidPlan("cells do not cover every source".into()));
        }
        if order.len() != partition.len() {
            return Err(Error::InvalidPlan("order must rank every cell".into()));
        }
        let mut ranks = order.clone();
        ranks.sort_unstable();
        if ranks.iter().enumerate().any(|(i, &r)| i != r) {
            return Err(Error::InvalidPlan("order is not a permutation".into()));
        }
        if q.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidPlan("all q_i must be positive".into()));
        }
        Ok(PartitionPlan { partition, order, q })
    }

    /// Cells in the given order, ranked by position.
    pub fn ordered(partition: Vec<Vec<usize>>, q: Vec<f64>) -> Result<Self> {
        let order = (0..partition.len()).collect();
        PartitionPlan::new(partition, order, q)
    }

    /// All sources in one cell.
    pub fn single_cell(q: Vec<f64>) -> Result<Self> {
        let cell = (0..q.len()).collect();
        PartitionPlan::ordered(vec![cell], q)
    }

    pub fn k(&self) -> usize {
        self.q.len()
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.partition
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// `q_A = sum_{i in A} q_i`.
    pub fn q_cell(&self, cell: usize) -> f64 {
        self.partition[cell].iter().map(|&i| self.q[i]).sum()
    }

    /// Cell indices sorted by decoding rank.
    pub fn decode_sequence(&self) -> Vec<usize> {
        let mut seq: Vec<usize> = (0..self.partition.len()).collect();
        seq.sort_by_key(|&c| self.order[c]);
        seq
    }

    pub fn check_model(&self, model: &SourceModel) -> Result<()> {
        if model.k() != self.k() {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} sources, model has {}",
                self.k(),
                model.k()
            )));
        }
        Ok(())
    }
}

/// Estimator used when decoding one cell: `f_A` applied to the previously
/// decoded cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStage {
    pub cell: usize,
    /// Earlier cells in decoding order.
    pub prior: Vec<usize>,
    /// `alpha_A(B)` for each prior cell.
    pub coeffs: Vec<f64>,
    /// `sigma^2_Theta(A)`.
    pub residual_var: f64,
}

/// The `sigma^2_Theta` recursion, stage by stage in decoding order.
pub fn cell_stages(model: &SourceModel, plan: &PartitionPlan) -> Result<Vec<CellStage>> {
    plan.check_model(model)?;
    let seq = plan.decode_sequence();
    let mut stages = Vec::with_capacity(seq.len());
    for (pos, &cell) in seq.iter().enumerate() {
        let prior: Vec<usize> = seq[..pos].to_vec();
        let obs: Vec<Observation> = prior
            .iter()
            .map(|&b| Observation::new(model.partial_form(&plan.cells()[b]), plan.q_cell(b)))
            .collect();
        let target = model.partial_form(&plan.cells()[cell]);
        let est = mmse_coeffs(model, &target, &obs)?;
        stages.push(CellStage {
            cell,
            prior,
            coeffs: est.coeffs,
            residual_var: est.error_var,
        });
    }
    Ok(stages)
}

/// `sigma^2_Theta(A)` indexed by cell (same indexing as `plan.cells()`).
pub fn sigma_theta(model: &SourceModel, plan: &PartitionPlan) -> Result<Vec<f64>> {
    let mut out = vec![0.0; plan.cells().len()];
    for s in cell_stages(model, plan)? {
        out[s.cell] = s.residual_var;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalEstimator {
    /// Weight of `Z_A + Q_A`, indexed by cell.
    pub coeffs: Vec<f64>,
    pub distortion: f64,
}

/// MMSE estimate of `Z` from `{Z_A + Q_A}` and its residual distortion.
pub fn final_estimator(model: &SourceModel, plan: &PartitionPlan) -> Result<FinalEstimator> {
    plan.check_model(model)?;
    let obs: Vec<Observation> = (0..plan.cells().len())
        .map(|a| Observation::new(model.partial_form(&plan.cells()[a]), plan.q_cell(a)))
        .collect();
    let target: Vec<f64> = model.coeffs().iter().copied().collect();
    let est = mmse_coeffs(model, &target, &obs)?;
    Ok(FinalEstimator {
        coeffs: est.coeffs,
        distortion: est.error_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> SourceModel {
        SourceModel::two_user(0.8, 0.8).unwrap()
    }

    #[test]
    fn function_variance_examples() {
        assert!((function_variance(&pair()) - 0.36).abs() < 1e-12);
        let m = SourceModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]), vec![1.0, 0.0]).unwrap();
        assert!((function_variance(&m) - 1.0).abs() < 1e-15);
        let m = SourceModel::two_user(1.0, 1.0).unwrap();
        assert!(function_variance(&m).abs() < 1e-15);
    }

    #[test]
    fn model_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SourceModel::new(asym, vec![1.0, 1.0]).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SourceModel::new(indef, vec![1.0, 1.0]).is_err());
        assert!(SourceModel::new(DMatrix::identity(2, 2), vec![1.0]).is_err());
        assert!(SourceModel::two_user(0.0, 0.5).unwrap().correlated_pair().is_err());
    }

    #[test]
    fn side_information_coefficient() {
        // Estimate -c X2 from X1 + Q1.
        let m = pair();
        let est = mmse_coeffs(&m, &[0.0, -0.8], &[Observation::new(vec![1.0, 0.0], 0.1)]).unwrap();
        assert!((est.coeffs[0] + 0.64 / 1.1).abs() < 1e-12);
        assert!((est.coeffs[0] + 0.581818).abs() < 1e-6);
        assert!((est.error_var - 0.64 * (1.0 - 0.64 / 1.1)).abs() < 1e-12);
        assert!((est.error_var - 0.267636).abs() < 1e-6);
    }

    #[test]
    fn empty_observations() {
        let est = mmse_coeffs(&pair(), &[1.0, -0.8], &[]).unwrap();
        assert!(est.coeffs.is_empty());
        assert!((est.error_var - 0.36).abs() < 1e-12);
    }

    #[test]
    fn singular_gram() {
        let m = pair();
        let o = Observation::new(vec![1.0, 0.0], 0.0);
        let r = mmse_coeffs(&m, &[1.0, 0.0], &[o.clone(), o]);
        assert!(matches!(r, Err(Error::SingularObservationGram(_))));
    }

    #[test]
    fn sigma_theta_examples() {
        let m = pair();
        let plan = PartitionPlan::ordered(vec![vec![0], vec![1]], vec![0.1, 0.1]).unwrap();
        let s = sigma_theta(&m, &plan).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - 0.267636).abs() < 1e-6);
        let single = PartitionPlan::single_cell(vec![0.1, 0.1]).unwrap();
        assert!((sigma_theta(&m, &single).unwrap()[0] - 0.36).abs() < 1e-12);
        // Reversed order: the first decoded cell has no side information.
        let rev = PartitionPlan::new(vec![vec![0], vec![1]], vec![1, 0], vec![0.1, 0.1]).unwrap();
        let s = sigma_theta(&m, &rev).unwrap();
        assert!((s[1] - 0.64).abs() < 1e-12);
    }

    #[test]
    fn final_estimator_examples() {
        let m = pair();
        let plan = PartitionPlan::ordered(vec![vec![0], vec![1]], vec![0.1, 0.1]).unwrap();
        let f = final_estimator(&m, &plan).unwrap();
        assert!((f.distortion - 0.04968 / 0.4044).abs() < 1e-12);
        assert!((f.distortion - 0.122849).abs() < 1e-6);

        let (s2, d) = (0.36, 0.1);
        let qa = s2 * d / (s2 - d);
        let single = PartitionPlan::single_cell(vec![qa / 2.0, qa / 2.0]).unwrap();
        let f = final_estimator(&m, &single).unwrap();
        assert!((f.distortion - d).abs() < 1e-12);
        assert!((f.coeffs[0] - s2 / (s2 + qa)).abs() < 1e-12);

        let tiny = PartitionPlan::ordered(vec![vec![0], vec![1]], vec![1e-9, 1e-9]).unwrap();
        assert!(final_estimator(&m, &tiny).unwrap().distortion < 1e-6);
    }

    #[test]
    fn plan_validation_and_json() {
        assert!(PartitionPlan::new(vec![vec![0], vec![0]], vec![0, 1], vec![0.1, 0.1]).is_err());
        assert!(PartitionPlan::new(vec![vec![0]], vec![0], vec![0.1, 0.1]).is_err());
        assert!(PartitionPlan::new(vec![vec![0], vec![1]], vec![0, 0], vec![0.1, 0.1]).is_err());
        assert!(PartitionPlan::single_cell(vec![0.1, 0.0]).is_err());
        let p: PartitionPlan =
            serde_json::from_str(r#"{"partition": [[2], [1]], "order": [1, 2], "q": [0.1, 0.2]}"#).unwrap();
        assert_eq!(p.cells(), &[vec![1], vec![0]]);
        assert_eq!(p.decode_sequence(), vec![0, 1]);
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["partition"][0][0], 2);
        let m: SourceModel =
            serde_json::from_str(r#"{"K": 2, "cov": [[1, 0.8], [0.8, 1]], "coeffs": [1, -0.8]}"#).unwrap();
        assert_eq!(m, pair());
    }
}
