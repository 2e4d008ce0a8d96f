//! Closed-form linear ridge regression between two vector spaces.
//!
//! Matrices hold one object per column. Given observations `A` (in_dim × n)
//! and responses `B` (out_dim × n), the fitted projection `M` minimizes
//! `‖MA − B‖²_F + λ‖M‖²_F`, i.e. `M = B Aᵀ (A Aᵀ + λI)⁻¹`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix with one object per column. All entries are finite and
/// both dimensions are at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid(format!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for col in 0..values.ncols() {
            for row in 0..values.nrows() {
                if !values[(row, col)].is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
            }
        }
        Ok(DataMatrix(values))
    }

    /// Builds from row-major values (`rows` feature dimensions).
    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "row slice length",
                expected: rows * cols,
                found: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(rows, cols, values))
    }

    /// Builds from a list of object vectors, each becoming one column.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dim = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::invalid(format!(
                    "column {j} has length {}, expected {dim}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Self::new(DMatrix::from_vec(dim, columns.len(), data))
    }

    pub fn row_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_objects(&self) -> usize {
        self.0.ncols()
    }

    /// Column `j` as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let r = self.0.nrows();
        &self.0.as_slice()[j * r..(j + 1) * r]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// New matrix holding the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        let r = self.row_dim();
        let mut data = Vec::with_capacity(r * indices.len());
        for &j in indices {
            if j >= self.num_objects() {
                return Err(Error::invalid(format!(
                    "column index {j} out of range for {} objects",
                    self.num_objects()
                )));
            }
            data.extend_from_slice(self.column(j));
        }
        Self::new(DMatrix::from_vec(r, indices.len(), data))
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.0 * factor)
    }
}

impl std::ops::Deref for DataMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Which space plays the observation role when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Source objects are mapped into target space (the conventional setup).
    SourceToTarget,
    /// Target objects are mapped into source space.
    TargetToSource,
}

impl Direction {
    pub fn short_name(self) -> &'static str {
        match self {
            Direction::SourceToTarget => "ridge-xy",
            Direction::TargetToSource => "ridge-yx",
        }
    }
}

/// Per-row means of `data`.
pub fn row_means(data: &DMatrix<f64>) -> DVector<f64> {
    let n = data.ncols() as f64;
    DVector::from_iterator(data.nrows(), data.row_iter().map(|r| r.sum() / n))
}

/// Subtracts the per-row mean from every column. Returns the centered matrix
/// and the mean that was removed.
pub fn center(data: &DataMatrix) -> (DataMatrix, DVector<f64>) {
    let mean = row_means(data);
    let mut out = data.as_matrix().clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    (DataMatrix(out), mean)
}

/// Fitted linear map between two spaces. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    projection: DMatrix<f64>,
    lambda: f64,
    direction: Direction,
    input_mean: DVector<f64>,
    output_mean: DVector<f64>,
}

impl RidgeModel {
    /// Assembles a model from its parts (e.g. a hand-specified projection).
    pub fn from_parts(
        projection: DMatrix<f64>,
        lambda: f64,
        direction: Direction,
        input_mean: DVector<f64>,
        output_mean: DVector<f64>,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if input_mean.len() != projection.ncols() {
            return Err(Error::DimensionMismatch {
                context: "input mean",
                expected: projection.ncols(),
                found: input_mean.len(),
            });
        }
        if output_mean.len() != projection.nrows() {
            return Err(Error::DimensionMismatch {
                context: "output mean",
                expected: projection.nrows(),
                found: output_mean.len(),
            });
        }
        Ok(RidgeModel {
            projection,
            lambda,
            direction,
            input_mean,
            output_mean,
        })
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn input_mean(&self) -> &DVector<f64> {
        &self.input_mean
    }

    pub fn output_mean(&self) -> &DVector<f64> {
        &self.output_mean
    }

    pub fn in_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// Maps every column `x` of `inputs` to `M (x − input_mean) + output_mean`.
    pub fn predict(&self, inputs: &DataMatrix) -> Result<DataMatrix> {
        if inputs.row_dim() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "predict input dimension",
                expected: self.in_dim(),
                found: inputs.row_dim(),
            });
        }
        let mut shifted = inputs.as_matrix().clone();
        for mut col in shifted.column_iter_mut() {
            col -= &self.input_mean;
        }
        let mut out = &self.projection * shifted;
        for mut col in out.column_iter_mut() {
            col += &self.output_mean;
        }
        DataMatrix::new(out)
    }
}

/// Ridge fitting options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge {
    pub lambda: f64,
    pub center: bool,
    pub direction: Direction,
}

impl Ridge {
    pub fn new(lambda: f64) -> Self {
        Ridge {
            lambda,
            center: true,
            direction: Direction::SourceToTarget,
        }
    }

    pub fn without_centering(mut self) -> Self {
        self.center = false;
        self
    }

    pub fn direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn fit(&self, observations: &DataMatrix, responses: &DataMatrix) -> Result<RidgeModel> {
        if observations.num_objects() != responses.num_objects() {
            return Err(Error::DimensionMismatch {
                context: "number of paired objects",
                expected: observations.num_objects(),
                found: responses.num_objects(),
            });
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        let (a, input_mean, b, output_mean) = if self.center {
            let (a, am) = center(observations);
            let (b, bm) = center(responses);
            (a.into_inner(), am, b.into_inner(), bm)
        } else {
            (
                observations.as_matrix().clone(),
                DVector::zeros(observations.row_dim()),
                responses.as_matrix().clone(),
                DVector::zeros(responses.row_dim()),
            )
        };
        let projection = solve_projection(&a, &b, self.lambda);
        RidgeModel::from_parts(projection, self.lambda, self.direction, input_mean, output_mean)
    }
}

/// Fits with centering on both sides, source-to-target direction.
pub fn fit_ridge(
    observations: &DataMatrix,
    responses: &DataMatrix,
    lambda: f64,
) -> Result<RidgeModel> {
    Ridge::new(lambda).fit(observations, responses)
}

/// `M = B Aᵀ (A Aᵀ + λI)⁻¹` on already-prepared matrices.
///
/// λ > 0 goes through a Cholesky solve of the Gram system; λ = 0 (or a
/// Cholesky breakdown) uses the SVD of `A`, which yields the minimum-norm
/// least-squares solution when `A Aᵀ` is singular.
fn solve_projection(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    if lambda > 0.0 {
        let mut gram = a * a.transpose();
        for i in 0..gram.nrows() {
            gram[(i, i)] += lambda;
        }
        if let Some(chol) = gram.cholesky() {
            // G Mᵀ = A Bᵀ with G symmetric.
            let rhs = a * b.transpose();
            return chol.solve(&rhs).transpose();
        }
    }
    b * regularized_pinv(a, lambda)
}

/// `Aᵀ (A Aᵀ + λI)⁻¹` through the thin SVD of `A`, with the pseudo-inverse
/// cutoff `max(dims) · ε · σ_max` applied to the singular values.
fn regularized_pinv(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * s_max;
    let weights = DVector::from_iterator(
        s.len(),
        s.iter().map(|&sv| {
            if sv > cutoff {
                sv / (sv * sv + lambda)
            } else {
                0.0
            }
        }),
    );
    // V diag(w) Uᵀ
    let mut v_scaled = v_t.transpose();
    for (j, mut col) in v_scaled.column_iter_mut().enumerate() {
        col *= weights[j];
    }
    v_scaled * u.transpose()
}

/// The n × n operator `Aᵀ (A Aᵀ + λI)⁻¹ A` computed on the same solver path
/// as [`Ridge::fit`] (pseudo-inverse when λ = 0).
pub fn hat_operator(a: &DataMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let a = a.as_matrix();
    // Mᵀ for B = I picks out Aᵀ(AAᵀ+λI)⁻¹; right-multiply by A.
    let identity = DMatrix::<f64>::identity(a.ncols(), a.ncols());
    let m = solve_projection(a, &identity, lambda);
    Ok(m * a)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0_f64, f64::max)
}

/// `‖MA − B‖²_F + λ‖M‖²_F`.
pub fn ridge_objective(
    projection: &DMatrix<f64>,
    observations: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let residual = projection * observations - responses;
    residual.norm_squared() + lambda * projection.norm_squared()
}
