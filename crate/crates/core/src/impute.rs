//! Missing-value imputation: column means and chained equations.

use log::warn;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Fills nulls with the mean of the observed entries. A column with no
/// observed entries is filled with zeros.
pub fn mean_impute(column: &[Option<f64>]) -> Vec<f64> {
    let observed: Vec<f64> = column.iter().flatten().copied().collect();
    let fill = if observed.is_empty() {
        if !column.is_empty() {
            warn!("column has no observed values; filling {} cells with 0", column.len());
        }
        0.0
    } else {
        observed.iter().sum::<f64>() / observed.len() as f64
    };
    column.iter().map(|v| v.unwrap_or(fill)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiceConfig {
    /// Number of full sweeps over the incomplete columns.
    pub rounds: usize,
    /// Ridge penalty added to the normal equations.
    pub ridge: f64,
    /// Seeds the column visiting order of each sweep.
    pub seed: u64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig {
            rounds: 10,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

/// Ridge regression of `y` on the columns of `x` with an unpenalized
/// intercept. Returns `(intercept, coefficients)`, or `None` when the
/// system cannot be factored.
fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Option<(f64, DVector<f64>)> {
    let n = x.nrows() as f64;
    let x_mean = x.row_mean();
    let y_mean = y.mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = y.add_scalar(-y_mean);
    let mut gram = xc.transpose() * &xc;
    let rhs = xc.transpose() * yc;
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    // Jacobi scaling keeps the factorization well conditioned when columns
    // live on very different scales (epoch seconds next to like counts).
    let scale: DVector<f64> = gram
        .diagonal()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 });
    let scaled = DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| gram[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky()?;
    let beta = chol.solve(&rhs.component_mul(&scale)).component_mul(&scale);
    if beta.iter().any(|b| !b.is_finite()) || n == 0.0 {
        return None;
    }
    let intercept = y_mean - (x_mean * &beta)[(0, 0)];
    Some((intercept, beta))
}

/// Multiple imputation by chained equations (single chain, point
/// predictions).
///
/// Nulls start at their column means. Each round visits every incomplete
/// column in a seeded order, regresses its observed entries on all other
/// columns, and overwrites its missing entries with the fitted values.
/// Observed entries are never changed.
pub fn mice_impute(matrix: ArrayView2<Option<f64>>, config: &MiceConfig) -> Result<Array2<f64>> {
    let (rows, cols) = matrix.dim();
    if cols < 2 {
        return Err(Error::Shape(format!(
            "chained-equation imputation needs at least 2 columns, got {cols}"
        )));
    }
    let mut values = Array2::<f64>::zeros((rows, cols));
    let mut incomplete = Vec::new();
    for j in 0..cols {
        let column: Vec<Option<f64>> = matrix.column(j).to_vec();
        values.column_mut(j).assign(&ndarray::Array1::from(mean_impute(&column)));
        let n_obs = column.iter().flatten().count();
        if n_obs < rows {
            if n_obs == 0 {
                warn!("column {j} has no observed values; keeping the mean fill");
            } else {
                incomplete.push(j);
            }
        }
    }
    if incomplete.is_empty() {
        return Ok(values);
    }

    let mut order_rng = rng::substream(config.seed, "mice-order");
    let mut fallen_back = vec![false; cols];
    for _ in 0..config.rounds {
        let mut order = incomplete.clone();
        order.shuffle(&mut order_rng);
        for &j in &order {
            if fallen_back[j] {
                continue;
            }
            let others: Vec<usize> = (0..cols).filter(|&c| c != j).collect();
            let obs_rows: Vec<usize> = (0..rows).filter(|&i| matrix[(i, j)].is_some()).collect();
            let x = DMatrix::from_fn(obs_rows.len(), others.len(), |r, c| values[(obs_rows[r], others[c])]);
            let y = DVector::from_fn(obs_rows.len(), |r, _| values[(obs_rows[r], j)]);
            match fit_ridge(&x, &y, config.ridge) {
                Some((intercept, beta)) => {
                    for i in (0..rows).filter(|&i| matrix[(i, j)].is_none()) {
                        let pred: f64 = intercept
                            + others
                                .iter()
                                .zip(beta.iter())
                                .map(|(&c, b)| values[(i, c)] * b)
                                .sum::<f64>();
                        values[(i, j)] = pred;
                    }
                }
                None => {
                    warn!("regression for column {j} is singular; falling back to the mean");
                    let column: Vec<Option<f64>> = matrix.column(j).to_vec();
                    values.column_mut(j).assign(&ndarray::Array1::from(mean_impute(&column)));
                    fallen_back[j] = true;
                }
            }
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_fill() {
        assert_eq!(mean_impute(&[Some(1.0), None, Some(3.0)]), vec![1.0, 2.0, 3.0]);
        assert_eq!(mean_impute(&[Some(4.0), Some(5.0)]), vec![4.0, 5.0]);
        assert_eq!(mean_impute(&[None, None]), vec![0.0, 0.0]);
        assert!(mean_impute(&[]).is_empty());
    }

    #[test]
    fn complete_matrix_is_unchanged() {
        let m = array![[Some(1.0), Some(2.0)], [Some(3.0), Some(-4.5)]];
        let out = mice_impute(m.view(), &MiceConfig::default()).unwrap();
        assert_eq!(out, array![[1.0, 2.0], [3.0, -4.5]]);
    }

    #[test]
    fn recovers_exact_linear_relation() {
        // y = 2x + 1, y missing at x = 4.
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = Array2::from_shape_fn((xs.len(), 2), |(i, j)| match j {
            0 => Some(xs[i]),
            _ if xs[i] == 4.0 => None,
            _ => Some(2.0 * xs[i] + 1.0),
        });
        let cfg = MiceConfig { rounds: 2, ..MiceConfig::default() };
        let out = mice_impute(m.view(), &cfg).unwrap();
        assert!((out[(4, 1)] - 9.0).abs() < 1e-6, "got {}", out[(4, 1)]);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let m = Array2::from_shape_fn((30, 3), |(i, j)| {
            if (i * 7 + j * 3) % 5 == 0 {
                None
            } else {
                Some((i as f64).sin() * (j + 1) as f64 + i as f64 * 0.1)
            }
        });
        let cfg = MiceConfig { seed: 9, ..MiceConfig::default() };
        let a = mice_impute(m.view(), &cfg).unwrap();
        let b = mice_impute(m.view(), &cfg).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        for ((i, j), v) in m.indexed_iter() {
            if let Some(v) = v {
                assert_eq!(a[(i, j)], *v);
            }
        }
    }

    #[test]
    fn single_column_is_rejected() {
        let m = array![[Some(1.0)], [None]];
        assert!(mice_impute(m.view(), &MiceConfig::default()).is_err());
    }

    #[test]
    fn constant_regressor_falls_back_cleanly() {
        // The only regressor is constant; the ridge term keeps the system
        // solvable and the prediction collapses to the observed mean.
        let m = array![[Some(1.0), Some(2.0)], [Some(1.0), Some(4.0)], [Some(1.0), None]];
        let out = mice_impute(m.view(), &MiceConfig::default()).unwrap();
        assert!((out[(2, 1)] - 3.0).abs() < 1e-9);
    }
}
