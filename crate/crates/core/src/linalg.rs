//! Ridge least squares with an unpenalized intercept, solved by Householder QR
//! on the augmented system
//!
//! ```text
//! [ X        1 ] [W]   [Y]
//! [ sqrt(l)I 0 ] [b] = [0]
//! ```
//!
//! which minimizes `sum ||x_i W + b - y_i||^2 + l ||W||_F^2` without ever
//! forming `X^T X`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) struct RidgeSolution {
    /// `[in_dim x out_dim]`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

pub(crate) fn ridge_with_bias(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
) -> Result<RidgeSolution> {
    let (n, d) = x.shape();
    let k = y.ncols();
    if n == 0 {
        return Err(Error::EmptyInput("regression needs at least one row".into()));
    }
    if y.nrows() != n {
        return Err(Error::lengths("regression rows", n, y.nrows()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be finite and nonnegative, got {lambda}"
        )));
    }

    let penalty_rows = if lambda > 0.0 { d } else { 0 };
    let rows = n + penalty_rows;
    let cols = d + 1;
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    a.view_mut((0, 0), (n, d)).copy_from(x);
    a.view_mut((0, d), (n, 1)).fill(1.0);
    let root = lambda.sqrt();
    for i in 0..penalty_rows {
        a[(n + i, i)] = root;
    }
    if rows < cols {
        return Err(Error::DegenerateSystem {
            rank: numerical_rank(&a),
            required: cols,
        });
    }

    let mut rhs = DMatrix::<f64>::zeros(rows, k);
    rhs.view_mut((0, 0), (n, k)).copy_from(y);

    let qr = a.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    let tol = rmax * f64::EPSILON * rows.max(cols) as f64;
    if rmax == 0.0 || r.diagonal().iter().any(|v| v.abs() <= tol) {
        return Err(Error::DegenerateSystem {
            rank: numerical_rank(&a),
            required: cols,
        });
    }
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, cols).into_owned();
    let coef = r
        .solve_upper_triangular(&top)
        .ok_or(Error::DegenerateSystem {
            rank: numerical_rank(&a),
            required: cols,
        })?;

    Ok(RidgeSolution {
        weights: coef.rows(0, d).into_owned(),
        bias: coef.row(d).transpose(),
    })
}

/// `sum ||x_i W + b - y_i||^2 + lambda ||W||_F^2`
#[cfg(test)]
pub(crate) fn ridge_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let mut pred = x * weights;
    for mut row in pred.row_iter_mut() {
        row += bias.transpose();
    }
    (pred - y).norm_squared() + lambda * weights.norm_squared()
}
