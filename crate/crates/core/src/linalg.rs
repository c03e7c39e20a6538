//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("singular or non-finite linear system ({rows}x{cols})")]
pub struct SingularMatrix {
    pub rows: usize,
    pub cols: usize,
}

/// Solves `a * x = b` by LU with partial pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, SingularMatrix> {
    let err = SingularMatrix {
        rows: a.nrows(),
        cols: a.ncols(),
    };
    let lu = a.clone().lu();
    let x = lu.solve(b).ok_or_else(|| err.clone())?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(err)
    }
}

pub fn lu_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, SingularMatrix> {
    let err = SingularMatrix {
        rows: a.nrows(),
        cols: a.ncols(),
    };
    let x = a.clone().lu().solve(b).ok_or_else(|| err.clone())?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(err)
    }
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Singular values sorted descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Log-determinant of a symmetric positive semidefinite matrix, split into the
/// retained spectrum and the count of eigenvalues under the degeneracy cutoff
/// `dim * eps * lambda_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDet {
    /// Sum of `ln(lambda)` over retained eigenvalues.
    pub retained_log_sum: f64,
    /// Number of eigenvalues above the cutoff.
    pub retained: usize,
    pub dim: usize,
}

impl LogDet {
    pub fn of_psd(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let ev = sym_eigenvalues(m);
        let lmax = ev.first().copied().unwrap_or(0.0);
        if !(lmax > 0.0) || !lmax.is_finite() {
            return LogDet {
                retained_log_sum: 0.0,
                retained: 0,
                dim,
            };
        }
        let cutoff = dim as f64 * f64::EPSILON * lmax;
        let mut sum = 0.0;
        let mut retained = 0;
        for &l in &ev {
            if l > cutoff {
                sum += l.ln();
                retained += 1;
            }
        }
        LogDet {
            retained_log_sum: sum,
            retained,
            dim,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.retained < self.dim
    }

    /// The log-determinant, or `-inf` when degenerate.
    pub fn value(&self) -> f64 {
        if self.is_degenerate() {
            f64::NEG_INFINITY
        } else {
            self.retained_log_sum
        }
    }
}

/// Block-row `k` (rows `k*r..(k+1)*r`) of a stacked matrix.
pub fn block_rows(m: &DMatrix<f64>, k: usize, r: usize) -> DMatrix<f64> {
    m.rows(k * r, r).into_owned()
}

pub fn frobenius_rel_error(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let denom = reference.norm();
    let num = (a - reference).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

/// Largest absolute entry difference divided by the largest reference entry.
pub fn max_rel_error(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.amax();
    let diff = (a - reference).amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Writes a matrix as CSV with an optional header row.
pub fn write_matrix_csv<W: std::io::Write>(
    m: &DMatrix<f64>,
    header: Option<&[String]>,
    mut out: W,
) -> std::io::Result<()> {
    if let Some(h) = header {
        writeln!(out, "{}", h.join(","))?;
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logdet_identity_is_zero() {
        let ld = LogDet::of_psd(&DMatrix::identity(4, 4));
        assert_eq!(ld.retained, 4);
        assert!(ld.value().abs() < 1e-14);
    }

    #[test]
    fn logdet_flags_rank_deficiency() {
        let mut m = DMatrix::identity(3, 3);
        m[(2, 2)] = 0.0;
        let ld = LogDet::of_psd(&m);
        assert!(ld.is_degenerate());
        assert_eq!(ld.retained, 2);
        assert_eq!(ld.value(), f64::NEG_INFINITY);
    }

    #[test]
    fn lu_solve_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(lu_solve(&m, &DMatrix::identity(2, 2)).is_err());
    }
}
