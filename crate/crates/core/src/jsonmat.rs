//! Conversions between dense matrices and the row-major array-of-rows
//! layout used by every JSON interface in this crate.

use ndarray::Array2;

use crate::{Error, Result};

pub(crate) fn mat_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn rows_to_mat(name: &str, rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::InvalidArgument(format!("{name} has empty rows")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument(format!("{name} rows have uneven lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} contains non-finite entries")));
    }
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))
}
