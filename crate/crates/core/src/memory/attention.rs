use nalgebra::DMatrix;

use super::MemoryError;

/// Row-wise softmax of `Q Kᵀ / √d`.
pub fn attention_weights(queries: &DMatrix<f64>, keys: &DMatrix<f64>) -> Result<DMatrix<f64>, MemoryError> {
    if keys.nrows() == 0 {
        return Err(MemoryError::EmptyKeys);
    }
    if queries.ncols() != keys.ncols() {
        return Err(MemoryError::DimMismatch {
            expected: queries.ncols(),
            actual: keys.ncols(),
        });
    }
    let scale = 1.0 / (queries.ncols().max(1) as f64).sqrt();
    let mut logits = queries * keys.transpose() * scale;
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(logits)
}

/// Single-head scaled dot-product attention: `softmax(QKᵀ/√d)·V`.
pub fn attend(queries: &DMatrix<f64>, keys: &DMatrix<f64>, values: &DMatrix<f64>) -> Result<DMatrix<f64>, MemoryError> {
    if values.nrows() != keys.nrows() {
        return Err(MemoryError::KeyValueMismatch {
            keys: keys.nrows(),
            values: values.nrows(),
        });
    }
    Ok(attention_weights(queries, keys)? * values)
}

/// Splits the embedding into `heads` equal slices and attends per slice.
pub fn attend_multihead(
    queries: &DMatrix<f64>,
    keys: &DMatrix<f64>,
    values: &DMatrix<f64>,
    heads: usize,
) -> Result<DMatrix<f64>, MemoryError> {
    if heads <= 1 {
        return attend(queries, keys, values);
    }
    let d = queries.ncols();
    if d % heads != 0 || values.ncols() != d {
        return Err(MemoryError::HeadSplit { dim: d, heads });
    }
    let dh = d / heads;
    let mut out = DMatrix::zeros(queries.nrows(), d);
    for h in 0..heads {
        let cols = h * dh;
        let o = attend(
            &queries.columns(cols, dh).into_owned(),
            &keys.columns(cols, dh).into_owned(),
            &values.columns(cols, dh).into_owned(),
        )?;
        out.columns_mut(cols, dh).copy_from(&o);
    }
    Ok(out)
}
