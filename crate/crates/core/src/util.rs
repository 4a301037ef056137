use candle_core::Tensor;

use crate::error::Result;

/// Extracts a scalar tensor as f64 regardless of its dtype.
pub(crate) fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
