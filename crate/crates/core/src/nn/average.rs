use super::ParamVector;
use crate::error::{Error, Result};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Coordinate-wise weighted sum of parameter vectors sharing one shape.
///
/// Weights must be non-negative and sum to one within `1e-9`.
pub fn weighted_param_average(entries: &[(&ParamVector, f64)]) -> Result<ParamVector> {
    let (first, _) = entries
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty set of parameters".into()))?;
    let mut total = 0.0;
    for (i, (p, w)) in entries.iter().enumerate() {
        if !p.conforms_to(first) {
            return Err(Error::Shape(format!(
                "entry {i} has dims {:?}, expected {:?}",
                p.spec().layer_dims(),
                first.spec().layer_dims()
            )));
        }
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight {i} is {w}; weights must be non-negative")));
        }
        total += w;
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidArgument(format!("weights sum to {total}, expected 1")));
    }

    let mut out = vec![0.0; first.len()];
    for (p, w) in entries {
        for (o, v) in out.iter_mut().zip(p.values()) {
            *o += w * v;
        }
    }
    ParamVector::new(first.spec_arc().clone(), out)
}
