use crate::error::{Error, Result};
use crate::linalg::norm2;

/// Scale `v` down to L2 norm `theta` if it is longer; otherwise return it unchanged.
pub fn clip_l2(v: &[f64], theta: f64) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    clip_l2_in_place(&mut out, theta)?;
    Ok(out)
}

/// In-place variant of [`clip_l2`]. Returns the pre-clip norm.
pub fn clip_l2_in_place(v: &mut [f64], theta: f64) -> Result<f64> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::invalid(format!("clip threshold must be > 0, got {theta}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("clip input contains non-finite values"));
    }
    let norm = norm2(v);
    if norm > theta {
        let scale = theta / norm;
        v.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(norm)
}
