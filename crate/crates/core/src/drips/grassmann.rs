//! Grassmann manifold utilities: logarithm and exponential maps at a
//! reference subspace, principal angles, and orthogonal alignment.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};

/// `V0^T V` with a smallest singular value below this is treated as singular
/// (subspaces nearly orthogonal).
const ALIGN_TOL: f64 = 1e-12;

fn svd_parts(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = SVD::new(m.clone(), true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok((u, svd.singular_values.iter().copied().collect(), v_t)),
        _ => Err(Error::Interpolation("SVD did not converge".into())),
    }
}

/// Tangent vector at `span(v0)` pointing to `span(v)`:
/// `Gamma = Q atan(S) Z^T` with `(I - V0 V0^T) V (V0^T V)^{-1} = Q S Z^T`.
pub fn log_map(v0: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v0.shape() != v.shape() {
        return Err(Error::Shape(format!("bases {:?} and {:?} differ", v0.shape(), v.shape())));
    }
    let cross = v0.transpose() * v;
    let (_, s, _) = svd_parts(&cross)?;
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest > ALIGN_TOL) {
        return Err(Error::Interpolation(format!(
            "reference and target subspaces are nearly orthogonal (sigma_min = {smallest:.3e}); \
             use a denser parameter grid"
        )));
    }
    let inv = cross
        .try_inverse()
        .ok_or_else(|| Error::Interpolation("V0^T V is singular; use a denser parameter grid".into()))?;
    let m = (v - v0 * (v0.transpose() * v)) * inv;
    let (q, s, z_t) = svd_parts(&m)?;
    let mut q = q;
    for (j, sj) in s.iter().enumerate() {
        q.column_mut(j).scale_mut(sj.atan());
    }
    Ok(q * z_t)
}

/// Point on the geodesic from `span(v0)` along `gamma`, with orthonormal
/// columns. The result stays in the frame of `v0` (no column rotation), so
/// reduced operators aligned to `v0` remain compatible.
pub fn exp_map(v0: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (u, s, w_t) = svd_parts(gamma)?;
    let w = w_t.transpose();
    let mut v0w = v0 * &w;
    let mut u = u;
    for (j, sj) in s.iter().enumerate() {
        v0w.column_mut(j).scale_mut(sj.cos());
        u.column_mut(j).scale_mut(sj.sin());
    }
    let v = (v0w + u) * w_t;
    polar_orthonormalize(&v)
}

/// Closest matrix with orthonormal columns, `A B^T` for `M = A S B^T`.
pub fn polar_orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, _, b_t) = svd_parts(m)?;
    Ok(a * b_t)
}

/// Orthogonal `Q` minimizing `||V Q - V0||_F`.
pub fn alignment(v: &DMatrix<f64>, v0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (u, _, w_t) = svd_parts(&(v.transpose() * v0))?;
    Ok(u * w_t)
}

/// Principal angles between `span(a)` and `span(b)` (orthonormal inputs),
/// ascending. Small angles come from the sine branch, which is accurate
/// where `acos` of a near-unit cosine is not.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (_, cos, _) = svd_parts(&(a.transpose() * b))?;
    let (_, sin, _) = svd_parts(&(b - a * (a.transpose() * b)))?;
    let mut cos = cos;
    cos.sort_by(|x, y| y.total_cmp(x));
    let mut sin = sin;
    sin.sort_by(|x, y| x.total_cmp(y));
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| {
            if c * c < 0.5 {
                c.clamp(-1.0, 1.0).acos()
            } else {
                s.clamp(-1.0, 1.0).asin()
            }
        })
        .collect())
}

/// Largest principal angle.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    Ok(principal_angles(a, b)?.into_iter().fold(0.0, f64::max))
}
