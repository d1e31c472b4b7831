//! Exact DMD on homogeneous lifted snapshots.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero
/// when the rank is chosen automatically.
pub const RANK_TOL: f64 = 1e-10;

/// A requested rank whose trailing singular value ratio falls below this is
/// rejected.
pub const MIN_SIGMA_RATIO: f64 = 1e-12;

/// Reduced-order basis and reduced operator fitted at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    /// `n x r`, orthonormal columns.
    pub rob: DMatrix<f64>,
    /// `r x r`.
    pub prom: DMatrix<f64>,
}

impl LocalOperator {
    /// The full-space one-step operator `V L_r V^T`.
    pub fn full(&self) -> DMatrix<f64> {
        &self.rob * &self.prom * self.rob.transpose()
    }
}

fn sorted_svd(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = SVD::new(x.clone(), true, true);
    let u = svd.u.ok_or_else(|| Error::RankDeficient("SVD did not converge".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::RankDeficient("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let w = DMatrix::from_fn(v_t.ncols(), order.len(), |i, j| v_t[(order[j], i)]);
    Ok((u, sigma, w))
}

/// Number of singular values of `x` above `RANK_TOL` relative to the largest.
pub fn numerical_rank(x: &DMatrix<f64>) -> Result<usize> {
    let (_, sigma, _) = sorted_svd(x)?;
    let top = sigma.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Ok(0);
    }
    Ok(sigma.iter().filter(|s| **s / top > RANK_TOL).count())
}

/// Fits `Y ~ L X` from snapshot matrices whose columns are homogeneous lifted
/// states. With the thin SVD `X = U S W^T` truncated to rank `r`,
/// `V = U_r` and `L_r = V^T Y W_r S_r^{-1}`. `rank = None` selects the
/// numerical rank.
pub fn fit_local_operator(x: &DMatrix<f64>, y: &DMatrix<f64>, rank: Option<usize>) -> Result<LocalOperator> {
    if x.shape() != y.shape() || x.ncols() == 0 {
        return Err(Error::Shape(format!(
            "snapshot matrices {:?} and {:?} must be equal and non-empty",
            x.shape(),
            y.shape()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite snapshot".into()));
    }
    let (u, sigma, w) = sorted_svd(x)?;
    let top = sigma[0];
    if !(top > 0.0) {
        return Err(Error::RankDeficient("snapshot matrix is zero".into()));
    }
    let r = match rank {
        Some(r) => r,
        None => sigma.iter().filter(|s| **s / top > RANK_TOL).count(),
    };
    if r == 0 || r > sigma.len() {
        return Err(Error::RankDeficient(format!(
            "rank {r} outside 1..={} (limited by lifted dimension and sample count)",
            sigma.len()
        )));
    }
    if sigma[r - 1] / top < MIN_SIGMA_RATIO {
        return Err(Error::RankDeficient(format!(
            "sigma_{r}/sigma_1 = {:.3e}; choose a smaller rank",
            sigma[r - 1] / top
        )));
    }
    let v = u.columns(0, r).into_owned();
    let mut w_scaled = w.columns(0, r).into_owned();
    for (j, s) in sigma.iter().take(r).enumerate() {
        w_scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let prom = v.transpose() * y * w_scaled;
    Ok(LocalOperator { rob: v, prom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Independent least-squares oracle `Y X^T (X X^T)^{-1}`.
    fn normal_equations(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let gram = x * x.transpose();
        let rhs = x * y.transpose();
        gram.lu().solve(&rhs).unwrap().transpose()
    }

    #[test]
    fn recovers_known_operator_at_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [6, 13] {
            let l = random(&mut rng, n, n);
            let x = random(&mut rng, n, 2 * n);
            let y = &l * &x;
            let op = fit_local_operator(&x, &y, Some(n)).unwrap();
            assert!((op.full() - &l).norm() <= 1e-8);
            assert!((op.full() - normal_equations(&x, &y)).norm() <= 1e-8);
            let ortho = op.rob.transpose() * &op.rob - DMatrix::identity(n, n);
            assert!(ortho.norm() <= 1e-10);
        }
    }

    #[test]
    fn identity_dynamics_have_unit_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 6, 4);
        let op = fit_local_operator(&x, &x, None).unwrap();
        assert_eq!(op.prom.nrows(), 4);
        let eig = op.prom.clone().complex_eigenvalues();
        for e in eig.iter() {
            assert!((e.re - 1.0).abs() <= 1e-8 && e.im.abs() <= 1e-8);
        }
    }

    #[test]
    fn automatic_rank_drops_dependent_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = random(&mut rng, 5, 10);
        let dup = x.row(0) * 2.0 - x.row(1);
        x.row_mut(4).copy_from(&dup);
        assert_eq!(numerical_rank(&x).unwrap(), 4);
        let op = fit_local_operator(&x, &x, None).unwrap();
        assert_eq!(op.rob.ncols(), 4);
        assert!(matches!(fit_local_operator(&x, &x, Some(5)), Err(Error::RankDeficient(_))));
        assert!(matches!(fit_local_operator(&x, &x, Some(11)), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn shape_mismatch() {
        let x = DMatrix::zeros(3, 2);
        let y = DMatrix::zeros(3, 3);
        assert!(matches!(fit_local_operator(&x, &y, None), Err(Error::Shape(_))));
    }
}
