//! Observable (lifting) maps. Both maps embed the state coordinates as their
//! leading entries, so `unlift` just reads them back.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlValue, ModelKind, SlipFreeParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiftingMap {
    /// `[x, y, psi, cos psi, sin psi]`
    Unicycle,
    /// `[x, y, v, psi, c, s, v c, v s, v^2, c^2, s^2, s c]`
    Bicycle,
}

impl LiftingMap {
    pub fn for_model(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::Unicycle => Ok(LiftingMap::Unicycle),
            ModelKind::SlipFree | ModelKind::ExperimentalPrior => Ok(LiftingMap::Bicycle),
            ModelKind::Slip => Err(Error::Config(
                "no lifting map is defined for the slip-based plant".into(),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LiftingMap::Unicycle => "unicycle",
            LiftingMap::Bicycle => "bicycle",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            LiftingMap::Unicycle => 3,
            LiftingMap::Bicycle => 4,
        }
    }

    pub fn dim_g(self) -> usize {
        match self {
            LiftingMap::Unicycle => 5,
            LiftingMap::Bicycle => 12,
        }
    }

    /// Writes `g(s)` into the first `dim_g` entries of `out`.
    pub fn lift_into(self, s: &[f64], out: &mut [f64]) {
        match self {
            LiftingMap::Unicycle => {
                let (sn, c) = s[2].sin_cos();
                out[..5].copy_from_slice(&[s[0], s[1], s[2], c, sn]);
            }
            LiftingMap::Bicycle => {
                let v = s[2];
                let (sn, c) = s[3].sin_cos();
                out[..12].copy_from_slice(&[
                    s[0],
                    s[1],
                    v,
                    s[3],
                    c,
                    sn,
                    v * c,
                    v * sn,
                    v * v,
                    c * c,
                    sn * sn,
                    sn * c,
                ]);
            }
        }
    }

    pub fn lift(self, s: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim_g()];
        self.lift_into(s, &mut g);
        g
    }

    /// `[g(s); 1]` — the homogeneous lifted state used by the operators.
    pub fn lift_homogeneous(self, s: &[f64]) -> DVector<f64> {
        let n = self.dim_g();
        let mut g = DVector::zeros(n + 1);
        self.lift_into(s, g.as_mut_slice());
        g[n] = 1.0;
        g
    }

    pub fn unlift(self, g: &[f64]) -> Vec<f64> {
        g[..self.state_dim()].to_vec()
    }
}

/// Affine lifted dynamics `dg/dt = A g + b` of the slip-free bicycle under
/// the 12-entry map, with `rho = tan(b_delta delta) / L`. The entries that
/// multiply `rho` carry the current forward speed `v`, which makes `A`
/// state-dependent.
pub fn bicycle_lifted_system(
    params: &SlipFreeParams,
    c: ControlValue,
    v: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let a_u = params.b_u * c[0];
    let w = (params.b_delta * c[1]).tan() / params.wheelbase * v;
    let mut a = DMatrix::zeros(12, 12);
    a[(0, 6)] = 1.0;
    a[(1, 7)] = 1.0;
    a[(4, 5)] = -w;
    a[(5, 4)] = w;
    a[(6, 4)] = a_u;
    a[(6, 7)] = -w;
    a[(7, 5)] = a_u;
    a[(7, 6)] = w;
    a[(9, 11)] = -2.0 * w;
    a[(10, 11)] = 2.0 * w;
    a[(11, 9)] = w;
    a[(11, 10)] = -w;
    let mut b = DVector::zeros(12);
    b[2] = a_u;
    b[3] = w;
    b[8] = 2.0 * a_u * v;
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::slipfree_rhs;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn lift_examples() {
        assert_eq!(LiftingMap::Unicycle.lift(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let g = LiftingMap::Unicycle.lift(&[1.0, 2.0, PI]);
        assert_eq!(&g[..4], &[1.0, 2.0, PI, -1.0]);
        assert!(g[4].abs() < 1e-15);
        assert_eq!(
            LiftingMap::Bicycle.lift(&[1.0, 1.0, 2.0, 0.0]),
            vec![1.0, 1.0, 2.0, 0.0, 1.0, 0.0, 2.0, 0.0, 4.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn unlift_inverts_lift() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(LiftingMap::Bicycle.unlift(&LiftingMap::Bicycle.lift(&s)), s);
            let g = LiftingMap::Unicycle.lift(&s[..3]);
            assert_abs_diff_eq!(g[3] * g[3] + g[4] * g[4], 1.0, epsilon = 1e-12);
            assert_eq!(LiftingMap::Unicycle.unlift(&g), s[..3].to_vec());
        }
    }

    /// Jacobian of the 12-entry map, written out by hand.
    fn jacobian(s: &[f64]) -> DMatrix<f64> {
        let v = s[2];
        let (sn, c) = s[3].sin_cos();
        let mut j = DMatrix::zeros(12, 4);
        j[(0, 0)] = 1.0;
        j[(1, 1)] = 1.0;
        j[(2, 2)] = 1.0;
        j[(3, 3)] = 1.0;
        j[(4, 3)] = -sn;
        j[(5, 3)] = c;
        j[(6, 2)] = c;
        j[(6, 3)] = -v * sn;
        j[(7, 2)] = sn;
        j[(7, 3)] = v * c;
        j[(8, 2)] = 2.0 * v;
        j[(9, 3)] = -2.0 * c * sn;
        j[(10, 3)] = 2.0 * sn * c;
        j[(11, 3)] = c * c - sn * sn;
        j
    }

    #[test]
    fn lifted_system_matches_chain_rule() {
        let params = SlipFreeParams {
            b_u: 4.55,
            b_delta: 0.4601,
            wheelbase: 0.255,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let s = [
                rng.random_range(-4.0..10.0),
                rng.random_range(-1.0..8.0),
                rng.random_range(0.0..2.5),
                rng.random_range(-0.5..4.0),
            ];
            let c = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let f = DVector::from_vec(slipfree_rhs(&s, c, &params).unwrap());
            let chain = jacobian(&s) * f;
            let (a, b) = bicycle_lifted_system(&params, c, s[2]);
            let affine = a * DVector::from_vec(LiftingMap::Bicycle.lift(&s)) + b;
            assert!((chain - affine).amax() <= 1e-10);
        }
    }
}
