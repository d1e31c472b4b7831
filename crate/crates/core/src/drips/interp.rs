//! Tensor-product Lagrange interpolation on a Cartesian parameter grid.
//!
//! With two levels per axis this is multilinear interpolation; with three it
//! is tensor-product quadratic.

use crate::datagen::BoxDomain;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GridAxes {
    /// Grid levels of each axis, ascending.
    pub levels: Vec<Vec<f64>>,
}

impl GridAxes {
    pub fn from_box(omega_p: &BoxDomain, points_per_dim: usize) -> Result<Self> {
        let levels = omega_p
            .0
            .iter()
            .map(|&[lo, hi]| match points_per_dim {
                1 => Ok(vec![0.5 * (lo + hi)]),
                2 => Ok(vec![lo, hi]),
                3 => Ok(vec![lo, 0.5 * (lo + hi), hi]),
                n => Err(Error::Config(format!("points_per_dim must be 1, 2 or 3, got {n}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridAxes { levels })
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in lexicographic order, first axis slowest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|j| self.point(j)).collect()
    }

    fn multi_index(&self, mut j: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            let n = self.levels[d].len();
            idx[d] = j % n;
            j /= n;
        }
        idx
    }

    pub fn point(&self, j: usize) -> Vec<f64> {
        self.multi_index(j)
            .into_iter()
            .enumerate()
            .map(|(d, i)| self.levels[d][i])
            .collect()
    }

    /// True if every coordinate lies within the axis range (inclusive).
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.levels).all(|(x, lv)| {
            let (lo, hi) = (lv[0], lv[lv.len() - 1]);
            let tol = 1e-12 * (hi - lo).abs().max(1.0);
            *x >= lo - tol && *x <= hi + tol
        })
    }

    /// Grid node nearest to `p` after scaling every axis to unit length.
    /// The grid is a tensor product, so the nearest node is found axis by
    /// axis; ties go to the lower level, i.e. the lowest linear index.
    pub fn nearest(&self, p: &[f64]) -> usize {
        let mut j = 0;
        for (d, lv) in self.levels.iter().enumerate() {
            let span = lv[lv.len() - 1] - lv[0];
            let scale = if span > 0.0 { 1.0 / span } else { 1.0 };
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (i, l) in lv.iter().enumerate() {
                let dist = ((p[d] - l) * scale).abs();
                if dist < best_dist {
                    best = i;
                    best_dist = dist;
                }
            }
            j = j * lv.len() + best;
        }
        j
    }

    /// Interpolation weight of every grid node at `p`. Weights sum to one.
    pub fn weights(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.dim() {
            return Err(Error::Shape(format!(
                "query has {} coordinates, grid has {}",
                p.len(),
                self.dim()
            )));
        }
        let axis_weights: Vec<Vec<f64>> = self
            .levels
            .iter()
            .zip(p)
            .map(|(lv, &x)| lagrange_weights(lv, x))
            .collect();
        let mut w = vec![1.0; self.len()];
        for (j, wj) in w.iter_mut().enumerate() {
            for (d, i) in self.multi_index(j).into_iter().enumerate() {
                *wj *= axis_weights[d][i];
            }
        }
        Ok(w)
    }
}

/// 1-D Lagrange basis values at `x` for the given nodes. Coincident nodes
/// (a degenerate axis) collapse onto the first.
fn lagrange_weights(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    if n == 1 || nodes[n - 1] == nodes[0] {
        let mut w = vec![0.0; n];
        w[0] = 1.0;
        return w;
    }
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&m| m != i)
                .map(|m| (x - nodes[m]) / (nodes[i] - nodes[m]))
                .product()
        })
        .collect()
}
