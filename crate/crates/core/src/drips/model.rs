use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dmd::{fit_local_operator, numerical_rank, LocalOperator};
use super::grassmann::{alignment, exp_map, log_map};
use super::interp::GridAxes;
use super::lifting::LiftingMap;
use crate::datagen::{BoxDomain, Dataset, TrainPair};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::io::{read_json, read_matrix, write_json, write_matrix};
use crate::localparam::{BasisSpec, GlobalParams};

/// How ROBs and reduced operators are carried between grid points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpScheme {
    /// Grassmann log/exp for bases, congruence-aligned entrywise
    /// interpolation for reduced operators.
    #[default]
    Grassmann,
}

/// Tangent vectors and aligned operators of all grid points, expressed at one
/// reference node.
#[derive(Debug)]
struct Reference {
    tangents: Vec<DMatrix<f64>>,
    aligned: Vec<DMatrix<f64>>,
}

type RefSlot = OnceLock<std::result::Result<Arc<Reference>, String>>;

/// Trained DRIPS surrogate. Immutable after construction; per-reference
/// interpolation data is computed on first use and shared across threads.
#[derive(Debug)]
pub struct DripsModel {
    pub lifting: LiftingMap,
    pub basis: BasisSpec,
    pub omega_p: BoxDomain,
    pub points_per_dim: usize,
    pub dt: f64,
    pub rank: usize,
    pub scheme: InterpScheme,
    pub grid: Vec<Vec<f64>>,
    pub robs: Vec<DMatrix<f64>>,
    pub proms: Vec<DMatrix<f64>>,
    axes: GridAxes,
    cache: Vec<RefSlot>,
}

impl Clone for DripsModel {
    fn clone(&self) -> Self {
        Self::assemble(
            self.lifting,
            self.basis.clone(),
            self.omega_p.clone(),
            self.points_per_dim,
            self.dt,
            self.robs.clone(),
            self.proms.clone(),
        )
        .expect("a valid model re-assembles")
    }
}

/// Homogeneous lifted snapshot matrices `X = [g(s_in); 1]`, `Y = [g(s_out); 1]`,
/// one column per pair.
pub fn snapshot_matrices(pairs: &[&TrainPair], lifting: LiftingMap) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = lifting.dim_g() + 1;
    let mut x = DMatrix::zeros(n, pairs.len());
    let mut y = DMatrix::zeros(n, pairs.len());
    for (j, pair) in pairs.iter().enumerate() {
        x.set_column(j, &lifting.lift_homogeneous(&pair.s_in));
        y.set_column(j, &lifting.lift_homogeneous(&pair.s_out));
    }
    (x, y)
}

/// Fits the ROB and reduced operator of one parameter group.
pub fn fit_group(pairs: &[&TrainPair], lifting: LiftingMap, rank: Option<usize>) -> Result<LocalOperator> {
    let (x, y) = snapshot_matrices(pairs, lifting);
    fit_local_operator(&x, &y, rank)
}

impl DripsModel {
    fn assemble(
        lifting: LiftingMap,
        basis: BasisSpec,
        omega_p: BoxDomain,
        points_per_dim: usize,
        dt: f64,
        robs: Vec<DMatrix<f64>>,
        proms: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let axes = GridAxes::from_box(&omega_p, points_per_dim)?;
        let grid = axes.points();
        if robs.len() != grid.len() || proms.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} grid points but {} bases and {} operators",
                grid.len(),
                robs.len(),
                proms.len()
            )));
        }
        if omega_p.dim() != basis.n_par() {
            return Err(Error::Shape("coefficient box does not match basis".into()));
        }
        let n = lifting.dim_g() + 1;
        let rank = robs.first().map_or(0, |v| v.ncols());
        for (v, l) in robs.iter().zip(&proms) {
            if v.shape() != (n, rank) || l.shape() != (rank, rank) {
                return Err(Error::Shape(format!(
                    "expected {n}x{rank} bases and {rank}x{rank} operators, got {:?} and {:?}",
                    v.shape(),
                    l.shape()
                )));
            }
        }
        let cache = (0..grid.len()).map(|_| OnceLock::new()).collect();
        Ok(DripsModel {
            lifting,
            basis,
            omega_p,
            points_per_dim,
            dt,
            rank,
            scheme: InterpScheme::Grassmann,
            grid,
            robs,
            proms,
            axes,
            cache,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.lifting.state_dim()
    }

    fn reference(&self, j0: usize) -> Result<Arc<Reference>> {
        let slot = self.cache[j0].get_or_init(|| {
            let v0 = &self.robs[j0];
            let build = || -> Result<Reference> {
                let mut tangents = Vec::with_capacity(self.grid.len());
                let mut aligned = Vec::with_capacity(self.grid.len());
                for (v, l) in self.robs.iter().zip(&self.proms) {
                    tangents.push(log_map(v0, v)?);
                    let q = alignment(v, v0)?;
                    aligned.push(q.transpose() * l * q);
                }
                Ok(Reference { tangents, aligned })
            };
            build().map(Arc::new).map_err(|e| e.to_string())
        });
        slot.clone().map_err(Error::Interpolation)
    }

    fn check_query(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.axes.dim() {
            return Err(Error::Shape(format!(
                "parameter has {} entries, model expects {}",
                p.len(),
                self.axes.dim()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Interpolated ROB and reduced operator at `p`.
    pub fn interpolate(&self, p: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_query(p)?;
        let j0 = self.axes.nearest(p);
        let reference = self.reference(j0)?;
        let w = self.axes.weights(p)?;
        let n = self.lifting.dim_g() + 1;
        let mut gamma = DMatrix::zeros(n, self.rank);
        let mut l = DMatrix::zeros(self.rank, self.rank);
        for ((wj, t), a) in w.iter().zip(&reference.tangents).zip(&reference.aligned) {
            if *wj != 0.0 {
                gamma += t * *wj;
                l += a * *wj;
            }
        }
        let v = exp_map(&self.robs[j0], &gamma)?;
        Ok((v, l))
    }

    pub fn interp_rob(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.interpolate(p)?.0)
    }

    pub fn interp_prom(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.interpolate(p)?.1)
    }

    /// One step of the lifted recursion from the homogeneous observable `g`,
    /// without re-projection.
    pub fn advance_lifted(&self, g: &DVector<f64>, p: &[f64]) -> Result<DVector<f64>> {
        let (v, l) = self.interpolate(p)?;
        Ok(&v * (&l * (v.transpose() * g)))
    }

    /// Predicted state after one step from `s` under parameter `p`.
    pub fn one_step(&self, s: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let g = self.advance_lifted(&self.lifting.lift_homogeneous(s), p)?;
        Ok(self.lifting.unlift(g.as_slice()))
    }
}

/// Fits one local operator per grid point. Pairs must be grouped by grid
/// index (`group == j` for grid point `j`, as produced by the grid dataset
/// generator). `rank = None` uses the smallest numerical rank found across
/// groups so every grid point shares one rank.
pub fn train_drips(
    ds: &Dataset,
    lifting: LiftingMap,
    basis: &BasisSpec,
    omega_p: &BoxDomain,
    points_per_dim: usize,
    rank: Option<usize>,
) -> Result<DripsModel> {
    if ds.n_s != lifting.state_dim() {
        return Err(Error::Shape(format!(
            "dataset state dimension {} does not match lifting '{}'",
            ds.n_s,
            lifting.name()
        )));
    }
    basis.validate()?;
    if ds.n_par != basis.n_par() {
        return Err(Error::Shape(format!(
            "dataset has {} coefficients, basis has {}",
            ds.n_par,
            basis.n_par()
        )));
    }
    let axes = GridAxes::from_box(omega_p, points_per_dim)?;
    let grid = axes.points();
    let groups = ds.groups();
    let mut members: Vec<Vec<&TrainPair>> = vec![Vec::new(); grid.len()];
    for (id, pairs) in groups {
        let j = usize::try_from(id).ok().filter(|j| *j < grid.len()).ok_or_else(|| {
            Error::Shape(format!("group {id} is not a grid index (grid has {} points)", grid.len()))
        })?;
        for pair in pairs {
            let scale = pair.p.iter().chain(&grid[j]).fold(1.0f64, |m, v| m.max(v.abs()));
            if pair.p.iter().zip(&grid[j]).any(|(a, b)| (a - b).abs() > 1e-12 * scale) {
                return Err(Error::Shape(format!(
                    "pair in group {id} has p = {:?}, grid point is {:?}",
                    pair.p, grid[j]
                )));
            }
            members[j].push(pair);
        }
    }
    if let Some(j) = members.iter().position(Vec::is_empty) {
        return Err(Error::Shape(format!("no training pairs at grid point {j}")));
    }
    let rank = match rank {
        Some(r) => r,
        None => {
            let mut r = usize::MAX;
            for group in &members {
                let (x, _) = snapshot_matrices(group, lifting);
                r = r.min(numerical_rank(&x)?);
            }
            r
        }
    };
    let mut robs = Vec::with_capacity(grid.len());
    let mut proms = Vec::with_capacity(grid.len());
    for (j, group) in members.iter().enumerate() {
        let op = fit_group(group, lifting, Some(rank)).map_err(|e| match e {
            Error::RankDeficient(msg) => Error::RankDeficient(format!("grid point {j}: {msg}")),
            other => other,
        })?;
        robs.push(op.rob);
        proms.push(op.prom);
    }
    DripsModel::assemble(lifting, basis.clone(), omega_p.clone(), points_per_dim, ds.dt, robs, proms)
}

/// Recursive prediction: `g_{k+1} = V L_r V^T g_k`, after which the state
/// coordinates are read back and the observable is recomputed from them.
pub fn drips_predict(model: &DripsModel, s0: &[f64], segments: &GlobalParams) -> Result<Trajectory> {
    if s0.len() != model.state_dim() {
        return Err(Error::Shape(format!(
            "initial state has length {}, model expects {}",
            s0.len(),
            model.state_dim()
        )));
    }
    if segments.basis != model.basis {
        return Err(Error::Config("control parameterization differs from the training basis".into()));
    }
    if (segments.dt - model.dt).abs() > 1e-12 * model.dt {
        return Err(Error::Config(format!(
            "segment length {} differs from the training step {}",
            segments.dt, model.dt
        )));
    }
    let mut warned = false;
    let mut times = vec![0.0];
    let mut states = vec![s0.to_vec()];
    let mut g = model.lifting.lift_homogeneous(s0);
    for (k, seg) in segments.segments.iter().enumerate() {
        if !warned && !model.axes.contains(&seg.p) {
            warn!("segment {k}: parameter outside the training grid; extrapolating");
            warned = true;
        }
        let next = model.advance_lifted(&g, &seg.p)?;
        let s = model.lifting.unlift(next.as_slice());
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                msg: "non-finite predicted state".into(),
            });
        }
        g = model.lifting.lift_homogeneous(&s);
        times.push((k + 1) as f64 * model.dt);
        states.push(s);
    }
    Ok(Trajectory { times, states })
}

#[derive(Serialize, Deserialize)]
struct Meta {
    lifting: LiftingMap,
    rank: usize,
    scheme: InterpScheme,
    omega_p: BoxDomain,
    points_per_dim: usize,
    basis: BasisSpec,
    delta_t: f64,
    n_grid: usize,
}

/// Writes `grid.csv`, `rob_<j>.csv`, `prom_<j>.csv` and `meta.json`.
pub fn write_archive(model: &DripsModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        lifting: model.lifting,
        rank: model.rank,
        scheme: model.scheme,
        omega_p: model.omega_p.clone(),
        points_per_dim: model.points_per_dim,
        basis: model.basis.clone(),
        delta_t: model.dt,
        n_grid: model.grid.len(),
    };
    write_json(&meta, &dir.join("meta.json"))?;
    let n_par = model.omega_p.dim();
    let grid = DMatrix::from_fn(model.grid.len(), n_par, |i, j| model.grid[i][j]);
    write_matrix(&grid, &dir.join("grid.csv"))?;
    for (j, (v, l)) in model.robs.iter().zip(&model.proms).enumerate() {
        write_matrix(v, &dir.join(format!("rob_{j}.csv")))?;
        write_matrix(l, &dir.join(format!("prom_{j}.csv")))?;
    }
    Ok(())
}

pub fn read_archive(dir: &Path) -> Result<DripsModel> {
    let meta: Meta = read_json(&dir.join("meta.json"))?;
    meta.omega_p.validate()?;
    meta.basis.validate()?;
    let axes = GridAxes::from_box(&meta.omega_p, meta.points_per_dim)?;
    if axes.len() != meta.n_grid {
        return Err(Error::Format(format!(
            "meta.json lists {} grid points, the box implies {}",
            meta.n_grid,
            axes.len()
        )));
    }
    let grid = read_matrix(&dir.join("grid.csv"))?;
    let expected = DMatrix::from_fn(axes.len(), axes.dim(), |i, j| axes.point(i)[j]);
    if grid.shape() != expected.shape() || (grid - expected).amax() > 1e-12 {
        return Err(Error::Format("grid.csv does not match the grid described in meta.json".into()));
    }
    let mut robs = Vec::with_capacity(meta.n_grid);
    let mut proms = Vec::with_capacity(meta.n_grid);
    for j in 0..meta.n_grid {
        robs.push(read_matrix(&dir.join(format!("rob_{j}.csv")))?);
        proms.push(read_matrix(&dir.join(format!("prom_{j}.csv")))?);
    }
    let model = DripsModel::assemble(
        meta.lifting,
        meta.basis,
        meta.omega_p,
        meta.points_per_dim,
        meta.delta_t,
        robs,
        proms,
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    if model.rank != meta.rank {
        return Err(Error::Format(format!(
            "meta.json rank {} does not match stored bases of rank {}",
            meta.rank, model.rank
        )));
    }
    Ok(model)
}
