//! DRIPS: per-parameter-point DMD in a lifted observable space, with
//! manifold interpolation of the resulting bases and reduced operators.
//!
//! Offline, every grid point `p_j` gets a reduced-order basis `V_j` and a
//! reduced operator `L_j` from its snapshot pairs. Online, `V(p)` is
//! interpolated on the Grassmann manifold and `L(p)` entrywise after
//! aligning every `L_j` to the frame of the nearest grid node.

mod dmd;
pub mod grassmann;
pub mod interp;
mod lifting;
mod model;

pub use dmd::{fit_local_operator, numerical_rank, LocalOperator, MIN_SIGMA_RATIO, RANK_TOL};
pub use lifting::{bicycle_lifted_system, LiftingMap};
pub use model::{
    drips_predict, fit_group, read_archive, snapshot_matrices, train_drips, write_archive, DripsModel,
    InterpScheme,
};
