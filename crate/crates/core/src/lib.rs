//! Directional interpolation-based fast multipole method for the 3D Helmholtz kernel.
//!
//! Expansions live on equispaced tensor grids, so the far-field transfers are
//! block-Toeplitz and are applied as Hadamard products in Fourier space.

pub mod directions;
pub mod error;
pub mod fmm;
pub mod fourier;
pub mod geometry;
pub mod harness;
pub mod interp;
pub mod kernel;
pub mod traversal;
pub mod tree;

pub use num_complex::Complex64 as C64;

pub use directions::{DirId, Direction, DirectionTree};
pub use error::{FmmError, Result};
pub use geometry::{BoundingBox, CellFrame, MortonKey, Point3};
pub use tree::{build_tree, build_tree_in, ClusterTree, ParticleSet, TreeConfig};
pub use fmm::{run_fmm, Counts, FmmConfig, FmmOutput, Timings};
pub use harness::{run_experiment, DistributionKind, ExperimentConfig, NcritSetting, RunRecord};
pub use interp::Strategy;
pub use kernel::{direct_sum, relative_errors, ErrorReport, HelmholtzKernel};
