//! 2D axisymmetric finite-element eigensolver for the whispering-gallery
//! modes of electromagnetic resonators.
//!
//! The solver works on the medial half-plane (radial coordinate `x >= 0`,
//! axial coordinate `y`) of an axisymmetric structure. For a chosen azimuthal
//! mode order `M` the three components of the magnetic field strength
//! `(Hrad, Hazi, Haxi)` are discretised with quadratic Lagrange elements and
//! the resulting generalized eigenproblem `K h = lambda Mm h` (with boundary
//! constraints coupled through Lagrange multipliers) is solved by
//! shift-invert Arnoldi iteration. Postprocessing derives mode volumes,
//! filling factors, wall-loss and radiative quality factors; a small
//! least-squares driver fits material permittivities to measured frequency
//! sets.

pub mod assembly;
pub mod eigensolve;
pub mod fitting;
pub mod geometry;
pub mod mesh;
pub mod oracle;
pub mod postprocess;

/// Speed of light in vacuum [m/s], exact.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Vacuum permeability [H/m].
pub const MU_0: f64 = 1.256_637_061_27e-6;

/// Frequency constant `cbar = 2*pi/c` [s/m]. The eigenvalue of the
/// assembled system is `lambda = cbar^2 f^2`.
pub const CBAR: f64 = 2.0 * std::f64::consts::PI / SPEED_OF_LIGHT;

pub use geometry::{
    make_cylindrical_cavity, parse_geometry, BoundaryCondition, Material, Region,
    ResonatorGeometry, SolverSettings, TangentToggle,
};
pub use mesh::{import_mesh, map_mesh, Element, ElementKind, Mesh, Node};
pub use assembly::{assemble_system, AssembledSystem, Component, DofMap};
pub use eigensolve::{filter_spurious, solve_modes, solve_radiation, ModeSolution};
pub use postprocess::{
    divergence_rel, export_fields, filling_factors, mode_volume, q_rad_lower, wall_loss,
    ModeReport, WallSpec,
};
pub use fitting::{
    fit_permittivities, parse_identification_csv, parse_measured_csv, suggest_identification,
    sweep_modes, CatalogEntry, FitResult, Identification, MeasuredResonance,
};

/// Unified error type for the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("geometry parse error: {0}")]
    Parse(String),
    #[error("geometry validation error: {0}")]
    Validation(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("eigensolver error: {0}")]
    Solve(String),
    #[error("postprocess error: {0}")]
    Postprocess(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
