//! Continuous-time MAP trajectory estimation for SDE models through the
//! Onsager–Machlup functional, with sequential and associative-scan solvers.

pub mod element;
pub mod error;
pub mod ieks;
pub mod linalg;
pub mod model;
pub mod om;
pub mod parallel;
pub mod sequential;

pub use ctmap_scan as scan;
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{
    build_time_grid, finite_difference_jacobian, validate_model, LinearAffineModel, MeasurementSeries,
    NonlinearModel, StateSpaceModel, TimeFn, TimeGrid, Trajectory, ValidationReport, Violation,
};
pub use ieks::{iterated_map, iterated_map_with, linearize_about, Backend, IterationOptions, IterationTrace};
pub use om::{om_cost, om_cost_terms, reverse_problem, reverse_trajectory, OmCost, ReversedControlProblem};
