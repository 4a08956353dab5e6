//! Minimum-fuel rendezvous on elliptical orbits by iteratively reweighted
//! least squares, with an exact LP oracle for verification.

pub mod discretization;
pub mod error;
pub mod irls;
pub mod kinematics;
pub mod mission;
pub mod oracle;
pub mod quadrature;
pub mod verify;

pub use discretization::{
    discrete_stm, discretize, discretize_with, propagate, stack, AnomalyGrid, ControlSchedule,
    ControlUnits, DiscreteLTV, DiscretizeOptions, StackedSystem,
};
pub use error::{Error, Result};
pub use irls::{
    irls_dense, irls_l1, irls_l21, EpsRule, Irls, IrlsConfig, IrlsReport, IrlsStatus, NormMode,
    Scaling, WeightRule, WeightState,
};
pub use kinematics::{eval_anomaly, l_matrix, stm, AnomalyPoint, Frame, OrbitParams, StateVector, EARTH_MU};
pub use mission::{
    extract_impulses, load_mission, parse_mission, preset, run_mission, write_outputs, Impulse,
    ImpulseTable, MissionSpec, RunArtifacts, Summary,
};
pub use oracle::{certificate_l1, certificate_l21, solve_l1_lp, Certificate, LpSolution, LpStatus};
pub use verify::{run_suite, SuiteConfig, SuiteReport};
