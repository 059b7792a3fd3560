//! Carnot–Carathéodory distance by Hamiltonian shooting and by direct
//! transcription, plus the ball, sphere and cut-locus queries built on them.

mod ball;
mod sampling;
mod shooting;
mod transcription;

use serde::Serialize;

use crate::flow::ControlGrid;
use crate::geodesic::Covector;

pub use ball::{
    ball_membership, cut_time_scan, non_minimizing_witness, minimizer_multiplicity, sphere_sample, CutScan, FallbackMode, Membership,
    MembershipOptions, Multiplicity, SpherePoint, SphereSample, Verdict, Witness,
};
pub use sampling::{covector_grid, fibonacci_sphere, CovectorSampler};
pub use shooting::{distance_shooting, shooting_candidates, Candidate, ShootingOptions};
pub use transcription::{distance_transcription, TranscriptionOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Shooting,
    Transcription,
}

/// One length-minimising curve found by a distance solver.
#[derive(Debug, Clone, Serialize)]
pub struct Minimizer {
    pub length: f64,
    /// Endpoint mismatch of the solver's own representation (the covector
    /// for shooting, the control for transcription).
    pub residual: f64,
    /// Initial covector with `H = ½` (shooting only).
    pub lambda0: Option<Covector>,
    /// Arc-length parameterised control on `[0, length]`.
    #[serde(skip)]
    pub control: ControlGrid,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceResult {
    pub value: f64,
    pub method: Method,
    pub minimizers: Vec<Minimizer>,
    #[serde(rename = "residual")]
    pub endpoint_residual: f64,
    pub multiplicity: usize,
    /// Set when an iteration cap was hit: `value` is then only an upper bound.
    pub upper_bound_only: bool,
    pub caveats: Vec<String>,
}

impl DistanceResult {
    pub(crate) fn zero(method: Method, residual: f64) -> Self {
        Self {
            value: 0.0,
            method,
            minimizers: Vec::new(),
            endpoint_residual: residual,
            multiplicity: 0,
            upper_bound_only: false,
            caveats: Vec::new(),
        }
    }
}
