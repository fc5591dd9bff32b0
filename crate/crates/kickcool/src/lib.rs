//! Moment dynamics of a released, delta-kick cooled atom cloud under quantum
//! evolution and three collapse-noise models (white CSL, colored cCSL,
//! dissipative dCSL), plus the exclusion scans built on them.
//!
//! Everything works on the second moments `<x^2>`, `<xp + px>/2`, `<p^2>` of an
//! isotropic cloud together with its mean position and momentum, summed over
//! the three axes. The per-axis spread is `sqrt(<x^2>/3)`.
//!
//! ```
//! use kickcool::{propagate, NoiseModel, Protocol, RunOptions};
//!
//! let p = Protocol::standard();
//! let m = propagate(&p, &NoiseModel::QmOnly, &RunOptions::default()).unwrap();
//! assert!(m.sigma_per_axis() > 100e-6 && m.sigma_per_axis() < 170e-6);
//! ```

pub mod ccsl;
pub mod cli;
pub mod csl;
pub mod dcsl;
pub mod error;
pub mod kick_error;
pub mod model;
pub mod ode;
pub mod pipeline;
pub mod quad;
pub mod scan;

pub use error::{Error, Result, Stage};
pub use model::{
    delta_kick_frequency, kinetic_energy, moments_from_temperature, temperature_from_energy, temperature_from_moments,
    AtomSpecies, Ccsl, Csl, Dcsl, DetectionClock, GasMoments, NoiseModel, PhysicalConstants, Protocol, Vec3, HBAR, K_B,
};
pub use pipeline::{
    calibrate_initial_p2, final_observables, propagate, run_protocol, run_protocol_with, sweep_kick_time,
    sweep_kick_time_with, sweep_noise_temperature, sweep_rc, Observables, RunOptions, SweepRow, TrajectoryRecord,
};
pub use scan::{
    analytic_csl_bound, boost_exclusion, cl_interval, logspace, scan_exclusion, ExclusionGrid, MeasurementBand,
};
