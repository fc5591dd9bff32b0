//! Free flight, kick, free flight: the full protocol and its parameter sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::ccsl::{ccsl_free_moments, ccsl_harmonic_moments};
use crate::csl::{csl_free_step, csl_harmonic_step};
use crate::dcsl::{boost_mean_step, dcsl_harmonic_step, KickMode};
use crate::error::{Error, Result, Stage};
use crate::model::{kinetic_energy, temperature_from_energy, Csl, Dcsl, GasMoments, NoiseModel, Protocol};
use crate::ode::{default_step, rk4_span, OdeSystem};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunOptions {
    pub kick_mode: KickMode,
}

fn free(noise: &NoiseModel, m: &GasMoments, p: &Protocol, dt: f64) -> Result<GasMoments> {
    let sp = &p.species;
    match noise {
        NoiseModel::QmOnly => csl_free_step(m, &Csl { lambda: 0.0, r_c: 1.0 }, sp, dt),
        NoiseModel::Csl(n) => csl_free_step(m, n, sp, dt),
        NoiseModel::Ccsl(n) => ccsl_free_moments(m, n, sp, dt),
        NoiseModel::Dcsl(n) => boost_mean_step(m, n, sp, dt),
    }
}

fn kick(noise: &NoiseModel, m: &GasMoments, p: &Protocol, dt: f64, opts: &RunOptions) -> Result<GasMoments> {
    if p.omega == 0.0 {
        return free(noise, m, p, dt);
    }
    let (sp, w) = (&p.species, p.omega);
    match noise {
        NoiseModel::QmOnly => csl_harmonic_step(m, &Csl { lambda: 0.0, r_c: 1.0 }, sp, w, dt),
        NoiseModel::Csl(n) => csl_harmonic_step(m, n, sp, w, dt),
        NoiseModel::Ccsl(n) => ccsl_harmonic_moments(m, n, sp, w, dt),
        NoiseModel::Dcsl(n) => dcsl_harmonic_step(m, n, sp, w, dt, opts.kick_mode),
    }
}

/// Stage boundaries `(stage, start, duration)`.
fn stages(p: &Protocol) -> [(Stage, f64, f64); 3] {
    [(Stage::Release, 0.0, p.dt1), (Stage::Kick, p.t1(), p.dt2), (Stage::Flight, p.t2(), p.dt3)]
}

fn step(
    stage: Stage,
    noise: &NoiseModel,
    m: &GasMoments,
    p: &Protocol,
    dt: f64,
    opts: &RunOptions,
) -> Result<GasMoments> {
    let out = match stage {
        Stage::Kick => kick(noise, m, p, dt, opts),
        _ => free(noise, m, p, dt),
    };
    out.and_then(|o| o.check_finite(dt)).map_err(|e| e.at(stage))
}

/// Moments at detection.
pub fn propagate(protocol: &Protocol, noise: &NoiseModel, opts: &RunOptions) -> Result<GasMoments> {
    protocol.validate()?;
    let mut m = protocol.initial;
    for (stage, _, dt) in stages(protocol) {
        if dt > 0.0 {
            m = step(stage, noise, &m, protocol, dt, opts)?;
        }
    }
    Ok(m)
}

fn oracle_system(stage: Stage, noise: &NoiseModel, p: &Protocol, opts: &RunOptions) -> OdeSystem {
    let w = if stage == Stage::Kick { p.omega } else { 0.0 };
    let quiet = Csl { lambda: 0.0, r_c: 1.0 };
    let sp = &p.species;
    match noise {
        NoiseModel::QmOnly => OdeSystem::csl(&quiet, sp, w),
        NoiseModel::Csl(n) => OdeSystem::csl(n, sp, w),
        NoiseModel::Ccsl(n) => OdeSystem::ccsl(n, sp, w),
        NoiseModel::Dcsl(n) if stage == Stage::Kick && opts.kick_mode == KickMode::AnalyticQm => {
            OdeSystem::csl(&quiet, sp, w)
        }
        NoiseModel::Dcsl(n) => OdeSystem::dcsl(n, sp, w),
    }
}

/// RK4 counterpart of [`propagate`]: the moment equations integrated stage by
/// stage with [`default_step`], sharing no solution code with the closed forms.
pub fn propagate_oracle(protocol: &Protocol, noise: &NoiseModel, opts: &RunOptions) -> Result<GasMoments> {
    let times = [protocol.t3()];
    Ok(trajectory_oracle(protocol, noise, &times, opts)?[0])
}

/// RK4 moments at the increasing `times`; the integration runs continuously
/// through them, so the samples do not restart the stages.
pub fn trajectory_oracle(
    protocol: &Protocol,
    noise: &NoiseModel,
    times: &[f64],
    opts: &RunOptions,
) -> Result<Vec<GasMoments>> {
    protocol.validate()?;
    let mut out = Vec::with_capacity(times.len());
    let mut m = protocol.initial;
    let mut next = times.iter().peekable();
    while next.peek().is_some_and(|t| **t <= 0.0) {
        out.push(m);
        next.next();
    }
    for (stage, t0, dt) in stages(protocol) {
        if dt == 0.0 {
            continue;
        }
        let sys = oracle_system(stage, noise, protocol, opts);
        let h = default_step(dt);
        let mut local = 0.0;
        let wrap = |e: Error| e.at(stage);
        while let Some(&&t) = next.peek() {
            if t > t0 + dt {
                break;
            }
            let target = (t - t0).min(dt);
            m = rk4_span(&sys, &m, local, target, h).map_err(wrap)?;
            local = target;
            out.push(m);
            next.next();
        }
        m = rk4_span(&sys, &m, local, dt, h).map_err(wrap)?;
    }
    if next.peek().is_some() {
        return Err(Error::domain("oracle sample times must be increasing and end by detection"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables {
    pub x2: f64,
    pub p2: f64,
    pub sigma_x: f64,
    pub energy: f64,
    pub temperature: f64,
}

impl Observables {
    pub fn of(m: &GasMoments, p: &Protocol) -> Self {
        let energy = kinetic_energy(m, &p.species);
        Observables {
            x2: m.x2,
            p2: m.p2,
            sigma_x: m.sigma_per_axis(),
            energy,
            temperature: temperature_from_energy(energy),
        }
    }
}

pub fn final_observables(protocol: &Protocol, noise: &NoiseModel, opts: &RunOptions) -> Result<Observables> {
    propagate(protocol, noise, opts).map(|m| Observables::of(&m, protocol))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub moments: Vec<GasMoments>,
    /// Stage each sample belongs to; a junction sample closes its stage.
    pub stages: Vec<Stage>,
    pub final_sigma_x: f64,
    pub final_energy: f64,
    pub final_temperature: f64,
}

impl TrajectoryRecord {
    pub fn final_moments(&self) -> &GasMoments {
        self.moments.last().expect("at least the initial sample")
    }
}

pub fn run_protocol(protocol: &Protocol, noise: &NoiseModel, sampling: f64) -> Result<TrajectoryRecord> {
    run_protocol_with(protocol, noise, sampling, &RunOptions::default())
}

/// Samples every stage at the multiples of `sampling` it covers plus its end
/// point. Each sample is the stage solution evaluated from the stage start, so
/// the sampling never feeds back into the end state.
pub fn run_protocol_with(
    protocol: &Protocol,
    noise: &NoiseModel,
    sampling: f64,
    opts: &RunOptions,
) -> Result<TrajectoryRecord> {
    if !(sampling > 0.0 && sampling.is_finite()) {
        return Err(Error::domain(format!("sampling interval must be positive, got {sampling}")));
    }
    protocol.validate()?;
    let mut times = vec![0.0];
    let mut moments = vec![protocol.initial];
    let mut labels = vec![Stage::Release];
    let mut start = protocol.initial;
    for (stage, t0, dt) in stages(protocol) {
        if dt == 0.0 {
            continue;
        }
        let t_end = t0 + dt;
        let mut k = (t0 / sampling).floor() + 1.0;
        while k * sampling < t_end {
            let t = k * sampling;
            if t > t0 {
                moments.push(step(stage, noise, &start, protocol, t - t0, opts)?);
                times.push(t);
                labels.push(stage);
            }
            k += 1.0;
        }
        let end = step(stage, noise, &start, protocol, dt, opts)?;
        moments.push(end);
        times.push(t_end);
        labels.push(stage);
        start = end;
    }
    let last = Observables::of(&start, protocol);
    Ok(TrajectoryRecord {
        times,
        moments,
        stages: labels,
        final_sigma_x: last.sigma_x,
        final_energy: last.energy,
        final_temperature: last.temperature,
    })
}

/// One sweep point: the swept value and the outcome there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub outcome: std::result::Result<Observables, String>,
}

impl SweepRow {
    pub fn ok(&self) -> Option<&Observables> {
        self.outcome.as_ref().ok()
    }
}

fn sweep<F>(grid: &[f64], point: F) -> Vec<SweepRow>
where
    F: Fn(f64) -> Result<Observables> + Sync,
{
    grid.par_iter().map(|&v| SweepRow { value: v, outcome: point(v).map_err(|e| e.to_string()) }).collect()
}

pub fn sweep_kick_time(protocol: &Protocol, noise: &NoiseModel, dt2_grid: &[f64]) -> Vec<SweepRow> {
    sweep_kick_time_with(protocol, noise, dt2_grid, &RunOptions::default())
}

pub fn sweep_kick_time_with(
    protocol: &Protocol,
    noise: &NoiseModel,
    dt2_grid: &[f64],
    opts: &RunOptions,
) -> Vec<SweepRow> {
    sweep(dt2_grid, |dt2| final_observables(&protocol.with_dt2(dt2)?, noise, opts))
}

pub fn sweep_noise_temperature(protocol: &Protocol, base: &Dcsl, t_grid: &[f64]) -> Vec<SweepRow> {
    sweep(t_grid, |t| {
        let n = Dcsl::boosted(base.lambda, base.r_c, t, base.boost)?;
        final_observables(protocol, &NoiseModel::Dcsl(n), &RunOptions::default())
    })
}

pub fn sweep_rc(protocol: &Protocol, base: &Dcsl, rc_grid: &[f64]) -> Vec<SweepRow> {
    sweep(rc_grid, |r_c| {
        let n = Dcsl::boosted(base.lambda, r_c, base.t_csl, base.boost)?;
        final_observables(protocol, &NoiseModel::Dcsl(n), &RunOptions::default())
    })
}

/// Replace the initial `p2` so that quantum evolution ends at `target_sigma`
/// per axis. Final `x2` is affine in the initial `p2`, so two runs suffice.
pub fn calibrate_initial_p2(protocol: &Protocol, target_sigma: f64) -> Result<Protocol> {
    let at = |p2: f64| -> Result<f64> {
        let mut q = *protocol;
        q.initial.p2 = p2;
        Ok(propagate(&q, &NoiseModel::QmOnly, &RunOptions::default())?.x2)
    };
    let p_ref = protocol.initial.p2.max(1e-60);
    let x_zero = at(0.0)?;
    let slope = (at(p_ref)? - x_zero) / p_ref;
    let p2 = (3.0 * target_sigma * target_sigma - x_zero) / slope;
    if !(p2 >= 0.0 && p2.is_finite()) {
        return Err(Error::domain(format!(
            "no non-negative initial momentum spread reaches {target_sigma} m; the position term alone gives {} m",
            (x_zero / 3.0).sqrt()
        )));
    }
    let mut q = *protocol;
    q.initial.p2 = p2;
    Ok(q)
}
