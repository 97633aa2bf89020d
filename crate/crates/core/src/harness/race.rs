use serde::{Deserialize, Serialize};

use crate::baseline::ReferenceSample;
use crate::course::{Course, CourseCost, RaceProgress};
use crate::error::Result;
use crate::mppi::{warm_start_shift, Mppi, MppiConfig, MppiState, ReferenceTrajectory};
use crate::plant::{case_params, UncertaintyCase, VehicleState};

use super::config::{Config, FailureLimits};
use super::sim::{reference_interpolate, ClosedLoop, FailureReason, TelemetryRow};

/// Outcome of one race.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceResult {
    pub case: u8,
    pub l1: bool,
    pub seed: u64,
    pub success: bool,
    pub failure: Option<FailureReason>,
    /// Present iff `success`.
    pub lap_time: Option<f64>,
    /// RMS distance to the interpolated reference over baseline ticks, m.
    pub rms_error: f64,
    pub max_z_tilde: f64,
    /// Gate passage times in course order.
    pub splits: Vec<f64>,
    /// Simulated time at termination.
    pub duration: f64,
}

/// Checks the termination conditions other than timeout.
pub fn detect_failure(s: &VehicleState, course: Option<&Course>, limits: &FailureLimits) -> Option<FailureReason> {
    if !s.is_finite() {
        return Some(FailureReason::NumericalFault);
    }
    if s.position.z < limits.ground {
        return Some(FailureReason::Crash);
    }
    if let Some(c) = course {
        if c.centerline_distance(&s.position) > limits.divergence_radii * c.corridor_radius {
            return Some(FailureReason::CorridorDivergence);
        }
    }
    if s.velocity.norm() > limits.max_speed {
        return Some(FailureReason::CorridorDivergence);
    }
    None
}

/// Races one lap of `course` under an uncertainty case.
pub fn run_race(course: &Course, cfg: &Config, case: UncertaintyCase, l1: bool, seed: u64) -> Result<RaceResult> {
    run_race_logged(course, cfg, case, l1, seed, false).map(|(r, _)| r)
}

/// As [`run_race`], optionally keeping one telemetry row per plant tick.
pub fn run_race_logged(
    course: &Course,
    cfg: &Config,
    case: UncertaintyCase,
    l1: bool,
    seed: u64,
    telemetry: bool,
) -> Result<(RaceResult, Vec<TelemetryRow>)> {
    cfg.validate()?;
    let nominal = cfg.nominal.params()?;
    let mppi = Mppi::new(
        MppiConfig {
            seed,
            ..cfg.mppi.clone()
        },
        &nominal,
    )?;
    let cost = CourseCost {
        course,
        weights: cfg.cost,
    };
    let (start, yaw) = course.start();
    let mut initial = VehicleState::hover_at(start, yaw);
    initial.velocity = course.start_velocity();
    let mut sim = ClosedLoop::new(cfg, &nominal, case_params(case, &nominal), initial, l1)?;
    let mut progress = RaceProgress::new(yaw);
    let mut warm = mppi.hover_sequence(&nominal);
    let mut plan: Option<(f64, ReferenceTrajectory)> = None;
    let mut iteration = 0u64;
    let mut sq_error = 0.0;
    let mut samples = 0usize;
    let mut max_z_tilde: f64 = 0.0;
    let mut rows = Vec::new();
    let mut failure = None;
    let cap_ticks = (cfg.scheduler.duration_cap * cfg.scheduler.plant_hz).round() as u64;
    let dt = cfg.scheduler.plant_dt();

    loop {
        let t = sim.time();
        if sim.mppi_due() {
            let s = sim.state();
            // the planner's rate state is its own filtered command, carried
            // over from the previous plan
            let rate = match &plan {
                Some((t0, traj)) => reference_interpolate(traj, t - t0).rate,
                None => s.body_rate,
            };
            let s0 = MppiState {
                position: s.position,
                velocity: s.velocity,
                attitude: s.attitude,
                rate,
            };
            let out = mppi.plan(&s0, &warm, &cost, &progress.cursor, iteration);
            iteration += 1;
            warm = warm_start_shift(&out.controls, 1);
            plan = Some((t, out.reference));
        }
        let (t0, traj) = plan.as_ref().expect("planned on the first tick");
        let reference = reference_interpolate(traj, t - t0);
        if sim.update_controllers(&reference).is_err() {
            failure = Some(FailureReason::NumericalFault);
            break;
        }
        if sim.baseline_fired() {
            sq_error += (reference.position - sim.state().position).norm_squared();
            samples += 1;
        }
        max_z_tilde = max_z_tilde.max(sim.l1_output().z_tilde.norm());
        if telemetry {
            rows.push(sim.telemetry(&reference, progress.next_gate()));
        }
        let prev = sim.state().position;
        if sim.advance().is_err() {
            failure = Some(FailureReason::NumericalFault);
            break;
        }
        let now = sim.state().position;
        progress.update(&prev, &now, sim.time(), course);
        if progress.lap_complete {
            break;
        }
        if let Some(f) = detect_failure(sim.state(), Some(course), &cfg.limits) {
            failure = Some(f);
            break;
        }
        if sim.tick_index() >= cap_ticks {
            failure = Some(FailureReason::Timeout);
            break;
        }
    }
    if telemetry {
        let last = rows
            .last()
            .map(|r: &TelemetryRow| r.reference)
            .unwrap_or_else(|| ReferenceSample::hover(start, yaw));
        rows.push(sim.telemetry(&last, progress.next_gate()));
    }
    let success = failure.is_none() && progress.lap_complete;
    let result = RaceResult {
        case: case.id(),
        l1,
        seed,
        success,
        failure,
        lap_time: success.then(|| *progress.splits.last().expect("lap has splits")),
        rms_error: if samples > 0 {
            (sq_error / samples as f64).sqrt()
        } else {
            0.0
        },
        max_z_tilde,
        splits: progress.splits.clone(),
        duration: sim.tick_index() as f64 * dt,
    };
    Ok((result, rows))
}
