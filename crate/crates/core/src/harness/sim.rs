use nalgebra::{Vector2, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineController, BaselineOutput, ReferenceSample};
use crate::error::Result;
use crate::l1::{measured_z, L1Adaptive, L1Output};
use crate::math::Vec3;
use crate::mppi::ReferenceTrajectory;
use crate::plant::{step, ControlInput, NominalParams, TruePlantParams, VehicleState};

use super::config::{Config, SchedulerConfig};

/// Why a run stopped early.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Crash,
    CorridorDivergence,
    Timeout,
    NumericalFault,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Crash => "crash",
            Self::CorridorDivergence => "corridor-divergence",
            Self::Timeout => "timeout",
            Self::NumericalFault => "numerical-fault",
        }
    }
}

/// True when a controller running at `rate` fires on plant tick `k`: the
/// tick nearest to each of its nominal instants.
pub fn controller_due(k: u64, rate: f64, plant_hz: f64) -> bool {
    let ratio = plant_hz / rate;
    let j = (k as f64 / ratio).round();
    (j * ratio).round() as u64 == k
}

/// Reference sample at `t` seconds into a planned trajectory. Linear in
/// position, velocity, acceleration and rate; spherical in attitude. Times
/// past the horizon hold the last node.
pub fn reference_interpolate(traj: &ReferenceTrajectory, t: f64) -> ReferenceSample {
    let n = traj.steps();
    let x = (t / traj.dt).clamp(0.0, n as f64);
    let i = (x.floor() as usize).min(n.saturating_sub(1));
    let a = x - i as f64;
    let lerp = |p: &Vec3, q: &Vec3| p + (q - p) * a;
    let acc = |k: usize| traj.accelerations[k.min(n - 1)];
    ReferenceSample {
        position: lerp(&traj.positions[i], &traj.positions[i + 1]),
        velocity: lerp(&traj.velocities[i], &traj.velocities[i + 1]),
        acceleration: lerp(&acc(i), &acc(i + 1)),
        attitude: traj.attitudes[i].slerp(&traj.attitudes[i + 1], a),
        rate: lerp(&traj.rates[i], &traj.rates[i + 1]),
    }
}

/// One telemetry row: the state at `t` and the controls held over the
/// following plant step.
#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryRow {
    pub t: f64,
    pub state: VehicleState,
    pub reference: ReferenceSample,
    pub baseline: BaselineOutput,
    pub u_l1: Vector4<f64>,
    pub sigma_m: Vector4<f64>,
    pub sigma_um: Vector2<f64>,
    pub z_tilde: Vector6<f64>,
    pub next_gate: usize,
}

/// Plant, baseline and L1 advanced on the plant clock. The reference is
/// supplied by the caller at every tick.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    sched: SchedulerConfig,
    plant: TruePlantParams,
    state: VehicleState,
    baseline: BaselineController,
    l1: L1Adaptive,
    l1_enabled: bool,
    tick: u64,
    bl_out: BaselineOutput,
    l1_out: L1Output,
    applied_l1: Vector4<f64>,
    baseline_fired: bool,
}

impl ClosedLoop {
    pub fn new(
        cfg: &Config,
        nominal: &NominalParams,
        plant: TruePlantParams,
        initial: VehicleState,
        l1_enabled: bool,
    ) -> Result<Self> {
        cfg.scheduler.validate()?;
        let baseline =
            BaselineController::new(cfg.baseline, nominal.clone(), 1.0 / cfg.scheduler.baseline_hz, &initial)?;
        let l1 = L1Adaptive::new(
            cfg.l1.clone(),
            nominal.clone(),
            measured_z(&initial.velocity, &initial.body_rate),
        )?;
        Ok(Self {
            sched: cfg.scheduler.clone(),
            plant,
            state: initial,
            baseline,
            l1,
            l1_enabled,
            tick: 0,
            bl_out: BaselineOutput {
                thrust: 0.0,
                moment: Vec3::zeros(),
                desired_attitude: initial.attitude,
            },
            l1_out: L1Output {
                u_l1: Vector4::zeros(),
                sigma_m: Vector4::zeros(),
                sigma_um: Vector2::zeros(),
                z_tilde: Vector6::zeros(),
            },
            applied_l1: Vector4::zeros(),
            baseline_fired: false,
        })
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.sched.plant_dt()
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn baseline(&self) -> &BaselineController {
        &self.baseline
    }

    pub fn baseline_output(&self) -> &BaselineOutput {
        &self.bl_out
    }

    pub fn l1_output(&self) -> &L1Output {
        &self.l1_out
    }

    /// `[δ_T; δ_M]` of the augmentation as applied to the plant.
    pub fn applied_l1(&self) -> &Vector4<f64> {
        &self.applied_l1
    }

    /// Whether the baseline fired on the most recent tick.
    pub fn baseline_fired(&self) -> bool {
        self.baseline_fired
    }

    pub fn baseline_due(&self) -> bool {
        controller_due(self.tick, self.sched.baseline_hz, self.sched.plant_hz)
    }

    pub fn mppi_due(&self) -> bool {
        controller_due(self.tick, self.sched.mppi_hz, self.sched.plant_hz)
    }

    /// Plant input for the current held controls.
    pub fn control_input(&self) -> ControlInput {
        let u = &self.applied_l1;
        ControlInput {
            thrust: (self.bl_out.thrust + u[0]).max(0.0),
            moment: self.bl_out.moment + Vec3::new(u[1], u[2], u[3]),
        }
    }

    /// Fires due controllers on the current tick. Call before `advance`.
    pub fn update_controllers(&mut self, reference: &ReferenceSample) -> Result<()> {
        self.baseline_fired = false;
        if self.baseline_due() {
            self.bl_out = self.baseline.update(&self.state, reference);
            self.baseline_fired = true;
        }
        if controller_due(self.tick, self.sched.l1_hz, self.sched.plant_hz) {
            let z = measured_z(&self.state.velocity, &self.state.body_rate);
            self.l1_out = self
                .l1
                .tick(&self.state.attitude, &z, self.bl_out.thrust, &self.bl_out.moment)?;
            self.applied_l1 = if self.l1_enabled {
                self.l1_out.u_l1
            } else {
                Vector4::zeros()
            };
        }
        Ok(())
    }

    /// Integrates the plant one tick under the held controls.
    pub fn advance(&mut self) -> Result<()> {
        self.state = step(&self.state, &self.control_input(), &self.plant, self.sched.plant_dt())?;
        self.tick += 1;
        Ok(())
    }

    pub fn telemetry(&self, reference: &ReferenceSample, next_gate: usize) -> TelemetryRow {
        TelemetryRow {
            t: self.time(),
            state: self.state,
            reference: *reference,
            baseline: self.bl_out,
            u_l1: self.applied_l1,
            sigma_m: self.l1_out.sigma_m,
            sigma_um: self.l1_out.sigma_um,
            z_tilde: self.l1_out.z_tilde,
            next_gate,
        }
    }
}

/// Outcome of a hold run against a fixed reference.
#[derive(Clone, Debug)]
pub struct HoldRun {
    pub rows: Vec<TelemetryRow>,
    pub failure: Option<FailureReason>,
}

/// Flies baseline (and optionally L1) against a fixed reference for
/// `duration` seconds, logging every plant tick.
pub fn run_hold(
    cfg: &Config,
    plant: TruePlantParams,
    initial: VehicleState,
    reference: ReferenceSample,
    l1_enabled: bool,
    duration: f64,
) -> Result<HoldRun> {
    let nominal = cfg.nominal.params()?;
    let mut sim = ClosedLoop::new(cfg, &nominal, plant, initial, l1_enabled)?;
    let steps = (duration * cfg.scheduler.plant_hz).round() as u64;
    let mut rows = Vec::with_capacity(steps as usize + 1);
    let mut failure = None;
    for _ in 0..steps {
        if sim.update_controllers(&reference).is_err() {
            failure = Some(FailureReason::NumericalFault);
            break;
        }
        rows.push(sim.telemetry(&reference, 0));
        if sim.advance().is_err() {
            failure = Some(FailureReason::NumericalFault);
            break;
        }
    }
    rows.push(sim.telemetry(&reference, 0));
    Ok(HoldRun { rows, failure })
}
