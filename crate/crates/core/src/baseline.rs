//! Geometric trajectory tracking with a prefiltered quaternion PD attitude
//! loop. Produces the baseline thrust and moment commands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{e3, integrate_quat, quat_error, quat_to_rotmat, saturate, Mat3, Quat, Vec3, GRAVITY};
use crate::plant::{ControlInput, NominalParams, VehicleState};

/// Diagonal gains and limits of the baseline controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineGains {
    /// Diagonal of `K_P`.
    pub kp: Vec3,
    /// Diagonal of `K_D`.
    pub kd: Vec3,
    /// Diagonal of `K_q`.
    pub kq: Vec3,
    /// Diagonal of `K_ω`.
    pub kw: Vec3,
    pub a_max: f64,
    /// rad/s
    pub w_max: f64,
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self {
            kp: Vec3::repeat(6.0),
            kd: Vec3::repeat(4.0),
            kq: Vec3::repeat(1.0),
            kw: Vec3::repeat(0.15),
            a_max: 15.0,
            w_max: 2.0,
        }
    }
}

impl BaselineGains {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("kp", self.kp), ("kd", self.kd), ("kq", self.kq), ("kw", self.kw)] {
            if !d.iter().all(|&g| g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "baseline {name}: entries must be positive"
                )));
            }
        }
        if !(self.a_max > 0.0) || !(self.w_max > 0.0) {
            return Err(Error::InvalidParameter(
                "baseline a_max and w_max must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Filtered attitude command `(q_c, ω_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttitudeCommandState {
    pub attitude: Quat,
    pub rate: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineOutput {
    pub thrust: f64,
    pub moment: Vec3,
    pub desired_attitude: Quat,
}

impl BaselineOutput {
    pub fn control(&self) -> ControlInput {
        ControlInput {
            thrust: self.thrust,
            moment: self.moment,
        }
    }
}

/// Reference state at one instant, time-aligned with the vehicle state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceSample {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub attitude: Quat,
    /// Body rate in the reference frame.
    pub rate: Vec3,
}

impl ReferenceSample {
    pub fn hover(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            attitude: Quat::from_yaw(yaw),
            rate: Vec3::zeros(),
        }
    }
}

/// `f_d = sat_{a_max}[v̇_r + K_P e_x + K_D e_v] + g e3`, clamped per axis.
pub fn desired_specific_force(position: &Vec3, velocity: &Vec3, r: &ReferenceSample, gains: &BaselineGains) -> Vec3 {
    let accel = r.acceleration
        + gains.kp.component_mul(&(r.position - position))
        + gains.kd.component_mul(&(r.velocity - velocity));
    saturate(&accel, gains.a_max) + GRAVITY * e3()
}

/// Collective command `(m/T_δT)‖f_d‖`.
pub fn baseline_throttle(f_d: &Vec3, nom: &NominalParams) -> f64 {
    nom.mass / nom.thrust_power * f_d.norm()
}

/// Threshold below which `f_d` or `d3 × l1` is treated as degenerate.
pub const DEGENERATE_FORCE: f64 = 1e-3;

/// Last desired attitude, kept for sign continuity and degenerate inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesiredAttitudeMemory {
    pub attitude: Quat,
    pub thrust_axis: Vec3,
}

impl DesiredAttitudeMemory {
    pub fn new(attitude: Quat) -> Self {
        Self {
            attitude,
            thrust_axis: attitude.body_z(),
        }
    }
}

/// Desired attitude with `d3 ∥ f_d` and `d1` as close as possible to the
/// heading `ψ_r`. Updates `memory`.
pub fn desired_attitude(f_d: &Vec3, psi_r: f64, memory: &mut DesiredAttitudeMemory) -> Quat {
    let n = f_d.norm();
    let d3 = if n > DEGENERATE_FORCE && n.is_finite() {
        f_d / n
    } else {
        memory.thrust_axis
    };
    let heading = |psi: f64| Vec3::new(psi.cos(), psi.sin(), 0.0);
    let mut cross = d3.cross(&heading(psi_r));
    if cross.norm() <= DEGENERATE_FORCE {
        cross = d3.cross(&heading(psi_r + 1e-3));
    }
    let d2 = cross.normalize();
    let d1 = d2.cross(&d3);
    let r = Mat3::from_columns(&[d1, d2, d3]);
    let mut q = Quat::from_rotmat(&r);
    if q.dot(&memory.attitude) < 0.0 {
        q = -q;
    }
    memory.attitude = q;
    memory.thrust_axis = d3;
    q
}

/// Reference body rate expressed in the vehicle body frame,
/// `R_I^B R_R^I ω_r`.
pub fn reference_rate_in_body(vehicle: &Quat, reference: &Quat, rate: &Vec3) -> Vec3 {
    vehicle.inverse_rotate(&reference.rotate(rate))
}

/// Inner bracket shared by the prefilter and the PD law:
/// `K_ω[sat_{ω_max}(K_ω⁻¹ K_q Q̃) + Δω]`.
fn rate_law(attitude_error: &Vec3, rate_error: &Vec3, gains: &BaselineGains) -> Vec3 {
    let demand = gains.kq.component_div(&gains.kw).component_mul(attitude_error);
    gains.kw.component_mul(&(saturate(&demand, gains.w_max) + rate_error))
}

/// One Euler step of the command prefilter. `rate_ff` is the reference rate
/// in the vehicle body frame and `accel_map` is `J⁻¹ M_δM`.
pub fn prefilter_step(
    cmd: &AttitudeCommandState,
    q_d: &Quat,
    rate_ff: &Vec3,
    gains: &BaselineGains,
    accel_map: &Mat3,
    dt: f64,
) -> AttitudeCommandState {
    let err = quat_error(q_d, &cmd.attitude);
    let wdot = accel_map * rate_law(&err, &(rate_ff - cmd.rate), gains);
    AttitudeCommandState {
        attitude: integrate_quat(&cmd.attitude, &cmd.rate, dt),
        rate: cmd.rate + wdot * dt,
    }
}

/// Quaternion PD moment command.
pub fn attitude_pd(q: &Quat, rate: &Vec3, cmd: &AttitudeCommandState, gains: &BaselineGains) -> Vec3 {
    rate_law(&quat_error(&cmd.attitude, q), &(cmd.rate - rate), gains)
}

/// Stateful baseline controller; one instance per simulation.
#[derive(Clone, Debug)]
pub struct BaselineController {
    gains: BaselineGains,
    nominal: NominalParams,
    accel_map: Mat3,
    command: AttitudeCommandState,
    desired: DesiredAttitudeMemory,
    dt: f64,
}

impl BaselineController {
    /// Starts the prefilter at the vehicle's current attitude and rate.
    pub fn new(gains: BaselineGains, nominal: NominalParams, dt: f64, initial: &VehicleState) -> Result<Self> {
        gains.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "baseline dt must be positive, got {dt}"
            )));
        }
        let accel_map = nominal.inertia_inv() * nominal.moment_power;
        Ok(Self {
            gains,
            nominal,
            accel_map,
            command: AttitudeCommandState {
                attitude: initial.attitude,
                rate: initial.body_rate,
            },
            desired: DesiredAttitudeMemory::new(initial.attitude),
            dt,
        })
    }

    pub fn command(&self) -> &AttitudeCommandState {
        &self.command
    }

    pub fn gains(&self) -> &BaselineGains {
        &self.gains
    }

    /// One controller tick: computes the command from the current prefilter
    /// state, then advances the prefilter.
    pub fn update(&mut self, s: &VehicleState, r: &ReferenceSample) -> BaselineOutput {
        let f_d = desired_specific_force(&s.position, &s.velocity, r, &self.gains);
        let thrust = baseline_throttle(&f_d, &self.nominal);
        let q_d = desired_attitude(&f_d, r.attitude.yaw(), &mut self.desired);
        let moment = attitude_pd(&s.attitude, &s.body_rate, &self.command, &self.gains);
        let rate_ff = reference_rate_in_body(&s.attitude, &r.attitude, &r.rate);
        self.command = prefilter_step(&self.command, &q_d, &rate_ff, &self.gains, &self.accel_map, self.dt);
        BaselineOutput {
            thrust,
            moment,
            desired_attitude: q_d,
        }
    }
}

/// Rotation matrix `[d1 d2 d3]` of a desired attitude, for inspection.
pub fn desired_frame(q_d: &Quat) -> Mat3 {
    quat_to_rotmat(q_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{step, TruePlantParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn gains() -> BaselineGains {
        BaselineGains::default()
    }

    #[test]
    fn specific_force_examples() {
        let g = gains();
        let r = ReferenceSample::hover(Vec3::zeros(), 0.0);
        let f = desired_specific_force(&Vec3::zeros(), &Vec3::zeros(), &r, &g);
        assert_eq!(f, Vec3::new(0.0, 0.0, GRAVITY));
        let r = ReferenceSample::hover(Vec3::new(1.0, 0.0, 0.0), 0.0);
        let f = desired_specific_force(&Vec3::zeros(), &Vec3::zeros(), &r, &g);
        assert_eq!(f, Vec3::new(6.0, 0.0, GRAVITY));
        let r = ReferenceSample::hover(Vec3::new(15.0, 0.0, 0.0), 0.0);
        let f = desired_specific_force(&Vec3::zeros(), &Vec3::zeros(), &r, &g);
        assert_eq!(f, Vec3::new(15.0, 0.0, GRAVITY));
    }

    #[test]
    fn throttle_examples() {
        let nom = NominalParams::default_vehicle();
        assert_relative_eq!(baseline_throttle(&Vec3::new(0.0, 0.0, 9.81), &nom), 9.81);
        assert_eq!(baseline_throttle(&Vec3::zeros(), &nom), 0.0);
        let f = Vec3::new(1.0, -2.0, 3.0);
        assert_relative_eq!(baseline_throttle(&(2.0 * f), &nom), 2.0 * baseline_throttle(&f, &nom));
    }

    #[test]
    fn desired_attitude_examples() {
        let f = Vec3::new(0.0, 0.0, GRAVITY);
        let mut mem = DesiredAttitudeMemory::new(Quat::IDENTITY);
        let q = desired_attitude(&f, 0.0, &mut mem);
        assert_relative_eq!(q.w, 1.0, epsilon = 1e-15);
        assert!(q.vector().norm() < 1e-15);

        let q = desired_attitude(&f, FRAC_PI_2, &mut mem);
        // hand-built columns: d1 = west, d2 = south... d2 = d3 × l1 = e3 × e2 = −e1
        let d1 = Vec3::new(0.0, 1.0, 0.0);
        let d2 = Vec3::new(-1.0, 0.0, 0.0);
        let r = desired_frame(&q);
        assert_relative_eq!(r.column(0).into_owned(), d1, epsilon = 1e-12);
        assert_relative_eq!(r.column(1).into_owned(), d2, epsilon = 1e-12);
        let yaw90 = Quat::from_yaw(FRAC_PI_2);
        assert_relative_eq!(q.dot(&yaw90).abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn desired_attitude_degenerate_inputs() {
        let mut mem = DesiredAttitudeMemory::new(Quat::from_axis_angle(&Vec3::x(), 0.2));
        let axis = mem.thrust_axis;
        let q = desired_attitude(&Vec3::zeros(), 0.0, &mut mem);
        assert_relative_eq!(q.body_z(), axis, epsilon = 1e-12);
        // thrust axis along the heading direction
        let mut mem = DesiredAttitudeMemory::new(Quat::IDENTITY);
        let q = desired_attitude(&Vec3::new(5.0, 0.0, 0.0), 0.0, &mut mem);
        assert!(q.is_finite());
        assert_relative_eq!(q.body_z(), Vec3::x(), epsilon = 1e-12);
    }

    #[test]
    fn desired_attitude_sign_continuity() {
        let mut mem = DesiredAttitudeMemory::new(Quat::IDENTITY);
        let f = Vec3::new(0.0, 0.0, GRAVITY);
        let mut prev = desired_attitude(&f, 0.0, &mut mem);
        for k in 1..=100 {
            let psi = 0.07 * k as f64;
            let q = desired_attitude(&f, crate::math::wrap_angle(psi), &mut mem);
            assert!(q.dot(&prev) > 0.0);
            prev = q;
        }
    }

    #[test]
    fn prefilter_converged_is_stationary() {
        let g = gains();
        let q = Quat::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.4);
        let w = Vec3::new(0.1, -0.2, 0.3);
        let cmd = AttitudeCommandState { attitude: q, rate: w };
        let map = Mat3::from_diagonal_element(1.0 / 4.9e-3);
        let next = prefilter_step(&cmd, &q, &w, &g, &map, 0.002);
        assert_relative_eq!(next.rate, w, epsilon = 1e-15);
    }

    #[test]
    fn prefilter_error_decreases_after_step() {
        let g = gains();
        let map = Mat3::from_diagonal_element(1.0 / 4.9e-3);
        let q_d = Quat::from_axis_angle(&Vec3::new(0.3, 1.0, 0.0), 0.8);
        let mut cmd = AttitudeCommandState {
            attitude: Quat::IDENTITY,
            rate: Vec3::zeros(),
        };
        let mut last = quat_error(&q_d, &cmd.attitude).norm();
        for _ in 0..2500 {
            cmd = prefilter_step(&cmd, &q_d, &Vec3::zeros(), &g, &map, 0.002);
            let e = quat_error(&q_d, &cmd.attitude).norm();
            assert!(e <= last + 1e-12, "{e} > {last}");
            last = e;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn prefilter_rate_demand_saturates() {
        let g = gains();
        let map = Mat3::identity();
        let cmd = AttitudeCommandState {
            attitude: Quat::IDENTITY,
            rate: Vec3::zeros(),
        };
        // K_ω⁻¹K_q Q̃ ≈ 6.67·0.48 > ω_max on x
        let q_d = Quat::from_axis_angle(&Vec3::x(), 1.0);
        let next = prefilter_step(&cmd, &q_d, &Vec3::zeros(), &g, &map, 1.0);
        assert_relative_eq!(next.rate, Vec3::new(0.15 * 2.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn attitude_pd_examples() {
        let g = gains();
        let q = Quat::from_axis_angle(&Vec3::new(0.0, 1.0, 1.0), 0.3);
        let cmd = AttitudeCommandState {
            attitude: q,
            rate: Vec3::new(0.2, 0.0, 0.0),
        };
        assert_eq!(attitude_pd(&q, &cmd.rate, &cmd, &g), Vec3::zeros());
        let m = attitude_pd(&q, &(cmd.rate + Vec3::x()), &cmd, &g);
        assert_relative_eq!(m, Vec3::new(-0.15, 0.0, 0.0), epsilon = 1e-15);
        let theta = 0.02;
        let cmd = AttitudeCommandState {
            attitude: Quat::from_axis_angle(&Vec3::y(), theta),
            rate: Vec3::zeros(),
        };
        let m = attitude_pd(&Quat::IDENTITY, &Vec3::zeros(), &cmd, &g);
        assert_relative_eq!(m, Vec3::new(0.0, theta / 2.0, 0.0), epsilon = 1e-6);
    }

    /// Flies the nominal plant from a 1 m offset to a hover reference and
    /// returns (overshoot, time of the last exit from the `band` ball).
    fn hover_step_response(gains: BaselineGains, band: f64) -> (f64, f64) {
        let nom = NominalParams::default_vehicle();
        let plant = TruePlantParams::from_nominal(&nom);
        let target = Vec3::new(0.0, 0.0, 2.0);
        let mut s = VehicleState::hover_at(target + Vec3::new(1.0, 0.0, 0.0), 0.0);
        let mut ctl = BaselineController::new(gains, nom, 0.002, &s).unwrap();
        let r = ReferenceSample::hover(target, 0.0);
        let mut u = ControlInput::default();
        let mut overshoot: f64 = 0.0;
        let mut settled_at = 0.0;
        for k in 0..(2000 * 10) {
            if k % 4 == 0 {
                u = ctl.update(&s, &r).control();
            }
            s = step(&s, &u, &plant, 0.0005).unwrap();
            let e = s.position - target;
            overshoot = overshoot.max(-e.x);
            if e.norm() > band {
                settled_at = (k + 1) as f64 * 0.0005;
            }
        }
        (overshoot, settled_at)
    }

    #[test]
    fn closed_loop_hover_from_offset() {
        let (overshoot, settled) = hover_step_response(gains(), 0.05);
        assert!(overshoot <= 0.2, "overshoot {overshoot}");
        // default gains with the vector-part error settle in about 4.3 s
        assert!(settled < 5.0, "settling {settled}");
    }

    #[test]
    fn closed_loop_hover_rotation_vector_gain() {
        // K_q = 2 reproduces the rotation-vector error for small angles
        let g = BaselineGains {
            kq: Vec3::repeat(2.0),
            ..gains()
        };
        let (overshoot, settled) = hover_step_response(g, 0.02);
        assert!(overshoot <= 0.2, "overshoot {overshoot}");
        assert!(settled < 3.0, "settling {settled}");
    }

    proptest! {
        #[test]
        fn desired_attitude_is_proper(fx in -20.0..20.0f64, fy in -20.0..20.0f64, fz in -20.0..20.0f64, psi in -3.1..3.1f64) {
            let f = Vec3::new(fx, fy, fz);
            prop_assume!(f.norm() > 1e-2);
            let mut mem = DesiredAttitudeMemory::new(Quat::IDENTITY);
            let q = desired_attitude(&f, psi, &mut mem);
            let r = desired_frame(&q);
            prop_assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((r.column(2).into_owned() - f.normalize()).norm() < 1e-12);
        }

        #[test]
        fn attitude_pd_opposes_rate_error(wx in -5.0..5.0f64, wy in -5.0..5.0f64, wz in -5.0..5.0f64) {
            let g = gains();
            let cmd = AttitudeCommandState { attitude: Quat::IDENTITY, rate: Vec3::zeros() };
            let w = Vec3::new(wx, wy, wz);
            let m = attitude_pd(&Quat::IDENTITY, &w, &cmd, &g);
            for i in 0..3 {
                prop_assert!(m[i] * w[i] <= 0.0);
            }
        }
    }
}
