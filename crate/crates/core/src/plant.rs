//! Rigid-body multirotor plant with injectable parametric and exogenous
//! uncertainty, and the nominal-parameter model it is compared against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{e3, integrate_quat, Mat3, Quat, Vec3, GRAVITY};

/// Position and velocity are inertial (north-west-up), rate is body-frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Quat,
    pub body_rate: Vec3,
}

impl VehicleState {
    /// At rest at `position`, level, nose along `yaw`.
    pub fn hover_at(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            attitude: Quat::from_yaw(yaw),
            body_rate: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.velocity.iter().all(|c| c.is_finite())
            && self.body_rate.iter().all(|c| c.is_finite())
            && self.attitude.is_finite()
    }
}

/// Collective thrust command `δ_T` and moment command `δ_M`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust: f64,
    pub moment: Vec3,
}

/// Model parameters available to the controllers.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalParams {
    pub mass: f64,
    pub inertia: Mat3,
    pub thrust_power: f64,
    pub moment_power: Mat3,
    inertia_inv: Mat3,
    moment_power_inv: Mat3,
}

impl NominalParams {
    pub fn new(mass: f64, inertia: Mat3, thrust_power: f64, moment_power: Mat3) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")));
        }
        if !(thrust_power > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "thrust control power must be positive, got {thrust_power}"
            )));
        }
        check_spd(&inertia, "inertia")?;
        let moment_power_inv = moment_power
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("moment control power must be invertible".into()))?;
        Ok(Self {
            mass,
            inertia,
            thrust_power,
            moment_power,
            inertia_inv: inertia.try_inverse().expect("checked positive definite"),
            moment_power_inv,
        })
    }

    /// 1 kg, diag(4.9, 4.9, 4.9)·10⁻³ kg·m², unit control powers.
    pub fn default_vehicle() -> Self {
        Self::new(1.0, Mat3::from_diagonal_element(4.9e-3), 1.0, Mat3::identity()).expect("valid defaults")
    }

    pub fn inertia_inv(&self) -> &Mat3 {
        &self.inertia_inv
    }

    pub fn moment_power_inv(&self) -> &Mat3 {
        &self.moment_power_inv
    }

    /// Thrust command that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * GRAVITY / self.thrust_power
    }
}

fn check_spd(m: &Mat3, what: &str) -> Result<()> {
    if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return Err(Error::InvalidParameter(format!("{what} must be symmetric")));
    }
    if m.cholesky().is_none() {
        return Err(Error::InvalidParameter(format!("{what} must be positive definite")));
    }
    Ok(())
}

/// Parameters of the simulated vehicle. The exogenous force is expressed in
/// the body frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TruePlantParams {
    pub mass: f64,
    pub inertia: Mat3,
    pub thrust_power: f64,
    pub moment_power: Mat3,
    pub force_disturbance: Vec3,
    pub moment_disturbance: Vec3,
    /// Linear drag coefficient, N·s/m. Zero disables drag.
    pub linear_drag: f64,
    inertia_inv: Mat3,
}

impl TruePlantParams {
    pub fn new(
        mass: f64,
        inertia: Mat3,
        thrust_power: f64,
        moment_power: Mat3,
        force_disturbance: Vec3,
        moment_disturbance: Vec3,
    ) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")));
        }
        check_spd(&inertia, "inertia")?;
        if moment_power.try_inverse().is_none() {
            return Err(Error::InvalidParameter(
                "moment control power must be invertible".into(),
            ));
        }
        Ok(Self {
            mass,
            inertia,
            thrust_power,
            moment_power,
            force_disturbance,
            moment_disturbance,
            linear_drag: 0.0,
            inertia_inv: inertia.try_inverse().expect("checked positive definite"),
        })
    }

    /// True plant identical to the nominal model, undisturbed.
    pub fn from_nominal(nom: &NominalParams) -> Self {
        Self::new(
            nom.mass,
            nom.inertia,
            nom.thrust_power,
            nom.moment_power,
            Vec3::zeros(),
            Vec3::zeros(),
        )
        .expect("nominal parameters already validated")
    }

    pub fn with_linear_drag(mut self, coefficient: f64) -> Self {
        self.linear_drag = coefficient;
        self
    }

    pub fn inertia_inv(&self) -> &Mat3 {
        &self.inertia_inv
    }
}

/// The five off-nominal experiment cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UncertaintyCase {
    /// Known model.
    Nominal,
    /// Mass +50 %.
    MassIncrease,
    /// Inertia +100 % on every axis.
    InertiaIncrease,
    /// Constant 0.1 N·m nose-up pitching moment, `−0.1` about body `y`.
    PitchMoment,
    /// Thrust and moment control power −40 %.
    ControlPowerLoss,
}

impl UncertaintyCase {
    pub const ALL: [UncertaintyCase; 5] = [
        UncertaintyCase::Nominal,
        UncertaintyCase::MassIncrease,
        UncertaintyCase::InertiaIncrease,
        UncertaintyCase::PitchMoment,
        UncertaintyCase::ControlPowerLoss,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1..=5 => Ok(Self::ALL[id as usize - 1]),
            _ => Err(Error::UnknownCase(id)),
        }
    }

    pub fn id(self) -> u8 {
        self as u8 + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Nominal => "nominal",
            Self::MassIncrease => "mass +50%",
            Self::InertiaIncrease => "inertia +100%",
            Self::PitchMoment => "pitch moment 0.1 N·m",
            Self::ControlPowerLoss => "control power -40%",
        }
    }
}

/// Builds the simulated plant for an experiment case around `nom`.
pub fn case_params(case: UncertaintyCase, nom: &NominalParams) -> TruePlantParams {
    let mut p = TruePlantParams::from_nominal(nom);
    match case {
        UncertaintyCase::Nominal => {}
        UncertaintyCase::MassIncrease => p.mass = 1.5 * nom.mass,
        UncertaintyCase::InertiaIncrease => {
            p.inertia = 2.0 * nom.inertia;
            p.inertia_inv = p.inertia.try_inverse().expect("scaled SPD");
        }
        // nose-up is negative body y under front-left-up axes
        UncertaintyCase::PitchMoment => p.moment_disturbance = Vec3::new(0.0, -0.1, 0.0),
        UncertaintyCase::ControlPowerLoss => {
            p.thrust_power = 0.6 * nom.thrust_power;
            p.moment_power = 0.6 * nom.moment_power;
        }
    }
    p
}

/// Time derivative of a [`VehicleState`]. The quaternion rate is kept as a
/// raw 4-vector (it is not a unit quaternion).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: [f64; 4],
    pub body_rate: Vec3,
}

fn quat_rate(q: &Quat, rate: &Vec3) -> [f64; 4] {
    let d = *q
        * Quat {
            w: 0.0,
            x: rate.x,
            y: rate.y,
            z: rate.z,
        };
    [0.5 * d.w, 0.5 * d.x, 0.5 * d.y, 0.5 * d.z]
}

fn translational_accel(s: &VehicleState, u: &ControlInput, p: &TruePlantParams) -> Vec3 {
    let thrust = s.attitude.body_z() * (p.thrust_power * u.thrust);
    let disturbance = s.attitude.rotate(&p.force_disturbance);
    let drag = -p.linear_drag * s.velocity;
    (thrust + disturbance + drag) / p.mass - GRAVITY * e3()
}

fn angular_accel(rate: &Vec3, u: &ControlInput, p: &TruePlantParams) -> Vec3 {
    let gyro = rate.cross(&(p.inertia * rate));
    p.inertia_inv * (p.moment_power * u.moment - gyro + p.moment_disturbance)
}

/// Full true-plant dynamics, including the gyroscopic term.
pub fn true_derivative(s: &VehicleState, u: &ControlInput, p: &TruePlantParams) -> StateDerivative {
    StateDerivative {
        position: s.velocity,
        velocity: translational_accel(s, u, p),
        attitude: quat_rate(&s.attitude, &s.body_rate),
        body_rate: angular_accel(&s.body_rate, u, p),
    }
}

/// Lumped force (`ζ`, body frame, thrust units) and moment (`ξ`, moment
/// command units) uncertainty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LumpedUncertainty {
    pub force: Vec3,
    pub moment: Vec3,
}

/// Expresses every mismatch between `tru` and `nom` in the nominal input
/// channels, so that [`nominal_accelerations`] with the result reproduces
/// [`true_derivative`] exactly.
///
/// The nominal rotational model carries no gyroscopic term, so the
/// `ω × J̄ω` residual enters `ξ` with a negative sign.
pub fn lumped_uncertainty(
    s: &VehicleState,
    u: &ControlInput,
    nom: &NominalParams,
    tru: &TruePlantParams,
) -> LumpedUncertainty {
    let r_ib = |v: &Vec3| s.attitude.inverse_rotate(v);
    let b3_body = Vec3::z();

    let mass_ratio = nom.mass / (tru.mass * nom.thrust_power);
    let mut force = mass_ratio * tru.force_disturbance
        + (nom.mass * tru.thrust_power / (tru.mass * nom.thrust_power) - 1.0) * b3_body * u.thrust;
    if tru.linear_drag != 0.0 {
        force -= mass_ratio * tru.linear_drag * r_ib(&s.velocity);
    }

    let scale = nom.moment_power_inv() * nom.inertia * tru.inertia_inv();
    let gyro = s.body_rate.cross(&(tru.inertia * s.body_rate));
    let moment =
        scale * tru.moment_disturbance + (scale * tru.moment_power - Mat3::identity()) * u.moment - scale * gyro;

    LumpedUncertainty { force, moment }
}

/// Translational and angular acceleration of the nominal model driven by
/// lumped uncertainty.
pub fn nominal_accelerations(
    s: &VehicleState,
    u: &ControlInput,
    nom: &NominalParams,
    lumped: &LumpedUncertainty,
) -> (Vec3, Vec3) {
    let k = nom.thrust_power / nom.mass;
    let vdot = k * u.thrust * s.attitude.body_z() - GRAVITY * e3() + k * s.attitude.rotate(&lumped.force);
    let jm = nom.inertia_inv() * nom.moment_power;
    let wdot = jm * u.moment + jm * lumped.moment;
    (vdot, wdot)
}

/// One RK4 step of the true plant with zero-order-held input. Each stage
/// propagates the attitude with the exact exponential of its stage rate.
pub fn step(s: &VehicleState, u: &ControlInput, p: &TruePlantParams, dt: f64) -> Result<VehicleState> {
    let stage = |base: &VehicleState, k: &StateDerivative, h: f64| VehicleState {
        position: base.position + h * k.position,
        velocity: base.velocity + h * k.velocity,
        attitude: integrate_quat(&base.attitude, &base.body_rate, h),
        body_rate: base.body_rate + h * k.body_rate,
    };

    let k1 = true_derivative(s, u, p);
    let s2 = stage(s, &k1, 0.5 * dt);
    let k2 = true_derivative(&s2, u, p);
    let s3 = VehicleState {
        attitude: integrate_quat(&s.attitude, &s2.body_rate, 0.5 * dt),
        ..stage(s, &k2, 0.5 * dt)
    };
    let k3 = true_derivative(&s3, u, p);
    let s4 = VehicleState {
        attitude: integrate_quat(&s.attitude, &s3.body_rate, dt),
        ..stage(s, &k3, dt)
    };
    let k4 = true_derivative(&s4, u, p);

    let avg = |a: Vec3, b: Vec3, c: Vec3, d: Vec3| (a + 2.0 * b + 2.0 * c + d) / 6.0;
    let mean_rate = avg(s.body_rate, s2.body_rate, s3.body_rate, s4.body_rate);
    let next = VehicleState {
        position: s.position + dt * avg(k1.position, k2.position, k3.position, k4.position),
        velocity: s.velocity + dt * avg(k1.velocity, k2.velocity, k3.velocity, k4.velocity),
        attitude: integrate_quat(&s.attitude, &mean_rate, dt),
        body_rate: s.body_rate + dt * avg(k1.body_rate, k2.body_rate, k3.body_rate, k4.body_rate),
    };
    if !next.is_finite() {
        return Err(Error::SimulationFault("non-finite state after plant step".into()));
    }
    Ok(next)
}
