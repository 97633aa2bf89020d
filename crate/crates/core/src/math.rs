//! Quaternion and rotation algebra shared by the plant, the planner and the
//! controllers.
//!
//! Quaternions are Hamilton, scalar-first, and describe the body-to-inertial
//! rotation. With that convention `q̇ = Ω(ω) q` is the same as
//! `q̇ = ½ q ⊗ (0, ω)` for body-frame rates `ω`.

use std::f64::consts::PI;
use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;

/// Unit vector `e_3` (inertial up).
pub fn e3() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

/// Scalar-first unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from raw components and normalizes it.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }.normalized()
    }

    /// Rotation of `angle` radians about `axis`. A zero axis gives identity.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Quat {
            w: c,
            x: s * a.x,
            y: s * a.y,
            z: s * a.z,
        }
    }

    /// Pure heading rotation about inertial up.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle(&e3(), yaw)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        let k = 1.0 / n;
        Quat {
            w: self.w * k,
            x: self.x * k,
            y: self.y * k,
            z: self.z * k,
        }
    }

    pub fn conjugate(&self) -> Self {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotates a body-frame vector into the inertial frame.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Rotates an inertial-frame vector into the body frame.
    pub fn inverse_rotate(&self, v: &Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    /// Third column of the rotation matrix, `b_3`.
    #[inline]
    pub fn body_z(&self) -> Vec3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Vec3::new(
            2.0 * (x * z + w * y),
            2.0 * (y * z - w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Heading of the planar projection of `b_1`, in (−π, π].
    pub fn yaw(&self) -> f64 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let bx = 1.0 - 2.0 * (y * y + z * z);
        let by = 2.0 * (x * y + w * z);
        wrap_angle(by.atan2(bx))
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_rotmat(r: &Mat3) -> Self {
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let q = if trace > 0.0 {
            let s = 2.0 * (trace + 1.0).sqrt();
            Quat {
                w: 0.25 * s,
                x: (r[(2, 1)] - r[(1, 2)]) / s,
                y: (r[(0, 2)] - r[(2, 0)]) / s,
                z: (r[(1, 0)] - r[(0, 1)]) / s,
            }
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            Quat {
                w: (r[(2, 1)] - r[(1, 2)]) / s,
                x: 0.25 * s,
                y: (r[(0, 1)] + r[(1, 0)]) / s,
                z: (r[(0, 2)] + r[(2, 0)]) / s,
            }
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
            Quat {
                w: (r[(0, 2)] - r[(2, 0)]) / s,
                x: (r[(0, 1)] + r[(1, 0)]) / s,
                y: 0.25 * s,
                z: (r[(1, 2)] + r[(2, 1)]) / s,
            }
        } else {
            let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
            Quat {
                w: (r[(1, 0)] - r[(0, 1)]) / s,
                x: (r[(0, 2)] + r[(2, 0)]) / s,
                y: (r[(1, 2)] + r[(2, 1)]) / s,
                z: 0.25 * s,
            }
        };
        q.normalized()
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let mut end = *other;
        let mut cos = self.dot(other);
        if cos < 0.0 {
            end = -end;
            cos = -cos;
        }
        if cos > 1.0 - 1e-12 {
            return Quat {
                w: self.w + t * (end.w - self.w),
                x: self.x + t * (end.x - self.x),
                y: self.y + t * (end.y - self.y),
                z: self.z + t * (end.z - self.z),
            }
            .normalized();
        }
        let theta = cos.min(1.0).acos();
        let sin = theta.sin();
        let a = ((1.0 - t) * theta).sin() / sin;
        let b = (t * theta).sin() / sin;
        Quat {
            w: a * self.w + b * end.w,
            x: a * self.x + b * end.x,
            y: a * self.y + b * end.y,
            z: a * self.z + b * end.z,
        }
        .normalized()
    }
}

impl Mul for Quat {
    type Output = Quat;

    /// Hamilton product.
    #[inline]
    fn mul(self, r: Quat) -> Quat {
        Quat {
            w: self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            x: self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            y: self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            z: self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        }
    }
}

impl Neg for Quat {
    type Output = Quat;

    fn neg(self) -> Quat {
        Quat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// Attitude kinematics matrix `Ω(ω)` acting on `[w x y z]ᵀ`.
pub fn omega_matrix(rate: &Vec3) -> Matrix4<f64> {
    let (p, q, r) = (0.5 * rate.x, 0.5 * rate.y, 0.5 * rate.z);
    Matrix4::new(
        0.0, -p, -q, -r, //
        p, 0.0, r, -q, //
        q, -r, 0.0, p, //
        r, q, -p, 0.0,
    )
}

/// `R_B^I = [b_1 b_2 b_3]`. Non-unit input is normalized first.
pub fn quat_to_rotmat(q: &Quat) -> Mat3 {
    let q = q.normalized();
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Attitude error `Q̃(q_d, q)`: vector part of the body-frame error
/// rotation `q⁻¹ ⊗ q_d`, taken along the shorter arc.
pub fn quat_error(desired: &Quat, current: &Quat) -> Vec3 {
    let err = current.conjugate() * *desired;
    if err.w < 0.0 {
        -err.vector()
    } else {
        err.vector()
    }
}

/// One step of `q̇ = Ω(ω) q` for rate held constant over `dt`, using the
/// exact exponential `q ⊗ exp(½ ω dt)`, then renormalized.
#[inline]
pub fn integrate_quat(q: &Quat, rate: &Vec3, dt: f64) -> Quat {
    let half = 0.5 * dt;
    let h2 = rate.norm_squared() * half * half;
    if h2 == 0.0 {
        return *q;
    }
    // cos(h) and sin(h)/h; the series is exact to round-off below h² = 1e-3.
    let (c, s_over_h) = if h2 < 1e-3 {
        (
            1.0 - h2 / 2.0 + h2 * h2 / 24.0 - h2 * h2 * h2 / 720.0,
            1.0 - h2 / 6.0 + h2 * h2 / 120.0 - h2 * h2 * h2 / 5040.0,
        )
    } else {
        let h = h2.sqrt();
        let (s, c) = h.sin_cos();
        (c, s / h)
    };
    let k = s_over_h * half;
    let dq = Quat {
        w: c,
        x: k * rate.x,
        y: k * rate.y,
        z: k * rate.z,
    };
    (*q * dq).normalized()
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Element-wise clamp of each component into `[-limit, limit]`.
pub fn saturate(v: &Vec3, limit: f64) -> Vec3 {
    v.map(|c| c.clamp(-limit, limit))
}
