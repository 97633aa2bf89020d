//! Sampling-based finite-horizon trajectory optimizer.
//!
//! Each call to [`Mppi::plan`] performs one path-integral iteration: it
//! perturbs the warm-start control sequence, rolls every sample through the
//! kinematic rollout model, weights the samples by exponentiated cost and
//! averages their perturbations into the new mean sequence. The mean sequence
//! is then re-simulated to produce the reference trajectory handed to the
//! tracking controller.
//!
//! Rollouts are spread over the rayon pool. Every sample draws its noise from
//! its own stream keyed by `(seed, iteration, sample)` and the reduction is an
//! ordered fold, so the output does not depend on the worker count.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{integrate_quat, Quat, Vec3, GRAVITY};
use crate::plant::NominalParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    /// Diagonal of the sampling covariance: thrust (N²) then body rates.
    pub sigma: [f64; 4],
    pub samples: usize,
    pub lambda: f64,
    /// Rollout step, s.
    pub dt: f64,
    /// Horizon length in steps.
    pub steps: usize,
    /// Rate-filter time constants, s.
    pub tau: [f64; 3],
    pub seed: u64,
    /// Upper thrust limit as a multiple of hover thrust.
    pub thrust_limit_factor: f64,
    /// Control about which the importance-sampling term is measured.
    /// `None` centers it at hover thrust and zero rates.
    pub control_prior: Option<[f64; 4]>,
    /// Weight each running-cost term by `dt`, so `S` approximates the
    /// time integral of `Q`. Off gives the plain per-step sum.
    pub integrate_cost: bool,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            sigma: [1.5, 0.4, 0.4, 0.4],
            samples: 1024,
            lambda: 1.4,
            dt: 0.02,
            steps: 75,
            tau: [0.25; 3],
            seed: 0,
            thrust_limit_factor: 4.0,
            control_prior: None,
            integrate_cost: true,
        }
    }
}

impl MppiConfig {
    /// Full sample count.
    pub fn faithful() -> Self {
        Self {
            samples: 7200,
            ..Self::default()
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return bad(format!("sampling covariance must be positive, got {:?}", self.sigma));
        }
        if self.samples == 0 {
            return bad("sample count must be at least 1".into());
        }
        if !(self.lambda > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.lambda));
        }
        if !(self.dt > 0.0) || self.steps == 0 {
            return bad("rollout step and horizon length must be positive".into());
        }
        if self.tau.iter().any(|t| !(*t > 0.0)) {
            return bad(format!("rate filter constants must be positive, got {:?}", self.tau));
        }
        if !(self.thrust_limit_factor > 0.0) {
            return bad("thrust limit factor must be positive".into());
        }
        Ok(())
    }
}

/// Sampled control: collective thrust and commanded body rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MppiControl {
    pub thrust: f64,
    pub rates: Vec3,
}

impl MppiControl {
    pub fn new(thrust: f64, rates: Vec3) -> Self {
        Self { thrust, rates }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.thrust, self.rates.x, self.rates.y, self.rates.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], Vec3::new(a[1], a[2], a[3]))
    }
}

/// Rollout state; `rate` is the low-pass-filtered body rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MppiState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Quat,
    pub rate: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence(pub Vec<MppiControl>);

impl ControlSequence {
    pub fn constant(control: MppiControl, steps: usize) -> Self {
        Self(vec![control; steps])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean_thrust(&self) -> f64 {
        self.0.iter().map(|c| c.thrust).sum::<f64>() / self.0.len().max(1) as f64
    }
}

/// Drops the first `shift` entries and pads with copies of the last one.
pub fn warm_start_shift(seq: &ControlSequence, shift: usize) -> ControlSequence {
    let n = seq.len();
    let Some(last) = seq.0.last().copied() else {
        return seq.clone();
    };
    let shift = shift.min(n);
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&seq.0[shift..]);
    out.resize(n, last);
    ControlSequence(out)
}

/// Simulated nominal response to the optimized mean sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub attitudes: Vec<Quat>,
    pub rates: Vec<Vec3>,
    /// One entry per control step.
    pub accelerations: Vec<Vec3>,
}

impl ReferenceTrajectory {
    pub fn steps(&self) -> usize {
        self.accelerations.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn state(&self, i: usize) -> MppiState {
        MppiState {
            position: self.positions[i],
            velocity: self.velocities[i],
            attitude: self.attitudes[i],
            rate: self.rates[i],
        }
    }
}

/// Constants of the disturbance-free rollout model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutModel {
    pub thrust_per_mass: f64,
    pub inv_tau: Vec3,
    pub dt: f64,
    pub thrust_max: f64,
}

impl RolloutModel {
    pub fn new(cfg: &MppiConfig, nom: &NominalParams) -> Self {
        Self {
            thrust_per_mass: nom.thrust_power / nom.mass,
            inv_tau: Vec3::new(1.0 / cfg.tau[0], 1.0 / cfg.tau[1], 1.0 / cfg.tau[2]),
            dt: cfg.dt,
            thrust_max: cfg.thrust_limit_factor * nom.hover_thrust(),
        }
    }

    /// Translational acceleration under `thrust` at attitude `q`.
    #[inline]
    pub fn acceleration(&self, q: &Quat, thrust: f64) -> Vec3 {
        let mut a = q.body_z() * (self.thrust_per_mass * thrust);
        a.z -= GRAVITY;
        a
    }
}

/// One explicit Euler step of the rollout model.
#[inline]
pub fn rollout_step(s: &MppiState, v: &MppiControl, model: &RolloutModel) -> MppiState {
    let dt = model.dt;
    let accel = model.acceleration(&s.attitude, v.thrust);
    MppiState {
        position: s.position + s.velocity * dt,
        velocity: s.velocity + accel * dt,
        attitude: integrate_quat(&s.attitude, &s.rate, dt),
        rate: s.rate + (v.rates - s.rate).component_mul(&model.inv_tau) * dt,
    }
}

/// Runs a control sequence through the rollout model, recording the
/// reference states and per-step accelerations.
pub fn simulate(s0: &MppiState, controls: &ControlSequence, model: &RolloutModel) -> ReferenceTrajectory {
    let n = controls.len();
    let mut traj = ReferenceTrajectory {
        dt: model.dt,
        positions: Vec::with_capacity(n + 1),
        velocities: Vec::with_capacity(n + 1),
        attitudes: Vec::with_capacity(n + 1),
        rates: Vec::with_capacity(n + 1),
        accelerations: Vec::with_capacity(n),
    };
    let mut s = *s0;
    let push = |t: &mut ReferenceTrajectory, s: &MppiState| {
        t.positions.push(s.position);
        t.velocities.push(s.velocity);
        t.attitudes.push(s.attitude);
        t.rates.push(s.rate);
    };
    push(&mut traj, &s);
    for u in &controls.0 {
        traj.accelerations.push(model.acceleration(&s.attitude, u.thrust));
        s = rollout_step(&s, u, model);
        push(&mut traj, &s);
    }
    traj
}

/// State-dependent cost evaluated along every rollout.
///
/// `Progress` is per-rollout mutable bookkeeping (for example which gate is
/// next); each rollout starts from its own clone.
pub trait StageCost: Sync {
    type Progress: Clone + Send + Sync;

    /// Running cost `Q` of `state`, reached from `prev` (equal to `state` at
    /// the first stage).
    fn stage(&self, prev: &MppiState, state: &MppiState, progress: &mut Self::Progress) -> f64;

    /// Terminal cost `φ`.
    fn terminal(&self, _state: &MppiState, _progress: &Self::Progress) -> f64 {
        0.0
    }
}

/// Sampled perturbations for one iteration, row-major `samples × steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbations {
    pub samples: usize,
    pub steps: usize,
    pub data: Vec<[f64; 4]>,
}

impl Perturbations {
    pub fn get(&self, sample: usize, step: usize) -> [f64; 4] {
        self.data[sample * self.steps + step]
    }

    pub fn sample(&self, sample: usize) -> &[[f64; 4]] {
        &self.data[sample * self.steps..(sample + 1) * self.steps]
    }
}

/// Rollouts advanced together per worker task.
const LANES: usize = 4;

fn stream_key(seed: u64, iteration: u64, sample: usize) -> u64 {
    // splitmix64 finalizer over a mixed counter
    let mut z =
        seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (sample as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fill_noise(cfg: &MppiConfig, iteration: u64, sample: usize, out: &mut [[f64; 4]]) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(stream_key(cfg.seed, iteration, sample));
    let std = cfg.sigma.map(|s| s.max(0.0).sqrt());
    for slot in out.iter_mut() {
        for (c, e) in slot.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = std[c] * z;
        }
    }
}

/// Draws `ε ~ N(0, Σ)` for every sample and step of `iteration`.
pub fn sample_perturbations(cfg: &MppiConfig, iteration: u64) -> Perturbations {
    let mut data = vec![[0.0; 4]; cfg.samples * cfg.steps];
    data.par_chunks_mut(cfg.steps)
        .enumerate()
        .for_each(|(m, chunk)| fill_noise(cfg, iteration, m, chunk));
    Perturbations {
        samples: cfg.samples,
        steps: cfg.steps,
        data,
    }
}

fn inverse_sigma(cfg: &MppiConfig) -> [f64; 4] {
    // zero-variance channels carry no importance term
    cfg.sigma.map(|s| if s > 0.0 { 1.0 / s } else { 0.0 })
}

/// Log likelihood ratio of a sampled sequence under the prior `N(ū, Σ)`
/// against the sampling density `N(u, Σ)`, scaled by the temperature:
/// `−λ Σ_t (u_t − ū)ᵀ Σ⁻¹ (v_t − ū)` up to a sample-independent constant.
pub fn importance_term(
    previous: &ControlSequence,
    sampled: &ControlSequence,
    cfg: &MppiConfig,
    prior: &MppiControl,
) -> f64 {
    let inv = inverse_sigma(cfg);
    let p = prior.to_array();
    previous
        .0
        .iter()
        .zip(&sampled.0)
        .map(|(u, v)| {
            let (u, v) = (u.to_array(), v.to_array());
            (0..4).map(|c| (u[c] - p[c]) * inv[c] * (v[c] - p[c])).sum::<f64>()
        })
        .sum::<f64>()
        * -cfg.lambda
}

/// Trajectory weight `exp(−(S − importance − ρ)/λ)`.
pub fn trajectory_weight(cost: f64, importance: f64, rho: f64, lambda: f64) -> f64 {
    (-(cost - importance - rho) / lambda).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlUpdate {
    pub controls: ControlSequence,
    /// Every weight vanished; the previous sequence was kept.
    pub degenerate: bool,
}

/// Weighted average of the perturbations added to the previous sequence.
pub fn update_controls(previous: &ControlSequence, weights: &[f64], perturbations: &Perturbations) -> ControlUpdate {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return ControlUpdate {
            controls: previous.clone(),
            degenerate: true,
        };
    }
    let steps = previous.len();
    let mut acc = vec![[0.0; 4]; steps];
    for (m, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let eps = perturbations.sample(m);
        for (a, e) in acc.iter_mut().zip(eps) {
            for c in 0..4 {
                a[c] += w * e[c];
            }
        }
    }
    let controls = previous
        .0
        .iter()
        .zip(&acc)
        .map(|(u, a)| {
            let mut next = u.to_array();
            for c in 0..4 {
                next[c] += a[c] / total;
            }
            MppiControl::from_array(next)
        })
        .collect();
    ControlUpdate {
        controls: ControlSequence(controls),
        degenerate: false,
    }
}

/// Result of one planning iteration.
#[derive(Clone, Debug)]
pub struct PlanOutput {
    pub controls: ControlSequence,
    pub reference: ReferenceTrajectory,
    pub degenerate: bool,
    /// Smallest sampled state cost.
    pub min_cost: f64,
    /// Cost of the re-simulated mean sequence.
    pub mean_cost: f64,
}

/// Path-integral planner bound to a configuration and nominal model.
#[derive(Clone, Debug)]
pub struct Mppi {
    cfg: MppiConfig,
    model: RolloutModel,
    prior: MppiControl,
}

impl Mppi {
    pub fn new(cfg: MppiConfig, nom: &NominalParams) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new_unchecked(cfg, nom))
    }

    /// Skips validation so degenerate limits (for example Σ = 0) can be
    /// exercised.
    pub fn new_unchecked(cfg: MppiConfig, nom: &NominalParams) -> Self {
        let model = RolloutModel::new(&cfg, nom);
        let prior = match cfg.control_prior {
            Some(p) => MppiControl::from_array(p),
            None => MppiControl::new(nom.hover_thrust(), Vec3::zeros()),
        };
        Self { cfg, model, prior }
    }

    pub fn config(&self) -> &MppiConfig {
        &self.cfg
    }

    pub fn model(&self) -> &RolloutModel {
        &self.model
    }

    /// Constant hover-thrust sequence over the horizon.
    pub fn hover_sequence(&self, nom: &NominalParams) -> ControlSequence {
        ControlSequence::constant(MppiControl::new(nom.hover_thrust(), Vec3::zeros()), self.cfg.steps)
    }

    fn stage_weight(&self) -> f64 {
        if self.cfg.integrate_cost {
            self.cfg.dt
        } else {
            1.0
        }
    }

    /// State cost `S = φ(s_T) + w Σ_{t<T} Q(s_t)` of one control sequence,
    /// with `w = dt` when the cost is integrated and 1 otherwise.
    pub fn sequence_cost<C: StageCost>(
        &self,
        s0: &MppiState,
        controls: &[MppiControl],
        cost: &C,
        progress: &C::Progress,
    ) -> f64 {
        let mut p = progress.clone();
        let mut prev = *s0;
        let mut s = *s0;
        let mut total = 0.0;
        for v in controls {
            total += cost.stage(&prev, &s, &mut p);
            prev = s;
            s = rollout_step(&s, v, &self.model);
        }
        total * self.stage_weight() + cost.terminal(&s, &p)
    }

    /// Costs of up to `LANES` sequences rolled out together; `controls` is
    /// step-major with stride `LANES`. Matches `sequence_cost` per lane.
    fn lockstep_cost<C: StageCost>(
        &self,
        s0: &MppiState,
        controls: &[MppiControl],
        lanes: usize,
        cost: &C,
        progress: &C::Progress,
    ) -> [f64; LANES] {
        let mut p: [C::Progress; LANES] = std::array::from_fn(|_| progress.clone());
        let mut prev = [*s0; LANES];
        let mut s = [*s0; LANES];
        let mut total = [0.0; LANES];
        for step in controls.chunks_exact(LANES) {
            for l in 0..lanes {
                total[l] += cost.stage(&prev[l], &s[l], &mut p[l]);
                prev[l] = s[l];
                s[l] = rollout_step(&s[l], &step[l], &self.model);
            }
        }
        let w = self.stage_weight();
        for l in 0..lanes {
            total[l] = total[l] * w + cost.terminal(&s[l], &p[l]);
        }
        total
    }

    /// One optimization iteration from `s0` warm-started at `warm`.
    pub fn plan<C: StageCost>(
        &self,
        s0: &MppiState,
        warm: &ControlSequence,
        cost: &C,
        progress: &C::Progress,
        iteration: u64,
    ) -> PlanOutput {
        let steps = self.cfg.steps;
        assert_eq!(warm.len(), steps, "warm start must span the horizon");
        let inv = inverse_sigma(&self.cfg);
        let prior = self.prior.to_array();
        let thrust_max = self.model.thrust_max;

        let mut eps = vec![[0.0; 4]; self.cfg.samples * steps];
        let mut scored = vec![(0.0, 0.0); self.cfg.samples];
        eps.par_chunks_mut(steps * LANES)
            .zip(scored.par_chunks_mut(LANES))
            .enumerate()
            .for_each_init(
                || vec![MppiControl::new(0.0, Vec3::zeros()); steps * LANES],
                |controls, (g, (chunk, out))| {
                    for (lane, (e, o)) in chunk.chunks_mut(steps).zip(out.iter_mut()).enumerate() {
                        fill_noise(&self.cfg, iteration, g * LANES + lane, e);
                        let mut importance = 0.0;
                        for (t, (u, e)) in warm.0.iter().zip(e.iter_mut()).enumerate() {
                            let u = u.to_array();
                            let mut v = [u[0] + e[0], u[1] + e[1], u[2] + e[2], u[3] + e[3]];
                            v[0] = v[0].clamp(0.0, thrust_max);
                            e[0] = v[0] - u[0];
                            for c in 0..4 {
                                importance += (u[c] - prior[c]) * inv[c] * (v[c] - prior[c]);
                            }
                            controls[t * LANES + lane] = MppiControl::from_array(v);
                        }
                        o.1 = -self.cfg.lambda * importance;
                    }
                    let costs = self.lockstep_cost(s0, controls, out.len(), cost, progress);
                    for (o, c) in out.iter_mut().zip(costs) {
                        o.0 = c;
                    }
                },
            );

        let exponent = |&(s, i): &(f64, f64)| s - i;
        let rho = scored.iter().map(exponent).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = scored
            .iter()
            .map(|&(s, i)| {
                let w = trajectory_weight(s, i, rho, self.cfg.lambda);
                if w.is_finite() {
                    w
                } else {
                    0.0
                }
            })
            .collect();
        let perturbations = Perturbations {
            samples: self.cfg.samples,
            steps,
            data: eps,
        };
        let update = update_controls(warm, &weights, &perturbations);
        let reference = simulate(s0, &update.controls, &self.model);
        let mean_cost = self.sequence_cost(s0, &update.controls.0, cost, progress);
        PlanOutput {
            controls: update.controls,
            reference,
            degenerate: update.degenerate,
            min_cost: scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min),
            mean_cost,
        }
    }
}
