//! Race course geometry, the air-corridor cost map and the running cost the
//! planner optimizes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mppi::{MppiState, StageCost};

/// Rectangular aperture the vehicle must cross along `normal`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub center: Vec3,
    pub normal: Vec3,
    pub width: f64,
    pub height: f64,
    pub index: usize,
    width_axis: Vec3,
    height_axis: Vec3,
}

impl Gate {
    pub fn new(center: Vec3, normal: Vec3, width: f64, height: f64, index: usize) -> Self {
        let n = normal.normalize();
        // width runs horizontally; fall back to north for a horizontal gate
        let mut w = Vec3::z().cross(&n);
        if w.norm() < 1e-9 {
            w = Vec3::x().cross(&n);
        }
        let width_axis = w.normalize();
        let height_axis = n.cross(&width_axis);
        Self {
            center,
            normal: n,
            width,
            height,
            index,
            width_axis,
            height_axis,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Segment {
    start: Vec3,
    dir: Vec3,
    inv_len2: f64,
}

/// Weights of the running-cost terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub corridor: f64,
    pub heading: f64,
    pub speed: f64,
    pub out_of_corridor: f64,
    pub gate_bonus: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            corridor: 450.0,
            heading: 250.0,
            speed: 150.0,
            out_of_corridor: 10_000.0,
            gate_bonus: 150.0,
        }
    }
}

/// Centerline, corridor and ordered gates. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Course {
    pub waypoints: Vec<Vec3>,
    pub corridor_radius: f64,
    pub v_cmd: f64,
    pub gates: Vec<Gate>,
    segments: Vec<Segment>,
    index: SegmentIndex,
}

impl Segment {
    #[inline]
    fn distance2(&self, x: &Vec3) -> f64 {
        let rel = x - self.start;
        let t = (rel.dot(&self.dir) * self.inv_len2).clamp(0.0, 1.0);
        (rel - t * self.dir).norm_squared()
    }
}

/// Uniform voxel grid listing, per cell, the only segments that can be
/// nearest to a point inside it. Points off the grid scan every segment.
#[derive(Clone, Debug, PartialEq)]
struct SegmentIndex {
    origin: Vec3,
    inv_cell: f64,
    dims: [usize; 3],
    offsets: Vec<u32>,
    candidates: Vec<u32>,
}

impl SegmentIndex {
    const CELL: f64 = 1.0;

    fn build(segments: &[Segment], waypoints: &[Vec3], margin: f64) -> Self {
        let mut lo = waypoints[0];
        let mut hi = waypoints[0];
        for w in waypoints {
            lo = lo.inf(w);
            hi = hi.sup(w);
        }
        let pad = Vec3::repeat(margin);
        let origin = lo - pad;
        let extent = hi + pad - origin;
        let cell = Self::CELL;
        let dims = [0, 1, 2].map(|i| ((extent[i] / cell).ceil() as usize).max(1));
        let half_diag = 0.5 * cell * 3f64.sqrt();
        let mut offsets = Vec::with_capacity(dims[0] * dims[1] * dims[2] + 1);
        let mut candidates = Vec::new();
        let mut dist = vec![0.0; segments.len()];
        offsets.push(0);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let c = origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * cell;
                    for (d, s) in dist.iter_mut().zip(segments) {
                        *d = s.distance2(&c).sqrt();
                    }
                    let bound = dist.iter().cloned().fold(f64::INFINITY, f64::min) + 2.0 * half_diag + 1e-9;
                    candidates.extend((0..segments.len()).filter(|&s| dist[s] <= bound).map(|s| s as u32));
                    offsets.push(candidates.len() as u32);
                }
            }
        }
        Self {
            origin,
            inv_cell: 1.0 / cell,
            dims,
            offsets,
            candidates,
        }
    }

    #[inline]
    fn cell_of(&self, x: &Vec3) -> Option<usize> {
        let r = (x - self.origin) * self.inv_cell;
        if !(r.x >= 0.0 && r.y >= 0.0 && r.z >= 0.0) {
            return None;
        }
        let (i, j, k) = (r.x as usize, r.y as usize, r.z as usize);
        if i >= self.dims[0] || j >= self.dims[1] || k >= self.dims[2] {
            return None;
        }
        Some((k * self.dims[1] + j) * self.dims[0] + i)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CourseFile {
    waypoints: Vec<[f64; 3]>,
    corridor_radius: f64,
    v_cmd: f64,
    gates: Vec<GateFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateFile {
    center: [f64; 3],
    normal: [f64; 3],
    width: f64,
    height: f64,
}

const DEFAULT_COURSE: &str = include_str!("../assets/default_course.json");

impl Course {
    pub fn new(waypoints: Vec<Vec3>, corridor_radius: f64, v_cmd: f64, gates: Vec<Gate>) -> Result<Self> {
        let invalid = |m: String| Err(Error::InvalidCourse(m));
        if waypoints.len() < 2 {
            return invalid(format!("waypoints: need at least 2, got {}", waypoints.len()));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !w.iter().all(|c| c.is_finite()) {
                return invalid(format!("waypoints[{i}]: non-finite coordinate"));
            }
        }
        if waypoints[1] == waypoints[0] {
            return invalid("waypoints[1]: first segment has zero length".into());
        }
        if !(corridor_radius > 0.0) || !corridor_radius.is_finite() {
            return invalid(format!("corridor_radius: must be positive, got {corridor_radius}"));
        }
        if !(v_cmd >= 0.0) || !v_cmd.is_finite() {
            return invalid(format!("v_cmd: must be non-negative, got {v_cmd}"));
        }
        if gates.is_empty() {
            return invalid("gates: need at least one gate".into());
        }
        let segments: Vec<Segment> = waypoints
            .windows(2)
            .map(|w| {
                let dir = w[1] - w[0];
                let len2 = dir.norm_squared();
                Segment {
                    start: w[0],
                    dir,
                    inv_len2: if len2 > 0.0 { 1.0 / len2 } else { 0.0 },
                }
            })
            .collect();
        let index = SegmentIndex::build(&segments, &waypoints, corridor_radius + 2.0);
        Ok(Self {
            waypoints,
            corridor_radius,
            v_cmd,
            gates,
            segments,
            index,
        })
    }

    /// Parses and validates course JSON. `origin` names the source in errors.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: CourseFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidCourse(format!("{origin}:{}:{}: {e}", e.line(), e.column())))?;
        let mut gates = Vec::with_capacity(file.gates.len());
        for (i, g) in file.gates.iter().enumerate() {
            let normal = Vec3::from(g.normal);
            let n = normal.norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidCourse(format!(
                    "{origin}: gates[{i}].normal: must be unit length, has norm {n}"
                )));
            }
            if !(g.width > 0.0) || !(g.height > 0.0) {
                return Err(Error::InvalidCourse(format!(
                    "{origin}: gates[{i}]: width and height must be positive"
                )));
            }
            if !g.center.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidCourse(format!("{origin}: gates[{i}].center: non-finite")));
            }
            gates.push(Gate::new(Vec3::from(g.center), normal, g.width, g.height, i));
        }
        let waypoints = file.waypoints.iter().map(|w| Vec3::from(*w)).collect();
        Self::new(waypoints, file.corridor_radius, file.v_cmd, gates).map_err(|e| match e {
            Error::InvalidCourse(m) => Error::InvalidCourse(format!("{origin}: {m}")),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        let file = CourseFile {
            waypoints: self.waypoints.iter().map(|w| [w.x, w.y, w.z]).collect(),
            corridor_radius: self.corridor_radius,
            v_cmd: self.v_cmd,
            gates: self
                .gates
                .iter()
                .map(|g| GateFile {
                    center: g.center.into(),
                    normal: g.normal.into(),
                    width: g.width,
                    height: g.height,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("course serializes")
    }

    /// The shipped six-gate circuit.
    pub fn default_circuit() -> Self {
        Self::from_json(DEFAULT_COURSE, "default_course.json").expect("shipped course is valid")
    }

    /// Start pose: first waypoint, facing the first gate.
    /// Flying-start velocity: `v_cmd` along the first centerline segment.
    pub fn start_velocity(&self) -> Vec3 {
        (self.waypoints[1] - self.waypoints[0]).normalize() * self.v_cmd
    }

    pub fn start(&self) -> (Vec3, f64) {
        let p = self.waypoints[0];
        let d = self.gates[0].center - p;
        (p, d.y.atan2(d.x))
    }

    /// Total centerline length.
    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.dir.norm()).sum()
    }

    /// Euclidean distance from `x` to the centerline polyline.
    #[inline]
    pub fn centerline_distance(&self, x: &Vec3) -> f64 {
        let best = match self.index.cell_of(x) {
            Some(c) => {
                let range = self.index.offsets[c] as usize..self.index.offsets[c + 1] as usize;
                self.index.candidates[range]
                    .iter()
                    .map(|&s| self.segments[s as usize].distance2(x))
                    .fold(f64::INFINITY, f64::min)
            }
            None => self.brute_distance2(x),
        };
        best.sqrt()
    }

    fn brute_distance2(&self, x: &Vec3) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance2(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Normalized corridor cost `M(x)` in [0, 1].
pub fn costmap_lookup(x: &Vec3, course: &Course) -> f64 {
    (course.centerline_distance(x) / course.corridor_radius).clamp(0.0, 1.0)
}

/// 1 when `x` lies strictly outside the corridor.
pub fn out_of_corridor(x: &Vec3, course: &Course) -> f64 {
    if course.centerline_distance(x) > course.corridor_radius {
        1.0
    } else {
        0.0
    }
}

/// 1 when the segment `prev → now` crosses the gate plane along its normal
/// inside the aperture.
#[inline]
pub fn gate_pass(prev: &Vec3, now: &Vec3, gate: &Gate) -> f64 {
    let d0 = (prev - gate.center).dot(&gate.normal);
    let d1 = (now - gate.center).dot(&gate.normal);
    if !(d0 < 0.0 && d1 >= 0.0) {
        return 0.0;
    }
    let t = d0 / (d0 - d1);
    let hit = prev + t * (now - prev) - gate.center;
    let inside =
        hit.dot(&gate.width_axis).abs() <= 0.5 * gate.width && hit.dot(&gate.height_axis).abs() <= 0.5 * gate.height;
    if inside {
        1.0
    } else {
        0.0
    }
}

/// Gate bookkeeping carried along one trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateCursor {
    /// Gates passed so far, in order.
    pub passed: usize,
    /// Planar direction of the last heading command, reused when the
    /// bearing is undefined.
    pub last_bearing: [f64; 2],
}

impl GateCursor {
    pub fn new(initial_heading: f64) -> Self {
        Self {
            passed: 0,
            last_bearing: [initial_heading.cos(), initial_heading.sin()],
        }
    }

    pub fn last_heading(&self) -> f64 {
        self.last_bearing[1].atan2(self.last_bearing[0])
    }

    /// Index of the gate to fly toward; wraps to the first gate.
    pub fn next_gate(&self, course: &Course) -> usize {
        self.passed % course.gates.len()
    }

    pub fn complete(&self, course: &Course) -> bool {
        self.passed >= course.gates.len()
    }

    /// Advances past the next gate if `prev → now` crosses it. Returns the
    /// number of gates passed (0 or 1).
    pub fn advance(&mut self, prev: &Vec3, now: &Vec3, course: &Course) -> usize {
        if self.complete(course) {
            return 0;
        }
        let gate = &course.gates[self.next_gate(course)];
        if gate_pass(prev, now, gate) > 0.0 {
            self.passed += 1;
            1
        } else {
            0
        }
    }
}

/// Race bookkeeping for the simulated vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct RaceProgress {
    pub cursor: GateCursor,
    /// Time at which each gate was passed, in course order.
    pub splits: Vec<f64>,
    pub lap_complete: bool,
    pub elapsed: f64,
}

impl RaceProgress {
    pub fn new(initial_heading: f64) -> Self {
        Self {
            cursor: GateCursor::new(initial_heading),
            splits: Vec::new(),
            lap_complete: false,
            elapsed: 0.0,
        }
    }

    pub fn next_gate(&self) -> usize {
        self.cursor.passed
    }

    pub fn update(&mut self, prev: &Vec3, now: &Vec3, time: f64, course: &Course) {
        self.elapsed = time;
        if self.cursor.advance(prev, now, course) > 0 {
            self.splits.push(time);
            self.lap_complete = self.cursor.complete(course);
        }
    }
}

/// Planar bearing from `x` to the next gate center, in (−π, π]. North is 0
/// and west is +π/2. At the gate center the previous command is held.
pub fn heading_command(x: &Vec3, cursor: &GateCursor, course: &Course) -> f64 {
    let [dx, dy] = bearing(x, cursor, course);
    dy.atan2(dx)
}

#[inline]
fn bearing(x: &Vec3, cursor: &GateCursor, course: &Course) -> [f64; 2] {
    let target = course.gates[cursor.next_gate(course)].center;
    let (dx, dy) = (target.x - x.x, target.y - x.y);
    if dx * dx + dy * dy < 1e-12 {
        cursor.last_bearing
    } else {
        [dx, dy]
    }
}

/// Running cost of one rollout state. `prev` is the preceding position of
/// the same trajectory; gate bonuses advance `cursor`.
#[inline]
pub fn running_cost(
    s: &MppiState,
    prev: &Vec3,
    cursor: &mut GateCursor,
    course: &Course,
    weights: &CostWeights,
) -> f64 {
    let gates = cursor.advance(prev, &s.position, course) as f64;
    let [cx, cy] = bearing(&s.position, cursor, course);
    cursor.last_bearing = [cx, cy];
    // |wrap(ψ_cmd − ψ)| as the angle between the command bearing and the
    // planar projection of b1
    let q = &s.attitude;
    let bx = 1.0 - 2.0 * (q.y * q.y + q.z * q.z);
    let by = 2.0 * (q.x * q.y + q.w * q.z);
    let heading_error = (bx * cy - by * cx).atan2(bx * cx + by * cy).abs();
    let dist = course.centerline_distance(&s.position);
    let map = (dist / course.corridor_radius).min(1.0);
    let out = if dist > course.corridor_radius { 1.0 } else { 0.0 };
    let planar = (s.velocity.x * s.velocity.x + s.velocity.y * s.velocity.y).sqrt();
    weights.corridor * map
        + weights.heading * heading_error
        + weights.speed * (course.v_cmd - planar).abs()
        + weights.out_of_corridor * out
        - weights.gate_bonus * gates
}

/// The race objective as a planner stage cost.
#[derive(Clone, Debug)]
pub struct CourseCost<'a> {
    pub course: &'a Course,
    pub weights: CostWeights,
}

impl<'a> CourseCost<'a> {
    pub fn new(course: &'a Course) -> Self {
        Self {
            course,
            weights: CostWeights::default(),
        }
    }
}

impl StageCost for CourseCost<'_> {
    type Progress = GateCursor;

    fn stage(&self, prev: &MppiState, state: &MppiState, progress: &mut GateCursor) -> f64 {
        running_cost(state, &prev.position, progress, self.course, &self.weights)
    }
}
