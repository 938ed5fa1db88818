//! Reference courses.
//!
//! Every course lives in the x–z plane with x = 0 at the course entrance.
//! Tube centrelines are either a sine (training) or a zero-tangent cubic
//! Hermite spline through seeded knots (baseline / evaluation). Ring courses
//! use the same spline through the ring centres, so the centreline is flat at
//! every ring.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TUBE_LENGTH: f64 = 76.0;
pub const TUBE_RADIUS: f64 = 0.5;
pub const SPLINE_Z_MIN: f64 = 9.0;
pub const SPLINE_Z_MAX: f64 = 11.0;
pub const RING_COUNT: usize = 20;
pub const RING_SPACING: f64 = 4.0;
pub const RING_DIAMETER: f64 = 1.0;
pub const DEFAULT_KNOT_SPACING: f64 = 4.0;
pub const DEFAULT_SINE_MIDLINE: f64 = 10.0;

pub const AMPLITUDES: [f64; 3] = [0.5, 1.0, 1.5];
pub const WAVELENGTHS: [f64; 3] = [8.0, 10.0, 12.0];

/// Training sessions (1-based) sharing each amplitude, aligned with [`AMPLITUDES`].
pub const AMPLITUDE_SETS: [[usize; 3]; 3] = [[1, 3, 9], [2, 4, 7], [5, 6, 8]];
/// Training sessions (1-based) sharing each wavelength, aligned with [`WAVELENGTHS`].
pub const WAVELENGTH_SETS: [[usize; 3]; 3] = [[2, 5, 9], [3, 4, 6], [1, 7, 8]];

/// JSON document version for serialized trajectories.
pub const TRAJECTORY_DOC_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("invalid course specification: {0}")]
    InvalidSpec(String),
    #[error("x = {x} m is outside the course extent [0, {length}] m")]
    OutOfRange { x: f64, length: f64 },
    #[error("unsupported trajectory document version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed trajectory document: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CourseKind {
    SineTube,
    SplineTube,
    RingCourse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTubeSpec {
    pub amplitude: f64,
    pub wavelength: f64,
    pub midline_z: f64,
    pub length: f64,
    pub tube_radius: f64,
}

impl SineTubeSpec {
    /// Training tube on the standard grid, 76 m long, 1 m diameter.
    pub fn new(amplitude: f64, wavelength: f64, midline_z: f64) -> Self {
        Self { amplitude, wavelength, midline_z, length: TUBE_LENGTH, tube_radius: TUBE_RADIUS }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !AMPLITUDES.contains(&self.amplitude) {
            return Err(TrajectoryError::InvalidSpec(format!(
                "amplitude {} m is not one of {:?}",
                self.amplitude, AMPLITUDES
            )));
        }
        if !WAVELENGTHS.contains(&self.wavelength) {
            return Err(TrajectoryError::InvalidSpec(format!(
                "wavelength {} m is not one of {:?}",
                self.wavelength, WAVELENGTHS
            )));
        }
        if self.length != TUBE_LENGTH || self.tube_radius != TUBE_RADIUS {
            return Err(TrajectoryError::InvalidSpec(format!(
                "tube must be {TUBE_LENGTH} m long with radius {TUBE_RADIUS} m"
            )));
        }
        if !(self.midline_z.is_finite() && self.midline_z > self.amplitude) {
            return Err(TrajectoryError::InvalidSpec(format!(
                "midline {} m must exceed the amplitude {} m",
                self.midline_z, self.amplitude
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineTubeSpec {
    pub knots: Vec<Knot>,
    pub length: f64,
    pub tube_radius: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub x: f64,
    pub center_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingCourse {
    pub rings: Vec<Ring>,
    pub ring_diameter: f64,
    pub seed: u64,
}

impl RingCourse {
    pub fn length(&self) -> f64 {
        self.rings.last().map_or(0.0, |r| r.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case")]
pub enum CourseSpec {
    SineTube(SineTubeSpec),
    SplineTube(SplineTubeSpec),
    RingCourse(RingCourse),
}

/// One cubic segment on `[x0, x1]`, stored as a polynomial in the normalised
/// coordinate `s = (x - x0) / (x1 - x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteSegment {
    pub x0: f64,
    pub x1: f64,
    /// Exact right-end value, returned at `x == x1`.
    pub z1: f64,
    pub coeffs: [f64; 4],
}

impl HermiteSegment {
    /// Cubic Hermite segment between `(x0, z0)` and `(x1, z1)` with end slopes `m0`, `m1` (dz/dx).
    pub fn new(x0: f64, z0: f64, m0: f64, x1: f64, z1: f64, m1: f64) -> Self {
        let h = x1 - x0;
        let dz = z1 - z0;
        Self {
            x0,
            x1,
            z1,
            coeffs: [z0, h * m0, 3.0 * dz - h * (2.0 * m0 + m1), -2.0 * dz + h * (m0 + m1)],
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let s = (x - self.x0) / (self.x1 - self.x0);
        let [c0, c1, c2, c3] = self.coeffs;
        c0 + s * (c1 + s * (c2 + s * c3))
    }

    fn slope(&self, x: f64) -> f64 {
        let h = self.x1 - self.x0;
        let s = (x - self.x0) / h;
        let [_, c1, c2, c3] = self.coeffs;
        (c1 + s * (2.0 * c2 + 3.0 * s * c3)) / h
    }

    /// Largest |dz/dx| on the segment.
    pub fn max_abs_slope(&self) -> f64 {
        let h = self.x1 - self.x0;
        let [_, c1, c2, c3] = self.coeffs;
        let mut best = c1.abs().max((c1 + 2.0 * c2 + 3.0 * c3).abs());
        if c3 != 0.0 {
            let s = -c2 / (3.0 * c3);
            if (0.0..=1.0).contains(&s) {
                best = best.max((c1 + s * (2.0 * c2 + 3.0 * s * c3)).abs());
            }
        }
        best / h
    }
}

/// A fully-built course: its specification plus the evaluation segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    spec: CourseSpec,
    segments: Vec<HermiteSegment>,
}

impl Trajectory {
    pub fn kind(&self) -> CourseKind {
        match self.spec {
            CourseSpec::SineTube(_) => CourseKind::SineTube,
            CourseSpec::SplineTube(_) => CourseKind::SplineTube,
            CourseSpec::RingCourse(_) => CourseKind::RingCourse,
        }
    }

    pub fn spec(&self) -> &CourseSpec {
        &self.spec
    }

    pub fn segments(&self) -> &[HermiteSegment] {
        &self.segments
    }

    pub fn length(&self) -> f64 {
        match &self.spec {
            CourseSpec::SineTube(s) => s.length,
            CourseSpec::SplineTube(s) => s.length,
            CourseSpec::RingCourse(r) => r.length(),
        }
    }

    /// Wall distance from the centreline; `None` for ring courses.
    pub fn tube_radius(&self) -> Option<f64> {
        match &self.spec {
            CourseSpec::SineTube(s) => Some(s.tube_radius),
            CourseSpec::SplineTube(s) => Some(s.tube_radius),
            CourseSpec::RingCourse(_) => None,
        }
    }

    pub fn is_tube(&self) -> bool {
        self.tube_radius().is_some()
    }

    pub fn rings(&self) -> Option<&[Ring]> {
        match &self.spec {
            CourseSpec::RingCourse(r) => Some(&r.rings),
            _ => None,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match &self.spec {
            CourseSpec::SineTube(_) => None,
            CourseSpec::SplineTube(s) => Some(s.seed),
            CourseSpec::RingCourse(r) => Some(r.seed),
        }
    }

    /// Centreline altitude at `x`; errors outside `[0, length]`.
    pub fn centerline(&self, x: f64) -> Result<f64, TrajectoryError> {
        let length = self.length();
        if !(0.0..=length).contains(&x) {
            return Err(TrajectoryError::OutOfRange { x, length });
        }
        Ok(self.centerline_unchecked(x))
    }

    /// Centreline at `x`, or `None` outside the course.
    pub fn centerline_opt(&self, x: f64) -> Option<f64> {
        self.centerline(x).ok()
    }

    fn centerline_unchecked(&self, x: f64) -> f64 {
        match &self.spec {
            CourseSpec::SineTube(s) => s.midline_z + s.amplitude * (2.0 * PI * x / s.wavelength).sin(),
            _ => {
                let seg = &self.segments[self.segment_index(x)];
                if x == seg.x1 {
                    seg.z1
                } else {
                    seg.eval(x)
                }
            }
        }
    }

    /// Analytic dz/dx of the centreline.
    pub fn slope(&self, x: f64) -> Result<f64, TrajectoryError> {
        let length = self.length();
        if !(0.0..=length).contains(&x) {
            return Err(TrajectoryError::OutOfRange { x, length });
        }
        Ok(match &self.spec {
            CourseSpec::SineTube(s) => {
                s.amplitude * 2.0 * PI / s.wavelength * (2.0 * PI * x / s.wavelength).cos()
            }
            _ => self.segments[self.segment_index(x)].slope(x),
        })
    }

    /// Upper bound on |dz/dx| over the whole course.
    pub fn max_abs_slope(&self) -> f64 {
        match &self.spec {
            CourseSpec::SineTube(s) => s.amplitude * 2.0 * PI / s.wavelength,
            _ => self.segments.iter().map(HermiteSegment::max_abs_slope).fold(0.0, f64::max),
        }
    }

    fn segment_index(&self, x: f64) -> usize {
        // first segment whose right end is >= x; knots at segment starts map to s = 0
        let i = self.segments.partition_point(|seg| seg.x1 <= x);
        i.min(self.segments.len() - 1)
    }

    pub fn to_doc(&self) -> TrajectoryDoc {
        TrajectoryDoc { version: TRAJECTORY_DOC_VERSION, course: self.spec.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("trajectory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        let doc: TrajectoryDoc =
            serde_json::from_str(text).map_err(|e| TrajectoryError::Json(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: TrajectoryDoc) -> Result<Self, TrajectoryError> {
        if doc.version != TRAJECTORY_DOC_VERSION {
            return Err(TrajectoryError::Version { found: doc.version, expected: TRAJECTORY_DOC_VERSION });
        }
        match doc.course {
            CourseSpec::SineTube(s) => gen_training_tube(s),
            CourseSpec::SplineTube(s) => {
                validate_spline_tube(&s)?;
                let segments = zero_tangent_segments(&s.knots);
                Ok(Self { spec: CourseSpec::SplineTube(s), segments })
            }
            CourseSpec::RingCourse(r) => {
                validate_ring_course(&r)?;
                let segments = zero_tangent_segments(&ring_knots(&r.rings));
                Ok(Self { spec: CourseSpec::RingCourse(r), segments })
            }
        }
    }
}

/// Versioned serialized course, referenced by logs and the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDoc {
    pub version: u32,
    #[serde(flatten)]
    pub course: CourseSpec,
}

pub fn gen_training_tube(spec: SineTubeSpec) -> Result<Trajectory, TrajectoryError> {
    spec.validate()?;
    Ok(Trajectory { spec: CourseSpec::SineTube(spec), segments: Vec::new() })
}

pub fn gen_spline_tube(seed: u64, knot_spacing: f64) -> Result<Trajectory, TrajectoryError> {
    if !(knot_spacing > 0.0 && knot_spacing <= TUBE_LENGTH) {
        return Err(TrajectoryError::InvalidSpec(format!(
            "knot spacing {knot_spacing} m must lie in (0, {TUBE_LENGTH}]"
        )));
    }
    let intervals = (TUBE_LENGTH / knot_spacing).round();
    if (intervals * knot_spacing - TUBE_LENGTH).abs() > 1e-9 {
        return Err(TrajectoryError::InvalidSpec(format!(
            "knot spacing {knot_spacing} m does not divide the {TUBE_LENGTH} m tube"
        )));
    }
    let n = intervals as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut knots: Vec<Knot> = (0..n)
        .map(|i| Knot {
            x: if i + 1 == n { TUBE_LENGTH } else { i as f64 * knot_spacing },
            z: rng.random_range(SPLINE_Z_MIN..=SPLINE_Z_MAX),
        })
        .collect();
    let trough = rng.random_range(0..n);
    let mut peak = rng.random_range(0..n - 1);
    if peak >= trough {
        peak += 1;
    }
    knots[trough].z = SPLINE_Z_MIN;
    knots[peak].z = SPLINE_Z_MAX;

    let spec = SplineTubeSpec { knots, length: TUBE_LENGTH, tube_radius: TUBE_RADIUS, seed };
    let segments = zero_tangent_segments(&spec.knots);
    Ok(Trajectory { spec: CourseSpec::SplineTube(spec), segments })
}

pub fn gen_ring_course(seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rings: Vec<Ring> = (1..=RING_COUNT)
        .map(|i| Ring {
            x: i as f64 * RING_SPACING,
            center_z: rng.random_range(SPLINE_Z_MIN..=SPLINE_Z_MAX),
        })
        .collect();
    let segments = zero_tangent_segments(&ring_knots(&rings));
    Trajectory {
        spec: CourseSpec::RingCourse(RingCourse { rings, ring_diameter: RING_DIAMETER, seed }),
        segments,
    }
}

/// The fixed nine-session training order implied by the amplitude and
/// wavelength session sets.
pub fn training_schedule() -> Vec<SineTubeSpec> {
    (1..=9)
        .map(|session| {
            let a = AMPLITUDE_SETS.iter().position(|set| set.contains(&session)).expect("partition");
            let w = WAVELENGTH_SETS.iter().position(|set| set.contains(&session)).expect("partition");
            SineTubeSpec::new(AMPLITUDES[a], WAVELENGTHS[w], DEFAULT_SINE_MIDLINE)
        })
        .collect()
}

pub fn eval_centerline(traj: &Trajectory, x: f64) -> Result<f64, TrajectoryError> {
    traj.centerline(x)
}

// Ring courses start flat at the first ring's altitude from the entrance.
fn ring_knots(rings: &[Ring]) -> Vec<Knot> {
    let mut knots = Vec::with_capacity(rings.len() + 1);
    if let Some(first) = rings.first() {
        knots.push(Knot { x: 0.0, z: first.center_z });
    }
    knots.extend(rings.iter().map(|r| Knot { x: r.x, z: r.center_z }));
    knots
}

fn zero_tangent_segments(knots: &[Knot]) -> Vec<HermiteSegment> {
    knots.windows(2).map(|w| HermiteSegment::new(w[0].x, w[0].z, 0.0, w[1].x, w[1].z, 0.0)).collect()
}

fn validate_spline_tube(s: &SplineTubeSpec) -> Result<(), TrajectoryError> {
    let bad = |msg: &str| Err(TrajectoryError::InvalidSpec(msg.to_string()));
    if s.knots.len() < 2 {
        return bad("spline tube needs at least two knots");
    }
    if s.knots[0].x != 0.0 || s.knots.last().map(|k| k.x) != Some(s.length) || s.length != TUBE_LENGTH {
        return bad("spline knots must span [0, 76] m");
    }
    if s.knots.windows(2).any(|w| w[1].x <= w[0].x) {
        return bad("spline knot x must be strictly increasing");
    }
    if s.knots.iter().any(|k| !(SPLINE_Z_MIN..=SPLINE_Z_MAX).contains(&k.z)) {
        return bad("spline knot z must lie in [9, 11] m");
    }
    if !s.knots.iter().any(|k| k.z == SPLINE_Z_MIN) || !s.knots.iter().any(|k| k.z == SPLINE_Z_MAX) {
        return bad("spline tube must attain both the 9 m trough and the 11 m peak");
    }
    if s.tube_radius != TUBE_RADIUS {
        return bad("tube radius must be 0.5 m");
    }
    Ok(())
}

fn validate_ring_course(r: &RingCourse) -> Result<(), TrajectoryError> {
    let bad = |msg: &str| Err(TrajectoryError::InvalidSpec(msg.to_string()));
    if r.rings.len() != RING_COUNT {
        return bad("ring course must have exactly 20 rings");
    }
    if r.ring_diameter != RING_DIAMETER {
        return bad("ring diameter must be 1 m");
    }
    for (i, ring) in r.rings.iter().enumerate() {
        if ring.x != (i + 1) as f64 * RING_SPACING {
            return bad("rings must sit at x = 4, 8, ..., 80 m");
        }
        if !(SPLINE_Z_MIN..=SPLINE_Z_MAX).contains(&ring.center_z) {
            return bad("ring centres must lie in [9, 11] m");
        }
    }
    Ok(())
}
