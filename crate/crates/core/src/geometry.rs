//! Acceptance criterion and the closed-form bounds that make repeated
//! descents cheap.
//!
//! A subtree with maximum side `l` whose centroid lies at distance `d` from
//! the searching neuron may be approximated when `l / d < theta`. If that
//! holds and `theta <= 1/(2*sqrt(3))`, every child of the accepted node also
//! satisfies the criterion; for larger `theta` the guarantee is reached after
//! `ceil(log2(m))` levels with `m = 1/(1 - theta*sqrt(3))`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Largest theta for which the whole subspace containing the searcher is
/// never accepted.
pub const THETA_MAX: f64 = 1.0 / SQRT_3;

/// Largest theta for which children of an accepted node are always accepted.
pub const THETA_CHILD_GUARANTEE: f64 = 1.0 / (2.0 * SQRT_3);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Self { x: v, y: v, z: v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        (*self - *other).norm()
    }

    pub fn distance_squared(&self, other: &Vec3) -> f64 {
        (*self - *other).norm_squared()
    }

    pub fn max_component(&self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn component(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }

    pub fn with_component(mut self, axis: usize, value: f64) -> Self {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            2 => self.z = value,
            _ => panic!("axis {axis} out of range"),
        }
        self
    }

    pub fn mul_elem(&self, other: &Vec3) -> Vec3 {
        Vec3::new(self.x * other.x, self.y * other.y, self.z * other.z)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Axis-aligned box. Containment is half-open: `[min, min + side)` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    min_corner: Vec3,
    sides: Vec3,
}

impl Box3 {
    pub fn new(min_corner: Vec3, sides: Vec3) -> Result<Self> {
        if !min_corner.is_finite() || !sides.is_finite() {
            return Err(Error::InvalidBox(format!(
                "non-finite box: min {min_corner}, sides {sides}"
            )));
        }
        if sides.x <= 0.0 || sides.y <= 0.0 || sides.z <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "side lengths must be positive, got {sides}"
            )));
        }
        Ok(Self { min_corner, sides })
    }

    pub fn cube(min_corner: Vec3, side: f64) -> Result<Self> {
        Self::new(min_corner, Vec3::splat(side))
    }

    pub fn min_corner(&self) -> Vec3 {
        self.min_corner
    }

    pub fn sides(&self) -> Vec3 {
        self.sides
    }

    pub fn max_corner(&self) -> Vec3 {
        self.min_corner + self.sides
    }

    pub fn max_side(&self) -> f64 {
        self.sides.max_component()
    }

    pub fn diagonal(&self) -> f64 {
        self.sides.norm()
    }

    pub fn center(&self) -> Vec3 {
        self.min_corner + self.sides * 0.5
    }

    pub fn volume(&self) -> f64 {
        self.sides.x * self.sides.y * self.sides.z
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let max = self.max_corner();
        p.x >= self.min_corner.x
            && p.x < max.x
            && p.y >= self.min_corner.y
            && p.y < max.y
            && p.z >= self.min_corner.z
            && p.z < max.z
    }

    /// Closed-box containment, used for centroids (weighted means of points
    /// in the half-open box).
    pub fn contains_closed(&self, p: &Vec3) -> bool {
        let max = self.max_corner();
        p.x >= self.min_corner.x
            && p.x <= max.x
            && p.y >= self.min_corner.y
            && p.y <= max.y
            && p.z >= self.min_corner.z
            && p.z <= max.z
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        let max = self.max_corner();
        Vec3::new(
            p.x.clamp(self.min_corner.x, max.x),
            p.y.clamp(self.min_corner.y, max.y),
            p.z.clamp(self.min_corner.z, max.z),
        )
    }

    /// Octant index of `p` in Morton order: bit 0 = x, bit 1 = y, bit 2 = z.
    pub fn octant_of(&self, p: &Vec3) -> usize {
        let half = self.sides * 0.5;
        let mid = self.min_corner + half;
        usize::from(p.x >= mid.x) | usize::from(p.y >= mid.y) << 1 | usize::from(p.z >= mid.z) << 2
    }

    /// Child box for the given Morton octant; every axis is halved.
    pub fn octant(&self, index: usize) -> Box3 {
        debug_assert!(index < 8);
        let half = self.sides * 0.5;
        let offset = Vec3::new(
            if index & 1 != 0 { half.x } else { 0.0 },
            if index & 2 != 0 { half.y } else { 0.0 },
            if index & 4 != 0 { half.z } else { 0.0 },
        );
        Box3 {
            min_corner: self.min_corner + offset,
            sides: half,
        }
    }

    /// Halves along one axis; `upper` selects the high half.
    pub fn half(&self, axis: usize, upper: bool) -> Box3 {
        let side = self.sides.component(axis) * 0.5;
        let mut min_corner = self.min_corner;
        if upper {
            min_corner = min_corner.with_component(axis, min_corner.component(axis) + side);
        }
        Box3 {
            min_corner,
            sides: self.sides.with_component(axis, side),
        }
    }

    pub fn intersects(&self, other: &Box3) -> bool {
        let a = self.max_corner();
        let b = other.max_corner();
        self.min_corner.x < b.x
            && other.min_corner.x < a.x
            && self.min_corner.y < b.y
            && other.min_corner.y < a.y
            && self.min_corner.z < b.z
            && other.min_corner.z < a.z
    }
}

/// Acceptance threshold, restricted to `(0, 1/sqrt(3)]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Theta(f64);

impl Theta {
    pub fn new(value: f64) -> Result<Self> {
        // Small slack so that `1.0 / 3f64.sqrt()` computed by callers is admitted.
        if value.is_finite() && value > 0.0 && value <= THETA_MAX * (1.0 + 4.0 * f64::EPSILON) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidTheta(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Refinement needed below an accepted node before every descendant is
/// accepted as well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubdivisionGuarantee {
    pub m: f64,
    pub depth: u32,
    pub node_bound: u64,
}

impl SubdivisionGuarantee {
    pub fn generation_name(&self) -> &'static str {
        match self.depth {
            0 => "Self",
            1 => "Children",
            2 => "Grandchildren",
            3 => "Great-Grandchildren",
            _ => "Deeper descendants",
        }
    }
}

/// `max_side / distance < theta`, strictly.
pub fn acceptance(max_side: f64, distance: f64, theta: Theta) -> Result<bool> {
    acceptance_raw(max_side, distance, theta.value())
}

pub(crate) fn acceptance_raw(max_side: f64, distance: f64, theta: f64) -> Result<bool> {
    if distance <= 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    Ok(max_side / distance < theta)
}

pub fn child_ac_guaranteed(theta: Theta) -> bool {
    theta.value() <= THETA_CHILD_GUARANTEE
}

pub fn required_m(theta: Theta) -> Result<f64> {
    let denom = 1.0 - theta.value() * SQRT_3;
    if denom <= 0.0 {
        return Err(Error::Singularity(theta.value()));
    }
    Ok(1.0 / denom)
}

pub fn subdivision_guarantee(theta: Theta) -> Result<SubdivisionGuarantee> {
    let m = required_m(theta)?;
    let depth = m.log2().ceil().max(0.0) as u32;
    Ok(SubdivisionGuarantee {
        m,
        depth,
        node_bound: 8u64.pow(depth),
    })
}

/// Upper bound on the displacement between a node's centroid and a child's
/// centroid. `centered` assumes centroids sit near their box centers.
pub fn epsilon_bound(bbox: &Box3, centered: bool) -> f64 {
    let diagonal = bbox.diagonal();
    if centered {
        0.25 * diagonal
    } else {
        diagonal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentroidPlacement {
    /// Parent and child centroids anywhere in the parent box.
    Anywhere,
    /// Child centroid within a quarter diagonal of the parent centroid.
    CenteredQuarter,
}

/// One sampled configuration in which a descendant of an accepted node
/// fails the acceptance criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub theta: f64,
    pub trial: u64,
    pub parent: Box3,
    pub parent_centroid: Vec3,
    pub descendant_max_side: f64,
    pub descendant_centroid: Vec3,
    pub query: Vec3,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.parent_centroid.distance(&self.query);
        let d_child = self.descendant_centroid.distance(&self.query);
        write!(
            f,
            "theta={} trial={} box(min={}, sides={}) p={} p'={} q={} \
             parent l/d={} descendant l'={} l'/d'={}",
            self.theta,
            self.trial,
            self.parent.min_corner(),
            self.parent.sides(),
            self.parent_centroid,
            self.descendant_centroid,
            self.query,
            self.parent.max_side() / d,
            self.descendant_max_side,
            self.descendant_max_side / d_child,
        )
    }
}

/// Parameters for a randomized search for acceptance-criterion violations.
#[derive(Debug, Clone)]
pub struct AcTrialConfig {
    /// Kept as a raw value: centered placement is checked up to 1, past the
    /// range `Theta` admits.
    pub theta: f64,
    pub trials: u64,
    pub seed: u64,
    pub placement: CentroidPlacement,
    /// Levels below the accepted node; the descendant's sides are scaled by
    /// `2^-depth`.
    pub depth: u32,
    /// Mutation switch: keep the descendant's sides equal to the parent's.
    pub skip_halving: bool,
}

impl AcTrialConfig {
    pub fn new(theta: Theta, trials: u64, seed: u64, placement: CentroidPlacement) -> Self {
        Self {
            theta: theta.value(),
            trials,
            seed,
            placement,
            depth: 1,
            skip_halving: false,
        }
    }

    /// Centered-quarter trials for any theta in `(0, 1]`.
    pub fn centered(theta: f64, trials: u64, seed: u64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidTheta(theta));
        }
        Ok(Self {
            theta,
            trials,
            seed,
            placement: CentroidPlacement::CenteredQuarter,
            depth: 1,
            skip_halving: false,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct AcTrialReport {
    pub trials: u64,
    pub violations: u64,
    pub first: Option<Counterexample>,
}

const SHARD_TRIALS: u64 = 1 << 16;

/// Runs `config.trials` randomized configurations. Trials are split into
/// fixed-size shards, each with its own ChaCha stream derived from the seed,
/// so the result does not depend on the thread count.
pub fn run_ac_trials(config: &AcTrialConfig) -> AcTrialReport {
    let shards = config.trials.div_ceil(SHARD_TRIALS);
    let reports: Vec<AcTrialReport> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let start = shard * SHARD_TRIALS;
            let end = (start + SHARD_TRIALS).min(config.trials);
            run_shard(config, shard, start, end)
        })
        .collect();

    let mut total = AcTrialReport::default();
    for r in reports {
        total.trials += r.trials;
        total.violations += r.violations;
        if total.first.is_none() {
            total.first = r.first;
        }
    }
    total
}

pub fn find_ac_counterexample(
    theta: Theta,
    trials: u64,
    rng_seed: u64,
    placement: CentroidPlacement,
) -> Option<Counterexample> {
    run_ac_trials(&AcTrialConfig::new(theta, trials, rng_seed, placement)).first
}

fn run_shard(config: &AcTrialConfig, shard: u64, start: u64, end: u64) -> AcTrialReport {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(shard);
    let theta = config.theta;
    let scale = if config.skip_halving {
        1.0
    } else {
        0.5f64.powi(config.depth as i32)
    };

    let mut report = AcTrialReport::default();
    let mut trial = start;
    while trial < end {
        let parent = sample_box(&mut rng);
        let (p, p_child) = sample_centroids(&mut rng, &parent, config.placement);
        let l = parent.max_side();
        let u = 1.0 + 2.0 * (1.0 - rng.random::<f64>());
        let q = p + random_unit(&mut rng) * (l / theta * u);
        // Rounding can put the parent right on the boundary; such a draw is
        // not an accepted configuration and is resampled.
        if !matches!(acceptance_raw(l, p.distance(&q), theta), Ok(true)) {
            continue;
        }
        report.trials += 1;
        let l_child = l * scale;
        let child_ok = matches!(acceptance_raw(l_child, p_child.distance(&q), theta), Ok(true));
        if !child_ok {
            report.violations += 1;
            if report.first.is_none() {
                report.first = Some(Counterexample {
                    theta,
                    trial,
                    parent,
                    parent_centroid: p,
                    descendant_max_side: l_child,
                    descendant_centroid: p_child,
                    query: q,
                });
            }
        }
        trial += 1;
    }
    report
}

fn sample_box<R: Rng>(rng: &mut R) -> Box3 {
    let min = Vec3::new(
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
    );
    let sides = Vec3::new(
        rng.random_range(0.1..=10.0),
        rng.random_range(0.1..=10.0),
        rng.random_range(0.1..=10.0),
    );
    Box3 {
        min_corner: min,
        sides,
    }
}

fn sample_in_box<R: Rng>(rng: &mut R, b: &Box3) -> Vec3 {
    let s = b.sides();
    b.min_corner() + Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()).mul_elem(&s)
}

fn sample_centroids<R: Rng>(rng: &mut R, parent: &Box3, placement: CentroidPlacement) -> (Vec3, Vec3) {
    let p = sample_in_box(rng, parent);
    match placement {
        CentroidPlacement::Anywhere => (p, sample_in_box(rng, parent)),
        CentroidPlacement::CenteredQuarter => {
            let radius = epsilon_bound(parent, true);
            loop {
                let eps = random_in_ball(rng) * radius;
                let child = p + eps;
                if parent.contains_closed(&child) {
                    return (p, child);
                }
            }
        }
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-12 && n2 <= 1.0 {
            return v * (1.0 / n2.sqrt());
        }
    }
}

fn random_in_ball<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}
