//! Procedural bifurcating airway trees.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub type Vec3 = Vector3<f64>;

pub const MAX_LEVELS: usize = 6;

/// Shape parameters of the generator; lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub trunk_length: f64,
    pub trunk_radius: f64,
    pub radius_decay: f64,
    pub length_decay: f64,
    /// Half-angle between the two children, in degrees.
    pub branch_angle_deg: f64,
    pub angle_jitter_deg: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            trunk_length: 90.0,
            trunk_radius: 8.0,
            radius_decay: 0.75,
            length_decay: 0.8,
            branch_angle_deg: 32.0,
            angle_jitter_deg: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub start: Vec3,
    /// Unit vector along the branch axis.
    pub direction: Vec3,
    pub length: f64,
    pub radius: f64,
    pub children: Vec<Branch>,
}

impl Branch {
    pub fn end(&self) -> Vec3 {
        self.start + self.direction * self.length
    }

    pub fn count(&self) -> usize {
        1 + self.children.iter().map(Branch::count).sum::<usize>()
    }

    /// Depth-first pre-order traversal.
    pub fn visit<'a>(&'a self, out: &mut Vec<&'a Branch>) {
        out.push(self);
        for c in &self.children {
            c.visit(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirwayTree {
    pub seed: u64,
    pub levels: usize,
    pub root: Branch,
}

impl AirwayTree {
    pub fn branches(&self) -> Vec<&Branch> {
        let mut out = Vec::new();
        self.root.visit(&mut out);
        out
    }

    pub fn branch_count(&self) -> usize {
        self.root.count()
    }
}

fn any_perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    v.cross(&helper).normalize()
}

fn grow(
    rng: &mut ChaCha8Rng,
    params: &TreeParams,
    start: Vec3,
    direction: Vec3,
    length: f64,
    radius: f64,
    remaining: usize,
) -> Branch {
    let mut branch = Branch {
        start,
        direction,
        length,
        radius,
        children: Vec::new(),
    };
    if remaining == 0 {
        return branch;
    }
    let end = branch.end();
    // plane of the bifurcation: a random azimuth around the parent axis
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let base = any_perpendicular(&direction);
    let spin = Rotation3::from_axis_angle(&Unit::new_normalize(direction), azimuth);
    let bend_axis = Unit::new_normalize(spin * base);
    for side in [-1.0, 1.0] {
        let jitter = rng.gen_range(-params.angle_jitter_deg..=params.angle_jitter_deg);
        let angle = (params.branch_angle_deg + jitter).to_radians() * side;
        let child_dir = (Rotation3::from_axis_angle(&bend_axis, angle) * direction).normalize();
        let child_radius = radius * params.radius_decay * rng.gen_range(0.95..1.0);
        let child_length = length * params.length_decay * rng.gen_range(0.9..1.1);
        branch.children.push(grow(
            rng,
            params,
            end,
            child_dir,
            child_length,
            child_radius,
            remaining - 1,
        ));
    }
    branch
}

/// Deterministic bifurcating tree with `levels` generations (1 = trunk only).
pub fn generate_tree(seed: u64, levels: usize, params: &TreeParams) -> Result<AirwayTree> {
    ensure!(
        (1..=MAX_LEVELS).contains(&levels),
        Config,
        "tree levels must lie in [1, {MAX_LEVELS}], got {levels}"
    );
    ensure!(
        params.trunk_length > 0.0 && params.trunk_radius > 0.0,
        Config,
        "trunk length and radius must be positive"
    );
    ensure!(
        params.radius_decay > 0.0 && params.radius_decay < 1.0,
        Config,
        "radius decay must lie in (0, 1)"
    );
    ensure!(
        params.length_decay > 0.0,
        Config,
        "length decay must be positive"
    );
    ensure!(
        params.angle_jitter_deg >= 0.0 && params.angle_jitter_deg < params.branch_angle_deg,
        Config,
        "angle jitter must be non-negative and smaller than the branch angle"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = grow(
        &mut rng,
        params,
        Vec3::zeros(),
        Vec3::z(),
        params.trunk_length,
        params.trunk_radius,
        levels - 1,
    );
    Ok(AirwayTree { seed, levels, root })
}
