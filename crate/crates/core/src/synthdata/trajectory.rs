//! Camera flythroughs along root-to-leaf paths of an airway tree.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::render::{Pose, Scene};
use super::tree::{AirwayTree, Branch, Vec3};
use crate::error::{Error, Result};

/// Catmull-Rom spline through the branch end points of one root-to-leaf path.
#[derive(Debug, Clone)]
pub struct PathSpline {
    points: Vec<Vec3>,
    radii: Vec<f64>,
}

impl PathSpline {
    pub fn random_path(tree: &AirwayTree, rng: &mut ChaCha8Rng) -> Self {
        let mut points = vec![tree.root.start];
        let mut radii = vec![tree.root.radius];
        let mut branch: &Branch = &tree.root;
        loop {
            points.push(branch.end());
            radii.push(branch.radius);
            if branch.children.is_empty() {
                break;
            }
            branch = &branch.children[rng.gen_range(0..branch.children.len())];
        }
        PathSpline { points, radii }
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    fn control(&self, i: isize) -> Vec3 {
        let n = self.points.len() as isize;
        if i < 0 {
            self.points[0] * 2.0 - self.points[1]
        } else if i >= n {
            self.points[(n - 1) as usize] * 2.0 - self.points[(n - 2) as usize]
        } else {
            self.points[i as usize]
        }
    }

    /// Position and unit tangent at global parameter `s` in `[0, segments]`.
    pub fn sample(&self, s: f64) -> (Vec3, Vec3) {
        let seg = (s.floor() as isize).clamp(0, self.segments() as isize - 1);
        let t = s - seg as f64;
        let p0 = self.control(seg - 1);
        let p1 = self.control(seg);
        let p2 = self.control(seg + 1);
        let p3 = self.control(seg + 2);
        let (t2, t3) = (t * t, t * t * t);
        let pos = (p1 * 2.0
            + (p2 - p0) * t
            + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2
            + (p3 - p0 + p1 * 3.0 - p2 * 3.0) * t3)
            * 0.5;
        let tangent = ((p2 - p0)
            + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * (2.0 * t)
            + (p3 - p0 + p1 * 3.0 - p2 * 3.0) * (3.0 * t2))
            * 0.5;
        (pos, tangent.normalize())
    }

    /// Radius of the branch traversed at parameter `s`.
    pub fn radius_at(&self, s: f64) -> f64 {
        let seg = (s.floor() as usize).min(self.segments() - 1);
        self.radii[seg + 1]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoseJitter {
    /// Maximum tilt of the view direction away from the path tangent.
    pub max_tilt_deg: f64,
    /// Maximum radial offset from the spline as a fraction of the local radius.
    pub max_offset: f64,
}

impl Default for PoseJitter {
    fn default() -> Self {
        PoseJitter {
            max_tilt_deg: 15.0,
            max_offset: 0.35,
        }
    }
}

fn perpendicular_basis(t: &Vec3) -> (Vec3, Vec3) {
    let helper = if t.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let a = t.cross(&helper).normalize();
    (a, t.cross(&a))
}

/// Draws one camera pose inside the scene: a random path, a position along
/// its spline with a small radial offset, and a tilted, rolled view.
pub fn sample_pose(
    tree: &AirwayTree,
    scene: &Scene,
    jitter: &PoseJitter,
    rng: &mut ChaCha8Rng,
) -> Result<Pose> {
    for _ in 0..256 {
        let path = PathSpline::random_path(tree, rng);
        let s = rng.gen_range(0.05..(path.segments() as f64 - 0.15));
        let (centre, tangent) = path.sample(s);
        let radius = path.radius_at(s);
        let (a, b) = perpendicular_basis(&tangent);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = radius * jitter.max_offset * rng.gen_range(0.0f64..1.0).sqrt();
        let position = centre + (a * phi.cos() + b * phi.sin()) * r;
        let tilt = rng.gen_range(0.0..jitter.max_tilt_deg).to_radians();
        let psi = rng.gen_range(0.0..std::f64::consts::TAU);
        let forward = tangent * tilt.cos() + (a * psi.cos() + b * psi.sin()) * tilt.sin();
        let roll = rng.gen_range(0.0..std::f64::consts::TAU);
        // keep a margin to the wall so no pixel sees a degenerate depth
        let inner = position + forward * (0.05 * radius);
        if scene.contains(&position) && scene.contains(&inner) {
            return Ok(Pose::looking_along(position, forward, roll));
        }
    }
    Err(Error::Data(
        "could not place a camera inside the airway".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::tree::{generate_tree, TreeParams};
    use rand::SeedableRng;

    #[test]
    fn spline_interpolates_its_control_points() {
        let tree = generate_tree(4, 3, &TreeParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let path = PathSpline::random_path(&tree, &mut rng);
        assert_eq!(path.segments(), 3);
        for i in 0..=path.segments() {
            let (p, t) = path.sample(i as f64);
            assert!((p - path.points[i]).norm() < 1e-9);
            assert!((t.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_poses_are_inside() {
        let tree = generate_tree(9, 4, &TreeParams::default()).unwrap();
        let scene = Scene::from_tree(&tree);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let pose = sample_pose(&tree, &scene, &PoseJitter::default(), &mut rng).unwrap();
            assert!(scene.contains(&pose.origin()));
        }
    }
}
