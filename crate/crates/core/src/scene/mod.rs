//! Deterministic 2D world: scene description, SE(2) pose algebra, collision
//! checks, and ray-cast semantic range scans used in place of camera images.

mod pose;
mod shape;

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardOverrides;

pub use pose::{angle_diff, normalize_angle, Action, ActionLimits, Pose};
pub use shape::Shape;

/// Class index into the shared class vocabulary.
pub type ClassId = u32;

/// Class stored for rays that hit nothing. Kept as `None` in memory; the
/// constant documents the wire value used by external tools.
pub const SENTINEL_NONE: Option<ClassId> = None;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    TargetCandidate,
    Occluder,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    #[serde(rename = "class")]
    pub class_id: ClassId,
    /// Natural-language name used as the default query; falls back to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub shape: Shape,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_params: Option<RewardOverrides>,
}

impl SceneObject {
    pub fn new(id: impl Into<String>, class_id: ClassId, shape: Shape, role: Role) -> Self {
        Self {
            id: id.into(),
            class_id,
            label: None,
            shape,
            role,
            reward_params: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }
}

/// A bounded world of convex objects. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile", into = "SceneFile")]
pub struct Scene {
    bounds: Bounds,
    free_radius: f64,
    objects: Vec<SceneObject>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    bounds: Bounds,
    free_radius: f64,
    objects: Vec<SceneObject>,
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;

    fn try_from(f: SceneFile) -> Result<Self> {
        Scene::new(f.bounds, f.free_radius, f.objects)
    }
}

impl From<Scene> for SceneFile {
    fn from(s: Scene) -> Self {
        SceneFile {
            bounds: s.bounds,
            free_radius: s.free_radius,
            objects: s.objects,
        }
    }
}

impl Scene {
    pub fn new(bounds: Bounds, free_radius: f64, objects: Vec<SceneObject>) -> Result<Self> {
        if !(bounds.max[0] > bounds.min[0] && bounds.max[1] > bounds.min[1]) {
            return Err(Error::InvalidScene("empty bounds".into()));
        }
        if !(free_radius >= 0.0) {
            return Err(Error::InvalidScene("negative free radius".into()));
        }
        let mut validated = Vec::with_capacity(objects.len());
        for mut obj in objects {
            if validated.iter().any(|o: &SceneObject| o.id == obj.id) {
                return Err(Error::InvalidScene(format!("duplicate object id `{}`", obj.id)));
            }
            obj.shape = obj.shape.validated()?;
            let (lo, hi) = obj.shape.aabb();
            let eps = 1e-9;
            if lo[0] < bounds.min[0] - eps
                || lo[1] < bounds.min[1] - eps
                || hi[0] > bounds.max[0] + eps
                || hi[1] > bounds.max[1] + eps
            {
                return Err(Error::InvalidScene(format!("object `{}` leaves the bounds", obj.id)));
            }
            validated.push(obj);
        }
        Ok(Self {
            bounds,
            free_radius,
            objects: validated,
        })
    }

    /// A scene with no target is useful for geometry tests; task-level code
    /// calls [`Scene::require_targets`].
    pub fn require_targets(&self) -> Result<()> {
        if self.targets().next().is_none() {
            return Err(Error::InvalidScene("scene has no target-candidate".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.require_targets()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn free_radius(&self) -> f64 {
        self.free_radius
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn targets(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| o.role == Role::TargetCandidate)
    }

    pub fn target_ids(&self) -> Vec<String> {
        self.targets().map(|o| o.id.clone()).collect()
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn target_index(&self, id: &str) -> Result<usize> {
        self.object_index(id)
            .filter(|&i| self.objects[i].role == Role::TargetCandidate)
            .ok_or_else(|| Error::UnknownTarget(id.to_string()))
    }

    /// Copy of the scene with one object removed.
    pub fn without(&self, index: usize) -> Scene {
        let mut s = self.clone();
        s.objects.remove(index);
        s
    }

    /// Nearest intersection along a ray. Returns `(distance, object index)`;
    /// equidistant hits resolve to the lowest index.
    pub fn ray_cast(&self, origin: [f64; 2], bearing: f64, max_range: f64) -> Option<(f64, usize)> {
        let dir = [bearing.cos(), bearing.sin()];
        let mut best: Option<(f64, usize)> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some(t) = obj.shape.ray_hit(origin, dir) {
                if t < max_range && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    pub fn render_scan(&self, p: &Pose, cam: &CameraModel) -> Result<Observation> {
        if !self.bounds.contains(p.position()) {
            return Err(Error::PoseOutOfBounds { x: p.x, y: p.y });
        }
        let mut depths = Vec::with_capacity(cam.n_rays);
        let mut classes = Vec::with_capacity(cam.n_rays);
        for i in 0..cam.n_rays {
            match self.ray_cast(p.position(), cam.ray_bearing(p.theta, i), cam.max_range) {
                Some((t, idx)) => {
                    depths.push(t);
                    classes.push(Some(self.objects[idx].class_id));
                }
                None => {
                    depths.push(cam.max_range);
                    classes.push(SENTINEL_NONE);
                }
            }
        }
        Ok(Observation { depths, classes })
    }

    /// Clearance of a position: distance to the nearest object surface.
    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        self.objects
            .iter()
            .map(|o| o.shape.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_position_free(&self, p: [f64; 2]) -> bool {
        let r = self.free_radius;
        let b = &self.bounds;
        if p[0] - r < b.min[0] || p[0] + r > b.max[0] || p[1] - r < b.min[1] || p[1] + r > b.max[1] {
            return false;
        }
        self.clearance(p) >= r
    }

    pub fn is_collision_free(&self, p: &Pose) -> bool {
        self.is_position_free(p.position())
    }

    /// Whether the straight segment between two positions stays free,
    /// checked at `step` spacing.
    pub fn is_segment_free(&self, a: [f64; 2], b: [f64; 2], step: f64) -> bool {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).all(|k| {
            let t = k as f64 / n as f64;
            self.is_position_free([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        })
    }
}

/// Pinhole-like fan of rays spanning the horizontal field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fov: f64,
    pub n_rays: usize,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fov: FRAC_PI_2,
            n_rays: 32,
            max_range: 3.0,
        }
    }
}

impl CameraModel {
    pub fn new(fov: f64, n_rays: usize, max_range: f64) -> Result<Self> {
        if !(fov > 0.0 && fov <= std::f64::consts::PI) {
            return Err(Error::InvalidParams(format!("fov {fov} outside (0, π]")));
        }
        if n_rays < 8 {
            return Err(Error::InvalidParams(format!("n_rays {n_rays} < 8")));
        }
        if !(max_range > 0.0) {
            return Err(Error::InvalidParams("max_range must be positive".into()));
        }
        Ok(Self { fov, n_rays, max_range })
    }

    /// Bearing of ray `i`; both FOV edges are included.
    pub fn ray_bearing(&self, heading: f64, i: usize) -> f64 {
        heading - self.fov / 2.0 + i as f64 * self.fov / (self.n_rays - 1) as f64
    }

    pub fn in_fov(&self, heading: f64, bearing: f64) -> bool {
        angle_diff(bearing, heading).abs() <= self.fov / 2.0
    }
}

/// Semantic range scan: per-ray depth and hit class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub depths: Vec<f64>,
    pub classes: Vec<Option<ClassId>>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn empty_scene() -> Scene {
        Scene::new(Bounds::new([0.0, 0.0], [4.0, 4.0]), 0.1, vec![]).unwrap()
    }

    #[test]
    fn empty_scene_scan_is_all_max_range() {
        let cam = CameraModel::default();
        let obs = empty_scene().render_scan(&Pose::new(2.0, 2.0, 0.3), &cam).unwrap();
        assert!(obs.depths.iter().all(|&d| d == cam.max_range));
        assert!(obs.classes.iter().all(|c| c.is_none()));
    }

    #[test]
    fn perpendicular_wall_depth() {
        let wall = SceneObject::new("wall", 0, Shape::rect([3.0, 0.0], [3.1, 4.0]), Role::Wall);
        let scene = Scene::new(Bounds::new([0.0, 0.0], [4.0, 4.0]), 0.1, vec![wall]).unwrap();
        // odd ray count puts a ray exactly on the heading
        let cam = CameraModel::new(FRAC_PI_2, 33, 5.0).unwrap();
        let obs = scene.render_scan(&Pose::new(1.0, 2.0, 0.0), &cam).unwrap();
        assert!((obs.depths[16] - 2.0).abs() < 1e-9);
        assert_eq!(obs.classes[16], Some(0));
    }

    #[test]
    fn out_of_bounds_pose() {
        let err = empty_scene().render_scan(&Pose::new(5.0, 1.0, 0.0), &CameraModel::default());
        assert!(matches!(err, Err(Error::PoseOutOfBounds { .. })));
    }

    #[test]
    fn ray_ties_go_to_lowest_index() {
        let a = SceneObject::new("a", 1, Shape::rect([2.0, 1.0], [2.5, 3.0]), Role::Occluder);
        let b = SceneObject::new("b", 2, Shape::rect([2.0, 1.5], [2.5, 2.5]), Role::Occluder);
        let scene = Scene::new(Bounds::new([0.0, 0.0], [4.0, 4.0]), 0.1, vec![a, b]).unwrap();
        let (t, idx) = scene.ray_cast([1.0, 2.0], 0.0, 5.0).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert_eq!(idx, 0);
    }

    #[test]
    fn collision_checks() {
        let occ = SceneObject::new("box", 1, Shape::rect([1.0, 1.0], [2.0, 2.0]), Role::Occluder);
        let disc = SceneObject::new("can", 3, Shape::disc([3.0, 3.0], 0.2), Role::TargetCandidate);
        let scene = Scene::new(Bounds::new([0.0, 0.0], [4.0, 4.0]), 0.1, vec![occ, disc]).unwrap();
        assert!(empty_scene().is_collision_free(&Pose::new(2.0, 2.0, 0.0)));
        assert!(!scene.is_collision_free(&Pose::new(1.5, 1.5, 0.0)));
        // analytic: centre-to-boundary distance = free_radius + 1e-3
        let d = 0.2 + 0.1 + 1e-3;
        assert!(scene.is_collision_free(&Pose::new(3.0 - d, 3.0, 0.0)));
        assert!(!scene.is_collision_free(&Pose::new(3.0 - d + 2e-3, 3.0, 0.0)));
        // footprint must stay within bounds
        assert!(!scene.is_collision_free(&Pose::new(0.05, 2.0, PI)));
    }

    #[test]
    fn scene_json_round_trip() {
        let json = r#"{
            "bounds": {"min": [0, 0], "max": [3, 3]},
            "free_radius": 0.1,
            "objects": [
                {"id": "banana", "class": 3, "role": "target-candidate",
                 "shape": {"kind": "disc", "params": {"center": [1, 1], "radius": 0.1}},
                 "reward_params": {"b_sat": 0.2}},
                {"id": "box", "class": 1, "role": "occluder",
                 "shape": {"kind": "polygon", "params": {"vertices": [[2,2],[2,2.5],[2.5,2.5],[2.5,2]]}}}
            ]
        }"#;
        let scene = Scene::from_json(json).unwrap();
        assert_eq!(scene.objects().len(), 2);
        assert_eq!(scene.target_ids(), vec!["banana".to_string()]);
        let back = Scene::from_json(&scene.to_json()).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn scene_rejects_invalid() {
        let dup = vec![
            SceneObject::new("x", 1, Shape::disc([1.0, 1.0], 0.1), Role::TargetCandidate),
            SceneObject::new("x", 1, Shape::disc([2.0, 1.0], 0.1), Role::TargetCandidate),
        ];
        assert!(Scene::new(Bounds::new([0.0, 0.0], [3.0, 3.0]), 0.1, dup).is_err());
        let outside = vec![SceneObject::new(
            "x",
            1,
            Shape::disc([2.95, 1.0], 0.1),
            Role::TargetCandidate,
        )];
        assert!(Scene::new(Bounds::new([0.0, 0.0], [3.0, 3.0]), 0.1, outside).is_err());
        let no_target = r#"{"bounds": {"min": [0, 0], "max": [3, 3]}, "free_radius": 0.1, "objects": []}"#;
        assert!(Scene::from_json(no_target).is_err());
    }
}
