//! Ground-truth localization reward computed from visibility geometry. Plays
//! the role of an open-vocabulary detector: confidence falls off with
//! occlusion and distance, and the "bounding box" is the visible angular
//! extent relative to the field of view.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scene::{CameraModel, Pose, Scene};

/// Angular samples taken across a target's subtended angle.
pub const VISIBILITY_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityReport {
    pub target_id: String,
    /// Unoccluded, in-FOV share of the target's angular extent.
    pub visible_fraction: f64,
    pub angular_extent_visible: f64,
    /// Pose to target centroid, meters.
    pub distance: f64,
    pub in_fov: bool,
}

/// Detector-proxy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub d_near: f64,
    pub d_scale: f64,
    pub b_sat: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            d_near: 0.5,
            d_scale: 1.5,
            b_sat: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    pub conf_min: f64,
    pub bbox_min: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self {
            conf_min: 0.7,
            bbox_min: 0.15,
        }
    }
}

impl SuccessThresholds {
    pub fn new(conf_min: f64, bbox_min: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&conf_min) || !(0.0..=1.0).contains(&bbox_min) {
            return Err(crate::Error::InvalidParams("thresholds must lie in [0, 1]".into()));
        }
        Ok(Self { conf_min, bbox_min })
    }
}

/// Per-object overrides read from the scene file's `reward_params` entry.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_sat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_min: Option<f64>,
}

impl RewardOverrides {
    pub fn apply(&self, base: RewardParams) -> RewardParams {
        RewardParams {
            d_near: self.d_near.unwrap_or(base.d_near),
            d_scale: self.d_scale.unwrap_or(base.d_scale),
            b_sat: self.b_sat.unwrap_or(base.b_sat),
        }
    }

    pub fn apply_thresholds(&self, base: SuccessThresholds) -> SuccessThresholds {
        SuccessThresholds {
            conf_min: self.conf_min.unwrap_or(base.conf_min),
            bbox_min: self.bbox_min.unwrap_or(base.bbox_min),
        }
    }
}

/// Reward parameters and thresholds resolved for one target.
pub fn resolve_params(
    scene: &Scene,
    target_id: &str,
    base: RewardParams,
    thresholds: SuccessThresholds,
) -> Result<(RewardParams, SuccessThresholds)> {
    let obj = &scene.objects()[scene.target_index(target_id)?];
    Ok(match &obj.reward_params {
        Some(o) => (o.apply(base), o.apply_thresholds(thresholds)),
        None => (base, thresholds),
    })
}

pub fn visibility(scene: &Scene, p: &Pose, cam: &CameraModel, target_id: &str) -> Result<VisibilityReport> {
    let idx = scene.target_index(target_id)?;
    let shape = &scene.objects()[idx].shape;
    let origin = p.position();
    let distance = p.distance_to(shape.centroid());
    let hidden = VisibilityReport {
        target_id: target_id.to_string(),
        visible_fraction: 0.0,
        angular_extent_visible: 0.0,
        distance,
        in_fov: false,
    };
    let Some((lo, hi)) = shape.angular_span(origin) else {
        return Ok(hidden);
    };
    let span = hi - lo;
    let mut any_in_fov = false;
    let mut visible = 0usize;
    for k in 0..VISIBILITY_SAMPLES {
        let bearing = lo + (k as f64 + 0.5) / VISIBILITY_SAMPLES as f64 * span;
        if !cam.in_fov(p.theta, bearing) {
            continue;
        }
        any_in_fov = true;
        if let Some((_, hit)) = scene.ray_cast(origin, bearing, cam.max_range) {
            if hit == idx {
                visible += 1;
            }
        }
    }
    if !any_in_fov {
        return Ok(hidden);
    }
    let visible_fraction = visible as f64 / VISIBILITY_SAMPLES as f64;
    Ok(VisibilityReport {
        target_id: target_id.to_string(),
        visible_fraction,
        angular_extent_visible: (visible_fraction * span).min(cam.fov),
        distance,
        in_fov: true,
    })
}

pub fn detection_confidence(rep: &VisibilityReport, _cam: &CameraModel, params: &RewardParams) -> f64 {
    if !rep.in_fov {
        return 0.0;
    }
    let falloff = (-(rep.distance - params.d_near).max(0.0) / params.d_scale).exp();
    (rep.visible_fraction * falloff).clamp(0.0, 1.0)
}

pub fn bbox_proportion(rep: &VisibilityReport, cam: &CameraModel) -> f64 {
    if !rep.in_fov {
        return 0.0;
    }
    (rep.angular_extent_visible / cam.fov).clamp(0.0, 1.0)
}

/// Confidence scaled by the saturating box-size term.
pub fn reward_from_report(rep: &VisibilityReport, cam: &CameraModel, params: &RewardParams) -> f64 {
    let conf = detection_confidence(rep, cam, params);
    let bbox = bbox_proportion(rep, cam);
    (conf * (bbox / params.b_sat).min(1.0)).clamp(0.0, 1.0)
}

pub fn ground_truth_reward(
    scene: &Scene,
    p: &Pose,
    cam: &CameraModel,
    target_id: &str,
    base: &RewardParams,
) -> Result<f64> {
    let (params, _) = resolve_params(scene, target_id, *base, SuccessThresholds::default())?;
    let rep = visibility(scene, p, cam, target_id)?;
    Ok(reward_from_report(&rep, cam, &params))
}

/// Inclusive threshold test on confidence and box proportion.
pub fn is_success(
    rep: &VisibilityReport,
    cam: &CameraModel,
    thresholds: &SuccessThresholds,
    params: &RewardParams,
) -> bool {
    detection_confidence(rep, cam, params) >= thresholds.conf_min && bbox_proportion(rep, cam) >= thresholds.bbox_min
}

/// Resolves per-object parameters then applies [`is_success`].
pub fn is_success_at(
    scene: &Scene,
    p: &Pose,
    cam: &CameraModel,
    target_id: &str,
    base: &RewardParams,
    thresholds: &SuccessThresholds,
) -> Result<bool> {
    let (params, th) = resolve_params(scene, target_id, *base, *thresholds)?;
    let rep = visibility(scene, p, cam, target_id)?;
    Ok(is_success(&rep, cam, &th, &params))
}
