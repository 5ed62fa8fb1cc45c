use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Convex object footprint. Polygons are stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum Shape {
    Disc { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    pub fn disc(center: [f64; 2], radius: f64) -> Self {
        Shape::Disc { center, radius }
    }

    /// Axis-aligned rectangle given by two opposite corners.
    pub fn rect(min: [f64; 2], max: [f64; 2]) -> Self {
        Shape::Polygon {
            vertices: vec![min, [max[0], min[1]], max, [min[0], max[1]]],
        }
    }

    /// Checks convexity and positive area; reorders polygon vertices to CCW.
    pub fn validated(self) -> Result<Self> {
        match self {
            Shape::Disc { center, radius } => {
                if !(radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidScene(format!("degenerate disc radius {radius}")));
                }
                Ok(Shape::Disc { center, radius })
            }
            Shape::Polygon { mut vertices } => {
                let n = vertices.len();
                if n < 3 {
                    return Err(Error::InvalidScene("polygon needs at least 3 vertices".into()));
                }
                let area = signed_area(&vertices);
                if area.abs() < 1e-12 {
                    return Err(Error::InvalidScene("polygon has zero area".into()));
                }
                if area < 0.0 {
                    vertices.reverse();
                }
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    if cross(sub(b, a), sub(c, b)) < -1e-12 {
                        return Err(Error::InvalidScene("polygon is not convex".into()));
                    }
                }
                Ok(Shape::Polygon { vertices })
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Disc { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Polygon { vertices } => signed_area(vertices).abs(),
        }
    }

    pub fn centroid(&self) -> [f64; 2] {
        match self {
            Shape::Disc { center, .. } => *center,
            Shape::Polygon { vertices } => {
                let a = signed_area(vertices);
                let n = vertices.len();
                let (mut cx, mut cy) = (0.0, 0.0);
                for i in 0..n {
                    let p = vertices[i];
                    let q = vertices[(i + 1) % n];
                    let w = cross(p, q);
                    cx += (p[0] + q[0]) * w;
                    cy += (p[1] + q[1]) * w;
                }
                [cx / (6.0 * a), cy / (6.0 * a)]
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn aabb(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Shape::Disc { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Smallest `t >= 0` with `origin + t·dir` on the boundary, for unit `dir`.
    pub fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        match self {
            Shape::Disc { center, radius } => {
                let oc = sub(origin, *center);
                let b = dot(dir, oc);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t1 = -b - sq;
                if t1 >= 0.0 {
                    return Some(t1);
                }
                let t2 = -b + sq;
                (t2 >= 0.0).then_some(t2)
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let mut best: Option<f64> = None;
                for i in 0..n {
                    let p = vertices[i];
                    let e = sub(vertices[(i + 1) % n], p);
                    let denom = cross(dir, e);
                    if denom.abs() < 1e-15 {
                        continue;
                    }
                    let op = sub(p, origin);
                    let t = cross(op, e) / denom;
                    let s = cross(op, dir) / denom;
                    if t >= 0.0 && (0.0..=1.0).contains(&s) && best.map_or(true, |b| t < b) {
                        best = Some(t);
                    }
                }
                best
            }
        }
    }

    /// Signed distance from `p` to the shape (negative inside).
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Shape::Disc { center, radius } => {
                let d = sub(p, *center);
                d[0].hypot(d[1]) - radius
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let mut inside = true;
                let mut max_edge = f64::NEG_INFINITY;
                let mut min_dist = f64::INFINITY;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let e = sub(b, a);
                    let len = e[0].hypot(e[1]);
                    // Outward normal distance for a CCW polygon.
                    let side = -cross(e, sub(p, a)) / len;
                    if side > 0.0 {
                        inside = false;
                    }
                    max_edge = max_edge.max(side);
                    let t = (dot(sub(p, a), e) / (len * len)).clamp(0.0, 1.0);
                    let q = [a[0] + t * e[0], a[1] + t * e[1]];
                    min_dist = min_dist.min((p[0] - q[0]).hypot(p[1] - q[1]));
                }
                if inside {
                    max_edge
                } else {
                    min_dist
                }
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.signed_distance(p) < 0.0
    }

    /// Angular interval `(lo, hi)` subtended as seen from `p`, expressed as
    /// absolute bearings with `hi - lo < π`. `None` if `p` is inside.
    pub fn angular_span(&self, p: [f64; 2]) -> Option<(f64, f64)> {
        if self.contains(p) {
            return None;
        }
        match self {
            Shape::Disc { center, radius } => {
                let d = sub(*center, p);
                let dist = d[0].hypot(d[1]);
                if dist <= *radius {
                    return None;
                }
                let mid = d[1].atan2(d[0]);
                let half = (radius / dist).asin();
                Some((mid - half, mid + half))
            }
            Shape::Polygon { vertices } => {
                let c = self.centroid();
                let mid = (c[1] - p[1]).atan2(c[0] - p[0]);
                let mut lo = 0.0f64;
                let mut hi = 0.0f64;
                for v in vertices {
                    let b = (v[1] - p[1]).atan2(v[0] - p[0]);
                    let rel = super::pose::angle_diff(b, mid);
                    lo = lo.min(rel);
                    hi = hi.max(rel);
                }
                Some((mid + lo, mid + hi))
            }
        }
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>() / 2.0
}
