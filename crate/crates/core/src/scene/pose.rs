use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Signed smallest difference `a - b`, wrapped into (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Planar camera pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Applies a body-frame motion: `self ⊕ a`.
    pub fn compose(&self, a: &Action) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose {
            x: self.x + c * a.dx - s * a.dy,
            y: self.y + s * a.dx + c * a.dy,
            theta: normalize_angle(self.theta + a.dtheta),
        }
    }

    /// The body-frame motion that takes `self` to `to`; inverse of [`Pose::compose`].
    pub fn relative_action(&self, to: &Pose) -> Action {
        let (s, c) = self.theta.sin_cos();
        let wx = to.x - self.x;
        let wy = to.y - self.y;
        Action {
            dx: c * wx + s * wy,
            dy: -s * wx + c * wy,
            dtheta: angle_diff(to.theta, self.theta),
        }
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.x).hypot(p[1] - self.y)
    }

    /// Heading that looks from this pose's position at `p`.
    pub fn bearing_to(&self, p: [f64; 2]) -> f64 {
        (p[1] - self.y).atan2(p[0] - self.x)
    }
}

/// Body-frame relative motion: forward, left, counter-clockwise turn.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        dx: 0.0,
        dy: 0.0,
        dtheta: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self { dx, dy, dtheta }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.dtheta]
    }

    pub fn translation_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn scaled(&self, s: f64) -> Action {
        Action::new(self.dx * s, self.dy * s, self.dtheta * s)
    }

    /// Concatenation: executing `self` then `next` equals executing the result.
    pub fn then(&self, next: &Action) -> Action {
        let as_pose = Pose {
            x: self.dx,
            y: self.dy,
            theta: self.dtheta,
        };
        let p = as_pose.compose(next);
        Action::new(p.x, p.y, p.theta)
    }
}

/// Per-component action bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionLimits {
    /// Bound on |dx| and |dy|, meters.
    pub lin: f64,
    /// Bound on |dtheta|, radians.
    pub ang: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        Self {
            lin: 0.05,
            ang: PI / 12.0,
        }
    }
}

impl ActionLimits {
    pub fn clamp(&self, a: &Action) -> Action {
        Action::new(
            a.dx.clamp(-self.lin, self.lin),
            a.dy.clamp(-self.lin, self.lin),
            a.dtheta.clamp(-self.ang, self.ang),
        )
    }

    pub fn contains(&self, a: &Action) -> bool {
        const SLACK: f64 = 1e-12;
        a.dx.abs() <= self.lin + SLACK && a.dy.abs() <= self.lin + SLACK && a.dtheta.abs() <= self.ang + SLACK
    }

    /// Bounds as a per-component array, matching [`Action::to_array`].
    pub fn as_array(&self) -> [f64; 3] {
        [self.lin, self.lin, self.ang]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && angle_diff(a.theta, b.theta).abs() <= tol
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
        assert_eq!(normalize_angle(0.0), 0.0);
    }

    #[test]
    fn compose_identity_heading() {
        let p = Pose::new(0.0, 0.0, 0.0).compose(&Action::new(1.0, 0.0, 0.0));
        assert!(close(&p, &Pose::new(1.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn compose_quarter_turn() {
        let p = Pose::new(0.0, 0.0, PI / 2.0).compose(&Action::new(1.0, 0.0, 0.0));
        assert!(close(&p, &Pose::new(0.0, 1.0, PI / 2.0), 1e-15));
    }

    #[test]
    fn compose_matches_rotation_matrices() {
        // Homogeneous 3x3 matrices as an independent route.
        fn mat(x: f64, y: f64, t: f64) -> [[f64; 3]; 3] {
            let (s, c) = t.sin_cos();
            [[c, -s, x], [s, c, y], [0.0, 0.0, 1.0]]
        }
        fn mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
            let mut r = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        r[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            r
        }
        let m = mul(mat(1.0, 1.0, PI / 4.0), mat(0.1, 0.0, PI / 8.0));
        let expected = Pose::new(m[0][2], m[1][2], m[1][0].atan2(m[0][0]));
        let got = Pose::new(1.0, 1.0, PI / 4.0).compose(&Action::new(0.1, 0.0, PI / 8.0));
        assert!(close(&got, &expected, 1e-14), "{got:?} vs {expected:?}");
        assert!((got.theta - 3.0 * PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn relative_action_examples() {
        let a = Pose::new(0.0, 0.0, 0.0).relative_action(&Pose::new(1.0, 0.0, 0.0));
        assert_eq!(a, Action::new(1.0, 0.0, 0.0));

        let from = Pose::new(0.0, 0.0, PI / 2.0);
        let to = Pose::new(0.0, 1.0, PI / 2.0);
        let a = from.relative_action(&to);
        assert!((a.dx - 1.0).abs() < 1e-15 && a.dy.abs() < 1e-15 && a.dtheta == 0.0);
        assert!(close(&from.compose(&a), &to, 1e-12));

        let p = Pose::new(0.3, -1.2, 2.0);
        assert_eq!(p.relative_action(&p), Action::ZERO);
    }

    #[test]
    fn concatenation_is_sequential_composition() {
        let p = Pose::new(0.2, 0.4, -2.9);
        let a = Action::new(0.05, -0.02, 0.3);
        let b = Action::new(-0.01, 0.04, -0.7);
        assert!(close(&p.compose(&a).compose(&b), &p.compose(&a.then(&b)), 1e-14));
    }

    #[test]
    fn limits_clamp() {
        let l = ActionLimits { lin: 0.1, ang: 0.5 };
        let a = l.clamp(&Action::new(0.3, -0.2, -1.0));
        assert_eq!(a, Action::new(0.1, -0.1, -0.5));
        assert!(l.contains(&a));
    }
}
