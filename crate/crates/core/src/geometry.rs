//! Planar vector algebra and the closed-form least-squares 2D similarity fit.
//!
//! The fit recovers the scale and rotation that best maps a centered template
//! point set onto a centered current point set. With `M = [[a, -b], [b, a]]`
//! the objective `sum |M p' - p|^2` is quadratic in `(a, b)`, so the minimizer
//! comes from two scalar sums without any matrix decomposition.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::ids::RobotId;

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from the x axis.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product of `(self, 0)` and `(other, 0)`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counterclockwise rotation by `angle` radians.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        rhs * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x / rhs, self.y / rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Linear part of a planar similarity: uniform scale `s` and rotation `phi`.
///
/// As a matrix this is `[[s cos phi, -s sin phi], [s sin phi, s cos phi]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity2 {
    pub s: f64,
    pub phi: f64,
}

impl Similarity2 {
    pub const IDENTITY: Similarity2 = Similarity2 { s: 1.0, phi: 0.0 };

    /// Builds a similarity, normalizing `phi` into `[-pi, pi)`.
    pub fn new(s: f64, phi: f64) -> Self {
        debug_assert!(s > 0.0, "similarity scale must be positive");
        Self {
            s,
            phi: normalize_angle(phi),
        }
    }

    /// Row-major 2x2 matrix.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (sn, cs) = self.phi.sin_cos();
        [[self.s * cs, -self.s * sn], [self.s * sn, self.s * cs]]
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Similarity2) -> Similarity2 {
        Similarity2::new(self.s * first.s, self.phi + first.phi)
    }

    pub fn inverse(&self) -> Similarity2 {
        Similarity2::new(1.0 / self.s, -self.phi)
    }
}

/// Ordered `(robot id, point)` pairs fed to the fitting routines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<(RobotId, Vec2)>,
}

impl PointSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, rejecting duplicate ids.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = (RobotId, Vec2)>,
    {
        let mut set = PointSet::new();
        for (id, p) in pairs {
            set.push(id, p)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, id: RobotId, p: Vec2) -> Result<(), GeometryError> {
        if self.points.iter().any(|(existing, _)| *existing == id) {
            return Err(GeometryError::DuplicateId(id));
        }
        self.points.push((id, p));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(RobotId, Vec2)> {
        self.points.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = RobotId> + '_ {
        self.points.iter().map(|(id, _)| *id)
    }

    pub fn get(&self, id: RobotId) -> Option<Vec2> {
        self.points
            .iter()
            .find(|(other, _)| *other == id)
            .map(|(_, p)| *p)
    }

    /// Applies `f` to every point, keeping ids and order.
    pub fn map<F: FnMut(Vec2) -> Vec2>(&self, mut f: F) -> PointSet {
        PointSet {
            points: self.points.iter().map(|(id, p)| (*id, f(*p))).collect(),
        }
    }
}

impl<'a> IntoIterator for &'a PointSet {
    type Item = &'a (RobotId, Vec2);
    type IntoIter = std::slice::Iter<'a, (RobotId, Vec2)>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

pub fn centroid(points: &PointSet) -> Result<Vec2, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptySet);
    }
    let sum = points.iter().fold(Vec2::ZERO, |acc, (_, p)| acc + *p);
    Ok(sum / points.len() as f64)
}

/// Translates the set so its centroid is the origin. Returns the centered set
/// and the removed centroid.
pub fn center(points: &PointSet) -> Result<(PointSet, Vec2), GeometryError> {
    let c = centroid(points)?;
    Ok((points.map(|p| p - c), c))
}

/// Least-squares similarity taking `template_centered` onto `current_centered`.
///
/// Both sets must already be centered and list the same ids in the same order.
pub fn fit_similarity(
    template_centered: &PointSet,
    current_centered: &PointSet,
) -> Result<Similarity2, GeometryError> {
    if template_centered.len() != current_centered.len()
        || template_centered
            .ids()
            .zip(current_centered.ids())
            .any(|(a, b)| a != b)
    {
        return Err(GeometryError::IdMismatch);
    }
    if template_centered.len() < 2 {
        return Err(GeometryError::TooFewPoints(template_centered.len()));
    }

    let mut energy = 0.0;
    let mut dot = 0.0;
    let mut cross = 0.0;
    for ((_, t), (_, c)) in template_centered.iter().zip(current_centered.iter()) {
        energy += t.norm_squared();
        dot += t.dot(*c);
        cross += t.cross(*c);
    }
    if energy < 1e-12 * template_centered.len() as f64 {
        return Err(GeometryError::DegenerateTemplate);
    }

    let a = dot / energy;
    let b = cross / energy;
    let s = a.hypot(b);
    if s == 0.0 {
        // current set collapsed onto its centroid; any rotation is optimal
        return Err(GeometryError::DegenerateCurrent);
    }
    Ok(Similarity2::new(s, b.atan2(a)))
}

pub fn apply_similarity(h: &Similarity2, p: Vec2) -> Vec2 {
    p.rotate(h.phi) * h.s
}

/// Sum of squared distances between `h * template` and `current`.
pub fn fit_residual(h: &Similarity2, template_centered: &PointSet, current_centered: &PointSet) -> f64 {
    template_centered
        .iter()
        .zip(current_centered.iter())
        .map(|((_, t), (_, c))| (apply_similarity(h, *t) - *c).norm_squared())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(points: &[(f64, f64)]) -> PointSet {
        PointSet::from_pairs(
            points
                .iter()
                .enumerate()
                .map(|(i, (x, y))| (RobotId(i as u32), Vec2::new(*x, *y))),
        )
        .unwrap()
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_eq!(normalize_angle(-PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(normalize_angle(0.0), 0.0);
        let a = normalize_angle(-1e-18);
        assert!((-PI..PI).contains(&a));
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&set(&[(0.0, 0.0), (2.0, 0.0)])).unwrap(), Vec2::new(1.0, 0.0));
        assert_eq!(centroid(&set(&[(1.0, 1.0)])).unwrap(), Vec2::new(1.0, 1.0));
        assert_eq!(
            centroid(&set(&[(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)])).unwrap(),
            Vec2::ZERO
        );
        assert_eq!(centroid(&PointSet::new()), Err(GeometryError::EmptySet));
    }

    #[test]
    fn center_examples() {
        let (c, removed) = center(&set(&[(2.0, 0.0), (4.0, 0.0)])).unwrap();
        assert_eq!(c, set(&[(-1.0, 0.0), (1.0, 0.0)]));
        assert_eq!(removed, Vec2::new(3.0, 0.0));

        let already = set(&[(-1.0, 2.0), (1.0, -2.0)]);
        let (c, removed) = center(&already).unwrap();
        assert_eq!(c, already);
        assert_eq!(removed, Vec2::ZERO);
        assert!(center(&PointSet::new()).is_err());
    }

    #[test]
    fn fit_identity_and_rotation() {
        let t = set(&[(1.0, 0.0), (-1.0, 0.0)]);
        let h = fit_similarity(&t, &t).unwrap();
        assert!((h.s - 1.0).abs() < 1e-15 && h.phi.abs() < 1e-15);

        let (t, _) = center(&set(&[(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)])).unwrap();
        let rotated = t.map(|p| p.rotate(PI / 2.0));
        let h = fit_similarity(&t, &rotated).unwrap();
        assert!((h.s - 1.0).abs() < 1e-12);
        assert!((h.phi - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let zeros = set(&[(0.0, 0.0), (0.0, 0.0)]);
        let other = set(&[(1.0, 0.0), (-1.0, 0.0)]);
        assert_eq!(fit_similarity(&zeros, &other), Err(GeometryError::DegenerateTemplate));
        let short = set(&[(1.0, 0.0)]);
        assert_eq!(fit_similarity(&short, &other), Err(GeometryError::IdMismatch));
        let renamed = PointSet::from_pairs([
            (RobotId(7), Vec2::new(1.0, 0.0)),
            (RobotId(1), Vec2::new(-1.0, 0.0)),
        ])
        .unwrap();
        assert_eq!(fit_similarity(&renamed, &other), Err(GeometryError::IdMismatch));
        assert_eq!(fit_similarity(&other, &zeros), Err(GeometryError::DegenerateCurrent));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = PointSet::from_pairs([(RobotId(1), Vec2::ZERO), (RobotId(1), Vec2::ZERO)]);
        assert_eq!(r, Err(GeometryError::DuplicateId(RobotId(1))));
    }

    #[test]
    fn apply_examples() {
        assert_eq!(apply_similarity(&Similarity2::IDENTITY, Vec2::new(3.0, 4.0)), Vec2::new(3.0, 4.0));
        let p = apply_similarity(&Similarity2::new(2.0, PI), Vec2::new(1.0, 0.0));
        assert!((p - Vec2::new(-2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn apply_matches_explicit_matrix() {
        let h = Similarity2::new(1.37, -2.1);
        let p = Vec2::new(-0.4, 2.5);
        let m = [
            [1.37 * (-2.1f64).cos(), -1.37 * (-2.1f64).sin()],
            [1.37 * (-2.1f64).sin(), 1.37 * (-2.1f64).cos()],
        ];
        let expected = Vec2::new(m[0][0] * p.x + m[0][1] * p.y, m[1][0] * p.x + m[1][1] * p.y);
        assert!((apply_similarity(&h, p) - expected).norm() < 1e-14);
        assert_eq!(h.matrix(), m);
    }

    fn centered_cloud() -> impl Strategy<Value = PointSet> {
        prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..12)
            .prop_filter_map("degenerate cloud", |pts| {
                let (c, _) = center(&set(&pts)).ok()?;
                let energy: f64 = c.iter().map(|(_, p)| p.norm_squared()).sum();
                (energy > 1e-3).then_some(c)
            })
    }

    proptest! {
        #[test]
        fn exact_recovery(t in centered_cloud(), s in 0.1f64..10.0, phi in -PI..PI) {
            let g = Similarity2::new(s, phi);
            let current = t.map(|p| apply_similarity(&g, p));
            let h = fit_similarity(&t, &current).unwrap();
            prop_assert!((h.s - s).abs() < 1e-9 * s.max(1.0));
            prop_assert!(normalize_angle(h.phi - phi).abs() < 1e-9);
        }

        #[test]
        fn equivariance(t in centered_cloud(),
                        noise in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 12),
                        s in 0.2f64..5.0, phi in -PI..PI) {
            let mut k = 0;
            let current = t.map(|p| { k += 1; p * 1.3 + Vec2::new(noise[k - 1].0, noise[k - 1].1) });
            let (current, _) = center(&current).unwrap();
            let g = Similarity2::new(s, phi);
            let moved = current.map(|p| apply_similarity(&g, p));
            let h = fit_similarity(&t, &current).unwrap();
            let hb = fit_similarity(&t, &moved).unwrap();
            let expected = g.compose(&h);
            prop_assert!((hb.s - expected.s).abs() < 1e-9 * expected.s.max(1.0));
            prop_assert!(normalize_angle(hb.phi - expected.phi).abs() < 1e-9);
        }

        #[test]
        fn norm_ratio(s in 0.01f64..100.0, phi in -PI..PI, x in -50.0f64..50.0, y in -50.0f64..50.0) {
            let p = Vec2::new(x, y);
            prop_assume!(p.norm() > 1e-6);
            let q = apply_similarity(&Similarity2::new(s, phi), p);
            prop_assert!((q.norm() / p.norm() - s).abs() < 1e-12 * s.max(1.0));
        }

        #[test]
        fn centered_output_has_zero_centroid(pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..20)) {
            let (c, _) = center(&set(&pts)).unwrap();
            prop_assert!(centroid(&c).unwrap().norm() < 1e-12);
        }

        #[test]
        fn fit_beats_random_candidates(t in centered_cloud(),
                                       noise in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 12),
                                       seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut k = 0;
            let current = t.map(|p| { k += 1; p.rotate(0.7) * 2.0 + Vec2::new(noise[k - 1].0, noise[k - 1].1) });
            let (current, _) = center(&current).unwrap();
            let h = fit_similarity(&t, &current).unwrap();
            let best = fit_residual(&h, &t, &current);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let cand = Similarity2::new(rng.random_range(0.01..10.0), rng.random_range(-PI..PI));
                prop_assert!(best <= fit_residual(&cand, &t, &current) + 1e-12);
            }
        }
    }
}
