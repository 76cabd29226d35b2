//! Planar room model and specular path enumeration.
//!
//! Paths between a user array and an AP array are found with the
//! image-source method: the user is mirrored across each reflector in a
//! bounce sequence, and the candidate path is kept only if every
//! reflection point lands on its (finite) reflector segment.
//!
//! Angles follow one convention everywhere: a pose's broadside points along
//! `(sin o, cos o)` in world coordinates, and local angles grow clockwise
//! from broadside. Orientation 0 therefore faces +y, and a point at +x of
//! the array sits at +π/2.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "same point" checks, in meters.
const POINT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("AP index {index} out of range ({count} APs)")]
    BadApIndex { index: usize, count: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("position ({x}, {y}) lies outside the room")]
    OutsideRoom { x: f64, y: f64 },
}

/// A point (or displacement) in the room plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Unit vector at a world bearing (clockwise from +y).
    pub fn from_bearing(bearing: f64) -> Vec2 {
        Vec2::new(bearing.sin(), bearing.cos())
    }
}

impl Add for Vec2 {
    type Output = Vec2;

    fn add(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x + other.x, self.y + other.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;

    fn sub(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x - other.x, self.y - other.y)
    }
}

/// Position plus array orientation (radians, world bearing of broadside).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub orientation: f64,
}

impl Pose {
    pub const fn new(position: Vec2, orientation: f64) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Pose at `position` whose broadside points at `target`.
    pub fn facing(position: Vec2, target: Vec2) -> Self {
        let d = target - position;
        Self::new(position, d.x.atan2(d.y))
    }
}

/// A flat reflecting segment with amplitude reflection coefficient `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub start: Vec2,
    pub end: Vec2,
    pub gamma: f64,
}

impl Reflector {
    pub const fn new(start: Vec2, end: Vec2, gamma: f64) -> Self {
        Self { start, end, gamma }
    }

    /// Mirror image of `p` across the reflector's supporting line.
    pub fn mirror(&self, p: Vec2) -> Vec2 {
        let dir = self.end - self.start;
        let t = (p - self.start).dot(dir) / dir.dot(dir);
        let foot = self.start + dir.scale(t);
        foot.scale(2.0) - p
    }

    /// Intersection of segment `from -> to` with this reflector, if it
    /// crosses the reflector segment strictly between `from` and `to`.
    fn hit(&self, from: Vec2, to: Vec2) -> Option<Vec2> {
        let r = to - from;
        let s = self.end - self.start;
        let denom = r.cross(s);
        if denom.abs() < 1e-12 {
            return None;
        }
        let q = self.start - from;
        let t = q.cross(s) / denom;
        let u = q.cross(r) / denom;
        let on_leg = t > 1e-12 && t < 1.0 - 1e-12;
        let on_segment = (-1e-12..=1.0 + 1e-12).contains(&u);
        (on_leg && on_segment).then(|| from + r.scale(t))
    }
}

/// Room, reflectors and AP placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub width: f64,
    pub height: f64,
    pub reflectors: Vec<Reflector>,
    pub aps: Vec<Pose>,
    pub rng_seed: u64,
}

impl Environment {
    pub fn new(
        width: f64,
        height: f64,
        reflectors: Vec<Reflector>,
        aps: Vec<Pose>,
        rng_seed: u64,
    ) -> Result<Self, GeometryError> {
        let env = Self {
            width,
            height,
            reflectors,
            aps,
            rng_seed,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (-POINT_EPS..=self.width + POINT_EPS).contains(&p.x)
            && (-POINT_EPS..=self.height + POINT_EPS).contains(&p.y)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidEnvironment(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad(format!(
                "room must have positive size, got {}x{}",
                self.width, self.height
            ));
        }
        for (i, r) in self.reflectors.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.gamma) {
                return bad(format!("reflector {i}: gamma {} not in [0, 1]", r.gamma));
            }
            if !self.contains(r.start) || !self.contains(r.end) {
                return bad(format!("reflector {i}: endpoint outside room"));
            }
            if r.start.distance(r.end) < POINT_EPS {
                return bad(format!("reflector {i}: zero length"));
            }
        }
        for (i, ap) in self.aps.iter().enumerate() {
            if !self.contains(ap.position) {
                return bad(format!("AP {i} lies outside the room"));
            }
        }
        Ok(())
    }

    /// Four reflectors along the room boundary, all with coefficient `gamma`.
    pub fn wall_reflectors(width: f64, height: f64, gamma: f64) -> Vec<Reflector> {
        let c = [
            Vec2::new(0.0, 0.0),
            Vec2::new(width, 0.0),
            Vec2::new(width, height),
            Vec2::new(0.0, height),
        ];
        (0..4)
            .map(|i| Reflector::new(c[i], c[(i + 1) % 4], gamma))
            .collect()
    }

    /// One AP at the middle of each wall, broadside facing into the room.
    pub fn wall_center_aps(width: f64, height: f64) -> Vec<Pose> {
        let center = Vec2::new(width / 2.0, height / 2.0);
        [
            Vec2::new(width / 2.0, 0.0),
            Vec2::new(width, height / 2.0),
            Vec2::new(width / 2.0, height),
            Vec2::new(0.0, height / 2.0),
        ]
        .into_iter()
        .map(|p| Pose::facing(p, center))
        .collect()
    }
}

/// One propagation path from the user array to an AP array.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComponent {
    /// Total travelled length, meters.
    pub length: f64,
    /// Departure angle at the user array, relative to its broadside.
    pub aod: f64,
    /// Arrival angle at the AP array, relative to its broadside.
    pub aoa: f64,
    /// Amplitude gain: product of reflection coefficients over length.
    pub gain: f64,
    /// Number of bounces; 0 is the direct path.
    pub order: usize,
    /// Reflection points in travel order (user to AP).
    pub bounces: Vec<Vec2>,
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Angle of the `pose -> point` direction in the pose's local frame.
pub fn bearing_to(pose: &Pose, point: Vec2) -> Result<f64, GeometryError> {
    let d = point - pose.position;
    if d.norm() < POINT_EPS {
        return Err(GeometryError::Degenerate(
            "bearing to a point coinciding with the array".into(),
        ));
    }
    Ok(wrap_angle(d.x.atan2(d.y) - pose.orientation))
}

/// Enumerates the direct path and every specular path up to `max_order`
/// bounces between `user` and AP `ap_index`, sorted by length.
///
/// Paths that leave or arrive outside ±90° of either array's broadside are
/// dropped (with a warning) since a linear array cannot tell front from back.
pub fn enumerate_paths(
    env: &Environment,
    user: &Pose,
    ap_index: usize,
    max_order: usize,
) -> Result<Vec<PathComponent>, GeometryError> {
    let ap = env.aps.get(ap_index).ok_or(GeometryError::BadApIndex {
        index: ap_index,
        count: env.aps.len(),
    })?;
    if !env.contains(user.position) {
        return Err(GeometryError::OutsideRoom {
            x: user.position.x,
            y: user.position.y,
        });
    }
    if user.position.distance(ap.position) < POINT_EPS {
        return Err(GeometryError::Degenerate(
            "user coincides with AP position".into(),
        ));
    }

    let mut candidates = vec![PathComponent {
        length: user.position.distance(ap.position),
        aod: bearing_to(user, ap.position)?,
        aoa: bearing_to(ap, user.position)?,
        gain: 1.0 / user.position.distance(ap.position),
        order: 0,
        bounces: Vec::new(),
    }];

    let mut sequence = Vec::with_capacity(max_order);
    for order in 1..=max_order {
        collect_sequences(env, user, ap, order, &mut sequence, &mut candidates)?;
    }

    let mut paths: Vec<PathComponent> = candidates
        .into_iter()
        .filter(|p| {
            let keep = p.aod.abs() <= FRAC_PI_2 + 1e-12 && p.aoa.abs() <= FRAC_PI_2 + 1e-12;
            if !keep {
                log::warn!(
                    "dropping order-{} path (len {:.3} m): aod {:.1}°, aoa {:.1}° outside array half-plane",
                    p.order,
                    p.length,
                    p.aod.to_degrees(),
                    p.aoa.to_degrees()
                );
            }
            keep
        })
        .collect();
    paths.sort_by(|a, b| a.length.total_cmp(&b.length).then(a.order.cmp(&b.order)));
    Ok(paths)
}

fn collect_sequences(
    env: &Environment,
    user: &Pose,
    ap: &Pose,
    remaining: usize,
    sequence: &mut Vec<usize>,
    out: &mut Vec<PathComponent>,
) -> Result<(), GeometryError> {
    if remaining == 0 {
        if let Some(p) = trace_sequence(env, user, ap, sequence)? {
            out.push(p);
        }
        return Ok(());
    }
    for r in 0..env.reflectors.len() {
        if sequence.last() == Some(&r) {
            continue;
        }
        sequence.push(r);
        collect_sequences(env, user, ap, remaining - 1, sequence, out)?;
        sequence.pop();
    }
    Ok(())
}

/// Builds the path for one bounce sequence, or `None` if it is not realizable.
fn trace_sequence(
    env: &Environment,
    user: &Pose,
    ap: &Pose,
    sequence: &[usize],
) -> Result<Option<PathComponent>, GeometryError> {
    // images[k] is the source mirrored across the first k reflectors.
    let mut images = Vec::with_capacity(sequence.len() + 1);
    images.push(user.position);
    for &r in sequence {
        let last = *images.last().expect("non-empty");
        images.push(env.reflectors[r].mirror(last));
    }

    let length = images.last().expect("non-empty").distance(ap.position);
    let mut points = vec![Vec2::default(); sequence.len()];
    let mut target = ap.position;
    for k in (0..sequence.len()).rev() {
        let refl = &env.reflectors[sequence[k]];
        let Some(hit) = refl.hit(target, images[k + 1]) else {
            return Ok(None);
        };
        if hit.distance(target) < POINT_EPS || hit.distance(user.position) < POINT_EPS {
            return Ok(None);
        }
        points[k] = hit;
        target = hit;
    }

    let gain = sequence
        .iter()
        .map(|&r| env.reflectors[r].gamma)
        .product::<f64>()
        / length;
    if gain <= 0.0 {
        return Ok(None);
    }

    Ok(Some(PathComponent {
        length,
        aod: bearing_to(user, points[0])?,
        aoa: bearing_to(ap, *points.last().expect("non-empty"))?,
        gain,
        order: sequence.len(),
        bounces: points,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    fn two_path_env(gamma: f64) -> (Environment, Pose) {
        let ap = Pose::facing(Vec2::new(10.0, 0.0), Vec2::new(0.0, 0.0));
        let env = Environment::new(
            20.0,
            10.0,
            vec![Reflector::new(Vec2::new(0.0, 5.0), Vec2::new(20.0, 5.0), gamma)],
            vec![ap],
            0,
        )
        .unwrap();
        let user = Pose::facing(Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0));
        (env, user)
    }

    #[test]
    fn no_reflectors_gives_direct_only() {
        let ap = Pose::facing(Vec2::new(10.0, 0.0), Vec2::new(0.0, 0.0));
        let env = Environment::new(20.0, 10.0, vec![], vec![ap], 0).unwrap();
        let user = Pose::facing(Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0));
        let paths = enumerate_paths(&env, &user, 0, 1).unwrap();
        assert_eq!(paths.len(), 1);
        assert_abs_diff_eq!(paths[0].length, 10.0, epsilon = 1e-12);
        assert_eq!(paths[0].order, 0);
    }

    #[test]
    fn single_reflector_worked_example() {
        let (env, user) = two_path_env(0.6);
        let paths = enumerate_paths(&env, &user, 0, 1).unwrap();
        assert_eq!(paths.len(), 2);
        assert_abs_diff_eq!(paths[0].length, 10.0, epsilon = 1e-12);
        let r = &paths[1];
        assert_eq!(r.order, 1);
        assert_abs_diff_eq!(r.length, 200f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.gain, 0.6 / 200f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.bounces[0].x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.bounces[0].y, 5.0, epsilon = 1e-12);
        // Departs 45° left of broadside (toward +y), arrives 45° right.
        assert_abs_diff_eq!(r.aod, -FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.aoa, FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn order_zero_cutoff() {
        let (env, user) = two_path_env(0.6);
        let paths = enumerate_paths(&env, &user, 0, 0).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].order, 0);
    }

    #[test]
    fn coincident_user_and_ap_is_degenerate() {
        let (env, _) = two_path_env(0.6);
        let user = Pose::new(Vec2::new(10.0, 0.0), 0.0);
        assert!(matches!(
            enumerate_paths(&env, &user, 0, 1),
            Err(GeometryError::Degenerate(_))
        ));
    }

    #[test]
    fn bad_ap_index() {
        let (env, user) = two_path_env(0.6);
        assert_eq!(
            enumerate_paths(&env, &user, 3, 1),
            Err(GeometryError::BadApIndex { index: 3, count: 1 })
        );
    }

    #[test]
    fn bearing_examples() {
        let origin = Vec2::new(0.0, 0.0);
        let p = Pose::new(origin, 0.0);
        assert_abs_diff_eq!(bearing_to(&p, Vec2::new(0.0, 5.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            bearing_to(&p, Vec2::new(5.0, 5.0)).unwrap(),
            FRAC_PI_4,
            epsilon = 1e-15
        );
        let rotated = Pose::new(origin, FRAC_PI_2);
        assert_abs_diff_eq!(
            bearing_to(&rotated, Vec2::new(0.0, 5.0)).unwrap(),
            -FRAC_PI_2,
            epsilon = 1e-15
        );
        assert!(bearing_to(&p, origin).is_err());
    }

    #[test]
    fn environment_validation() {
        let r = Reflector::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 1.5);
        assert!(Environment::new(5.0, 5.0, vec![r], vec![], 0).is_err());
        assert!(Environment::new(0.0, 5.0, vec![], vec![], 0).is_err());
        let out = Pose::new(Vec2::new(6.0, 1.0), 0.0);
        assert!(Environment::new(5.0, 5.0, vec![], vec![out], 0).is_err());
        let r = Reflector::new(Vec2::new(0.0, 0.0), Vec2::new(7.0, 0.0), 0.5);
        assert!(Environment::new(5.0, 5.0, vec![r], vec![], 0).is_err());
    }

    #[test]
    fn wall_aps_face_the_center() {
        let aps = Environment::wall_center_aps(40.0, 30.0);
        for ap in &aps {
            assert_abs_diff_eq!(
                bearing_to(ap, Vec2::new(20.0, 15.0)).unwrap(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn second_order_corner_path() {
        // Two perpendicular walls: the double bounce has the length of the
        // doubly mirrored source.
        let walls = vec![
            Reflector::new(Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), 1.0),
            Reflector::new(Vec2::new(0.0, 0.0), Vec2::new(0.0, 10.0), 1.0),
        ];
        let ap = Pose::new(Vec2::new(6.0, 3.0), PI);
        let env = Environment::new(10.0, 10.0, walls, vec![ap], 0).unwrap();
        let user = Pose::new(Vec2::new(2.0, 4.0), -FRAC_PI_2);
        let paths = enumerate_paths(&env, &user, 0, 2).unwrap();
        let second: Vec<_> = paths.iter().filter(|p| p.order == 2).collect();
        assert!(!second.is_empty());
        let image = Vec2::new(-2.0, -4.0);
        for p in second {
            assert_abs_diff_eq!(p.length, image.distance(ap.position), epsilon = 1e-9);
        }
    }

    fn room(width: f64, height: f64) -> Environment {
        let mut reflectors = Environment::wall_reflectors(width, height, 1.0);
        reflectors.push(Reflector::new(Vec2::new(4.0, 3.0), Vec2::new(7.0, 5.0), 0.5));
        Environment::new(width, height, reflectors, Environment::wall_center_aps(width, height), 0)
            .unwrap()
    }

    fn mirror_x(env: &Environment, p: Vec2) -> Vec2 {
        Vec2::new(env.width - p.x, p.y)
    }

    proptest::proptest! {
        #[test]
        fn reflected_paths_follow_their_image(
            x in 0.5..15.5f64, y in 0.5..11.5f64, o in -PI..PI, ap in 0usize..4,
        ) {
            let env = room(16.0, 12.0);
            let user = Pose::new(Vec2::new(x, y), o);
            let Ok(paths) = enumerate_paths(&env, &user, ap, 1) else { return Ok(()) };
            let ap_pos = env.aps[ap].position;
            for p in paths.iter().filter(|p| p.order == 1) {
                let b = p.bounces[0];
                // The bounce is where the user's image line crosses a reflector.
                let via = user.position.distance(b) + b.distance(ap_pos);
                proptest::prop_assert!((p.length - via).abs() < 1e-9);
                let on_some = env.reflectors.iter().any(|r| {
                    (r.mirror(user.position).distance(ap_pos) - p.length).abs() < 1e-9
                        && (r.end - r.start).cross(b - r.start).abs() < 1e-9
                });
                proptest::prop_assert!(on_some);
                proptest::prop_assert!(p.length >= paths[0].length - 1e-12);
            }
        }

        #[test]
        fn mirrored_scene_negates_angles(
            x in 0.5..15.5f64, y in 0.5..11.5f64, o in -PI..PI,
        ) {
            // Mirror across x = width/2 with no interior reflector: the wall
            // set maps onto itself and APs 1 and 3 swap.
            let (w, h) = (16.0, 12.0);
            let env = Environment::new(
                w, h, Environment::wall_reflectors(w, h, 1.0), Environment::wall_center_aps(w, h), 0,
            ).unwrap();
            let user = Pose::new(Vec2::new(x, y), o);
            let twin = Pose::new(mirror_x(&env, user.position), -o);
            for (ap, twin_ap) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
                let (Ok(a), Ok(b)) = (
                    enumerate_paths(&env, &user, ap, 1),
                    enumerate_paths(&env, &twin, twin_ap, 1),
                ) else { continue };
                let key = |p: &PathComponent| (p.length * 1e6).round() as i64;
                let mut a = a.clone();
                let mut b = b.clone();
                a.sort_by_key(key);
                b.sort_by_key(key);
                proptest::prop_assert_eq!(a.len(), b.len());
                for (p, q) in a.iter().zip(&b) {
                    proptest::prop_assert!((p.length - q.length).abs() < 1e-9);
                    proptest::prop_assert!(wrap_angle(p.aod + q.aod).abs() < 1e-9);
                    proptest::prop_assert!(wrap_angle(p.aoa + q.aoa).abs() < 1e-9);
                }
            }
        }
    }
}
