//! Planar geometry: points, directional sectors, reference-line distances,
//! the deployment grid and the grid-indexed reservation slot.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Tolerance for bearing comparisons. Bearings exactly on a sector edge are inside.
pub const ANGLE_EPS: f64 = 1e-9;

/// Lower bound on the reservation-period modulus. Any modulus of at least 11
/// exceeds the span of `3*dx + 2*dy` over a 5x5 window, so every pair of cells
/// within two columns and two rows of each other gets distinct slots.
pub const MIN_RP_MODULUS: u32 = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate or parameter: {0}")]
    NonFinite(&'static str),
    #[error("sector width must satisfy 0 < alpha <= 2*pi, got {0}")]
    BadSectorWidth(f64),
    #[error("sector range must be positive, got {0}")]
    BadRange(f64),
    #[error("grid cell dimensions must be positive, got {0} x {1}")]
    BadCellSize(f64, f64),
    #[error("reservation-period modulus must be at least {MIN_RP_MODULUS}, got {0}")]
    RpModulusTooSmall(u32),
    #[error("reference line is degenerate: both endpoints at ({0}, {1})")]
    DegenerateLine(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Bearing of `other` as seen from `self`, in `(-pi, pi]`.
    pub fn bearing_to(&self, other: &Point) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }
}

/// Wraps an angle into `[0, 2*pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed smallest difference `a - b`, in `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// An oriented transmission cone: apex, orientation `theta`, full width
/// `alpha` and reach `range`. The cone spans `[theta - alpha/2, theta + alpha/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    apex: Point,
    theta: f64,
    alpha: f64,
    range: f64,
}

impl Sector {
    pub fn new(apex: Point, theta: f64, alpha: f64, range: f64) -> Result<Self, GeometryError> {
        if !apex.is_finite() {
            return Err(GeometryError::NonFinite("sector apex"));
        }
        if !theta.is_finite() {
            return Err(GeometryError::NonFinite("sector orientation"));
        }
        if !alpha.is_finite() || alpha <= 0.0 || alpha > TAU + ANGLE_EPS {
            return Err(GeometryError::BadSectorWidth(alpha));
        }
        if !range.is_finite() || range <= 0.0 {
            return Err(GeometryError::BadRange(range));
        }
        Ok(Self {
            apex,
            theta: normalize_angle(theta),
            alpha: alpha.min(TAU),
            range,
        })
    }

    pub fn apex(&self) -> Point {
        self.apex
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn is_full_circle(&self) -> bool {
        self.alpha >= TAU - ANGLE_EPS
    }

    /// Same cone moved to a new apex.
    pub fn with_apex(&self, apex: Point) -> Self {
        Self { apex, ..*self }
    }

    pub fn contains(&self, p: &Point) -> bool {
        sector_contains(self, p)
    }
}

/// True iff `p` is within reach of the sector and its bearing from the apex
/// lies inside the cone. The apex itself is contained.
pub fn sector_contains(s: &Sector, p: &Point) -> bool {
    let d = s.apex.distance(p);
    if d == 0.0 {
        return true;
    }
    if d > s.range {
        return false;
    }
    if s.is_full_circle() {
        return true;
    }
    let off = angle_diff(s.apex.bearing_to(p), s.theta);
    off.abs() <= s.alpha / 2.0 + ANGLE_EPS
}

/// Perpendicular distance from `p` to the infinite line through `a` and `b`.
pub fn point_to_line_distance(p: &Point, a: &Point, b: &Point) -> Result<f64, GeometryError> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return Err(GeometryError::DegenerateLine(a.x, a.y));
    }
    let cross = dx * (p.y - a.y) - dy * (p.x - a.x);
    Ok(cross.abs() / len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub gx: i64,
    pub gy: i64,
}

impl GridCell {
    pub const fn new(gx: i64, gy: i64) -> Self {
        Self { gx, gy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    cell_width: f64,
    cell_height: f64,
    origin: Point,
    rp_modulus: u32,
}

impl GridSpec {
    pub fn new(
        cell_width: f64,
        cell_height: f64,
        origin: Point,
        rp_modulus: u32,
    ) -> Result<Self, GeometryError> {
        if !(cell_width.is_finite() && cell_height.is_finite())
            || cell_width <= 0.0
            || cell_height <= 0.0
        {
            return Err(GeometryError::BadCellSize(cell_width, cell_height));
        }
        if !origin.is_finite() {
            return Err(GeometryError::NonFinite("grid origin"));
        }
        if rp_modulus < MIN_RP_MODULUS {
            return Err(GeometryError::RpModulusTooSmall(rp_modulus));
        }
        Ok(Self {
            cell_width,
            cell_height,
            origin,
            rp_modulus,
        })
    }

    /// Square cells anchored at the origin with the default modulus.
    pub fn square(cell: f64) -> Result<Self, GeometryError> {
        Self::new(cell, cell, Point::new(0.0, 0.0), MIN_RP_MODULUS)
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn cell_height(&self) -> f64 {
        self.cell_height
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn rp_modulus(&self) -> u32 {
        self.rp_modulus
    }
}

pub fn grid_of(p: &Point, spec: &GridSpec) -> GridCell {
    GridCell {
        gx: ((p.x - spec.origin.x) / spec.cell_width).floor() as i64,
        gy: ((p.y - spec.origin.y) / spec.cell_height).floor() as i64,
    }
}

/// Reservation-period slot owned by a grid cell: `(3*gx + 2*gy + 5) mod m`.
pub fn rp_slot_of(cell: GridCell, spec: &GridSpec) -> u32 {
    rp_slot_with_modulus(cell, spec.rp_modulus)
}

pub(crate) fn rp_slot_with_modulus(cell: GridCell, modulus: u32) -> u32 {
    let raw = 3 * cell.gx as i128 + 2 * cell.gy as i128 + 5;
    raw.rem_euclid(modulus as i128) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sector(theta: f64, alpha: f64, range: f64) -> Sector {
        Sector::new(Point::new(0.0, 0.0), theta, alpha, range).unwrap()
    }

    /// Rasterised containment: walk the cone's edge-inclusive bearing span at
    /// 0.01 rad and accept if some sampled bearing matches the point's bearing.
    fn raster_contains(s: &Sector, p: &Point) -> bool {
        let d = s.apex().distance(p);
        if d == 0.0 {
            return true;
        }
        if d > s.range() {
            return false;
        }
        let target = (p.y - s.apex().y).atan2(p.x - s.apex().x);
        let steps = (s.alpha() / 0.01).ceil() as usize;
        (0..=steps).any(|k| {
            let b = s.theta() - s.alpha() / 2.0 + (k as f64 * 0.01).min(s.alpha());
            let (sb, cb) = b.sin_cos();
            let (st, ct) = target.sin_cos();
            // Same direction to within half a raster step.
            (sb * ct - cb * st).abs() < 0.005 + 1e-9 && sb * st + cb * ct > 0.0
        })
    }

    #[test]
    fn sector_axis_and_behind() {
        let s = sector(0.0, PI / 2.0, 10.0);
        assert!(sector_contains(&s, &Point::new(5.0, 0.0)));
        assert!(!sector_contains(&s, &Point::new(-5.0, 0.0)));
    }

    #[test]
    fn sector_edge_bearing_is_inside() {
        let s = sector(0.0, PI / 2.0, 10.0);
        let p = Point::new(3.0, 3.0);
        assert!(raster_contains(&s, &p));
        assert!(sector_contains(&s, &p));
        // Just past the edge.
        let q = Point::new(3.0, 3.05);
        assert_eq!(sector_contains(&s, &q), raster_contains(&s, &q));
        assert!(!sector_contains(&s, &q));
    }

    #[test]
    fn sector_wraps_across_zero() {
        let s = sector(-0.1, 0.4, 10.0);
        assert!((s.theta() - (TAU - 0.1)).abs() < 1e-12);
        assert!(sector_contains(&s, &Point::new(5.0, 0.2)));
        assert!(sector_contains(&s, &Point::new(5.0, -0.9)));
        assert!(!sector_contains(&s, &Point::new(5.0, 2.0)));
    }

    #[test]
    fn sector_apex_and_range() {
        let s = sector(1.0, 0.1, 3.0);
        assert!(sector_contains(&s, &Point::new(0.0, 0.0)));
        assert!(!sector_contains(&s, &Point::new(10.0 * 1f64.cos(), 10.0 * 1f64.sin())));
    }

    #[test]
    fn sector_rejects_bad_params() {
        let o = Point::new(0.0, 0.0);
        assert!(matches!(Sector::new(o, 0.0, 0.0, 1.0), Err(GeometryError::BadSectorWidth(_))));
        assert!(matches!(Sector::new(o, 0.0, 7.0, 1.0), Err(GeometryError::BadSectorWidth(_))));
        assert!(matches!(Sector::new(o, 0.0, 1.0, 0.0), Err(GeometryError::BadRange(_))));
        assert!(Sector::new(Point::new(f64::NAN, 0.0), 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn line_distance_examples() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(point_to_line_distance(&Point::new(0.0, 1.0), &o, &Point::new(1.0, 0.0)).unwrap(), 1.0);
        assert_eq!(point_to_line_distance(&Point::new(5.0, 0.0), &o, &Point::new(10.0, 0.0)).unwrap(), 0.0);
        let d = point_to_line_distance(&Point::new(3.0, 4.0), &o, &Point::new(1.0, 1.0)).unwrap();
        // Projection route: subtract the component along the unit direction.
        let (ux, uy) = (1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt());
        let along = 3.0 * ux + 4.0 * uy;
        let (rx, ry) = (3.0 - along * ux, 4.0 - along * uy);
        assert!((d - rx.hypot(ry)).abs() < 1e-12);
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn line_distance_degenerate() {
        let a = Point::new(2.0, 2.0);
        assert_eq!(
            point_to_line_distance(&Point::new(0.0, 0.0), &a, &a),
            Err(GeometryError::DegenerateLine(2.0, 2.0))
        );
    }

    #[test]
    fn grid_examples() {
        let spec = GridSpec::square(10.0).unwrap();
        assert_eq!(grid_of(&Point::new(0.0, 0.0), &spec), GridCell::new(0, 0));
        assert_eq!(grid_of(&Point::new(25.0, 5.0), &spec), GridCell::new(2, 0));
        assert_eq!(grid_of(&Point::new(-0.1, 0.0), &spec), GridCell::new(-1, 0));
    }

    #[test]
    fn grid_spec_validation() {
        assert!(matches!(GridSpec::new(10.0, 10.0, Point::default(), 10), Err(GeometryError::RpModulusTooSmall(10))));
        assert!(matches!(GridSpec::new(0.0, 10.0, Point::default(), 11), Err(GeometryError::BadCellSize(..))));
    }

    #[test]
    fn rp_slot_examples() {
        let spec = GridSpec::square(10.0).unwrap();
        assert_eq!(rp_slot_of(GridCell::new(1, 1), &spec), 10);
        assert_eq!(rp_slot_of(GridCell::new(0, 0), &spec), 5);
        assert_eq!(rp_slot_of(GridCell::new(2, 1), &spec), 2);
        assert_eq!(rp_slot_of(GridCell::new(-3, 0), &spec), 7);
    }

    fn window_violation(modulus: u32) -> bool {
        let base = GridCell::new(0, 0);
        (-2..=2i64).any(|dx| {
            (-2..=2i64).any(|dy| {
                (dx, dy) != (0, 0)
                    && rp_slot_with_modulus(base, modulus)
                        == rp_slot_with_modulus(GridCell::new(dx, dy), modulus)
            })
        })
    }

    #[test]
    fn window_safe_moduli() {
        // 3dx + 2dy over the 5x5 window hits every nonzero value in [-10, 10]
        // except +-9, so 9 is also safe and 10 is not.
        let safe: Vec<u32> = (1..=20).filter(|&m| !window_violation(m)).collect();
        assert_eq!(safe, vec![9, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20]);
    }

    proptest! {
        #[test]
        fn rotation_invariance(theta in 0.0..TAU, alpha in 0.01..TAU, r in 1.0..50.0,
                               px in -60.0..60.0f64, py in -60.0..60.0f64, rot in 0.0..TAU) {
            let s = sector(theta, alpha, r);
            let p = Point::new(px, py);
            let off = angle_diff(p.y.atan2(p.x), theta).abs() - alpha / 2.0;
            let dist = p.x.hypot(p.y) - r;
            // Skip points sitting on a boundary where rounding decides.
            prop_assume!(off.abs() > 1e-7 && dist.abs() > 1e-7);
            let (sn, cs) = rot.sin_cos();
            let q = Point::new(px * cs - py * sn, px * sn + py * cs);
            let s2 = sector(theta + rot, alpha, r);
            prop_assert_eq!(sector_contains(&s, &p), sector_contains(&s2, &q));
        }

        #[test]
        fn full_circle_is_range_test(theta in 0.0..TAU, r in 1.0..50.0, px in -60.0..60.0f64, py in -60.0..60.0f64) {
            let s = sector(theta, TAU, r);
            let p = Point::new(px, py);
            prop_assert_eq!(sector_contains(&s, &p), p.x.hypot(p.y) <= r);
        }

        #[test]
        fn line_distance_rigid_motion(px in -50.0..50.0f64, py in -50.0..50.0f64,
                                      ax in -50.0..50.0f64, ay in -50.0..50.0f64,
                                      bx in -50.0..50.0f64, by in -50.0..50.0f64,
                                      tx in -50.0..50.0f64, ty in -50.0..50.0f64, rot in 0.0..TAU) {
            let (p, a, b) = (Point::new(px, py), Point::new(ax, ay), Point::new(bx, by));
            prop_assume!(a.distance(&b) > 1e-3);
            let (sn, cs) = rot.sin_cos();
            let m = |q: Point| Point::new(q.x * cs - q.y * sn + tx, q.x * sn + q.y * cs + ty);
            let d1 = point_to_line_distance(&p, &a, &b).unwrap();
            let d2 = point_to_line_distance(&m(p), &m(a), &m(b)).unwrap();
            prop_assert!(d1 >= 0.0);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn grid_cells_tile(px in -1e4..1e4f64, py in -1e4..1e4f64, w in 0.5..50.0f64, h in 0.5..50.0f64) {
            let spec = GridSpec::new(w, h, Point::new(3.0, -7.0), 11).unwrap();
            let c = grid_of(&Point::new(px, py), &spec);
            let x0 = 3.0 + c.gx as f64 * w;
            let y0 = -7.0 + c.gy as f64 * h;
            prop_assert!(x0 <= px + 1e-9 && px < x0 + w + 1e-9);
            prop_assert!(y0 <= py + 1e-9 && py < y0 + h + 1e-9);
        }

        #[test]
        fn rp_slot_window_unique(gx in -1000i64..1000, gy in -1000i64..1000, m in 11u32..40) {
            let spec = GridSpec::new(1.0, 1.0, Point::default(), m).unwrap();
            let base = rp_slot_of(GridCell::new(gx, gy), &spec);
            prop_assert!(base < m);
            if m == 11 {
                for dx in -2..=2 {
                    for dy in -2..=2 {
                        if (dx, dy) != (0, 0) {
                            prop_assert_ne!(base, rp_slot_of(GridCell::new(gx + dx, gy + dy), &spec));
                        }
                    }
                }
            }
        }
    }
}
