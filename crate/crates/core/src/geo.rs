//! Small geometric primitives shared across the meshing stages.

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

/// Rectangle with an in-plane rotation, used for the farm region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub center: Point2,
    pub half_extents: Vec2,
    /// Rotation of the local x axis, radians, counter-clockwise.
    pub angle: f64,
}

impl Rect {
    pub fn new(center: Point2, half_extents: Vec2, angle: f64) -> Self {
        Rect {
            center,
            half_extents,
            angle,
        }
    }

    pub fn axis_aligned(center: Point2, half_extents: Vec2) -> Self {
        Self::new(center, half_extents, 0.0)
    }

    /// Coordinates of `p` in the rectangle frame (rotation removed).
    pub fn to_local(&self, p: Point2) -> Vec2 {
        let d = p - self.center;
        let (s, c) = self.angle.sin_cos();
        Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    pub fn from_local(&self, q: Vec2) -> Point2 {
        let (s, c) = self.angle.sin_cos();
        self.center + Vec2::new(c * q.x - s * q.y, s * q.x + c * q.y)
    }

    pub fn contains(&self, p: Point2) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.half_extents.x && q.y.abs() <= self.half_extents.y
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_extents.x * self.half_extents.y
    }

    pub fn half_diagonal(&self) -> f64 {
        self.half_extents.norm()
    }

    pub fn corners(&self) -> [Point2; 4] {
        let (hx, hy) = (self.half_extents.x, self.half_extents.y);
        [
            self.from_local(Vec2::new(-hx, -hy)),
            self.from_local(Vec2::new(hx, -hy)),
            self.from_local(Vec2::new(hx, hy)),
            self.from_local(Vec2::new(-hx, hy)),
        ]
    }

    /// Distance from `p` to the rectangle (0 inside).
    pub fn distance(&self, p: Point2) -> f64 {
        let q = self.to_local(p);
        let dx = (q.x.abs() - self.half_extents.x).max(0.0);
        let dy = (q.y.abs() - self.half_extents.y).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Ellipse with an in-plane rotation, used for transition and buffer regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: Point2,
    pub semi_axes: Vec2,
    pub angle: f64,
}

impl Ellipse {
    pub fn new(center: Point2, semi_axes: Vec2, angle: f64) -> Self {
        Ellipse {
            center,
            semi_axes,
            angle,
        }
    }

    /// Elliptical radius: 1 on the boundary, < 1 inside.
    pub fn radius(&self, p: Point2) -> f64 {
        let d = p - self.center;
        let (s, c) = self.angle.sin_cos();
        let x = c * d.x + s * d.y;
        let y = -s * d.x + c * d.y;
        let rx = x / self.semi_axes.x;
        let ry = y / self.semi_axes.y;
        (rx * rx + ry * ry).sqrt()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.radius(p) <= 1.0
    }

    pub fn point_at(&self, t: f64) -> Point2 {
        let (s, c) = self.angle.sin_cos();
        let x = self.semi_axes.x * t.cos();
        let y = self.semi_axes.y * t.sin();
        self.center + Vec2::new(c * x - s * y, s * x + c * y)
    }

    /// Boundary polyline with spacing close to `h`, sampled by arc length so
    /// the segments are near-uniform even for eccentric ellipses.
    pub fn boundary_points(&self, h: f64) -> Vec<Point2> {
        assert!(h > 0.0, "boundary spacing must be positive");
        // Dense parameter sweep to accumulate arc length.
        let dense = 4096;
        let mut arclen = Vec::with_capacity(dense + 1);
        let mut pts = Vec::with_capacity(dense + 1);
        let mut acc = 0.0;
        let mut prev = self.point_at(0.0);
        arclen.push(0.0);
        pts.push(prev);
        for i in 1..=dense {
            let t = 2.0 * std::f64::consts::PI * (i as f64) / (dense as f64);
            let p = self.point_at(t);
            acc += (p - prev).norm();
            arclen.push(acc);
            pts.push(p);
            prev = p;
        }
        let total = acc;
        let n = ((total / h).ceil() as usize).max(8);
        let mut out = Vec::with_capacity(n);
        let mut k = 0usize;
        for i in 0..n {
            let target = total * (i as f64) / (n as f64);
            while k + 1 < arclen.len() && arclen[k + 1] < target {
                k += 1;
            }
            let (a0, a1) = (arclen[k], arclen[k + 1]);
            let w = if a1 > a0 { (target - a0) / (a1 - a0) } else { 0.0 };
            out.push(pts[k] + (pts[k + 1] - pts[k]) * w);
        }
        out
    }
}

/// Twice the signed area of the planar triangle (a, b, c).
pub fn signed_area2(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

pub fn triangle_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * signed_area2(a, b, c)
}

/// Circumcenter of a planar triangle. Degenerate triangles yield huge
/// coordinates; callers guard with the area test first.
pub fn circumcenter(a: Point2, b: Point2, c: Point2) -> Point2 {
    let d = 2.0 * signed_area2(a, b, c);
    let an = a.coords.norm_squared();
    let bn = b.coords.norm_squared();
    let cn = c.coords.norm_squared();
    let ux = (an * (b.y - c.y) + bn * (c.y - a.y) + cn * (a.y - b.y)) / d;
    let uy = (an * (c.x - b.x) + bn * (a.x - c.x) + cn * (b.x - a.x)) / d;
    Point2::new(ux, uy)
}

/// Barycentric coordinates of `p` in triangle (a, b, c).
pub fn barycentric(a: Point2, b: Point2, c: Point2, p: Point2) -> [f64; 3] {
    let total = signed_area2(a, b, c);
    let wa = signed_area2(p, b, c) / total;
    let wb = signed_area2(a, p, c) / total;
    let wc = 1.0 - wa - wb;
    [wa, wb, wc]
}

/// 3-point Gauss-Legendre rule on [0, 1]: (abscissa, weight).
pub const GAUSS_3: [(f64, f64); 3] = [
    (0.112701665379258312, 0.277777777777777778),
    (0.5, 0.444444444444444444),
    (0.887298334620741688, 0.277777777777777778),
];

/// 2-point Gauss-Legendre rule on [0, 1].
pub const GAUSS_2: [(f64, f64); 2] = [
    (0.211324865405187118, 0.5),
    (0.788675134594812882, 0.5),
];

/// Symmetric 3-point rule on the reference triangle {x,y >= 0, x+y <= 1},
/// exact for quadratics; weights sum to 1 (mean-value form).
pub const TRI_GAUSS_3: [(f64, f64, f64); 3] = [
    (1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0),
    (2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0),
    (1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0),
];

/// 7-point rule on the reference triangle, degree 5, weights sum to 1.
pub const TRI_GAUSS_7: [(f64, f64, f64); 7] = [
    (1.0 / 3.0, 1.0 / 3.0, 0.225),
    (0.059715871789769820, 0.470142064105115090, 0.132394152788506181),
    (0.470142064105115090, 0.059715871789769820, 0.132394152788506181),
    (0.470142064105115090, 0.470142064105115090, 0.132394152788506181),
    (0.797426985353087322, 0.101286507323456339, 0.125939180544827153),
    (0.101286507323456339, 0.797426985353087322, 0.125939180544827153),
    (0.101286507323456339, 0.101286507323456339, 0.125939180544827153),
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rect_local_roundtrip_and_containment() {
        let r = Rect::new(Point2::new(1.0, 2.0), Vec2::new(2.0, 1.0), 0.5);
        let p = Point2::new(1.7, 2.3);
        let q = r.to_local(p);
        let back = r.from_local(q);
        assert_relative_eq!(back.x, p.x, epsilon = 1e-12);
        assert_relative_eq!(back.y, p.y, epsilon = 1e-12);
        assert!(r.contains(r.center));
        assert!(!r.contains(Point2::new(10.0, 10.0)));
    }

    #[test]
    fn rotated_rect_corners_inside_scaled_ellipse() {
        let r = Rect::new(Point2::origin(), Vec2::new(1.0, 1.0), 0.3);
        let e = Ellipse::new(Point2::origin(), Vec2::new(2.0, 2.0), 0.3);
        for c in r.corners() {
            assert!(e.contains(c));
        }
    }

    #[test]
    fn ellipse_boundary_spacing() {
        let e = Ellipse::new(Point2::origin(), Vec2::new(2.0, 1.0), 0.0);
        let pts = e.boundary_points(0.1);
        for i in 0..pts.len() {
            let j = (i + 1) % pts.len();
            let d = (pts[j] - pts[i]).norm();
            assert!(d > 0.05 && d < 0.2, "segment length {d}");
        }
        for p in &pts {
            assert_relative_eq!(e.radius(*p), 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn circumcenter_equidistant() {
        let (a, b, c) = (
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.2),
            Point2::new(0.3, 1.1),
        );
        let cc = circumcenter(a, b, c);
        let ra = (a - cc).norm();
        assert_relative_eq!((b - cc).norm(), ra, epsilon = 1e-12);
        assert_relative_eq!((c - cc).norm(), ra, epsilon = 1e-12);
    }

    #[test]
    fn gauss_rules_integrate_polynomials() {
        // GAUSS_3 exact through degree 5 on [0,1].
        let exact = 1.0 / 6.0; // integral of x^5
        let got: f64 = GAUSS_3.iter().map(|(x, w)| w * x.powi(5)).sum();
        assert_relative_eq!(got, exact, epsilon = 1e-14);
        let got7: f64 = TRI_GAUSS_7.iter().map(|(x, y, w)| w * (x + y)).sum();
        // mean of (x+y) over reference triangle = 2/3
        assert_relative_eq!(got7, 2.0 / 3.0, epsilon = 1e-13);
    }
}
