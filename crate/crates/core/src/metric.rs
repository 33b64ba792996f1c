//! Tangent and curvature metric fields over the terrain parametric plane.
//!
//! Both adaptation drivers are 2x2 symmetric tensors evaluated at parametric
//! points: the tangent metric scales the first fundamental form so edges of
//! the desired surface length measure 1, and the curvature metric rebuilds
//! the absolute-eigenvalue Hessian scaled to fit a node budget.

use crate::error::{Error, Result};
use crate::geo::{Point2, Rect, Vec2, GAUSS_3};
use crate::terrain::FitCache;
use nalgebra::Matrix2;
use std::sync::Arc;

/// Symmetric positive (semi-)definite 2x2 metric tensor, units 1/m^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric2 {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

impl Metric2 {
    pub fn new(m11: f64, m12: f64, m22: f64) -> Self {
        Metric2 { m11, m12, m22 }
    }

    pub fn identity() -> Self {
        Metric2::new(1.0, 0.0, 1.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Metric2::new(self.m11 * k, self.m12 * k, self.m22 * k)
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m12
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * (self.m11 + self.m22);
        let disc = (0.25 * (self.m11 - self.m22).powi(2) + self.m12 * self.m12).sqrt();
        (half_tr - disc, half_tr + disc)
    }

    /// Quadratic form e^T M e.
    pub fn quad(&self, e: Vec2) -> f64 {
        self.m11 * e.x * e.x + 2.0 * self.m12 * e.x * e.y + self.m22 * e.y * e.y
    }

    pub fn as_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.m11, self.m12, self.m12, self.m22)
    }
}

/// First fundamental form of the graph surface for height gradient
/// (z_x, z_y): [[1+z_x^2, z_x z_y], [z_x z_y, 1+z_y^2]].
pub fn first_fundamental_form(grad: Vec2) -> Metric2 {
    Metric2::new(
        1.0 + grad.x * grad.x,
        grad.x * grad.y,
        1.0 + grad.y * grad.y,
    )
}

/// Tangent metric: the first fundamental form scaled by 1/h^2, so an edge of
/// desired surface length h has metric length 1.
pub fn tangent_metric(fff: Metric2, h: f64) -> Result<Metric2> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("target size must be positive, got {h}"),
        });
    }
    Ok(fff.scaled(1.0 / (h * h)))
}

/// Curvature metric: eigendecompose the Hessian, take absolute eigenvalues
/// scaled by `beta`, clamp them into [1/h_max^2, 1/h_min^2], reassemble.
pub fn curvature_metric(hessian: Matrix2<f64>, beta: f64, clamp: (f64, f64)) -> Metric2 {
    let (h_min, h_max) = clamp;
    let lo = 1.0 / (h_max * h_max);
    let hi = 1.0 / (h_min * h_min);
    let (a, b, c) = (hessian[(0, 0)], hessian[(0, 1)], hessian[(1, 1)]);
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (l1, l2) = (half_tr - disc, half_tr + disc);
    // Eigenvector of the larger eigenvalue; the other is its rotation.
    let (ex, ey) = if b.abs() > 1e-300 {
        (l2 - c, b)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let n = (ex * ex + ey * ey).sqrt();
    let (ex, ey) = (ex / n, ey / n);
    let s2 = (beta * l2.abs()).clamp(lo, hi);
    let s1 = (beta * l1.abs()).clamp(lo, hi);
    // V diag(s1, s2) V^T with V = [(-ey, ex), (ex, ey)].
    Metric2::new(
        s2 * ex * ex + s1 * ey * ey,
        (s2 - s1) * ex * ey,
        s2 * ey * ey + s1 * ex * ex,
    )
}

/// Scaling factor beta* = N / (alpha C) fitting the curvature metric into a
/// node budget; flat terrain (C = 0) deactivates the metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaStar {
    Active(f64),
    /// Zero-complexity curvature: the curvature metric carries no
    /// information (perfectly flat terrain without clamping).
    Inactive,
}

pub fn beta_star(n_target: f64, alpha: f64, c1: f64) -> Result<BetaStar> {
    if n_target <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "n_target",
            reason: "node budget must be positive".into(),
        });
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "alpha must be positive".into(),
        });
    }
    if c1 < 0.0 {
        return Err(Error::InvalidParameter {
            name: "c1",
            reason: "complexity cannot be negative".into(),
        });
    }
    if c1 == 0.0 {
        return Ok(BetaStar::Inactive);
    }
    Ok(BetaStar::Active(n_target / (alpha * c1)))
}

enum FieldKind<'t> {
    Tangent {
        cache: Arc<FitCache<'t>>,
        h: f64,
    },
    Curvature {
        cache: Arc<FitCache<'t>>,
        beta: f64,
        h_min: f64,
        h_max: f64,
    },
    Constant(Metric2),
}

/// Evaluator mapping a parametric point to a metric tensor.
pub struct MetricField2<'t> {
    kind: FieldKind<'t>,
    scale: f64,
}

impl<'t> MetricField2<'t> {
    pub fn tangent(cache: Arc<FitCache<'t>>, h: f64) -> Result<Self> {
        if h <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: "target size must be positive".into(),
            });
        }
        Ok(MetricField2 {
            kind: FieldKind::Tangent { cache, h },
            scale: 1.0,
        })
    }

    pub fn curvature(cache: Arc<FitCache<'t>>, beta: f64, clamp: (f64, f64)) -> Result<Self> {
        if beta <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: "beta must be positive".into(),
            });
        }
        let (h_min, h_max) = clamp;
        if h_min <= 0.0 || h_max < h_min {
            return Err(Error::InvalidParameter {
                name: "clamp",
                reason: format!("need 0 < h_min <= h_max, got ({h_min}, {h_max})"),
            });
        }
        Ok(MetricField2 {
            kind: FieldKind::Curvature {
                cache,
                beta,
                h_min,
                h_max,
            },
            scale: 1.0,
        })
    }

    pub fn constant(m: Metric2) -> Self {
        MetricField2 {
            kind: FieldKind::Constant(m),
            scale: 1.0,
        }
    }

    /// Same field with every evaluated tensor multiplied by `factor`.
    pub fn with_scale(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn eval(&self, p: Point2) -> Result<Metric2> {
        let m = match &self.kind {
            FieldKind::Tangent { cache, h } => {
                let fit = cache.fit_at(p)?;
                tangent_metric(first_fundamental_form(fit.gradient(p)), *h)?
            }
            FieldKind::Curvature {
                cache,
                beta,
                h_min,
                h_max,
            } => {
                let fit = cache.fit_at(p)?;
                curvature_metric(fit.hessian(p), *beta, (*h_min, *h_max))
            }
            FieldKind::Constant(m) => *m,
        };
        Ok(m.scaled(self.scale))
    }
}

/// Result of the adaptive complexity integration.
#[derive(Debug, Clone, Copy)]
pub struct Complexity {
    pub value: f64,
    /// False when two successive refinement levels still disagreed by more
    /// than 1% after the level cap.
    pub converged: bool,
    pub levels: usize,
}

/// Complexity C(M) = integral of sqrt(det M) over the rectangle, by the
/// midpoint rule on a grid refined until two levels agree to 1% relative.
pub fn metric_complexity(
    field: &MetricField2,
    region: &Rect,
    initial_resolution: usize,
) -> Result<Complexity> {
    let mut n = initial_resolution.max(2);
    let mut prev: Option<f64> = None;
    for level in 0..6 {
        let value = midpoint_complexity(field, region, n)?;
        if let Some(p) = prev {
            if (value - p).abs() <= 0.01 * value.abs().max(1e-300) {
                return Ok(Complexity {
                    value,
                    converged: true,
                    levels: level + 1,
                });
            }
        }
        prev = Some(value);
        n *= 2;
    }
    Ok(Complexity {
        value: prev.unwrap(),
        converged: false,
        levels: 6,
    })
}

fn midpoint_complexity(field: &MetricField2, region: &Rect, n: usize) -> Result<f64> {
    let (hx, hy) = (region.half_extents.x, region.half_extents.y);
    let cell_area = (2.0 * hx / n as f64) * (2.0 * hy / n as f64);
    let mut sum = 0.0;
    for j in 0..n {
        for i in 0..n {
            let lx = -hx + (2.0 * hx) * (i as f64 + 0.5) / n as f64;
            let ly = -hy + (2.0 * hy) * (j as f64 + 0.5) / n as f64;
            let p = region.from_local(Vec2::new(lx, ly));
            let m = field.eval(p)?;
            sum += m.det().max(0.0).sqrt();
        }
    }
    Ok(sum * cell_area)
}

/// Metric length of the straight parametric segment [p1, p2] by 3-point
/// Gauss-Legendre quadrature of sqrt(e^T M(u(t)) e).
pub fn edge_length_under_metric(p1: Point2, p2: Point2, field: &MetricField2) -> Result<f64> {
    let e = p2 - p1;
    let mut acc = 0.0;
    for &(t, w) in GAUSS_3.iter() {
        let u = p1 + e * t;
        let m = field.eval(u)?;
        acc += w * m.quad(e).max(0.0).sqrt();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::TerrainModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid_of(
        f: impl Fn(f64, f64) -> f64,
        origin: Point2,
        d: f64,
        nx: usize,
        ny: usize,
    ) -> TerrainModel {
        let mut h = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                h.push(f(origin.x + d * i as f64, origin.y + d * j as f64));
            }
        }
        TerrainModel::from_grid(origin, d, d, nx, ny, &h).unwrap()
    }

    #[test]
    fn fff_closed_forms() {
        let m = first_fundamental_form(Vec2::new(0.0, 0.0));
        assert_eq!(m, Metric2::identity());
        let m = first_fundamental_form(Vec2::new(1.0, 0.0));
        assert_eq!(m, Metric2::new(2.0, 0.0, 1.0));
        let m = first_fundamental_form(Vec2::new(1.0, 1.0));
        assert_eq!(m, Metric2::new(2.0, 1.0, 2.0));
    }

    #[test]
    fn tangent_scaling() {
        let m = tangent_metric(Metric2::identity(), 1.0).unwrap();
        assert_eq!(m, Metric2::identity());
        let m = tangent_metric(Metric2::identity(), 5.0).unwrap();
        assert_relative_eq!(m.m11, 1.0 / 25.0);
        // Edge of Euclidean length 5 has metric length 1.
        let f = MetricField2::constant(m);
        let l = edge_length_under_metric(Point2::origin(), Point2::new(5.0, 0.0), &f).unwrap();
        assert_relative_eq!(l, 1.0, epsilon = 1e-12);
        let m = tangent_metric(Metric2::new(2.0, 0.0, 1.0), 2.0).unwrap();
        assert_eq!(m, Metric2::new(0.5, 0.0, 0.25));
        assert!(tangent_metric(Metric2::identity(), 0.0).is_err());
    }

    #[test]
    fn curvature_flat_hits_floor() {
        let m = curvature_metric(Matrix2::zeros(), 3.0, (0.1, 10.0));
        assert_relative_eq!(m.m11, 1.0 / 100.0);
        assert_relative_eq!(m.m22, 1.0 / 100.0);
        assert_relative_eq!(m.m12, 0.0);
    }

    #[test]
    fn curvature_positive_diagonal() {
        let m = curvature_metric(Matrix2::new(2.0, 0.0, 0.0, 2.0), 1.0, (1e-6, 1e6));
        assert_relative_eq!(m.m11, 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.m22, 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.m12, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn curvature_off_diagonal_hand_eigen() {
        // H = [[0,1],[1,0]] has eigenvalues +-1; absolute values scaled by
        // 2 give the isotropic tensor 2 I.
        let m = curvature_metric(Matrix2::new(0.0, 1.0, 1.0, 0.0), 2.0, (1e-6, 1e6));
        assert_relative_eq!(m.m11, 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.m22, 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.m12, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn complexity_of_constant_fields() {
        let unit = Rect::axis_aligned(Point2::new(0.5, 0.5), Vec2::new(0.5, 0.5));
        let f = MetricField2::constant(Metric2::identity().scaled(4.0));
        let c = metric_complexity(&f, &unit, 4).unwrap();
        assert!(c.converged);
        assert_relative_eq!(c.value, 4.0, epsilon = 1e-9);

        let h = 0.25;
        let rect = Rect::axis_aligned(Point2::origin(), Vec2::new(1.5, 1.0)); // area 6
        let f = MetricField2::constant(Metric2::identity().scaled(1.0 / (h * h)));
        let c = metric_complexity(&f, &rect, 4).unwrap();
        assert_relative_eq!(c.value, 6.0 / (h * h), epsilon = 1e-9);
    }

    #[test]
    fn complexity_homogeneity_in_beta() {
        // 2D homogeneity: C(beta M) = beta C(M), exactly, including for
        // spatially varying fields.
        let terrain = grid_of(
            |x, y| 0.5 * (x * x + 0.5 * y * y),
            Point2::new(-2.0, -2.0),
            0.1,
            41,
            41,
        );
        let cache = Arc::new(FitCache::new(&terrain, 3));
        let rect = Rect::axis_aligned(Point2::origin(), Vec2::new(1.0, 1.0));
        let base = MetricField2::curvature(Arc::clone(&cache), 1.0, (1e-4, 1e4)).unwrap();
        let beta = 3.7;
        let scaled = MetricField2::curvature(Arc::clone(&cache), 1.0, (1e-4, 1e4))
            .unwrap()
            .with_scale(beta);
        let c0 = metric_complexity(&base, &rect, 8).unwrap().value;
        let c1 = metric_complexity(&scaled, &rect, 8).unwrap().value;
        assert_relative_eq!(c1, beta * c0, max_relative = 1e-6);
    }

    #[test]
    fn beta_star_arithmetic_and_sentinel() {
        assert_eq!(beta_star(1000.0, 2.0, 100.0).unwrap(), BetaStar::Active(5.0));
        assert_eq!(beta_star(10.0, 2.0, 0.0).unwrap(), BetaStar::Inactive);
        assert!(beta_star(0.0, 2.0, 1.0).is_err());
        // N = 2 alpha C1 gives beta* = 2 and the rescaled metric has
        // complexity N / alpha.
        let c1 = 7.0;
        let alpha = 2.0;
        let n = 2.0 * alpha * c1;
        let bs = match beta_star(n, alpha, c1).unwrap() {
            BetaStar::Active(b) => b,
            BetaStar::Inactive => panic!(),
        };
        assert_relative_eq!(bs, 2.0);
        // Constant field with C(M) = c1 over the unit square.
        let unit = Rect::axis_aligned(Point2::new(0.5, 0.5), Vec2::new(0.5, 0.5));
        let f = MetricField2::constant(Metric2::identity().scaled(c1)).with_scale(bs);
        let c = metric_complexity(&f, &unit, 4).unwrap();
        assert_relative_eq!(c.value, n / alpha, epsilon = 1e-9);
    }

    #[test]
    fn edge_length_closed_forms() {
        let f = MetricField2::constant(Metric2::identity().scaled(1.0 / 25.0));
        let l = edge_length_under_metric(Point2::origin(), Point2::new(3.0, 4.0), &f).unwrap();
        assert_relative_eq!(l, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tangent_length_on_inclined_plane() {
        // Plane z = x: M_FF = diag(2, 1); an edge along x of Euclidean
        // length h has tangent-metric length sqrt(2).
        let terrain = grid_of(|x, _| x, Point2::new(-2.0, -2.0), 0.25, 17, 17);
        let cache = Arc::new(FitCache::new(&terrain, 3));
        let h = 0.5;
        let f = MetricField2::tangent(cache, h).unwrap();
        let l =
            edge_length_under_metric(Point2::origin(), Point2::new(h, 0.0), &f).unwrap();
        assert_relative_eq!(l, std::f64::consts::SQRT_2, max_relative = 1e-9);
    }

    #[test]
    fn tangent_length_equals_chord_over_h_on_affine() {
        let terrain = grid_of(
            |x, y| 0.75 * x - 0.4 * y + 2.0,
            Point2::new(-2.0, -2.0),
            0.25,
            17,
            17,
        );
        let cache = Arc::new(FitCache::new(&terrain, 2));
        let h = 0.3;
        let f = MetricField2::tangent(cache, h).unwrap();
        let (p1, p2) = (Point2::new(-0.5, 0.2), Point2::new(0.4, -0.3));
        let l = edge_length_under_metric(p1, p2, &f).unwrap();
        let a = terrain.surface_point(p1).unwrap();
        let b = terrain.surface_point(p2).unwrap();
        let chord = (b - a).norm();
        assert_relative_eq!(l, chord / h, max_relative = 1e-6);
    }

    /// 64-point Gauss-Legendre oracle, built independently by Newton
    /// iteration on Legendre polynomials.
    fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
        let mut rule = Vec::with_capacity(n);
        for k in 0..n {
            // Initial guess (Chebyshev-like), then Newton on P_n.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                // Evaluate P_n and P_n' by recurrence.
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            rule.push((0.5 * (x + 1.0), 0.5 * w));
        }
        rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        rule
    }

    #[test]
    fn three_point_quadrature_matches_64_point_oracle() {
        let terrain = grid_of(
            |x, y| 0.4 * (1.3 * x).sin() + 0.3 * (0.9 * y).cos(),
            Point2::new(-3.0, -3.0),
            0.1,
            61,
            61,
        );
        let cache = Arc::new(FitCache::new(&terrain, 3));
        let f = MetricField2::tangent(cache, 0.4).unwrap();
        let (p1, p2) = (Point2::new(-0.8, -0.5), Point2::new(0.9, 0.7));
        let l3 = edge_length_under_metric(p1, p2, &f).unwrap();
        let rule = gauss_legendre_01(64);
        let e = p2 - p1;
        let l64: f64 = rule
            .iter()
            .map(|&(t, w)| {
                let m = f.eval(p1 + e * t).unwrap();
                w * m.quad(e).max(0.0).sqrt()
            })
            .sum();
        assert_relative_eq!(l3, l64, max_relative = 1e-4);
    }

    proptest! {
        #[test]
        fn curvature_metric_spd_after_clamp(
            a in -50.0f64..50.0,
            b in -50.0f64..50.0,
            c in -50.0f64..50.0,
            beta in 0.01f64..10.0,
        ) {
            let m = curvature_metric(Matrix2::new(a, b, b, c), beta, (0.05, 20.0));
            let (l1, l2) = m.eigenvalues();
            prop_assert!(l1 > 0.0);
            prop_assert!(l2 >= l1);
            let lo = 1.0 / (20.0f64 * 20.0);
            let hi = 1.0 / (0.05f64 * 0.05);
            prop_assert!(l1 >= lo * (1.0 - 1e-9));
            prop_assert!(l2 <= hi * (1.0 + 1e-9));
        }
    }
}
