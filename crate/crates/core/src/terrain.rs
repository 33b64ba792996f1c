//! Piecewise-linear topography model with local polynomial fits for
//! derivative queries.
//!
//! The terrain is a graph surface z = z(x, y) stored as a planar triangle
//! mesh with a height per node. Heights are interpolated barycentrically in
//! the containing triangle, which keeps the surface continuous across edges.
//! First and second derivatives are not defined on the PL surface, so they
//! are queried through least-squares polynomial fits of the local node cloud.

use crate::delaunay::Delaunay;
use crate::error::{Error, Result};
use crate::geo::{signed_area2, Point2, Point3, Vec2};
use crate::meshio;
use nalgebra::{DMatrix, DVector, Matrix2};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerrainFormat {
    /// ASCII "x y z" per line, row-major over a uniform grid.
    HeightGrid,
    /// ASCII "x y z" per line, arbitrary order; triangulated by Delaunay.
    PointCloud,
    /// Triangle mesh in the exchange format.
    TriangleMesh,
}

enum Locator {
    Grid {
        origin: Point2,
        dx: f64,
        dy: f64,
        nx: usize,
        ny: usize,
    },
    Bucket {
        origin: Point2,
        cell: f64,
        ncols: i64,
        nrows: i64,
        cells: Vec<Vec<u32>>,
    },
}

pub struct TerrainModel {
    nodes: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
    /// Neighbor across the edge opposite each local vertex; u32::MAX if none.
    neighbors: Vec<[u32; 3]>,
    locator: Locator,
    /// Closed boundary polygon (node ids, counter-clockwise).
    boundary: Vec<u32>,
    mean_edge: f64,
}

impl TerrainModel {
    /// Build from a uniform height grid, row-major with x varying fastest.
    /// Each cell is split along the diagonal from its lowest-index corner.
    pub fn from_grid(
        origin: Point2,
        dx: f64,
        dy: f64,
        nx: usize,
        ny: usize,
        heights: &[f64],
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::TerrainInput(format!(
                "grid must be at least 2x2, got {nx}x{ny}"
            )));
        }
        if dx <= 0.0 || dy <= 0.0 {
            return Err(Error::TerrainInput("grid spacing must be positive".into()));
        }
        if heights.len() != nx * ny {
            return Err(Error::TerrainInput(format!(
                "expected {} heights, got {}",
                nx * ny,
                heights.len()
            )));
        }
        if let Some(h) = heights.iter().find(|h| !h.is_finite()) {
            return Err(Error::TerrainInput(format!("non-finite height {h}")));
        }
        let mut nodes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                nodes.push(Point3::new(
                    origin.x + dx * i as f64,
                    origin.y + dy * j as f64,
                    heights[j * nx + i],
                ));
            }
        }
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let bl = (j * nx + i) as u32;
                let br = bl + 1;
                let tl = bl + nx as u32;
                let tr = tl + 1;
                // Lowest-index corner is bl; diagonal bl -> tr.
                triangles.push([bl, br, tr]);
                triangles.push([bl, tr, tl]);
            }
        }
        let locator = Locator::Grid {
            origin,
            dx,
            dy,
            nx,
            ny,
        };
        Self::assemble(nodes, triangles, locator)
    }

    /// Triangulate a point cloud by planar Delaunay of (x, y).
    pub fn from_cloud(points: &[Point3]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::TerrainInput(
                "point cloud needs at least 3 points".into(),
            ));
        }
        if let Some(p) = points.iter().find(|p| !p.z.is_finite()) {
            return Err(Error::TerrainInput(format!("non-finite height {}", p.z)));
        }
        let (mut lo, mut hi) = (
            Point2::new(f64::MAX, f64::MAX),
            Point2::new(f64::MIN, f64::MIN),
        );
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let mut dt = Delaunay::bounded(lo, hi);
        // Map from Delaunay vertex id to input point; detects duplicates.
        let mut kept: Vec<Point3> = Vec::with_capacity(points.len());
        for p in points {
            match dt.insert(Point2::new(p.x, p.y))? {
                crate::delaunay::Inserted::New(_) => kept.push(*p),
                crate::delaunay::Inserted::Existing(v) => {
                    let prev = kept[(v - 4) as usize];
                    if prev.z != p.z {
                        return Err(Error::TerrainInput(format!(
                            "duplicate planar point ({}, {}) with conflicting heights {} and {}",
                            p.x, p.y, prev.z, p.z
                        )));
                    }
                }
            }
        }
        let (pts2, tris) = dt.finalize_hull();
        if tris.is_empty() {
            return Err(Error::TerrainInput(
                "point cloud is collinear; no triangulation exists".into(),
            ));
        }
        let nodes: Vec<Point3> = pts2
            .iter()
            .zip(kept.iter())
            .map(|(p2, p3)| Point3::new(p2.x, p2.y, p3.z))
            .collect();
        let locator = Self::bucket_locator(&nodes, &tris);
        Self::assemble(nodes, tris, locator)
    }

    /// Wrap an existing triangle mesh. Rejects meshes that are not a graph
    /// surface in plan view.
    pub fn from_mesh(nodes: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if nodes.len() < 3 || triangles.is_empty() {
            return Err(Error::TerrainInput("mesh too small".into()));
        }
        for (e, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= nodes.len()) {
                return Err(Error::TerrainInput(format!(
                    "triangle {e} references a missing node"
                )));
            }
            let [a, b, c] = [nodes[t[0] as usize], nodes[t[1] as usize], nodes[t[2] as usize]];
            let area2 = signed_area2(
                Point2::new(a.x, a.y),
                Point2::new(b.x, b.y),
                Point2::new(c.x, c.y),
            );
            if area2 <= 0.0 {
                return Err(Error::TerrainInput(format!(
                    "triangle {e} has non-positive planar area {}",
                    0.5 * area2
                )));
            }
        }
        let locator = Self::bucket_locator(&nodes, &triangles);
        let model = Self::assemble(nodes, triangles, locator)?;
        model.reject_plan_overlap()?;
        Ok(model)
    }

    /// Load a terrain file in one of the supported exchange encodings.
    pub fn load(path: &Path, format: TerrainFormat) -> Result<Self> {
        match format {
            TerrainFormat::HeightGrid => {
                let pts = read_xyz(path)?;
                grid_from_samples(&pts)
            }
            TerrainFormat::PointCloud => {
                let pts = read_xyz(path)?;
                Self::from_cloud(&pts)
            }
            TerrainFormat::TriangleMesh => {
                let doc = meshio::read_exchange_document(path)?;
                if doc.triangles.is_empty() {
                    return Err(Error::TerrainInput(format!(
                        "{}: exchange file contains no triangles",
                        path.display()
                    )));
                }
                Self::from_mesh(doc.nodes, doc.triangles)
            }
        }
    }

    fn bucket_locator(nodes: &[Point3], triangles: &[[u32; 3]]) -> Locator {
        let (mut lo, mut hi) = (
            Point2::new(f64::MAX, f64::MAX),
            Point2::new(f64::MIN, f64::MIN),
        );
        for p in nodes {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let span = ((hi.x - lo.x).max(hi.y - lo.y)).max(1e-9);
        let target_cells = (triangles.len() as f64).sqrt().ceil().max(1.0);
        let cell = (span / target_cells).max(1e-9);
        let ncols = (((hi.x - lo.x) / cell).floor() as i64 + 1).max(1);
        let nrows = (((hi.y - lo.y) / cell).floor() as i64 + 1).max(1);
        let mut cells = vec![Vec::new(); (ncols * nrows) as usize];
        for (e, t) in triangles.iter().enumerate() {
            let ps: Vec<Point2> = t
                .iter()
                .map(|&v| Point2::new(nodes[v as usize].x, nodes[v as usize].y))
                .collect();
            let bx0 = ps.iter().map(|p| p.x).fold(f64::MAX, f64::min);
            let bx1 = ps.iter().map(|p| p.x).fold(f64::MIN, f64::max);
            let by0 = ps.iter().map(|p| p.y).fold(f64::MAX, f64::min);
            let by1 = ps.iter().map(|p| p.y).fold(f64::MIN, f64::max);
            let cx0 = (((bx0 - lo.x) / cell).floor() as i64).clamp(0, ncols - 1);
            let cx1 = (((bx1 - lo.x) / cell).floor() as i64).clamp(0, ncols - 1);
            let cy0 = (((by0 - lo.y) / cell).floor() as i64).clamp(0, nrows - 1);
            let cy1 = (((by1 - lo.y) / cell).floor() as i64).clamp(0, nrows - 1);
            for cx in cx0..=cx1 {
                for cy in cy0..=cy1 {
                    cells[(cy * ncols + cx) as usize].push(e as u32);
                }
            }
        }
        Locator::Bucket {
            origin: lo,
            cell,
            ncols,
            nrows,
            cells,
        }
    }

    fn assemble(nodes: Vec<Point3>, triangles: Vec<[u32; 3]>, locator: Locator) -> Result<Self> {
        let neighbors = build_neighbors(&triangles)?;
        let boundary = boundary_loop(&triangles, &neighbors)?;
        let mut edge_sum = 0.0;
        let mut edge_count = 0usize;
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (nodes[t[k] as usize], nodes[t[(k + 1) % 3] as usize]);
                edge_sum += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                edge_count += 1;
            }
        }
        Ok(TerrainModel {
            nodes,
            triangles,
            neighbors,
            locator,
            boundary,
            mean_edge: edge_sum / edge_count as f64,
        })
    }

    /// Spot-check that no triangle centroid or vertex lies strictly inside
    /// another triangle (two triangles overlapping in plan view).
    fn reject_plan_overlap(&self) -> Result<()> {
        for (e, t) in self.triangles.iter().enumerate() {
            let c = self.tri_centroid2(e);
            let containers = self.all_containers(c);
            if containers.len() > 1 {
                return Err(Error::TerrainInput(format!(
                    "triangles {} and {} overlap in plan view",
                    containers[0], containers[1]
                )));
            }
            let _ = t;
        }
        Ok(())
    }

    fn tri_centroid2(&self, e: usize) -> Point2 {
        let t = self.triangles[e];
        let (a, b, c) = (
            self.nodes[t[0] as usize],
            self.nodes[t[1] as usize],
            self.nodes[t[2] as usize],
        );
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    fn all_containers(&self, p: Point2) -> Vec<usize> {
        let mut out = Vec::new();
        if let Locator::Bucket {
            origin,
            cell,
            ncols,
            nrows,
            cells,
        } = &self.locator
        {
            let cx = (((p.x - origin.x) / cell).floor() as i64).clamp(0, ncols - 1);
            let cy = (((p.y - origin.y) / cell).floor() as i64).clamp(0, nrows - 1);
            for &e in &cells[(cy * ncols + cx) as usize] {
                if self.tri_contains(e as usize, p) {
                    out.push(e as usize);
                }
            }
        }
        out
    }

    fn tri_contains(&self, e: usize, p: Point2) -> bool {
        let t = self.triangles[e];
        let pts: Vec<Point2> = t
            .iter()
            .map(|&v| Point2::new(self.nodes[v as usize].x, self.nodes[v as usize].y))
            .collect();
        let o0 = signed_area2(pts[0], pts[1], p);
        let o1 = signed_area2(pts[1], pts[2], p);
        let o2 = signed_area2(pts[2], pts[0], p);
        o0 >= 0.0 && o1 >= 0.0 && o2 >= 0.0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn nodes(&self) -> &[Point3] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn mean_edge(&self) -> f64 {
        self.mean_edge
    }

    /// Containing triangle of a planar point, or the out-of-domain error.
    pub fn locate(&self, p: Point2) -> Result<usize> {
        match &self.locator {
            Locator::Grid {
                origin,
                dx,
                dy,
                nx,
                ny,
            } => {
                let fx = (p.x - origin.x) / dx;
                let fy = (p.y - origin.y) / dy;
                if fx < 0.0 || fy < 0.0 || fx > (*nx - 1) as f64 || fy > (*ny - 1) as f64 {
                    return Err(self.out_of_domain(p));
                }
                let i = (fx.floor() as usize).min(nx - 2);
                let j = (fy.floor() as usize).min(ny - 2);
                let (rx, ry) = (fx - i as f64, fy - j as f64);
                let base = 2 * (j * (nx - 1) + i);
                // Lower triangle covers ry <= rx (below the bl->tr diagonal).
                Ok(if ry <= rx { base } else { base + 1 })
            }
            Locator::Bucket {
                origin,
                cell,
                ncols,
                nrows,
                cells,
            } => {
                let cx = ((p.x - origin.x) / cell).floor() as i64;
                let cy = ((p.y - origin.y) / cell).floor() as i64;
                if cx < 0 || cy < 0 || cx >= *ncols || cy >= *nrows {
                    return Err(self.out_of_domain(p));
                }
                for &e in &cells[(cy * ncols + cx) as usize] {
                    if self.tri_contains(e as usize, p) {
                        return Ok(e as usize);
                    }
                }
                Err(self.out_of_domain(p))
            }
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.locate(p).is_ok()
    }

    fn out_of_domain(&self, p: Point2) -> Error {
        Error::OutOfDomain {
            query: p,
            closest: self.closest_boundary_point(p),
        }
    }

    /// Closest point of the domain boundary polygon.
    pub fn closest_boundary_point(&self, p: Point2) -> Point2 {
        let mut best = (f64::MAX, p);
        let n = self.boundary.len();
        for i in 0..n {
            let a = self.node2(self.boundary[i]);
            let b = self.node2(self.boundary[(i + 1) % n]);
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let q = a + ab * t;
            let d = (p - q).norm_squared();
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    fn node2(&self, v: u32) -> Point2 {
        let p = self.nodes[v as usize];
        Point2::new(p.x, p.y)
    }

    /// Height by barycentric interpolation in the containing triangle.
    pub fn height_at(&self, p: Point2) -> Result<f64> {
        let e = self.locate(p)?;
        let t = self.triangles[e];
        let [a, b, c] = [
            self.nodes[t[0] as usize],
            self.nodes[t[1] as usize],
            self.nodes[t[2] as usize],
        ];
        let w = crate::geo::barycentric(
            Point2::new(a.x, a.y),
            Point2::new(b.x, b.y),
            Point2::new(c.x, c.y),
            p,
        );
        Ok(w[0] * a.z + w[1] * b.z + w[2] * c.z)
    }

    /// Lift a parametric point onto the topography.
    pub fn surface_point(&self, p: Point2) -> Result<Point3> {
        Ok(Point3::new(p.x, p.y, self.height_at(p)?))
    }

    /// Least-squares polynomial fit of the node cloud around `p`.
    ///
    /// Gathers `degree` layers of element adjacency around the containing
    /// triangle and extends the neighborhood until the problem is
    /// well-posed. Coordinates are shifted to `p` and scaled by the local
    /// mean edge length before solving the normal equations.
    pub fn fit_local_polynomial(&self, p: Point2, degree: usize) -> Result<PolyFit> {
        if degree < 1 {
            return Err(Error::InvalidParameter {
                name: "degree",
                reason: "polynomial degree must be >= 1".into(),
            });
        }
        let seed = self.locate(p)?;
        let m = (degree + 1) * (degree + 2) / 2;
        let mut in_set = vec![false; self.triangles.len()];
        let mut tris = vec![seed];
        in_set[seed] = true;
        let mut frontier = vec![seed];
        let mut grow = |tris: &mut Vec<usize>, frontier: &mut Vec<usize>, in_set: &mut Vec<bool>| {
            let mut next = Vec::new();
            for &e in frontier.iter() {
                for &nb in &self.neighbors[e] {
                    if nb != NONE && !in_set[nb as usize] {
                        in_set[nb as usize] = true;
                        tris.push(nb as usize);
                        next.push(nb as usize);
                    }
                }
            }
            *frontier = next;
        };
        for _ in 0..degree {
            grow(&mut tris, &mut frontier, &mut in_set);
        }
        let max_extra_layers = 16;
        let mut extra = 0;
        loop {
            let (points, mean_edge) = self.support_points(&tris);
            if points.len() >= m {
                match solve_fit(p, degree, &points, mean_edge) {
                    Ok(fit) => return Ok(fit),
                    Err(_) if extra < max_extra_layers && !frontier.is_empty() => {}
                    Err(e) => return Err(e),
                }
            } else if frontier.is_empty() || extra >= max_extra_layers {
                return Err(Error::DegenerateFit {
                    center: p,
                    reason: format!(
                        "only {} support points for {} coefficients after layer exhaustion",
                        points.len(),
                        m
                    ),
                });
            }
            grow(&mut tris, &mut frontier, &mut in_set);
            extra += 1;
        }
    }

    fn support_points(&self, tris: &[usize]) -> (Vec<Point3>, f64) {
        let mut seen: HashMap<u32, ()> = HashMap::new();
        let mut pts = Vec::new();
        let mut edge_sum = 0.0;
        let mut edge_count = 0usize;
        for &e in tris {
            let t = self.triangles[e];
            for k in 0..3 {
                if seen.insert(t[k], ()).is_none() {
                    pts.push(self.nodes[t[k] as usize]);
                }
                let (a, b) = (
                    self.nodes[t[k] as usize],
                    self.nodes[t[(k + 1) % 3] as usize],
                );
                edge_sum += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                edge_count += 1;
            }
        }
        pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
        (pts, edge_sum / edge_count.max(1) as f64)
    }
}

fn build_neighbors(triangles: &[[u32; 3]]) -> Result<Vec<[u32; 3]>> {
    let mut neighbors = vec![[NONE; 3]; triangles.len()];
    let mut edge_owner: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
    for (e, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
            let key = (a.min(b), a.max(b));
            match edge_owner.remove(&key) {
                None => {
                    edge_owner.insert(key, (e as u32, k));
                }
                Some((other, slot)) => {
                    if neighbors[other as usize][slot] != NONE {
                        return Err(Error::TerrainInput(format!(
                            "edge ({}, {}) shared by more than two triangles",
                            key.0, key.1
                        )));
                    }
                    neighbors[e][k] = other;
                    neighbors[other as usize][slot] = e as u32;
                }
            }
        }
    }
    Ok(neighbors)
}

fn boundary_loop(triangles: &[[u32; 3]], neighbors: &[[u32; 3]]) -> Result<Vec<u32>> {
    // Collect directed boundary edges and walk them into a loop. Meshes with
    // several loops (holes) keep only the longest; closest-point queries stay
    // correct for convex domains, which is all the pipeline produces.
    let mut next: HashMap<u32, u32> = HashMap::new();
    for (e, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            if neighbors[e][k] == NONE {
                let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
                next.insert(a, b);
            }
        }
    }
    if next.is_empty() {
        return Err(Error::TerrainInput("mesh has no boundary".into()));
    }
    let mut best: Vec<u32> = Vec::new();
    let mut visited: HashMap<u32, ()> = HashMap::new();
    let starts: Vec<u32> = {
        let mut s: Vec<u32> = next.keys().copied().collect();
        s.sort_unstable();
        s
    };
    for start in starts {
        if visited.contains_key(&start) {
            continue;
        }
        let mut ring = vec![start];
        visited.insert(start, ());
        let mut cur = start;
        while let Some(&nxt) = next.get(&cur) {
            if nxt == start {
                break;
            }
            if visited.insert(nxt, ()).is_some() {
                break;
            }
            ring.push(nxt);
            cur = nxt;
        }
        if ring.len() > best.len() {
            best = ring;
        }
    }
    Ok(best)
}

fn read_xyz(path: &Path) -> Result<Vec<Point3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut take = |name| {
            it.next()
                .ok_or_else(|| {
                    Error::parse(
                        path.display().to_string(),
                        lineno + 1,
                        format!("missing {name} value"),
                    )
                })
                .and_then(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::parse(
                            path.display().to_string(),
                            lineno + 1,
                            format!("invalid {name} value '{s}'"),
                        )
                    })
                })
        };
        let (x, y, z) = (take("x")?, take("y")?, take("z")?);
        if !z.is_finite() || !x.is_finite() || !y.is_finite() {
            return Err(Error::parse(
                path.display().to_string(),
                lineno + 1,
                "non-finite coordinate",
            ));
        }
        pts.push(Point3::new(x, y, z));
    }
    if pts.len() < 3 {
        return Err(Error::TerrainInput(format!(
            "{}: fewer than 3 points",
            path.display()
        )));
    }
    Ok(pts)
}

/// Reassemble grid structure from row-major samples, inferring the spacing.
fn grid_from_samples(pts: &[Point3]) -> Result<TerrainModel> {
    let tol = 1e-9
        * pts
            .iter()
            .map(|p| p.x.abs().max(p.y.abs()))
            .fold(1.0, f64::max);
    let mut xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() <= tol);
    let mut ys: Vec<f64> = pts.iter().map(|p| p.y).collect();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup_by(|a, b| (*a - *b).abs() <= tol);
    let (nx, ny) = (xs.len(), ys.len());
    if nx * ny != pts.len() {
        return Err(Error::TerrainInput(format!(
            "samples do not form a full grid: {} x {} != {}",
            nx,
            ny,
            pts.len()
        )));
    }
    let dx = (xs[nx - 1] - xs[0]) / (nx - 1) as f64;
    let dy = (ys[ny - 1] - ys[0]) / (ny - 1) as f64;
    for (i, &x) in xs.iter().enumerate() {
        if (x - (xs[0] + dx * i as f64)).abs() > 1e-6 * dx.max(1.0) {
            return Err(Error::TerrainInput("grid x spacing is not uniform".into()));
        }
    }
    for (j, &y) in ys.iter().enumerate() {
        if (y - (ys[0] + dy * j as f64)).abs() > 1e-6 * dy.max(1.0) {
            return Err(Error::TerrainInput("grid y spacing is not uniform".into()));
        }
    }
    let mut heights = vec![f64::NAN; nx * ny];
    for p in pts {
        let i = ((p.x - xs[0]) / dx).round() as usize;
        let j = ((p.y - ys[0]) / dy).round() as usize;
        let slot = &mut heights[j * nx + i];
        if slot.is_finite() && *slot != p.z {
            return Err(Error::TerrainInput(format!(
                "duplicate planar point ({}, {}) with conflicting heights {} and {}",
                p.x, p.y, slot, p.z
            )));
        }
        *slot = p.z;
    }
    TerrainModel::from_grid(Point2::new(xs[0], ys[0]), dx, dy, nx, ny, &heights)
}

/// Local polynomial approximation of the height field around a point.
#[derive(Debug, Clone)]
pub struct PolyFit {
    degree: usize,
    /// Coefficients over the shifted/scaled frame, ordered by total degree;
    /// within a degree block the x exponent decreases.
    coeffs: Vec<f64>,
    center: Point2,
    scale: f64,
    support_count: usize,
    gather_radius: f64,
}

/// Exponent pairs (i, j) for total degree <= q, in coefficient order.
fn exponents(q: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for d in 0..=q {
        for i in (0..=d).rev() {
            out.push((i, d - i));
        }
    }
    out
}

fn solve_fit(center: Point2, degree: usize, points: &[Point3], mean_edge: f64) -> Result<PolyFit> {
    let exps = exponents(degree);
    let m = exps.len();
    let n = points.len();
    let scale = mean_edge.max(1e-12);
    let mut a = DMatrix::zeros(n, m);
    let mut rhs = DVector::zeros(n);
    let mut radius: f64 = 0.0;
    for (r, p) in points.iter().enumerate() {
        let xx = (p.x - center.x) / scale;
        let yy = (p.y - center.y) / scale;
        radius = radius.max((Vec2::new(p.x - center.x, p.y - center.y)).norm());
        for (cidx, &(i, j)) in exps.iter().enumerate() {
            a[(r, cidx)] = xx.powi(i as i32) * yy.powi(j as i32);
        }
        rhs[r] = p.z;
    }
    let normal = a.transpose() * &a;
    let atz = a.transpose() * rhs;
    let chol = normal.cholesky().ok_or_else(|| Error::DegenerateFit {
        center,
        reason: "normal equations are rank-deficient".into(),
    })?;
    let coeffs = chol.solve(&atz);
    Ok(PolyFit {
        degree,
        coeffs: coeffs.iter().copied().collect(),
        center,
        scale,
        support_count: n,
        gather_radius: radius,
    })
}

impl PolyFit {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn center(&self) -> Point2 {
        self.center
    }

    pub fn support_count(&self) -> usize {
        self.support_count
    }

    /// Queries farther than this from the center should trigger a refit.
    pub fn support_radius(&self) -> f64 {
        2.0 * self.gather_radius
    }

    pub fn supports(&self, p: Point2) -> bool {
        (p - self.center).norm() <= self.support_radius()
    }

    pub fn value(&self, p: Point2) -> f64 {
        let (xx, yy) = self.local(p);
        exponents(self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(&(i, j), &c)| c * xx.powi(i as i32) * yy.powi(j as i32))
            .sum()
    }

    /// Exact analytic gradient of the stored polynomial.
    pub fn gradient(&self, p: Point2) -> Vec2 {
        let (xx, yy) = self.local(p);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (&(i, j), &c) in exponents(self.degree).iter().zip(&self.coeffs) {
            if i > 0 {
                gx += c * i as f64 * xx.powi(i as i32 - 1) * yy.powi(j as i32);
            }
            if j > 0 {
                gy += c * j as f64 * xx.powi(i as i32) * yy.powi(j as i32 - 1);
            }
        }
        Vec2::new(gx / self.scale, gy / self.scale)
    }

    /// Exact analytic Hessian of the stored polynomial.
    pub fn hessian(&self, p: Point2) -> Matrix2<f64> {
        let (xx, yy) = self.local(p);
        let (mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0);
        for (&(i, j), &c) in exponents(self.degree).iter().zip(&self.coeffs) {
            let (fi, fj) = (i as f64, j as f64);
            if i > 1 {
                hxx += c * fi * (fi - 1.0) * xx.powi(i as i32 - 2) * yy.powi(j as i32);
            }
            if i > 0 && j > 0 {
                hxy += c * fi * fj * xx.powi(i as i32 - 1) * yy.powi(j as i32 - 1);
            }
            if j > 1 {
                hyy += c * fj * (fj - 1.0) * xx.powi(i as i32) * yy.powi(j as i32 - 2);
            }
        }
        let s2 = self.scale * self.scale;
        Matrix2::new(hxx / s2, hxy / s2, hxy / s2, hyy / s2)
    }

    /// Coefficients recombined into the unshifted, unscaled monomial basis.
    pub fn coefficients_unscaled(&self) -> Vec<((usize, usize), f64)> {
        let q = self.degree;
        let mut out: HashMap<(usize, usize), f64> = HashMap::new();
        let binom = |n: usize, k: usize| -> f64 {
            let mut v = 1.0;
            for t in 0..k {
                v = v * (n - t) as f64 / (t + 1) as f64;
            }
            v
        };
        for (&(i, j), &c) in exponents(q).iter().zip(&self.coeffs) {
            let si = self.scale.powi(i as i32);
            let sj = self.scale.powi(j as i32);
            for mi in 0..=i {
                for mj in 0..=j {
                    let term = c / (si * sj)
                        * binom(i, mi)
                        * binom(j, mj)
                        * (-self.center.x).powi((i - mi) as i32)
                        * (-self.center.y).powi((j - mj) as i32);
                    *out.entry((mi, mj)).or_insert(0.0) += term;
                }
            }
        }
        let mut v: Vec<_> = out.into_iter().collect();
        v.sort_by_key(|&((i, j), _)| (i + j, j));
        v
    }

    fn local(&self, p: Point2) -> (f64, f64) {
        (
            (p.x - self.center.x) / self.scale,
            (p.y - self.center.y) / self.scale,
        )
    }
}

/// Spatially indexed cache of polynomial fits.
///
/// A cached fit is reused for any query inside its support radius, which is
/// what keeps edge-quadrature metric evaluation affordable during
/// adaptation. The cache is append-only and deterministic.
pub struct FitCache<'t> {
    terrain: &'t TerrainModel,
    degree: usize,
    inner: Mutex<CacheInner>,
}

struct CacheInner {
    fits: Vec<PolyFit>,
    grid: HashMap<(i64, i64), Vec<u32>>,
    cell: f64,
    max_radius: f64,
}

impl<'t> FitCache<'t> {
    pub fn new(terrain: &'t TerrainModel, degree: usize) -> Self {
        let cell = terrain.mean_edge() * (degree as f64 + 1.0);
        FitCache {
            terrain,
            degree,
            inner: Mutex::new(CacheInner {
                fits: Vec::new(),
                grid: HashMap::new(),
                cell: cell.max(1e-9),
                max_radius: 0.0,
            }),
        }
    }

    pub fn terrain(&self) -> &'t TerrainModel {
        self.terrain
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fit valid at `p`, reusing a cached one when `p` lies inside its
    /// support radius (nearest center wins).
    pub fn fit_at(&self, p: Point2) -> Result<PolyFit> {
        {
            let inner = self.inner.lock().unwrap();
            if let Some(fit) = inner.lookup(p) {
                return Ok(fit);
            }
        }
        let fit = self.terrain.fit_local_polynomial(p, self.degree)?;
        let mut inner = self.inner.lock().unwrap();
        inner.store(fit.clone());
        Ok(fit)
    }
}

impl CacheInner {
    fn cell_of(&self, p: Point2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    fn lookup(&self, p: Point2) -> Option<PolyFit> {
        if self.fits.is_empty() {
            return None;
        }
        let reach = (self.max_radius / self.cell).ceil() as i64 + 1;
        let c = self.cell_of(p);
        let mut best: Option<(f64, u32)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                if let Some(ids) = self.grid.get(&(c.0 + dx, c.1 + dy)) {
                    for &id in ids {
                        let fit = &self.fits[id as usize];
                        let d = (p - fit.center).norm();
                        if d <= fit.support_radius() && best.map_or(true, |(bd, _)| d < bd) {
                            best = Some((d, id));
                        }
                    }
                }
            }
        }
        best.map(|(_, id)| self.fits[id as usize].clone())
    }

    fn store(&mut self, fit: PolyFit) {
        let id = self.fits.len() as u32;
        let c = self.cell_of(fit.center);
        self.grid.entry(c).or_default().push(id);
        self.max_radius = self.max_radius.max(fit.support_radius());
        self.fits.push(fit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

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
    fn flat_2x2_grid_two_triangles() {
        let t = grid_of(|_, _| 0.0, Point2::origin(), 1.0, 2, 2);
        assert_eq!(t.triangle_count(), 2);
        assert_eq!(t.node_count(), 4);
        assert_relative_eq!(t.height_at(Point2::new(0.3, 0.7)).unwrap(), 0.0);
    }

    #[test]
    fn linear_3x3_grid_exact_heights() {
        let t = grid_of(|x, _| x, Point2::origin(), 0.5, 3, 3);
        assert_eq!(t.triangle_count(), 8);
        for &(x, y) in &[(0.1, 0.9), (0.77, 0.33), (0.5, 0.5), (0.25, 0.5)] {
            assert_relative_eq!(t.height_at(Point2::new(x, y)).unwrap(), x, epsilon = 1e-14);
        }
    }

    #[test]
    fn pl_exact_on_affine() {
        let t = grid_of(|x, y| 2.0 * x + 3.0 * y, Point2::origin(), 0.25, 5, 5);
        assert_relative_eq!(
            t.height_at(Point2::new(0.25, 0.5)).unwrap(),
            2.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn flat_height_is_constant() {
        let t = grid_of(|_, _| 5.0, Point2::origin(), 1.0, 4, 4);
        assert_relative_eq!(t.height_at(Point2::new(1.7, 2.2)).unwrap(), 5.0);
        let sp = t.surface_point(Point2::new(1.7, 2.2)).unwrap();
        assert_eq!(sp.z, t.height_at(Point2::new(1.7, 2.2)).unwrap());
    }

    #[test]
    fn paraboloid_cell_center_matches_hand_interpolation() {
        // 3x3 grid of z = x^2 + y^2, spacing 1; query the center of the
        // first cell. The container triangle is (bl, br, tr) with heights
        // 0, 1, 2; barycentric at (0.5, 0.5) on that triangle gives 1.
        let t = grid_of(|x, y| x * x + y * y, Point2::origin(), 1.0, 3, 3);
        let v = t.height_at(Point2::new(0.5, 0.5)).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-14);
        // PL error bound h^2 * max|H| / 2 with h = cell diagonal.
        let true_z = 0.5;
        assert!((v - true_z).abs() <= 2.0 * 2.0 / 2.0 + 1e-12);
    }

    #[test]
    fn out_of_domain_reports_closest_point() {
        let t = grid_of(|_, _| 0.0, Point2::origin(), 1.0, 3, 3);
        let err = t.height_at(Point2::new(5.0, 1.0)).unwrap_err();
        match err {
            Error::OutOfDomain { closest, .. } => {
                assert_relative_eq!(closest.x, 2.0, epsilon = 1e-12);
                assert_relative_eq!(closest.y, 1.0, epsilon = 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cloud_on_paraboloid_keeps_vertex_heights() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..100)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let y: f64 = rng.gen_range(-1.0..1.0);
                Point3::new(x, y, x * x + y * y)
            })
            .collect();
        let t = TerrainModel::from_cloud(&pts).unwrap();
        assert_eq!(t.node_count(), 100);
        for p in t.nodes() {
            assert_relative_eq!(p.z, p.x * p.x + p.y * p.y, epsilon = 1e-12);
        }
        for p in t.nodes() {
            let h = t.height_at(Point2::new(p.x, p.y)).unwrap();
            assert_relative_eq!(h, p.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn conflicting_duplicate_is_rejected() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 0.0, 2.0),
        ];
        let err = TerrainModel::from_cloud(&pts).unwrap_err();
        assert!(matches!(err, Error::TerrainInput(_)));
        assert!(err.to_string().contains("conflicting heights"));
    }

    #[test]
    fn overlapping_mesh_is_rejected() {
        let nodes = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.2, 0.2, 1.0),
            Point3::new(1.2, 0.2, 1.0),
            Point3::new(0.2, 1.2, 1.0),
        ];
        let tris = vec![[0u32, 1, 2], [3, 4, 5]];
        let err = TerrainModel::from_mesh(nodes, tris).unwrap_err();
        assert!(err.to_string().contains("overlap"));
    }

    #[test]
    fn fit_reproduces_generating_polynomial() {
        let t = grid_of(
            |x, y| 1.0 + 2.0 * x + 3.0 * y + x * y,
            Point2::new(-1.0, -1.0),
            0.25,
            9,
            9,
        );
        let fit = t
            .fit_local_polynomial(Point2::new(0.1, -0.2), 2)
            .unwrap();
        let want = [
            ((0usize, 0usize), 1.0),
            ((1, 0), 2.0),
            ((0, 1), 3.0),
            ((1, 1), 1.0),
        ];
        let got = fit.coefficients_unscaled();
        for ((i, j), c) in got {
            let expect = want
                .iter()
                .find(|&&((wi, wj), _)| wi == i && wj == j)
                .map(|&(_, v)| v)
                .unwrap_or(0.0);
            assert!(
                (c - expect).abs() <= 1e-10 * expect.abs().max(1.0),
                "coefficient ({i},{j}) = {c}, want {expect}"
            );
        }
    }

    #[test]
    fn flat_fit_is_constant() {
        let t = grid_of(|_, _| 7.5, Point2::origin(), 0.5, 9, 9);
        let fit = t.fit_local_polynomial(Point2::new(2.0, 2.0), 3).unwrap();
        for ((i, j), c) in fit.coefficients_unscaled() {
            if i == 0 && j == 0 {
                assert_relative_eq!(c, 7.5, epsilon = 1e-10);
            } else {
                assert!(c.abs() < 1e-10, "coefficient ({i},{j}) = {c}");
            }
        }
    }

    #[test]
    fn gaussian_summit_gradient_near_zero() {
        let d = 0.1;
        let t = grid_of(
            |x, y| (-(x * x + y * y) / 0.5).exp(),
            Point2::new(-2.0, -2.0),
            d,
            41,
            41,
        );
        let fit = t.fit_local_polynomial(Point2::origin(), 3).unwrap();
        let g = fit.gradient(Point2::origin());
        assert!(g.norm() < 1e-2 * d, "summit gradient {}", g.norm());
    }

    #[test]
    fn sine_gradient_matches_taylor() {
        let d = 0.05;
        let t = grid_of(|x, _| x.sin(), Point2::new(-1.0, -1.0), d, 41, 41);
        let fit = t.fit_local_polynomial(Point2::origin(), 3).unwrap();
        let g = fit.gradient(Point2::origin());
        assert!((g.x - 1.0).abs() < 1e-3, "gradient.x = {}", g.x);
        assert!(g.y.abs() < 1e-3);
    }

    #[test]
    fn hessian_of_paraboloid() {
        let t = grid_of(|x, y| x * x + y * y, Point2::new(-1.0, -1.0), 0.1, 21, 21);
        let fit = t.fit_local_polynomial(Point2::new(0.05, 0.05), 2).unwrap();
        let h = fit.hessian(Point2::new(0.05, 0.05));
        assert_relative_eq!(h[(0, 0)], 2.0, epsilon = 1e-8);
        assert_relative_eq!(h[(1, 1)], 2.0, epsilon = 1e-8);
        assert!(h[(0, 1)].abs() < 1e-8);
    }

    #[test]
    fn linear_fit_gradient() {
        let t = grid_of(|x, _| x, Point2::origin(), 0.5, 7, 7);
        let fit = t.fit_local_polynomial(Point2::new(1.5, 1.5), 1).unwrap();
        let g = fit.gradient(Point2::new(1.5, 1.5));
        assert_relative_eq!(g.x, 1.0, epsilon = 1e-10);
        assert_relative_eq!(g.y, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn fit_cache_reuses_nearby_fit() {
        let t = grid_of(|x, y| x * x + y * y, Point2::new(-1.0, -1.0), 0.1, 21, 21);
        let cache = FitCache::new(&t, 2);
        let f1 = cache.fit_at(Point2::new(0.0, 0.0)).unwrap();
        let f2 = cache.fit_at(Point2::new(0.01, 0.0)).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(f1.center(), f2.center());
        let far = t.closest_boundary_point(Point2::new(10.0, 0.0));
        let f3 = cache.fit_at(Point2::new(far.x - 0.05, 0.0)).unwrap();
        assert_ne!(f3.center(), f1.center());
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn fit_gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let t = grid_of(
            |x, y| (x * 1.3).sin() * (0.7 * y).cos(),
            Point2::new(-2.0, -2.0),
            0.08,
            51,
            51,
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = Point2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let fit = t.fit_local_polynomial(p, 3).unwrap();
            let g = fit.gradient(p);
            let e = 1e-5;
            let fd = Vec2::new(
                (fit.value(Point2::new(p.x + e, p.y)) - fit.value(Point2::new(p.x - e, p.y)))
                    / (2.0 * e),
                (fit.value(Point2::new(p.x, p.y + e)) - fit.value(Point2::new(p.x, p.y - e)))
                    / (2.0 * e),
            );
            assert!(
                (g - fd).norm() <= 1e-6 * g.norm().max(1.0),
                "gradient {g:?} vs fd {fd:?}"
            );
        }
    }
}
