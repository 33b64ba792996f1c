//! Incremental planar Delaunay triangulation with Lawson legalization, plus
//! quality/size-field refinement for convex domains.
//!
//! Two construction modes are used by the rest of the crate:
//!
//! * [`Delaunay::from_convex_polygon`] seeds the triangulation with a convex
//!   boundary polygon (the buffer ellipse sampling) whose edges stay on the
//!   hull for the whole run; [`refine`] then inserts Steiner points until the
//!   size field and the minimum-angle bound are satisfied.
//! * [`Delaunay::bounded`] starts from a large bounding square so arbitrary
//!   point clouds can be triangulated; [`Delaunay::finalize_hull`] strips the
//!   square corners and returns the hull triangulation.
//!
//! Predicates (`orient2d`, `incircle`) are exact, so walks terminate and
//! legalization cannot cycle.

use crate::error::{Error, Result};
use crate::geo::{circumcenter, signed_area2, Point2};
use robust::{incircle, orient2d, Coord};
use std::collections::HashMap;

const NONE: u32 = u32::MAX;

#[inline]
fn coord(p: Point2) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

#[inline]
fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    orient2d(coord(a), coord(b), coord(c))
}

#[derive(Clone, Debug)]
struct DTri {
    /// Vertex ids, counter-clockwise.
    v: [u32; 3],
    /// `n[i]` is the neighbor across the edge opposite `v[i]`.
    n: [u32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Located {
    InTriangle(u32),
    /// On the edge of triangle `.0` opposite its vertex `.1`.
    OnEdge(u32, usize),
    OnVertex(u32),
    /// Left the triangulation across a hull edge of triangle `.0`.
    Outside(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inserted {
    New(u32),
    Existing(u32),
}

impl Inserted {
    pub fn index(self) -> u32 {
        match self {
            Inserted::New(i) | Inserted::Existing(i) => i,
        }
    }
}

pub struct Delaunay {
    pub points: Vec<Point2>,
    tris: Vec<DTri>,
    alive: Vec<bool>,
    free: Vec<u32>,
    hint: u32,
    /// Number of artificial vertices prepended by `bounded` (0 or 4).
    n_artificial: u32,
}

impl Delaunay {
    /// Triangulation of a convex polygon given by its CCW boundary points.
    /// The polygon edges are hull edges and remain in every later state.
    pub fn from_convex_polygon(boundary: &[Point2]) -> Result<Self> {
        if boundary.len() < 3 {
            return Err(Error::Meshing(
                "convex polygon needs at least 3 vertices".into(),
            ));
        }
        let n = boundary.len() as u32;
        let mut dt = Delaunay {
            points: boundary.to_vec(),
            tris: Vec::new(),
            alive: Vec::new(),
            free: Vec::new(),
            hint: 0,
            n_artificial: 0,
        };
        // Fan triangulation from vertex 0, then legalize everything.
        for i in 1..n - 1 {
            if orient(boundary[0], boundary[i as usize], boundary[i as usize + 1]) <= 0.0 {
                return Err(Error::Meshing(format!(
                    "boundary polygon not strictly convex/CCW at vertex {i}"
                )));
            }
            dt.push_tri([0, i, i + 1]);
        }
        for t in 0..dt.tris.len() as u32 {
            if t > 0 {
                dt.tris[t as usize].n[2] = t - 1;
            }
            if (t as usize) < dt.tris.len() - 1 {
                dt.tris[t as usize].n[1] = t + 1;
            }
        }
        let mut stack: Vec<(u32, usize)> = (0..dt.tris.len() as u32)
            .flat_map(|t| (0..3).map(move |i| (t, i)))
            .collect();
        dt.legalize_stack(&mut stack);
        Ok(dt)
    }

    /// Empty triangulation covering a large square around `bbox`; intended
    /// for point clouds. Call `finalize_hull` when all points are in.
    pub fn bounded(bbox_min: Point2, bbox_max: Point2) -> Self {
        let cx = 0.5 * (bbox_min.x + bbox_max.x);
        let cy = 0.5 * (bbox_min.y + bbox_max.y);
        let r = ((bbox_max.x - bbox_min.x).max(bbox_max.y - bbox_min.y)).max(1.0) * 1.0e4;
        let corners = [
            Point2::new(cx - r, cy - r),
            Point2::new(cx + r, cy - r),
            Point2::new(cx + r, cy + r),
            Point2::new(cx - r, cy + r),
        ];
        let mut dt = Delaunay {
            points: corners.to_vec(),
            tris: Vec::new(),
            alive: Vec::new(),
            free: Vec::new(),
            hint: 0,
            n_artificial: 4,
        };
        dt.push_tri([0, 1, 2]);
        dt.push_tri([0, 2, 3]);
        dt.tris[0].n[1] = 1; // across edge (2,0)
        dt.tris[1].n[2] = 0; // across edge (0,2)
        dt
    }

    fn push_tri(&mut self, v: [u32; 3]) -> u32 {
        if let Some(t) = self.free.pop() {
            self.tris[t as usize] = DTri { v, n: [NONE; 3] };
            self.alive[t as usize] = true;
            t
        } else {
            self.tris.push(DTri { v, n: [NONE; 3] });
            self.alive.push(true);
            (self.tris.len() - 1) as u32
        }
    }

    fn kill(&mut self, t: u32) {
        self.alive[t as usize] = false;
        self.free.push(t);
    }

    #[inline]
    fn tri(&self, t: u32) -> &DTri {
        &self.tris[t as usize]
    }

    pub fn triangle_vertices(&self, t: u32) -> [u32; 3] {
        self.tri(t).v
    }

    pub fn is_alive(&self, t: u32) -> bool {
        self.alive[t as usize]
    }

    pub fn num_tri_slots(&self) -> usize {
        self.tris.len()
    }

    /// Slot in `t` whose neighbor is `u`.
    fn slot_of_neighbor(&self, t: u32, u: u32) -> usize {
        let tri = self.tri(t);
        (0..3)
            .find(|&i| tri.n[i] == u)
            .expect("neighbor link missing")
    }

    fn set_neighbor(&mut self, t: u32, slot: usize, u: u32) {
        self.tris[t as usize].n[slot] = u;
    }

    /// Re-point `old`'s link toward `t` to point at `newt`.
    fn relink(&mut self, old: u32, from: u32, newt: u32) {
        if old != NONE {
            let s = self.slot_of_neighbor(old, from);
            self.set_neighbor(old, s, newt);
        }
    }

    /// Walk from the hint toward `p`.
    pub fn locate(&self, p: Point2) -> Located {
        let mut t = if self.hint != NONE && self.alive[self.hint as usize] {
            self.hint
        } else {
            match self.alive.iter().position(|a| *a) {
                Some(i) => i as u32,
                None => return Located::Outside(NONE),
            }
        };
        let mut prev = NONE;
        let max_steps = 4 * self.tris.len() + 16;
        for _ in 0..max_steps {
            let tri = self.tri(t);
            let [a, b, c] = [
                self.points[tri.v[0] as usize],
                self.points[tri.v[1] as usize],
                self.points[tri.v[2] as usize],
            ];
            // Edge i is (v[i+1], v[i+2]); orientation of p against it.
            let o = [
                orient(b, c, p), // edge 0
                orient(c, a, p), // edge 1
                orient(a, b, p), // edge 2
            ];
            let mut crossed = None;
            let mut worst = 0.0;
            for i in 0..3 {
                if o[i] < worst && tri.n[i] != prev {
                    worst = o[i];
                    crossed = Some(i);
                }
            }
            if crossed.is_none() {
                // Allow stepping back when the only negative edge returns to
                // `prev` (can only happen transiently on degenerate walks).
                for i in 0..3 {
                    if o[i] < 0.0 {
                        crossed = Some(i);
                    }
                }
            }
            match crossed {
                Some(i) => {
                    let nb = tri.n[i];
                    if nb == NONE {
                        return Located::Outside(t);
                    }
                    prev = t;
                    t = nb;
                }
                None => {
                    let zeros: Vec<usize> = (0..3).filter(|&i| o[i] == 0.0).collect();
                    return match zeros.len() {
                        0 => Located::InTriangle(t),
                        1 => Located::OnEdge(t, zeros[0]),
                        _ => {
                            // Two zero edges meet at the vertex opposite
                            // neither of them.
                            let corner = 3 - zeros[0] - zeros[1];
                            Located::OnVertex(self.tri(t).v[corner])
                        }
                    };
                }
            }
        }
        // Fallback: exhaustive scan (exact predicates make this reachable
        // only from a poor hint after many deletions).
        self.locate_linear(p)
    }

    fn locate_linear(&self, p: Point2) -> Located {
        for t in 0..self.tris.len() as u32 {
            if !self.alive[t as usize] {
                continue;
            }
            let tri = self.tri(t);
            let [a, b, c] = [
                self.points[tri.v[0] as usize],
                self.points[tri.v[1] as usize],
                self.points[tri.v[2] as usize],
            ];
            let o = [orient(b, c, p), orient(c, a, p), orient(a, b, p)];
            if o.iter().all(|&x| x >= 0.0) {
                let zeros: Vec<usize> = (0..3).filter(|&i| o[i] == 0.0).collect();
                return match zeros.len() {
                    0 => Located::InTriangle(t),
                    1 => Located::OnEdge(t, zeros[0]),
                    _ => {
                        let corner = 3 - zeros[0] - zeros[1];
                        Located::OnVertex(tri.v[corner])
                    }
                };
            }
        }
        Located::Outside(NONE)
    }

    /// Insert a point; duplicates return the existing id.
    pub fn insert(&mut self, p: Point2) -> Result<Inserted> {
        match self.locate(p) {
            Located::OnVertex(v) => Ok(Inserted::Existing(v)),
            Located::InTriangle(t) => {
                let vid = self.add_point(p);
                self.split_triangle(t, vid);
                Ok(Inserted::New(vid))
            }
            Located::OnEdge(t, i) => {
                let vid = self.add_point(p);
                self.split_edge(t, i, vid);
                Ok(Inserted::New(vid))
            }
            Located::Outside(_) => Err(Error::Meshing(format!(
                "insertion point ({}, {}) outside the triangulated domain",
                p.x, p.y
            ))),
        }
    }

    fn add_point(&mut self, p: Point2) -> u32 {
        self.points.push(p);
        (self.points.len() - 1) as u32
    }

    /// 1-to-3 split, then legalization around the new vertex.
    fn split_triangle(&mut self, t: u32, vid: u32) {
        let DTri { v, n } = self.tri(t).clone();
        self.kill(t);
        let t0 = self.push_tri([v[0], v[1], vid]);
        let t1 = self.push_tri([v[1], v[2], vid]);
        let t2 = self.push_tri([v[2], v[0], vid]);
        // Outer neighbors: edge (v0,v1) was opposite v2 => n[2], etc.
        self.set_neighbor(t0, 2, n[2]);
        self.relink(n[2], t, t0);
        self.set_neighbor(t1, 2, n[0]);
        self.relink(n[0], t, t1);
        self.set_neighbor(t2, 2, n[1]);
        self.relink(n[1], t, t2);
        // Inner links: in t0, edge opposite v[0] is (v1, vid) shared with t1.
        self.set_neighbor(t0, 0, t1);
        self.set_neighbor(t0, 1, t2);
        self.set_neighbor(t1, 0, t2);
        self.set_neighbor(t1, 1, t0);
        self.set_neighbor(t2, 0, t0);
        self.set_neighbor(t2, 1, t1);
        self.hint = t0;
        let mut stack = vec![(t0, 2), (t1, 2), (t2, 2)];
        self.legalize_stack(&mut stack);
    }

    /// 2-to-4 split of the edge of `t` opposite local vertex `i`.
    fn split_edge(&mut self, t: u32, i: usize, vid: u32) {
        let tri = self.tri(t).clone();
        let (va, vb, vc) = (tri.v[(i + 1) % 3], tri.v[(i + 2) % 3], tri.v[i]);
        let u = tri.n[i];
        // Outer neighbors of t around the split edge.
        let n_bc = tri.n[(i + 1) % 3]; // edge (vb, vc)
        let n_ca = tri.n[(i + 2) % 3]; // edge (vc, va)
        self.kill(t);
        let t0 = self.push_tri([va, vid, vc]);
        let t1 = self.push_tri([vid, vb, vc]);
        self.set_neighbor(t0, 1, n_ca);
        self.relink(n_ca, t, t0);
        self.set_neighbor(t1, 0, n_bc);
        self.relink(n_bc, t, t1);
        self.set_neighbor(t0, 0, t1); // edge (vid, vc)
        self.set_neighbor(t1, 1, t0);
        let mut stack = vec![(t0, 1), (t1, 0)];
        if u != NONE {
            let utri = self.tri(u).clone();
            let j = (0..3)
                .find(|&k| utri.v[k] != va && utri.v[k] != vb)
                .expect("shared edge vertex mismatch");
            let vd = utri.v[j];
            let n_ad = utri.n[(0..3).find(|&k| utri.v[k] == vb).unwrap()];
            let n_db = utri.n[(0..3).find(|&k| utri.v[k] == va).unwrap()];
            self.kill(u);
            let u0 = self.push_tri([vb, vid, vd]);
            let u1 = self.push_tri([vid, va, vd]);
            self.set_neighbor(u0, 1, n_db);
            self.relink(n_db, u, u0);
            self.set_neighbor(u1, 0, n_ad);
            self.relink(n_ad, u, u1);
            self.set_neighbor(u0, 0, u1);
            self.set_neighbor(u1, 1, u0);
            // Across the split edge halves.
            self.set_neighbor(t0, 2, u1); // t0 edge (va, vid) <-> u1 edge (vid, va)
            self.set_neighbor(u1, 2, t0);
            self.set_neighbor(t1, 2, u0);
            self.set_neighbor(u0, 2, t1);
            stack.push((u0, 1));
            stack.push((u1, 0));
        } else {
            self.set_neighbor(t0, 2, NONE);
            self.set_neighbor(t1, 2, NONE);
        }
        self.hint = t0;
        self.legalize_stack(&mut stack);
    }

    /// Lawson legalization: flip every edge whose opposite vertex lies
    /// strictly inside the circumcircle.
    fn legalize_stack(&mut self, stack: &mut Vec<(u32, usize)>) {
        while let Some((t, i)) = stack.pop() {
            if !self.alive[t as usize] {
                continue;
            }
            let u = self.tri(t).n[i];
            if u == NONE || !self.alive[u as usize] {
                continue;
            }
            let tv = self.tri(t).v;
            let (va, vb) = (tv[(i + 1) % 3], tv[(i + 2) % 3]);
            let uv = self.tri(u).v;
            let j = (0..3)
                .find(|&k| uv[k] != va && uv[k] != vb)
                .expect("neighbor does not share the edge");
            let vd = uv[j];
            let inside = incircle(
                coord(self.points[tv[0] as usize]),
                coord(self.points[tv[1] as usize]),
                coord(self.points[tv[2] as usize]),
                coord(self.points[vd as usize]),
            );
            if inside > 0.0 {
                let (t_new, u_new) = self.flip(t, i, u, vd);
                stack.push((t_new, self.slot_of_vertex_edge(t_new)));
                stack.push((u_new, self.slot_of_vertex_edge(u_new)));
            }
        }
    }

    /// After a flip the fresh triangles store the flipped-in vertex at slot 0;
    /// the edge to re-check is the one opposite slot 0.
    fn slot_of_vertex_edge(&self, _t: u32) -> usize {
        0
    }

    /// Flip the edge of `t` opposite local slot `i` (shared with `u`, whose
    /// off-edge vertex is `vd`). Returns the two new triangles, each with the
    /// apex vertex (`t.v[i]`) at slot 0.
    fn flip(&mut self, t: u32, i: usize, u: u32, vd: u32) -> (u32, u32) {
        let tv = self.tri(t).clone();
        let uvt = self.tri(u).clone();
        let vp = tv.v[i];
        let (va, vb) = (tv.v[(i + 1) % 3], tv.v[(i + 2) % 3]);
        // Edge opposite slot k is (v[k+1], v[k+2]). For t: slots are
        //   i -> (va, vb) [shared], i+1 -> (vb, vp), i+2 -> (vp, va).
        let n_bp = tv.n[(i + 1) % 3];
        let n_pa = tv.n[(i + 2) % 3];
        // For u, find slots of its edges (va, vd) and (vd, vb).
        let ja = (0..3).find(|&k| uvt.v[k] == va).unwrap();
        let jb = (0..3).find(|&k| uvt.v[k] == vb).unwrap();
        let n_ad = uvt.n[jb]; // edge opposite vb contains (va, vd)
        let n_db = uvt.n[ja];
        self.kill(t);
        self.kill(u);
        let t_new = self.push_tri([vp, va, vd]);
        let u_new = self.push_tri([vp, vd, vb]);
        // t_new edges: slot0 -> (va, vd), slot1 -> (vd, vp), slot2 -> (vp, va)
        self.set_neighbor(t_new, 0, n_ad);
        self.relink(n_ad, u, t_new);
        self.set_neighbor(t_new, 1, u_new);
        self.set_neighbor(t_new, 2, n_pa);
        self.relink(n_pa, t, t_new);
        // u_new edges: slot0 -> (vd, vb), slot1 -> (vb, vp), slot2 -> (vp, vd)
        self.set_neighbor(u_new, 0, n_db);
        self.relink(n_db, u, u_new);
        self.set_neighbor(u_new, 1, n_bp);
        self.relink(n_bp, t, u_new);
        self.set_neighbor(u_new, 2, t_new);
        self.hint = t_new;
        (t_new, u_new)
    }

    /// Remove the artificial corner vertices (bounded mode) and compact into
    /// a plain (points, triangles) pair with input-order indices.
    pub fn finalize_hull(&self) -> (Vec<Point2>, Vec<[u32; 3]>) {
        let off = self.n_artificial;
        let points = self.points[off as usize..].to_vec();
        let mut tris = Vec::new();
        for t in 0..self.tris.len() {
            if !self.alive[t] {
                continue;
            }
            let v = self.tris[t].v;
            if v.iter().any(|&x| x < off) {
                continue;
            }
            tris.push([v[0] - off, v[1] - off, v[2] - off]);
        }
        (points, tris)
    }

    /// Alive triangles without any index shifting (convex-polygon mode).
    pub fn triangles(&self) -> Vec<[u32; 3]> {
        assert_eq!(self.n_artificial, 0, "call finalize_hull instead");
        self.tris
            .iter()
            .zip(self.alive.iter())
            .filter(|(_, &a)| a)
            .map(|(t, _)| t.v)
            .collect()
    }

    pub fn point(&self, v: u32) -> Point2 {
        self.points[v as usize]
    }
}

/// Boundary segments of the meshing domain (always hull edges here).
pub struct SegmentSet {
    pub segments: Vec<[u32; 2]>,
    grid: HashMap<(i64, i64), Vec<usize>>,
    cell: f64,
    origin: Point2,
}

impl SegmentSet {
    pub fn from_polygon_ring(n: u32, points: &[Point2], cell: f64) -> Self {
        let origin = points
            .iter()
            .fold(Point2::new(f64::MAX, f64::MAX), |acc, p| {
                Point2::new(acc.x.min(p.x), acc.y.min(p.y))
            });
        let mut set = SegmentSet {
            segments: Vec::new(),
            grid: HashMap::new(),
            cell: cell.max(1e-12),
            origin,
        };
        for i in 0..n {
            let seg = [i, (i + 1) % n];
            set.index_segment(set.segments.len(), seg, points);
            set.segments.push(seg);
        }
        set
    }

    fn cell_of(&self, p: Point2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
        )
    }

    fn index_segment(&mut self, id: usize, seg: [u32; 2], points: &[Point2]) {
        let (a, b) = (points[seg[0] as usize], points[seg[1] as usize]);
        let r = 0.5 * (b - a).norm();
        let lo = Point2::new(a.x.min(b.x) - r, a.y.min(b.y) - r);
        let hi = Point2::new(a.x.max(b.x) + r, a.y.max(b.y) + r);
        let (cx0, cy0) = self.cell_of(lo);
        let (cx1, cy1) = self.cell_of(hi);
        for cx in cx0..=cx1 {
            for cy in cy0..=cy1 {
                self.grid.entry((cx, cy)).or_default().push(id);
            }
        }
    }

    /// Ids of segments whose diametral disk strictly contains `p`.
    pub fn encroached_by(&self, p: Point2, points: &[Point2]) -> Vec<usize> {
        let c = self.cell_of(p);
        let mut found = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.grid.get(&(c.0 + dx, c.1 + dy)) {
                    for &id in ids {
                        let [a, b] = self.segments[id];
                        let (pa, pb) = (points[a as usize], points[b as usize]);
                        if (pa - p).dot(&(pb - p)) < 0.0 && !found.contains(&id) {
                            found.push(id);
                        }
                    }
                }
            }
        }
        found.sort_unstable();
        found
    }

    /// Replace segment `id` by its two halves after the midpoint got vertex
    /// id `m`.
    pub fn split(&mut self, id: usize, m: u32, points: &[Point2]) {
        let [a, b] = self.segments[id];
        self.segments[id] = [a, m];
        let new_id = self.segments.len();
        self.segments.push([m, b]);
        // Stale grid entries are tolerated: encroachment re-checks geometry.
        self.index_segment(id, [a, m], points);
        self.index_segment(new_id, [m, b], points);
    }

    pub fn nearest_segment(&self, p: Point2, points: &[Point2]) -> usize {
        let mut best = (f64::MAX, 0usize);
        for (id, seg) in self.segments.iter().enumerate() {
            let (a, b) = (points[seg[0] as usize], points[seg[1] as usize]);
            let mid = Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
            let d = (mid - p).norm_squared();
            if d < best.0 {
                best = (d, id);
            }
        }
        best.1
    }
}

pub struct RefineParams {
    /// Minimum admissible angle, degrees.
    pub min_angle_deg: f64,
    /// A triangle is oversized when its longest edge exceeds
    /// `size_factor * h(centroid)`.
    pub size_factor: f64,
    pub max_rounds: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            min_angle_deg: 25.0,
            size_factor: 1.35,
            max_rounds: 200,
        }
    }
}

fn tri_points(dt: &Delaunay, t: u32) -> [Point2; 3] {
    let v = dt.triangle_vertices(t);
    [dt.point(v[0]), dt.point(v[1]), dt.point(v[2])]
}

fn is_bad(dt: &Delaunay, t: u32, size: &impl Fn(Point2) -> f64, params: &RefineParams) -> bool {
    let [a, b, c] = tri_points(dt, t);
    let area2 = signed_area2(a, b, c);
    if area2 <= 0.0 {
        return false;
    }
    let e = [(b - a).norm(), (c - b).norm(), (a - c).norm()];
    let lmax = e[0].max(e[1]).max(e[2]);
    let lmin = e[0].min(e[1]).min(e[2]);
    let centroid = Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
    let h = size(centroid);
    if lmax > params.size_factor * h {
        return true;
    }
    // circumradius = product of edges / (2 * area2); min angle alpha obeys
    // lmin = 2 R sin(alpha).
    let r = e[0] * e[1] * e[2] / (2.0 * area2);
    let ratio_bound = 0.5 / (params.min_angle_deg.to_radians()).sin();
    if r / lmin > ratio_bound {
        // Angle refinement is pointless once the triangle is already far
        // below the target size (protects termination near size floors).
        if lmax > 0.05 * h {
            return true;
        }
    }
    false
}

/// Delaunay refinement with encroachment handling. `dt` must come from
/// [`Delaunay::from_convex_polygon`]; `segments` holds its boundary ring.
pub fn refine(
    dt: &mut Delaunay,
    segments: &mut SegmentSet,
    size: impl Fn(Point2) -> f64,
    params: &RefineParams,
) -> Result<()> {
    let mut skip: std::collections::HashSet<[u32; 3]> = std::collections::HashSet::new();
    for round in 0..params.max_rounds {
        let mut bad: Vec<u32> = (0..dt.num_tri_slots() as u32)
            .filter(|&t| dt.is_alive(t))
            .filter(|&t| {
                let mut v = dt.triangle_vertices(t);
                v.sort_unstable();
                !skip.contains(&v) && is_bad(dt, t, &size, params)
            })
            .collect();
        if bad.is_empty() {
            return Ok(());
        }
        bad.sort_unstable();
        let mut progressed = false;
        for t in bad {
            if !dt.is_alive(t) || !is_bad(dt, t, &size, params) {
                continue;
            }
            let [a, b, c] = tri_points(dt, t);
            let cc = circumcenter(a, b, c);
            let enc = segments.encroached_by(cc, &dt.points);
            let outcome = if let Some(&seg_id) = enc.first() {
                split_segment(dt, segments, seg_id)
            } else {
                match dt.locate(cc) {
                    Located::Outside(_) => {
                        let seg_id = segments.nearest_segment(cc, &dt.points);
                        split_segment(dt, segments, seg_id)
                    }
                    _ => dt.insert(cc),
                }
            };
            match outcome {
                Ok(Inserted::New(_)) => progressed = true,
                Ok(Inserted::Existing(_)) => {
                    let mut v = dt.triangle_vertices(t);
                    v.sort_unstable();
                    skip.insert(v);
                }
                Err(e) => return Err(e),
            }
        }
        if !progressed && round > 0 {
            return Ok(()); // only skip-listed triangles remain
        }
    }
    Err(Error::Meshing(format!(
        "refinement did not settle within {} rounds",
        params.max_rounds
    )))
}

fn split_segment(dt: &mut Delaunay, segments: &mut SegmentSet, id: usize) -> Result<Inserted> {
    let [a, b] = segments.segments[id];
    let (pa, pb) = (dt.point(a), dt.point(b));
    let mid = Point2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y));
    let ins = dt.insert(mid)?;
    if let Inserted::New(m) = ins {
        segments.split(id, m, &dt.points);
    }
    Ok(ins)
}
