//! Conforming simplicial meshes on every manifold of a decomposition.
//!
//! One planar triangulation covers the bounding polygon. Inclusion pieces and
//! polygon edges are constraints: they are subdivided, split further while
//! any vertex lies inside their diametral circle, and are then edges of the
//! Delaunay triangulation. Both sides of an inclusion share the vertices on
//! it; the two facets over an inclusion cell are told apart through the trace
//! maps, never through vertex identity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    add, cross, dist, dot, point_in_polygon, scale, sub, EdgeOwner, InterfaceKind, MixedDimGeometry, Point, Side,
};

/// A facet of an upper-manifold mesh lying on an interface.
///
/// For interfaces of 1-manifolds `upper_cell` is a triangle of the upper
/// 2-manifold and `local_facet` the local edge (opposite that local vertex).
/// For interfaces of 0-manifolds `upper_cell` is the end cell of the segment
/// and `local_facet` its local vertex (0 or 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceFacet {
    pub upper_cell: usize,
    pub local_facet: usize,
    pub lower_cell: usize,
}

/// A triangle edge on the bounding polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFacet {
    pub tri: usize,
    pub local_edge: usize,
    pub edge: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cells {
    /// Counterclockwise triangles.
    Triangles(Vec<[usize; 3]>),
    /// Segment cells ordered from endpoint `a` to `b`, each oriented the same way.
    Segments(Vec<[usize; 2]>),
    Point(usize),
}

impl Cells {
    pub fn len(&self) -> usize {
        match self {
            Cells::Triangles(t) => t.len(),
            Cells::Segments(s) => s.len(),
            Cells::Point(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        match self {
            Cells::Triangles(t) => t,
            _ => &[],
        }
    }

    pub fn segments(&self) -> &[[usize; 2]] {
        match self {
            Cells::Segments(s) => s,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Upper bound on circumradius / inradius of every triangle.
    pub max_shape_ratio: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions { max_shape_ratio: 1e3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedMesh {
    pub vertices: Vec<Point>,
    /// Cells of each manifold, indexed by manifold id.
    pub cells: Vec<Cells>,
    /// Polygon facets of each manifold (empty for lower-dimensional ones).
    pub boundary_facets: Vec<Vec<BoundaryFacet>>,
    /// Facets of each interface, ordered like the lower manifold's cells.
    pub traces: Vec<Vec<TraceFacet>>,
    /// Constraint edges: polygon pieces and inclusion cells.
    pub constraints: Vec<([usize; 2], EdgeOwner)>,
    /// Largest cell diameter.
    pub h: f64,
}

pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn incircle(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Circumradius over inradius.
pub fn shape_ratio(a: Point, b: Point, c: Point) -> f64 {
    let (la, lb, lc) = (dist(b, c), dist(c, a), dist(a, b));
    let area = orient(a, b, c).abs() / 2.0;
    let s = (la + lb + lc) / 2.0;
    let r_in = area / s;
    let r_circ = la * lb * lc / (4.0 * area);
    r_circ / r_in
}

const NONE: usize = usize::MAX;

/// Incremental Bowyer-Watson Delaunay triangulation.
struct Delaunay {
    pts: Vec<Point>,
    tri: Vec<[usize; 3]>,
    nbr: Vec<[usize; 3]>,
    alive: Vec<bool>,
    last: usize,
    n_super: usize,
}

impl Delaunay {
    fn new(lo: Point, hi: Point) -> Self {
        let c = scale(0.5, add(lo, hi));
        let r = dist(lo, hi).max(1e-300) * 20.0;
        let pts = vec![
            [c[0] - 2.0 * r, c[1] - r],
            [c[0] + 2.0 * r, c[1] - r],
            [c[0], c[1] + 2.0 * r],
        ];
        Delaunay {
            pts,
            tri: vec![[0, 1, 2]],
            nbr: vec![[NONE; 3]],
            alive: vec![true],
            last: 0,
            n_super: 3,
        }
    }

    fn contains(&self, t: usize, p: Point) -> bool {
        let v = self.tri[t];
        (0..3).all(|k| orient(self.pts[v[(k + 1) % 3]], self.pts[v[(k + 2) % 3]], p) >= 0.0)
    }

    fn locate(&self, p: Point) -> Result<usize> {
        let mut t = self.last;
        if !self.alive[t] {
            t = self.alive.iter().rposition(|&a| a).expect("triangulation is never empty");
        }
        for _ in 0..4 * self.tri.len() + 16 {
            let v = self.tri[t];
            let mut moved = false;
            for k in 0..3 {
                if orient(self.pts[v[(k + 1) % 3]], self.pts[v[(k + 2) % 3]], p) < 0.0 && self.nbr[t][k] != NONE {
                    t = self.nbr[t][k];
                    moved = true;
                    break;
                }
            }
            if !moved {
                return Ok(t);
            }
        }
        if let Some(t) = (0..self.tri.len()).find(|&t| self.alive[t] && self.contains(t, p)) {
            return Ok(t);
        }
        // p lies on an edge up to rounding: take the triangle it is least outside of
        let mut best = (f64::NEG_INFINITY, NONE);
        for t in (0..self.tri.len()).filter(|&t| self.alive[t]) {
            let v = self.tri[t];
            let d = (0..3)
                .map(|k| {
                    let (a, b) = (self.pts[v[(k + 1) % 3]], self.pts[v[(k + 2) % 3]]);
                    orient(a, b, p) / dist(a, b)
                })
                .fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, t);
            }
        }
        let tol = 1e-12 * dist(self.pts[0], self.pts[2]);
        if best.0 >= -tol {
            Ok(best.1)
        } else {
            Err(Error::Mesh(format!("cannot locate point {p:?}")))
        }
    }

    fn insert(&mut self, p: Point) -> Result<usize> {
        let ip = self.pts.len();
        let t0 = self.locate(p)?;
        for &v in &self.tri[t0] {
            if dist(self.pts[v], p) == 0.0 {
                return Err(Error::Mesh(format!("duplicate mesh vertex {p:?}")));
            }
        }
        self.pts.push(p);
        let mut in_cav: HashMap<usize, bool> = HashMap::new();
        let mut cavity = vec![t0];
        in_cav.insert(t0, true);
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            for e in 0..3 {
                let n = self.nbr[t][e];
                if n == NONE || in_cav.contains_key(&n) {
                    continue;
                }
                let v = self.tri[n];
                let inside = incircle(self.pts[v[0]], self.pts[v[1]], self.pts[v[2]], p) > 0.0;
                in_cav.insert(n, inside);
                if inside {
                    cavity.push(n);
                }
            }
        }
        // keep the cavity star-shaped with respect to p
        loop {
            let mut bad = None;
            'outer: for &t in &cavity {
                for e in 0..3 {
                    let n = self.nbr[t][e];
                    if n != NONE && in_cav.get(&n) == Some(&true) {
                        continue;
                    }
                    let v = self.tri[t];
                    let (a, b) = (v[(e + 1) % 3], v[(e + 2) % 3]);
                    if orient(self.pts[a], self.pts[b], p) <= 0.0 && t != t0 {
                        bad = Some(t);
                        break 'outer;
                    }
                }
            }
            match bad {
                Some(t) => {
                    in_cav.insert(t, false);
                    cavity.retain(|&c| c != t);
                }
                None => break,
            }
        }
        let mut starts: HashMap<usize, usize> = HashMap::new();
        let mut ends: HashMap<usize, usize> = HashMap::new();
        let mut created = Vec::new();
        for &t in &cavity {
            for e in 0..3 {
                let n = self.nbr[t][e];
                if n != NONE && in_cav.get(&n) == Some(&true) {
                    continue;
                }
                let v = self.tri[t];
                let (a, b) = (v[(e + 1) % 3], v[(e + 2) % 3]);
                let nt = self.tri.len();
                self.tri.push([a, b, ip]);
                self.nbr.push([NONE, NONE, n]);
                self.alive.push(true);
                if n != NONE {
                    let slot = self.nbr[n].iter().position(|&x| x == t).expect("neighbor symmetry");
                    self.nbr[n][slot] = nt;
                }
                starts.insert(a, nt);
                ends.insert(b, nt);
                created.push(nt);
            }
        }
        for &nt in &created {
            let [a, b, _] = self.tri[nt];
            self.nbr[nt][0] = *starts.get(&b).ok_or_else(|| Error::Mesh("open cavity".into()))?;
            self.nbr[nt][1] = *ends.get(&a).ok_or_else(|| Error::Mesh("open cavity".into()))?;
        }
        for &t in &cavity {
            self.alive[t] = false;
        }
        self.last = *created.last().expect("cavity has a boundary");
        Ok(ip)
    }

    /// Live triangles not touching the enclosing super-triangle, with vertex
    /// indices shifted to exclude the super vertices.
    fn triangles(&self) -> Vec<[usize; 3]> {
        (0..self.tri.len())
            .filter(|&t| self.alive[t] && self.tri[t].iter().all(|&v| v >= self.n_super))
            .map(|t| {
                let v = self.tri[t];
                [v[0] - self.n_super, v[1] - self.n_super, v[2] - self.n_super]
            })
            .collect()
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = sub(b, a);
    let t = (dot(sub(p, a), d) / dot(d, d)).clamp(0.0, 1.0);
    dist(p, add(a, scale(t, d)))
}

/// Mesh every manifold of `geom` with cells no larger than `target_h`.
pub fn build_mesh(geom: &MixedDimGeometry, target_h: f64) -> Result<MixedMesh> {
    build_mesh_with(geom, target_h, &MeshOptions::default())
}

pub fn build_mesh_with(geom: &MixedDimGeometry, target_h: f64, opts: &MeshOptions) -> Result<MixedMesh> {
    if !(target_h > 0.0) || !target_h.is_finite() {
        return Err(Error::Input(format!("mesh size must be positive, got {target_h}")));
    }
    let min_piece = geom
        .graph_edges
        .iter()
        .map(|e| dist(geom.graph_vertices[e.v[0]], geom.graph_vertices[e.v[1]]))
        .fold(f64::INFINITY, f64::min);
    if min_piece < 2e-6 * geom.diameter {
        return Err(Error::Mesh(format!("constraint piece of length {min_piece:e} is degenerate")));
    }
    let shortest_inclusion = geom
        .graph_edges
        .iter()
        .filter(|e| matches!(e.owner, EdgeOwner::Segment(_)))
        .map(|e| dist(geom.graph_vertices[e.v[0]], geom.graph_vertices[e.v[1]]))
        .fold(f64::INFINITY, f64::min);
    if target_h > shortest_inclusion {
        log::warn!(
            "mesh size {target_h} exceeds the shortest inclusion piece {shortest_inclusion}; that piece is still subdivided"
        );
    }
    let mut spacing = target_h / 1.5;
    for _ in 0..24 {
        let mesh = triangulate(geom, spacing, opts)?;
        if mesh.h <= target_h {
            return Ok(mesh);
        }
        spacing *= 0.85;
    }
    Err(Error::Mesh(format!("could not reach mesh size {target_h}")))
}

fn triangulate(geom: &MixedDimGeometry, s: f64, opts: &MeshOptions) -> Result<MixedMesh> {
    let mut verts: Vec<Point> = geom.graph_vertices.clone();
    let mut subs: Vec<([usize; 2], EdgeOwner)> = Vec::new();
    for e in &geom.graph_edges {
        let (a, b) = (verts[e.v[0]], verts[e.v[1]]);
        let n = (dist(a, b) / s).ceil().max(1.0) as usize;
        let mut prev = e.v[0];
        for k in 1..=n {
            let cur = if k == n {
                e.v[1]
            } else {
                verts.push(add(a, scale(k as f64 / n as f64, sub(b, a))));
                verts.len() - 1
            };
            subs.push(([prev, cur], e.owner));
            prev = cur;
        }
    }
    let n_constraint_initial = verts.len();

    // interior fill on an equilateral lattice, away from constraints
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &geom.polygon {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let dy = s * 3f64.sqrt() / 2.0;
    let rows = ((hi[1] - lo[1]) / dy).ceil() as usize;
    let cols = ((hi[0] - lo[0]) / s).ceil() as usize + 1;
    for r in 0..=rows {
        let y = lo[1] + r as f64 * dy;
        let shift = if r % 2 == 1 { 0.5 * s } else { 0.0 };
        for c in 0..=cols {
            let p = [lo[0] + shift + c as f64 * s, y];
            if !point_in_polygon(&geom.polygon, p) {
                continue;
            }
            let near = subs
                .iter()
                .any(|(e, _)| point_segment_distance(p, verts[e[0]], verts[e[1]]) < 0.6 * s);
            if !near {
                verts.push(p);
            }
        }
    }

    // split encroached constraint pieces
    let min_len = 1e-4 * s;
    loop {
        let mut split = Vec::new();
        for (k, (e, _)) in subs.iter().enumerate() {
            let (a, b) = (verts[e[0]], verts[e[1]]);
            let m = scale(0.5, add(a, b));
            let r = 0.5 * dist(a, b);
            let encroached = verts
                .iter()
                .enumerate()
                .any(|(v, &p)| v != e[0] && v != e[1] && dist(p, m) < r * (1.0 - 1e-9));
            if encroached {
                if 2.0 * r < min_len {
                    return Err(Error::Mesh(format!(
                        "constraints near {m:?} meet at an angle too small to mesh"
                    )));
                }
                split.push(k);
            }
        }
        if split.is_empty() {
            break;
        }
        // fill points that encroach are dropped instead of splitting around them
        let mut drop = vec![false; verts.len()];
        for &k in &split {
            let e = subs[k].0;
            let (a, b) = (verts[e[0]], verts[e[1]]);
            let m = scale(0.5, add(a, b));
            let r = 0.5 * dist(a, b);
            for (v, &p) in verts.iter().enumerate().skip(n_constraint_initial) {
                if v != e[0] && v != e[1] && dist(p, m) < r * (1.0 - 1e-9) && !is_constraint_vertex(&subs, v) {
                    drop[v] = true;
                }
            }
        }
        if drop.iter().any(|&d| d) {
            let mut remap = vec![NONE; verts.len()];
            let mut kept = Vec::new();
            for (v, &p) in verts.iter().enumerate() {
                if !drop[v] {
                    remap[v] = kept.len();
                    kept.push(p);
                }
            }
            verts = kept;
            for (e, _) in subs.iter_mut() {
                e[0] = remap[e[0]];
                e[1] = remap[e[1]];
            }
            continue;
        }
        let mut next = Vec::with_capacity(subs.len() + split.len());
        let mut it = split.iter().peekable();
        for (k, &(e, owner)) in subs.iter().enumerate() {
            if it.peek() == Some(&&k) {
                it.next();
                verts.push(scale(0.5, add(verts[e[0]], verts[e[1]])));
                let m = verts.len() - 1;
                next.push(([e[0], m], owner));
                next.push(([m, e[1]], owner));
            } else {
                next.push((e, owner));
            }
        }
        subs = next;
    }

    let mut lo_b = lo;
    let mut hi_b = hi;
    for d in 0..2 {
        let pad = 0.1 * (hi[d] - lo[d]);
        lo_b[d] -= pad;
        hi_b[d] += pad;
    }
    let mut dt = Delaunay::new(lo_b, hi_b);
    for &p in &verts {
        dt.insert(p)?;
    }
    let all = dt.triangles();
    let mut tris: Vec<[usize; 3]> = Vec::new();
    for t in all {
        let c = scale(1.0 / 3.0, add(add(verts[t[0]], verts[t[1]]), verts[t[2]]));
        if point_in_polygon(&geom.polygon, c) {
            tris.push(t);
        }
    }
    let mut present: HashMap<(usize, usize), ()> = HashMap::new();
    for t in &tris {
        for k in 0..3 {
            present.insert(edge_key(t[(k + 1) % 3], t[(k + 2) % 3]), ());
        }
    }
    for (e, _) in &subs {
        if !present.contains_key(&edge_key(e[0], e[1])) {
            return Err(Error::Mesh(format!(
                "constraint edge {:?}-{:?} missing from the triangulation",
                verts[e[0]], verts[e[1]]
            )));
        }
    }
    // drop vertices not used by any triangle (lattice points can never be unused, but be safe)
    let mut used = vec![false; verts.len()];
    for t in &tris {
        for &v in t {
            used[v] = true;
        }
    }
    if used.iter().any(|u| !u) {
        return Err(Error::Mesh("triangulation left an isolated vertex".into()));
    }
    let mut region_tris: Vec<Vec<[usize; 3]>> = vec![Vec::new(); geom.manifolds.len()];
    for t in &tris {
        let c = scale(1.0 / 3.0, add(add(verts[t[0]], verts[t[1]]), verts[t[2]]));
        let r = geom
            .locate_region(c)
            .ok_or_else(|| Error::Mesh(format!("triangle at {c:?} lies in no region")))?;
        let t = if orient(verts[t[0]], verts[t[1]], verts[t[2]]) > 0.0 {
            *t
        } else {
            [t[0], t[2], t[1]]
        };
        let ratio = shape_ratio(verts[t[0]], verts[t[1]], verts[t[2]]);
        if ratio > opts.max_shape_ratio {
            return Err(Error::Mesh(format!(
                "triangle at {c:?} has shape ratio {ratio:.1}, above {}",
                opts.max_shape_ratio
            )));
        }
        region_tris[r].push(t);
    }
    finalize(geom, verts, region_tris, subs)
}

fn is_constraint_vertex(subs: &[([usize; 2], EdgeOwner)], v: usize) -> bool {
    subs.iter().any(|(e, _)| e[0] == v || e[1] == v)
}

/// Derive segment cells, boundary facets and trace maps from triangles and constraints.
fn finalize(
    geom: &MixedDimGeometry,
    vertices: Vec<Point>,
    region_tris: Vec<Vec<[usize; 3]>>,
    constraints: Vec<([usize; 2], EdgeOwner)>,
) -> Result<MixedMesh> {
    let nm = geom.manifolds.len();
    // edge -> (region, triangle, local edge)
    let mut edge_map: HashMap<(usize, usize), Vec<(usize, usize, usize)>> = HashMap::new();
    for (r, tris) in region_tris.iter().enumerate() {
        for (ti, t) in tris.iter().enumerate() {
            for k in 0..3 {
                edge_map
                    .entry(edge_key(t[(k + 1) % 3], t[(k + 2) % 3]))
                    .or_default()
                    .push((r, ti, k));
            }
        }
    }
    let mut cells: Vec<Cells> = Vec::with_capacity(nm);
    let mut boundary_facets = vec![Vec::new(); nm];
    for m in &geom.manifolds {
        cells.push(match m.dim {
            2 => Cells::Triangles(region_tris[m.id].clone()),
            1 => {
                let a = m.vertices()[0];
                let t = m.tangent().expect("segment tangent");
                let mut list: Vec<[usize; 2]> = constraints
                    .iter()
                    .filter(|(_, o)| *o == EdgeOwner::Segment(m.id))
                    .map(|(e, _)| {
                        let (p, q) = (dot(sub(vertices[e[0]], a), t), dot(sub(vertices[e[1]], a), t));
                        if p <= q {
                            *e
                        } else {
                            [e[1], e[0]]
                        }
                    })
                    .collect();
                list.sort_by(|x, y| {
                    dot(sub(vertices[x[0]], a), t).total_cmp(&dot(sub(vertices[y[0]], a), t))
                });
                for w in list.windows(2) {
                    if w[0][1] != w[1][0] {
                        return Err(Error::Mesh(format!("cells of manifold {} do not form a chain", m.id)));
                    }
                }
                Cells::Segments(list)
            }
            _ => {
                let p = m.vertices()[0];
                let v = (0..vertices.len())
                    .find(|&v| dist(vertices[v], p) <= 1e-14 * geom.diameter.max(1.0))
                    .ok_or_else(|| Error::Mesh(format!("no mesh vertex at 0-manifold {}", m.id)))?;
                Cells::Point(v)
            }
        });
    }
    for (e, owner) in &constraints {
        if let EdgeOwner::Polygon(k) = owner {
            let hits = edge_map
                .get(&edge_key(e[0], e[1]))
                .ok_or_else(|| Error::Mesh("boundary edge missing".into()))?;
            if hits.len() != 1 {
                return Err(Error::Mesh("boundary edge shared by several triangles".into()));
            }
            let (r, ti, le) = hits[0];
            boundary_facets[r].push(BoundaryFacet {
                tri: ti,
                local_edge: le,
                edge: *k,
            });
        }
    }
    for list in boundary_facets.iter_mut() {
        list.sort_by_key(|f| (f.tri, f.local_edge));
    }
    let mut traces = Vec::with_capacity(geom.interfaces.len());
    for f in &geom.interfaces {
        let lower_cells = cells[f.lower].clone();
        let list = match f.kind {
            InterfaceKind::Side(side) => {
                let mut out = Vec::new();
                for (c, e) in lower_cells.segments().iter().enumerate() {
                    let hits = edge_map.get(&edge_key(e[0], e[1])).map(Vec::as_slice).unwrap_or(&[]);
                    let found = hits.iter().find(|&&(r, ti, k)| {
                        let t = region_tris[r][ti];
                        let third = vertices[t[k]];
                        let o = orient(vertices[e[0]], vertices[e[1]], third);
                        r == f.upper && ((side == Side::Left && o > 0.0) || (side == Side::Right && o < 0.0))
                    });
                    let &(_, ti, k) = found.ok_or_else(|| {
                        Error::Mesh(format!("interface {} has no facet over cell {c} of manifold {}", f.id, f.lower))
                    })?;
                    out.push(TraceFacet {
                        upper_cell: ti,
                        local_facet: k,
                        lower_cell: c,
                    });
                }
                out
            }
            InterfaceKind::End(end) => {
                let segs = cells[f.upper].segments();
                let (cell, local) = match end {
                    crate::geometry::End::A => (0, 0),
                    crate::geometry::End::B => (segs.len() - 1, 1),
                };
                vec![TraceFacet {
                    upper_cell: cell,
                    local_facet: local,
                    lower_cell: 0,
                }]
            }
        };
        traces.push(list);
    }
    let mut h: f64 = 0.0;
    for c in &cells {
        for t in c.triangles() {
            for k in 0..3 {
                h = h.max(dist(vertices[t[k]], vertices[t[(k + 1) % 3]]));
            }
        }
        for s in c.segments() {
            h = h.max(dist(vertices[s[0]], vertices[s[1]]));
        }
    }
    Ok(MixedMesh {
        vertices,
        cells,
        boundary_facets,
        traces,
        constraints,
        h,
    })
}

impl MixedMesh {
    /// Uniform refinement: triangles into 4, segment cells into 2.
    pub fn refine(&self, geom: &MixedDimGeometry) -> Result<MixedMesh> {
        let mut vertices = self.vertices.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                vertices.push(scale(0.5, add(vertices[a], vertices[b])));
                vertices.len() - 1
            })
        };
        let mut region_tris = vec![Vec::new(); self.cells.len()];
        for (i, c) in self.cells.iter().enumerate() {
            for t in c.triangles() {
                let [a, b, cc] = *t;
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, cc, &mut vertices);
                let ca = midpoint(cc, a, &mut vertices);
                region_tris[i].extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, cc], [ab, bc, ca]]);
            }
        }
        let mut constraints = Vec::with_capacity(2 * self.constraints.len());
        for &(e, owner) in &self.constraints {
            let m = midpoint(e[0], e[1], &mut vertices);
            constraints.push(([e[0], m], owner));
            constraints.push(([m, e[1]], owner));
        }
        finalize(geom, vertices, region_tris, constraints)
    }

    /// Facets of interface `j`, ordered like the cells of its lower manifold.
    pub fn trace_cells(&self, j: usize) -> Result<&[TraceFacet]> {
        self.traces
            .get(j)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Input(format!("interface {j} does not exist")))
    }

    /// Endpoints of triangle-local edge `k` (opposite local vertex `k`).
    pub fn tri_edge(&self, t: &[usize; 3], k: usize) -> [usize; 2] {
        [t[(k + 1) % 3], t[(k + 2) % 3]]
    }

    pub fn triangle_points(&self, t: &[usize; 3]) -> [Point; 3] {
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn num_triangles(&self) -> usize {
        self.cells.iter().map(|c| c.triangles().len()).sum()
    }

    /// Plain-text export. Floats use the shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# mdelast mixed mesh v1");
        let _ = writeln!(s, "# vertices <n> / x y; manifold <id> <kind> <n> / cells; constraints <n> / a b owner index; trace <id> <n> / upper_cell local_facet lower_cell");
        let _ = writeln!(s, "h {}", self.h);
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{} {}", p[0], p[1]);
        }
        for (i, c) in self.cells.iter().enumerate() {
            match c {
                Cells::Triangles(t) => {
                    let _ = writeln!(s, "manifold {i} triangles {}", t.len());
                    for t in t {
                        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
                    }
                }
                Cells::Segments(g) => {
                    let _ = writeln!(s, "manifold {i} segments {}", g.len());
                    for g in g {
                        let _ = writeln!(s, "{} {}", g[0], g[1]);
                    }
                }
                Cells::Point(v) => {
                    let _ = writeln!(s, "manifold {i} point 1");
                    let _ = writeln!(s, "{v}");
                }
            }
        }
        let _ = writeln!(s, "constraints {}", self.constraints.len());
        for (e, o) in &self.constraints {
            let (kind, k) = match o {
                EdgeOwner::Polygon(k) => ("polygon", k),
                EdgeOwner::Segment(k) => ("manifold", k),
            };
            let _ = writeln!(s, "{} {} {kind} {k}", e[0], e[1]);
        }
        for (j, list) in self.traces.iter().enumerate() {
            let _ = writeln!(s, "trace {j} {}", list.len());
            for f in list {
                let _ = writeln!(s, "{} {} {}", f.upper_cell, f.local_facet, f.lower_cell);
            }
        }
        for (i, list) in self.boundary_facets.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let _ = writeln!(s, "boundary {i} {}", list.len());
            for f in list {
                let _ = writeln!(s, "{} {} {}", f.tri, f.local_edge, f.edge);
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<MixedMesh> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
        let bad = |what: &str| Error::Input(format!("mesh text: malformed {what}"));
        let mut next_words = |what: &str| -> Result<Vec<String>> {
            lines
                .next()
                .map(|l| l.split_whitespace().map(str::to_string).collect())
                .ok_or_else(|| bad(what))
        };
        fn num<T: std::str::FromStr>(w: &[String], k: usize, what: &str) -> Result<T> {
            w.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Input(format!("mesh text: malformed {what}")))
        }
        let w = next_words("header")?;
        if w.first().map(String::as_str) != Some("h") {
            return Err(bad("header"));
        }
        let h: f64 = num(&w, 1, "h")?;
        let w = next_words("vertex header")?;
        let nv: usize = num(&w, 1, "vertex count")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let w = next_words("vertex")?;
            vertices.push([num(&w, 0, "vertex")?, num(&w, 1, "vertex")?]);
        }
        let mut cells = Vec::new();
        let mut constraints = Vec::new();
        let mut traces = Vec::new();
        let mut boundary_facets: Vec<Vec<BoundaryFacet>> = Vec::new();
        while let Ok(w) = next_words("section") {
            match w.first().map(String::as_str) {
                Some("manifold") => {
                    let n: usize = num(&w, 3, "cell count")?;
                    let kind = w.get(2).cloned().unwrap_or_default();
                    let mut rows = Vec::with_capacity(n);
                    for _ in 0..n {
                        rows.push(next_words("cell")?);
                    }
                    cells.push(match kind.as_str() {
                        "triangles" => Cells::Triangles(
                            rows.iter()
                                .map(|r| Ok([num(r, 0, "cell")?, num(r, 1, "cell")?, num(r, 2, "cell")?]))
                                .collect::<Result<_>>()?,
                        ),
                        "segments" => Cells::Segments(
                            rows.iter()
                                .map(|r| Ok([num(r, 0, "cell")?, num(r, 1, "cell")?]))
                                .collect::<Result<_>>()?,
                        ),
                        "point" => Cells::Point(num(&rows[0], 0, "cell")?),
                        _ => return Err(bad("manifold kind")),
                    });
                }
                Some("constraints") => {
                    let n: usize = num(&w, 1, "constraint count")?;
                    for _ in 0..n {
                        let r = next_words("constraint")?;
                        let k: usize = num(&r, 3, "constraint")?;
                        let owner = match r.get(2).map(String::as_str) {
                            Some("polygon") => EdgeOwner::Polygon(k),
                            Some("manifold") => EdgeOwner::Segment(k),
                            _ => return Err(bad("constraint owner")),
                        };
                        constraints.push(([num(&r, 0, "constraint")?, num(&r, 1, "constraint")?], owner));
                    }
                }
                Some("trace") => {
                    let n: usize = num(&w, 2, "trace count")?;
                    let mut list = Vec::with_capacity(n);
                    for _ in 0..n {
                        let r = next_words("trace")?;
                        list.push(TraceFacet {
                            upper_cell: num(&r, 0, "trace")?,
                            local_facet: num(&r, 1, "trace")?,
                            lower_cell: num(&r, 2, "trace")?,
                        });
                    }
                    traces.push(list);
                }
                Some("boundary") => {
                    let i: usize = num(&w, 1, "boundary manifold")?;
                    let n: usize = num(&w, 2, "boundary count")?;
                    boundary_facets.resize(boundary_facets.len().max(i + 1), Vec::new());
                    for _ in 0..n {
                        let r = next_words("boundary facet")?;
                        boundary_facets[i].push(BoundaryFacet {
                            tri: num(&r, 0, "boundary facet")?,
                            local_edge: num(&r, 1, "boundary facet")?,
                            edge: num(&r, 2, "boundary facet")?,
                        });
                    }
                }
                _ => return Err(bad("section")),
            }
        }
        boundary_facets.resize(cells.len(), Vec::new());
        Ok(MixedMesh {
            vertices,
            cells,
            boundary_facets,
            traces,
            constraints,
            h,
        })
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(path: &Path) -> Result<MixedMesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
