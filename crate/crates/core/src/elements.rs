//! Finite element spaces of the full and reduced families for `n = 2`.
//!
//! | manifold | stress                         | displacement        | rotation |
//! |----------|--------------------------------|---------------------|----------|
//! | d = 2    | 2 rows of linear H(div) (BDM1) | P0 vector           | P0       |
//! | d = 1    | continuous P2 vector (full), P1 (reduced) | disc. P1 (full), P0 (reduced) | none |
//! | d = 0    | none                           | point value         | none     |
//!
//! In the reduced family the linear normal moment of the bulk stress is
//! removed on interface facets. The auxiliary potential space `W` consists
//! of two continuous P2 scalars (hierarchical basis) on the mesh cut open
//! along the inclusions; it vanishes on traction edges.
//!
//! Global DOF blocks: stress (bulk, then inclusions), displacement (bulk,
//! inclusions, points), rotation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix6;

use crate::error::{Error, Result};
use crate::geometry::{
    add, dist, dot, scale, sub, BoundaryKind, EdgeOwner, End, InterfaceKind, MixedDimGeometry, Point, SegmentEnd, Shape,
};
use crate::meshing::{Cells, MixedMesh};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    Reduced,
    /// Test fixture: full bulk stress traces paired with piecewise constant
    /// inclusion displacements, which violates the trace condition.
    BrokenTrace,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "reduced" => Ok(Variant::Reduced),
            "broken-trace" => Ok(Variant::BrokenTrace),
            _ => Err(Error::Input(format!("unknown family variant `{s}` (expected full or reduced)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Reduced => "reduced",
            Variant::BrokenTrace => "broken-trace",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FamilyChoice {
    pub variant: Variant,
    pub order: usize,
}

impl FamilyChoice {
    pub fn full() -> Self {
        FamilyChoice {
            variant: Variant::Full,
            order: 0,
        }
    }

    pub fn reduced() -> Self {
        FamilyChoice {
            variant: Variant::Reduced,
            order: 0,
        }
    }

    /// Whether the bulk stress keeps its linear normal moment on interface facets.
    pub fn full_interface_trace(&self) -> bool {
        self.variant != Variant::Reduced
    }

    /// Whether inclusion stresses and displacements carry the higher-order part.
    pub fn full_inclusion(&self) -> bool {
        self.variant == Variant::Full
    }
}

/// Linear H(div) triangle element (BDM1) on a physical triangle.
///
/// Local DOF `2 e + m` is the normal moment `int_e (v . n_e) q_m ds` on the
/// edge opposite local vertex `e`, with `q_0 = 1` and `q_1 = 2 s - 1`. The
/// edge parameter `s` and the normal `n_e` (tangent rotated clockwise) follow
/// the global orientation from the lower to the higher vertex index, so
/// neighbouring triangles share the functionals.
#[derive(Debug, Clone)]
pub struct Bdm1 {
    center: Point,
    scale: f64,
    /// `coef[j][k]`: monomial `j` coefficient of basis function `k`.
    coef: [[f64; 6]; 6],
    pub edge_start: [Point; 3],
    pub edge_end: [Point; 3],
    pub normals: [Point; 3],
    pub lengths: [f64; 3],
}

fn monomials(center: Point, s: f64, x: Point) -> [Point; 6] {
    let xi = (x[0] - center[0]) / s;
    let eta = (x[1] - center[1]) / s;
    [[1.0, 0.0], [xi, 0.0], [eta, 0.0], [0.0, 1.0], [0.0, xi], [0.0, eta]]
}

/// Moments of `f . n` against `1` and `2 s - 1` along the segment `a -> b`.
pub fn edge_moments(a: Point, b: Point, normal: Point, f: impl Fn(Point) -> Point) -> [f64; 2] {
    let len = dist(a, b);
    let mut m = [0.0; 2];
    for (s, w) in gauss_legendre(5) {
        let v = dot(f(add(a, scale(s, sub(b, a)))), normal) * w * len;
        m[0] += v;
        m[1] += v * (2.0 * s - 1.0);
    }
    m
}

impl Bdm1 {
    /// `gid` are the global vertex indices used for edge orientation.
    pub fn new(pts: [Point; 3], gid: [usize; 3]) -> Self {
        let center = scale(1.0 / 3.0, add(add(pts[0], pts[1]), pts[2]));
        let h = (0..3).map(|k| dist(pts[k], pts[(k + 1) % 3])).fold(0.0, f64::max);
        let mut edge_start = [[0.0; 2]; 3];
        let mut edge_end = [[0.0; 2]; 3];
        let mut normals = [[0.0; 2]; 3];
        let mut lengths = [0.0; 3];
        for e in 0..3 {
            let (i, j) = ((e + 1) % 3, (e + 2) % 3);
            let (p, q) = if gid[i] < gid[j] { (i, j) } else { (j, i) };
            edge_start[e] = pts[p];
            edge_end[e] = pts[q];
            let t = sub(pts[q], pts[p]);
            lengths[e] = dist(pts[p], pts[q]);
            normals[e] = [t[1] / lengths[e], -t[0] / lengths[e]];
        }
        let mut m = Matrix6::<f64>::zeros();
        for e in 0..3 {
            for j in 0..6 {
                let mom = edge_moments(edge_start[e], edge_end[e], normals[e], |x| monomials(center, h, x)[j]);
                m[(2 * e, j)] = mom[0];
                m[(2 * e + 1, j)] = mom[1];
            }
        }
        let inv = m.try_inverse().expect("non-degenerate triangle");
        let mut coef = [[0.0; 6]; 6];
        for j in 0..6 {
            for k in 0..6 {
                coef[j][k] = inv[(j, k)];
            }
        }
        Bdm1 {
            center,
            scale: h,
            coef,
            edge_start,
            edge_end,
            normals,
            lengths,
        }
    }

    pub fn eval(&self, k: usize, x: Point) -> Point {
        let mono = monomials(self.center, self.scale, x);
        let mut v = [0.0; 2];
        for j in 0..6 {
            v[0] += self.coef[j][k] * mono[j][0];
            v[1] += self.coef[j][k] * mono[j][1];
        }
        v
    }

    pub fn eval_all(&self, x: Point) -> [Point; 6] {
        let mut out = [[0.0; 2]; 6];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.eval(k, x);
        }
        out
    }

    /// Divergence of basis function `k` (constant).
    pub fn div(&self, k: usize) -> f64 {
        (self.coef[1][k] + self.coef[5][k]) / self.scale
    }

    /// DOF values of a vector field.
    pub fn dofs_of(&self, f: impl Fn(Point) -> Point) -> [f64; 6] {
        let mut d = [0.0; 6];
        for e in 0..3 {
            let m = edge_moments(self.edge_start[e], self.edge_end[e], self.normals[e], &f);
            d[2 * e] = m[0];
            d[2 * e + 1] = m[1];
        }
        d
    }

    /// Largest deviation of the DOF matrix of the basis from the identity.
    pub fn check_unisolvent(&self) -> f64 {
        let mut err: f64 = 0.0;
        for k in 0..6 {
            let d = self.dofs_of(|x| self.eval(k, x));
            for (l, v) in d.iter().enumerate() {
                err = err.max((v - if l == k { 1.0 } else { 0.0 }).abs());
            }
        }
        err
    }
}

/// Continuous P2 shape functions on `[0, 1]`: values at `s = 0`, `s = 1`, and the cell mean.
pub fn p2_shape(s: f64) -> [f64; 3] {
    let b = s * (1.0 - s);
    [(1.0 - s) - 3.0 * b, s - 3.0 * b, 6.0 * b]
}

/// Derivatives of [`p2_shape`] with respect to `s`.
pub fn p2_shape_ds(s: f64) -> [f64; 3] {
    let db = 1.0 - 2.0 * s;
    [-1.0 - 3.0 * db, 1.0 - 3.0 * db, 6.0 * db]
}

/// Legendre basis `1, 2 s - 1` on `[0, 1]`.
pub fn legendre(s: f64) -> [f64; 2] {
    [1.0, 2.0 * s - 1.0]
}

#[derive(Debug, Clone)]
pub struct TriInfo {
    pub manifold: usize,
    pub local: usize,
    pub verts: [usize; 3],
    pub pts: [Point; 3],
    pub area: f64,
    pub bdm: Bdm1,
}

impl TriInfo {
    pub fn point(&self, l: [f64; 3]) -> Point {
        crate::quadrature::bary_to_point(&self.pts, l)
    }

    /// Barycentric coordinates of `x`.
    pub fn bary(&self, x: Point) -> [f64; 3] {
        let o = crate::meshing::orient;
        let l1 = o(self.pts[2], self.pts[0], x) / (2.0 * self.area);
        let l2 = o(self.pts[0], self.pts[1], x) / (2.0 * self.area);
        [1.0 - l1 - l2, l1, l2]
    }

    /// Gradients of the barycentric coordinates.
    pub fn grad_bary(&self) -> [Point; 3] {
        let mut g = [[0.0; 2]; 3];
        for k in 0..3 {
            let (p, q) = (self.pts[(k + 1) % 3], self.pts[(k + 2) % 3]);
            let e = sub(q, p);
            g[k] = [-e[1] / (2.0 * self.area), e[0] / (2.0 * self.area)];
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct SegCell {
    pub manifold: usize,
    pub local: usize,
    pub verts: [usize; 2],
    pub a: Point,
    pub b: Point,
    pub length: f64,
    pub tangent: Point,
}

impl SegCell {
    pub fn point(&self, s: f64) -> Point {
        add(self.a, scale(s, sub(self.b, self.a)))
    }
}

/// A facet of a side interface: global triangle, its local edge, global inclusion cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SideFacet {
    pub tri: usize,
    pub edge: usize,
    pub cell: usize,
}

/// Interface geometry resolved to global cell indices.
#[derive(Debug, Clone)]
pub enum InterfaceCells {
    Side(Vec<SideFacet>),
    /// Global inclusion cell and its local end (0 or 1) touching the point.
    End { cell: usize, end: usize },
}

#[derive(Debug, Clone)]
pub struct SpaceSet {
    pub family: FamilyChoice,
    pub tris: Vec<TriInfo>,
    pub segs: Vec<SegCell>,
    /// Global triangle index range per manifold.
    pub tri_range: Vec<std::ops::Range<usize>>,
    pub seg_range: Vec<std::ops::Range<usize>>,
    pub interface_cells: Vec<InterfaceCells>,
    /// Side facets touching each inclusion cell: `(interface, facet)`.
    pub cell_sides: Vec<Vec<(usize, SideFacet)>>,
    pub n_sigma: usize,
    pub n_sigma_bulk: usize,
    pub n_u: usize,
    pub n_r: usize,
    pub n_w: usize,
    /// `[row][local BDM dof]`.
    pub tri_sigma: Vec<[[Option<usize>; 6]; 2]>,
    pub tri_u: Vec<[usize; 2]>,
    pub tri_r: Vec<usize>,
    /// `[component][3 vertex + 3 edge bubble]`.
    pub tri_w: Vec<[[Option<usize>; 6]; 2]>,
    /// `[component][value at a, value at b, cell mean]`.
    pub seg_sigma: Vec<[[Option<usize>; 3]; 2]>,
    /// `[component][Legendre degree]`.
    pub seg_u: Vec<[[Option<usize>; 2]; 2]>,
    pub point_u: Vec<Option<[usize; 2]>>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

struct Counter(usize);

impl Counter {
    fn next(&mut self) -> usize {
        self.0 += 1;
        self.0 - 1
    }
}

/// Build the discrete spaces of `family` on `mesh`.
pub fn build_spaces(geom: &MixedDimGeometry, mesh: &MixedMesh, family: FamilyChoice) -> Result<SpaceSet> {
    if family.order != 0 {
        return Err(Error::Unimplemented(format!(
            "{} family of order {} (only order 0 is available)",
            family.variant, family.order
        )));
    }
    if geom.ambient_dim != 2 {
        return Err(Error::Unimplemented(format!("spaces for ambient dimension {}", geom.ambient_dim)));
    }
    let nm = geom.manifolds.len();
    let mut tris = Vec::new();
    let mut tri_range = vec![0..0; nm];
    let mut segs = Vec::new();
    let mut seg_range = vec![0..0; nm];
    for m in &geom.manifolds {
        match &mesh.cells[m.id] {
            Cells::Triangles(list) => {
                let start = tris.len();
                for (l, t) in list.iter().enumerate() {
                    let pts = mesh.triangle_points(t);
                    let area = crate::meshing::orient(pts[0], pts[1], pts[2]) / 2.0;
                    tris.push(TriInfo {
                        manifold: m.id,
                        local: l,
                        verts: *t,
                        pts,
                        area,
                        bdm: Bdm1::new(pts, *t),
                    });
                }
                tri_range[m.id] = start..tris.len();
            }
            Cells::Segments(list) => {
                let start = segs.len();
                for (l, c) in list.iter().enumerate() {
                    let (a, b) = (mesh.vertices[c[0]], mesh.vertices[c[1]]);
                    let length = dist(a, b);
                    segs.push(SegCell {
                        manifold: m.id,
                        local: l,
                        verts: *c,
                        a,
                        b,
                        length,
                        tangent: scale(1.0 / length, sub(b, a)),
                    });
                }
                seg_range[m.id] = start..segs.len();
            }
            Cells::Point(_) => {}
        }
    }
    let mut constraint: HashMap<(usize, usize), EdgeOwner> = HashMap::new();
    for (e, o) in &mesh.constraints {
        constraint.insert(edge_key(e[0], e[1]), *o);
    }
    let edge_kind = |a: usize, b: usize| constraint.get(&edge_key(a, b)).copied();

    // bulk stress
    let mut c = Counter(0);
    let mut shared: HashMap<(usize, usize), [usize; 4]> = HashMap::new();
    let mut tri_sigma = vec![[[None; 6]; 2]; tris.len()];
    for (g, t) in tris.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t.verts[(e + 1) % 3], t.verts[(e + 2) % 3]);
            let ids: [Option<usize>; 4] = match edge_kind(a, b) {
                None => {
                    let d = *shared
                        .entry(edge_key(a, b))
                        .or_insert_with(|| [c.next(), c.next(), c.next(), c.next()]);
                    [Some(d[0]), Some(d[1]), Some(d[2]), Some(d[3])]
                }
                Some(EdgeOwner::Polygon(k)) => match geom.edge_conditions[k].kind {
                    BoundaryKind::Traction => [None; 4],
                    BoundaryKind::Displacement => [Some(c.next()), Some(c.next()), Some(c.next()), Some(c.next())],
                },
                Some(EdgeOwner::Segment(_)) => {
                    if family.full_interface_trace() {
                        [Some(c.next()), Some(c.next()), Some(c.next()), Some(c.next())]
                    } else {
                        [Some(c.next()), None, Some(c.next()), None]
                    }
                }
            };
            for row in 0..2 {
                tri_sigma[g][row][2 * e] = ids[2 * row];
                tri_sigma[g][row][2 * e + 1] = ids[2 * row + 1];
            }
        }
    }
    let n_sigma_bulk = c.0;

    // inclusion stress
    let mut seg_sigma = vec![[[None; 3]; 2]; segs.len()];
    for m in &geom.manifolds {
        let Shape::Segment { ends, .. } = &m.shape else { continue };
        let range = seg_range[m.id].clone();
        let n = range.len();
        let end_free = |e: &SegmentEnd| match e {
            SegmentEnd::Tip => false,
            SegmentEnd::Junction(_) => true,
            SegmentEnd::Boundary(k) => geom.edge_conditions[*k].kind == BoundaryKind::Displacement,
        };
        let mut vertex: Vec<Option<[usize; 2]>> = Vec::with_capacity(n + 1);
        let mut mean: Vec<Option<[usize; 2]>> = Vec::with_capacity(n);
        for v in 0..=n {
            if v > 0 && family.full_inclusion() {
                mean.push(Some([c.next(), c.next()]));
            }
            let free = if v == 0 {
                end_free(&ends[0])
            } else if v == n {
                end_free(&ends[1])
            } else {
                true
            };
            vertex.push(if free { Some([c.next(), c.next()]) } else { None });
        }
        for (l, g) in range.enumerate() {
            for comp in 0..2 {
                seg_sigma[g][comp] = [
                    vertex[l].map(|d| d[comp]),
                    vertex[l + 1].map(|d| d[comp]),
                    mean.get(l).copied().flatten().map(|d| d[comp]),
                ];
            }
        }
    }
    let n_sigma = c.0;

    // displacement, by dimension descending
    let mut c = Counter(0);
    let tri_u: Vec<[usize; 2]> = tris.iter().map(|_| [c.next(), c.next()]).collect();
    let mut seg_u = vec![[[None; 2]; 2]; segs.len()];
    for su in seg_u.iter_mut() {
        for comp in su.iter_mut() {
            comp[0] = Some(c.next());
            if family.full_inclusion() {
                comp[1] = Some(c.next());
            }
        }
    }
    let mut point_u = vec![None; nm];
    for &p in &geom.by_dim[0] {
        point_u[p] = Some([c.next(), c.next()]);
    }
    let n_u = c.0;
    let tri_r: Vec<usize> = (0..tris.len()).collect();
    let n_r = tris.len();

    // interface cells
    let mut interface_cells = Vec::with_capacity(geom.interfaces.len());
    for f in &geom.interfaces {
        let tr = mesh.trace_cells(f.id)?;
        interface_cells.push(match f.kind {
            InterfaceKind::Side(_) => InterfaceCells::Side(
                tr.iter()
                    .map(|t| SideFacet {
                        tri: tri_range[f.upper].start + t.upper_cell,
                        edge: t.local_facet,
                        cell: seg_range[f.lower].start + t.lower_cell,
                    })
                    .collect(),
            ),
            InterfaceKind::End(end) => InterfaceCells::End {
                cell: seg_range[f.upper].start + tr[0].upper_cell,
                end: match end {
                    End::A => 0,
                    End::B => 1,
                },
            },
        });
    }

    let mut cell_sides = vec![Vec::new(); segs.len()];
    for (j, ic) in interface_cells.iter().enumerate() {
        if let InterfaceCells::Side(facets) = ic {
            for fc in facets {
                cell_sides[fc.cell].push((j, *fc));
            }
        }
    }

    let (tri_w, n_w) = build_w(geom, mesh, family, &tris, &edge_kind);

    Ok(SpaceSet {
        family,
        tris,
        segs,
        tri_range,
        seg_range,
        interface_cells,
        cell_sides,
        n_sigma,
        n_sigma_bulk,
        n_u,
        n_r,
        n_w,
        tri_sigma,
        tri_u,
        tri_r,
        tri_w,
        seg_sigma,
        seg_u,
        point_u,
    })
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn build_w(
    geom: &MixedDimGeometry,
    mesh: &MixedMesh,
    family: FamilyChoice,
    tris: &[TriInfo],
    edge_kind: &dyn Fn(usize, usize) -> Option<EdgeOwner>,
) -> (Vec<[[Option<usize>; 6]; 2]>, usize) {
    // fans: (triangle, local vertex) pairs joined across uncut edges
    let mut uf = UnionFind((0..3 * tris.len()).collect());
    let mut edge_tris: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    for (g, t) in tris.iter().enumerate() {
        for e in 0..3 {
            edge_tris
                .entry(edge_key(t.verts[(e + 1) % 3], t.verts[(e + 2) % 3]))
                .or_default()
                .push((g, e));
        }
    }
    let mut keys: Vec<_> = edge_tris.keys().copied().collect();
    keys.sort_unstable();
    for key in &keys {
        let list = &edge_tris[key];
        if list.len() != 2 || matches!(edge_kind(key.0, key.1), Some(EdgeOwner::Segment(_))) {
            continue;
        }
        let (t1, t2) = (list[0].0, list[1].0);
        for v in [key.0, key.1] {
            let l1 = tris[t1].verts.iter().position(|&x| x == v).expect("shared vertex");
            let l2 = tris[t2].verts.iter().position(|&x| x == v).expect("shared vertex");
            uf.union(3 * t1 + l1, 3 * t2 + l2);
        }
    }
    let boundary_points: Vec<usize> = geom.by_dim[0]
        .iter()
        .filter_map(|&p| match mesh.cells[p] {
            Cells::Point(v) => Some(v),
            _ => None,
        })
        .filter(|&v| {
            mesh.constraints
                .iter()
                .any(|(e, o)| matches!(o, EdgeOwner::Polygon(_)) && (e[0] == v || e[1] == v))
        })
        .collect();
    // fans to pin to zero: touching a traction facet, or any polygon facet at a boundary junction
    let mut pinned = vec![false; 3 * tris.len()];
    for (g, t) in tris.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t.verts[(e + 1) % 3], t.verts[(e + 2) % 3]);
            if let Some(EdgeOwner::Polygon(k)) = edge_kind(a, b) {
                let traction = geom.edge_conditions[k].kind == BoundaryKind::Traction;
                for (lv, v) in [((e + 1) % 3, a), ((e + 2) % 3, b)] {
                    if traction || boundary_points.contains(&v) {
                        let r = uf.find(3 * g + lv);
                        pinned[r] = true;
                    }
                }
            }
        }
    }
    let mut c = Counter(0);
    let mut fan_dof: HashMap<usize, [usize; 2]> = HashMap::new();
    let mut edge_dof: HashMap<(usize, usize), [usize; 2]> = HashMap::new();
    let mut tri_w = vec![[[None; 6]; 2]; tris.len()];
    for (g, t) in tris.iter().enumerate() {
        for lv in 0..3 {
            let r = uf.find(3 * g + lv);
            if pinned[r] {
                continue;
            }
            let d = *fan_dof.entry(r).or_insert_with(|| [c.next(), c.next()]);
            tri_w[g][0][lv] = Some(d[0]);
            tri_w[g][1][lv] = Some(d[1]);
        }
        for e in 0..3 {
            let (a, b) = (t.verts[(e + 1) % 3], t.verts[(e + 2) % 3]);
            let d = match edge_kind(a, b) {
                None => Some(*edge_dof.entry(edge_key(a, b)).or_insert_with(|| [c.next(), c.next()])),
                Some(EdgeOwner::Polygon(k)) => match geom.edge_conditions[k].kind {
                    BoundaryKind::Traction => None,
                    BoundaryKind::Displacement => Some([c.next(), c.next()]),
                },
                Some(EdgeOwner::Segment(_)) => {
                    if family.full_interface_trace() {
                        Some([c.next(), c.next()])
                    } else {
                        None
                    }
                }
            };
            if let Some(d) = d {
                tri_w[g][0][3 + e] = Some(d[0]);
                tri_w[g][1][3 + e] = Some(d[1]);
            }
        }
    }
    (tri_w, c.0)
}

/// Stress value: a 2x2 matrix on triangles, a 2-vector (tangential column) on inclusions.
pub type Mat2 = [[f64; 2]; 2];

/// Smooth stress field given per manifold.
pub trait StressField {
    fn bulk(&self, manifold: usize, x: Point) -> Mat2;
    fn inclusion(&self, manifold: usize, x: Point) -> Point;
}

/// Smooth vector field given per manifold (used for displacements and loads).
pub trait VectorField {
    fn value(&self, manifold: usize, x: Point) -> Point;
}

impl<F: Fn(usize, Point) -> Point> VectorField for F {
    fn value(&self, manifold: usize, x: Point) -> Point {
        self(manifold, x)
    }
}

fn coef(c: &[f64], d: Option<usize>) -> f64 {
    d.map_or(0.0, |i| c[i])
}

impl SpaceSet {
    pub fn n_tris(&self) -> usize {
        self.tris.len()
    }

    /// Bulk stress of coefficient vector `c` at `x` in global triangle `t`.
    pub fn stress_tri(&self, c: &[f64], t: usize, x: Point) -> Mat2 {
        let phi = self.tris[t].bdm.eval_all(x);
        let mut s = [[0.0; 2]; 2];
        for row in 0..2 {
            for k in 0..6 {
                let v = coef(c, self.tri_sigma[t][row][k]);
                s[row][0] += v * phi[k][0];
                s[row][1] += v * phi[k][1];
            }
        }
        s
    }

    /// Row-wise divergence of the bulk stress on triangle `t`.
    pub fn div_tri(&self, c: &[f64], t: usize) -> Point {
        let mut d = [0.0; 2];
        for (row, dr) in d.iter_mut().enumerate() {
            for k in 0..6 {
                *dr += coef(c, self.tri_sigma[t][row][k]) * self.tris[t].bdm.div(k);
            }
        }
        d
    }

    /// Inclusion stress at parameter `s` of global cell `g`.
    pub fn stress_seg(&self, c: &[f64], g: usize, s: f64) -> Point {
        let phi = p2_shape(s);
        let mut v = [0.0; 2];
        for (comp, vc) in v.iter_mut().enumerate() {
            let d = self.seg_sigma[g][comp];
            if self.family.full_inclusion() {
                *vc = (0..3).map(|k| coef(c, d[k]) * phi[k]).sum();
            } else {
                *vc = coef(c, d[0]) * (1.0 - s) + coef(c, d[1]) * s;
            }
        }
        v
    }

    /// Tangential derivative of the inclusion stress.
    pub fn dstress_seg(&self, c: &[f64], g: usize, s: f64) -> Point {
        let len = self.segs[g].length;
        let dphi = p2_shape_ds(s);
        let mut v = [0.0; 2];
        for (comp, vc) in v.iter_mut().enumerate() {
            let d = self.seg_sigma[g][comp];
            if self.family.full_inclusion() {
                *vc = (0..3).map(|k| coef(c, d[k]) * dphi[k]).sum::<f64>() / len;
            } else {
                *vc = (coef(c, d[1]) - coef(c, d[0])) / len;
            }
        }
        v
    }

    pub fn u_tri(&self, c: &[f64], t: usize) -> Point {
        [c[self.tri_u[t][0]], c[self.tri_u[t][1]]]
    }

    pub fn u_seg(&self, c: &[f64], g: usize, s: f64) -> Point {
        let l = legendre(s);
        let mut v = [0.0; 2];
        for (comp, vc) in v.iter_mut().enumerate() {
            *vc = (0..2).map(|k| coef(c, self.seg_u[g][comp][k]) * l[k]).sum();
        }
        v
    }

    pub fn u_point(&self, c: &[f64], p: usize) -> Point {
        let d = self.point_u[p].expect("0-manifold displacement");
        [c[d[0]], c[d[1]]]
    }

    /// Tangential derivative of the inclusion displacement.
    pub fn du_seg(&self, c: &[f64], g: usize) -> Point {
        let len = self.segs[g].length;
        [
            2.0 * coef(c, self.seg_u[g][0][1]) / len,
            2.0 * coef(c, self.seg_u[g][1][1]) / len,
        ]
    }

    /// Potential `w` (both components) and its gradient at barycentric `l` in triangle `t`.
    pub fn w_tri(&self, c: &[f64], t: usize, l: [f64; 3]) -> ([f64; 2], [Point; 2]) {
        let gl = self.tris[t].grad_bary();
        let mut val = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for comp in 0..2 {
            for k in 0..3 {
                let a = coef(c, self.tri_w[t][comp][k]);
                val[comp] += a * l[k];
                grad[comp] = add(grad[comp], scale(a, gl[k]));
            }
            for e in 0..3 {
                let a = coef(c, self.tri_w[t][comp][3 + e]);
                let (i, j) = ((e + 1) % 3, (e + 2) % 3);
                val[comp] += a * 4.0 * l[i] * l[j];
                grad[comp] = add(grad[comp], scale(4.0 * a, add(scale(l[i], gl[j]), scale(l[j], gl[i]))));
            }
        }
        (val, grad)
    }

    /// Canonical interpolant of a smooth stress field.
    pub fn interpolate_stress(&self, f: &dyn StressField) -> Vec<f64> {
        let mut c = vec![0.0; self.n_sigma];
        for (t, tri) in self.tris.iter().enumerate() {
            for row in 0..2 {
                let d = tri.bdm.dofs_of(|x| f.bulk(tri.manifold, x)[row]);
                for k in 0..6 {
                    if let Some(i) = self.tri_sigma[t][row][k] {
                        c[i] = d[k];
                    }
                }
            }
        }
        let gl = gauss_legendre(5);
        for (g, seg) in self.segs.iter().enumerate() {
            let va = f.inclusion(seg.manifold, seg.a);
            let vb = f.inclusion(seg.manifold, seg.b);
            let mut mean = [0.0; 2];
            for &(s, w) in &gl {
                let v = f.inclusion(seg.manifold, seg.point(s));
                mean[0] += w * v[0];
                mean[1] += w * v[1];
            }
            for comp in 0..2 {
                let d = self.seg_sigma[g][comp];
                for (k, val) in [va[comp], vb[comp], mean[comp]].into_iter().enumerate() {
                    if let Some(i) = d[k] {
                        c[i] = val;
                    }
                }
            }
        }
        c
    }

    /// L2 projection of a displacement field onto `U_h` (points: evaluation).
    pub fn project_u(&self, f: &dyn VectorField, points: &[(usize, Point)]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_u];
        let rule = crate::quadrature::triangle_rule(8);
        for (t, tri) in self.tris.iter().enumerate() {
            let mut m = [0.0; 2];
            for (l, w) in &rule {
                let v = f.value(tri.manifold, tri.point(*l));
                m[0] += w * v[0];
                m[1] += w * v[1];
            }
            c[self.tri_u[t][0]] = m[0];
            c[self.tri_u[t][1]] = m[1];
        }
        let gl = gauss_legendre(6);
        for (g, seg) in self.segs.iter().enumerate() {
            let mut m = [[0.0; 2]; 2];
            for &(s, w) in &gl {
                let v = f.value(seg.manifold, seg.point(s));
                let l = legendre(s);
                for comp in 0..2 {
                    for k in 0..2 {
                        m[comp][k] += w * v[comp] * l[k];
                    }
                }
            }
            for comp in 0..2 {
                for k in 0..2 {
                    if let Some(i) = self.seg_u[g][comp][k] {
                        // Legendre norms: int 1 = 1, int (2s-1)^2 = 1/3
                        c[i] = m[comp][k] * if k == 0 { 1.0 } else { 3.0 };
                    }
                }
            }
        }
        for &(p, x) in points {
            if let Some(d) = self.point_u[p] {
                let v = f.value(p, x);
                c[d[0]] = v[0];
                c[d[1]] = v[1];
            }
        }
        c
    }

    /// L2 projection of a scalar rotation field onto piecewise constants.
    pub fn project_r(&self, f: &dyn Fn(usize, Point) -> f64) -> Vec<f64> {
        let rule = crate::quadrature::triangle_rule(8);
        self.tris
            .iter()
            .map(|tri| rule.iter().map(|(l, w)| w * f(tri.manifold, tri.point(*l))).sum())
            .collect()
    }
}
