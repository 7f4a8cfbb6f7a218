//! Mixed-dimensional decomposition of a polygon with embedded thin inclusions.
//!
//! The input is a bounding polygon, a list of straight inclusion segments and
//! per-edge boundary conditions. [`decompose`] splits the segments at their
//! intersections and junctions, producing
//!
//! * 0-manifolds at points where two or more segment pieces meet,
//! * 1-manifolds for the segment pieces between such points,
//! * 2-manifolds for the connected components of the remaining open set,
//!
//! together with the codimension-one interfaces between them. Manifolds are
//! numbered by dimension and then by the lexicographic order of their
//! centroids; interfaces are numbered by their lower manifold.

use std::cmp::Ordering;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, VecExpr};

pub type Point = [f64; 2];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(s: f64, a: Point) -> Point {
    [s * a[0], s * a[1]]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Counterclockwise rotation by 90 degrees.
pub fn perp(a: Point) -> Point {
    [-a[1], a[0]]
}

fn lex_cmp(a: Point, b: Point) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Signed area of a closed polygon (positive when counterclockwise).
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|k| cross(poly[k], poly[(k + 1) % n])).sum::<f64>() / 2.0
}

/// Crossing-number test. Points on the boundary give an unspecified answer.
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance from `p` to the segment `a b` and the projection parameter.
fn point_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let d = sub(b, a);
    let t = dot(sub(p, a), d) / dot(d, d);
    let tc = t.clamp(0.0, 1.0);
    (dist(p, add(a, scale(tc, d))), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Displacement,
    Traction,
}

/// Condition on one edge of the bounding polygon. A displacement edge
/// without a value uses the run configuration's default displacement.
#[derive(Debug, Clone)]
pub struct EdgeCondition {
    pub kind: BoundaryKind,
    pub value: Option<VecExpr>,
}

impl EdgeCondition {
    pub fn traction() -> Self {
        EdgeCondition {
            kind: BoundaryKind::Traction,
            value: None,
        }
    }

    pub fn displacement(value: Option<VecExpr>) -> Self {
        EdgeCondition {
            kind: BoundaryKind::Displacement,
            value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub a: Point,
    pub b: Point,
    pub epsilon: f64,
    pub gamma: f64,
}

/// Explicit aperture parameter for the 0-manifold located at `point`.
#[derive(Debug, Clone)]
pub struct JunctionSpec {
    pub point: Point,
    pub epsilon: f64,
}

/// Raw user description of a geometry.
#[derive(Debug, Clone)]
pub struct GeometryInput {
    pub ambient_dim: usize,
    pub bounding_polygon: Vec<Point>,
    pub segments: Vec<SegmentSpec>,
    /// One condition per polygon edge; edge `k` joins vertex `k` and `k + 1`.
    pub boundary: Vec<EdgeCondition>,
    pub junctions: Vec<JunctionSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    ambient_dim: usize,
    bounding_polygon: Vec<[f64; 2]>,
    #[serde(default)]
    segments: Vec<RawSegment>,
    #[serde(default)]
    boundary: Vec<RawBoundary>,
    #[serde(default)]
    junctions: Vec<RawJunction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    a: [f64; 2],
    b: [f64; 2],
    epsilon: f64,
    gamma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJunction {
    point: [f64; 2],
    epsilon: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    edge: usize,
    #[serde(rename = "type")]
    kind: BoundaryKind,
    #[serde(default)]
    value: Option<RawValue>,
}

#[derive(Deserialize)]
#[serde(untagged)]
pub(crate) enum RawValue {
    Number(f64),
    Text(String),
    Vector(Vec<RawComponent>),
}

#[derive(Deserialize)]
#[serde(untagged)]
pub(crate) enum RawComponent {
    Number(f64),
    Text(String),
}

impl RawComponent {
    fn to_expr(&self) -> Result<Expr> {
        Ok(match self {
            RawComponent::Number(c) => Expr::constant(*c),
            RawComponent::Text(s) => Expr::parse(s)?,
        })
    }
}

/// Parse a vector value: a number or expression applies to both components,
/// `"e1, e2"` or `[e1, e2]` give the components separately.
pub(crate) fn parse_vector_value(v: &RawValue) -> Result<VecExpr> {
    match v {
        RawValue::Number(c) => Ok(VecExpr::constant([*c, *c])),
        RawValue::Text(s) => {
            let parts: Vec<&str> = s.split(',').collect();
            match parts.as_slice() {
                [one] => {
                    let e = Expr::parse(one)?;
                    Ok(VecExpr::new(e.clone(), e))
                }
                [p, q] => Ok(VecExpr::new(Expr::parse(p)?, Expr::parse(q)?)),
                _ => Err(Error::Input(format!(
                    "boundary value `{s}` must have one or two comma-separated components"
                ))),
            }
        }
        RawValue::Vector(c) if c.len() == 2 => Ok(VecExpr::new(c[0].to_expr()?, c[1].to_expr()?)),
        RawValue::Vector(c) => Err(Error::Input(format!(
            "boundary value has {} components, expected 2",
            c.len()
        ))),
    }
}

impl GeometryInput {
    /// A polygon without inclusions whose edges are all traction edges.
    pub fn polygon(vertices: Vec<Point>) -> Self {
        let n = vertices.len();
        GeometryInput {
            ambient_dim: 2,
            bounding_polygon: vertices,
            segments: Vec::new(),
            boundary: vec![EdgeCondition::traction(); n],
            junctions: Vec::new(),
        }
    }

    /// The unit square with displacement conditions (default value) on all edges.
    pub fn unit_square() -> Self {
        let mut g = Self::polygon(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        g.boundary = vec![EdgeCondition::displacement(None); 4];
        g
    }

    pub fn with_segment(mut self, a: Point, b: Point, epsilon: f64, gamma: f64) -> Self {
        self.segments.push(SegmentSpec { a, b, epsilon, gamma });
        self
    }

    pub fn with_edge(mut self, edge: usize, cond: EdgeCondition) -> Self {
        self.boundary[edge] = cond;
        self
    }

    pub fn with_junction(mut self, point: Point, epsilon: f64) -> Self {
        self.junctions.push(JunctionSpec { point, epsilon });
        self
    }

    /// Parse the JSON geometry format. Edges not listed under `boundary` are
    /// traction edges.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawGeometry = serde_json::from_str(text).map_err(|e| Error::Input(format!("geometry JSON: {e}")))?;
        let n = raw.bounding_polygon.len();
        let mut boundary = vec![EdgeCondition::traction(); n];
        let mut seen = vec![false; n];
        for b in &raw.boundary {
            if b.edge >= n {
                return Err(Error::Input(format!(
                    "boundary edge {} does not exist (polygon has {n} edges)",
                    b.edge
                )));
            }
            if seen[b.edge] {
                return Err(Error::Input(format!("boundary edge {} listed twice", b.edge)));
            }
            seen[b.edge] = true;
            let value = b.value.as_ref().map(parse_vector_value).transpose()?;
            if b.kind == BoundaryKind::Traction {
                if let Some(v) = &value {
                    let zero = v.0.iter().all(|e| e.as_const() == Some(0.0));
                    if !zero {
                        return Err(Error::Unimplemented(format!(
                            "nonzero traction data on edge {}",
                            b.edge
                        )));
                    }
                }
            }
            boundary[b.edge] = EdgeCondition { kind: b.kind, value };
        }
        Ok(GeometryInput {
            ambient_dim: raw.ambient_dim,
            bounding_polygon: raw.bounding_polygon,
            segments: raw
                .segments
                .into_iter()
                .map(|s| SegmentSpec {
                    a: s.a,
                    b: s.b,
                    epsilon: s.epsilon,
                    gamma: s.gamma,
                })
                .collect(),
            boundary,
            junctions: raw
                .junctions
                .into_iter()
                .map(|j| JunctionSpec {
                    point: j.point,
                    epsilon: j.epsilon,
                })
                .collect(),
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Input(message) => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}

/// How a 1-manifold terminates at one of its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentEnd {
    /// Coupled to the 0-manifold with this index.
    Junction(usize),
    /// Immersed tip with zero stress.
    Tip,
    /// On the bounding polygon; inherits the condition of this polygon edge.
    Boundary(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum End {
    A,
    B,
}

impl End {
    pub fn index(self) -> usize {
        match self {
            End::A => 0,
            End::B => 1,
        }
    }
}

/// A piece of the polygon boundary belonging to a 2-manifold.
#[derive(Debug, Clone)]
pub struct BoundaryPiece {
    pub edge: usize,
    pub a: Point,
    pub b: Point,
}

#[derive(Debug, Clone)]
pub enum Shape {
    Point(Point),
    Segment {
        /// Lexicographically smaller endpoint.
        a: Point,
        b: Point,
        ends: [SegmentEnd; 2],
        gamma: f64,
        /// Index of the input segment this piece was cut from.
        source: usize,
    },
    Region {
        /// Counterclockwise outer cycle; dangling inclusions appear twice.
        outer: Vec<Point>,
        holes: Vec<Vec<Point>>,
        area: f64,
        boundary: Vec<BoundaryPiece>,
    },
}

#[derive(Debug, Clone)]
pub struct Manifold {
    pub id: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub shape: Shape,
}

impl Manifold {
    pub fn vertices(&self) -> Vec<Point> {
        match &self.shape {
            Shape::Point(p) => vec![*p],
            Shape::Segment { a, b, .. } => vec![*a, *b],
            Shape::Region { outer, .. } => outer.clone(),
        }
    }

    pub fn centroid(&self) -> Point {
        match &self.shape {
            Shape::Point(p) => *p,
            Shape::Segment { a, b, .. } => scale(0.5, add(*a, *b)),
            Shape::Region { outer, holes, .. } => {
                let mut area = 0.0;
                let mut c = [0.0, 0.0];
                for cycle in std::iter::once(outer).chain(holes.iter()) {
                    let n = cycle.len();
                    for k in 0..n {
                        let (p, q) = (cycle[k], cycle[(k + 1) % n]);
                        let w = cross(p, q);
                        area += w / 2.0;
                        c[0] += (p[0] + q[0]) * w / 6.0;
                        c[1] += (p[1] + q[1]) * w / 6.0;
                    }
                }
                [c[0] / area, c[1] / area]
            }
        }
    }

    /// Unit tangent `b - a` of a 1-manifold.
    pub fn tangent(&self) -> Option<Point> {
        match &self.shape {
            Shape::Segment { a, b, .. } => {
                let d = sub(*b, *a);
                Some(scale(1.0 / norm(d), d))
            }
            _ => None,
        }
    }

    pub fn length(&self) -> Option<f64> {
        match &self.shape {
            Shape::Segment { a, b, .. } => Some(dist(*a, *b)),
            _ => None,
        }
    }

    pub fn segment_ends(&self) -> Option<[SegmentEnd; 2]> {
        match &self.shape {
            Shape::Segment { ends, .. } => Some(*ends),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterfaceKind {
    /// One side of a 1-manifold; the upper manifold is a 2-manifold.
    Side(Side),
    /// One end of a 1-manifold meeting a 0-manifold.
    End(End),
}

#[derive(Debug, Clone)]
pub struct Interface {
    pub id: usize,
    pub lower: usize,
    pub upper: usize,
    /// Unit normal, outward with respect to the upper manifold.
    pub normal: Point,
    pub gamma: f64,
    pub kind: InterfaceKind,
}

/// Owner of an edge of the planar graph underlying the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOwner {
    Polygon(usize),
    Segment(usize),
}

#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub v: [usize; 2],
    pub owner: EdgeOwner,
}

#[derive(Debug, Clone)]
pub struct MixedDimGeometry {
    pub ambient_dim: usize,
    pub polygon: Vec<Point>,
    pub edge_conditions: Vec<EdgeCondition>,
    pub manifolds: Vec<Manifold>,
    pub interfaces: Vec<Interface>,
    /// Manifold indices of each dimension.
    pub by_dim: Vec<Vec<usize>>,
    /// Interfaces with `lower == i`.
    pub hat_j: Vec<Vec<usize>>,
    /// Interfaces with `upper == i`.
    pub check_j: Vec<Vec<usize>>,
    /// Vertices of the constraint graph: polygon vertices, segment ends and intersections.
    pub graph_vertices: Vec<Point>,
    /// Polygon edge pieces and 1-manifolds, with segment pieces oriented `a -> b`.
    pub graph_edges: Vec<GraphEdge>,
    pub diameter: f64,
    /// Input segments, kept for reporting.
    pub segments: Vec<SegmentSpec>,
    polygon_ccw: bool,
}

/// Outcome of [`MixedDimGeometry::validate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Constant `C` in `epsilon_i <= C * epsilon_max(i)`.
    pub epsilon_bound: f64,
    /// Admissible factor between `epsilon^2` and `gamma^(n - d)` before a warning.
    pub gamma_factor: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            epsilon_bound: 1.0,
            gamma_factor: 100.0,
        }
    }
}

impl MixedDimGeometry {
    pub fn manifold(&self, i: usize) -> &Manifold {
        &self.manifolds[i]
    }

    pub fn dim(&self, i: usize) -> usize {
        self.manifolds[i].dim
    }

    pub fn epsilon(&self, i: usize) -> f64 {
        self.manifolds[i].epsilon
    }

    /// Largest aperture of the manifolds adjacent from above; 1 on the bulk.
    pub fn epsilon_max(&self, i: usize) -> Result<f64> {
        if self.manifolds[i].dim == self.ambient_dim {
            return Ok(1.0);
        }
        self.hat_j[i]
            .iter()
            .map(|&j| self.manifolds[self.interfaces[j].upper].epsilon)
            .reduce(f64::max)
            .ok_or_else(|| Error::Geometry(format!("manifold {i} has no adjacent higher-dimensional manifold")))
    }

    /// Outward unit normal of polygon edge `k`.
    pub fn edge_normal(&self, k: usize) -> Point {
        let n = self.polygon.len();
        let d = sub(self.polygon[(k + 1) % n], self.polygon[k]);
        let out = [d[1], -d[0]];
        let s = if self.polygon_ccw { 1.0 } else { -1.0 } / norm(d);
        scale(s, out)
    }

    /// The 2-manifold containing `p` in its interior, if any.
    pub fn locate_region(&self, p: Point) -> Option<usize> {
        self.by_dim[2].iter().copied().find(|&i| match &self.manifolds[i].shape {
            Shape::Region { outer, holes, .. } => {
                point_in_polygon(outer, p) && !holes.iter().any(|h| point_in_polygon(h, p))
            }
            _ => false,
        })
    }

    /// Interface of `lower` on the given side (1-manifolds only).
    pub fn side_interface(&self, lower: usize, side: Side) -> Option<usize> {
        self.hat_j[lower]
            .iter()
            .copied()
            .find(|&j| self.interfaces[j].kind == InterfaceKind::Side(side))
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(&ValidationOptions::default())
    }

    pub fn validate_with(&self, opts: &ValidationOptions) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let n = self.ambient_dim;
        let count: usize = self.by_dim.iter().map(Vec::len).sum();
        if count != self.manifolds.len() {
            rep.violations.push("index sets do not partition the manifolds".into());
        }
        for m in &self.manifolds {
            if !(m.epsilon > 0.0) {
                rep.violations.push(format!("manifold {} has non-positive epsilon {}", m.id, m.epsilon));
            }
            if m.dim == n && m.epsilon != 1.0 {
                rep.violations.push(format!("bulk manifold {} has epsilon {} != 1", m.id, m.epsilon));
            }
            if m.dim == n && !self.hat_j[m.id].is_empty() {
                rep.violations.push(format!("bulk manifold {} is the lower side of an interface", m.id));
            }
        }
        let mut lower_seen = vec![0usize; self.interfaces.len()];
        let mut upper_seen = vec![0usize; self.interfaces.len()];
        for i in 0..self.manifolds.len() {
            for &j in &self.hat_j[i] {
                lower_seen[j] += 1;
            }
            for &j in &self.check_j[i] {
                upper_seen[j] += 1;
            }
        }
        for (j, f) in self.interfaces.iter().enumerate() {
            if lower_seen[j] != 1 || upper_seen[j] != 1 {
                rep.violations.push(format!("interface {j} is not listed exactly once per index set"));
            }
            if self.manifolds[f.upper].dim != self.manifolds[f.lower].dim + 1 {
                rep.violations.push(format!("interface {j} does not join manifolds of consecutive dimension"));
            }
            if (norm(f.normal) - 1.0).abs() > 1e-12 {
                rep.violations.push(format!("interface {j} normal is not a unit vector"));
            }
            if !(f.gamma > 0.0) {
                rep.violations.push(format!("interface {j} has non-positive aperture {}", f.gamma));
            }
        }
        for &i in &self.by_dim[n] {
            let has_u = match &self.manifolds[i].shape {
                Shape::Region { boundary, .. } => boundary
                    .iter()
                    .any(|b| self.edge_conditions[b.edge].kind == BoundaryKind::Displacement && dist(b.a, b.b) > 0.0),
                _ => false,
            };
            if !has_u {
                rep.violations.push(format!("no displacement boundary on bulk manifold {i}"));
            }
        }
        for m in &self.manifolds {
            if m.dim == n {
                continue;
            }
            match self.epsilon_max(m.id) {
                Err(e) => rep.violations.push(e.to_string()),
                Ok(emax) => {
                    if m.epsilon > opts.epsilon_bound * emax {
                        rep.violations.push(format!(
                            "manifold {} has epsilon {} exceeding {} times the adjacent maximum {}",
                            m.id, m.epsilon, opts.epsilon_bound, emax
                        ));
                    }
                }
            }
            let gamma = self.hat_j[m.id]
                .iter()
                .chain(self.check_j[m.id].iter())
                .map(|&j| self.interfaces[j].gamma)
                .fold(0.0, f64::max);
            if gamma > 0.0 {
                let expected = gamma.powi((n - m.dim) as i32);
                let ratio = m.epsilon * m.epsilon / expected;
                if ratio > opts.gamma_factor || ratio < 1.0 / opts.gamma_factor {
                    rep.warnings.push(format!(
                        "manifold {}: epsilon^2 = {:e} is far from gamma^{} = {:e}",
                        m.id,
                        m.epsilon * m.epsilon,
                        n - m.dim,
                        expected
                    ));
                }
            }
        }
        rep
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

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
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Line {
    Polygon(usize),
    Segment(usize),
}

enum Crossing {
    None,
    At(Point),
    Overlap,
}

fn intersect(p0: Point, p1: Point, q0: Point, q1: Point, tol: f64) -> Crossing {
    let r = sub(p1, p0);
    let s = sub(q1, q0);
    let denom = cross(r, s);
    let qp = sub(q0, p0);
    if denom.abs() <= 1e-14 * norm(r) * norm(s) {
        // parallel: only collinear configurations can meet
        if cross(qp, r).abs() / norm(r) > tol {
            return Crossing::None;
        }
        let rr = dot(r, r);
        let t0 = dot(qp, r) / rr;
        let t1 = dot(sub(q1, p0), r) / rr;
        let (lo, hi) = (t0.min(t1).max(0.0), t0.max(t1).min(1.0));
        let len = norm(r);
        if (hi - lo) * len > tol {
            Crossing::Overlap
        } else if (hi - lo) * len >= -tol {
            Crossing::At(add(p0, scale(0.5 * (lo + hi), r)))
        } else {
            Crossing::None
        }
    } else {
        let t = cross(qp, s) / denom;
        let u = cross(qp, r) / denom;
        let (et, eu) = (tol / norm(r), tol / norm(s));
        if t >= -et && t <= 1.0 + et && u >= -eu && u <= 1.0 + eu {
            Crossing::At(add(p0, scale(t, r)))
        } else {
            Crossing::None
        }
    }
}

/// Build the mixed-dimensional decomposition of `input`.
pub fn decompose(input: &GeometryInput) -> Result<MixedDimGeometry> {
    if input.ambient_dim != 2 {
        return Err(Error::Unimplemented(format!(
            "decomposition for ambient dimension {}",
            input.ambient_dim
        )));
    }
    let poly = &input.bounding_polygon;
    let np = poly.len();
    if np < 3 {
        return Err(Error::Geometry("bounding polygon needs at least 3 vertices".into()));
    }
    if input.boundary.len() != np {
        return Err(Error::Geometry(format!(
            "{} boundary conditions given for {np} polygon edges",
            input.boundary.len()
        )));
    }
    if poly.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Geometry("non-finite polygon coordinate".into()));
    }
    let mut diameter: f64 = 0.0;
    for p in poly {
        for q in poly {
            diameter = diameter.max(dist(*p, *q));
        }
    }
    let tol = 1e-12 * diameter;
    let amb = 1e-6 * diameter;
    let area = signed_area(poly);
    if area.abs() <= amb * diameter {
        return Err(Error::Geometry("bounding polygon has zero area".into()));
    }
    for k in 0..np {
        if dist(poly[k], poly[(k + 1) % np]) <= amb {
            return Err(Error::Geometry(format!("polygon edge {k} is degenerate")));
        }
        for l in k + 1..np {
            if l == k + 1 || (k == 0 && l == np - 1) {
                continue;
            }
            if !matches!(
                intersect(poly[k], poly[(k + 1) % np], poly[l], poly[(l + 1) % np], amb),
                Crossing::None
            ) {
                return Err(Error::Geometry(format!("polygon edges {k} and {l} intersect")));
            }
        }
    }
    for (s, seg) in input.segments.iter().enumerate() {
        if seg.a.iter().chain(seg.b.iter()).any(|c| !c.is_finite()) {
            return Err(Error::Geometry(format!("segment {s} has a non-finite coordinate")));
        }
        if dist(seg.a, seg.b) <= amb {
            return Err(Error::Geometry(format!("segment {s} is degenerate")));
        }
        if !(seg.epsilon > 0.0) || !(seg.gamma > 0.0) {
            return Err(Error::Geometry(format!("segment {s} needs positive epsilon and gamma")));
        }
    }

    let mut lines: Vec<(Point, Point, Line)> = (0..np)
        .map(|k| (poly[k], poly[(k + 1) % np], Line::Polygon(k)))
        .collect();
    lines.extend(input.segments.iter().enumerate().map(|(s, g)| (g.a, g.b, Line::Segment(s))));

    // candidate vertices
    let mut pts: Vec<Point> = poly.clone();
    for g in &input.segments {
        pts.push(g.a);
        pts.push(g.b);
    }
    for (x, &(p0, p1, lx)) in lines.iter().enumerate() {
        for &(q0, q1, ly) in &lines[x + 1..] {
            let (sx, sy) = match (lx, ly) {
                (Line::Polygon(_), Line::Polygon(_)) => continue,
                (a, b) => (a, b),
            };
            match intersect(p0, p1, q0, q1, tol) {
                Crossing::None => {}
                Crossing::At(p) => pts.push(p),
                Crossing::Overlap => {
                    return Err(Error::Geometry(match (sx, sy) {
                        (Line::Segment(a), Line::Segment(b)) => {
                            format!("segments {a} and {b} overlap along a collinear piece")
                        }
                        (Line::Polygon(k), Line::Segment(s)) | (Line::Segment(s), Line::Polygon(k)) => {
                            format!("segment {s} is tangent to polygon edge {k}")
                        }
                        _ => unreachable!(),
                    }));
                }
            }
        }
    }

    // merge coincident candidates; representatives keep insertion order
    let mut uf = UnionFind::new(pts.len());
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            if dist(pts[a], pts[b]) <= tol {
                uf.union(a, b);
            }
        }
    }
    let mut vert_of = vec![usize::MAX; pts.len()];
    let mut verts: Vec<Point> = Vec::new();
    for a in 0..pts.len() {
        let r = uf.find(a);
        if vert_of[r] == usize::MAX {
            vert_of[r] = verts.len();
            verts.push(pts[r]);
        }
        vert_of[a] = vert_of[r];
    }
    for a in 0..verts.len() {
        for b in a + 1..verts.len() {
            let d = dist(verts[a], verts[b]);
            if d < amb {
                return Err(Error::Geometry(format!(
                    "points {:?} and {:?} are {d:e} apart: too close to separate, too far to merge",
                    verts[a], verts[b]
                )));
            }
        }
    }

    // vertices lying on each line, sorted along it
    let mut on_line: Vec<Vec<(f64, usize)>> = vec![Vec::new(); lines.len()];
    let mut on_boundary = vec![false; verts.len()];
    for (x, &(p0, p1, _)) in lines.iter().enumerate() {
        for (v, &p) in verts.iter().enumerate() {
            let (d, t) = point_segment(p, p0, p1);
            if d <= tol {
                on_line[x].push((t, v));
            } else if d < amb {
                return Err(Error::Geometry(format!(
                    "point {p:?} is {d:e} from line {x}: too close to separate, too far to merge"
                )));
            }
        }
        on_line[x].sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    for x in 0..np {
        for &(_, v) in &on_line[x] {
            on_boundary[v] = true;
        }
    }
    for (s, g) in input.segments.iter().enumerate() {
        let x = np + s;
        let list = &on_line[x];
        let (first, last) = (list[0].1, list[list.len() - 1].1);
        for &(_, v) in &list[1..list.len() - 1] {
            if on_boundary[v] {
                return Err(Error::Geometry(format!(
                    "segment {s} touches the bounding polygon at {:?} away from its ends",
                    verts[v]
                )));
            }
        }
        for (v, p) in [(first, g.a), (last, g.b)] {
            if !on_boundary[v] && !point_in_polygon(poly, p) {
                return Err(Error::Geometry(format!("segment {s} endpoint {p:?} lies outside the polygon")));
            }
        }
    }

    // graph edges
    struct Piece {
        va: usize,
        vb: usize,
        source: usize,
    }
    let mut graph_edges: Vec<(usize, usize, Line)> = Vec::new();
    let mut pieces: Vec<Piece> = Vec::new();
    for (x, &(_, _, line)) in lines.iter().enumerate() {
        for w in on_line[x].windows(2) {
            let (mut va, mut vb) = (w[0].1, w[1].1);
            if let Line::Segment(s) = line {
                if lex_cmp(verts[va], verts[vb]) == Ordering::Greater {
                    std::mem::swap(&mut va, &mut vb);
                }
                pieces.push(Piece { va, vb, source: s });
            }
            graph_edges.push((va, vb, line));
        }
    }
    let mut seg_degree = vec![0usize; verts.len()];
    for p in &pieces {
        seg_degree[p.va] += 1;
        seg_degree[p.vb] += 1;
    }

    // half-edge face walk: half-edge 2e goes v0 -> v1, 2e + 1 goes back
    let nh = 2 * graph_edges.len();
    let he_from = |h: usize| {
        let e = &graph_edges[h / 2];
        if h % 2 == 0 {
            e.0
        } else {
            e.1
        }
    };
    let he_to = |h: usize| he_from(h ^ 1);
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); verts.len()];
    for h in 0..nh {
        outgoing[he_from(h)].push(h);
    }
    let angle = |h: usize| {
        let d = sub(verts[he_to(h)], verts[he_from(h)]);
        d[1].atan2(d[0])
    };
    for list in &mut outgoing {
        list.sort_by(|&a, &b| angle(a).total_cmp(&angle(b)));
    }
    let next = |h: usize| {
        let v = he_to(h);
        let list = &outgoing[v];
        let pos = list.iter().position(|&g| g == (h ^ 1)).expect("twin half-edge registered");
        list[(pos + list.len() - 1) % list.len()]
    };
    let mut face_of = vec![usize::MAX; nh];
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    for h0 in 0..nh {
        if face_of[h0] != usize::MAX {
            continue;
        }
        let f = cycles.len();
        let mut cyc = Vec::new();
        let mut h = h0;
        loop {
            face_of[h] = f;
            cyc.push(h);
            h = next(h);
            if h == h0 {
                break;
            }
        }
        cycles.push(cyc);
    }
    let cycle_pts = |c: &[usize]| c.iter().map(|&h| verts[he_from(h)]).collect::<Vec<_>>();
    let cycle_area: Vec<f64> = cycles.iter().map(|c| signed_area(&cycle_pts(c))).collect();
    let mut comp = UnionFind::new(verts.len());
    for e in &graph_edges {
        comp.union(e.0, e.1);
    }
    let area_tol = amb * diameter;
    let mut region_of_cycle = vec![usize::MAX; cycles.len()];
    let mut regions: Vec<usize> = Vec::new();
    for (f, &a) in cycle_area.iter().enumerate() {
        if a > area_tol {
            region_of_cycle[f] = regions.len();
            regions.push(f);
        }
    }
    let mut holes: Vec<Vec<usize>> = vec![Vec::new(); regions.len()];
    for (f, c) in cycles.iter().enumerate() {
        if region_of_cycle[f] != usize::MAX {
            continue;
        }
        let exterior = c
            .iter()
            .any(|&h| h % 2 == if area > 0.0 { 1 } else { 0 } && matches!(graph_edges[h / 2].2, Line::Polygon(_)));
        if exterior {
            continue;
        }
        let v0 = he_from(c[0]);
        let my_comp = comp.find(v0);
        let mut best: Option<usize> = None;
        for (r, &rf) in regions.iter().enumerate() {
            if comp.find(he_from(cycles[rf][0])) == my_comp {
                continue;
            }
            if point_in_polygon(&cycle_pts(&cycles[rf]), verts[v0])
                && best.map_or(true, |b| cycle_area[rf] < cycle_area[regions[b]])
            {
                best = Some(r);
            }
        }
        let r = best.ok_or_else(|| Error::Geometry("inclusion network outside every region".into()))?;
        region_of_cycle[f] = r;
        holes[r].push(f);
    }

    // provisional manifolds; sorted afterwards
    struct Proto {
        dim: usize,
        centroid: Point,
        manifold: Manifold,
    }
    let mut protos: Vec<Proto> = Vec::new();
    let mut point_proto = vec![usize::MAX; verts.len()];
    for v in 0..verts.len() {
        if seg_degree[v] >= 2 {
            point_proto[v] = protos.len();
            let eps = input
                .junctions
                .iter()
                .find(|j| dist(j.point, verts[v]) <= amb)
                .map(|j| j.epsilon)
                .unwrap_or_else(|| {
                    pieces
                        .iter()
                        .filter(|p| p.va == v || p.vb == v)
                        .map(|p| input.segments[p.source].gamma)
                        .fold(0.0, f64::max)
                });
            protos.push(Proto {
                dim: 0,
                centroid: verts[v],
                manifold: Manifold {
                    id: 0,
                    dim: 0,
                    epsilon: eps,
                    shape: Shape::Point(verts[v]),
                },
            });
        }
    }
    for j in &input.junctions {
        if !(j.epsilon > 0.0) {
            return Err(Error::Geometry(format!("junction at {:?} needs positive epsilon", j.point)));
        }
        if !(0..verts.len()).any(|v| point_proto[v] != usize::MAX && dist(verts[v], j.point) <= amb) {
            return Err(Error::Geometry(format!("junction at {:?} matches no intersection point", j.point)));
        }
    }
    let boundary_edge_at = |v: usize| -> Option<usize> {
        let mut cands: Vec<usize> = (0..np).filter(|&k| on_line[k].iter().any(|&(_, w)| w == v)).collect();
        cands.sort_by_key(|&k| (input.boundary[k].kind != BoundaryKind::Displacement, k));
        cands.first().copied()
    };
    let end_kind = |v: usize| -> SegmentEnd {
        if point_proto[v] != usize::MAX {
            SegmentEnd::Junction(point_proto[v])
        } else if on_boundary[v] {
            SegmentEnd::Boundary(boundary_edge_at(v).expect("boundary vertex lies on an edge"))
        } else {
            SegmentEnd::Tip
        }
    };
    let mut piece_proto = Vec::with_capacity(pieces.len());
    for p in &pieces {
        piece_proto.push(protos.len());
        let (a, b) = (verts[p.va], verts[p.vb]);
        let g = &input.segments[p.source];
        protos.push(Proto {
            dim: 1,
            centroid: scale(0.5, add(a, b)),
            manifold: Manifold {
                id: 0,
                dim: 1,
                epsilon: g.epsilon,
                shape: Shape::Segment {
                    a,
                    b,
                    ends: [end_kind(p.va), end_kind(p.vb)],
                    gamma: g.gamma,
                    source: p.source,
                },
            },
        });
    }
    let mut region_proto = Vec::with_capacity(regions.len());
    for (r, &f) in regions.iter().enumerate() {
        let outer = cycle_pts(&cycles[f]);
        let hole_pts: Vec<Vec<Point>> = holes[r].iter().map(|&h| cycle_pts(&cycles[h])).collect();
        let area = cycle_area[f] + holes[r].iter().map(|&h| cycle_area[h]).sum::<f64>();
        let boundary = cycles[f]
            .iter()
            .filter_map(|&h| match graph_edges[h / 2].2 {
                Line::Polygon(k) => Some(BoundaryPiece {
                    edge: k,
                    a: verts[he_from(h)],
                    b: verts[he_to(h)],
                }),
                Line::Segment(_) => None,
            })
            .collect();
        let m = Manifold {
            id: 0,
            dim: 2,
            epsilon: 1.0,
            shape: Shape::Region {
                outer,
                holes: hole_pts,
                area,
                boundary,
            },
        };
        region_proto.push(protos.len());
        protos.push(Proto {
            dim: 2,
            centroid: m.centroid(),
            manifold: m,
        });
    }

    let mut order: Vec<usize> = (0..protos.len()).collect();
    order.sort_by(|&a, &b| {
        protos[a]
            .dim
            .cmp(&protos[b].dim)
            .then(lex_cmp(protos[a].centroid, protos[b].centroid))
    });
    let mut new_id = vec![0; protos.len()];
    for (k, &p) in order.iter().enumerate() {
        new_id[p] = k;
    }
    let manifolds: Vec<Manifold> = order
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut m = protos[p].manifold.clone();
            m.id = k;
            if let Shape::Segment { ends, .. } = &mut m.shape {
                for e in ends.iter_mut() {
                    if let SegmentEnd::Junction(q) = e {
                        *q = new_id[*q];
                    }
                }
            }
            m
        })
        .collect();

    // interfaces, numbered by lower manifold
    let piece_of_manifold: Vec<Option<usize>> = {
        let mut v = vec![None; manifolds.len()];
        for (pi, &pp) in piece_proto.iter().enumerate() {
            v[new_id[pp]] = Some(pi);
        }
        v
    };
    let mut graph_edge_of_piece = vec![0usize; pieces.len()];
    {
        let mut k = 0;
        for (e, ge) in graph_edges.iter().enumerate() {
            if let Line::Segment(_) = ge.2 {
                graph_edge_of_piece[k] = e;
                k += 1;
            }
        }
    }
    let mut interfaces: Vec<Interface> = Vec::new();
    for i in 0..manifolds.len() {
        let m = &manifolds[i];
        match &m.shape {
            Shape::Point(_) => {
                let mut ends: Vec<(usize, End)> = Vec::new();
                for s in 0..manifolds.len() {
                    if let Some(es) = manifolds[s].segment_ends() {
                        for (k, e) in es.iter().enumerate() {
                            if *e == SegmentEnd::Junction(i) {
                                ends.push((s, if k == 0 { End::A } else { End::B }));
                            }
                        }
                    }
                }
                for (s, end) in ends {
                    let t = manifolds[s].tangent().expect("segment tangent");
                    let normal = if end == End::A { scale(-1.0, t) } else { t };
                    let gamma = match manifolds[s].shape {
                        Shape::Segment { gamma, .. } => gamma,
                        _ => unreachable!(),
                    };
                    interfaces.push(Interface {
                        id: interfaces.len(),
                        lower: i,
                        upper: s,
                        normal,
                        gamma,
                        kind: InterfaceKind::End(end),
                    });
                }
            }
            Shape::Segment { gamma, .. } => {
                let pi = piece_of_manifold[i].expect("segment manifold comes from a piece");
                let e = graph_edge_of_piece[pi];
                // graph edge e runs va -> vb, i.e. along the tangent
                let t = m.tangent().expect("segment tangent");
                let nc = perp(t);
                for (side, h, normal) in [(Side::Left, 2 * e, scale(-1.0, nc)), (Side::Right, 2 * e + 1, nc)] {
                    let r = region_of_cycle[face_of[h]];
                    interfaces.push(Interface {
                        id: interfaces.len(),
                        lower: i,
                        upper: new_id[region_proto[r]],
                        normal,
                        gamma: *gamma,
                        kind: InterfaceKind::Side(side),
                    });
                }
            }
            Shape::Region { .. } => {}
        }
    }
    let mut by_dim = vec![Vec::new(); 3];
    for m in &manifolds {
        by_dim[m.dim].push(m.id);
    }
    let mut hat_j = vec![Vec::new(); manifolds.len()];
    let mut check_j = vec![Vec::new(); manifolds.len()];
    for f in &interfaces {
        hat_j[f.lower].push(f.id);
        check_j[f.upper].push(f.id);
    }
    let graph_edges = graph_edges
        .iter()
        .enumerate()
        .map(|(e, &(a, b, line))| GraphEdge {
            v: [a, b],
            owner: match line {
                Line::Polygon(k) => EdgeOwner::Polygon(k),
                Line::Segment(_) => {
                    let pi = graph_edge_of_piece.iter().position(|&g| g == e).expect("piece edge");
                    EdgeOwner::Segment(new_id[piece_proto[pi]])
                }
            },
        })
        .collect();
    Ok(MixedDimGeometry {
        ambient_dim: 2,
        polygon: poly.clone(),
        edge_conditions: input.boundary.clone(),
        manifolds,
        interfaces,
        by_dim,
        hat_j,
        check_j,
        graph_vertices: verts,
        graph_edges,
        diameter,
        segments: input.segments.clone(),
        polygon_ccw: area > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(g: &MixedDimGeometry) -> [usize; 3] {
        [g.by_dim[0].len(), g.by_dim[1].len(), g.by_dim[2].len()]
    }

    #[test]
    fn isolated_segment() {
        let g = decompose(&GeometryInput::unit_square().with_segment([0.3, 0.5], [0.7, 0.5], 1e-2, 1e-4)).unwrap();
        assert_eq!(counts(&g), [0, 1, 1]);
        let s = g.by_dim[1][0];
        assert_eq!(g.hat_j[s].len(), 2);
        assert_eq!(g.manifolds[s].segment_ends().unwrap(), [SegmentEnd::Tip, SegmentEnd::Tip]);
        let (n0, n1) = (g.interfaces[g.hat_j[s][0]].normal, g.interfaces[g.hat_j[s][1]].normal);
        assert!((dot(n0, n1) + 1.0).abs() < 1e-15);
        assert!(g.validate().is_valid());
        assert_eq!(g.epsilon_max(s).unwrap(), 1.0);
        assert_eq!(g.epsilon_max(g.by_dim[2][0]).unwrap(), 1.0);
    }

    #[test]
    fn crossing_segments() {
        let g = decompose(
            &GeometryInput::unit_square()
                .with_segment([0.2, 0.5], [0.8, 0.5], 1e-2, 1e-4)
                .with_segment([0.5, 0.2], [0.5, 0.8], 1e-3, 1e-6),
        )
        .unwrap();
        assert_eq!(counts(&g), [1, 4, 1]);
        assert_eq!(g.hat_j[0].len(), 4);
        assert_eq!(g.epsilon_max(0).unwrap(), 1e-2);
    }

    #[test]
    fn full_width_segment_splits_bulk() {
        let g = decompose(&GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], 1e-2, 1e-4)).unwrap();
        assert_eq!(counts(&g), [0, 1, 2]);
        let s = g.by_dim[1][0];
        let ends = g.manifolds[s].segment_ends().unwrap();
        assert!(matches!(ends[0], SegmentEnd::Boundary(3)));
        assert!(matches!(ends[1], SegmentEnd::Boundary(1)));
        let left = g.side_interface(s, Side::Left).unwrap();
        let right = g.side_interface(s, Side::Right).unwrap();
        // tangent +x: the left side is the upper half, whose outward normal points down
        let top = g.interfaces[left].upper;
        assert!(g.manifolds[top].centroid()[1] > 0.5);
        assert_eq!(g.interfaces[left].normal, [0.0, -1.0]);
        assert!(g.manifolds[g.interfaces[right].upper].centroid()[1] < 0.5);
        // regions sorted by centroid: (0.5, 0.25) before (0.5, 0.75)
        assert_eq!(g.by_dim[2], vec![1, 2]);
        assert_eq!(top, 2);
    }

    #[test]
    fn h_network() {
        let g = decompose(
            &GeometryInput::unit_square()
                .with_segment([0.25, 0.1], [0.25, 0.9], 1e-2, 1e-4)
                .with_segment([0.75, 0.1], [0.75, 0.9], 1e-2, 1e-4)
                .with_segment([0.25, 0.5], [0.75, 0.5], 1e-2, 1e-4),
        )
        .unwrap();
        assert_eq!(counts(&g), [2, 5, 1]);
        for &i in &g.by_dim[1] {
            assert_eq!(g.hat_j[i].len(), 2);
        }
        for &p in &g.by_dim[0] {
            assert_eq!(g.hat_j[p].len(), 3);
        }
    }

    #[test]
    fn rejects_overlap_tangent_and_ambiguity() {
        let sq = GeometryInput::unit_square;
        let e = decompose(&sq().with_segment([0.1, 0.5], [0.6, 0.5], 1.0, 1.0).with_segment([0.4, 0.5], [0.9, 0.5], 1.0, 1.0));
        assert!(e.unwrap_err().to_string().contains("overlap"));
        let e = decompose(&sq().with_segment([0.2, 0.0], [0.8, 0.0], 1.0, 1.0));
        assert!(e.unwrap_err().to_string().contains("tangent"));
        let e = decompose(&sq().with_segment([0.2, 0.5], [0.8, 0.5], 1.0, 1.0).with_segment([0.5, 0.5 + 1e-9], [0.5, 0.9], 1.0, 1.0));
        assert!(e.unwrap_err().to_string().contains("too close"));
        let e = decompose(&sq().with_segment([0.2, 0.5], [1.5, 0.5], 1.0, 1.0));
        assert!(e.is_err());
    }

    #[test]
    fn no_displacement_boundary_is_reported() {
        let g = decompose(&GeometryInput::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])).unwrap();
        let rep = g.validate();
        assert!(rep.violations.iter().any(|v| v.contains("no displacement boundary")));
    }

    #[test]
    fn json_roundtrip() {
        let text = r#"{
            "ambient_dim": 2,
            "bounding_polygon": [[0,0],[1,0],[1,1],[0,1]],
            "segments": [{"a":[0.2,0.5],"b":[0.8,0.5],"epsilon":0.01,"gamma":0.0001}],
            "boundary": [{"edge":0,"type":"displacement","value":["x", 0]},
                         {"edge":2,"type":"displacement","value":"sin(pi*x), y"}]
        }"#;
        let inp = GeometryInput::from_json_str(text).unwrap();
        assert_eq!(inp.boundary[1].kind, BoundaryKind::Traction);
        let v = inp.boundary[2].value.as_ref().unwrap().eval([0.5, 0.25]);
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1] == 0.25);
        assert!(GeometryInput::from_json_str(r#"{"ambient_dim":2,"bounding_polygon":[[0,0],[1,0],[0,1]],"boundary":[{"edge":0,"type":"displacement","value":"x +"}]}"#).is_err());
    }
}
