//! Assembly of the discrete saddle-point system
//!
//! ```text
//! [ A  B^T ] [ sigma ]   [ G ]
//! [ B  0   ] [ (u,r) ] = [ F ]
//! ```
//!
//! with `A` the compliance-weighted stress mass (bulk, inclusions and
//! interfaces), `B = (B_div, B_skw)`, `G` the weak displacement boundary
//! functional and `F` the aperture-weighted body force.

use crate::elements::{legendre, p2_shape, p2_shape_ds, InterfaceCells, Mat2, SpaceSet};
use crate::error::{Error, Result};
use crate::expr::VecExpr;
use crate::geometry::{dot, BoundaryKind, MixedDimGeometry, Point, SegmentEnd, Shape};
use crate::meshing::MixedMesh;
use crate::quadrature::{gauss_legendre, triangle_deg4, triangle_rule};
use crate::sparse::{CscMatrix, Triplets};

/// Lame parameters per manifold and interface coefficients per interface.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialLaw {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu_perp: Vec<f64>,
    pub lambda_perp: Vec<f64>,
}

impl MaterialLaw {
    /// The same parameters on every manifold and interface.
    pub fn uniform(geom: &MixedDimGeometry, mu: f64, lambda: f64, mu_perp: f64, lambda_perp: f64) -> Result<Self> {
        let law = MaterialLaw {
            mu: vec![mu; geom.manifolds.len()],
            lambda: vec![lambda; geom.manifolds.len()],
            mu_perp: vec![mu_perp; geom.interfaces.len()],
            lambda_perp: vec![lambda_perp; geom.interfaces.len()],
        };
        law.check(geom)?;
        Ok(law)
    }

    pub fn check(&self, geom: &MixedDimGeometry) -> Result<()> {
        if self.mu.len() != geom.manifolds.len() || self.mu_perp.len() != geom.interfaces.len() {
            return Err(Error::Input("material parameters do not match the geometry".into()));
        }
        for m in &geom.manifolds {
            let (mu, la) = (self.mu[m.id], self.lambda[m.id]);
            if m.dim >= 1 && !(mu > 0.0 && 2.0 * mu + m.dim as f64 * la > 0.0) {
                return Err(Error::Input(format!(
                    "manifold {}: need mu > 0 and 2 mu + {} lambda > 0 (mu = {mu}, lambda = {la})",
                    m.id, m.dim
                )));
            }
        }
        for j in 0..geom.interfaces.len() {
            let (mu, la) = (self.mu_perp[j], self.lambda_perp[j]);
            if !(mu > 0.0 && 2.0 * mu + la > 0.0) {
                return Err(Error::Input(format!(
                    "interface {j}: need mu_perp > 0 and 2 mu_perp + lambda_perp > 0 (mu_perp = {mu}, lambda_perp = {la})"
                )));
            }
        }
        Ok(())
    }

    /// Multiply every coefficient by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * c).collect();
        MaterialLaw {
            mu: s(&self.mu),
            lambda: s(&self.lambda),
            mu_perp: s(&self.mu_perp),
            lambda_perp: s(&self.lambda_perp),
        }
    }
}

/// Inverse Hooke law on a `d`-dimensional manifold for a stress with `d`
/// columns given in a tangent frame: `(2 mu)^-1 (sigma - lambda / (2 mu + d lambda) tr(sigma) [I_d, 0]^T)`.
/// Each column `c` of `sigma` is a 2-vector; the trace sums the tangential
/// component of column `c` along tangent `c`.
pub fn compliance_frame(mu: f64, lambda: f64, sigma: &[Point], tangents: &[Point]) -> Vec<Point> {
    let d = sigma.len();
    let tr: f64 = sigma.iter().zip(tangents).map(|(s, t)| dot(*s, *t)).sum();
    let c = lambda / (2.0 * mu + d as f64 * lambda);
    sigma
        .iter()
        .zip(tangents)
        .map(|(s, t)| [(s[0] - c * tr * t[0]) / (2.0 * mu), (s[1] - c * tr * t[1]) / (2.0 * mu)])
        .collect()
}

/// Bulk compliance `A sigma` of a 2x2 stress (rows are the stress rows).
pub fn compliance_bulk(mu: f64, lambda: f64, s: Mat2) -> Mat2 {
    let c = lambda / (2.0 * mu + 2.0 * lambda);
    let tr = s[0][0] + s[1][1];
    [
        [(s[0][0] - c * tr) / (2.0 * mu), s[0][1] / (2.0 * mu)],
        [s[1][0] / (2.0 * mu), (s[1][1] - c * tr) / (2.0 * mu)],
    ]
}

/// Inclusion compliance of the tangential stress column `s` along unit tangent `t`.
pub fn compliance_inclusion(mu: f64, lambda: f64, s: Point, t: Point) -> Point {
    compliance_frame(mu, lambda, &[s], &[t])[0]
}

/// Compliance of the material law on manifold `i` (stress given as columns in the manifold's frame).
pub fn compliance_apply(law: &MaterialLaw, geom: &MixedDimGeometry, sigma: &[Point], i: usize) -> Result<Vec<Point>> {
    let m = geom.manifold(i);
    let tangents: Vec<Point> = match m.dim {
        2 => vec![[1.0, 0.0], [0.0, 1.0]],
        1 => vec![m.tangent().expect("segment tangent")],
        _ => return Err(Error::Input(format!("manifold {i} of dimension 0 carries no stress"))),
    };
    if sigma.len() != tangents.len() {
        return Err(Error::Input(format!(
            "stress with {} columns on a manifold of dimension {}",
            sigma.len(),
            m.dim
        )));
    }
    Ok(compliance_frame(law.mu[i], law.lambda[i], sigma, &tangents))
}

/// Interface compliance `(2 mu_perp)^-1 (t - lambda_perp / (2 mu_perp + lambda_perp) (t . n) n)`.
pub fn interface_compliance(mu_perp: f64, lambda_perp: f64, traction: Point, normal: Point) -> Point {
    let c = lambda_perp / (2.0 * mu_perp + lambda_perp) * dot(traction, normal);
    [
        (traction[0] - c * normal[0]) / (2.0 * mu_perp),
        (traction[1] - c * normal[1]) / (2.0 * mu_perp),
    ]
}

/// Data of a boundary value problem: body force and boundary displacement
/// per manifold. Point manifolds use the value of `f` at the point. The
/// displacement of a polygon edge with an explicit value overrides `g`.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub f: Vec<VecExpr>,
    pub g: Vec<VecExpr>,
}

impl ProblemData {
    pub fn uniform(geom: &MixedDimGeometry, f: VecExpr, g: VecExpr) -> Self {
        let n = geom.manifolds.len();
        ProblemData {
            f: vec![f; n],
            g: vec![g; n],
        }
    }

    pub fn zero(geom: &MixedDimGeometry) -> Self {
        Self::uniform(geom, VecExpr::zero(), VecExpr::zero())
    }

    fn boundary_value<'a>(&'a self, geom: &'a MixedDimGeometry, edge: usize, manifold: usize) -> &'a VecExpr {
        geom.edge_conditions[edge].value.as_ref().unwrap_or(&self.g[manifold])
    }
}

/// Assembled saddle-point system.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub a: CscMatrix,
    pub b_div: CscMatrix,
    pub b_skw: CscMatrix,
    pub rhs_sigma: Vec<f64>,
    pub rhs_u: Vec<f64>,
    pub n_sigma: usize,
    pub n_u: usize,
    pub n_r: usize,
}

impl SaddleSystem {
    pub fn dim(&self) -> usize {
        self.n_sigma + self.n_u + self.n_r
    }

    /// The symmetric block matrix `[[A, B^T], [B, 0]]`.
    pub fn matrix(&self) -> CscMatrix {
        let n = self.dim();
        let mut t = Triplets::new(n, n);
        let (s, u) = (self.n_sigma, self.n_u);
        t.add_block(0, 0, &self.a, 1.0, false);
        t.add_block(s, 0, &self.b_div, 1.0, false);
        t.add_block(0, s, &self.b_div, 1.0, true);
        t.add_block(s + u, 0, &self.b_skw, 1.0, false);
        t.add_block(0, s + u, &self.b_skw, 1.0, true);
        t.to_csc()
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut b = self.rhs_sigma.clone();
        b.extend_from_slice(&self.rhs_u);
        b.resize(self.dim(), 0.0);
        b
    }

    /// Index ranges of the stress, displacement and rotation blocks.
    pub fn blocks(&self) -> [std::ops::Range<usize>; 3] {
        let (s, u) = (self.n_sigma, self.n_u);
        [0..s, s..s + u, s + u..s + u + self.n_r]
    }
}

/// Local stress basis functions on a triangle: `(global dof, row, local index)`.
fn tri_dofs(sp: &SpaceSet, t: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(12);
    for row in 0..2 {
        for k in 0..6 {
            if let Some(d) = sp.tri_sigma[t][row][k] {
                out.push((d, row, k));
            }
        }
    }
    out
}

/// Local stress basis functions on an inclusion cell: `(global dof, component, shape index)`.
fn seg_dofs(sp: &SpaceSet, g: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(6);
    for comp in 0..2 {
        for k in 0..3 {
            if let Some(d) = sp.seg_sigma[g][comp][k] {
                out.push((d, comp, k));
            }
        }
    }
    out
}

/// Inclusion shape function `k` and its `s`-derivative for the family in use.
pub fn seg_shape(sp: &SpaceSet, k: usize, s: f64) -> (f64, f64) {
    if sp.family.full_inclusion() {
        (p2_shape(s)[k], p2_shape_ds(s)[k])
    } else {
        match k {
            0 => (1.0 - s, -1.0),
            1 => (s, 1.0),
            _ => (0.0, 0.0),
        }
    }
}

fn unit(comp: usize, v: f64) -> Point {
    let mut p = [0.0; 2];
    p[comp] = v;
    p
}

/// Compliance block `A`.
/// Compliance operators entering the stress bilinear form. [`MaterialLaw`]
/// is the isotropic implementation; other laws (commuting with the aperture
/// scaling) can be assembled through [`assemble_a_with`].
pub trait Compliance {
    /// Compliance of a bulk stress on 2-manifold `m` (rows are stress rows).
    fn bulk(&self, m: usize, sigma: Mat2) -> Mat2;
    /// Compliance of the tangential stress column on 1-manifold `m` with unit tangent `t`.
    fn inclusion(&self, m: usize, sigma: Point, t: Point) -> Point;
    /// Compliance of the traction on interface `j` with unit normal `n`.
    fn interface(&self, j: usize, traction: Point, n: Point) -> Point;
}

impl Compliance for MaterialLaw {
    fn bulk(&self, m: usize, sigma: Mat2) -> Mat2 {
        compliance_bulk(self.mu[m], self.lambda[m], sigma)
    }
    fn inclusion(&self, m: usize, sigma: Point, t: Point) -> Point {
        compliance_inclusion(self.mu[m], self.lambda[m], sigma, t)
    }
    fn interface(&self, j: usize, traction: Point, n: Point) -> Point {
        interface_compliance(self.mu_perp[j], self.lambda_perp[j], traction, n)
    }
}

pub fn assemble_a(geom: &MixedDimGeometry, sp: &SpaceSet, law: &MaterialLaw) -> CscMatrix {
    assemble_a_with(geom, sp, law)
}

pub fn assemble_a_with(geom: &MixedDimGeometry, sp: &SpaceSet, law: &dyn Compliance) -> CscMatrix {
    let mut t = Triplets::new(sp.n_sigma, sp.n_sigma);
    let rule = triangle_deg4();
    for (ti, tri) in sp.tris.iter().enumerate() {
        let dofs = tri_dofs(sp, ti);
        let mut local = vec![0.0; dofs.len() * dofs.len()];
        for (l, w) in &rule {
            let x = tri.point(*l);
            let phi = tri.bdm.eval_all(x);
            let wa = w * tri.area;
            for (a, &(_, ra, ka)) in dofs.iter().enumerate() {
                let mut s = [[0.0; 2]; 2];
                s[ra] = phi[ka];
                let cs = law.bulk(tri.manifold, s);
                for (b, &(_, rb, kb)) in dofs.iter().enumerate() {
                    local[a * dofs.len() + b] += wa * dot(cs[rb], phi[kb]);
                }
            }
        }
        add_local(&mut t, &dofs, &local);
    }
    let gl = gauss_legendre(3);
    for (g, seg) in sp.segs.iter().enumerate() {
        let dofs = seg_dofs(sp, g);
        let mut local = vec![0.0; dofs.len() * dofs.len()];
        for &(s, w) in &gl {
            for (a, &(_, ca, ka)) in dofs.iter().enumerate() {
                let cs = law.inclusion(seg.manifold, unit(ca, seg_shape(sp, ka, s).0), seg.tangent);
                for (b, &(_, cb, kb)) in dofs.iter().enumerate() {
                    local[a * dofs.len() + b] += w * seg.length * cs[cb] * seg_shape(sp, kb, s).0;
                }
            }
        }
        add_local(&mut t, &dofs, &local);
    }
    for (j, cells) in sp.interface_cells.iter().enumerate() {
        let f = &geom.interfaces[j];
        match cells {
            InterfaceCells::Side(facets) => {
                for fc in facets {
                    let tri = &sp.tris[fc.tri];
                    let seg = &sp.segs[fc.cell];
                    let dofs = tri_dofs(sp, fc.tri);
                    let mut local = vec![0.0; dofs.len() * dofs.len()];
                    for &(s, w) in &gl {
                        let phi = tri.bdm.eval_all(seg.point(s));
                        for (a, &(_, ra, ka)) in dofs.iter().enumerate() {
                            let ta = unit(ra, dot(phi[ka], f.normal));
                            let ca = law.interface(j, ta, f.normal);
                            for (b, &(_, rb, kb)) in dofs.iter().enumerate() {
                                local[a * dofs.len() + b] += w * seg.length * ca[rb] * dot(phi[kb], f.normal);
                            }
                        }
                    }
                    add_local(&mut t, &dofs, &local);
                }
            }
            InterfaceCells::End { cell, end } => {
                let dofs = seg_dofs(sp, *cell);
                let s = *end as f64;
                let mut local = vec![0.0; dofs.len() * dofs.len()];
                for (a, &(_, ca, ka)) in dofs.iter().enumerate() {
                    let ta = unit(ca, seg_shape(sp, ka, s).0);
                    let cta = law.interface(j, ta, f.normal);
                    for (b, &(_, cb, kb)) in dofs.iter().enumerate() {
                        local[a * dofs.len() + b] += cta[cb] * seg_shape(sp, kb, s).0;
                    }
                }
                add_local(&mut t, &dofs, &local);
            }
        }
    }
    t.to_csc()
}

/// Add the symmetric part of a local matrix, mirroring entries so that the
/// global matrix is exactly symmetric.
fn add_local(t: &mut Triplets, dofs: &[(usize, usize, usize)], local: &[f64]) {
    let n = dofs.len();
    for a in 0..n {
        t.add(dofs[a].0, dofs[a].0, local[a * n + a]);
        for b in a + 1..n {
            let v = 0.5 * (local[a * n + b] + local[b * n + a]);
            t.add(dofs[a].0, dofs[b].0, v);
            t.add(dofs[b].0, dofs[a].0, v);
        }
    }
}

/// Divergence and asymmetry blocks `(B_div, B_skw)`.
pub fn assemble_b(geom: &MixedDimGeometry, sp: &SpaceSet) -> (CscMatrix, CscMatrix) {
    let mut bd = Triplets::new(sp.n_u, sp.n_sigma);
    let mut bs = Triplets::new(sp.n_r, sp.n_sigma);
    for (ti, tri) in sp.tris.iter().enumerate() {
        let eps = geom.epsilon(tri.manifold);
        let centroid = tri.point([1.0 / 3.0; 3]);
        let phi = tri.bdm.eval_all(centroid);
        for (d, row, k) in tri_dofs(sp, ti) {
            bd.add(sp.tri_u[ti][row], d, eps * tri.bdm.div(k) * tri.area);
            // skw(tau) = tau_12 - tau_21
            let v = if row == 0 { phi[k][1] } else { -phi[k][0] };
            bs.add(sp.tri_r[ti], d, eps * v * tri.area);
        }
    }
    let gl = gauss_legendre(3);
    for (g, seg) in sp.segs.iter().enumerate() {
        let eps = geom.epsilon(seg.manifold);
        for (d, comp, k) in seg_dofs(sp, g) {
            for (l, ud) in sp.seg_u[g][comp].iter().enumerate() {
                let Some(ud) = ud else { continue };
                let v: f64 = gl.iter().map(|&(s, w)| w * seg_shape(sp, k, s).1 * legendre(s)[l]).sum();
                bd.add(*ud, d, eps * v);
            }
        }
    }
    for (j, cells) in sp.interface_cells.iter().enumerate() {
        let f = &geom.interfaces[j];
        let eps_hat = geom.epsilon(f.upper);
        match cells {
            InterfaceCells::Side(facets) => {
                for fc in facets {
                    let tri = &sp.tris[fc.tri];
                    let seg = &sp.segs[fc.cell];
                    for (d, row, k) in tri_dofs(sp, fc.tri) {
                        for (l, ud) in sp.seg_u[fc.cell][row].iter().enumerate() {
                            let Some(ud) = ud else { continue };
                            let v: f64 = gl
                                .iter()
                                .map(|&(s, w)| w * dot(tri.bdm.eval(k, seg.point(s)), f.normal) * legendre(s)[l])
                                .sum();
                            bd.add(*ud, d, -eps_hat * v * seg.length);
                        }
                    }
                }
            }
            InterfaceCells::End { cell, end } => {
                let ud = sp.point_u[f.lower].expect("point displacement");
                let sign = if *end == 1 { 1.0 } else { -1.0 };
                for (d, comp, k) in seg_dofs(sp, *cell) {
                    bd.add(ud[comp], d, -eps_hat * sign * seg_shape(sp, k, *end as f64).0);
                }
            }
        }
    }
    (bd.to_csc(), bs.to_csc())
}

/// Right-hand side `(G, F)`.
pub fn assemble_rhs(geom: &MixedDimGeometry, mesh: &MixedMesh, sp: &SpaceSet, data: &ProblemData) -> (Vec<f64>, Vec<f64>) {
    let mut gs = vec![0.0; sp.n_sigma];
    let gl = gauss_legendre(5);
    for &m in &geom.by_dim[2] {
        for bf in &mesh.boundary_facets[m] {
            if geom.edge_conditions[bf.edge].kind != BoundaryKind::Displacement {
                continue;
            }
            let value = data.boundary_value(geom, bf.edge, m);
            let ti = sp.tri_range[m].start + bf.tri;
            let tri = &sp.tris[ti];
            let (p, q) = (tri.pts[(bf.local_edge + 1) % 3], tri.pts[(bf.local_edge + 2) % 3]);
            let len = crate::geometry::dist(p, q);
            let n = geom.edge_normal(bf.edge);
            let eps = geom.epsilon(m);
            for (d, row, k) in tri_dofs(sp, ti) {
                let v: f64 = gl
                    .iter()
                    .map(|&(s, w)| {
                        let x = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
                        w * value.eval(x)[row] * dot(tri.bdm.eval(k, x), n)
                    })
                    .sum();
                gs[d] += eps * v * len;
            }
        }
    }
    for &m in &geom.by_dim[1] {
        let Shape::Segment { ends, .. } = &geom.manifold(m).shape else { continue };
        let range = sp.seg_range[m].clone();
        for (e, end) in ends.iter().enumerate() {
            let SegmentEnd::Boundary(edge) = *end else { continue };
            if geom.edge_conditions[edge].kind != BoundaryKind::Displacement {
                continue;
            }
            let g = if e == 0 { range.start } else { range.end - 1 };
            let x = if e == 0 { sp.segs[g].a } else { sp.segs[g].b };
            let value = data.boundary_value(geom, edge, m).eval(x);
            let sign = if e == 1 { 1.0 } else { -1.0 };
            for (d, comp, k) in seg_dofs(sp, g) {
                gs[d] += geom.epsilon(m) * sign * value[comp] * seg_shape(sp, k, e as f64).0;
            }
        }
    }

    let mut fu = vec![0.0; sp.n_u];
    let rule = triangle_rule(6);
    for (ti, tri) in sp.tris.iter().enumerate() {
        let e2 = geom.epsilon(tri.manifold).powi(2);
        let f = &data.f[tri.manifold];
        for (l, w) in &rule {
            let v = f.eval(tri.point(*l));
            for comp in 0..2 {
                fu[sp.tri_u[ti][comp]] += e2 * w * tri.area * v[comp];
            }
        }
    }
    let gl6 = gauss_legendre(6);
    for (g, seg) in sp.segs.iter().enumerate() {
        let e2 = geom.epsilon(seg.manifold).powi(2);
        let f = &data.f[seg.manifold];
        for &(s, w) in &gl6 {
            let v = f.eval(seg.point(s));
            let l = legendre(s);
            for comp in 0..2 {
                for (k, ud) in sp.seg_u[g][comp].iter().enumerate() {
                    if let Some(ud) = ud {
                        fu[*ud] += e2 * w * seg.length * v[comp] * l[k];
                    }
                }
            }
        }
    }
    for &p in &geom.by_dim[0] {
        let Shape::Point(x) = geom.manifold(p).shape else { continue };
        let e2 = geom.epsilon(p).powi(2);
        let v = data.f[p].eval(x);
        let ud = sp.point_u[p].expect("point displacement");
        fu[ud[0]] += e2 * v[0];
        fu[ud[1]] += e2 * v[1];
    }
    (gs, fu)
}

/// Assemble the full system.
pub fn assemble(
    geom: &MixedDimGeometry,
    mesh: &MixedMesh,
    sp: &SpaceSet,
    law: &MaterialLaw,
    data: &ProblemData,
) -> Result<SaddleSystem> {
    law.check(geom)?;
    if data.f.len() != geom.manifolds.len() || data.g.len() != geom.manifolds.len() {
        return Err(Error::Input("load and boundary data do not match the geometry".into()));
    }
    let a = assemble_a(geom, sp, law);
    let (b_div, b_skw) = assemble_b(geom, sp);
    let (rhs_sigma, rhs_u) = assemble_rhs(geom, mesh, sp, data);
    Ok(SaddleSystem {
        a,
        b_div,
        b_skw,
        rhs_sigma,
        rhs_u,
        n_sigma: sp.n_sigma,
        n_u: sp.n_u,
        n_r: sp.n_r,
    })
}

/// Plain stress mass matrix: bulk and inclusion `L2` plus the interface trace term.
pub fn stress_mass(geom: &MixedDimGeometry, sp: &SpaceSet) -> CscMatrix {
    let n_if = geom.interfaces.len();
    let law = MaterialLaw {
        mu: vec![0.5; geom.manifolds.len()],
        lambda: vec![0.0; geom.manifolds.len()],
        mu_perp: vec![0.5; n_if],
        lambda_perp: vec![0.0; n_if],
    };
    assemble_a(geom, sp, &law)
}

/// Diagonal of the displacement mass matrix with weight `w(i)` per manifold
/// (the Legendre basis is orthogonal on every cell).
pub fn displacement_mass_diag(geom: &MixedDimGeometry, sp: &SpaceSet, w: &dyn Fn(usize) -> f64) -> Vec<f64> {
    let mut m = vec![0.0; sp.n_u];
    for (ti, tri) in sp.tris.iter().enumerate() {
        for comp in 0..2 {
            m[sp.tri_u[ti][comp]] = w(tri.manifold) * tri.area;
        }
    }
    for (g, seg) in sp.segs.iter().enumerate() {
        for comp in 0..2 {
            for (k, ud) in sp.seg_u[g][comp].iter().enumerate() {
                if let Some(ud) = ud {
                    m[*ud] = w(seg.manifold) * seg.length * if k == 0 { 1.0 } else { 1.0 / 3.0 };
                }
            }
        }
    }
    for &p in &geom.by_dim[0] {
        if let Some(ud) = sp.point_u[p] {
            m[ud[0]] = w(p);
            m[ud[1]] = w(p);
        }
    }
    m
}

/// Diagonal of the rotation mass matrix with weight `w(i)` per manifold.
pub fn rotation_mass_diag(sp: &SpaceSet, w: &dyn Fn(usize) -> f64) -> Vec<f64> {
    sp.tris.iter().map(|t| w(t.manifold) * t.area).collect()
}
