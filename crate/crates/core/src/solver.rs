//! Linear solve, weighted norms, stress post-processing and VTK export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::assembly::SaddleSystem;
use crate::elements::{Mat2, SpaceSet};
use crate::error::{Error, Result};
use crate::geometry::{dot, MixedDimGeometry, Point, Shape};
use crate::mdops::{self, Weighting};
use crate::quadrature::{gauss_legendre, triangle_rule};
use crate::sparse::{saddle_order, SparseLu};

/// Relative residual accepted without flagging a solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Discrete solution with solve metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFields {
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    /// Relative algebraic residual `|K x - b| / |b|`.
    pub residual: f64,
    /// Residual above [`RESIDUAL_TOL`].
    pub flagged: bool,
    pub factor_nnz: usize,
}

/// Factor and solve the saddle-point system.
pub fn solve(sys: &SaddleSystem) -> Result<SolutionFields> {
    let k = sys.matrix();
    let b = sys.rhs();
    let [s, u, r] = sys.blocks();
    if b.iter().all(|&v| v == 0.0) {
        return Ok(SolutionFields {
            sigma: vec![0.0; s.len()],
            u: vec![0.0; u.len()],
            r: vec![0.0; r.len()],
            residual: 0.0,
            flagged: false,
            factor_nnz: 0,
        });
    }
    let lu = SparseLu::factor_with_order(&k, &saddle_order(&k, sys.n_sigma)).map_err(|e| match e {
        Error::Singular(m) => Error::Singular(format!(
            "{m}; check that every bulk region touches a displacement boundary edge"
        )),
        other => other,
    })?;
    let (x, residual) = lu.solve_refined(&k, &b, 1e-14, 3);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular(
            "non-finite solution; check that every bulk region touches a displacement boundary edge".into(),
        ));
    }
    let flagged = residual > RESIDUAL_TOL;
    if flagged {
        log::warn!("relative residual {residual:.2e} exceeds {RESIDUAL_TOL:e}");
    }
    log::debug!("solved {} unknowns, {} factor entries, residual {residual:.2e}", k.ncols, lu.nnz());
    Ok(SolutionFields {
        sigma: x[s].to_vec(),
        u: x[u].to_vec(),
        r: x[r].to_vec(),
        residual,
        flagged,
        factor_nnz: lu.nnz(),
    })
}

/// Reference fields for error norms. `toward` is a point inside the cell
/// being integrated, used to pick the side of a discontinuity.
pub trait ExactFields {
    fn sigma_bulk(&self, manifold: usize, x: Point, toward: Point) -> Mat2;
    fn sigma_inclusion(&self, manifold: usize, x: Point) -> Point;
    /// Weighted divergence `D . eps sigma`.
    fn div(&self, manifold: usize, x: Point) -> Point;
    fn u(&self, manifold: usize, x: Point) -> Point;
    fn r(&self, manifold: usize, x: Point) -> f64;
}

/// The zero field; errors against it are norms.
pub struct Zero;

impl ExactFields for Zero {
    fn sigma_bulk(&self, _: usize, _: Point, _: Point) -> Mat2 {
        [[0.0; 2]; 2]
    }
    fn sigma_inclusion(&self, _: usize, _: Point) -> Point {
        [0.0; 2]
    }
    fn div(&self, _: usize, _: Point) -> Point {
        [0.0; 2]
    }
    fn u(&self, _: usize, _: Point) -> Point {
        [0.0; 2]
    }
    fn r(&self, _: usize, _: Point) -> f64 {
        0.0
    }
}

/// Squared contributions to the stress norm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StressParts {
    pub bulk: f64,
    pub inclusion: f64,
    pub interface: f64,
    pub div_bulk: f64,
    pub div_inclusion: f64,
    pub div_point: f64,
}

impl StressParts {
    pub fn total(&self) -> f64 {
        (self.bulk + self.inclusion + self.interface + self.div_bulk + self.div_inclusion + self.div_point).sqrt()
    }

    /// Part living on 1-manifolds: inclusion stress and its divergence term.
    pub fn d1(&self) -> f64 {
        (self.inclusion + self.div_inclusion).sqrt()
    }

    /// Part living on 2-manifolds and their interfaces.
    pub fn d2(&self) -> f64 {
        (self.bulk + self.interface + self.div_bulk).sqrt()
    }
}

/// Weighted norms `(|sigma|_Sigma, |u|_U, |r|_R)` with the per-dimension stress split.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Norms {
    pub sigma: f64,
    pub u: f64,
    pub r: f64,
    pub sigma_d1: f64,
    pub sigma_d2: f64,
    pub parts: StressParts,
}

fn sq(v: Point) -> f64 {
    v[0] * v[0] + v[1] * v[1]
}

fn diff(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Stress error parts of `reference - sigma_h`.
pub fn stress_parts(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64], reference: &dyn ExactFields) -> Result<StressParts> {
    let mut p = StressParts::default();
    let rule = triangle_rule(6);
    for (t, tri) in sp.tris.iter().enumerate() {
        let m = tri.manifold;
        let c = tri.point([1.0 / 3.0; 3]);
        let dh = mdops::div_tri(geom, sp, sigma, t, Weighting::Epsilon);
        for (l, w) in &rule {
            let x = tri.point(*l);
            let e = reference.sigma_bulk(m, x, c);
            let h = sp.stress_tri(sigma, t, x);
            p.bulk += w * tri.area * (sq(diff(e[0], h[0])) + sq(diff(e[1], h[1])));
            p.div_bulk += w * tri.area * sq(diff(reference.div(m, x), dh));
        }
    }
    let gl = gauss_legendre(6);
    for (g, seg) in sp.segs.iter().enumerate() {
        let m = seg.manifold;
        let emax = geom.epsilon_max(m)?;
        for &(s, w) in &gl {
            let x = seg.point(s);
            p.inclusion += w * seg.length * sq(diff(reference.sigma_inclusion(m, x), sp.stress_seg(sigma, g, s)));
            let dh = mdops::div_seg_at(geom, sp, sigma, g, s, Weighting::Epsilon);
            p.div_inclusion += w * seg.length * sq(diff(reference.div(m, x), dh)) / (emax * emax);
        }
    }
    for (j, ic) in sp.interface_cells.iter().enumerate() {
        let f = &geom.interfaces[j];
        match ic {
            crate::elements::InterfaceCells::Side(facets) => {
                for fc in facets {
                    let seg = &sp.segs[fc.cell];
                    let c = sp.tris[fc.tri].point([1.0 / 3.0; 3]);
                    for &(s, w) in &gl {
                        let x = seg.point(s);
                        let e = reference.sigma_bulk(f.upper, x, c);
                        let te = [dot(e[0], f.normal), dot(e[1], f.normal)];
                        let th = mdops::side_traction(geom, sp, sigma, j, fc.tri, x);
                        p.interface += w * seg.length * sq(diff(te, th));
                    }
                }
            }
            crate::elements::InterfaceCells::End { cell, end } => {
                let seg = &sp.segs[*cell];
                let x = if *end == 1 { seg.b } else { seg.a };
                let sign = if *end == 1 { 1.0 } else { -1.0 };
                let e = reference.sigma_inclusion(f.upper, x);
                let th = mdops::end_traction(sp, sigma, *cell, *end);
                p.interface += sq(diff([sign * e[0], sign * e[1]], th));
            }
        }
    }
    for &pt in &geom.by_dim[0] {
        let Shape::Point(x) = geom.manifold(pt).shape else { continue };
        let emax = geom.epsilon_max(pt)?;
        let dh = mdops::div_point(geom, sp, sigma, pt, Weighting::Epsilon);
        p.div_point += sq(diff(reference.div(pt, x), dh)) / (emax * emax);
    }
    Ok(p)
}

/// Weighted error norms of `(sigma, u, r)` against `reference`.
pub fn error_norms(
    geom: &MixedDimGeometry,
    sp: &SpaceSet,
    sigma: &[f64],
    u: &[f64],
    r: &[f64],
    reference: &dyn ExactFields,
) -> Result<Norms> {
    let parts = stress_parts(geom, sp, sigma, reference)?;
    let rule = triangle_rule(6);
    let mut eu = 0.0;
    let mut er = 0.0;
    for (t, tri) in sp.tris.iter().enumerate() {
        let m = tri.manifold;
        let eps = geom.epsilon(m);
        let uh = sp.u_tri(u, t);
        for (l, w) in &rule {
            let x = tri.point(*l);
            eu += w * tri.area * sq(diff(reference.u(m, x), uh));
            er += w * tri.area * (eps * (reference.r(m, x) - r[sp.tri_r[t]])).powi(2);
        }
    }
    let gl = gauss_legendre(6);
    for (g, seg) in sp.segs.iter().enumerate() {
        let emax = geom.epsilon_max(seg.manifold)?;
        for &(s, w) in &gl {
            let x = seg.point(s);
            eu += w * seg.length * emax * emax * sq(diff(reference.u(seg.manifold, x), sp.u_seg(u, g, s)));
        }
    }
    for &p in &geom.by_dim[0] {
        let Shape::Point(x) = geom.manifold(p).shape else { continue };
        let emax = geom.epsilon_max(p)?;
        eu += emax * emax * sq(diff(reference.u(p, x), sp.u_point(u, p)));
    }
    Ok(Norms {
        sigma: parts.total(),
        u: eu.sqrt(),
        r: er.sqrt(),
        sigma_d1: parts.d1(),
        sigma_d2: parts.d2(),
        parts,
    })
}

/// Weighted norms of discrete fields.
pub fn weighted_norms(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64], u: &[f64], r: &[f64]) -> Result<Norms> {
    error_norms(geom, sp, sigma, u, r, &Zero)
}

/// Physical stresses from the scaled stress: `(eps^-1 sigma, eps sigma)` coefficient vectors.
pub fn postprocess_stress(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut eps = vec![1.0; sp.n_sigma];
    for (g, seg) in sp.segs.iter().enumerate() {
        let e = geom.epsilon(seg.manifold);
        for comp in sp.seg_sigma[g] {
            for d in comp.into_iter().flatten() {
                eps[d] = e;
            }
        }
    }
    let avg = sigma.iter().zip(&eps).map(|(s, e)| s / e).collect();
    let int = sigma.iter().zip(&eps).map(|(s, e)| s * e).collect();
    (avg, int)
}

/// Write `<prefix>_d<dim>.vtk` for every dimension present; returns the paths.
pub fn write_vtk(prefix: &Path, geom: &MixedDimGeometry, sp: &SpaceSet, fields: &SolutionFields) -> Result<Vec<PathBuf>> {
    let (avg, _) = postprocess_stress(geom, sp, &fields.sigma);
    let mut out = Vec::new();
    let name = |d: usize| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(format!("_d{d}.vtk"));
        PathBuf::from(p)
    };
    let fmt = |v: f64| format!("{v:e}");
    // d = 2
    if !sp.tris.is_empty() {
        let mut s = vtk_header("bulk");
        let _ = writeln!(s, "POINTS {} double", 3 * sp.tris.len());
        for t in &sp.tris {
            for p in t.pts {
                let _ = writeln!(s, "{} {} 0", fmt(p[0]), fmt(p[1]));
            }
        }
        let n = sp.tris.len();
        let _ = writeln!(s, "CELLS {n} {}", 4 * n);
        for t in 0..n {
            let _ = writeln!(s, "3 {} {} {}", 3 * t, 3 * t + 1, 3 * t + 2);
        }
        let _ = writeln!(s, "CELL_TYPES {n}");
        for _ in 0..n {
            let _ = writeln!(s, "5");
        }
        let _ = writeln!(s, "CELL_DATA {n}");
        let _ = writeln!(s, "VECTORS u double");
        for t in 0..n {
            let u = sp.u_tri(&fields.u, t);
            let _ = writeln!(s, "{} {} 0", fmt(u[0]), fmt(u[1]));
        }
        let _ = writeln!(s, "TENSORS sigma_avg double");
        for (t, tri) in sp.tris.iter().enumerate() {
            let v = sp.stress_tri(&avg, t, tri.point([1.0 / 3.0; 3]));
            let _ = writeln!(s, "{} {} 0\n{} {} 0\n0 0 0", fmt(v[0][0]), fmt(v[0][1]), fmt(v[1][0]), fmt(v[1][1]));
        }
        let _ = writeln!(s, "SCALARS r double 1\nLOOKUP_TABLE default");
        for t in 0..n {
            let _ = writeln!(s, "{}", fmt(fields.r[sp.tri_r[t]]));
        }
        out.push((name(2), s));
    }
    if !sp.segs.is_empty() {
        let mut s = vtk_header("inclusions");
        let n = sp.segs.len();
        let _ = writeln!(s, "POINTS {} double", 2 * n);
        for c in &sp.segs {
            let _ = writeln!(s, "{} {} 0\n{} {} 0", fmt(c.a[0]), fmt(c.a[1]), fmt(c.b[0]), fmt(c.b[1]));
        }
        let _ = writeln!(s, "CELLS {n} {}", 3 * n);
        for g in 0..n {
            let _ = writeln!(s, "2 {} {}", 2 * g, 2 * g + 1);
        }
        let _ = writeln!(s, "CELL_TYPES {n}");
        for _ in 0..n {
            let _ = writeln!(s, "3");
        }
        let _ = writeln!(s, "CELL_DATA {n}");
        let _ = writeln!(s, "VECTORS u double");
        for g in 0..n {
            let u = sp.u_seg(&fields.u, g, 0.5);
            let _ = writeln!(s, "{} {} 0", fmt(u[0]), fmt(u[1]));
        }
        let _ = writeln!(s, "TENSORS sigma_avg double");
        for (g, c) in sp.segs.iter().enumerate() {
            // tangential column as the tensor sigma_s (x) t
            let v = sp.stress_seg(&avg, g, 0.5);
            let t = c.tangent;
            let _ = writeln!(
                s,
                "{} {} 0\n{} {} 0\n0 0 0",
                fmt(v[0] * t[0]),
                fmt(v[0] * t[1]),
                fmt(v[1] * t[0]),
                fmt(v[1] * t[1])
            );
        }
        out.push((name(1), s));
    }
    if !geom.by_dim[0].is_empty() {
        let mut s = vtk_header("points");
        let pts: Vec<(usize, Point)> = geom.by_dim[0]
            .iter()
            .filter_map(|&p| match geom.manifold(p).shape {
                Shape::Point(x) => Some((p, x)),
                _ => None,
            })
            .collect();
        let n = pts.len();
        let _ = writeln!(s, "POINTS {n} double");
        for (_, x) in &pts {
            let _ = writeln!(s, "{} {} 0", fmt(x[0]), fmt(x[1]));
        }
        let _ = writeln!(s, "CELLS {n} {}", 2 * n);
        for k in 0..n {
            let _ = writeln!(s, "1 {k}");
        }
        let _ = writeln!(s, "CELL_TYPES {n}");
        for _ in 0..n {
            let _ = writeln!(s, "1");
        }
        let _ = writeln!(s, "CELL_DATA {n}");
        let _ = writeln!(s, "VECTORS u double");
        for (p, _) in &pts {
            let u = sp.u_point(&fields.u, *p);
            let _ = writeln!(s, "{} {} 0", fmt(u[0]), fmt(u[1]));
        }
        out.push((name(0), s));
    }
    let mut paths = Vec::new();
    for (path, text) in out {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn vtk_header(title: &str) -> String {
    format!("# vtk DataFile Version 3.0\nmdelast {title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
}
