//! Verification harness: manufactured solutions, convergence studies and
//! the discrete property checks (conservation, weak symmetry, complex
//! property, space conditions, inf-sup constant).

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::assembly::{self, displacement_mass_diag, rotation_mass_diag, stress_mass, MaterialLaw, ProblemData, SaddleSystem};
use crate::elements::{build_spaces, legendre, FamilyChoice, Mat2, SpaceSet, StressField};
use crate::error::{Error, Result};
use crate::expr::{Expr, Var, VecExpr};
use crate::geometry::{decompose, dot, GeometryInput, MixedDimGeometry, Point, Shape};
use crate::mdops::{self, Weighting};
use crate::meshing::{build_mesh, MixedMesh};
use crate::quadrature::{gauss_legendre, triangle_rule};
use crate::solver::{self, error_norms, ExactFields, Norms, SolutionFields};
use crate::sparse::{saddle_order, CscMatrix, SparseLu, Triplets};

/// 64-bit linear congruential generator `x <- a x + c (mod 2^64)` with
/// Knuth's MMIX constants; outputs use the top 53 bits.
#[derive(Debug, Clone)]
pub struct Lcg(u64);

impl Lcg {
    pub const A: u64 = 6_364_136_223_846_793_005;
    pub const C: u64 = 1_442_695_040_888_963_407;

    pub fn new(seed: u64) -> Self {
        Lcg(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(Self::A).wrapping_add(Self::C);
        self.0
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Identifiers of the manufactured cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    /// Unit square without inclusions, smooth trigonometric displacement.
    Mms1,
    /// Unit square with a full-width inclusion at `y = 1/2` and a displacement jump across it.
    Mms2,
    /// Two crossing inclusions; reference from a twice refined solve.
    Mms3,
    /// Full-width inclusion with constant stress and affine displacement.
    Affine,
}

impl std::str::FromStr for CaseId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mms-1" | "mms1" => Ok(CaseId::Mms1),
            "mms-2" | "mms2" => Ok(CaseId::Mms2),
            "mms-3" | "mms3" => Ok(CaseId::Mms3),
            "affine" => Ok(CaseId::Affine),
            _ => Err(Error::Input(format!("unknown case `{s}` (expected MMS-1, MMS-2, MMS-3 or affine)"))),
        }
    }
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CaseId::Mms1 => "MMS-1",
            CaseId::Mms2 => "MMS-2",
            CaseId::Mms3 => "MMS-3",
            CaseId::Affine => "affine",
        })
    }
}

/// Lame and interface parameters shared by all manifolds of a case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lame {
    pub mu: f64,
    pub lambda: f64,
    pub mu_perp: f64,
    pub lambda_perp: f64,
}

impl Default for Lame {
    fn default() -> Self {
        Lame {
            mu: 1.0,
            lambda: 1.0,
            mu_perp: 2.0,
            lambda_perp: 1.0,
        }
    }
}

impl Lame {
    pub fn law(&self, geom: &MixedDimGeometry) -> Result<MaterialLaw> {
        MaterialLaw::uniform(geom, self.mu, self.lambda, self.mu_perp, self.lambda_perp)
    }
}

/// Symbolic exact solution, per manifold (entries of other dimensions are unused).
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub u: Vec<VecExpr>,
    /// Stress rows on 2-manifolds.
    pub sigma: Vec<[VecExpr; 2]>,
    /// Tangential stress column on 1-manifolds.
    pub sigma_s: Vec<VecExpr>,
    pub r: Vec<Expr>,
    /// `D . eps sigma`, equal to `eps^2 f`.
    pub div: Vec<VecExpr>,
}

impl ExactFields for ExactSolution {
    fn sigma_bulk(&self, m: usize, x: Point, _: Point) -> Mat2 {
        [self.sigma[m][0].eval(x), self.sigma[m][1].eval(x)]
    }
    fn sigma_inclusion(&self, m: usize, x: Point) -> Point {
        self.sigma_s[m].eval(x)
    }
    fn div(&self, m: usize, x: Point) -> Point {
        self.div[m].eval(x)
    }
    fn u(&self, m: usize, x: Point) -> Point {
        self.u[m].eval(x)
    }
    fn r(&self, m: usize, x: Point) -> f64 {
        self.r[m].eval_at(x)
    }
}

impl StressField for ExactSolution {
    fn bulk(&self, m: usize, x: Point) -> Mat2 {
        [self.sigma[m][0].eval(x), self.sigma[m][1].eval(x)]
    }
    fn inclusion(&self, m: usize, x: Point) -> Point {
        self.sigma_s[m].eval(x)
    }
}

/// A boundary value problem with (optionally) known solution.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub id: CaseId,
    pub input: GeometryInput,
    pub geometry: MixedDimGeometry,
    pub lame: Lame,
    pub data: ProblemData,
    pub exact: Option<ExactSolution>,
    /// Coarsest mesh size of convergence studies.
    pub h0: f64,
}

fn c(v: f64) -> Expr {
    Expr::constant(v)
}

/// Rows of `C sym grad u` for the isotropic law.
pub fn hooke(l: &Lame, u: &VecExpr) -> [VecExpr; 2] {
    let (ux, uy) = (&u.0[0], &u.0[1]);
    let div = ux.dx() + uy.dy();
    let shear = l.mu * (ux.dy() + uy.dx());
    [
        VecExpr::new(2.0 * l.mu * ux.dx() + l.lambda * div.clone(), shear.clone()),
        VecExpr::new(shear, 2.0 * l.mu * uy.dy() + l.lambda * div),
    ]
}

/// Row-wise divergence.
pub fn row_div(s: &[VecExpr; 2]) -> VecExpr {
    VecExpr::new(s[0].0[0].dx() + s[0].0[1].dy(), s[1].0[0].dx() + s[1].0[1].dy())
}

/// Rotation `(d_y u_1 - d_x u_2) / 2`.
pub fn rotation(u: &VecExpr) -> Expr {
    0.5 * (u.0[0].dy() - u.0[1].dx())
}

fn at_y(v: &VecExpr, y0: f64) -> VecExpr {
    v.substitute(Var::Y, &c(y0))
}

fn vadd(a: &VecExpr, b: &VecExpr) -> VecExpr {
    VecExpr::new(a.0[0].clone() + b.0[0].clone(), a.0[1].clone() + b.0[1].clone())
}

fn vscale(s: &Expr, a: &VecExpr) -> VecExpr {
    VecExpr::new(s.clone() * a.0[0].clone(), s.clone() * a.0[1].clone())
}

/// Traction `sigma n` for a constant normal.
fn traction(s: &[VecExpr; 2], n: Point) -> VecExpr {
    VecExpr::new(
        n[0] * s[0].0[0].clone() + n[1] * s[0].0[1].clone(),
        n[0] * s[1].0[0].clone() + n[1] * s[1].0[1].clone(),
    )
}

/// Interface compliance applied symbolically.
fn a_perp(l: &Lame, t: &VecExpr, n: Point) -> VecExpr {
    let k = l.lambda_perp / (2.0 * l.mu_perp + l.lambda_perp);
    let tn = n[0] * t.0[0].clone() + n[1] * t.0[1].clone();
    VecExpr::new(
        (t.0[0].clone() - k * n[0] * tn.clone()) / (2.0 * l.mu_perp),
        (t.0[1].clone() - k * n[1] * tn) / (2.0 * l.mu_perp),
    )
}

/// Interface stiffness (inverse of [`a_perp`]).
fn c_perp(l: &Lame, v: &VecExpr, n: Point) -> VecExpr {
    let vn = n[0] * v.0[0].clone() + n[1] * v.0[1].clone();
    VecExpr::new(
        2.0 * l.mu_perp * v.0[0].clone() + l.lambda_perp * n[0] * vn.clone(),
        2.0 * l.mu_perp * v.0[1].clone() + l.lambda_perp * n[1] * vn,
    )
}

/// Tangential column of the inclusion stress `eps C d_t u` for tangent `t`.
fn inclusion_stress(l: &Lame, eps: f64, u: &VecExpr, t: Point) -> VecExpr {
    let du = VecExpr::new(
        t[0] * u.0[0].dx() + t[1] * u.0[0].dy(),
        t[0] * u.0[1].dx() + t[1] * u.0[1].dy(),
    );
    let dt = t[0] * du.0[0].clone() + t[1] * du.0[1].clone();
    let k = l.lambda * dt;
    VecExpr::new(
        eps * (2.0 * l.mu * du.0[0].clone() + t[0] * k.clone()),
        eps * (2.0 * l.mu * du.0[1].clone() + t[1] * k),
    )
}

fn tangential_derivative(v: &VecExpr, t: Point) -> VecExpr {
    VecExpr::new(
        t[0] * v.0[0].dx() + t[1] * v.0[0].dy(),
        t[0] * v.0[1].dx() + t[1] * v.0[1].dy(),
    )
}

fn pi() -> Expr {
    c(std::f64::consts::PI)
}

impl ManufacturedCase {
    /// Build a case; `epsilon` is the inclusion aperture (ignored by MMS-1).
    pub fn new(id: CaseId, epsilon: f64) -> Result<Self> {
        Self::with_lame(id, epsilon, Lame::default())
    }

    pub fn with_lame(id: CaseId, epsilon: f64, lame: Lame) -> Result<Self> {
        match id {
            CaseId::Mms1 => Self::mms1(lame),
            CaseId::Mms2 => Self::mms2(epsilon, lame),
            CaseId::Mms3 => Self::mms3(epsilon, lame),
            CaseId::Affine => Self::affine(epsilon, lame),
        }
    }

    fn bulk_only(geometry: &MixedDimGeometry, u: &VecExpr, l: &Lame) -> ExactSolution {
        let n = geometry.manifolds.len();
        let s = hooke(l, u);
        ExactSolution {
            u: vec![u.clone(); n],
            sigma: vec![s.clone(); n],
            sigma_s: vec![VecExpr::zero(); n],
            r: vec![rotation(u); n],
            div: vec![row_div(&s); n],
        }
    }

    fn mms1(lame: Lame) -> Result<Self> {
        let input = GeometryInput::unit_square();
        let geometry = decompose(&input)?;
        let (x, y) = (Expr::x(), Expr::y());
        let u = VecExpr::new(
            (pi() * x.clone()).sin() * (pi() * y.clone()).sin() + 0.2 * x.clone() * y.clone(),
            0.5 * x.clone() * (pi() * y.clone()).cos() + x.clone() * x * y,
        );
        let exact = Self::bulk_only(&geometry, &u, &lame);
        let data = ProblemData {
            f: exact.div.clone(),
            g: exact.u.clone(),
        };
        Ok(ManufacturedCase {
            id: CaseId::Mms1,
            input,
            geometry,
            lame,
            data,
            exact: Some(exact),
            h0: 0.25,
        })
    }

    fn mms2(eps: f64, lame: Lame) -> Result<Self> {
        let input = GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], eps, eps * eps);
        let geometry = decompose(&input)?;
        let seg = geometry.by_dim[1][0];
        let bottom = geometry
            .locate_region([0.5, 0.25])
            .ok_or_else(|| Error::Geometry("lower half not found".into()))?;
        let top = geometry
            .locate_region([0.5, 0.75])
            .ok_or_else(|| Error::Geometry("upper half not found".into()))?;
        let (x, y) = (Expr::x(), Expr::y());
        let (e_y, m_y) = ([0.0, 1.0], [0.0, -1.0]);
        let ub = VecExpr::new(
            0.5 * (pi() * x.clone()).sin() * (pi() * y.clone()).cos() + 0.2 * x.clone() * y.clone(),
            0.3 * (pi() * x.clone()).cos() * (pi() * y.clone()).sin() + 0.1 * x.clone() * x.clone(),
        );
        let sb = hooke(&lame, &ub);
        // inclusion displacement from the interface law on the lower side
        let tb = at_y(&traction(&sb, e_y), 0.5);
        let u_s = vadd(&at_y(&ub, 0.5), &a_perp(&lame, &tb, e_y));
        // upper side: w + (y - 1/2) m(x) with m chosen to satisfy the interface law there
        let yh = y.clone() - 0.5;
        let q = VecExpr::new(0.3 * (pi() * x.clone()).cos(), 0.2 * (pi() * x.clone()).sin());
        let d = VecExpr::new(
            (0.5 * (pi() * x.clone()).sin() + 0.1) / lame.mu_perp,
            0.4 * (pi() * x.clone()).cos() / lame.mu_perp,
        );
        let w = vadd(&vadd(&ub, &vscale(&yh, &q)), &d);
        let t0 = at_y(&traction(&hooke(&lame, &w), e_y), 0.5);
        let rr = VecExpr::new(
            u_s.0[0].clone() - at_y(&w, 0.5).0[0].clone(),
            u_s.0[1].clone() - at_y(&w, 0.5).0[1].clone(),
        );
        let cr = c_perp(&lame, &rr, e_y);
        let m = VecExpr::new(
            -(cr.0[0].clone() + t0.0[0].clone()) / lame.mu,
            -(cr.0[1].clone() + t0.0[1].clone()) / (2.0 * lame.mu + lame.lambda),
        );
        let ut = vadd(&w, &vscale(&yh, &m));
        let st = hooke(&lame, &ut);
        let sigma_s = inclusion_stress(&lame, eps, &u_s, [1.0, 0.0]);
        let jump = vadd(&at_y(&traction(&sb, e_y), 0.5), &at_y(&traction(&st, m_y), 0.5));
        let ds = tangential_derivative(&sigma_s, [1.0, 0.0]);
        let div_s = VecExpr::new(
            eps * ds.0[0].clone() - jump.0[0].clone(),
            eps * ds.0[1].clone() - jump.0[1].clone(),
        );
        let n = geometry.manifolds.len();
        let mut exact = ExactSolution {
            u: vec![VecExpr::zero(); n],
            sigma: vec![[VecExpr::zero(), VecExpr::zero()]; n],
            sigma_s: vec![VecExpr::zero(); n],
            r: vec![Expr::zero(); n],
            div: vec![VecExpr::zero(); n],
        };
        for (i, uu) in [(bottom, &ub), (top, &ut)] {
            let s = hooke(&lame, uu);
            exact.u[i] = uu.clone();
            exact.r[i] = rotation(uu);
            exact.div[i] = row_div(&s);
            exact.sigma[i] = s;
        }
        exact.u[seg] = u_s;
        exact.sigma_s[seg] = sigma_s;
        exact.div[seg] = div_s.clone();
        let mut f = exact.div.clone();
        f[seg] = vscale(&c(1.0 / (eps * eps)), &div_s);
        let data = ProblemData {
            f,
            g: exact.u.clone(),
        };
        Ok(ManufacturedCase {
            id: CaseId::Mms2,
            input,
            geometry,
            lame,
            data,
            exact: Some(exact),
            h0: 0.25,
        })
    }

    fn mms3(eps: f64, lame: Lame) -> Result<Self> {
        let input = GeometryInput::unit_square()
            .with_segment([0.2, 0.3], [0.8, 0.7], eps, eps * eps)
            .with_segment([0.2, 0.7], [0.8, 0.3], eps, eps * eps);
        let geometry = decompose(&input)?;
        let (x, y) = (Expr::x(), Expr::y());
        let mut data = ProblemData::zero(&geometry);
        for &b in &geometry.by_dim[2] {
            data.f[b] = VecExpr::new(
                -(pi() * x.clone()).sin() * (pi() * y.clone()).sin(),
                -0.5 * x.clone() * y.clone(),
            );
            data.g[b] = VecExpr::new(0.1 * y.clone(), 0.1 * x.clone() * x.clone());
        }
        Ok(ManufacturedCase {
            id: CaseId::Mms3,
            input,
            geometry,
            lame,
            data,
            exact: None,
            h0: 0.25,
        })
    }

    fn affine(eps: f64, lame: Lame) -> Result<Self> {
        let input = GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], eps, eps * eps);
        let geometry = decompose(&input)?;
        let (mu, la) = (lame.mu, lame.lambda);
        // sigma = [[1, 0], [0, 0]] with zero traction on the inclusion line
        let e11 = 1.0 / (2.0 * mu + la - la * la / (2.0 * mu + la));
        let e22 = -la * e11 / (2.0 * mu + la);
        let omega = 0.3;
        let (x, y) = (Expr::x(), Expr::y());
        let u = VecExpr::new(
            e11 * x.clone() + omega * y.clone() + 0.1,
            e22 * y - omega * x - 0.2,
        );
        let mut exact = Self::bulk_only(&geometry, &u, &lame);
        let seg = geometry.by_dim[1][0];
        exact.sigma_s[seg] = inclusion_stress(&lame, eps, &u, [1.0, 0.0]);
        exact.div[seg] = VecExpr::zero();
        exact.sigma[seg] = [VecExpr::zero(), VecExpr::zero()];
        exact.r[seg] = Expr::zero();
        let data = ProblemData {
            f: vec![VecExpr::zero(); geometry.manifolds.len()],
            g: exact.u.clone(),
        };
        Ok(ManufacturedCase {
            id: CaseId::Affine,
            input,
            geometry,
            lame,
            data,
            exact: Some(exact),
            h0: 0.5,
        })
    }

    /// Largest residual of the strong equations at `samples` random points per
    /// manifold and interface, relative to the size of the terms.
    pub fn strong_form_residual(&self, samples: usize, seed: u64) -> Result<f64> {
        let Some(ex) = &self.exact else {
            return Err(Error::Input(format!("{} has no closed-form solution", self.id)));
        };
        let g = &self.geometry;
        let l = &self.lame;
        let mut rng = Lcg::new(seed);
        let mut worst: f64 = 0.0;
        let mut check = |lhs: f64, rhs: f64, scale: f64| {
            worst = worst.max((lhs - rhs).abs() / (1.0 + scale.abs()));
        };
        for m in &g.manifolds {
            match &m.shape {
                Shape::Region { .. } => {
                    let u = &ex.u[m.id];
                    let s = &ex.sigma[m.id];
                    let grad = [[u.0[0].dx(), u.0[0].dy()], [u.0[1].dx(), u.0[1].dy()]];
                    let div = row_div(s);
                    let mut n = 0;
                    while n < samples {
                        let p = [rng.next_f64(), rng.next_f64()];
                        if g.locate_region(p) != Some(m.id) {
                            continue;
                        }
                        n += 1;
                        let sv = [s[0].eval(p), s[1].eval(p)];
                        let a = assembly::compliance_bulk(l.mu, l.lambda, sv);
                        let r = ex.r[m.id].eval_at(p);
                        let omega = [[0.0, r], [-r, 0.0]];
                        for i in 0..2 {
                            for j in 0..2 {
                                let gij = grad[i][j].eval_at(p);
                                check(a[i][j] + omega[i][j], gij, gij);
                            }
                        }
                        check(sv[0][1], sv[1][0], sv[0][1]);
                        let dv = div.eval(p);
                        let dd = ex.div[m.id].eval(p);
                        check(dv[0], dd[0], dd[0]);
                        check(dv[1], dd[1], dd[1]);
                    }
                }
                Shape::Segment { a, b, .. } => {
                    let t = m.tangent().expect("tangent");
                    let eps = m.epsilon;
                    let du = tangential_derivative(&ex.u[m.id], t);
                    let ds = tangential_derivative(&ex.sigma_s[m.id], t);
                    for _ in 0..samples {
                        let s = rng.next_f64();
                        let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                        let ss = ex.sigma_s[m.id].eval(p);
                        let cs = assembly::compliance_inclusion(l.mu, l.lambda, ss, t);
                        let dv = du.eval(p);
                        check(cs[0], eps * dv[0], dv[0]);
                        check(cs[1], eps * dv[1], dv[1]);
                        let mut d = ds.eval(p);
                        d = [eps * d[0], eps * d[1]];
                        let u_low = ex.u[m.id].eval(p);
                        for &j in &g.hat_j[m.id] {
                            let f = &g.interfaces[j];
                            let n = f.normal;
                            let su = [ex.sigma[f.upper][0].eval(p), ex.sigma[f.upper][1].eval(p)];
                            let tr = [dot(su[0], n), dot(su[1], n)];
                            d = [d[0] - tr[0], d[1] - tr[1]];
                            let ap = assembly::interface_compliance(l.mu_perp, l.lambda_perp, tr, n);
                            let u_up = ex.u[f.upper].eval(p);
                            check(ap[0], u_low[0] - u_up[0], ap[0]);
                            check(ap[1], u_low[1] - u_up[1], ap[1]);
                        }
                        let dd = ex.div[m.id].eval(p);
                        check(d[0], dd[0], dd[0]);
                        check(d[1], dd[1], dd[1]);
                    }
                }
                Shape::Point(_) => {}
            }
        }
        Ok(worst)
    }

    /// Mesh of the coarsest level.
    pub fn mesh(&self) -> Result<MixedMesh> {
        build_mesh(&self.geometry, self.h0)
    }
}

/// One solve of a case on one mesh.
#[derive(Debug, Clone)]
pub struct LevelSolve {
    pub spaces: SpaceSet,
    pub system: SaddleSystem,
    pub solution: SolutionFields,
}

pub fn solve_on(
    geom: &MixedDimGeometry,
    mesh: &MixedMesh,
    family: FamilyChoice,
    law: &MaterialLaw,
    data: &ProblemData,
) -> Result<LevelSolve> {
    let spaces = build_spaces(geom, mesh, family)?;
    let system = assembly::assemble(geom, mesh, &spaces, law, data)?;
    let solution = solver::solve(&system)?;
    Ok(LevelSolve {
        spaces,
        system,
        solution,
    })
}

/// `L2` norm of `eps^2 f` over all manifolds (points by value).
pub fn weighted_load_norm(geom: &MixedDimGeometry, sp: &SpaceSet, data: &ProblemData) -> f64 {
    let rule = triangle_rule(6);
    let mut s = 0.0;
    for tri in &sp.tris {
        let e2 = geom.epsilon(tri.manifold).powi(2);
        for (l, w) in &rule {
            let v = data.f[tri.manifold].eval(tri.point(*l));
            s += w * tri.area * e2 * e2 * (v[0] * v[0] + v[1] * v[1]);
        }
    }
    let gl = gauss_legendre(6);
    for seg in &sp.segs {
        let e2 = geom.epsilon(seg.manifold).powi(2);
        for &(t, w) in &gl {
            let v = data.f[seg.manifold].eval(seg.point(t));
            s += w * seg.length * e2 * e2 * (v[0] * v[0] + v[1] * v[1]);
        }
    }
    for &p in &geom.by_dim[0] {
        if let Shape::Point(x) = geom.manifold(p).shape {
            let e2 = geom.epsilon(p).powi(2);
            let v = data.f[p].eval(x);
            s += e2 * e2 * (v[0] * v[0] + v[1] * v[1]);
        }
    }
    s.sqrt()
}

/// Largest local momentum residual `|(D . eps sigma_h - eps^2 f, v)|` over
/// the displacement basis functions, relative to `|eps^2 f|` (absolute when
/// the load vanishes). The divergence is evaluated from the stress field,
/// independently of the assembled matrix.
pub fn conservation_check(
    geom: &MixedDimGeometry,
    mesh: &MixedMesh,
    sp: &SpaceSet,
    sigma: &[f64],
    data: &ProblemData,
) -> f64 {
    let d = mdops::md_divergence(geom, sp, sigma, Weighting::Epsilon);
    let mass = displacement_mass_diag(geom, sp, &|_| 1.0);
    let (_, f) = assembly::assemble_rhs(geom, mesh, sp, data);
    let norm = weighted_load_norm(geom, sp, data);
    let scale = if norm > 0.0 { norm } else { 1.0 };
    d.iter()
        .zip(&mass)
        .zip(&f)
        .map(|((d, m), f)| (d * m - f).abs() / scale)
        .fold(0.0, f64::max)
}

/// Largest `|(skw eps sigma_h, s)|` over the rotation basis functions, by quadrature.
pub fn weak_symmetry_check(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64]) -> f64 {
    let rule = triangle_rule(4);
    sp.tris
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let eps = geom.epsilon(tri.manifold);
            let v: f64 = rule
                .iter()
                .map(|(l, w)| {
                    let s = sp.stress_tri(sigma, t, tri.point(*l));
                    w * tri.area * eps * (s[0][1] - s[1][0])
                })
                .sum();
            v.abs()
        })
        .fold(0.0, f64::max)
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelRow {
    pub level: usize,
    pub h: f64,
    pub errors: Norms,
    pub conservation: f64,
    pub symmetry: f64,
    pub dofs: usize,
}

/// Per-level errors and least-squares rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub case: CaseId,
    pub family: FamilyChoice,
    pub rows: Vec<LevelRow>,
    /// Errors are relative to the reference norm.
    pub relative: bool,
}

/// Least-squares slope of `log e` against `log h`.
pub fn ls_slope(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Least-squares rates of the rows `..=end` over the last three levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub sigma: f64,
    pub u: f64,
    pub r: f64,
    pub sigma_d1: f64,
    pub sigma_d2: f64,
}

impl RateTable {
    fn rates_upto(&self, end: usize) -> Option<Rates> {
        if end < 2 {
            return None;
        }
        let rows = &self.rows[end - 2..=end];
        let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let slope = |f: &dyn Fn(&Norms) -> f64| ls_slope(&h, &rows.iter().map(|r| f(&r.errors)).collect::<Vec<_>>());
        Some(Rates {
            sigma: slope(&|n| n.sigma),
            u: slope(&|n| n.u),
            r: slope(&|n| n.r),
            sigma_d1: slope(&|n| n.sigma_d1),
            sigma_d2: slope(&|n| n.sigma_d2),
        })
    }

    /// Rates over the last three levels.
    pub fn rates(&self) -> Rates {
        self.rates_upto(self.rows.len() - 1).expect("at least three levels")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,h,err_sigma,err_u,err_r,rate_sigma,rate_u,rate_r,err_sigma_d1,err_sigma_d2\n");
        for (k, row) in self.rows.iter().enumerate() {
            let e = &row.errors;
            let rates = self
                .rates_upto(k)
                .map(|r| format!("{:.6},{:.6},{:.6}", r.sigma, r.u, r.r))
                .unwrap_or_else(|| ",,".into());
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{},{:e},{:e}",
                row.level, row.h, e.sigma, e.u, e.r, rates, e.sigma_d1, e.sigma_d2
            );
        }
        s
    }
}

/// Run a convergence study over `levels` uniformly refined meshes.
pub fn convergence_study(case: &ManufacturedCase, family: FamilyChoice, levels: usize) -> Result<RateTable> {
    convergence_study_from(case, family, levels, case.mesh()?)
}

pub fn convergence_study_from(
    case: &ManufacturedCase,
    family: FamilyChoice,
    levels: usize,
    coarse: MixedMesh,
) -> Result<RateTable> {
    if levels < 3 {
        return Err(Error::Input(format!(
            "a convergence rate needs at least 3 levels, got {levels}"
        )));
    }
    let geom = &case.geometry;
    let law = case.lame.law(geom)?;
    if case.exact.is_some() {
        let res = case.strong_form_residual(20, 7)?;
        if res > 1e-10 {
            return Err(Error::Input(format!(
                "{} violates the strong equations (residual {res:.2e})",
                case.id
            )));
        }
    }
    let mut meshes = vec![coarse];
    let extra = if case.exact.is_some() { 0 } else { 2 };
    for _ in 1..levels + extra {
        let next = meshes.last().expect("mesh").refine(geom)?;
        meshes.push(next);
    }
    let reference: Option<(LevelSolve, &MixedMesh)> = if case.exact.is_none() {
        let fine = meshes.last().expect("mesh");
        Some((solve_on(geom, fine, family, &law, &case.data)?, fine))
    } else {
        None
    };
    let discrete_ref = reference
        .as_ref()
        .map(|(ls, fine)| DiscreteReference::new(geom, fine, &ls.spaces, &ls.solution, &case.data));
    let ref_norm = match &discrete_ref {
        Some(dr) => {
            let s = &dr.solution;
            let n = solver::weighted_norms(geom, dr.spaces, &s.sigma, &s.u, &s.r)?;
            Some(n)
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(levels);
    for (level, mesh) in meshes.iter().take(levels).enumerate() {
        let ls = solve_on(geom, mesh, family, &law, &case.data)?;
        let s = &ls.solution;
        let reference: &dyn ExactFields = match (&case.exact, &discrete_ref) {
            (Some(ex), _) => ex,
            (None, Some(dr)) => dr,
            _ => unreachable!("reference exists"),
        };
        let mut errors = error_norms(geom, &ls.spaces, &s.sigma, &s.u, &s.r, reference)?;
        if let Some(n) = &ref_norm {
            errors.sigma /= n.sigma;
            errors.u /= n.u;
            errors.r /= n.r;
            errors.sigma_d1 /= n.sigma_d1.max(f64::MIN_POSITIVE);
            errors.sigma_d2 /= n.sigma_d2;
        }
        let conservation = conservation_check(geom, mesh, &ls.spaces, &s.sigma, &case.data);
        let symmetry = weak_symmetry_check(geom, &ls.spaces, &s.sigma);
        log::info!(
            "{} {} level {level}: h = {:.4}, errors sigma {:.3e} u {:.3e} r {:.3e}",
            case.id,
            family.variant,
            mesh.h,
            errors.sigma,
            errors.u,
            errors.r
        );
        rows.push(LevelRow {
            level,
            h: mesh.h,
            errors,
            conservation,
            symmetry,
            dofs: ls.system.dim(),
        });
    }
    Ok(RateTable {
        case: case.id,
        family,
        rows,
        relative: ref_norm.is_some(),
    })
}

/// A discrete solution on a finer mesh used as reference, evaluated by point location.
pub struct DiscreteReference<'a> {
    geom: &'a MixedDimGeometry,
    pub spaces: &'a SpaceSet,
    pub solution: &'a SolutionFields,
    data: &'a ProblemData,
    grid: Grid,
}

struct Grid {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> DiscreteReference<'a> {
    pub fn new(
        geom: &'a MixedDimGeometry,
        _mesh: &MixedMesh,
        spaces: &'a SpaceSet,
        solution: &'a SolutionFields,
        data: &'a ProblemData,
    ) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for t in &spaces.tris {
            for p in t.pts {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        let n = (spaces.tris.len() as f64).sqrt().ceil().max(1.0) as usize;
        let cell = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / n as f64).max(f64::MIN_POSITIVE);
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (ti, t) in spaces.tris.iter().enumerate() {
            let (mut a, mut b) = ([usize::MAX; 2], [0usize; 2]);
            for p in t.pts {
                let i = ((p[0] - lo[0]) / cell).floor() as usize;
                let j = ((p[1] - lo[1]) / cell).floor() as usize;
                a = [a[0].min(i), a[1].min(j)];
                b = [b[0].max(i), b[1].max(j)];
            }
            for i in a[0]..=b[0].min(nx - 1) {
                for j in a[1]..=b[1].min(ny - 1) {
                    buckets[j * nx + i].push(ti);
                }
            }
        }
        DiscreteReference {
            geom,
            spaces,
            solution,
            data,
            grid: Grid {
                origin: lo,
                cell,
                nx,
                ny,
                buckets,
            },
        }
    }

    fn locate(&self, m: usize, x: Point) -> usize {
        let g = &self.grid;
        let i = (((x[0] - g.origin[0]) / g.cell).floor().max(0.0) as usize).min(g.nx - 1);
        let j = (((x[1] - g.origin[1]) / g.cell).floor().max(0.0) as usize).min(g.ny - 1);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &t in &g.buckets[j * g.nx + i] {
            let tri = &self.spaces.tris[t];
            if tri.manifold != m {
                continue;
            }
            let l = tri.bary(x);
            let inside = l.iter().copied().fold(f64::INFINITY, f64::min);
            if inside > best.0 {
                best = (inside, t);
            }
        }
        assert!(best.1 != usize::MAX, "point {x:?} not found in manifold {m}");
        best.1
    }

    fn locate_seg(&self, m: usize, x: Point) -> (usize, f64) {
        let range = self.spaces.seg_range[m].clone();
        let n = range.len();
        let first = &self.spaces.segs[range.start];
        let last = &self.spaces.segs[range.end - 1];
        let d = [last.b[0] - first.a[0], last.b[1] - first.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let s = (((x[0] - first.a[0]) * d[0] + (x[1] - first.a[1]) * d[1]) / len2).clamp(0.0, 1.0);
        let k = ((s * n as f64).floor() as usize).min(n - 1);
        let g = range.start + k;
        let cell = &self.spaces.segs[g];
        let local = ((x[0] - cell.a[0]) * cell.tangent[0] + (x[1] - cell.a[1]) * cell.tangent[1]) / cell.length;
        (g, local.clamp(0.0, 1.0))
    }
}

impl ExactFields for DiscreteReference<'_> {
    fn sigma_bulk(&self, m: usize, x: Point, toward: Point) -> Mat2 {
        let y = [x[0] + 1e-7 * (toward[0] - x[0]), x[1] + 1e-7 * (toward[1] - x[1])];
        let t = self.locate(m, y);
        self.spaces.stress_tri(&self.solution.sigma, t, x)
    }
    fn sigma_inclusion(&self, m: usize, x: Point) -> Point {
        let (g, s) = self.locate_seg(m, x);
        self.spaces.stress_seg(&self.solution.sigma, g, s)
    }
    fn div(&self, m: usize, x: Point) -> Point {
        let e2 = self.geom.epsilon(m).powi(2);
        let f = self.data.f[m].eval(x);
        [e2 * f[0], e2 * f[1]]
    }
    fn u(&self, m: usize, x: Point) -> Point {
        match self.geom.manifold(m).dim {
            2 => self.spaces.u_tri(&self.solution.u, self.locate(m, x)),
            1 => {
                let (g, s) = self.locate_seg(m, x);
                self.spaces.u_seg(&self.solution.u, g, s)
            }
            _ => self.spaces.u_point(&self.solution.u, m),
        }
    }
    fn r(&self, m: usize, x: Point) -> f64 {
        self.solution.r[self.spaces.tri_r[self.locate(m, x)]]
    }
}

/// Largest `|D . D x w_h| / |w_h|` over `trials` random potentials.
pub fn complex_check(geom: &MixedDimGeometry, sp: &SpaceSet, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = Lcg::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let w: Vec<f64> = (0..sp.n_w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let sigma = mdops::md_curl(geom, sp, &w)?;
        let res = divergence_l2(geom, sp, &sigma);
        let wn = potential_l2(sp, &w);
        if wn > 0.0 {
            worst = worst.max(res / wn);
        }
    }
    Ok(worst)
}

/// `L2` norm of the unweighted pointwise mixed-dimensional divergence.
pub fn divergence_l2(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64]) -> f64 {
    let mut s = 0.0;
    for t in 0..sp.n_tris() {
        let d = mdops::div_tri(geom, sp, sigma, t, Weighting::Unweighted);
        s += sp.tris[t].area * (d[0] * d[0] + d[1] * d[1]);
    }
    let gl = gauss_legendre(4);
    for (g, seg) in sp.segs.iter().enumerate() {
        for &(q, w) in &gl {
            let d = mdops::div_seg_at(geom, sp, sigma, g, q, Weighting::Unweighted);
            s += w * seg.length * (d[0] * d[0] + d[1] * d[1]);
        }
    }
    for &p in &geom.by_dim[0] {
        let d = mdops::div_point(geom, sp, sigma, p, Weighting::Unweighted);
        s += d[0] * d[0] + d[1] * d[1];
    }
    s.sqrt()
}

/// `L2` norm of a potential in `W_h`.
pub fn potential_l2(sp: &SpaceSet, w: &[f64]) -> f64 {
    let rule = triangle_rule(4);
    let mut s = 0.0;
    for (t, tri) in sp.tris.iter().enumerate() {
        for (l, q) in &rule {
            let (v, _) = sp.w_tri(w, t, *l);
            s += q * tri.area * (v[0] * v[0] + v[1] * v[1]);
        }
    }
    s.sqrt()
}

/// Outcome of the space-condition checks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpaceReport {
    /// Divergence containment: `D . tau` in `U_h` for every stress basis function.
    pub s2_divergence: f64,
    /// Normal traces of bulk stress basis functions on interface facets in the lower displacement space.
    pub s2_trace: f64,
    /// Curl containment: the interpolant of `D x w` equals `D x w` for every `W_h` basis function.
    pub s3a: f64,
}

/// Largest deviation of the sampled values `vals` (at Gauss points `gl`)
/// from their projection onto the first `k` Legendre polynomials, and the
/// largest sampled magnitude.
fn projection_residual(gl: &[(f64, f64)], vals: &[f64], k: usize) -> (f64, f64) {
    let mut coef = [0.0; 2];
    for (&(s, w), v) in gl.iter().zip(vals) {
        let l = legendre(s);
        for j in 0..k {
            coef[j] += w * v * l[j] * if j == 0 { 1.0 } else { 3.0 };
        }
    }
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let dev = gl
        .iter()
        .zip(vals)
        .map(|(&(s, _), v)| {
            let l = legendre(s);
            let p: f64 = (0..k).map(|j| coef[j] * l[j]).sum();
            (v - p).abs()
        })
        .fold(0.0, f64::max);
    (dev, scale)
}

fn ratio(dev: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        dev / scale
    } else {
        0.0
    }
}

/// Check the space conditions for every basis function.
pub fn space_checks(geom: &MixedDimGeometry, sp: &SpaceSet) -> Result<SpaceReport> {
    let mut rep = SpaceReport::default();
    let gl = gauss_legendre(5);
    let mut unit = vec![0.0; sp.n_sigma];
    // S2 on inclusion cells: every basis function touching the cell
    for g in 0..sp.segs.len() {
        let k = sp.seg_u[g][0].iter().filter(|d| d.is_some()).count();
        let mut dofs: Vec<usize> = sp.seg_sigma[g].iter().flatten().flatten().copied().collect();
        for &(_, fc) in &sp.cell_sides[g] {
            dofs.extend(sp.tri_sigma[fc.tri].iter().flatten().flatten().copied());
        }
        dofs.sort_unstable();
        dofs.dedup();
        // deviations are measured against the largest value over all basis functions of the cell
        let (mut div, mut tr) = ((0.0_f64, 0.0_f64), (0.0_f64, 0.0_f64));
        for d in dofs {
            unit[d] = 1.0;
            for comp in 0..2 {
                let vals: Vec<f64> = gl
                    .iter()
                    .map(|&(s, _)| mdops::div_seg_at(geom, sp, &unit, g, s, Weighting::Unweighted)[comp])
                    .collect();
                let (dev, scale) = projection_residual(&gl, &vals, k);
                div = (div.0.max(dev), div.1.max(scale));
            }
            for &(j, fc) in &sp.cell_sides[g] {
                let seg = &sp.segs[g];
                for comp in 0..2 {
                    let vals: Vec<f64> = gl
                        .iter()
                        .map(|&(s, _)| mdops::side_traction(geom, sp, &unit, j, fc.tri, seg.point(s))[comp])
                        .collect();
                    let (dev, scale) = projection_residual(&gl, &vals, k);
                    tr = (tr.0.max(dev), tr.1.max(scale));
                }
            }
            unit[d] = 0.0;
        }
        rep.s2_divergence = rep.s2_divergence.max(ratio(div.0, div.1));
        rep.s2_trace = rep.s2_trace.max(ratio(tr.0, tr.1));
    }
    // S2 on triangles: each basis function is affine and its divergence is the stored constant
    for (t, tri) in sp.tris.iter().enumerate() {
        let grads = tri.grad_bary();
        let centroid = tri.point([1.0 / 3.0; 3]);
        for row in 0..2 {
            for k in 0..6 {
                let Some(d) = sp.tri_sigma[t][row][k] else { continue };
                unit[d] = 1.0;
                let vals: Vec<Mat2> = tri.pts.iter().map(|&p| sp.stress_tri(&unit, t, p)).collect();
                let mid = sp.stress_tri(&unit, t, centroid);
                let stored = sp.div_tri(&unit, t)[row];
                unit[d] = 0.0;
                let div: f64 = (0..3).map(|i| dot(vals[i][row], grads[i])).sum();
                let mean = [0, 1].map(|c| vals.iter().map(|v| v[row][c]).sum::<f64>() / 3.0);
                let scale = vals
                    .iter()
                    .flat_map(|v| v[row])
                    .fold(0.0_f64, |m, v| m.max(v.abs()))
                    .max(stored.abs() * tri.bdm.lengths[0]);
                let dev = (div - stored).abs() * tri.bdm.lengths[0]
                    + (mid[row][0] - mean[0]).abs()
                    + (mid[row][1] - mean[1]).abs();
                rep.s2_divergence = rep.s2_divergence.max(ratio(dev, scale));
            }
        }
    }
    rep.s3a = s3a_residual(geom, sp)?;
    Ok(rep)
}

/// Largest relative mismatch between the interpolated and the pointwise curl
/// over all basis functions of `W_h`.
pub fn s3a_residual(geom: &MixedDimGeometry, sp: &SpaceSet) -> Result<f64> {
    // triangles and inclusion cells in the support of each potential DOF
    let mut tri_of: Vec<Vec<usize>> = vec![Vec::new(); sp.n_w];
    for (t, tw) in sp.tri_w.iter().enumerate() {
        for d in tw.iter().flatten().flatten() {
            tri_of[*d].push(t);
        }
    }
    let mut cells_of_tri: Vec<Vec<usize>> = vec![Vec::new(); sp.n_tris()];
    for (g, sides) in sp.cell_sides.iter().enumerate() {
        for (_, fc) in sides {
            cells_of_tri[fc.tri].push(g);
        }
    }
    let rule = triangle_rule(4);
    let gl = gauss_legendre(5);
    let mut w = vec![0.0; sp.n_w];
    let mut worst: f64 = 0.0;
    for (d, tris) in tri_of.iter().enumerate() {
        w[d] = 1.0;
        let mut scale: f64 = 0.0;
        let mut err: f64 = 0.0;
        let mut cells = Vec::new();
        for &t in tris {
            let tri = &sp.tris[t];
            let mut local = vec![0.0; sp.n_sigma];
            for row in 0..2 {
                let dv = tri.bdm.dofs_of(|x| mdops::curl_tri_at(sp, &w, t, tri.bary(x))[row]);
                for k in 0..6 {
                    match sp.tri_sigma[t][row][k] {
                        Some(i) => local[i] = dv[k],
                        None => err = err.max(dv[k].abs() / tri.bdm.lengths[k / 2]),
                    }
                }
            }
            for (l, _) in &rule {
                let exact = mdops::curl_tri_at(sp, &w, t, *l);
                let interp = sp.stress_tri(&local, t, tri.point(*l));
                for row in 0..2 {
                    for col in 0..2 {
                        scale = scale.max(exact[row][col].abs());
                        err = err.max((exact[row][col] - interp[row][col]).abs());
                    }
                }
            }
            cells.extend_from_slice(&cells_of_tri[t]);
        }
        cells.sort_unstable();
        cells.dedup();
        for g in cells {
            let mut local = vec![0.0; sp.n_sigma];
            let va = mdops::curl_seg_at(geom, sp, &w, g, 0.0);
            let vb = mdops::curl_seg_at(geom, sp, &w, g, 1.0);
            let mut mean = [0.0; 2];
            for &(s, q) in &gl {
                let v = mdops::curl_seg_at(geom, sp, &w, g, s);
                mean[0] += q * v[0];
                mean[1] += q * v[1];
            }
            for comp in 0..2 {
                for (k, val) in [va[comp], vb[comp], mean[comp]].into_iter().enumerate() {
                    match sp.seg_sigma[g][comp][k] {
                        Some(i) => local[i] = val,
                        // a removed end value must vanish; a missing cell mean is not a constraint
                        None if k < 2 => err = err.max(val.abs()),
                        None => {}
                    }
                }
            }
            for &(s, _) in &gl {
                let exact = mdops::curl_seg_at(geom, sp, &w, g, s);
                let interp = sp.stress_seg(&local, g, s);
                for comp in 0..2 {
                    scale = scale.max(exact[comp].abs());
                    err = err.max((exact[comp] - interp[comp]).abs());
                }
            }
        }
        w[d] = 0.0;
        if scale > 0.0 {
            worst = worst.max(err / scale);
        }
    }
    Ok(worst)
}

/// Matrices of the inf-sup eigenproblem `B M_S^-1 B^T q = beta^2 M_Q q`.
pub struct InfSupProblem {
    pub m_sigma: CscMatrix,
    pub b: CscMatrix,
    pub m_q: Vec<f64>,
}

impl InfSupProblem {
    pub fn new(geom: &MixedDimGeometry, sp: &SpaceSet) -> Result<Self> {
        let (b_div, b_skw) = assembly::assemble_b(geom, sp);
        let mass_u = displacement_mass_diag(geom, sp, &|_| 1.0);
        let mut emax = vec![1.0; geom.manifolds.len()];
        for (i, e) in emax.iter_mut().enumerate() {
            *e = geom.epsilon_max(i)?;
        }
        // |tau|_S^2 = |tau|^2 + |n . tau|_Gamma^2 + sum_i |emax_i^-1 (B_div tau)_i|^2 / m_i
        let mut dscale = vec![0.0; sp.n_u];
        let owner = displacement_owner(geom, sp);
        for i in 0..sp.n_u {
            dscale[i] = 1.0 / (emax[owner[i]].powi(2) * mass_u[i]);
        }
        let mut t = stress_mass(geom, sp).to_triplets();
        let bt = b_div.transpose();
        // B^T D B, column by column of B (rows of B^T)
        let mut rows_of: Vec<Vec<(usize, f64)>> = vec![Vec::new(); sp.n_u];
        for j in 0..b_div.ncols {
            for (i, v) in b_div.col(j) {
                rows_of[i].push((j, v));
            }
        }
        let _ = bt;
        for (i, row) in rows_of.iter().enumerate() {
            for &(a, va) in row {
                for &(b, vb) in row {
                    t.add(a, b, va * dscale[i] * vb);
                }
            }
        }
        let m_sigma = t.to_csc();
        let mut bt = Triplets::new(sp.n_u + sp.n_r, sp.n_sigma);
        bt.add_block(0, 0, &b_div, 1.0, false);
        bt.add_block(sp.n_u, 0, &b_skw, 1.0, false);
        let mut m_q: Vec<f64> = mass_u.iter().zip(&owner).map(|(m, &o)| m * emax[o].powi(2)).collect();
        m_q.extend(rotation_mass_diag(sp, &|i| geom.epsilon(i).powi(2)));
        Ok(InfSupProblem {
            m_sigma,
            b: bt.to_csc(),
            m_q,
        })
    }

    fn saddle(&self) -> CscMatrix {
        let (ns, nq) = (self.b.ncols, self.b.nrows);
        let mut t = Triplets::new(ns + nq, ns + nq);
        t.add_block(0, 0, &self.m_sigma, 1.0, false);
        t.add_block(ns, 0, &self.b, 1.0, false);
        t.add_block(0, ns, &self.b, 1.0, true);
        t.to_csc()
    }

    /// `beta` by Lanczos iteration on `S^-1 M_Q` in the `M_Q` inner product.
    pub fn estimate(&self, max_iter: usize, seed: u64) -> Result<f64> {
        let k = self.saddle();
        let ns = self.b.ncols;
        let lu = SparseLu::factor_with_order(&k, &saddle_order(&k, ns))
            .map_err(|e| Error::Singular(format!("inf-sup saddle matrix: {e}")))?;
        let nq = self.b.nrows;
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut rhs = vec![0.0; ns + nq];
            for i in 0..nq {
                rhs[ns + i] = -self.m_q[i] * v[i];
            }
            let x = lu.solve_refined(&k, &rhs, 1e-14, 2).0;
            x[ns..].to_vec()
        };
        let ip = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&self.m_q).map(|((a, b), m)| a * b * m).sum() };
        let mut rng = Lcg::new(seed);
        let mut v: Vec<f64> = (0..nq).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let n0 = ip(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= n0);
        let mut basis = vec![v];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut last = f64::NAN;
        let steps = max_iter.min(nq);
        for it in 0..steps {
            let mut w = apply(&basis[it]);
            let a = ip(&w, &basis[it]);
            alpha.push(a);
            // full reorthogonalization, twice
            for _ in 0..2 {
                for q in &basis {
                    let c = ip(&w, q);
                    w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = ip(&w, &w).sqrt();
            let m = alpha.len();
            let mut tmat = DMatrix::zeros(m, m);
            for i in 0..m {
                tmat[(i, i)] = alpha[i];
                if i + 1 < m {
                    tmat[(i, i + 1)] = beta[i];
                    tmat[(i + 1, i)] = beta[i];
                }
            }
            let theta = SymmetricEigen::new(tmat).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let converged = (theta - last).abs() <= 1e-13 * theta.abs();
            last = theta;
            if converged || b <= 1e-14 * theta.abs() || it + 1 == steps {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        if !(last > 0.0) {
            return Err(Error::Singular("inf-sup estimate failed to converge".into()));
        }
        Ok((1.0 / last).sqrt())
    }

    /// `beta` from the dense generalized eigenproblem; limited to small systems.
    pub fn dense(&self, max_dofs: usize) -> Result<f64> {
        let (ns, nq) = (self.b.ncols, self.b.nrows);
        if nq > max_dofs.min(DENSE_LIMIT) {
            return Err(Error::Input(format!(
                "dense inf-sup estimate limited to {max_dofs} multiplier DOFs, got {nq}; use a coarser mesh"
            )));
        }
        let lu = SparseLu::factor(&self.m_sigma)?;
        let mut s = DMatrix::zeros(nq, nq);
        let b_rows = self.b.transpose();
        for j in 0..nq {
            let col: Vec<f64> = {
                let mut c = vec![0.0; ns];
                for (i, v) in b_rows.col(j) {
                    c[i] = v;
                }
                c
            };
            let y = lu.solve_refined(&self.m_sigma, &col, 1e-15, 2).0;
            let by = self.b.mul_vec(&y);
            for i in 0..nq {
                s[(i, j)] = by[i] / (self.m_q[i] * self.m_q[j]).sqrt();
            }
        }
        let s = (&s + s.transpose()) * 0.5;
        let min = SymmetricEigen::new(s).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(min.max(0.0).sqrt())
    }
}

fn displacement_owner(geom: &MixedDimGeometry, sp: &SpaceSet) -> Vec<usize> {
    let mut owner = vec![0; sp.n_u];
    for (t, tri) in sp.tris.iter().enumerate() {
        owner[sp.tri_u[t][0]] = tri.manifold;
        owner[sp.tri_u[t][1]] = tri.manifold;
    }
    for (g, seg) in sp.segs.iter().enumerate() {
        for d in sp.seg_u[g].iter().flatten().flatten() {
            owner[*d] = seg.manifold;
        }
    }
    for &p in &geom.by_dim[0] {
        if let Some(d) = sp.point_u[p] {
            owner[d[0]] = p;
            owner[d[1]] = p;
        }
    }
    owner
}

/// Replace apertures: `e` on 1-manifolds and `e^2` on 0-manifolds.
pub fn with_apertures(geom: &MixedDimGeometry, e: f64) -> MixedDimGeometry {
    let mut g = geom.clone();
    for m in g.manifolds.iter_mut() {
        m.epsilon = match m.dim {
            2 => 1.0,
            1 => e,
            _ => e * e,
        };
    }
    g
}

/// One inf-sup estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfSupRow {
    pub level: usize,
    pub h: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub dofs: usize,
}

/// Multiplier DOFs above which the dense inf-sup path refuses to run.
pub const DENSE_LIMIT: usize = 5000;

fn infsup_row(geom: &MixedDimGeometry, mesh: &MixedMesh, family: FamilyChoice, level: usize, e: Option<f64>) -> Result<InfSupRow> {
    let g = match e {
        Some(e) => with_apertures(geom, e),
        None => geom.clone(),
    };
    let sp = build_spaces(&g, mesh, family)?;
    let prob = InfSupProblem::new(&g, &sp)?;
    let beta = prob.estimate(300, 11)?;
    log::info!("inf-sup level {level} h {:.4} eps {e:?}: beta = {beta:.6}", mesh.h);
    Ok(InfSupRow {
        level,
        h: mesh.h,
        epsilon: e.unwrap_or(f64::NAN),
        beta,
        dofs: prob.b.nrows + prob.b.ncols,
    })
}

/// Estimate the inf-sup constant on `coarse` and `levels - 1` uniform refinements of it.
pub fn infsup_estimate(
    geom: &MixedDimGeometry,
    coarse: &MixedMesh,
    family: FamilyChoice,
    levels: usize,
) -> Result<Vec<InfSupRow>> {
    if levels < 2 {
        return Err(Error::Input(format!(
            "an inf-sup study needs at least 2 levels, got {levels}"
        )));
    }
    let mut rows = Vec::with_capacity(levels);
    let mut mesh = coarse.clone();
    for level in 0..levels {
        if level > 0 {
            mesh = mesh.refine(geom)?;
        }
        rows.push(infsup_row(geom, &mesh, family, level, None)?);
    }
    Ok(rows)
}

/// Estimate the inf-sup constant on one mesh for each inclusion aperture `e`
/// (`e` on 1-manifolds, `e^2` on 0-manifolds).
pub fn infsup_sweep(
    geom: &MixedDimGeometry,
    mesh: &MixedMesh,
    family: FamilyChoice,
    epsilons: &[f64],
) -> Result<Vec<InfSupRow>> {
    epsilons
        .iter()
        .map(|&e| infsup_row(geom, mesh, family, 0, Some(e)))
        .collect()
}

/// Ratio of the largest to the smallest constant of a table.
pub fn spread(rows: &[InfSupRow]) -> f64 {
    let max = rows.iter().map(|r| r.beta).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.beta).fold(f64::INFINITY, f64::min);
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcg_is_reproducible() {
        let mut a = Lcg::new(42);
        let mut b = Lcg::new(42);
        for _ in 0..10 {
            let x = a.next_f64();
            assert_eq!(x, b.next_f64());
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn slope_of_power_law() {
        let h = [0.25, 0.125, 0.0625];
        let e: Vec<f64> = h.iter().map(|h: &f64| 3.0 * h.powi(2)).collect();
        assert!((ls_slope(&h, &e) - 2.0).abs() < 1e-12);
    }
}
