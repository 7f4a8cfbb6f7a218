//! Mixed-dimensional operators on discrete fields.
//!
//! The jump sums raw interface values. Aperture weights are applied only
//! when [`Weighting::Epsilon`] is requested: `eps_i` on in-manifold
//! derivatives and the upper aperture on interface fluxes.

use crate::elements::{legendre, InterfaceCells, Mat2, SpaceSet};
use crate::error::{Error, Result};
use crate::geometry::{dot, MixedDimGeometry, Point};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Unweighted,
    Epsilon,
}

impl Weighting {
    fn own(self, geom: &MixedDimGeometry, i: usize) -> f64 {
        match self {
            Weighting::Unweighted => 1.0,
            Weighting::Epsilon => geom.epsilon(i),
        }
    }
}

/// Sum of the interface values over the interfaces below manifold `i`.
/// `values` is indexed by interface id.
pub fn jump(geom: &MixedDimGeometry, i: usize, values: &[Option<Point>]) -> Result<Point> {
    let mut s = [0.0; 2];
    for &j in &geom.hat_j[i] {
        let v = values
            .get(j)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Input(format!("no value on interface {j} of manifold {i}")))?;
        s[0] += v[0];
        s[1] += v[1];
    }
    Ok(s)
}

/// Asymmetry of a `d x d` matrix: `b_12 - b_21` for `d = 2`.
pub fn skw_apply(b: &[Vec<f64>], d: usize) -> Result<f64> {
    match d {
        2 => Ok(b[0][1] - b[1][0]),
        3 => Err(Error::Unimplemented("asymmetry operator for d = 3".into())),
        _ => Err(Error::Input(format!("asymmetry is undefined on manifolds of dimension {d}"))),
    }
}

/// Mixed-dimensional divergence on bulk triangle `t` (constant per cell).
pub fn div_tri(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64], t: usize, w: Weighting) -> Point {
    let e = w.own(geom, sp.tris[t].manifold);
    let d = sp.div_tri(sigma, t);
    [e * d[0], e * d[1]]
}

/// Normal trace `sigma_hat n` of the bulk stress on side facet `(j, facet)` at parameter `s`.
pub fn side_traction(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64], j: usize, tri: usize, x: Point) -> Point {
    let n = geom.interfaces[j].normal;
    let s = sp.stress_tri(sigma, tri, x);
    [dot(s[0], n), dot(s[1], n)]
}

/// Mixed-dimensional divergence on inclusion cell `g` at parameter `s`.
pub fn div_seg_at(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64], g: usize, s: f64, w: Weighting) -> Point {
    let seg = &sp.segs[g];
    let e = w.own(geom, seg.manifold);
    let d = sp.dstress_seg(sigma, g, s);
    let mut v = [e * d[0], e * d[1]];
    let x = seg.point(s);
    for &(j, fc) in &sp.cell_sides[g] {
        let eh = w.own(geom, geom.interfaces[j].upper);
        let t = side_traction(geom, sp, sigma, j, fc.tri, x);
        v[0] -= eh * t[0];
        v[1] -= eh * t[1];
    }
    v
}

/// End traction `n_j . sigma_s` of an inclusion at point interface `j`.
pub fn end_traction(sp: &SpaceSet, sigma: &[f64], cell: usize, end: usize) -> Point {
    let v = sp.stress_seg(sigma, cell, end as f64);
    let sign = if end == 1 { 1.0 } else { -1.0 };
    [sign * v[0], sign * v[1]]
}

/// Mixed-dimensional divergence at 0-manifold `p`.
pub fn div_point(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64], p: usize, w: Weighting) -> Point {
    let mut v = [0.0; 2];
    for &j in &geom.hat_j[p] {
        if let InterfaceCells::End { cell, end } = sp.interface_cells[j] {
            let eh = w.own(geom, geom.interfaces[j].upper);
            let t = end_traction(sp, sigma, cell, end);
            v[0] -= eh * t[0];
            v[1] -= eh * t[1];
        }
    }
    v
}

/// Mixed-dimensional divergence projected onto `U_h` (coefficients of the displacement space).
pub fn md_divergence(geom: &MixedDimGeometry, sp: &SpaceSet, sigma: &[f64], w: Weighting) -> Vec<f64> {
    let mut c = vec![0.0; sp.n_u];
    for t in 0..sp.n_tris() {
        let d = div_tri(geom, sp, sigma, t, w);
        c[sp.tri_u[t][0]] = d[0];
        c[sp.tri_u[t][1]] = d[1];
    }
    let gl = gauss_legendre(4);
    for g in 0..sp.segs.len() {
        let mut m = [[0.0; 2]; 2];
        for &(s, wq) in &gl {
            let d = div_seg_at(geom, sp, sigma, g, s, w);
            let l = legendre(s);
            for comp in 0..2 {
                for k in 0..2 {
                    m[comp][k] += wq * d[comp] * l[k];
                }
            }
        }
        for comp in 0..2 {
            for k in 0..2 {
                if let Some(i) = sp.seg_u[g][comp][k] {
                    c[i] = m[comp][k] * if k == 0 { 1.0 } else { 3.0 };
                }
            }
        }
    }
    for &p in &geom.by_dim[0] {
        let d = div_point(geom, sp, sigma, p, w);
        let ud = sp.point_u[p].expect("point displacement");
        c[ud[0]] = d[0];
        c[ud[1]] = d[1];
    }
    c
}

/// Discrete mixed-dimensional gradient of a displacement in `U_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdGradient {
    /// Row-wise gradient per bulk triangle (zero for piecewise constants).
    pub bulk: Vec<Mat2>,
    /// Tangential derivative per inclusion cell.
    pub inclusion: Vec<Point>,
    /// Per interface and facet: `u_lower - u_upper` at the two facet ends.
    pub side: Vec<Vec<[Point; 2]>>,
    /// Per point interface: `u_point - u_inclusion(end)`.
    pub end: Vec<Option<Point>>,
}

pub fn md_gradient(geom: &MixedDimGeometry, sp: &SpaceSet, u: &[f64]) -> MdGradient {
    let bulk = vec![[[0.0; 2]; 2]; sp.n_tris()];
    let inclusion = (0..sp.segs.len()).map(|g| sp.du_seg(u, g)).collect();
    let mut side = vec![Vec::new(); geom.interfaces.len()];
    let mut end_vals = vec![None; geom.interfaces.len()];
    for (j, ic) in sp.interface_cells.iter().enumerate() {
        match ic {
            InterfaceCells::Side(facets) => {
                side[j] = facets
                    .iter()
                    .map(|fc| {
                        let up = sp.u_tri(u, fc.tri);
                        let at = |s: f64| {
                            let low = sp.u_seg(u, fc.cell, s);
                            [low[0] - up[0], low[1] - up[1]]
                        };
                        [at(0.0), at(1.0)]
                    })
                    .collect();
            }
            InterfaceCells::End { cell, end } => {
                let up = sp.u_seg(u, *cell, *end as f64);
                let low = sp.u_point(u, geom.interfaces[j].lower);
                end_vals[j] = Some([low[0] - up[0], low[1] - up[1]]);
            }
        }
    }
    MdGradient {
        bulk,
        inclusion,
        side,
        end: end_vals,
    }
}

/// Pointwise curl of a potential on the bulk: rows `perp(grad w_k) = [-d_y w_k, d_x w_k]`.
pub fn curl_tri_at(sp: &SpaceSet, w: &[f64], t: usize, l: [f64; 3]) -> Mat2 {
    let (_, g) = sp.w_tri(w, t, l);
    [[-g[0][1], g[0][0]], [-g[1][1], g[1][0]]]
}

/// Pointwise curl on inclusion cell `g`: `w_right - w_left`, i.e. minus the
/// jump of `perp(n) . t` times the trace.
pub fn curl_seg_at(geom: &MixedDimGeometry, sp: &SpaceSet, w: &[f64], g: usize, s: f64) -> Point {
    let seg = &sp.segs[g];
    let x = seg.point(s);
    let mut v = [0.0; 2];
    for &(j, fc) in &sp.cell_sides[g] {
        let n = geom.interfaces[j].normal;
        let sign = -dot([-n[1], n[0]], seg.tangent);
        let (val, _) = sp.w_tri(w, fc.tri, sp.tris[fc.tri].bary(x));
        v[0] += sign * val[0];
        v[1] += sign * val[1];
    }
    v
}

/// Interpolate the mixed-dimensional curl of `w` into the stress space.
pub fn md_curl(geom: &MixedDimGeometry, sp: &SpaceSet, w: &[f64]) -> Result<Vec<f64>> {
    if geom.ambient_dim != 2 {
        return Err(Error::Unimplemented("curl for ambient dimension 3".into()));
    }
    if w.len() != sp.n_w {
        return Err(Error::Input(format!("potential has {} coefficients, expected {}", w.len(), sp.n_w)));
    }
    let mut c = vec![0.0; sp.n_sigma];
    for (t, tri) in sp.tris.iter().enumerate() {
        for row in 0..2 {
            let d = tri.bdm.dofs_of(|x| curl_tri_at(sp, w, t, tri.bary(x))[row]);
            for k in 0..6 {
                if let Some(i) = sp.tri_sigma[t][row][k] {
                    c[i] = d[k];
                }
            }
        }
    }
    let gl = gauss_legendre(3);
    for g in 0..sp.segs.len() {
        let va = curl_seg_at(geom, sp, w, g, 0.0);
        let vb = curl_seg_at(geom, sp, w, g, 1.0);
        let mut mean = [0.0; 2];
        for &(s, wq) in &gl {
            let v = curl_seg_at(geom, sp, w, g, s);
            mean[0] += wq * v[0];
            mean[1] += wq * v[1];
        }
        for comp in 0..2 {
            for (k, val) in [va[comp], vb[comp], mean[comp]].into_iter().enumerate() {
                if let Some(i) = sp.seg_sigma[g][comp][k] {
                    c[i] = val;
                }
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skw_examples() {
        assert_eq!(skw_apply(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap(), -1.0);
        assert_eq!(skw_apply(&[vec![0.0, 2.5], vec![-2.5, 0.0]], 2).unwrap(), 5.0);
        assert!(matches!(skw_apply(&[vec![1.0]], 1), Err(Error::Input(_))));
        assert!(matches!(skw_apply(&[], 3), Err(Error::Unimplemented(_))));
    }
}
