use std::collections::HashMap;

use mdelast::elements::{build_spaces, FamilyChoice, Mat2, SpaceSet, StressField, Variant};
use mdelast::geometry::{decompose, dot, EdgeCondition, GeometryInput, MixedDimGeometry, Point};
use mdelast::meshing::build_mesh;
use mdelast::quadrature::triangle_rule;
use mdelast::verify::{space_checks, Lcg};
use proptest::prelude::*;

struct Bulk<F: Fn(Point) -> Mat2>(F);

impl<F: Fn(Point) -> Mat2> StressField for Bulk<F> {
    fn bulk(&self, _: usize, x: Point) -> Mat2 {
        (self.0)(x)
    }
    fn inclusion(&self, _: usize, _: Point) -> Point {
        [0.0, 0.0]
    }
}

fn spaces(input: GeometryInput, h: f64, family: FamilyChoice) -> (MixedDimGeometry, SpaceSet) {
    let g = decompose(&input).unwrap();
    let mesh = build_mesh(&g, h).unwrap();
    let sp = build_spaces(&g, &mesh, family).unwrap();
    (g, sp)
}

fn line() -> GeometryInput {
    GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], 1e-2, 1e-4)
}

#[test]
fn single_triangle_dof_counts() {
    let mut input = GeometryInput::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.75f64.sqrt()]]);
    input.boundary = vec![EdgeCondition::displacement(None); 3];
    let (_, sp) = spaces(input, 2.0, FamilyChoice::full());
    assert_eq!(sp.n_tris(), 1);
    assert_eq!((sp.n_sigma, sp.n_u, sp.n_r), (12, 2, 1));
}

#[test]
fn two_cell_segment_has_ten_stress_dofs() {
    let (g, sp) = spaces(line(), 0.8, FamilyChoice::full());
    let s = g.by_dim[1][0];
    assert_eq!(sp.seg_range[s].len(), 2);
    assert_eq!(sp.n_sigma - sp.n_sigma_bulk, 10);
}

#[test]
fn junction_carries_displacement_only() {
    let (g, sp) = spaces(
        GeometryInput::unit_square()
            .with_segment([0.2, 0.3], [0.8, 0.7], 1e-2, 1e-4)
            .with_segment([0.2, 0.7], [0.8, 0.3], 1e-2, 1e-4),
        0.25,
        FamilyChoice::reduced(),
    );
    let p = g.by_dim[0][0];
    let d = sp.point_u[p].unwrap();
    assert_ne!(d[0], d[1]);
    assert!(sp.tri_range[p].is_empty() && sp.seg_range[p].is_empty());
}

#[test]
fn higher_order_is_unimplemented() {
    let g = decompose(&line()).unwrap();
    let mesh = build_mesh(&g, 0.5).unwrap();
    let e = build_spaces(&g, &mesh, FamilyChoice { variant: Variant::Reduced, order: 2 }).unwrap_err();
    assert!(matches!(e, mdelast::Error::Unimplemented(_)));
}

#[test]
fn constant_stress_is_reproduced() {
    let c = [[1.5, -0.25], [0.75, 2.0]];
    let (_, sp) = spaces(GeometryInput::unit_square(), 0.2, FamilyChoice::full());
    let coef = sp.interpolate_stress(&Bulk(|_| c));
    for (t, tri) in sp.tris.iter().enumerate() {
        for l in [[1.0, 0.0, 0.0], [0.2, 0.3, 0.5], [0.0, 0.5, 0.5]] {
            let s = sp.stress_tri(&coef, t, tri.point(l));
            for r in 0..2 {
                for k in 0..2 {
                    assert!((s[r][k] - c[r][k]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn interpolant_commutes_with_divergence() {
    let (_, sp) = spaces(GeometryInput::unit_square(), 0.2, FamilyChoice::full());
    let coef = sp.interpolate_stress(&Bulk(|x| [[x[0], 0.0], [0.0, x[1]]]));
    for t in 0..sp.n_tris() {
        let d = sp.div_tri(&coef, t);
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12, "{d:?}");
    }
}

fn interpolation_error(h: f64) -> (f64, f64) {
    let f = |x: Point| {
        let (s, c) = ((3.0 * x[0]).sin(), (2.0 * x[1]).cos());
        [[s * c, x[0] * x[1]], [c + x[0], s]]
    };
    let (_, sp) = spaces(GeometryInput::unit_square(), h, FamilyChoice::full());
    let coef = sp.interpolate_stress(&Bulk(f));
    let rule = triangle_rule(6);
    let mut e2 = 0.0;
    let mut hmax: f64 = 0.0;
    for (t, tri) in sp.tris.iter().enumerate() {
        for (l, w) in &rule {
            let x = tri.point(*l);
            let (a, b) = (sp.stress_tri(&coef, t, x), f(x));
            for r in 0..2 {
                for k in 0..2 {
                    e2 += tri.area * w * (a[r][k] - b[r][k]).powi(2);
                }
            }
        }
        let p = tri.pts;
        for i in 0..3 {
            let d = [p[i][0] - p[(i + 1) % 3][0], p[i][1] - p[(i + 1) % 3][1]];
            hmax = hmax.max(dot(d, d).sqrt());
        }
    }
    (hmax, e2.sqrt())
}

#[test]
fn bulk_interpolation_converges_at_second_order() {
    let data: Vec<(f64, f64)> = [0.25, 0.125, 0.0625].into_iter().map(interpolation_error).collect();
    let (lh, le): (Vec<f64>, Vec<f64>) = data.iter().map(|(h, e)| (h.ln(), e.ln())).unzip();
    let n = lh.len() as f64;
    let (mh, me) = (lh.iter().sum::<f64>() / n, le.iter().sum::<f64>() / n);
    let slope = lh.iter().zip(&le).map(|(h, e)| (h - mh) * (e - me)).sum::<f64>()
        / lh.iter().map(|h| (h - mh).powi(2)).sum::<f64>();
    assert!((1.8..=2.3).contains(&slope), "slope {slope}");
}

#[test]
fn space_conditions_hold_for_both_families() {
    for family in [FamilyChoice::full(), FamilyChoice::reduced()] {
        let (g, sp) = spaces(
            GeometryInput::unit_square()
                .with_segment([0.2, 0.3], [0.8, 0.7], 1e-2, 1e-4)
                .with_segment([0.2, 0.7], [0.8, 0.3], 1e-2, 1e-4),
            0.2,
            family,
        );
        let rep = space_checks(&g, &sp).unwrap();
        assert!(rep.s2_divergence <= 1e-12, "{family:?}: {rep:?}");
        assert!(rep.s2_trace <= 1e-12, "{family:?}: {rep:?}");
        assert!(rep.s3a <= 1e-12, "{family:?}: {rep:?}");
    }
}

/// Largest jump of the normal component of a random stress across interior edges.
fn normal_jump(sp: &SpaceSet, seed: u64) -> f64 {
    let mut rng = Lcg::new(seed);
    let c: Vec<f64> = (0..sp.n_sigma).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in sp.tris.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri.verts[(k + 1) % 3], tri.verts[(k + 2) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push(t);
        }
    }
    let mut worst: f64 = 0.0;
    for (&(a, b), ts) in &edges {
        if ts.len() != 2 || sp.tris[ts[0]].manifold != sp.tris[ts[1]].manifold {
            continue;
        }
        let pa = sp.tris[ts[0]].pts[sp.tris[ts[0]].verts.iter().position(|&v| v == a).unwrap()];
        let pb = sp.tris[ts[0]].pts[sp.tris[ts[0]].verts.iter().position(|&v| v == b).unwrap()];
        let n = [pb[1] - pa[1], pa[0] - pb[0]];
        for s in [0.0, 0.3, 1.0] {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let (u, v) = (sp.stress_tri(&c, ts[0], x), sp.stress_tri(&c, ts[1], x));
            for r in 0..2 {
                worst = worst.max((dot(u[r], n) - dot(v[r], n)).abs());
            }
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stress_functions_are_normal_continuous(seed in any::<u64>(), reduced in any::<bool>()) {
        let family = if reduced { FamilyChoice::reduced() } else { FamilyChoice::full() };
        let (_, sp) = spaces(line(), 0.25, family);
        prop_assert!(normal_jump(&sp, seed) <= 1e-12);
    }
}
