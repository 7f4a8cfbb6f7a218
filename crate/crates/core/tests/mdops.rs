use mdelast::assembly::{assemble_b, displacement_mass_diag};
use mdelast::elements::{build_spaces, FamilyChoice, Mat2, SpaceSet, StressField};
use mdelast::geometry::{decompose, GeometryInput, MixedDimGeometry, Point};
use mdelast::mdops::{jump, md_curl, md_divergence, md_gradient, skw_apply, Weighting};
use mdelast::meshing::build_mesh;
use mdelast::verify::{complex_check, Lcg};
use proptest::prelude::*;

fn setup(input: GeometryInput, h: f64, family: FamilyChoice) -> (MixedDimGeometry, SpaceSet) {
    let g = decompose(&input).unwrap();
    let mesh = build_mesh(&g, h).unwrap();
    let sp = build_spaces(&g, &mesh, family).unwrap();
    (g, sp)
}

fn line() -> GeometryInput {
    GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], 1e-2, 1e-4)
}

fn crossing() -> GeometryInput {
    GeometryInput::unit_square()
        .with_segment([0.2, 0.3], [0.8, 0.7], 1e-2, 1e-4)
        .with_segment([0.2, 0.7], [0.8, 0.3], 1e-2, 1e-4)
}

fn random(n: usize, rng: &mut Lcg) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

struct Field<B: Fn(usize, Point) -> Mat2>(B);

impl<B: Fn(usize, Point) -> Mat2> StressField for Field<B> {
    fn bulk(&self, m: usize, x: Point) -> Mat2 {
        (self.0)(m, x)
    }
    fn inclusion(&self, _: usize, _: Point) -> Point {
        [0.0, 0.0]
    }
}

#[test]
fn jump_sums_interface_values() {
    let g = decompose(&line()).unwrap();
    let s = g.by_dim[1][0];
    let mut values = vec![None; g.interfaces.len()];
    for &j in &g.hat_j[s] {
        values[j] = Some([1.0, 1.0]);
    }
    assert_eq!(jump(&g, s, &values).unwrap(), [2.0, 2.0]);
    values[g.hat_j[s][1]] = None;
    assert!(jump(&g, s, &values).is_err());
}

#[test]
fn jump_at_a_junction_uses_exactly_its_interfaces() {
    let g = decompose(&crossing()).unwrap();
    let p = g.by_dim[0][0];
    // distinct powers of two identify every summand
    let values: Vec<Option<Point>> = (0..g.interfaces.len()).map(|j| Some([(1u64 << j) as f64, 0.0])).collect();
    let expected: f64 = g.hat_j[p].iter().map(|&j| (1u64 << j) as f64).sum();
    assert_eq!(jump(&g, p, &values).unwrap()[0], expected);
    let s = g.by_dim[1][0];
    let mut single = vec![None; g.interfaces.len()];
    single[g.hat_j[s][0]] = Some([0.5, -3.0]);
    single[g.hat_j[s][1]] = Some([0.0, 0.0]);
    assert_eq!(jump(&g, s, &single).unwrap(), [0.5, -3.0]);
}

#[test]
fn skw_examples() {
    assert_eq!(skw_apply(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap(), -1.0);
    assert_eq!(skw_apply(&[vec![0.0, 0.7], vec![-0.7, 0.0]], 2).unwrap(), 1.4);
    assert!(skw_apply(&[vec![1.0]], 1).is_err());
    assert!(matches!(skw_apply(&[], 3), Err(mdelast::Error::Unimplemented(_))));
}

#[test]
fn divergence_of_constant_and_linear_bulk_stress() {
    let (g, sp) = setup(GeometryInput::unit_square(), 0.2, FamilyChoice::full());
    let c = sp.interpolate_stress(&Field(|_, _| [[1.0, 2.0], [-0.5, 3.0]]));
    assert!(md_divergence(&g, &sp, &c, Weighting::Unweighted).iter().all(|v| v.abs() < 1e-12));
    let c = sp.interpolate_stress(&Field(|_, x| [[x[0], 0.0], [0.0, x[1]]]));
    let d = md_divergence(&g, &sp, &c, Weighting::Unweighted);
    for t in 0..sp.n_tris() {
        assert!((d[sp.tri_u[t][0]] - 1.0).abs() < 1e-12);
        assert!((d[sp.tri_u[t][1]] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn equal_side_tractions_give_minus_twice_the_traction() {
    let (g, sp) = setup(line(), 0.25, FamilyChoice::full());
    let s = g.by_dim[1][0];
    let jb = g.hat_j[s][0];
    let (below, n) = (g.interfaces[jb].upper, g.interfaces[jb].normal);
    let gmat = [[0.3, -1.2], [0.8, 0.4]];
    let sign = move |m: usize| if m == below { 1.0 } else { -1.0 };
    let c = sp.interpolate_stress(&Field(move |m, _| {
        let k = sign(m);
        [[k * gmat[0][0], k * gmat[0][1]], [k * gmat[1][0], k * gmat[1][1]]]
    }));
    let traction = [gmat[0][0] * n[0] + gmat[0][1] * n[1], gmat[1][0] * n[0] + gmat[1][1] * n[1]];
    let d = md_divergence(&g, &sp, &c, Weighting::Unweighted);
    for cell in sp.seg_range[s].clone() {
        for comp in 0..2 {
            let mean = d[sp.seg_u[cell][comp][0].unwrap()];
            assert!((mean + 2.0 * traction[comp]).abs() < 1e-12, "{mean} vs {}", -2.0 * traction[comp]);
            assert!(d[sp.seg_u[cell][comp][1].unwrap()].abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_of_constant_and_of_an_interface_offset() {
    let (g, sp) = setup(line(), 0.25, FamilyChoice::full());
    let s = g.by_dim[1][0];
    let c = [0.7, -1.1];
    let u = sp.project_u(&|_: usize, _: Point| c, &[]);
    let grad = md_gradient(&g, &sp, &u);
    assert!(grad.inclusion.iter().flatten().all(|v| v.abs() < 1e-12));
    assert!(grad.side.iter().flatten().flatten().flatten().all(|v| v.abs() < 1e-12));
    let u = sp.project_u(&move |m: usize, _: Point| if m == s { c } else { [0.0, 0.0] }, &[]);
    let grad = md_gradient(&g, &sp, &u);
    for &j in &g.hat_j[s] {
        for pair in &grad.side[j] {
            for v in pair {
                assert!((v[0] - c[0]).abs() < 1e-12 && (v[1] - c[1]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn tangential_derivative_of_a_linear_inclusion_displacement() {
    let (g, sp) = setup(line(), 0.25, FamilyChoice::full());
    let s = g.by_dim[1][0];
    let u = sp.project_u(&move |m: usize, x: Point| if m == s { [x[0], 2.0 * x[0]] } else { [0.0, 0.0] }, &[]);
    let grad = md_gradient(&g, &sp, &u);
    for cell in sp.seg_range[s].clone() {
        let t = sp.segs[cell].tangent;
        let d = grad.inclusion[cell];
        assert!((d[0] - t[0]).abs() < 1e-12 && (d[1] - 2.0 * t[0]).abs() < 1e-12, "{d:?}");
    }
}

#[test]
fn curl_of_constant_and_linear_potentials() {
    let (g, sp) = setup(GeometryInput::unit_square(), 0.25, FamilyChoice::full());
    let mut w = vec![0.0; sp.n_w];
    for (t, tri) in sp.tris.iter().enumerate() {
        for lv in 0..3 {
            w[sp.tri_w[t][0][lv].unwrap()] = tri.pts[lv][0];
            w[sp.tri_w[t][1][lv].unwrap()] = 2.0;
        }
    }
    let c = md_curl(&g, &sp, &w).unwrap();
    for (t, tri) in sp.tris.iter().enumerate() {
        let s = sp.stress_tri(&c, t, tri.point([0.2, 0.5, 0.3]));
        assert!((s[0][0]).abs() < 1e-12 && (s[0][1] - 1.0).abs() < 1e-12, "{s:?}");
        assert!(s[1][0].abs() < 1e-12 && s[1][1].abs() < 1e-12, "{s:?}");
    }
    assert!(md_curl(&g, &sp, &w[1..]).is_err());
}

#[test]
fn divergence_of_curl_vanishes_per_basis_function() {
    for family in [FamilyChoice::full(), FamilyChoice::reduced()] {
        let (g, sp) = setup(crossing(), 0.25, family);
        for k in (0..sp.n_w).step_by(7) {
            let mut w = vec![0.0; sp.n_w];
            w[k] = 1.0;
            let c = md_curl(&g, &sp, &w).unwrap();
            let d = md_divergence(&g, &sp, &c, Weighting::Unweighted);
            assert!(d.iter().all(|v| v.abs() < 1e-12), "basis {k}");
        }
        assert!(complex_check(&g, &sp, 20, 3).unwrap() <= 1e-12);
    }
}

#[test]
fn divergence_matches_the_assembled_coupling() {
    // u^T B_div sigma equals the U_h inner product of u with the weighted divergence
    let input = crossing().with_junction([0.5, 0.5], 1e-3);
    for family in [FamilyChoice::full(), FamilyChoice::reduced()] {
        let (g, sp) = setup(input.clone(), 0.25, family);
        let (bd, _) = assemble_b(&g, &sp);
        let mass = displacement_mass_diag(&g, &sp, &|_| 1.0);
        let mut rng = Lcg::new(11);
        for _ in 0..5 {
            let sigma = random(sp.n_sigma, &mut rng);
            let u = random(sp.n_u, &mut rng);
            let d = md_divergence(&g, &sp, &sigma, Weighting::Epsilon);
            let lhs: f64 = bd.mul_vec(&sigma).iter().zip(&u).map(|(a, b)| a * b).sum();
            let rhs: f64 = (0..sp.n_u).map(|i| mass[i] * d[i] * u[i]).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn skw_of_symmetric_is_zero(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3) {
        prop_assert_eq!(skw_apply(&[vec![a, b], vec![b, c]], 2).unwrap(), 0.0);
    }

    #[test]
    fn operators_are_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let (g, sp) = setup(crossing(), 0.3, FamilyChoice::full());
        let mut rng = Lcg::new(seed);
        let (a, b) = (random(sp.n_sigma, &mut rng), random(sp.n_sigma, &mut rng));
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let (da, db, dab) = (
            md_divergence(&g, &sp, &a, Weighting::Epsilon),
            md_divergence(&g, &sp, &b, Weighting::Epsilon),
            md_divergence(&g, &sp, &ab, Weighting::Epsilon),
        );
        for i in 0..sp.n_u {
            prop_assert!((dab[i] - alpha * da[i] - beta * db[i]).abs() <= 1e-12 * (1.0 + dab[i].abs()));
        }
        let (wa, wb) = (random(sp.n_w, &mut rng), random(sp.n_w, &mut rng));
        let wab: Vec<f64> = wa.iter().zip(&wb).map(|(x, y)| alpha * x + beta * y).collect();
        let (ca, cb, cab) = (md_curl(&g, &sp, &wa).unwrap(), md_curl(&g, &sp, &wb).unwrap(), md_curl(&g, &sp, &wab).unwrap());
        for i in 0..sp.n_sigma {
            prop_assert!((cab[i] - alpha * ca[i] - beta * cb[i]).abs() <= 1e-12 * (1.0 + cab[i].abs()));
        }
    }
}
