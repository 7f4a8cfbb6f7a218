use mdelast::assembly::{assemble_b, ProblemData};
use mdelast::elements::{build_spaces, FamilyChoice};
use mdelast::geometry::{decompose, dot, GeometryInput, Shape};
use mdelast::meshing::build_mesh;
use mdelast::quadrature::triangle_rule;
use mdelast::verify::{
    complex_check, conservation_check, convergence_study, convergence_study_from, infsup_estimate, ls_slope,
    solve_on, weak_symmetry_check, CaseId, InfSupProblem, Lame, Lcg, ManufacturedCase, DENSE_LIMIT,
};
use proptest::prelude::*;

#[test]
fn lcg_matches_the_documented_recurrence() {
    let (a, c) = (6364136223846793005u128, 1442695040888963407u128);
    let mut state = 42u128;
    let mut rng = Lcg::new(42);
    for _ in 0..1000 {
        state = (a * state + c) % (1u128 << 64);
        assert_eq!(rng.next_u64() as u128, state);
    }
    let mut rng = Lcg::new(0);
    assert_eq!(rng.next_u64(), 1442695040888963407);
    let x = Lcg::new(7).next_f64();
    let expect = (((7u128 * a + c) % (1u128 << 64)) >> 11) as f64 / 2f64.powi(53);
    assert_eq!(x, expect);
}

#[test]
fn case_names_round_trip() {
    for id in [CaseId::Mms1, CaseId::Mms2, CaseId::Mms3, CaseId::Affine] {
        assert_eq!(id.to_string().parse::<CaseId>().unwrap(), id);
    }
    assert_eq!("mms2".parse::<CaseId>().unwrap(), CaseId::Mms2);
    assert!("MMS-9".parse::<CaseId>().is_err());
}

#[test]
fn manufactured_cases_satisfy_the_strong_equations() {
    for (id, eps) in [
        (CaseId::Mms1, 1.0),
        (CaseId::Mms2, 1e-2),
        (CaseId::Mms2, 1e-4),
        (CaseId::Mms2, 0.3),
        (CaseId::Affine, 1e-2),
    ] {
        let case = ManufacturedCase::new(id, eps).unwrap();
        let res = case.strong_form_residual(20, 5).unwrap();
        assert!(res <= 1e-10, "{id} eps {eps}: {res:e}");
    }
    assert!(ManufacturedCase::new(CaseId::Mms3, 1e-2).unwrap().strong_form_residual(20, 5).is_err());
}

/// Samples of `(point, lower displacement, upper displacement, traction, normal)`
/// on the interfaces of the MMS-2 inclusion.
fn interface_samples(case: &ManufacturedCase) -> Vec<([f64; 2], [f64; 2], [f64; 2], [f64; 2], [f64; 2])> {
    let g = &case.geometry;
    let ex = case.exact.as_ref().unwrap();
    let s = g.by_dim[1][0];
    let mut rng = Lcg::new(3);
    let mut out = Vec::new();
    for _ in 0..20 {
        let p = [rng.next_f64(), 0.5];
        for &j in &g.hat_j[s] {
            let f = &g.interfaces[j];
            let n = f.normal;
            let su = [ex.sigma[f.upper][0].eval(p), ex.sigma[f.upper][1].eval(p)];
            out.push((p, ex.u[s].eval(p), ex.u[f.upper].eval(p), [dot(su[0], n), dot(su[1], n)], n));
        }
    }
    out
}

#[test]
fn mms2_interface_law_holds_pointwise() {
    let lame = Lame {
        mu: 1.5,
        lambda: 0.5,
        mu_perp: 3.0,
        lambda_perp: 2.0,
    };
    let case = ManufacturedCase::with_lame(CaseId::Mms2, 1e-2, lame).unwrap();
    for (p, ul, uu, t, n) in interface_samples(&case) {
        let d = [ul[0] - uu[0], ul[1] - uu[1]];
        let dn = dot(d, n);
        for k in 0..2 {
            let res = t[k] - 2.0 * lame.mu_perp * d[k] - lame.lambda_perp * dn * n[k];
            assert!(res.abs() < 1e-12, "at {p:?}: {res:e}");
        }
    }
}

#[test]
fn mms2_stiff_interfaces_close_the_gap() {
    let mut gaps = Vec::new();
    for mu_perp in [1e2, 1e4, 1e6] {
        let lame = Lame { mu_perp, ..Lame::default() };
        let case = ManufacturedCase::with_lame(CaseId::Mms2, 1e-2, lame).unwrap();
        let gap = interface_samples(&case)
            .iter()
            .map(|(_, ul, uu, _, _)| (ul[0] - uu[0]).hypot(ul[1] - uu[1]))
            .fold(0.0, f64::max);
        gaps.push(gap);
    }
    assert!(gaps[2] < 1e-5, "{gaps:?}");
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn two_levels_are_rejected() {
    let case = ManufacturedCase::new(CaseId::Mms1, 1.0).unwrap();
    assert!(convergence_study(&case, FamilyChoice::reduced(), 2).is_err());
}

#[test]
fn affine_solution_is_exact_at_every_level() {
    for family in [FamilyChoice::full(), FamilyChoice::reduced()] {
        let case = ManufacturedCase::new(CaseId::Affine, 1e-2).unwrap();
        let table = convergence_study(&case, family, 3).unwrap();
        for row in &table.rows {
            assert!(row.errors.sigma <= 1e-10 && row.errors.r <= 1e-10, "{family:?}: {row:?}");
            assert!(row.conservation <= 1e-10 && row.symmetry <= 1e-10);
        }
    }
}

#[test]
fn mms1_converges_and_asymmetry_decreases() {
    let case = ManufacturedCase::new(CaseId::Mms1, 1.0).unwrap();
    let table = convergence_study(&case, FamilyChoice::reduced(), 3).unwrap();
    let r = table.rates();
    for v in [r.sigma, r.u, r.r] {
        assert!((0.85..=1.3).contains(&v), "{r:?}");
    }
    let csv = table.to_csv();
    assert!(csv.starts_with("level,h,err_sigma,err_u,err_r,rate_sigma,rate_u,rate_r,err_sigma_d1,err_sigma_d2\n"));
    assert_eq!(csv.lines().count(), 4);

    // pointwise asymmetry of the discrete stress
    let g = &case.geometry;
    let law = case.lame.law(g).unwrap();
    let mut mesh = case.mesh().unwrap();
    let rule = triangle_rule(4);
    let (mut hs, mut skw) = (Vec::new(), Vec::new());
    for _ in 0..3 {
        let ls = solve_on(g, &mesh, FamilyChoice::reduced(), &law, &case.data).unwrap();
        let mut s2 = 0.0;
        for (t, tri) in ls.spaces.tris.iter().enumerate() {
            for (l, w) in &rule {
                let s = ls.spaces.stress_tri(&ls.solution.sigma, t, tri.point(*l));
                s2 += w * tri.area * (s[0][1] - s[1][0]).powi(2);
            }
        }
        hs.push(mesh.h);
        skw.push(s2.sqrt());
        mesh = mesh.refine(g).unwrap();
    }
    assert!(skw[0] > skw[1] && skw[1] > skw[2], "{skw:?}");
    assert!(ls_slope(&hs, &skw) >= 1.0, "{skw:?}");
}

#[test]
fn conservation_and_symmetry_hold_for_thin_inclusions() {
    for eps in [1e-2, 1e-4] {
        let case = ManufacturedCase::new(CaseId::Mms2, eps).unwrap();
        let g = &case.geometry;
        let mesh = case.mesh().unwrap();
        for family in [FamilyChoice::full(), FamilyChoice::reduced()] {
            let ls = solve_on(g, &mesh, family, &case.lame.law(g).unwrap(), &case.data).unwrap();
            let c = conservation_check(g, &mesh, &ls.spaces, &ls.solution.sigma, &case.data);
            let s = weak_symmetry_check(g, &ls.spaces, &ls.solution.sigma);
            assert!(c <= 1e-10 && s <= 1e-10, "eps {eps} {family:?}: {c:e} {s:e}");
        }
    }
    let case = ManufacturedCase::new(CaseId::Mms2, 1e-2).unwrap();
    let g = &case.geometry;
    let mesh = case.mesh().unwrap();
    let zero = ProblemData::zero(g);
    let ls = solve_on(g, &mesh, FamilyChoice::full(), &case.lame.law(g).unwrap(), &zero).unwrap();
    assert_eq!(conservation_check(g, &mesh, &ls.spaces, &ls.solution.sigma, &zero), 0.0);
}

#[test]
fn symmetry_residual_of_an_interpolant_is_its_quadrature() {
    let case = ManufacturedCase::new(CaseId::Mms1, 1.0).unwrap();
    let g = &case.geometry;
    let mesh = case.mesh().unwrap();
    let sp = build_spaces(g, &mesh, FamilyChoice::full()).unwrap();
    let c = sp.interpolate_stress(case.exact.as_ref().unwrap());
    let (_, bs) = assemble_b(g, &sp);
    let assembled = bs.mul_vec(&c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let quad = weak_symmetry_check(g, &sp, &c);
    assert!(quad > 1e-8, "interpolant should not be symmetric in the mean: {quad:e}");
    assert!((quad - assembled).abs() <= 1e-12 * quad, "{quad:e} vs {assembled:e}");
}

#[test]
fn mms3_errors_decrease_against_the_overkill_reference() {
    let case = ManufacturedCase::new(CaseId::Mms3, 1e-2).unwrap();
    let coarse = build_mesh(&case.geometry, 0.5).unwrap();
    let table = convergence_study_from(&case, FamilyChoice::reduced(), 3, coarse).unwrap();
    assert!(table.relative);
    for w in table.rows.windows(2) {
        assert!(w[1].errors.sigma < w[0].errors.sigma && w[1].errors.u < w[0].errors.u, "{table:?}");
    }
}

#[test]
fn complex_property_without_and_with_inclusions() {
    for input in [
        GeometryInput::unit_square(),
        GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], 1e-2, 1e-4),
    ] {
        let g = decompose(&input).unwrap();
        let mesh = build_mesh(&g, 0.25).unwrap();
        for family in [FamilyChoice::full(), FamilyChoice::reduced()] {
            let sp = build_spaces(&g, &mesh, family).unwrap();
            assert!(complex_check(&g, &sp, 100, 1).unwrap() <= 1e-12);
        }
    }
}

#[test]
fn lanczos_estimate_matches_dense_eigenvalues() {
    for input in [
        GeometryInput::unit_square(),
        GeometryInput::unit_square()
            .with_segment([0.2, 0.3], [0.8, 0.7], 1e-2, 1e-4)
            .with_segment([0.2, 0.7], [0.8, 0.3], 1e-2, 1e-4),
    ] {
        let g = decompose(&input).unwrap();
        let mesh = build_mesh(&g, 0.3).unwrap();
        let sp = build_spaces(&g, &mesh, FamilyChoice::reduced()).unwrap();
        let p = InfSupProblem::new(&g, &sp).unwrap();
        let (lanczos, dense) = (p.estimate(300, 1).unwrap(), p.dense(DENSE_LIMIT).unwrap());
        assert!((lanczos / dense - 1.0).abs() <= 1e-8, "{lanczos} vs {dense}");
    }
}

#[test]
fn infsup_is_mesh_independent_and_needs_two_levels() {
    let g = decompose(&GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], 1e-2, 1e-4)).unwrap();
    let mesh = build_mesh(&g, 0.5).unwrap();
    assert!(infsup_estimate(&g, &mesh, FamilyChoice::full(), 1).is_err());
    let rows = infsup_estimate(&g, &mesh, FamilyChoice::full(), 3).unwrap();
    assert_eq!(rows.len(), 3);
    let b: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    let ratio = b.iter().cloned().fold(0.0, f64::max) / b.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(b.iter().all(|&v| v > 0.0) && ratio < 2.0, "{b:?}");
}

#[test]
fn point_junction_geometry_is_used_by_mms3() {
    let case = ManufacturedCase::new(CaseId::Mms3, 1e-2).unwrap();
    let p = case.geometry.by_dim[0][0];
    assert!(matches!(case.geometry.manifold(p).shape, Shape::Point(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_draws_stay_in_range(seed in any::<u64>(), lo in -10.0f64..10.0, width in 1e-3f64..10.0) {
        let mut rng = Lcg::new(seed);
        for _ in 0..100 {
            let v = rng.uniform(lo, lo + width);
            prop_assert!(v >= lo && v < lo + width);
        }
    }

    #[test]
    fn slope_of_exact_power_laws(p in 0.5f64..3.0, c in 0.1f64..10.0) {
        let h = [0.25, 0.125, 0.0625];
        let e: Vec<f64> = h.iter().map(|x: &f64| c * x.powf(p)).collect();
        prop_assert!((ls_slope(&h, &e) - p).abs() < 1e-12);
    }
}
