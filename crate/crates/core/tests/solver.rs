use mdelast::assembly::{assemble, MaterialLaw, ProblemData};
use mdelast::elements::{build_spaces, FamilyChoice, Mat2, StressField};
use mdelast::expr::VecExpr;
use mdelast::geometry::{decompose, EdgeCondition, GeometryInput, MixedDimGeometry, Point, Shape};
use mdelast::meshing::{build_mesh, MixedMesh};
use mdelast::solver::{postprocess_stress, solve, weighted_norms, write_vtk};
use mdelast::verify::{solve_on, with_apertures};
use mdelast::Error;

fn crossing() -> GeometryInput {
    GeometryInput::unit_square()
        .with_segment([0.2, 0.3], [0.8, 0.7], 1e-2, 1e-4)
        .with_segment([0.2, 0.7], [0.8, 0.3], 1e-2, 1e-4)
}

/// Bulk load and a boundary displacement on edge 0 only; the rest is traction free.
fn loaded(g: &MixedDimGeometry) -> ProblemData {
    let mut data = ProblemData::zero(g);
    for &m in &g.by_dim[2] {
        data.f[m] = VecExpr::parse(["sin(3*x) * y", "x - 1"]).unwrap();
        data.g[m] = VecExpr::parse(["0.1 * x", "0"]).unwrap();
    }
    data
}

fn cantilever(input: GeometryInput) -> GeometryInput {
    let mut input = input;
    for k in 1..4 {
        input = input.with_edge(k, EdgeCondition::traction());
    }
    input
}

fn law(g: &MixedDimGeometry) -> MaterialLaw {
    MaterialLaw::uniform(g, 1.0, 1.0, 2.0, 1.0).unwrap()
}

#[test]
fn zero_data_gives_zero_solution() {
    let g = decompose(&crossing()).unwrap();
    let mesh = build_mesh(&g, 0.25).unwrap();
    let ls = solve_on(&g, &mesh, FamilyChoice::full(), &law(&g), &ProblemData::zero(&g)).unwrap();
    let s = &ls.solution;
    assert!(s.sigma.iter().chain(&s.u).chain(&s.r).all(|&v| v == 0.0));
    let n = weighted_norms(&g, &ls.spaces, &s.sigma, &s.u, &s.r).unwrap();
    assert_eq!((n.sigma, n.u, n.r), (0.0, 0.0, 0.0));
}

#[test]
fn rigid_translation_is_reproduced_exactly() {
    let c = [0.3, -0.7];
    for family in [FamilyChoice::full(), FamilyChoice::reduced()] {
        let g = decompose(&crossing().with_junction([0.5, 0.5], 1e-4)).unwrap();
        let mesh = build_mesh(&g, 0.2).unwrap();
        let data = ProblemData::uniform(&g, VecExpr::zero(), VecExpr::constant(c));
        let ls = solve_on(&g, &mesh, family, &law(&g), &data).unwrap();
        let s = &ls.solution;
        let sp = &ls.spaces;
        let n = weighted_norms(&g, sp, &s.sigma, &s.u, &s.r).unwrap();
        assert!(n.sigma <= 1e-10 && n.r <= 1e-10, "{family:?}: {n:?}");
        for t in 0..sp.n_tris() {
            let u = sp.u_tri(&s.u, t);
            assert!((u[0] - c[0]).abs() <= 1e-10 && (u[1] - c[1]).abs() <= 1e-10);
        }
        for cell in 0..sp.segs.len() {
            for x in [0.0, 0.5, 1.0] {
                let u = sp.u_seg(&s.u, cell, x);
                assert!((u[0] - c[0]).abs() <= 1e-10 && (u[1] - c[1]).abs() <= 1e-10);
            }
        }
        let u = sp.u_point(&s.u, g.by_dim[0][0]);
        assert!((u[0] - c[0]).abs() <= 1e-10 && (u[1] - c[1]).abs() <= 1e-10);
    }
}

#[test]
fn repeated_solves_agree_bitwise() {
    let g = decompose(&cantilever(crossing())).unwrap();
    let mesh = build_mesh(&g, 0.2).unwrap();
    let data = loaded(&g);
    let a = solve_on(&g, &mesh, FamilyChoice::reduced(), &law(&g), &data).unwrap().solution;
    let b = solve_on(&g, &mesh, FamilyChoice::reduced(), &law(&g), &data).unwrap().solution;
    assert_eq!(a.sigma, b.sigma);
    assert_eq!(a.u, b.u);
    assert_eq!(a.r, b.r);
    assert!(!a.flagged && a.residual <= 1e-10);
}

#[test]
fn missing_displacement_boundary_is_singular() {
    let mut input = GeometryInput::unit_square();
    for k in 0..4 {
        input = input.with_edge(k, EdgeCondition::traction());
    }
    let g = decompose(&input).unwrap();
    let mesh = build_mesh(&g, 0.25).unwrap();
    let sp = build_spaces(&g, &mesh, FamilyChoice::full()).unwrap();
    let data = ProblemData::uniform(&g, VecExpr::constant([0.0, 1.0]), VecExpr::zero());
    let sys = assemble(&g, &mesh, &sp, &law(&g), &data).unwrap();
    match solve(&sys) {
        Err(Error::Singular(m)) => assert!(m.contains("displacement boundary"), "{m}"),
        other => panic!("expected a singular system, got {:?}", other.map(|s| s.residual)),
    }
}

struct Constant(Mat2);

impl StressField for Constant {
    fn bulk(&self, _: usize, _: Point) -> Mat2 {
        self.0
    }
    fn inclusion(&self, _: usize, _: Point) -> Point {
        [1.0, 1.0]
    }
}

#[test]
fn weighted_norm_examples() {
    let g = decompose(&GeometryInput::unit_square()).unwrap();
    let mesh = build_mesh(&g, 0.25).unwrap();
    let sp = build_spaces(&g, &mesh, FamilyChoice::full()).unwrap();
    let u = sp.project_u(&|_: usize, _: Point| [1.0, 1.0], &[]);
    let zero_s = vec![0.0; sp.n_sigma];
    let zero_r = vec![0.0; sp.n_r];
    let n = weighted_norms(&g, &sp, &zero_s, &u, &zero_r).unwrap();
    assert!((n.u - 2f64.sqrt()).abs() < 1e-13);
    assert_eq!((n.sigma, n.r), (0.0, 0.0));
    let m = [[1.0, -2.0], [0.5, 3.0]];
    let sigma = sp.interpolate_stress(&Constant(m));
    let n = weighted_norms(&g, &sp, &sigma, &vec![0.0; sp.n_u], &zero_r).unwrap();
    let l2 = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    assert!((n.sigma - l2).abs() < 1e-12, "{} vs {l2}", n.sigma);
}

#[test]
fn physical_stresses_rescale_inclusions_only() {
    let g = decompose(&GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], 0.1, 0.01)).unwrap();
    let mesh = build_mesh(&g, 0.25).unwrap();
    let sp = build_spaces(&g, &mesh, FamilyChoice::full()).unwrap();
    let sigma = sp.interpolate_stress(&Constant([[2.0, 0.0], [0.0, 2.0]]));
    let (avg, int) = postprocess_stress(&g, &sp, &sigma);
    for i in 0..sp.n_sigma_bulk {
        assert_eq!((avg[i], int[i]), (sigma[i], sigma[i]));
    }
    for i in sp.n_sigma_bulk..sp.n_sigma {
        if sigma[i] == 1.0 {
            assert!((avg[i] - 10.0).abs() < 1e-13 && (int[i] - 0.1).abs() < 1e-15);
        }
        assert!((int[i] - 0.01 * avg[i]).abs() <= 1e-15 * avg[i].abs().max(1.0));
    }
}

#[test]
fn solution_norms_are_stable_in_h_and_aperture() {
    let g = decompose(&cantilever(crossing())).unwrap();
    let total = |g: &MixedDimGeometry, mesh: &MixedMesh| {
        let ls = solve_on(g, mesh, FamilyChoice::reduced(), &law(g), &loaded(g)).unwrap();
        let s = &ls.solution;
        let n = weighted_norms(g, &ls.spaces, &s.sigma, &s.u, &s.r).unwrap();
        n.sigma + n.u + n.r
    };
    let ratio = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut mesh = build_mesh(&g, 0.25).unwrap();
    let mut by_h = Vec::new();
    for _ in 0..3 {
        by_h.push(total(&g, &mesh));
        mesh = mesh.refine(&g).unwrap();
    }
    assert!(ratio(&by_h) < 2.0, "{by_h:?}");

    let mesh = build_mesh(&g, 0.25).unwrap();
    let by_eps: Vec<f64> = [1.0, 1e-2, 1e-4].iter().map(|&e| total(&with_apertures(&g, e), &mesh)).collect();
    assert!(ratio(&by_eps) < 2.0, "{by_eps:?}");
}

#[test]
fn vtk_files_per_dimension() {
    let g = decompose(&cantilever(crossing())).unwrap();
    let mesh = build_mesh(&g, 0.3).unwrap();
    let ls = solve_on(&g, &mesh, FamilyChoice::full(), &law(&g), &loaded(&g)).unwrap();
    let dir = std::env::temp_dir().join(format!("mdelast-vtk-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let files = write_vtk(&dir.join("run"), &g, &ls.spaces, &ls.solution).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["run_d2.vtk", "run_d1.vtk", "run_d0.vtk"]);
    for f in &files {
        let text = std::fs::read_to_string(f).unwrap();
        assert!(text.starts_with("# vtk DataFile Version"));
        assert!(text.contains("CELL_DATA"));
    }
    let point = match g.manifold(g.by_dim[0][0]).shape {
        Shape::Point(p) => p,
        _ => unreachable!(),
    };
    assert!(std::fs::read_to_string(&files[2]).unwrap().contains(&format!("{:e} {:e} 0", point[0], point[1])));
    std::fs::remove_dir_all(&dir).unwrap();
}
