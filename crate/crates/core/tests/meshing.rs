use std::collections::HashMap;

use mdelast::geometry::{decompose, dist, GeometryInput, MixedDimGeometry, Shape};
use mdelast::meshing::{build_mesh, orient, shape_ratio, MixedMesh};
use proptest::prelude::*;

fn geom(input: GeometryInput) -> MixedDimGeometry {
    decompose(&input).unwrap()
}

fn h_geometry() -> MixedDimGeometry {
    geom(
        GeometryInput::unit_square()
            .with_segment([0.25, 0.1], [0.25, 0.9], 1e-2, 1e-4)
            .with_segment([0.75, 0.1], [0.75, 0.9], 1e-2, 1e-4)
            .with_segment([0.25, 0.5], [0.75, 0.5], 1e-2, 1e-4),
    )
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Number of triangles adjacent to each mesh edge.
fn edge_use(mesh: &MixedMesh) -> HashMap<(usize, usize), usize> {
    let mut m = HashMap::new();
    for c in &mesh.cells {
        for t in c.triangles() {
            for k in 0..3 {
                let e = mesh.tri_edge(t, k);
                *m.entry(key(e[0], e[1])).or_insert(0) += 1;
            }
        }
    }
    m
}

/// Checks every structural invariant of a mesh against plain coordinate data.
fn check_mesh(g: &MixedDimGeometry, mesh: &MixedMesh) {
    let mut area = 0.0;
    let mut hmax: f64 = 0.0;
    for c in &mesh.cells {
        for t in c.triangles() {
            let [a, b, cc] = mesh.triangle_points(t);
            let o = orient(a, b, cc);
            assert!(o > 0.0, "triangle {t:?} is not counterclockwise");
            assert!(shape_ratio(a, b, cc) < 1e3);
            area += 0.5 * o;
            hmax = hmax.max(dist(a, b)).max(dist(b, cc)).max(dist(cc, a));
        }
    }
    assert!((area - 1.0).abs() < 1e-12, "area {area}");
    assert!((hmax - mesh.h).abs() <= 1e-14 * hmax);

    // conformity: an edge is shared by one or two triangles, one exactly on the polygon
    let uses = edge_use(mesh);
    let n_boundary: usize = mesh.boundary_facets.iter().map(Vec::len).sum();
    assert!(uses.values().all(|&n| n == 1 || n == 2));
    assert_eq!(uses.values().filter(|&&n| n == 1).count(), n_boundary);

    // trace facets coincide with the lower cells
    for (j, f) in g.interfaces.iter().enumerate() {
        let facets = mesh.trace_cells(j).unwrap();
        assert_eq!(facets.len(), mesh.cells[f.lower].len(), "interface {j}");
        for (k, tf) in facets.iter().enumerate() {
            assert_eq!(tf.lower_cell, k);
            match g.dim(f.lower) {
                1 => {
                    let t = &mesh.cells[f.upper].triangles()[tf.upper_cell];
                    let e = mesh.tri_edge(t, tf.local_facet);
                    let s = mesh.cells[f.lower].segments()[k];
                    let (p, q) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
                    let (a, b) = (mesh.vertices[s[0]], mesh.vertices[s[1]]);
                    let same = (dist(p, a) + dist(q, b)).min(dist(p, b) + dist(q, a));
                    assert!(same <= 1e-14, "interface {j} facet {k} off by {same}");
                    // the triangle lies on the side the interface normal points away from
                    let c = mesh.vertices[t[tf.local_facet]];
                    let x = [c[0] - a[0], c[1] - a[1]];
                    assert!(x[0] * f.normal[0] + x[1] * f.normal[1] < 0.0);
                }
                0 => {
                    let s = mesh.cells[f.upper].segments()[tf.upper_cell];
                    let Shape::Point(p) = g.manifold(f.lower).shape else {
                        panic!("lower manifold of interface {j} is not a point")
                    };
                    assert!(dist(mesh.vertices[s[tf.local_facet]], p) <= 1e-14);
                }
                d => panic!("unexpected lower dimension {d}"),
            }
        }
    }
}

#[test]
fn plain_square_half() {
    let g = geom(GeometryInput::unit_square());
    let mesh = build_mesh(&g, 0.5).unwrap();
    assert!(mesh.h <= 0.5);
    assert!(mesh.num_triangles() >= 4);
    check_mesh(&g, &mesh);
}

#[test]
fn line_edges_appear_once_per_side() {
    let g = geom(GeometryInput::unit_square().with_segment([0.0, 0.5], [1.0, 0.5], 1e-2, 1e-4));
    let mesh = build_mesh(&g, 0.25).unwrap();
    check_mesh(&g, &mesh);
    let on_line: Vec<(usize, usize)> = edge_use(&mesh)
        .keys()
        .copied()
        .filter(|&(a, b)| mesh.vertices[a][1] == 0.5 && mesh.vertices[b][1] == 0.5)
        .collect();
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for (j, f) in g.interfaces.iter().enumerate() {
        for tf in mesh.trace_cells(j).unwrap() {
            let t = &mesh.cells[f.upper].triangles()[tf.upper_cell];
            let e = mesh.tri_edge(t, tf.local_facet);
            *count.entry(key(e[0], e[1])).or_insert(0) += 1;
        }
    }
    assert!(!on_line.is_empty());
    assert_eq!(count.len(), on_line.len());
    for e in on_line {
        assert_eq!(count.get(&e), Some(&2), "edge {e:?}");
    }
}

#[test]
fn h_network_vertices_contain_intersections() {
    let g = h_geometry();
    let mesh = build_mesh(&g, 0.2).unwrap();
    check_mesh(&g, &mesh);
    let one_d: Vec<usize> = g.by_dim[1].clone();
    assert_eq!(one_d.len(), 5);
    for target in [[0.25, 0.5], [0.75, 0.5]] {
        let found = one_d
            .iter()
            .flat_map(|&i| mesh.cells[i].segments().iter().flatten())
            .any(|&v| mesh.vertices[v] == target);
        assert!(found, "no 1-d mesh vertex at {target:?}");
    }
}

#[test]
fn refinement_quadruples_triangles_and_halves_h() {
    let g = geom(GeometryInput::unit_square().with_segment([0.3, 0.5], [0.7, 0.5], 1e-2, 1e-4));
    let coarse = build_mesh(&g, 0.25).unwrap();
    let fine = coarse.refine(&g).unwrap();
    let finer = fine.refine(&g).unwrap();
    check_mesh(&g, &fine);
    check_mesh(&g, &finer);
    assert_eq!(fine.num_triangles(), 4 * coarse.num_triangles());
    assert!((fine.h - 0.5 * coarse.h).abs() <= 1e-15 * coarse.h);
    assert!((finer.h - 0.25 * coarse.h).abs() <= 1e-15 * coarse.h);
    for j in 0..g.interfaces.len() {
        assert_eq!(fine.trace_cells(j).unwrap().len(), 2 * coarse.trace_cells(j).unwrap().len());
    }
    let s = g.by_dim[1][0];
    assert_eq!(fine.cells[s].len(), 2 * coarse.cells[s].len());
}

#[test]
fn two_sides_of_a_segment_match() {
    let g = geom(GeometryInput::unit_square().with_segment([0.2, 0.3], [0.7, 0.6], 1e-2, 1e-4));
    let mesh = build_mesh(&g, 0.125).unwrap();
    let s = g.by_dim[1][0];
    let [j0, j1] = [g.hat_j[s][0], g.hat_j[s][1]];
    assert_eq!(mesh.trace_cells(j0).unwrap().len(), mesh.trace_cells(j1).unwrap().len());
    assert!(mesh.trace_cells(g.interfaces.len()).is_err());
}

#[test]
fn text_export_round_trips() {
    let g = h_geometry();
    let mesh = build_mesh(&g, 0.25).unwrap();
    let back = MixedMesh::from_text(&mesh.to_text()).unwrap();
    assert_eq!(mesh, back);
}

#[test]
fn meshing_is_deterministic() {
    let g = h_geometry();
    assert_eq!(build_mesh(&g, 0.2).unwrap(), build_mesh(&g, 0.2).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_segment_meshes_conform(
        x0 in 0.15f64..0.85, y0 in 0.15f64..0.85, angle in 0.0f64..std::f64::consts::TAU, len in 0.1f64..0.4,
        h in 0.1f64..0.3,
    ) {
        let b = [x0 + len * angle.cos(), y0 + len * angle.sin()];
        prop_assume!(b[0] > 0.1 && b[0] < 0.9 && b[1] > 0.1 && b[1] < 0.9);
        let g = geom(GeometryInput::unit_square().with_segment([x0, y0], b, 1e-2, 1e-4));
        let mesh = build_mesh(&g, h).unwrap();
        prop_assert!(mesh.h <= h);
        check_mesh(&g, &mesh);
    }
}
