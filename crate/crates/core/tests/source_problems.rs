use std::f64::consts::PI;
use std::sync::Arc;

use femeig::assembly::{sipdg_terms, Problem};
use femeig::eigensolve::{discrete_solution, solve_gevp_matrices};
use femeig::fe_space::{build_dofmap, l2_project, ElementKind, FeFunction};
use femeig::harness::{assemble_level, fit_rate, Method};
use femeig::mesh::{build_mesh, DomainKind, PolygonalDomain};
use femeig::quadrature::triangle_rule;
use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn l2_error(u: &FeFunction, exact: &dyn Fn(&Point2<f64>) -> f64) -> f64 {
    let rule = triangle_rule(10).unwrap();
    let full = u.full_coefficients();
    let mesh = &u.dofmap.mesh;
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let map = mesh.affine_map(t);
        for (xi, w) in rule.iter() {
            let d = u.value_in(t, xi, &full) - exact(&map.to_physical(xi));
            acc += w * map.det.abs() * d * d;
        }
    }
    acc.sqrt()
}

fn sin_sin(p: &Point2<f64>) -> f64 {
    (PI * p.x).sin() * (PI * p.y).sin()
}

fn source_rate(method: Method) -> f64 {
    let f = |p: &Point2<f64>| 2.0 * PI * PI * sin_sin(p);
    let (mut h, mut e) = (Vec::new(), Vec::new());
    for level in 3..=6 {
        let form = assemble_level(DomainKind::UnitSquare, method, level).unwrap();
        let u = discrete_solution(&form, &f).unwrap();
        h.push(form.h);
        e.push(l2_error(&u, &sin_sin));
    }
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    fit_rate(&h[1..], &e[1..]).unwrap()
}

#[test]
fn conforming_source_rate() {
    let r = source_rate(Method::conforming(1));
    assert!(r >= 1.85, "{r}");
}

#[test]
fn sipdg_source_rate() {
    // the guaranteed DG-norm rate is 1; L2 is observed at 2
    let r = source_rate(Method::sipdg(1));
    assert!(r >= 0.85, "{r}");
    assert!(r >= 1.8, "{r}");
}

#[test]
fn crouzeix_raviart_source_rate() {
    let r = source_rate(Method::CrouzeixRaviart);
    assert!(r >= 1.85, "{r}");
}

#[test]
fn p1_projection_rate() {
    let (mut h, mut e) = (Vec::new(), Vec::new());
    for level in 3..=6 {
        let mesh = Arc::new(build_mesh(&PolygonalDomain::unit_square(), level).unwrap());
        let h_level = mesh.h;
        let dofmap = Arc::new(build_dofmap(mesh, ElementKind::LagrangeP(1)).unwrap());
        e.push(l2_error(&l2_project(dofmap, &sin_sin).unwrap(), &sin_sin));
        h.push(h_level);
    }
    let r = fit_rate(&h[1..], &e[1..]).unwrap();
    assert!((r - 2.0).abs() < 0.1, "{r}");
}

#[test]
fn projection_errors_decrease_for_smooth_fields() {
    let fields: [&dyn Fn(&Point2<f64>) -> f64; 3] = [
        &sin_sin,
        &|p| (p.x + 2.0 * p.y).exp(),
        &|p| 1.0 / (1.0 + p.x * p.x + p.y * p.y),
    ];
    let kinds = [ElementKind::LagrangeP(1), ElementKind::DiscontinuousP(1), ElementKind::CrouzeixRaviart, ElementKind::Morley];
    for kind in kinds {
        for f in fields {
            let errors: Vec<f64> = (1..=4)
                .map(|level| {
                    let mesh = Arc::new(build_mesh(&PolygonalDomain::unit_square(), level).unwrap());
                    let dofmap = Arc::new(build_dofmap(mesh, kind).unwrap().unconstrained());
                    l2_error(&l2_project(dofmap, f).unwrap(), f)
                })
                .collect();
            assert!(errors.windows(2).all(|w| w[1] < w[0]), "{kind}: {errors:?}");
        }
    }
}

#[test]
fn sipdg_poincare_constant_is_mesh_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lowest = Vec::new();
    for level in 2..=4 {
        let mesh = Arc::new(build_mesh(&PolygonalDomain::unit_square(), level).unwrap());
        let dofmap = build_dofmap(mesh, ElementKind::DiscontinuousP(1)).unwrap();
        let norm = sipdg_terms(&dofmap).unwrap().norm_matrix();
        let form = femeig::assembly::assemble(Arc::new(dofmap), Problem::Dirichlet, None).unwrap();
        let lambda = solve_gevp_matrices(&norm, &form.m, 1).unwrap().eigenvalues[0];
        lowest.push(lambda);
        for _ in 0..5 {
            let v: Vec<f64> = (0..form.num_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(form.m.bilinear(&v, &v) <= norm.bilinear(&v, &v) / lambda * (1.0 + 1e-10));
        }
    }
    // a single constant C = 1/min λ serves every mesh
    let c = 1.0 / lowest.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(c < 1.0, "{lowest:?}");
    assert!(lowest.windows(2).all(|w| (w[1] - w[0]).abs() < 0.1 * w[0]), "{lowest:?}");
}
