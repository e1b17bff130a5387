//! Property checks run by `femeig selftest` and the acceptance suite.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Point2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::AssembledForm;
use crate::eigensolve::{contour_solve, pointwise_residual, solve_gevp, OperatorFunction};
use crate::error::Result;
use crate::fe_space::{build_dofmap, l2_project, transfer, ElementKind};
use crate::harness::{assemble_level, Method};
use crate::mesh::{build_mesh, DomainKind, Mesh, PolygonalDomain};
use crate::quadrature::{edge_rule, triangle_rule, MAX_DEGREE};

pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
pub const QUADRATURE_TOLERANCE: f64 = 1e-13;
pub const IDEMPOTENCE_TOLERANCE: f64 = 1e-12;
pub const CONTOUR_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn from_result(name: &str, result: Result<Check>) -> Check {
        result.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

/// Every method used by the studies, plus higher-degree variants.
pub fn all_methods() -> Vec<Method> {
    vec![
        Method::conforming(1),
        Method::conforming(2),
        Method::conforming(3),
        Method::sipdg(1),
        Method::sipdg(2),
        Method::CrouzeixRaviart,
        Method::c0ipg(2),
        Method::c0ipg(3),
        Method::Morley,
    ]
}

/// The five methods of the study matrix.
pub fn study_methods() -> Vec<Method> {
    vec![
        Method::conforming(1),
        Method::Sipdg { degree: 1, penalty: 10.0 },
        Method::CrouzeixRaviart,
        Method::C0ipg { degree: 2, penalty: 20.0 },
        Method::Morley,
    ]
}

fn relative_asymmetry(form: &AssembledForm) -> f64 {
    let rel = |m: &crate::sparse::CsrMatrix| m.asymmetry() / m.max_abs().max(f64::MIN_POSITIVE);
    rel(&form.a).max(rel(&form.m))
}

/// Symmetry of `A` and `M` and positive definiteness on the free dofs.
pub fn form_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for method in all_methods() {
        let mut domains = vec![(DomainKind::UnitSquare, 3)];
        if method.problem() == crate::assembly::Problem::Dirichlet {
            domains.push((DomainKind::LShape, 2));
        }
        for (domain, level) in domains {
            let name = format!("form {} on {domain:?} level {level}", method.label());
            out.push(Check::from_result(
                &name,
                assemble_level(domain, method, level).map(|form| {
                    let asym = relative_asymmetry(&form);
                    match form.validate() {
                        Ok(()) => Check::new(&name, asym <= SYMMETRY_TOLERANCE, format!("asymmetry {asym:.1e}, A and M SPD")),
                        Err(e) => Check::new(&name, false, format!("asymmetry {asym:.1e}, {e}")),
                    }
                }),
            ));
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Monomials `x^a y^b` up to each rule's degree against `a! b! / (a+b+2)!`.
pub fn quadrature_check() -> Check {
    let mut worst = 0.0f64;
    for degree in 1..=MAX_DEGREE {
        let (Ok(rule), Ok(edge)) = (triangle_rule(degree), edge_rule(degree)) else {
            return Check::new("quadrature exactness", false, format!("degree {degree} unsupported"));
        };
        for a in 0..=degree {
            for b in 0..=degree - a {
                let approx: f64 = rule.iter().map(|(p, w)| w * p.x.powi(a as i32) * p.y.powi(b as i32)).sum();
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                worst = worst.max((approx - exact).abs());
            }
            let approx: f64 = edge.iter().map(|(p, w)| w * p.x.powi(a as i32)).sum();
            worst = worst.max((approx - 1.0 / (a as f64 + 1.0)).abs());
        }
    }
    Check::new(
        "quadrature exactness",
        worst <= QUADRATURE_TOLERANCE,
        format!("max monomial error {worst:.1e} over degrees 1..={MAX_DEGREE}"),
    )
}

/// `‖f‖` over the mesh by the degree-10 rule.
pub fn l2_norm_on_mesh(mesh: &Mesh, f: &dyn Fn(&Point2<f64>) -> f64) -> f64 {
    let rule = triangle_rule(MAX_DEGREE).expect("supported degree");
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let map = mesh.affine_map(t);
        for (xi, w) in rule.iter() {
            let v = f(&map.to_physical(xi));
            acc += w * map.det.abs() * v * v;
        }
    }
    acc.sqrt()
}

fn random_cubic(rng: &mut ChaCha8Rng) -> impl Fn(&Point2<f64>) -> f64 {
    let c: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    move |p: &Point2<f64>| {
        let (x, y) = (p.x, p.y);
        c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y + c[6] * x * x * x + c[7] * x * x * y + c[8] * x * y * y + c[9] * y * y * y
    }
}

/// Idempotence and non-expansiveness of the L² projection for each element.
pub fn projection_checks() -> Vec<Check> {
    let kinds = [
        ElementKind::LagrangeP(1),
        ElementKind::LagrangeP(2),
        ElementKind::DiscontinuousP(1),
        ElementKind::CrouzeixRaviart,
        ElementKind::Morley,
    ];
    let mut out = Vec::new();
    for kind in kinds {
        let name = format!("L2 projection onto {kind}");
        out.push(Check::from_result(&name, projection_check(&name, kind)));
    }
    out
}

fn projection_check(name: &str, kind: ElementKind) -> Result<Check> {
    let mesh = Arc::new(build_mesh(&PolygonalDomain::unit_square(), 3)?);
    let dofmap = Arc::new(build_dofmap(mesh.clone(), kind)?);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a7);
    let mut idempotence = 0.0f64;
    let mut expansion = f64::NEG_INFINITY;
    for _ in 0..5 {
        let f = random_cubic(&mut rng);
        let p = l2_project(dofmap.clone(), &f)?;
        let pp = transfer(dofmap.clone(), &p)?;
        let scale = p.coefficients.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = p.coefficients.iter().zip(&pp.coefficients).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        idempotence = idempotence.max(diff / scale);
        expansion = expansion.max(p.l2_norm() - l2_norm_on_mesh(&mesh, &f));
    }
    Ok(Check::new(
        name,
        idempotence <= IDEMPOTENCE_TOLERANCE && expansion <= 1e-12,
        format!("idempotence {idempotence:.1e}, max(‖Pf‖ - ‖f‖) = {expansion:.1e} over 5 random cubics"),
    ))
}

/// Conforming eigenvalues on the square lie above `π²(m² + n²)`.
pub fn upper_bound_check() -> Check {
    let exact = [2.0, 5.0, 5.0, 8.0].map(|k| k * PI * PI);
    let run = || -> Result<Check> {
        let mut margin = f64::INFINITY;
        for degree in 1..=2 {
            for level in 2..=4 {
                let form = assemble_level(DomainKind::UnitSquare, Method::conforming(degree), level)?;
                let sol = solve_gevp(&form, 4)?;
                for (lh, l) in sol.eigenvalues.iter().zip(exact) {
                    margin = margin.min((lh - l) / l);
                }
            }
        }
        Ok(Check::new(
            "conforming eigenvalues bound exact ones from above",
            margin >= 0.0,
            format!("min relative (λ_h - λ)/λ = {margin:.2e} over P1, P2, levels 2..=4, 4 eigenvalues"),
        ))
    };
    Check::from_result("conforming upper bound", run())
}

fn residual_source(p: &Point2<f64>) -> f64 {
    (1.0 + p.x) * (2.0 * p.y + 0.5).sin()
}

/// Residual `‖T_n p_n f - p_n T f‖` with `T` from a level-6 solve, for coarse
/// levels 2, 3, 4; must decrease strictly.
pub fn residual_checks() -> Vec<Check> {
    study_methods()
        .into_iter()
        .map(|method| {
            let name = format!("pointwise residual decreases for {}", method.label());
            let run = || -> Result<Check> {
                let fine = assemble_level(DomainKind::UnitSquare, method, 6)?;
                let values: Vec<f64> = (2..=4)
                    .map(|l| pointwise_residual(&assemble_level(DomainKind::UnitSquare, method, l)?, &fine, &residual_source))
                    .collect::<Result<_>>()?;
                let decreasing = values.windows(2).all(|w| w[1] < w[0]);
                let shown: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
                Ok(Check::new(&name, decreasing, format!("levels 2, 3, 4 vs 6: {}", shown.join(", "))))
            };
            Check::from_result(&name, run())
        })
        .collect()
}

/// Contour eigenvalues inside a disk against the GEVP eigenvalues there.
pub fn contour_checks() -> Vec<Check> {
    let setups = [("around λ1", 2.0 * PI * PI, 10.0), ("around the 5π² cluster", 50.0, 12.0), ("empty region", 35.0, 5.0)];
    let form = match assemble_level(DomainKind::UnitSquare, Method::conforming(1), 5) {
        Ok(f) => f,
        Err(e) => return vec![Check::new("contour cross-validation", false, format!("error: {e}"))],
    };
    let gevp = match solve_gevp(&form, 8) {
        Ok(s) => s,
        Err(e) => return vec![Check::new("contour cross-validation", false, format!("error: {e}"))],
    };
    setups
        .iter()
        .map(|&(label, center, radius)| {
            let name = format!("contour {label} ({} dofs)", form.num_free());
            let run = || -> Result<Check> {
                let c = Complex64::new(center, 0.0);
                let opfun = OperatorFunction::from_form(&form, c, radius)?;
                let sol = contour_solve(&opfun, c, radius, 48, 8)?;
                let inside: Vec<f64> = gevp.eigenvalues.iter().copied().filter(|l| (l - center).abs() < radius).collect();
                let worst = inside.iter().zip(&sol.eigenvalues).fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / a));
                let passed = inside.len() == sol.len() && worst <= CONTOUR_TOLERANCE;
                Ok(Check::new(
                    &name,
                    passed,
                    format!("{} inside, contour found {}, max relative difference {worst:.1e}", inside.len(), sol.len()),
                ))
            };
            Check::from_result(&name, run())
        })
        .collect()
}

/// All checks, in a fixed order.
pub fn run_all() -> Vec<Check> {
    let mut out = form_checks();
    out.push(quadrature_check());
    out.extend(projection_checks());
    out.push(upper_bound_check());
    out.extend(residual_checks());
    out.extend(contour_checks());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_and_projection_checks_pass() {
        let q = quadrature_check();
        assert!(q.passed, "{q:?}");
        for c in projection_checks() {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn l2_norm_on_mesh_of_constant_is_sqrt_area() {
        let mesh = build_mesh(&PolygonalDomain::l_shape(), 2).unwrap();
        assert!((l2_norm_on_mesh(&mesh, &|_| 1.0) - mesh.total_area().sqrt()).abs() < 1e-13);
    }

    #[test]
    fn failed_results_become_failed_checks() {
        let c = Check::from_result("x", Err(crate::Error::SaturatedRate));
        assert!(!c.passed);
        assert!(c.detail.starts_with("error:"));
    }
}
