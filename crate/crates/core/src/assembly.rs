//! Mass matrix and the five stiffness forms.
//!
//! Every assembler returns a matrix over *all* global dofs of its [`DofMap`];
//! [`assemble`] then removes the constrained rows and columns.
//!
//! Edge conventions follow the mesh: on an interior edge `n` points from `K⁻`
//! into `K⁺`, on a boundary edge it is the outward normal of the single
//! neighbour `K⁺`.
//!
//! * SIP-DG jump `⟦v⟧ = (v⁻ - v⁺) n`, or `v n` on the boundary.
//! * C0-IPG flux jump `⟦∂v/∂n⟧ = ∂v⁺/∂n - ∂v⁻/∂n`, or `-∂v/∂n` on the boundary.

use std::sync::Arc;

use nalgebra::{DMatrix, Point2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe_space::{BasisValues, DofMap, ElementKind};
use crate::quadrature::{edge_rule, triangle_rule};
use crate::sparse::{is_positive_definite, CsrMatrix, TripletBuilder};

const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// `-Δu = λu`, `u = 0` on the boundary.
    Dirichlet,
    /// `Δ²u = λu`, `u = ∂u/∂n = 0` on the boundary.
    Biharmonic,
}

pub fn default_sipdg_penalty(degree: u8) -> f64 {
    10.0 * f64::from(degree).powi(2)
}

pub fn default_c0ipg_penalty(degree: u8) -> f64 {
    5.0 * f64::from(degree).powi(2)
}

/// Stiffness and mass restricted to the free dofs.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub a: CsrMatrix,
    pub m: CsrMatrix,
    pub dofmap: Arc<DofMap>,
    pub problem: Problem,
    pub penalty: Option<f64>,
    pub level: u32,
    pub h: f64,
}

impl AssembledForm {
    pub fn kind(&self) -> ElementKind {
        self.dofmap.kind
    }

    pub fn num_free(&self) -> usize {
        self.a.nrows
    }

    /// Full check of the matrix invariants: symmetry of both matrices and
    /// positive definiteness of `M` and `A`. Factorizes both, so it costs as
    /// much as a linear solve.
    pub fn validate(&self) -> Result<()> {
        check_symmetric(&self.a, "stiffness")?;
        check_symmetric(&self.m, "mass")?;
        if !is_positive_definite(&self.m) {
            return Err(Error::InvalidParameter("mass matrix is not positive definite".into()));
        }
        if !is_positive_definite(&self.a) {
            return Err(Error::InvalidParameter(format!(
                "stiffness matrix of {} is not positive definite on the free dofs",
                self.dofmap.kind
            )));
        }
        Ok(())
    }
}

fn check_symmetric(a: &CsrMatrix, what: &str) -> Result<()> {
    if a.is_symmetric(SYMMETRY_TOLERANCE) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} matrix asymmetry {:e} exceeds tolerance",
            a.asymmetry()
        )))
    }
}

/// Assemble the form of `problem` for the element kind of `dofmap`, with
/// constrained dofs eliminated. `penalty` defaults per method.
pub fn assemble(dofmap: Arc<DofMap>, problem: Problem, penalty: Option<f64>) -> Result<AssembledForm> {
    if let Some(p) = penalty {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameter("penalty must be positive".into()));
        }
    }
    let (a, penalty) = match (problem, dofmap.kind) {
        (Problem::Dirichlet, ElementKind::LagrangeP(_)) => (assemble_conforming(&dofmap)?, None),
        (Problem::Dirichlet, ElementKind::DiscontinuousP(l)) => {
            let gamma = penalty.unwrap_or_else(|| default_sipdg_penalty(l));
            (assemble_sipdg(&dofmap, gamma)?, Some(gamma))
        }
        (Problem::Dirichlet, ElementKind::CrouzeixRaviart) => (assemble_cr(&dofmap)?, None),
        (Problem::Biharmonic, ElementKind::LagrangeP(k)) => {
            let sigma = penalty.unwrap_or_else(|| default_c0ipg_penalty(k));
            (assemble_c0ipg(&dofmap, sigma)?, Some(sigma))
        }
        (Problem::Biharmonic, ElementKind::Morley) => (assemble_morley(&dofmap)?, None),
        (problem, kind) => {
            return Err(Error::UnsupportedElement(format!("{kind} for the {problem:?} problem")));
        }
    };
    let m = assemble_mass(&dofmap)?;
    let free = dofmap.free_dofs();
    let form = AssembledForm {
        a: a.submatrix(free),
        m: m.submatrix(free),
        level: dofmap.level(),
        h: dofmap.mesh.h,
        dofmap,
        problem,
        penalty,
    };
    check_symmetric(&form.a, "stiffness")?;
    check_symmetric(&form.m, "mass")?;
    Ok(form)
}

/// Sum over triangles of `∫ integrand(φⱼ, φᵢ)`.
fn cell_integral(
    dofmap: &DofMap,
    degree: usize,
    integrand: impl Fn(&BasisValues, usize, usize) -> f64,
) -> Result<CsrMatrix> {
    let rule = triangle_rule(degree.max(1))?;
    let n = dofmap.local_dimension();
    let mut builder = TripletBuilder::new(dofmap.num_dofs, dofmap.num_dofs);
    let mut local = DMatrix::zeros(n, n);
    for t in 0..dofmap.mesh.num_triangles() {
        let el = dofmap.element(t);
        let jac = el.map.det.abs();
        local.fill(0.0);
        for (xi, w) in rule.iter() {
            let b = el.eval(xi);
            for i in 0..n {
                for j in 0..=i {
                    local[(i, j)] += w * jac * integrand(&b, i, j);
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                local[(j, i)] = local[(i, j)];
            }
        }
        let dofs = dofmap.local_dofs(t);
        builder.add_block(dofs, dofs, &local);
    }
    Ok(builder.build())
}

/// `Mᵢⱼ = (φⱼ, φᵢ)` over all dofs.
pub fn assemble_mass(dofmap: &DofMap) -> Result<CsrMatrix> {
    cell_integral(dofmap, 2 * dofmap.kind.polynomial_degree(), |b, i, j| b.values[i] * b.values[j])
}

/// Elementwise `Σ_K ∫ ∇φⱼ · ∇φᵢ`.
fn broken_stiffness(dofmap: &DofMap) -> Result<CsrMatrix> {
    let degree = 2 * (dofmap.kind.polynomial_degree() - 1);
    cell_integral(dofmap, degree, |b, i, j| b.gradients[i].dot(&b.gradients[j]))
}

/// Elementwise `Σ_K ∫ D²φⱼ : D²φᵢ`.
fn broken_hessian(dofmap: &DofMap) -> Result<CsrMatrix> {
    let degree = 2 * (dofmap.kind.polynomial_degree().saturating_sub(2));
    cell_integral(dofmap, degree, |b, i, j| b.hessians[i].dot(&b.hessians[j]))
}

fn wrong_kind(operation: &'static str, kind: ElementKind) -> Error {
    Error::WrongElementKind { operation, found: kind.to_string() }
}

pub fn assemble_conforming(dofmap: &DofMap) -> Result<CsrMatrix> {
    match dofmap.kind {
        ElementKind::LagrangeP(_) => broken_stiffness(dofmap),
        kind => Err(wrong_kind("conforming assembly", kind)),
    }
}

pub fn assemble_cr(dofmap: &DofMap) -> Result<CsrMatrix> {
    match dofmap.kind {
        ElementKind::CrouzeixRaviart => broken_stiffness(dofmap),
        kind => Err(wrong_kind("Crouzeix-Raviart assembly", kind)),
    }
}

pub fn assemble_morley(dofmap: &DofMap) -> Result<CsrMatrix> {
    match dofmap.kind {
        ElementKind::Morley => broken_hessian(dofmap),
        kind => Err(wrong_kind("Morley assembly", kind)),
    }
}

/// Traces of the basis functions of both neighbours on one edge.
struct EdgeSide {
    dofs: Vec<usize>,
    /// One entry per edge quadrature point.
    values: Vec<BasisValues>,
}

/// Stacked local dofs of an edge, `K⁻` first.
struct EdgeTraces {
    minus: Option<EdgeSide>,
    plus: EdgeSide,
    weights: Vec<f64>,
    normal: nalgebra::Vector2<f64>,
    length: f64,
}

impl EdgeTraces {
    fn dofs(&self) -> Vec<usize> {
        let mut out = self.minus.as_ref().map(|s| s.dofs.clone()).unwrap_or_default();
        out.extend_from_slice(&self.plus.dofs);
        out
    }

    fn is_boundary(&self) -> bool {
        self.minus.is_none()
    }

    /// Per quadrature point, the stacked vectors `(f(minus basis), f(plus basis))`.
    fn stacked(&self, minus_fn: impl Fn(&BasisValues, usize) -> f64, plus_fn: impl Fn(&BasisValues, usize) -> f64) -> Vec<Vec<f64>> {
        (0..self.weights.len())
            .map(|q| {
                let mut row = Vec::new();
                if let Some(m) = &self.minus {
                    let b = &m.values[q];
                    row.extend((0..b.values.len()).map(|i| minus_fn(b, i)));
                }
                let b = &self.plus.values[q];
                row.extend((0..b.values.len()).map(|i| plus_fn(b, i)));
                row
            })
            .collect()
    }
}

fn edge_traces(dofmap: &DofMap, edge: usize, degree: usize) -> Result<EdgeTraces> {
    let mesh = &dofmap.mesh;
    let e = &mesh.edges[edge];
    let rule = edge_rule(degree.max(1))?;
    let a = mesh.vertices[e.vertices[0]];
    let b = mesh.vertices[e.vertices[1]];
    let points: Vec<Point2<f64>> = rule.points.iter().map(|s| a + s.x * (b - a)).collect();
    let side = |t: usize| {
        let el = dofmap.element(t);
        EdgeSide {
            dofs: dofmap.local_dofs(t).to_vec(),
            values: points.iter().map(|x| el.eval_at_physical(x)).collect(),
        }
    };
    Ok(EdgeTraces {
        minus: e.minus.map(side),
        plus: side(e.plus),
        weights: rule.weights.iter().map(|w| w * e.length).collect(),
        normal: e.normal,
        length: e.length,
    })
}

/// `Σ_q w_q (xᵢ yⱼ + xⱼ yᵢ)` or `Σ_q w_q xᵢ xⱼ` blocks.
fn edge_block(weights: &[f64], x: &[Vec<f64>], y: Option<&[Vec<f64>]>, scale: f64) -> DMatrix<f64> {
    let n = x[0].len();
    let mut block = DMatrix::zeros(n, n);
    for (q, w) in weights.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                let v = match y {
                    Some(y) => x[q][i] * y[q][j] + x[q][j] * y[q][i],
                    None => x[q][i] * x[q][j],
                };
                block[(i, j)] += scale * w * v;
            }
        }
    }
    block
}

/// Pieces of the SIP-DG form; the assembled matrix is
/// `volume + consistency + γ · penalty`.
#[derive(Debug, Clone)]
pub struct SipdgTerms {
    pub volume: CsrMatrix,
    pub consistency: CsrMatrix,
    /// `Σ_e |e|⁻¹ ∫_e ⟦u⟧·⟦v⟧`.
    pub penalty: CsrMatrix,
}

impl SipdgTerms {
    pub fn matrix(&self, gamma: f64) -> CsrMatrix {
        self.volume.add_scaled(1.0, &self.consistency).add_scaled(gamma, &self.penalty)
    }

    /// Matrix of the squared DG norm `‖∇ₙv‖² + Σ_e |e|⁻¹ ‖⟦v⟧‖²_e`.
    pub fn norm_matrix(&self) -> CsrMatrix {
        self.volume.add_scaled(1.0, &self.penalty)
    }
}

pub fn sipdg_terms(dofmap: &DofMap) -> Result<SipdgTerms> {
    let ElementKind::DiscontinuousP(l) = dofmap.kind else {
        return Err(wrong_kind("SIP-DG assembly", dofmap.kind));
    };
    let volume = broken_stiffness(dofmap)?;
    let n = dofmap.num_dofs;
    let mut consistency = TripletBuilder::new(n, n);
    let mut penalty = TripletBuilder::new(n, n);
    for edge in 0..dofmap.mesh.num_edges() {
        let tr = edge_traces(dofmap, edge, 2 * l as usize)?;
        let nrm = tr.normal;
        let (jump, avg) = if tr.is_boundary() {
            (tr.stacked(|_, _| unreachable!(), |b, i| b.values[i]), tr.stacked(|_, _| unreachable!(), |b, i| b.gradients[i].dot(&nrm)))
        } else {
            (
                tr.stacked(|b, i| b.values[i], |b, i| -b.values[i]),
                tr.stacked(|b, i| 0.5 * b.gradients[i].dot(&nrm), |b, i| 0.5 * b.gradients[i].dot(&nrm)),
            )
        };
        let dofs = tr.dofs();
        consistency.add_block(&dofs, &dofs, &edge_block(&tr.weights, &jump, Some(&avg), -1.0));
        penalty.add_block(&dofs, &dofs, &edge_block(&tr.weights, &jump, None, 1.0 / tr.length));
    }
    Ok(SipdgTerms { volume, consistency: consistency.build(), penalty: penalty.build() })
}

pub fn assemble_sipdg(dofmap: &DofMap, gamma: f64) -> Result<CsrMatrix> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("penalty must be positive".into()));
    }
    Ok(sipdg_terms(dofmap)?.matrix(gamma))
}

/// Pieces of the C0 interior penalty form; the assembled matrix is
/// `volume + interior_consistency + boundary_consistency + σ (interior_penalty + boundary_penalty)`.
#[derive(Debug, Clone)]
pub struct C0ipgTerms {
    pub volume: CsrMatrix,
    pub interior_consistency: CsrMatrix,
    pub boundary_consistency: CsrMatrix,
    pub interior_penalty: CsrMatrix,
    pub boundary_penalty: CsrMatrix,
}

impl C0ipgTerms {
    pub fn penalty(&self) -> CsrMatrix {
        self.interior_penalty.add_scaled(1.0, &self.boundary_penalty)
    }

    pub fn matrix(&self, sigma: f64) -> CsrMatrix {
        self.volume
            .add_scaled(1.0, &self.interior_consistency)
            .add_scaled(1.0, &self.boundary_consistency)
            .add_scaled(sigma, &self.penalty())
    }
}

pub fn c0ipg_terms(dofmap: &DofMap) -> Result<C0ipgTerms> {
    let k = match dofmap.kind {
        ElementKind::LagrangeP(k) if k >= 2 => k as usize,
        kind => return Err(wrong_kind("C0 interior penalty assembly (needs Lagrange degree >= 2)", kind)),
    };
    let volume = broken_hessian(dofmap)?;
    let n = dofmap.num_dofs;
    let mut cons = [TripletBuilder::new(n, n), TripletBuilder::new(n, n)];
    let mut pen = [TripletBuilder::new(n, n), TripletBuilder::new(n, n)];
    for edge in 0..dofmap.mesh.num_edges() {
        let tr = edge_traces(dofmap, edge, 2 * k)?;
        let nrm = tr.normal;
        let dn = move |b: &BasisValues, i: usize| b.gradients[i].dot(&nrm);
        let dnn = move |b: &BasisValues, i: usize| nrm.dot(&(b.hessians[i] * nrm));
        let (slot, jump, avg) = if tr.is_boundary() {
            (1, tr.stacked(|_, _| unreachable!(), move |b, i| -dn(b, i)), tr.stacked(|_, _| unreachable!(), dnn))
        } else {
            (
                0,
                tr.stacked(move |b, i| -dn(b, i), dn),
                tr.stacked(move |b, i| 0.5 * dnn(b, i), move |b, i| 0.5 * dnn(b, i)),
            )
        };
        let dofs = tr.dofs();
        cons[slot].add_block(&dofs, &dofs, &edge_block(&tr.weights, &jump, Some(&avg), 1.0));
        pen[slot].add_block(&dofs, &dofs, &edge_block(&tr.weights, &jump, None, 1.0 / tr.length));
    }
    let [interior_consistency, boundary_consistency] = cons.map(TripletBuilder::build);
    let [interior_penalty, boundary_penalty] = pen.map(TripletBuilder::build);
    Ok(C0ipgTerms { volume, interior_consistency, boundary_consistency, interior_penalty, boundary_penalty })
}

pub fn assemble_c0ipg(dofmap: &DofMap, sigma: f64) -> Result<CsrMatrix> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter("penalty must be positive".into()));
    }
    Ok(c0ipg_terms(dofmap)?.matrix(sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe_space::build_dofmap;
    use crate::mesh::{build_mesh, Mesh, PolygonalDomain};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(level: u32) -> Arc<Mesh> {
        Arc::new(build_mesh(&PolygonalDomain::unit_square(), level).unwrap())
    }

    fn dofmap(level: u32, kind: ElementKind) -> Arc<DofMap> {
        Arc::new(build_dofmap(square(level), kind).unwrap())
    }

    fn max_diff(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
        a.add_scaled(-1.0, b).max_abs()
    }

    #[test]
    fn p1_mass_sums_to_area() {
        let dm = dofmap(2, ElementKind::LagrangeP(1));
        let m = assemble_mass(&dm).unwrap();
        let total: f64 = m.values.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p1_local_mass_matches_exact_integration() {
        let dm = dofmap(0, ElementKind::LagrangeP(1));
        let m = assemble_mass(&dm).unwrap().to_dense();
        // level 0: vertex 0 and vertex 2 are shared by both triangles
        let area = 0.5;
        let t0 = dm.mesh.triangles[0];
        let t1 = dm.mesh.triangles[1];
        for (i, &a) in t0.iter().enumerate() {
            for &b in &t0[i..] {
                let shared_a = t1.contains(&a);
                let shared_b = t1.contains(&b);
                let per_triangle = if a == b { 2.0 } else { 1.0 } * area / 12.0;
                let count = if shared_a && shared_b { 2.0 } else { 1.0 };
                assert!((m[(a, b)] - count * per_triangle).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dg_mass_is_block_diagonal() {
        let dm = dofmap(2, ElementKind::DiscontinuousP(1));
        let m = assemble_mass(&dm).unwrap();
        for i in 0..m.nrows {
            for (j, _) in m.row(i) {
                assert_eq!(i / 3, j / 3);
            }
        }
    }

    #[test]
    fn conforming_p1_level_one_is_four() {
        let dm = dofmap(1, ElementKind::LagrangeP(1));
        let form = assemble(dm, Problem::Dirichlet, None).unwrap();
        assert_eq!(form.num_free(), 1);
        assert!((form.a.get(0, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn conforming_rows_sum_to_zero() {
        for k in 1..=3 {
            let dm = dofmap(2, ElementKind::LagrangeP(k));
            let a = assemble_conforming(&dm).unwrap();
            let ones = vec![1.0; a.nrows];
            assert!(a.mul_vec(&ones).iter().all(|r| r.abs() < 1e-12));
        }
    }

    #[test]
    fn wrong_kinds_are_rejected() {
        let dg = dofmap(1, ElementKind::DiscontinuousP(1));
        assert!(matches!(assemble_conforming(&dg), Err(Error::WrongElementKind { .. })));
        assert!(assemble_cr(&dg).is_err());
        assert!(assemble_morley(&dg).is_err());
        let p1 = dofmap(1, ElementKind::LagrangeP(1));
        assert!(assemble_sipdg(&p1, 10.0).is_err());
        assert!(assemble_c0ipg(&p1, 10.0).is_err());
        assert!(assemble(dofmap(1, ElementKind::Morley), Problem::Dirichlet, None).is_err());
        assert!(assemble(p1, Problem::Dirichlet, Some(-1.0)).is_err());
    }

    #[test]
    fn sipdg_equals_conforming_on_continuous_functions() {
        let mesh = square(3);
        let p1 = build_dofmap(mesh.clone(), ElementKind::LagrangeP(1)).unwrap();
        let dg = build_dofmap(mesh.clone(), ElementKind::DiscontinuousP(1)).unwrap();
        let f = |p: &Point2<f64>| p.x * (1.0 - p.x) * (p.y * p.y - p.y) + 0.3 * p.x * p.y * (1.0 - p.y) * (1.0 - p.x);
        let u_cont = p1.interpolate(&f, None).unwrap();
        // insert the piecewise linear interpolant into the DG space
        let u_dg = dg.interpolate(&|x: &Point2<f64>| {
            let t = (0..mesh.num_triangles())
                .find(|&t| {
                    let r = mesh.affine_map(t).to_reference(x);
                    r.x > -1e-12 && r.y > -1e-12 && r.x + r.y < 1.0 + 1e-12
                })
                .unwrap();
            let r = mesh.affine_map(t).to_reference(x);
            let lam = [1.0 - r.x - r.y, r.x, r.y];
            mesh.triangles[t].iter().zip(lam).map(|(&v, l)| u_cont[v] * l).sum()
        }, None)
        .unwrap();
        let a_c = assemble_conforming(&p1).unwrap().bilinear(&u_cont, &u_cont);
        let a_dg = assemble_sipdg(&dg, 10.0).unwrap().bilinear(&u_dg, &u_dg);
        assert!((a_c - a_dg).abs() < 1e-12, "{a_c} vs {a_dg}");
    }

    #[test]
    fn sipdg_penalty_is_linear() {
        let dm = dofmap(2, ElementKind::DiscontinuousP(2));
        let terms = sipdg_terms(&dm).unwrap();
        let diff = terms.matrix(20.0).add_scaled(-1.0, &terms.matrix(10.0));
        assert!(max_diff(&diff, &terms.penalty.scale(10.0)) < 1e-12 * terms.matrix(10.0).max_abs());
    }

    #[test]
    fn sipdg_is_positive_definite_at_default_penalty() {
        let dm = dofmap(2, ElementKind::DiscontinuousP(1));
        let form = assemble(dm, Problem::Dirichlet, Some(10.0)).unwrap();
        form.validate().unwrap();
        let min = form.a.to_dense().symmetric_eigenvalues().min();
        assert!(min > 0.0);
    }

    #[test]
    fn cr_kills_constants_and_matches_midpoint_triangle() {
        let dm = dofmap(2, ElementKind::CrouzeixRaviart);
        let a = assemble_cr(&dm).unwrap();
        let ones = vec![1.0; a.nrows];
        assert!(a.bilinear(&ones, &ones).abs() < 1e-12);

        let mesh = square(0);
        let cr = build_dofmap(mesh.clone(), ElementKind::CrouzeixRaviart).unwrap();
        let el = cr.element(0);
        let g = el.eval(&Point2::new(0.25, 0.25)).gradients;
        // P1 gradients on the midpoint triangle whose vertex i is the midpoint of edge i
        let pts = mesh.triangle_points(0);
        let mids: Vec<Point2<f64>> = (0..3).map(|i| Point2::from((pts[(i + 1) % 3].coords + pts[(i + 2) % 3].coords) / 2.0)).collect();
        let mid_map = crate::mesh::AffineMap::from_points([mids[0], mids[1], mids[2]]);
        let ref_grads = [Vector2::new(-1.0, -1.0), Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)];
        let p1_grads: Vec<Vector2<f64>> = ref_grads.iter().map(|r| mid_map.inverse.transpose() * r).collect();
        for i in 0..3 {
            for j in 0..3 {
                let cr_ij = mesh.triangle_area(0) * g[i].dot(&g[j]);
                let p1_ij = mid_map.area() * p1_grads[i].dot(&p1_grads[j]);
                assert!((cr_ij - 4.0 * p1_ij).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn c0ipg_interior_patch_reproduces_hessian_energy() {
        let dm = dofmap(2, ElementKind::LagrangeP(2));
        let free = dm.unconstrained();
        let q = free.interpolate(&|p: &Point2<f64>| p.x * p.x, None).unwrap();
        let terms = c0ipg_terms(&free).unwrap();
        assert!((terms.volume.bilinear(&q, &q) - 4.0).abs() < 1e-10);
        assert!(terms.interior_penalty.bilinear(&q, &q).abs() < 1e-10);
        assert!(terms.interior_consistency.bilinear(&q, &q).abs() < 1e-10);

        let affine = free.interpolate(&|p: &Point2<f64>| 1.0 + 2.0 * p.x - p.y, None).unwrap();
        let interior = terms.volume.add_scaled(1.0, &terms.interior_consistency).add_scaled(20.0, &terms.interior_penalty);
        assert!(interior.mul_vec(&affine).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn c0ipg_penalty_is_linear() {
        let dm = dofmap(2, ElementKind::LagrangeP(2));
        let terms = c0ipg_terms(&dm).unwrap();
        let diff = terms.matrix(20.0).add_scaled(-1.0, &terms.matrix(5.0));
        assert!(max_diff(&diff, &terms.penalty().scale(15.0)) < 1e-12 * terms.matrix(20.0).max_abs());
    }

    #[test]
    fn morley_hessian_energy_and_affine_kernel() {
        let mesh = square(1);
        let dm = build_dofmap(mesh.clone(), ElementKind::Morley).unwrap().unconstrained();
        let f = |p: &Point2<f64>| p.x * p.x + p.y * p.y;
        let g = |p: &Point2<f64>| Vector2::new(2.0 * p.x, 2.0 * p.y);
        let u = dm.interpolate(&f, Some(&g)).unwrap();
        let a = assemble_morley(&dm).unwrap();
        assert!((a.bilinear(&u, &u) - 8.0 * mesh.total_area()).abs() < 1e-12);
        // single triangle
        let el = dm.element(3);
        let b = el.eval(&Point2::new(0.2, 0.3));
        let local: Vec<f64> = dm.local_dofs(3).iter().map(|&d| u[d]).collect();
        let hess: nalgebra::Matrix2<f64> = b.hessians.iter().zip(&local).map(|(h, c)| h * *c).sum();
        assert!((hess.dot(&hess) * mesh.triangle_area(3) - 8.0 * mesh.triangle_area(3)).abs() < 1e-12);

        let aff = dm
            .interpolate(&|p: &Point2<f64>| 3.0 - p.x + 0.5 * p.y, Some(&|_: &Point2<f64>| Vector2::new(-1.0, 0.5)))
            .unwrap();
        assert!(a.mul_vec(&aff).iter().all(|v| v.abs() < 1e-10));
        assert!(a.is_symmetric(1e-12));
    }

    #[test]
    fn all_forms_are_valid_at_default_penalties() {
        let cases = [
            (ElementKind::LagrangeP(1), Problem::Dirichlet),
            (ElementKind::LagrangeP(3), Problem::Dirichlet),
            (ElementKind::DiscontinuousP(1), Problem::Dirichlet),
            (ElementKind::DiscontinuousP(2), Problem::Dirichlet),
            (ElementKind::CrouzeixRaviart, Problem::Dirichlet),
            (ElementKind::LagrangeP(2), Problem::Biharmonic),
            (ElementKind::LagrangeP(3), Problem::Biharmonic),
            (ElementKind::Morley, Problem::Biharmonic),
        ];
        for (kind, problem) in cases {
            let form = assemble(dofmap(2, kind), problem, None).unwrap();
            form.validate().unwrap_or_else(|e| panic!("{kind}: {e}"));
        }
    }

    #[test]
    fn random_quadratic_forms_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let form = assemble(dofmap(3, ElementKind::CrouzeixRaviart), Problem::Dirichlet, None).unwrap();
        for _ in 0..5 {
            let v: Vec<f64> = (0..form.num_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(form.a.bilinear(&v, &v) > 0.0);
        }
    }
}
