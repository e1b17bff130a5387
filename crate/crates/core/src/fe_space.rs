//! Element bases, degree-of-freedom maps and the L² projection.
//!
//! Lagrange and discontinuous bases are nodal on the reference triangle and
//! mapped affinely. The Crouzeix-Raviart basis `1 - 2λᵢ` is attached to the
//! midpoint of the edge opposite vertex `i`. The Morley basis is built on each
//! physical triangle directly, because its normal-derivative functionals use
//! the mesh's stored edge normals: two neighbours then agree on the sign of a
//! shared degree of freedom.
//!
//! Local ordering inside a triangle: vertices `0, 1, 2`, then edge nodes by
//! local edge (edge `i` is opposite vertex `i`, running from vertex `i+1` to
//! vertex `i+2`), then interior nodes.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Point2, Vector2};

use crate::assembly::assemble_mass;
use crate::error::{Error, Result};
use crate::mesh::{AffineMap, Mesh};
use crate::quadrature::{triangle_rule, MAX_DEGREE};
use crate::sparse::LdlFactor;

/// How an element kind imposes the homogeneous boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletStrategy {
    Strong,
    ViaPenalty,
    Midpoint,
    MorleyClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    LagrangeP(u8),
    DiscontinuousP(u8),
    CrouzeixRaviart,
    Morley,
}

impl ElementKind {
    pub fn validate(self) -> Result<Self> {
        match self {
            ElementKind::LagrangeP(k) if !(1..=3).contains(&k) => {
                Err(Error::UnsupportedElement(format!("Lagrange degree {k} (supported 1..=3)")))
            }
            ElementKind::DiscontinuousP(l) if !(1..=2).contains(&l) => {
                Err(Error::UnsupportedElement(format!("discontinuous degree {l} (supported 1..=2)")))
            }
            kind => Ok(kind),
        }
    }

    pub fn polynomial_degree(self) -> usize {
        match self {
            ElementKind::LagrangeP(k) | ElementKind::DiscontinuousP(k) => k as usize,
            ElementKind::CrouzeixRaviart => 1,
            ElementKind::Morley => 2,
        }
    }

    pub fn local_dimension(self) -> usize {
        match self {
            ElementKind::LagrangeP(k) | ElementKind::DiscontinuousP(k) => {
                let k = k as usize;
                (k + 1) * (k + 2) / 2
            }
            ElementKind::CrouzeixRaviart => 3,
            ElementKind::Morley => 6,
        }
    }

    pub fn dirichlet_strategy(self) -> DirichletStrategy {
        match self {
            ElementKind::LagrangeP(_) => DirichletStrategy::Strong,
            ElementKind::DiscontinuousP(_) => DirichletStrategy::ViaPenalty,
            ElementKind::CrouzeixRaviart => DirichletStrategy::Midpoint,
            ElementKind::Morley => DirichletStrategy::MorleyClamped,
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, ElementKind::LagrangeP(_))
    }
}

impl std::fmt::Display for ElementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ElementKind::LagrangeP(k) => write!(f, "P{k}"),
            ElementKind::DiscontinuousP(l) => write!(f, "DG-P{l}"),
            ElementKind::CrouzeixRaviart => write!(f, "Crouzeix-Raviart"),
            ElementKind::Morley => write!(f, "Morley"),
        }
    }
}

/// Values, gradients and Hessians of every local basis function at one point.
#[derive(Debug, Clone)]
pub struct BasisValues {
    pub values: Vec<f64>,
    pub gradients: Vec<Vector2<f64>>,
    pub hessians: Vec<Matrix2<f64>>,
}

impl BasisValues {
    fn with_capacity(n: usize) -> Self {
        Self { values: Vec::with_capacity(n), gradients: Vec::with_capacity(n), hessians: Vec::with_capacity(n) }
    }
}

/// Value and derivatives up to second order of `x^a y^b`.
fn monomial(a: i32, b: i32, x: f64, y: f64) -> (f64, Vector2<f64>, Matrix2<f64>) {
    let p = |base: f64, e: i32| if e < 0 { 0.0 } else { base.powi(e) };
    let (fa, fb) = (a as f64, b as f64);
    let v = p(x, a) * p(y, b);
    let gx = fa * p(x, a - 1) * p(y, b);
    let gy = fb * p(x, a) * p(y, b - 1);
    let hxx = fa * (fa - 1.0) * p(x, a - 2) * p(y, b);
    let hxy = fa * fb * p(x, a - 1) * p(y, b - 1);
    let hyy = fb * (fb - 1.0) * p(x, a) * p(y, b - 2);
    (v, Vector2::new(gx, gy), Matrix2::new(hxx, hxy, hxy, hyy))
}

fn exponents(degree: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for total in 0..=degree as i32 {
        for b in 0..=total {
            out.push((total - b, b));
        }
    }
    out
}

const REFERENCE_VERTICES: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];

/// Nodal Lagrange basis of degree `k` on the reference triangle.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    pub degree: usize,
    pub nodes: Vec<Point2<f64>>,
    exponents: Vec<(i32, i32)>,
    /// Column `i` holds the monomial coefficients of basis function `i`.
    coefficients: DMatrix<f64>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Self {
        let k = degree as f64;
        let mut nodes: Vec<Point2<f64>> = REFERENCE_VERTICES.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        for i in 0..3 {
            let (sx, sy) = REFERENCE_VERTICES[(i + 1) % 3];
            let (ex, ey) = REFERENCE_VERTICES[(i + 2) % 3];
            for m in 1..degree {
                let t = m as f64 / k;
                nodes.push(Point2::new(sx + t * (ex - sx), sy + t * (ey - sy)));
            }
        }
        for j in 1..degree {
            for i in 1..degree - j {
                nodes.push(Point2::new(i as f64 / k, j as f64 / k));
            }
        }
        let exponents = exponents(degree);
        let n = exponents.len();
        assert_eq!(nodes.len(), n);
        let vandermonde = DMatrix::from_fn(n, n, |r, c| monomial(exponents[c].0, exponents[c].1, nodes[r].x, nodes[r].y).0);
        let coefficients = vandermonde.try_inverse().expect("unisolvent lattice");
        Self { degree, nodes, exponents, coefficients }
    }

    pub fn eval(&self, xi: &Point2<f64>) -> BasisValues {
        let monos: Vec<_> = self.exponents.iter().map(|&(a, b)| monomial(a, b, xi.x, xi.y)).collect();
        let n = monos.len();
        let mut out = BasisValues::with_capacity(n);
        for i in 0..n {
            let mut v = 0.0;
            let mut g = Vector2::zeros();
            let mut h = Matrix2::zeros();
            for (j, (mv, mg, mh)) in monos.iter().enumerate() {
                let c = self.coefficients[(j, i)];
                v += c * mv;
                g += c * mg;
                h += c * mh;
            }
            out.values.push(v);
            out.gradients.push(g);
            out.hessians.push(h);
        }
        out
    }
}

/// Crouzeix-Raviart basis on the reference triangle: `φᵢ = 1 - 2λᵢ`.
pub fn crouzeix_raviart_eval(xi: &Point2<f64>) -> BasisValues {
    let lambda = [1.0 - xi.x - xi.y, xi.x, xi.y];
    let grads = [Vector2::new(-1.0, -1.0), Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)];
    let mut out = BasisValues::with_capacity(3);
    for i in 0..3 {
        out.values.push(1.0 - 2.0 * lambda[i]);
        out.gradients.push(-2.0 * grads[i]);
        out.hessians.push(Matrix2::zeros());
    }
    out
}

/// Morley basis on a concrete triangle with given edge normals.
#[derive(Debug, Clone)]
pub struct MorleyElement {
    center: Point2<f64>,
    scale: f64,
    coefficients: DMatrix<f64>,
}

impl MorleyElement {
    /// `normals[i]` is the normal used for the derivative functional on the
    /// edge opposite vertex `i`.
    pub fn new(points: [Point2<f64>; 3], normals: [Vector2<f64>; 3]) -> Self {
        let center = Point2::from((points[0].coords + points[1].coords + points[2].coords) / 3.0);
        let scale = (0..3).map(|i| (points[(i + 1) % 3] - points[i]).norm()).fold(0.0, f64::max);
        let exps = exponents(2);
        let local = |p: &Point2<f64>| (p - center) / scale;
        let mut functionals = DMatrix::zeros(6, 6);
        for (c, &(a, b)) in exps.iter().enumerate() {
            for r in 0..3 {
                let s = local(&points[r]);
                functionals[(r, c)] = monomial(a, b, s.x, s.y).0;
                let mid = Point2::from((points[(r + 1) % 3].coords + points[(r + 2) % 3].coords) / 2.0);
                let s = local(&mid);
                functionals[(3 + r, c)] = monomial(a, b, s.x, s.y).1.dot(&normals[r]) / scale;
            }
        }
        let coefficients = functionals.try_inverse().expect("Morley functionals are unisolvent");
        Self { center, scale, coefficients }
    }

    pub fn eval_physical(&self, x: &Point2<f64>) -> BasisValues {
        let s = (x - self.center) / self.scale;
        let monos: Vec<_> = exponents(2).iter().map(|&(a, b)| monomial(a, b, s.x, s.y)).collect();
        let mut out = BasisValues::with_capacity(6);
        for i in 0..6 {
            let mut v = 0.0;
            let mut g = Vector2::zeros();
            let mut h = Matrix2::zeros();
            for (j, (mv, mg, mh)) in monos.iter().enumerate() {
                let c = self.coefficients[(j, i)];
                v += c * mv;
                g += c * mg;
                h += c * mh;
            }
            out.values.push(v);
            out.gradients.push(g / self.scale);
            out.hessians.push(h / (self.scale * self.scale));
        }
        out
    }
}

fn reference_outward_normals() -> [Vector2<f64>; 3] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [Vector2::new(s, s), Vector2::new(-1.0, 0.0), Vector2::new(0.0, -1.0)]
}

/// Evaluate the local basis of `kind` on the reference triangle.
///
/// For the Morley element the derivative functionals use the outward normals
/// of the reference triangle.
pub fn basis_eval(kind: ElementKind, xi: &Point2<f64>) -> Result<BasisValues> {
    Ok(match kind.validate()? {
        ElementKind::LagrangeP(k) | ElementKind::DiscontinuousP(k) => LagrangeBasis::new(k as usize).eval(xi),
        ElementKind::CrouzeixRaviart => crouzeix_raviart_eval(xi),
        ElementKind::Morley => {
            let pts = REFERENCE_VERTICES.map(|(x, y)| Point2::new(x, y));
            MorleyElement::new(pts, reference_outward_normals()).eval_physical(xi)
        }
    })
}

/// Local basis of one mesh triangle, evaluated in physical coordinates.
#[derive(Debug, Clone)]
pub struct ElementBasis<'a> {
    pub map: AffineMap,
    kind: LocalKind<'a>,
}

#[derive(Debug, Clone)]
enum LocalKind<'a> {
    Nodal(&'a LagrangeBasis),
    CrouzeixRaviart,
    Morley(MorleyElement),
}

impl ElementBasis<'_> {
    /// Physical values, gradients and Hessians at reference point `xi`.
    pub fn eval(&self, xi: &Point2<f64>) -> BasisValues {
        let mut out = match &self.kind {
            LocalKind::Nodal(b) => b.eval(xi),
            LocalKind::CrouzeixRaviart => crouzeix_raviart_eval(xi),
            LocalKind::Morley(m) => return m.eval_physical(&self.map.to_physical(xi)),
        };
        let inv = self.map.inverse;
        let inv_t = inv.transpose();
        for g in out.gradients.iter_mut() {
            *g = inv_t * *g;
        }
        for h in out.hessians.iter_mut() {
            *h = inv_t * *h * inv;
        }
        out
    }

    pub fn eval_at_physical(&self, x: &Point2<f64>) -> BasisValues {
        self.eval(&self.map.to_reference(x))
    }
}

/// Association of global degrees of freedom with mesh entities.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub kind: ElementKind,
    pub mesh: Arc<Mesh>,
    pub num_dofs: usize,
    local_dim: usize,
    cell_dofs: Vec<usize>,
    pub constrained: Vec<bool>,
    free: Vec<usize>,
    free_index: Vec<Option<usize>>,
    lagrange: Option<LagrangeBasis>,
}

/// Build the degree-of-freedom map of `kind` on `mesh`.
pub fn build_dofmap(mesh: Arc<Mesh>, kind: ElementKind) -> Result<DofMap> {
    let kind = kind.validate()?;
    let nv = mesh.num_vertices();
    let ne = mesh.num_edges();
    let nt = mesh.num_triangles();
    let local_dim = kind.local_dimension();
    let mut cell_dofs = Vec::with_capacity(nt * local_dim);
    let mut constrained;
    let num_dofs;
    match kind {
        ElementKind::LagrangeP(k) => {
            let k = k as usize;
            let per_edge = k - 1;
            let interior = local_dim - 3 - 3 * per_edge;
            num_dofs = nv + ne * per_edge + nt * interior;
            constrained = vec![false; num_dofs];
            for (v, &b) in mesh.boundary_vertex.iter().enumerate() {
                constrained[v] = b;
            }
            for (e, edge) in mesh.edges.iter().enumerate() {
                for s in 0..per_edge {
                    constrained[nv + e * per_edge + s] = edge.boundary;
                }
            }
            for (t, tri) in mesh.triangles.iter().enumerate() {
                cell_dofs.extend_from_slice(tri);
                for i in 0..3 {
                    let start = tri[(i + 1) % 3];
                    let e = mesh.triangle_edges[t][i];
                    let forward = mesh.edges[e].vertices[0] == start;
                    for m in 1..k {
                        let s = if forward { m - 1 } else { k - 1 - m };
                        cell_dofs.push(nv + e * per_edge + s);
                    }
                }
                for j in 0..interior {
                    cell_dofs.push(nv + ne * per_edge + t * interior + j);
                }
            }
        }
        ElementKind::DiscontinuousP(_) => {
            num_dofs = nt * local_dim;
            constrained = vec![false; num_dofs];
            cell_dofs.extend(0..num_dofs);
        }
        ElementKind::CrouzeixRaviart => {
            num_dofs = ne;
            constrained = mesh.edges.iter().map(|e| e.boundary).collect();
            for te in &mesh.triangle_edges {
                cell_dofs.extend_from_slice(te);
            }
        }
        ElementKind::Morley => {
            num_dofs = nv + ne;
            constrained = mesh.boundary_vertex.clone();
            constrained.extend(mesh.edges.iter().map(|e| e.boundary));
            for (t, tri) in mesh.triangles.iter().enumerate() {
                cell_dofs.extend_from_slice(tri);
                cell_dofs.extend(mesh.triangle_edges[t].iter().map(|e| nv + e));
            }
        }
    }
    let lagrange = match kind {
        ElementKind::LagrangeP(k) | ElementKind::DiscontinuousP(k) => Some(LagrangeBasis::new(k as usize)),
        _ => None,
    };
    let mut dofmap = DofMap {
        kind,
        mesh,
        num_dofs,
        local_dim,
        cell_dofs,
        constrained: Vec::new(),
        free: Vec::new(),
        free_index: Vec::new(),
        lagrange,
    };
    dofmap.set_constraints(std::mem::take(&mut constrained));
    Ok(dofmap)
}

impl DofMap {
    fn set_constraints(&mut self, constrained: Vec<bool>) {
        self.free = (0..self.num_dofs).filter(|&i| !constrained[i]).collect();
        self.free_index = vec![None; self.num_dofs];
        for (k, &i) in self.free.iter().enumerate() {
            self.free_index[i] = Some(k);
        }
        self.constrained = constrained;
    }

    /// Same space with every boundary constraint lifted.
    pub fn unconstrained(&self) -> DofMap {
        let mut out = self.clone();
        out.set_constraints(vec![false; self.num_dofs]);
        out
    }

    pub fn local_dimension(&self) -> usize {
        self.local_dim
    }

    pub fn local_dofs(&self, t: usize) -> &[usize] {
        &self.cell_dofs[t * self.local_dim..(t + 1) * self.local_dim]
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn free_index(&self, dof: usize) -> Option<usize> {
        self.free_index[dof]
    }

    pub fn level(&self) -> u32 {
        self.mesh.level
    }

    pub fn element(&self, t: usize) -> ElementBasis<'_> {
        let map = self.mesh.affine_map(t);
        let kind = match self.kind {
            ElementKind::LagrangeP(_) | ElementKind::DiscontinuousP(_) => {
                LocalKind::Nodal(self.lagrange.as_ref().expect("nodal basis"))
            }
            ElementKind::CrouzeixRaviart => LocalKind::CrouzeixRaviart,
            ElementKind::Morley => {
                let normals = self.mesh.triangle_edges[t].map(|e| self.mesh.edges[e].normal);
                LocalKind::Morley(MorleyElement::new(self.mesh.triangle_points(t), normals))
            }
        };
        ElementBasis { map, kind }
    }

    /// Expand free coefficients to all global dofs (zeros on constrained ones).
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.num_free());
        let mut full = vec![0.0; self.num_dofs];
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = free[k];
        }
        full
    }

    /// Restrict a global vector to the free dofs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Interpolate a smooth field. The gradient is only used by the Morley
    /// element's normal-derivative dofs. Returns one value per global dof.
    pub fn interpolate(
        &self,
        f: &dyn Fn(&Point2<f64>) -> f64,
        gradient: Option<&dyn Fn(&Point2<f64>) -> Vector2<f64>>,
    ) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let mut out = vec![0.0; self.num_dofs];
        match self.kind {
            ElementKind::LagrangeP(_) | ElementKind::DiscontinuousP(_) => {
                let basis = self.lagrange.as_ref().expect("nodal basis");
                for t in 0..mesh.num_triangles() {
                    let map = mesh.affine_map(t);
                    for (node, &dof) in basis.nodes.iter().zip(self.local_dofs(t)) {
                        out[dof] = f(&map.to_physical(node));
                    }
                }
            }
            ElementKind::CrouzeixRaviart => {
                for (e, edge) in mesh.edges.iter().enumerate() {
                    let mid = Point2::from((mesh.vertices[edge.vertices[0]].coords + mesh.vertices[edge.vertices[1]].coords) / 2.0);
                    out[e] = f(&mid);
                }
            }
            ElementKind::Morley => {
                let gradient = gradient.ok_or_else(|| {
                    Error::InvalidParameter("Morley interpolation needs the gradient of the field".into())
                })?;
                let nv = mesh.num_vertices();
                for (v, p) in mesh.vertices.iter().enumerate() {
                    out[v] = f(p);
                }
                for (e, edge) in mesh.edges.iter().enumerate() {
                    let mid = Point2::from((mesh.vertices[edge.vertices[0]].coords + mesh.vertices[edge.vertices[1]].coords) / 2.0);
                    out[nv + e] = gradient(&mid).dot(&edge.normal);
                }
            }
        }
        Ok(out)
    }
}

/// A discrete function: coefficients on the free dofs of a [`DofMap`].
#[derive(Debug, Clone)]
pub struct FeFunction {
    pub dofmap: Arc<DofMap>,
    pub coefficients: Vec<f64>,
}

impl FeFunction {
    pub fn new(dofmap: Arc<DofMap>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != dofmap.num_free() {
            return Err(Error::InvalidParameter(format!(
                "coefficient length {} does not match {} free dofs",
                coefficients.len(),
                dofmap.num_free()
            )));
        }
        Ok(Self { dofmap, coefficients })
    }

    pub fn zero(dofmap: Arc<DofMap>) -> Self {
        let n = dofmap.num_free();
        Self { dofmap, coefficients: vec![0.0; n] }
    }

    pub fn full_coefficients(&self) -> Vec<f64> {
        self.dofmap.expand(&self.coefficients)
    }

    /// Value at reference point `xi` of triangle `t`.
    pub fn value_in(&self, t: usize, xi: &Point2<f64>, full: &[f64]) -> f64 {
        let basis = self.dofmap.element(t).eval(xi);
        self.dofmap.local_dofs(t).iter().zip(&basis.values).map(|(&d, v)| full[d] * v).sum()
    }

    /// L² norm by quadrature.
    pub fn l2_norm(&self) -> f64 {
        let rule = triangle_rule(2 * self.dofmap.kind.polynomial_degree()).expect("supported degree");
        let full = self.full_coefficients();
        let mut acc = 0.0;
        for t in 0..self.dofmap.mesh.num_triangles() {
            let el = self.dofmap.element(t);
            let area2 = el.map.det.abs();
            let dofs = self.dofmap.local_dofs(t);
            for (xi, w) in rule.iter() {
                let b = el.eval(xi);
                let u: f64 = dofs.iter().zip(&b.values).map(|(&d, v)| full[d] * v).sum();
                acc += w * area2 * u * u;
            }
        }
        acc.sqrt()
    }
}

/// Load vector `(f, φᵢ)` over the free dofs, by quadrature of the given degree.
pub fn load_vector(dofmap: &DofMap, f: &dyn Fn(&Point2<f64>) -> f64, degree: usize) -> Result<Vec<f64>> {
    let rule = triangle_rule(degree)?;
    let mut full = vec![0.0; dofmap.num_dofs];
    for t in 0..dofmap.mesh.num_triangles() {
        let el = dofmap.element(t);
        let area2 = el.map.det.abs();
        let dofs = dofmap.local_dofs(t);
        for (xi, w) in rule.iter() {
            let fx = f(&el.map.to_physical(xi));
            let b = el.eval(xi);
            for (&d, v) in dofs.iter().zip(&b.values) {
                full[d] += w * area2 * fx * v;
            }
        }
    }
    Ok(dofmap.restrict(&full))
}

/// Load vector `(u, φᵢ)` of a discrete function living on the same mesh
/// family. Integration runs over the finer of the two meshes, where both
/// integrands are polynomial, so the result is exact.
pub fn transfer_load(target: &DofMap, source: &FeFunction) -> Result<Vec<f64>> {
    let smesh = &source.dofmap.mesh;
    let tmesh = &target.mesh;
    if smesh.domain.kind != tmesh.domain.kind {
        return Err(Error::Transfer(format!(
            "different domains {:?} and {:?}",
            smesh.domain.kind, tmesh.domain.kind
        )));
    }
    let degree = (target.kind.polynomial_degree() + source.dofmap.kind.polynomial_degree()).max(1);
    let rule = triangle_rule(degree.min(MAX_DEGREE))?;
    let source_full = source.full_coefficients();
    let (fine, fine_is_source) = if smesh.level >= tmesh.level { (smesh, true) } else { (tmesh, false) };
    let coarse_level = smesh.level.min(tmesh.level);
    let mut full = vec![0.0; target.num_dofs];
    for t in 0..fine.num_triangles() {
        let coarse_t = fine.ancestor(t, coarse_level);
        let (s_t, t_t) = if fine_is_source { (t, coarse_t) } else { (coarse_t, t) };
        let fine_map = fine.affine_map(t);
        let area2 = fine_map.det.abs();
        let s_el = source.dofmap.element(s_t);
        let t_el = target.element(t_t);
        let s_dofs = source.dofmap.local_dofs(s_t);
        let t_dofs = target.local_dofs(t_t);
        for (xi, w) in rule.iter() {
            let x = fine_map.to_physical(xi);
            let sb = s_el.eval_at_physical(&x);
            let u: f64 = s_dofs.iter().zip(&sb.values).map(|(&d, v)| source_full[d] * v).sum();
            let tb = t_el.eval_at_physical(&x);
            for (&d, v) in t_dofs.iter().zip(&tb.values) {
                full[d] += w * area2 * u * v;
            }
        }
    }
    Ok(target.restrict(&full))
}

/// Degree used for analytic (non-polynomial) integrands.
pub const ANALYTIC_QUADRATURE_DEGREE: usize = MAX_DEGREE;

fn solve_mass(dofmap: &DofMap, rhs: &[f64]) -> Result<Vec<f64>> {
    let mass = assemble_mass(dofmap)?;
    let m = mass.submatrix(dofmap.free_dofs());
    Ok(LdlFactor::new_positive_definite(&m)?.solve(rhs))
}

/// L² projection of an analytic field onto the free space of `dofmap`.
pub fn l2_project(dofmap: Arc<DofMap>, f: &dyn Fn(&Point2<f64>) -> f64) -> Result<FeFunction> {
    let rhs = load_vector(&dofmap, f, ANALYTIC_QUADRATURE_DEGREE)?;
    let coefficients = solve_mass(&dofmap, &rhs)?;
    FeFunction::new(dofmap, coefficients)
}

/// L² projection of a discrete function from the same mesh family.
pub fn transfer(target: Arc<DofMap>, source: &FeFunction) -> Result<FeFunction> {
    let rhs = transfer_load(&target, source)?;
    let coefficients = solve_mass(&target, &rhs)?;
    FeFunction::new(target, coefficients)
}
