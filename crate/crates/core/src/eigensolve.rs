//! Generalized symmetric eigensolver and a contour-integral solver for the
//! operator function `F(η) = T - η⁻¹ I` with `T = A⁻¹ M`.
//!
//! Since `F(η) = A⁻¹ (M - A/η)`, applying `F(η)⁻¹` costs one multiplication
//! by `A` and one solve with `M - A/η`:
//!
//! ```text
//! F(η)⁻¹ v = (M - η⁻¹ A)⁻¹ (A v)
//! ```

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::AssembledForm;
use crate::error::{Error, Result};
use crate::fe_space::{l2_project, load_vector, transfer, FeFunction, ANALYTIC_QUADRATURE_DEGREE};
use crate::sparse::{dot, factor_combination, norm, BandLu, CsrMatrix, LdlFactor};

/// Largest free-dof count handled by the dense reduction.
pub const DENSE_THRESHOLD: usize = 600;

/// Normwise backward error `|Ax - λMx| / ((|A| + |λ||M|)|x|)`. A relative
/// residual would stall near `ε λ_max / λ_1` on fine plate meshes.
const SUBSPACE_TOLERANCE: f64 = 1e-13;
const SUBSPACE_MAX_ITERATIONS: usize = 1000;
const PROBE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    Contour,
}

/// Eigenpairs in ascending order with `M`-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigSolution {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// `‖Ax - λMx‖ / ‖Ax‖` per pair.
    pub residuals: Vec<f64>,
    pub method: SolveMethod,
}

impl EigSolution {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

fn residual(a: &CsrMatrix, m: &CsrMatrix, lambda: f64, x: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let mx = m.mul_vec(x);
    let r: Vec<f64> = ax.iter().zip(&mx).map(|(p, q)| p - lambda * q).collect();
    norm(&r) / norm(&ax).max(f64::MIN_POSITIVE)
}

/// Flip `x` so that its largest-magnitude entry is positive.
fn fix_sign(x: &mut [f64]) {
    let pivot = x.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
    if pivot < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
}

fn finish(a: &CsrMatrix, m: &CsrMatrix, mut pairs: Vec<(f64, Vec<f64>)>, method: SolveMethod) -> EigSolution {
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut eigenvalues = Vec::with_capacity(pairs.len());
    let mut eigenvectors = Vec::with_capacity(pairs.len());
    let mut residuals = Vec::with_capacity(pairs.len());
    for (lambda, mut x) in pairs {
        fix_sign(&mut x);
        residuals.push(residual(a, m, lambda, &x));
        eigenvalues.push(lambda);
        eigenvectors.push(x);
    }
    EigSolution { eigenvalues, eigenvectors, residuals, method }
}

/// Smallest `count` eigenpairs of `A x = λ M x` for an assembled form.
pub fn solve_gevp(form: &AssembledForm, count: usize) -> Result<EigSolution> {
    solve_gevp_matrices(&form.a, &form.m, count)
}

pub fn solve_gevp_matrices(a: &CsrMatrix, m: &CsrMatrix, count: usize) -> Result<EigSolution> {
    let n = a.nrows;
    if count == 0 || count > n {
        return Err(Error::InvalidParameter(format!("cannot compute {count} eigenpairs of a system with {n} dofs")));
    }
    if n <= DENSE_THRESHOLD {
        dense_gevp(a, m, count)
    } else {
        subspace_gevp(a, m, count)
    }
}

/// Small dense generalized problem; returns all pairs ascending with
/// `B`-orthonormal vectors.
fn dense_pairs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = b.clone().cholesky().ok_or_else(|| {
        let pivot = (0..n).map(|i| b[(i, i)]).fold(f64::INFINITY, f64::min);
        Error::NotPositiveDefinite { row: 0, pivot }
    })?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or(Error::SingularPivot(0))?;
    let c = &l_inv * a * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt_inv = l_inv.transpose();
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| &lt_inv * eig.eigenvectors.column(i)).collect::<Vec<_>>());
    Ok((values, vectors))
}

fn dense_gevp(a: &CsrMatrix, m: &CsrMatrix, count: usize) -> Result<EigSolution> {
    let (values, vectors) = dense_pairs(&a.to_dense(), &m.to_dense())?;
    let pairs = (0..count).map(|i| (values[i], vectors.column(i).iter().copied().collect())).collect();
    Ok(finish(a, m, pairs, SolveMethod::Direct))
}

fn random_block(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn gram(x: &[Vec<f64>], y: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), y.len(), |i, j| dot(&x[i], &y[j]))
}

fn combine(basis: &[Vec<f64>], coeffs: &DMatrix<f64>, column: usize) -> Vec<f64> {
    let mut out = vec![0.0; basis[0].len()];
    for (k, b) in basis.iter().enumerate() {
        let c = coeffs[(k, column)];
        out.iter_mut().zip(b).for_each(|(o, v)| *o += c * v);
    }
    out
}

/// Block inverse iteration with Rayleigh-Ritz, using a factorization of `A`.
fn inf_norm(a: &CsrMatrix) -> f64 {
    (0..a.nrows).map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn subspace_gevp(a: &CsrMatrix, m: &CsrMatrix, count: usize) -> Result<EigSolution> {
    let n = a.nrows;
    let p = (2 * count).max(count + 8).min(n);
    let factor = LdlFactor::new_positive_definite(a)?;
    let mut x = random_block(n, p, PROBE_SEED);
    let mut worst = f64::INFINITY;
    let (norm_a, norm_m) = (inf_norm(a), inf_norm(m));
    for _ in 0..SUBSPACE_MAX_ITERATIONS {
        let y: Vec<Vec<f64>> = x.iter().map(|xi| factor.solve(&m.mul_vec(xi))).collect();
        let ay: Vec<Vec<f64>> = y.iter().map(|v| a.mul_vec(v)).collect();
        let my: Vec<Vec<f64>> = y.iter().map(|v| m.mul_vec(v)).collect();
        let ar = gram(&y, &ay);
        let mr = gram(&y, &my);
        let (values, q) = dense_pairs(&((&ar + ar.transpose()) * 0.5), &((&mr + mr.transpose()) * 0.5))?;
        x = (0..p).map(|j| combine(&y, &q, j)).collect();
        worst = 0.0;
        for j in 0..count {
            let axj = combine(&ay, &q, j);
            let mxj = combine(&my, &q, j);
            let r: Vec<f64> = axj.iter().zip(&mxj).map(|(u, v)| u - values[j] * v).collect();
            let xj_norm = norm(&x[j]);
            worst = worst.max(norm(&r) / ((norm_a + values[j].abs() * norm_m) * xj_norm));
        }
        if worst <= SUBSPACE_TOLERANCE {
            let pairs = (0..count).map(|j| (values[j], x[j].clone())).collect();
            return Ok(finish(a, m, pairs, SolveMethod::Direct));
        }
    }
    Err(Error::NoConvergence { iterations: SUBSPACE_MAX_ITERATIONS, residual: worst })
}

/// `F(η) = A⁻¹ M - η⁻¹ I` on a closed disk `Ω` that excludes the origin.
#[derive(Debug, Clone)]
pub struct OperatorFunction {
    pub a: CsrMatrix,
    pub m: CsrMatrix,
    pub center: Complex64,
    pub radius: f64,
}

impl OperatorFunction {
    pub fn new(a: CsrMatrix, m: CsrMatrix, center: Complex64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || center.norm() <= radius {
            return Err(Error::InvalidParameter(format!(
                "the disk |η - {center}| <= {radius} must exclude the origin"
            )));
        }
        Ok(Self { a, m, center, radius })
    }

    pub fn from_form(form: &AssembledForm, center: Complex64, radius: f64) -> Result<Self> {
        Self::new(form.a.clone(), form.m.clone(), center, radius)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows
    }

    /// Factorization of `M - η⁻¹ A`, reusable for several right-hand sides.
    pub fn inverse_at(&self, eta: Complex64) -> Result<OperatorInverse<'_>> {
        let factor = factor_combination(&self.a, -eta.inv(), &self.m, Complex64::new(1.0, 0.0))?;
        Ok(OperatorInverse { a: &self.a, factor })
    }

    /// Dense `F(η)` for validation on small systems.
    pub fn dense_matrix(&self, eta: Complex64) -> Result<DMatrix<Complex64>> {
        let a = self.a.to_dense();
        let t = a.clone().lu().solve(&self.m.to_dense()).ok_or(Error::SingularPivot(0))?;
        let n = self.dim();
        Ok(DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { eta.inv() } else { Complex64::new(0.0, 0.0) };
            Complex64::new(t[(i, j)], 0.0) - id
        }))
    }
}

pub struct OperatorInverse<'a> {
    a: &'a CsrMatrix,
    factor: BandLu<Complex64>,
}

impl OperatorInverse<'_> {
    /// `F(η)⁻¹ v` for a real vector `v`.
    pub fn apply_real(&self, v: &[f64]) -> Vec<Complex64> {
        let av: Vec<Complex64> = self.a.mul_vec(v).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        self.factor.solve(&av)
    }
}

/// Beyn's contour method on the circle `|η - center| = radius` with
/// `n_quad` trapezoid points and `probe_rank` random probe vectors.
pub fn contour_solve(
    opfun: &OperatorFunction,
    center: Complex64,
    radius: f64,
    n_quad: usize,
    probe_rank: usize,
) -> Result<EigSolution> {
    if n_quad < 16 {
        return Err(Error::InvalidParameter(format!("n_quad = {n_quad}; at least 16 points are required")));
    }
    if (center - opfun.center).norm() + radius > opfun.radius * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter("contour leaves the domain of the operator function".into()));
    }
    let n = opfun.dim();
    let probe_rank = probe_rank.min(n);
    let probes = random_block(n, probe_rank, PROBE_SEED);
    let zero = Complex64::new(0.0, 0.0);
    let mut a0 = DMatrix::from_element(n, probe_rank, zero);
    let mut a1 = DMatrix::from_element(n, probe_rank, zero);
    let mut scale = 0.0f64;
    for k in 0..n_quad {
        let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_quad as f64;
        let e = Complex64::from_polar(1.0, theta);
        let z = center + radius * e;
        let w = e * radius / n_quad as f64;
        let inv = opfun.inverse_at(z)?;
        for (j, v) in probes.iter().enumerate() {
            let col = inv.apply_real(v);
            for (i, c) in col.iter().enumerate() {
                scale = scale.max(c.norm() * radius);
                a0[(i, j)] += w * c;
                a1[(i, j)] += w * z * c;
            }
        }
    }
    let (singular_values, u) = jacobi_svd(a0.clone());
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let threshold = 1e-10 * sigma_max.max(scale);
    let rank = singular_values.iter().filter(|&&s| s > threshold).count();
    if rank == 0 {
        return Ok(EigSolution { eigenvalues: vec![], eigenvectors: vec![], residuals: vec![], method: SolveMethod::Contour });
    }
    if rank >= probe_rank {
        return Err(Error::ProbeRankTooSmall { rank, probe_rank });
    }
    let v0 = u.columns(0, rank).into_owned();
    let sigma_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        rank,
        singular_values[..rank].iter().map(|&s| Complex64::new(1.0 / s, 0.0)),
    ));
    // right singular vectors W0 = A0ᴴ V0 Σ⁻¹
    let w0 = a0.adjoint() * &v0 * &sigma_inv;
    let b = v0.adjoint() * &a1 * w0 * sigma_inv;
    let schur = b.schur();
    let (_, t) = schur.unpack();
    let mut eigenvalues: Vec<f64> = (0..rank)
        .map(|i| t[(i, i)])
        .filter(|z| (z - center).norm() < radius)
        .map(|z| z.re)
        .collect();
    eigenvalues.sort_by(f64::total_cmp);

    let vectors = ritz_vectors(opfun, &v0, &eigenvalues)?;
    let pairs: Vec<(f64, Vec<f64>)> = eigenvalues.iter().copied().zip(vectors).collect();
    let solution = finish(&opfun.a, &opfun.m, pairs, SolveMethod::Contour);
    let worst = solution.residuals.iter().copied().fold(0.0, f64::max);
    if worst > 1e-6 {
        return Err(Error::ContourResidual { residual: worst });
    }
    Ok(solution)
}

/// One-sided Jacobi SVD of a tall matrix: singular values in descending
/// order and the matching left singular vectors (zero columns where the
/// singular value vanishes).
fn jacobi_svd(mut a: DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let cols = a.ncols();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                if gamma.norm() <= 1e-15 * (alpha * beta).sqrt() || gamma.norm() == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = gamma / gamma.norm();
                let zeta = (beta - alpha) / (2.0 * gamma.norm());
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..a.nrows() {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)] * phase.conj();
                    a[(i, p)] = ap * c - aq * s;
                    a[(i, q)] = ap * s + aq * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = (0..cols).map(|j| (a.column(j).norm(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    let u = DMatrix::from_columns(
        &order
            .iter()
            .map(|&(s, j)| if s > 0.0 { a.column(j) / Complex64::new(s, 0.0) } else { a.column(j) * Complex64::new(0.0, 0.0) })
            .collect::<Vec<_>>(),
    );
    (order.iter().map(|o| o.0).collect(), u)
}

/// Eigenvectors from Rayleigh-Ritz on the real span of the contour subspace,
/// one per eigenvalue (closest Ritz value, each used once).
fn ritz_vectors(opfun: &OperatorFunction, v0: &DMatrix<Complex64>, eigenvalues: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in v0.column_iter() {
        for part in [col.map(|c| c.re), col.map(|c| c.im)] {
            let mut v: Vec<f64> = part.iter().copied().collect();
            for b in &basis {
                let c = dot(b, &v);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let nv = norm(&v);
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                basis.push(v);
            }
        }
    }
    let ab: Vec<Vec<f64>> = basis.iter().map(|v| opfun.a.mul_vec(v)).collect();
    let mb: Vec<Vec<f64>> = basis.iter().map(|v| opfun.m.mul_vec(v)).collect();
    let ar = gram(&basis, &ab);
    let mr = gram(&basis, &mb);
    let (values, q) = dense_pairs(&((&ar + ar.transpose()) * 0.5), &((&mr + mr.transpose()) * 0.5))?;
    let mut used = vec![false; values.len()];
    let mut out = Vec::with_capacity(eigenvalues.len());
    for &lambda in eigenvalues {
        let j = (0..values.len())
            .filter(|&j| !used[j])
            .min_by(|&i, &j| (values[i] - lambda).abs().total_cmp(&(values[j] - lambda).abs()))
            .ok_or_else(|| Error::CountMismatch("fewer Ritz vectors than contour eigenvalues".into()))?;
        used[j] = true;
        out.push(combine(&basis, &q, j));
    }
    Ok(out)
}

/// Solve the source problem `A u = b` on the free dofs.
pub fn solve_source(form: &AssembledForm, rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(LdlFactor::new_positive_definite(&form.a)?.solve(rhs))
}

/// `‖Tₙ pₙ f - pₙ T̃ f‖` where `T̃` is the solution operator on the finer
/// form. The difference lives in the coarse space and is measured exactly in
/// its mass norm. `fine` may sit on the same level as `coarse`.
pub fn pointwise_residual(coarse: &AssembledForm, fine: &AssembledForm, f: &dyn Fn(&nalgebra::Point2<f64>) -> f64) -> Result<f64> {
    if fine.level < coarse.level || fine.dofmap.mesh.domain.kind != coarse.dofmap.mesh.domain.kind {
        return Err(Error::Transfer(format!(
            "level {} form is not a refinement of the level {} form",
            fine.level, coarse.level
        )));
    }
    let b_coarse = load_vector(&coarse.dofmap, f, ANALYTIC_QUADRATURE_DEGREE)?;
    let u_coarse = solve_source(coarse, &b_coarse)?;
    let b_fine = load_vector(&fine.dofmap, f, ANALYTIC_QUADRATURE_DEGREE)?;
    let u_fine = FeFunction::new(fine.dofmap.clone(), solve_source(fine, &b_fine)?)?;
    let projected = transfer(coarse.dofmap.clone(), &u_fine)?;
    let diff: Vec<f64> = u_coarse.iter().zip(&projected.coefficients).map(|(a, b)| a - b).collect();
    Ok(coarse.m.bilinear(&diff, &diff).max(0.0).sqrt())
}

/// `Tₙ pₙ f` as a discrete function.
pub fn discrete_solution(form: &AssembledForm, f: &dyn Fn(&nalgebra::Point2<f64>) -> f64) -> Result<FeFunction> {
    let projected = l2_project(form.dofmap.clone(), f)?;
    let rhs = form.m.mul_vec(&projected.coefficients);
    FeFunction::new(form.dofmap.clone(), solve_source(form, &rhs)?)
}
