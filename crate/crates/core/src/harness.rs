//! Mesh-sequence convergence studies.
//!
//! A study solves one (problem, method) pair on a range of refinement levels,
//! pairs the discrete eigenvalues with a reference spectrum, and fits observed
//! rates over the last three levels. A rate passes when it is at least the
//! guaranteed rate minus [`RATE_TOLERANCE`].
//!
//! Fine-mesh references use a fixed method per problem (conforming P1 for
//! the Dirichlet problem, C0-IPG P2 with σ = 20 for the plate) and are
//! Richardson-extrapolated from the three finest levels.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Point2};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, default_c0ipg_penalty, default_sipdg_penalty, AssembledForm, Problem};
use crate::eigensolve::{solve_gevp, EigSolution};
use crate::error::{Error, Result};
use crate::fe_space::{build_dofmap, load_vector, transfer_load, DofMap, ElementKind, FeFunction, ANALYTIC_QUADRATURE_DEGREE};
use crate::mesh::{build_mesh, DomainKind, PolygonalDomain};
use crate::sparse::LdlFactor;

pub const RATE_TOLERANCE: f64 = 0.15;
pub const MAX_STUDY_LEVEL: u32 = 8;
/// Relative gap below which fine-mesh eigenvalues are treated as one cluster.
pub const CLUSTER_GAP: f64 = 1e-3;
/// Number of trailing levels used by the rate fit.
pub const FIT_LEVELS: usize = 3;
pub const REFERENCE_C0IPG_PENALTY: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Method {
    Conforming { degree: u8 },
    Sipdg { degree: u8, penalty: f64 },
    CrouzeixRaviart,
    C0ipg { degree: u8, penalty: f64 },
    Morley,
}

impl Method {
    pub fn conforming(degree: u8) -> Self {
        Method::Conforming { degree }
    }

    pub fn sipdg(degree: u8) -> Self {
        Method::Sipdg { degree, penalty: default_sipdg_penalty(degree) }
    }

    pub fn c0ipg(degree: u8) -> Self {
        Method::C0ipg { degree, penalty: default_c0ipg_penalty(degree) }
    }

    pub fn element_kind(self) -> ElementKind {
        match self {
            Method::Conforming { degree } | Method::C0ipg { degree, .. } => ElementKind::LagrangeP(degree),
            Method::Sipdg { degree, .. } => ElementKind::DiscontinuousP(degree),
            Method::CrouzeixRaviart => ElementKind::CrouzeixRaviart,
            Method::Morley => ElementKind::Morley,
        }
    }

    pub fn problem(self) -> Problem {
        match self {
            Method::Conforming { .. } | Method::Sipdg { .. } | Method::CrouzeixRaviart => Problem::Dirichlet,
            Method::C0ipg { .. } | Method::Morley => Problem::Biharmonic,
        }
    }

    pub fn penalty(self) -> Option<f64> {
        match self {
            Method::Sipdg { penalty, .. } | Method::C0ipg { penalty, .. } => Some(penalty),
            _ => None,
        }
    }

    /// Guaranteed eigenvalue rate for regularity index `alpha`.
    pub fn guaranteed_rate(self, alpha: f64) -> f64 {
        match self {
            Method::Conforming { .. } | Method::CrouzeixRaviart | Method::C0ipg { .. } => 2.0 * alpha,
            Method::Sipdg { .. } | Method::Morley => alpha,
        }
    }

    pub fn label(self) -> String {
        match self {
            Method::Conforming { degree } => format!("conforming P{degree}"),
            Method::Sipdg { degree, penalty } => format!("SIP-DG P{degree} (gamma = {penalty})"),
            Method::CrouzeixRaviart => "Crouzeix-Raviart".into(),
            Method::C0ipg { degree, penalty } => format!("C0-IPG P{degree} (sigma = {penalty})"),
            Method::Morley => "Morley".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Analytic,
    FineMesh { level: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub domain: DomainKind,
    pub problem: Problem,
    pub method: Method,
    /// Inclusive level range.
    pub levels: (u32, u32),
    pub n_eigs: usize,
    pub reference: Reference,
    /// Replaces the guaranteed rate in the verdicts. Only for exercising the
    /// verdict logic in tests.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub guaranteed_rate_override: Option<f64>,
}

impl StudyConfig {
    pub fn new(domain: DomainKind, method: Method, levels: (u32, u32), n_eigs: usize, reference: Reference) -> Self {
        Self { domain, problem: method.problem(), method, levels, n_eigs, reference, guaranteed_rate_override: None }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.method.problem() != self.problem {
            return invalid(format!("method {} cannot discretize the {:?} problem", self.method.label(), self.problem));
        }
        self.method.element_kind().validate()?;
        if matches!(self.method, Method::C0ipg { degree, .. } if degree < 2) {
            return invalid("C0-IPG needs Lagrange degree >= 2".into());
        }
        if let Some(p) = self.method.penalty() {
            if !(p > 0.0 && p.is_finite()) {
                return invalid("penalty must be positive".into());
            }
        }
        if self.problem == Problem::Biharmonic && self.domain == DomainKind::LShape {
            return invalid("the clamped plate on the L-shape is not supported (no trusted reference)".into());
        }
        let (lo, hi) = self.levels;
        if hi > MAX_STUDY_LEVEL {
            return Err(Error::LevelTooLarge { level: hi, max: MAX_STUDY_LEVEL });
        }
        if lo > hi || (hi - lo + 1) < FIT_LEVELS as u32 {
            return invalid(format!("level range {lo}..{hi} must contain at least {FIT_LEVELS} levels"));
        }
        if self.n_eigs == 0 {
            return invalid("n_eigs must be at least 1".into());
        }
        match self.reference {
            Reference::Analytic => {
                if self.domain != DomainKind::UnitSquare || self.problem != Problem::Dirichlet {
                    return Err(Error::NoAnalyticReference(format!(
                        "{:?} problem on {:?}",
                        self.problem, self.domain
                    )));
                }
            }
            Reference::FineMesh { level } => {
                if level <= hi {
                    return invalid(format!("reference level {level} must exceed the finest study level {hi}"));
                }
                if level > MAX_STUDY_LEVEL {
                    return Err(Error::LevelTooLarge { level, max: MAX_STUDY_LEVEL });
                }
                if level < 2 {
                    return invalid("fine reference needs level >= 2 for extrapolation".into());
                }
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        PolygonalDomain::new(self.domain).alpha
    }

    pub fn guaranteed_rate(&self) -> f64 {
        self.guaranteed_rate_override.unwrap_or_else(|| self.method.guaranteed_rate(self.alpha()))
    }
}

/// Eigenvalues of one reference cluster (equal values for an analytic
/// multiple eigenvalue).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceCluster {
    pub values: Vec<f64>,
}

impl ReferenceCluster {
    pub fn multiplicity(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone)]
pub enum ReferenceFunctions {
    /// Modes `(m, n)` of `2 sin(mπx) sin(nπy)`.
    Analytic(Vec<(u32, u32)>),
    Discrete(Vec<FeFunction>),
}

#[derive(Debug, Clone)]
pub struct ReferenceSpectrum {
    pub clusters: Vec<ReferenceCluster>,
    /// One function per eigenvalue, in cluster order.
    pub functions: ReferenceFunctions,
    /// Unextrapolated fine-level eigenvalues, when a fine mesh was used.
    pub fine_eigenvalues: Option<Vec<f64>>,
}

impl ReferenceSpectrum {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.clusters.iter().flat_map(|c| c.values.iter().copied()).collect()
    }

    pub fn count(&self) -> usize {
        self.clusters.iter().map(ReferenceCluster::multiplicity).sum()
    }
}

/// Square Dirichlet modes sorted by `m² + n²`, then `m`.
fn square_modes(limit: u32) -> Vec<(u32, u32)> {
    let mut modes: Vec<(u32, u32)> = (1..=limit).flat_map(|m| (1..=limit).map(move |n| (m, n))).collect();
    modes.sort_by_key(|&(m, n)| (m * m + n * n, m));
    modes
}

pub fn analytic_eigenfunction(mode: (u32, u32)) -> impl Fn(&Point2<f64>) -> f64 {
    let (m, n) = (f64::from(mode.0), f64::from(mode.1));
    move |p: &Point2<f64>| 2.0 * (m * PI * p.x).sin() * (n * PI * p.y).sin()
}

/// Group `values` (ascending) into clusters by relative gap, covering at
/// least the first `count` values. Clusters touching the end of `values`
/// are dropped if they might continue past it.
fn group_clusters(values: &[f64], count: usize) -> Result<Vec<std::ops::Range<usize>>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || (values[i] - values[i - 1]) > CLUSTER_GAP * values[i].abs();
        if split {
            if i == values.len() && start < count {
                return Err(Error::CountMismatch(format!(
                    "cannot resolve the cluster containing eigenvalue {} with {} reference values",
                    start + 1,
                    values.len()
                )));
            }
            out.push(start..i);
            start = i;
            if i >= count {
                break;
            }
        }
    }
    Ok(out)
}

fn fine_reference_method(problem: Problem) -> Method {
    match problem {
        Problem::Dirichlet => Method::Conforming { degree: 1 },
        Problem::Biharmonic => Method::C0ipg { degree: 2, penalty: REFERENCE_C0IPG_PENALTY },
    }
}

/// Assemble `method` on `domain` at `level`.
pub fn assemble_level(domain: DomainKind, method: Method, level: u32) -> Result<AssembledForm> {
    let mesh = Arc::new(build_mesh(&PolygonalDomain::new(domain), level)?);
    let dofmap = Arc::new(build_dofmap(mesh, method.element_kind())?);
    assemble(dofmap, method.problem(), method.penalty())
}

/// Richardson extrapolation from three levels with halved `h`, using the
/// observed order (clamped to `[0.5, 4]`).
pub fn richardson(coarse: f64, mid: f64, fine: f64) -> f64 {
    let d1 = coarse - mid;
    let d2 = mid - fine;
    if d2 == 0.0 || d1 / d2 <= 1.0 {
        return fine;
    }
    let p = (d1 / d2).log2().clamp(0.5, 4.0);
    fine - d2 / (2f64.powf(p) - 1.0)
}

/// Reference eigenvalues (with multiplicities) and eigenfunctions for a study.
pub fn reference_eigenpairs(config: &StudyConfig) -> Result<ReferenceSpectrum> {
    config.validate()?;
    match config.reference {
        Reference::Analytic => {
            let modes = square_modes(config.n_eigs as u32 + 2);
            let values: Vec<f64> = modes.iter().map(|&(m, n)| PI * PI * f64::from(m * m + n * n)).collect();
            let mut clusters = Vec::new();
            let mut used = Vec::new();
            let mut i = 0;
            while used.len() < config.n_eigs {
                let key = values[i];
                let mut cluster = Vec::new();
                while i < values.len() && values[i] == key {
                    cluster.push(values[i]);
                    used.push(modes[i]);
                    i += 1;
                }
                clusters.push(ReferenceCluster { values: cluster });
            }
            Ok(ReferenceSpectrum { clusters, functions: ReferenceFunctions::Analytic(used), fine_eigenvalues: None })
        }
        Reference::FineMesh { level } => {
            let method = fine_reference_method(config.problem);
            let extra = config.n_eigs + 2;
            let solve = |l: u32| -> Result<(AssembledForm, EigSolution)> {
                let form = assemble_level(config.domain, method, l)?;
                let count = extra.min(form.num_free());
                let sol = solve_gevp(&form, count)?;
                Ok((form, sol))
            };
            let (_, s0) = solve(level - 2)?;
            let (_, s1) = solve(level - 1)?;
            let (fine_form, s2) = solve(level)?;
            let n = s0.len().min(s1.len()).min(s2.len());
            let extrapolated: Vec<f64> = (0..n).map(|i| richardson(s0.eigenvalues[i], s1.eigenvalues[i], s2.eigenvalues[i])).collect();
            // cluster detection on the fine values; extrapolation can reorder nearly equal values
            let ranges = group_clusters(&s2.eigenvalues[..n], config.n_eigs)?;
            let mut clusters = Vec::new();
            let mut functions = Vec::new();
            for r in ranges {
                let mut values: Vec<f64> = extrapolated[r.clone()].to_vec();
                values.sort_by(f64::total_cmp);
                clusters.push(ReferenceCluster { values });
                for i in r {
                    functions.push(FeFunction::new(fine_form.dofmap.clone(), s2.eigenvectors[i].clone())?);
                }
            }
            let total: usize = clusters.iter().map(ReferenceCluster::multiplicity).sum();
            Ok(ReferenceSpectrum {
                clusters,
                functions: ReferenceFunctions::Discrete(functions),
                fine_eigenvalues: Some(s2.eigenvalues[..total].to_vec()),
            })
        }
    }
}

/// Discrete eigenvalues paired with one reference cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedCluster {
    pub indices: std::ops::Range<usize>,
    pub reference: Vec<f64>,
    pub errors: Vec<f64>,
    /// Largest error over the cluster.
    pub error: f64,
}

/// Order-preserving pairing: a cluster of multiplicity `m` consumes `m`
/// consecutive discrete eigenvalues.
pub fn match_eigenvalues(discrete: &[f64], reference: &[ReferenceCluster]) -> Result<Vec<MatchedCluster>> {
    let needed: usize = reference.iter().map(ReferenceCluster::multiplicity).sum();
    if discrete.len() < needed {
        return Err(Error::CountMismatch(format!(
            "{} discrete eigenvalues for {needed} reference eigenvalues",
            discrete.len()
        )));
    }
    let mut out = Vec::with_capacity(reference.len());
    let mut start = 0;
    for cluster in reference {
        let indices = start..start + cluster.multiplicity();
        let errors: Vec<f64> = discrete[indices.clone()].iter().zip(&cluster.values).map(|(d, r)| (d - r).abs()).collect();
        let error = errors.iter().copied().fold(0.0, f64::max);
        out.push(MatchedCluster { indices: indices.clone(), reference: cluster.values.clone(), errors, error });
        start = indices.end;
    }
    Ok(out)
}

/// L² distances of discrete eigenvectors to the span of the projected
/// reference eigenfunctions, all given as coefficient vectors in the same
/// space with mass matrix `m`. A single reference function is compared up to
/// sign only; a cluster by orthogonal projection onto its span.
pub fn eigenfunction_error(m: &crate::sparse::CsrMatrix, discrete: &[Vec<f64>], projected: &[Vec<f64>]) -> Result<Vec<f64>> {
    if projected.is_empty() {
        return Err(Error::InvalidParameter("no reference eigenfunctions to compare against".into()));
    }
    let m_norm = |v: &[f64]| m.bilinear(v, v).max(0.0).sqrt();
    if projected.len() == 1 {
        let p = &projected[0];
        return Ok(discrete
            .iter()
            .map(|u| {
                let minus: Vec<f64> = u.iter().zip(p).map(|(a, b)| a - b).collect();
                let plus: Vec<f64> = u.iter().zip(p).map(|(a, b)| a + b).collect();
                m_norm(&minus).min(m_norm(&plus))
            })
            .collect());
    }
    let mp: Vec<Vec<f64>> = projected.iter().map(|p| m.mul_vec(p)).collect();
    let k = projected.len();
    let gram = DMatrix::from_fn(k, k, |i, j| crate::sparse::dot(&projected[i], &mp[j]));
    let chol = gram.cholesky().ok_or_else(|| Error::InvalidParameter("projected reference functions are dependent".into()))?;
    Ok(discrete
        .iter()
        .map(|u| {
            let rhs = DVector::from_iterator(k, mp.iter().map(|q| crate::sparse::dot(q, u)));
            let c = chol.solve(&rhs);
            let mut r = u.clone();
            for (ci, p) in c.iter().zip(projected) {
                r.iter_mut().zip(p).for_each(|(x, y)| *x -= ci * y);
            }
            m_norm(&r)
        })
        .collect())
}

/// Least-squares slope of `log e` against `log h`.
pub fn fit_rate(h: &[f64], e: &[f64]) -> Result<f64> {
    if h.len() != e.len() || h.len() < 3 {
        return Err(Error::TooFewPoints(h.len().min(e.len())));
    }
    if e.iter().chain(h).any(|&v| !(v > 0.0)) {
        return Err(Error::SaturatedRate);
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

pub fn verdict(rate: Option<f64>, guaranteed: f64) -> Verdict {
    match rate {
        Some(r) if r >= guaranteed - RATE_TOLERANCE => Verdict::Pass,
        _ => Verdict::Fail,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelResult {
    pub level: u32,
    pub h: f64,
    pub free_dofs: usize,
    pub eigenvalues: Vec<f64>,
    pub reference: Vec<f64>,
    pub eig_errors: Vec<f64>,
    pub efun_errors: Vec<f64>,
    /// Largest eigenvalue and eigenfunction error per reference cluster.
    pub cluster_eig_errors: Vec<f64>,
    pub cluster_efun_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    /// `None` when the errors are not all positive (saturated).
    pub fitted_rate: Option<f64>,
    pub efun_rate: Option<f64>,
    pub guaranteed_rate: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub config: StudyConfig,
    pub alpha: f64,
    pub levels: Vec<LevelResult>,
    /// One entry per eigenvalue index.
    pub eigen: Vec<RateSummary>,
    /// One entry per reference cluster, from the cluster-maximum errors.
    pub clusters: Vec<RateSummary>,
    pub cluster_indices: Vec<std::ops::Range<usize>>,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.eigen.iter().all(|s| s.verdict == Verdict::Pass)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "level",
            "h",
            "eig_index",
            "lambda_h",
            "lambda_ref",
            "eig_error",
            "efun_error",
            "fitted_rate",
            "guaranteed_rate",
            "verdict",
        ])?;
        for lr in &self.levels {
            for (i, s) in self.eigen.iter().enumerate() {
                w.write_record([
                    lr.level.to_string(),
                    format!("{:e}", lr.h),
                    (i + 1).to_string(),
                    format!("{:.15e}", lr.eigenvalues[i]),
                    format!("{:.15e}", lr.reference[i]),
                    format!("{:.6e}", lr.eig_errors[i]),
                    format!("{:.6e}", lr.efun_errors[i]),
                    s.fitted_rate.map_or_else(|| "saturated".into(), |r| format!("{r:.4}")),
                    format!("{:.4}", s.guaranteed_rate),
                    s.verdict.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Project the reference eigenfunctions onto the free space of `form`.
fn project_reference(form: &AssembledForm, spectrum: &ReferenceSpectrum) -> Result<Vec<Vec<f64>>> {
    let factor = LdlFactor::new_positive_definite(&form.m)?;
    let dofmap: &DofMap = &form.dofmap;
    match &spectrum.functions {
        ReferenceFunctions::Analytic(modes) => modes
            .iter()
            .map(|&mode| {
                let f = analytic_eigenfunction(mode);
                Ok(factor.solve(&load_vector(dofmap, &f, ANALYTIC_QUADRATURE_DEGREE)?))
            })
            .collect(),
        ReferenceFunctions::Discrete(functions) => {
            functions.iter().map(|u| Ok(factor.solve(&transfer_load(dofmap, u)?))).collect()
        }
    }
}

fn fit_tail(h: &[f64], e: &[f64]) -> Option<f64> {
    let n = h.len();
    let k = FIT_LEVELS.min(n);
    fit_rate(&h[n - k..], &e[n - k..]).ok()
}

/// Run a convergence study.
pub fn run_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let spectrum = reference_eigenpairs(config)?;
    let count = spectrum.count();
    let mut levels = Vec::new();
    for level in config.levels.0..=config.levels.1 {
        let form = assemble_level(config.domain, config.method, level)?;
        if form.num_free() < count {
            return Err(Error::CountMismatch(format!(
                "level {level} has {} free dofs, fewer than the {count} requested eigenvalues",
                form.num_free()
            )));
        }
        let sol = solve_gevp(&form, count)?;
        let matched = match_eigenvalues(&sol.eigenvalues, &spectrum.clusters)?;
        let projected = project_reference(&form, &spectrum)?;
        let mut efun_errors = vec![0.0; count];
        let mut cluster_efun_errors = Vec::with_capacity(matched.len());
        for mc in &matched {
            let errs = eigenfunction_error(&form.m, &sol.eigenvectors[mc.indices.clone()], &projected[mc.indices.clone()])?;
            cluster_efun_errors.push(errs.iter().copied().fold(0.0, f64::max));
            efun_errors[mc.indices.clone()].copy_from_slice(&errs);
        }
        levels.push(LevelResult {
            level,
            h: form.h,
            free_dofs: form.num_free(),
            eig_errors: matched.iter().flat_map(|m| m.errors.clone()).collect(),
            reference: matched.iter().flat_map(|m| m.reference.clone()).collect(),
            cluster_eig_errors: matched.iter().map(|m| m.error).collect(),
            cluster_efun_errors,
            eigenvalues: sol.eigenvalues,
            efun_errors,
        });
    }
    let guaranteed = config.guaranteed_rate();
    let h: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let summarize = |eig: Vec<f64>, efun: Vec<f64>| {
        let fitted_rate = fit_tail(&h, &eig);
        RateSummary { fitted_rate, efun_rate: fit_tail(&h, &efun), guaranteed_rate: guaranteed, verdict: verdict(fitted_rate, guaranteed) }
    };
    let eigen = (0..count)
        .map(|i| summarize(levels.iter().map(|l| l.eig_errors[i]).collect(), levels.iter().map(|l| l.efun_errors[i]).collect()))
        .collect();
    let clusters = (0..spectrum.clusters.len())
        .map(|c| summarize(levels.iter().map(|l| l.cluster_eig_errors[c]).collect(), levels.iter().map(|l| l.cluster_efun_errors[c]).collect()))
        .collect();
    let mut cluster_indices = Vec::new();
    let mut start = 0;
    for c in &spectrum.clusters {
        cluster_indices.push(start..start + c.multiplicity());
        start += c.multiplicity();
    }
    Ok(ConvergenceReport { config: config.clone(), alpha: config.alpha(), levels, eigen, clusters, cluster_indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_config(method: Method, levels: (u32, u32), n_eigs: usize) -> StudyConfig {
        StudyConfig::new(DomainKind::UnitSquare, method, levels, n_eigs, Reference::Analytic)
    }

    #[test]
    fn analytic_square_spectrum() {
        let spectrum = reference_eigenpairs(&square_config(Method::conforming(1), (2, 4), 4)).unwrap();
        let pi2 = PI * PI;
        assert_eq!(spectrum.eigenvalues(), vec![2.0 * pi2, 5.0 * pi2, 5.0 * pi2, 8.0 * pi2]);
        assert_eq!(spectrum.clusters.iter().map(|c| c.multiplicity()).collect::<Vec<_>>(), vec![1, 2, 1]);
        // rounding up to whole clusters
        let spectrum = reference_eigenpairs(&square_config(Method::conforming(1), (2, 4), 2)).unwrap();
        assert_eq!(spectrum.count(), 3);
    }

    #[test]
    fn analytic_reference_is_rejected_off_the_square() {
        let mut c = square_config(Method::conforming(1), (2, 4), 1);
        c.domain = DomainKind::LShape;
        assert!(matches!(reference_eigenpairs(&c), Err(Error::NoAnalyticReference(_))));
        let c = square_config(Method::Morley, (2, 4), 1);
        assert!(matches!(reference_eigenpairs(&c), Err(Error::NoAnalyticReference(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = square_config(Method::conforming(1), (3, 6), 1);
        c.validate().unwrap();
        c.problem = Problem::Biharmonic;
        assert!(c.validate().is_err());
        let c = square_config(Method::conforming(1), (9, 12), 1);
        assert!(matches!(c.validate(), Err(Error::LevelTooLarge { .. })));
        let c = square_config(Method::Sipdg { degree: 1, penalty: -1.0 }, (2, 4), 1);
        assert!(c.validate().is_err());
        let c = StudyConfig::new(DomainKind::LShape, Method::Morley, (2, 4), 1, Reference::FineMesh { level: 6 });
        assert!(c.validate().is_err());
        let c = StudyConfig::new(DomainKind::LShape, Method::conforming(1), (2, 4), 1, Reference::FineMesh { level: 4 });
        assert!(c.validate().is_err());
    }

    #[test]
    fn matching_in_order_with_multiplicity() {
        let pi2 = PI * PI;
        let reference = vec![
            ReferenceCluster { values: vec![2.0 * pi2] },
            ReferenceCluster { values: vec![5.0 * pi2, 5.0 * pi2] },
            ReferenceCluster { values: vec![8.0 * pi2] },
        ];
        let m = match_eigenvalues(&[19.8, 49.6, 49.9, 79.5], &reference).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[1].indices, 1..3);
        assert!((m[1].error - (49.9 - 5.0 * pi2).abs().max((49.6 - 5.0 * pi2).abs())).abs() < 1e-14);
        let exact = match_eigenvalues(&reference.iter().flat_map(|c| c.values.clone()).collect::<Vec<_>>(), &reference).unwrap();
        assert!(exact.iter().all(|c| c.error == 0.0));
        let single = match_eigenvalues(&[1.0], &[ReferenceCluster { values: vec![1.5] }]).unwrap();
        assert_eq!(single[0].error, 0.5);
        assert!(matches!(match_eigenvalues(&[19.8, 49.6], &reference), Err(Error::CountMismatch(_))));
    }

    #[test]
    fn cluster_grouping() {
        let r = group_clusters(&[1.0, 2.0, 2.0005, 3.0, 4.0], 2).unwrap();
        assert_eq!(r, vec![0..1, 1..3]);
        assert!(group_clusters(&[1.0, 2.0, 2.0005], 2).is_err());
    }

    #[test]
    fn rate_fits() {
        let h = [1.0, 0.5, 0.25, 0.125];
        let e: Vec<f64> = h.iter().map(|v| v * v).collect();
        assert!((fit_rate(&h, &e).unwrap() - 2.0).abs() < 1e-12);
        assert!((fit_rate(&[1.0, 0.5, 0.25], &[1.0, 0.5, 0.25]).unwrap() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h: Vec<f64> = (0..5).map(|k| 0.5f64.powi(k)).collect();
        let e: Vec<f64> = h.iter().map(|v| 3.0 * v.powf(4.0 / 3.0) * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))).collect();
        assert!((fit_rate(&h, &e).unwrap() - 4.0 / 3.0).abs() < 0.05);
        assert!(matches!(fit_rate(&h[..2], &e[..2]), Err(Error::TooFewPoints(2))));
        assert!(matches!(fit_rate(&[1.0, 0.5, 0.25], &[1.0, 0.0, 1e-3]), Err(Error::SaturatedRate)));
    }

    #[test]
    fn verdicts() {
        assert_eq!(verdict(Some(1.86), 2.0), Verdict::Pass);
        assert_eq!(verdict(Some(1.84), 2.0), Verdict::Fail);
        assert_eq!(verdict(None, 1.0), Verdict::Fail);
    }

    #[test]
    fn richardson_recovers_power_law() {
        let exact = 9.6397;
        let lam = |h: f64| exact + 2.0 * h.powf(4.0 / 3.0);
        let r = richardson(lam(0.25), lam(0.125), lam(0.0625));
        assert!((r - exact).abs() < 1e-10);
    }

    #[test]
    fn eigenfunction_error_properties() {
        let form = assemble_level(DomainKind::UnitSquare, Method::conforming(1), 3).unwrap();
        let sol = solve_gevp(&form, 3).unwrap();
        let u = sol.eigenvectors[0].clone();
        assert!(eigenfunction_error(&form.m, &[u.clone()], &[u.clone()]).unwrap()[0] < 1e-12);
        let flipped: Vec<f64> = u.iter().map(|v| -v).collect();
        let reference: Vec<f64> = u.iter().map(|v| 0.9 * v + 0.01).collect();
        let a = eigenfunction_error(&form.m, &[u.clone()], &[reference.clone()]).unwrap()[0];
        let b = eigenfunction_error(&form.m, &[flipped], &[reference]).unwrap()[0];
        assert!((a - b).abs() < 1e-15);
        // any combination of a cluster's own vectors has zero distance to its span
        let span = &sol.eigenvectors[1..3];
        let mix: Vec<f64> = span[0].iter().zip(&span[1]).map(|(p, q)| 0.6 * p - 0.8 * q).collect();
        assert!(eigenfunction_error(&form.m, &[mix], span).unwrap()[0] < 1e-12);
    }

    #[test]
    fn small_conforming_study_passes() {
        let report = run_study(&square_config(Method::conforming(1), (2, 4), 1)).unwrap();
        assert_eq!(report.levels.len(), 3);
        assert!(report.all_pass(), "{:?}", report.eigen);
        for w in report.levels.windows(2) {
            assert!(w[1].h < w[0].h);
            assert!(w[1].eig_errors[0] < w[0].eig_errors[0]);
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("level,h,eig_index,lambda_h,lambda_ref,eig_error,efun_error,fitted_rate,guaranteed_rate,verdict\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(report.to_json().unwrap().contains("\"verdict\": \"pass\""));
    }

    #[test]
    fn override_forces_failure() {
        let mut c = square_config(Method::conforming(1), (2, 4), 1);
        c.guaranteed_rate_override = Some(5.0);
        assert!(!run_study(&c).unwrap().all_pass());
    }
}
