//! Command-line driver: config parsing, single studies, the acceptance sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use femeig::assembly::{default_c0ipg_penalty, default_sipdg_penalty, Problem};
use femeig::harness::{run_study, ConvergenceReport, Method, Reference, StudyConfig};
use femeig::mesh::{build_mesh, DomainKind, PolygonalDomain};
use femeig::{Error, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

pub const DEFAULT_LEVELS: (u32, u32) = (3, 6);
pub const DEFAULT_N_EIGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MethodName {
    Conforming,
    Sipdg,
    #[serde(alias = "cr")]
    CrouzeixRaviart,
    C0ipg,
    Morley,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LevelsField {
    Pair([u32; 2]),
    Range(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    domain: DomainKind,
    problem: Option<Problem>,
    method: MethodName,
    degree: Option<u8>,
    penalty: Option<f64>,
    levels: Option<LevelsField>,
    n_eigs: Option<usize>,
    reference: Option<String>,
}

/// Command-line values that replace the file's.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub levels: Option<(u32, u32)>,
    pub penalty: Option<f64>,
    pub n_eigs: Option<usize>,
    pub reference: Option<Reference>,
}

/// `"3..6"` or `"3-6"`.
pub fn parse_levels(text: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidConfig(format!("levels must look like A..B, got {text:?}"));
    let (a, b) = text.split_once("..").or_else(|| text.split_once('-')).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// `"analytic"` or `"fine:LEVEL"`.
pub fn parse_reference(text: &str) -> Result<Reference> {
    match text.split_once(':') {
        None if text == "analytic" => Ok(Reference::Analytic),
        Some(("fine", level)) => level
            .parse()
            .map(|level| Reference::FineMesh { level })
            .map_err(|_| Error::InvalidConfig(format!("bad fine-mesh level in {text:?}"))),
        _ => Err(Error::InvalidConfig(format!("reference must be \"analytic\" or \"fine:LEVEL\", got {text:?}"))),
    }
}

fn method_problem(name: MethodName) -> Problem {
    match name {
        MethodName::Conforming | MethodName::Sipdg | MethodName::CrouzeixRaviart => Problem::Dirichlet,
        MethodName::C0ipg | MethodName::Morley => Problem::Biharmonic,
    }
}

fn problem_name(problem: Problem) -> &'static str {
    match problem {
        Problem::Dirichlet => "dirichlet",
        Problem::Biharmonic => "biharmonic",
    }
}

fn build_method(name: MethodName, degree: Option<u8>, penalty: Option<f64>) -> Result<Method> {
    let invalid = |msg: String| Error::InvalidConfig(msg);
    if let Some(p) = penalty {
        if !(p > 0.0 && p.is_finite()) {
            return Err(invalid("penalty must be positive".into()));
        }
    }
    let fixed_degree = |fixed: u8, label: &str| match degree {
        Some(d) if d != fixed => Err(invalid(format!("{label} has fixed degree {fixed}, got {d}"))),
        _ => Ok(()),
    };
    let no_penalty = |label: &str| match penalty {
        Some(_) => Err(invalid(format!("{label} takes no penalty"))),
        None => Ok(()),
    };
    Ok(match name {
        MethodName::Conforming => {
            no_penalty("conforming")?;
            Method::Conforming { degree: degree.unwrap_or(1) }
        }
        MethodName::Sipdg => {
            let degree = degree.unwrap_or(1);
            Method::Sipdg { degree, penalty: penalty.unwrap_or_else(|| default_sipdg_penalty(degree)) }
        }
        MethodName::CrouzeixRaviart => {
            no_penalty("crouzeix_raviart")?;
            fixed_degree(1, "crouzeix_raviart")?;
            Method::CrouzeixRaviart
        }
        MethodName::C0ipg => {
            let degree = degree.unwrap_or(2);
            Method::C0ipg { degree, penalty: penalty.unwrap_or_else(|| default_c0ipg_penalty(degree)) }
        }
        MethodName::Morley => {
            no_penalty("morley")?;
            fixed_degree(2, "morley")?;
            Method::Morley
        }
    })
}

/// Parse a JSON study configuration with defaults applied.
pub fn parse_config(text: &str) -> Result<StudyConfig> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<StudyConfig> {
    let file: FileConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
    let expected = method_problem(file.method);
    if let Some(problem) = file.problem {
        if problem != expected {
            return Err(Error::InvalidConfig(format!(
                "method {:?} is incompatible with the {} problem",
                file.method,
                problem_name(problem)
            )));
        }
    }
    let method = build_method(file.method, file.degree, overrides.penalty.or(file.penalty))?;
    let levels = match (overrides.levels, &file.levels) {
        (Some(l), _) => l,
        (None, Some(LevelsField::Pair([a, b]))) => (*a, *b),
        (None, Some(LevelsField::Range(text))) => parse_levels(text)?,
        (None, None) => DEFAULT_LEVELS,
    };
    let reference = match (overrides.reference, &file.reference) {
        (Some(r), _) => r,
        (None, Some(text)) => parse_reference(text)?,
        (None, None) if file.domain == DomainKind::UnitSquare && expected == Problem::Dirichlet => Reference::Analytic,
        (None, None) => Reference::FineMesh { level: levels.1 + 1 },
    };
    let n_eigs = overrides.n_eigs.or(file.n_eigs).unwrap_or(DEFAULT_N_EIGS);
    let config = StudyConfig::new(file.domain, method, levels, n_eigs, reference);
    config.validate()?;
    Ok(config)
}

/// First 16 hex digits of the SHA-256 of the canonical config JSON.
pub fn config_hash(config: &StudyConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Write `report.csv` and `report.json` under `out/{hash}/`.
pub fn write_report(report: &ConvergenceReport, out: &Path) -> Result<PathBuf> {
    let dir = out.join(config_hash(&report.config));
    fs::create_dir_all(&dir)?;
    report.write_csv(fs::File::create(dir.join("report.csv"))?)?;
    fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct SweepStudy {
    pub name: &'static str,
    pub config: StudyConfig,
}

/// The fixed acceptance study matrix.
pub fn sweep_matrix() -> Vec<SweepStudy> {
    use DomainKind::{LShape, UnitSquare};
    let study = |name, domain, method, levels, n_eigs, reference| SweepStudy {
        name,
        config: StudyConfig::new(domain, method, levels, n_eigs, reference),
    };
    let plate_reference = Reference::FineMesh { level: 6 };
    vec![
        study("square-p1", UnitSquare, Method::Conforming { degree: 1 }, (3, 6), 1, Reference::Analytic),
        study("lshape-p1", LShape, Method::Conforming { degree: 1 }, (3, 6), 1, Reference::FineMesh { level: 7 }),
        study("square-sipdg1", UnitSquare, Method::Sipdg { degree: 1, penalty: 10.0 }, (3, 6), 1, Reference::Analytic),
        study("square-cr", UnitSquare, Method::CrouzeixRaviart, (3, 6), 1, Reference::Analytic),
        study("plate-c0ipg2", UnitSquare, Method::C0ipg { degree: 2, penalty: 20.0 }, (2, 5), 1, plate_reference),
        study("plate-morley", UnitSquare, Method::Morley, (2, 5), 1, plate_reference),
        study("square-p1-cluster", UnitSquare, Method::Conforming { degree: 1 }, (3, 6), 3, Reference::Analytic),
    ]
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub name: &'static str,
    pub report: ConvergenceReport,
    pub dir: PathBuf,
    pub elapsed: Duration,
}

/// Run every study of [`sweep_matrix`] and write `sweep.csv` with one row
/// per study.
pub fn sweep(out: &Path) -> Result<Vec<SweepOutcome>> {
    let mut outcomes = Vec::new();
    for SweepStudy { name, config } in sweep_matrix() {
        let start = Instant::now();
        let report = run_study(&config)?;
        let elapsed = start.elapsed();
        let dir = write_report(&report, out)?;
        outcomes.push(SweepOutcome { name, report, dir, elapsed });
    }
    let mut summary = String::from("study,hash,fitted_rate,guaranteed_rate,verdict\n");
    for o in &outcomes {
        let s = &o.report.eigen[0];
        let rate = s.fitted_rate.map_or_else(|| "saturated".into(), |r| format!("{r:.4}"));
        let verdict = if o.report.all_pass() { "pass" } else { "fail" };
        summary += &format!("{},{},{rate},{:.4},{verdict}\n", o.name, config_hash(&o.report.config), s.guaranteed_rate);
    }
    fs::write(out.join("sweep.csv"), summary)?;
    Ok(outcomes)
}

#[derive(Debug, Parser)]
#[command(name = "femeig", version, about = "Finite element eigenvalue convergence studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one study from a config file.
    Run(RunArgs),
    /// Run the full acceptance study matrix.
    Sweep {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print a mesh in plain text.
    MeshDump {
        #[arg(long, default_value = "unit_square", value_parser = parse_domain)]
        domain: DomainKind,
        #[arg(long, default_value_t = 1)]
        level: u32,
    },
    /// Run the property checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_parser = |s: &str| parse_levels(s).map_err(|e| e.to_string()))]
    pub levels: Option<(u32, u32)>,
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub n_eigs: Option<usize>,
    #[arg(long, value_parser = |s: &str| parse_reference(s).map_err(|e| e.to_string()))]
    pub reference: Option<Reference>,
}

fn parse_domain(text: &str) -> std::result::Result<DomainKind, String> {
    serde_json::from_value(serde_json::Value::String(text.into())).map_err(|_| format!("unknown domain {text:?}"))
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

fn print_report(report: &ConvergenceReport, dir: &Path) {
    for (i, s) in report.eigen.iter().enumerate() {
        let rate = s.fitted_rate.map_or_else(|| "saturated".into(), |r| format!("{r:.3}"));
        println!("eig {}: rate {rate} (guaranteed {:.3}) {}", i + 1, s.guaranteed_rate, s.verdict);
    }
    println!("report: {}", dir.display());
}

/// Run one config and write its report; exit status reflects the verdicts.
pub fn run_config(config: &StudyConfig, out: &Path) -> Result<i32> {
    let report = run_study(config)?;
    let dir = write_report(&report, out)?;
    print_report(&report, &dir);
    Ok(if report.all_pass() { EXIT_PASS } else { EXIT_FAIL })
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => {
            let text = fs::read_to_string(&args.config)?;
            let overrides = Overrides { levels: args.levels, penalty: args.penalty, n_eigs: args.n_eigs, reference: args.reference };
            run_config(&parse_config_with(&text, &overrides)?, &args.out)
        }
        Command::Sweep { out } => {
            let outcomes = sweep(&out)?;
            for o in &outcomes {
                let verdict = if o.report.all_pass() { "pass" } else { "fail" };
                println!("{:<18} {verdict} {:>7.1}s {}", o.name, o.elapsed.as_secs_f64(), o.dir.display());
            }
            Ok(if outcomes.iter().all(|o| o.report.all_pass()) { EXIT_PASS } else { EXIT_FAIL })
        }
        Command::MeshDump { domain, level } => {
            print!("{}", build_mesh(&PolygonalDomain::new(domain), level)?.to_text());
            Ok(EXIT_PASS)
        }
        Command::Selftest => {
            let checks = femeig::selftest::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { EXIT_PASS } else { EXIT_FAIL })
        }
    }
}

/// Parse `args` and run; errors go to stderr as one JSON object.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "status": "error", "error": e.to_string() }));
            EXIT_ERROR
        }
    }
}
