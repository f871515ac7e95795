//! JSON result reports with the fixed homogenization schema plus a run
//! manifest (config echo, version, timings). Key order is the struct
//! declaration order, so identical inputs produce identical bytes apart
//! from the volatile manifest entries.

use std::path::Path;

use serde::Serialize;
use voxcell_core::homog::{EffectiveTensor, EnsembleStats};
use voxcell_core::solver::SolveReport;

#[derive(Serialize)]
pub struct SolverEntry {
    pub iterations: usize,
    pub final_residual_rel: f64,
    pub converged: bool,
}

impl From<&SolveReport> for SolverEntry {
    fn from(r: &SolveReport) -> Self {
        Self {
            iterations: r.iterations,
            final_residual_rel: r.final_residual_rel,
            converged: r.converged,
        }
    }
}

/// Fixed keys consumed by downstream tooling: bc, C_star, E_dir,
/// hill_mandel_residual, solver.
#[derive(Serialize)]
pub struct HomogenizeReport {
    pub bc: String,
    #[serde(rename = "C_star")]
    pub c_star: [[f64; 6]; 6],
    #[serde(rename = "E_dir")]
    pub e_dir: [f64; 3],
    pub hill_mandel_residual: Option<f64>,
    pub solver: Vec<SolverEntry>,
    pub asymmetry_rel: f64,
    pub rve_id: String,
}

impl HomogenizeReport {
    pub fn new(tensor: &EffectiveTensor, e_dir: [f64; 3]) -> Self {
        let mut c = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                c[i][j] = tensor.c_star[(i, j)];
            }
        }
        Self {
            bc: tensor.bc_kind.to_string(),
            c_star: c,
            e_dir,
            hill_mandel_residual: tensor.max_hill_mandel(),
            solver: tensor
                .solver_reports
                .iter()
                .map(SolverEntry::from)
                .collect(),
            asymmetry_rel: tensor.asymmetry_rel,
            rve_id: tensor.rve_id.clone(),
        }
    }
}

/// Ensemble statistics report; empty ensembles serialize with n = 0 and
/// empty lists.
#[derive(Serialize, Default)]
pub struct EnsembleReport {
    pub n: usize,
    pub mean_e_dir: [f64; 3],
    pub std_e_dir: [f64; 3],
    pub single_sample: bool,
    pub moduli: Vec<[f64; 3]>,
    pub failures: Vec<(usize, String)>,
    pub cells: Vec<HomogenizeReport>,
}

impl EnsembleReport {
    pub fn new(stats: &EnsembleStats, tensors: &[EffectiveTensor]) -> Self {
        Self {
            n: stats.n,
            mean_e_dir: stats.mean,
            std_e_dir: stats.std,
            single_sample: stats.single_sample,
            moduli: stats.moduli.clone(),
            failures: stats.failures.clone(),
            cells: tensors
                .iter()
                .zip(&stats.moduli)
                .map(|(t, m)| HomogenizeReport::new(t, *m))
                .collect(),
        }
    }
}

/// Run manifest: enough to reproduce the run via `--config`.
#[derive(Serialize)]
pub struct Manifest<C: Serialize> {
    pub command: String,
    pub version: String,
    /// Volatile: seconds since the Unix epoch.
    pub timestamp_unix: u64,
    /// Volatile: wall-clock milliseconds of the run.
    pub wall_ms: u128,
    pub config: C,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &str, config: C, wall_ms: u128) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_ms,
            config,
        }
    }
}

/// Full report file: results plus manifest, deterministic key order.
#[derive(Serialize)]
pub struct ReportFile<R: Serialize, C: Serialize> {
    #[serde(flatten)]
    pub results: R,
    pub manifest: Manifest<C>,
}

pub fn write_report<R: Serialize, C: Serialize>(
    report: &ReportFile<R, C>,
    path: &Path,
) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn to_stdout<R: Serialize, C: Serialize>(report: &ReportFile<R, C>) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}
