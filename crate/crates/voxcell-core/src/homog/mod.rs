//! First-order numerical homogenization of voxel RVEs.
//!
//! Each admissible boundary-condition family (periodic, kinematic-uniform,
//! static-uniform) is a strategy behind the [`RveBcStrategy`] trait,
//! registered by name and selected at runtime. Every strategy solves six
//! unit load cases and recovers the apparent stiffness from volume-averaged
//! stress/strain pairs; Hill-Mandel consistency is checked per case.

mod kubc;
mod pbc;
mod subc;

pub use kubc::Kubc;
pub use pbc::{pbc_constraints, Pbc};
pub use subc::{rigid_mode_vectors, Subc};

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::FcmSystem;
use crate::error::{Error, Result};
use crate::kernels::precompute_voxel_kernels;
use crate::material::ElasticMaterial;
use crate::mesh::CellMesh;
use crate::solver::{SolveReport, SolverConfig};
use crate::voxel::VoxelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Pbc,
    Kubc,
    Subc,
}

impl std::str::FromStr for BcKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pbc" => Ok(BcKind::Pbc),
            "kubc" => Ok(BcKind::Kubc),
            "subc" => Ok(BcKind::Subc),
            other => Err(Error::BadDescriptor(format!(
                "unknown boundary condition '{other}' (expected pbc|kubc|subc)"
            ))),
        }
    }
}

impl std::fmt::Display for BcKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BcKind::Pbc => "pbc",
            BcKind::Kubc => "kubc",
            BcKind::Subc => "subc",
        };
        f.write_str(s)
    }
}

/// Shared inputs of one RVE homogenization.
pub struct RveContext {
    pub mesh: Arc<CellMesh>,
    pub grid: Arc<VoxelGrid>,
    pub material: ElasticMaterial,
    pub rve_id: String,
    /// Prototype system; strategies clone it per load case.
    pub base: FcmSystem,
}

impl RveContext {
    pub fn new(
        grid: &VoxelGrid,
        voxels_per_cell: [usize; 3],
        degree: usize,
        material: ElasticMaterial,
        rve_id: impl Into<String>,
    ) -> Result<Self> {
        let mesh = Arc::new(CellMesh::for_grid(grid, voxels_per_cell, degree)?);
        let table = Arc::new(precompute_voxel_kernels(&mesh, &material)?);
        let grid = Arc::new(grid.clone());
        let base = FcmSystem::with_table(mesh.clone(), grid.clone(), table)?;
        Ok(Self {
            mesh,
            grid,
            material,
            rve_id: rve_id.into(),
            base,
        })
    }

    /// Embedding box volume (voids included).
    pub fn volume(&self) -> f64 {
        let e = self.mesh.extent();
        e[0] * e[1] * e[2]
    }
}

/// Apparent stiffness with provenance.
#[derive(Debug, Clone)]
pub struct EffectiveTensor {
    pub c_star: Matrix6<f64>,
    pub bc_kind: BcKind,
    pub rve_id: String,
    /// Relative asymmetry of the raw tensor before symmetrization.
    pub asymmetry_rel: f64,
    pub solver_reports: Vec<SolveReport>,
    /// Hill-Mandel residual per load case; None flags a zero-energy case.
    pub hill_mandel: Vec<Option<f64>>,
}

impl EffectiveTensor {
    pub fn max_hill_mandel(&self) -> Option<f64> {
        self.hill_mandel
            .iter()
            .filter_map(|r| *r)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }
}

/// One admissible RVE boundary-condition family.
pub trait RveBcStrategy: Sync {
    fn kind(&self) -> BcKind;
    fn name(&self) -> &'static str;
    /// Solve one unit load case; returns the full-space solution, its
    /// volume-averaged (stress, strain) pair and the solver report.
    fn solve_case(&self, ctx: &RveContext, case: usize, cfg: &SolverConfig)
        -> Result<CaseSolution>;
}

pub struct CaseSolution {
    pub u_full: Vec<f64>,
    pub avg_stress: Vector6<f64>,
    pub avg_strain: Vector6<f64>,
    pub report: SolveReport,
    pub hill_mandel: Option<f64>,
}

static PBC: Pbc = Pbc;
static KUBC: Kubc = Kubc;
static SUBC: Subc = Subc {
    full_boundary: false,
};

/// Strategy registry.
pub fn strategies() -> [&'static dyn RveBcStrategy; 3] {
    [&PBC, &KUBC, &SUBC]
}

pub fn strategy(kind: BcKind) -> &'static dyn RveBcStrategy {
    match kind {
        BcKind::Pbc => &PBC,
        BcKind::Kubc => &KUBC,
        BcKind::Subc => &SUBC,
    }
}

pub fn strategy_by_name(name: &str) -> Result<&'static dyn RveBcStrategy> {
    let kind: BcKind = name.parse()?;
    Ok(strategy(kind))
}

/// The six canonical unit macroscopic strain (or stress) load cases.
pub fn unit_load_cases() -> [Vector6<f64>; 6] {
    let mut cases = [Vector6::zeros(); 6];
    for (j, case) in cases.iter_mut().enumerate() {
        case[j] = 1.0;
    }
    cases
}

/// Displacement gradient of the symmetric affine field for a Voigt strain
/// (engineering shear): u = G x with G = sym(eps).
pub fn strain_gradient(eps: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(
        eps[0],
        0.5 * eps[5],
        0.5 * eps[4],
        0.5 * eps[5],
        eps[1],
        0.5 * eps[3],
        0.5 * eps[4],
        0.5 * eps[3],
        eps[2],
    )
}

/// Volume-averaged stress `<sigma> = (1/|O|) int alpha C eps dV`.
pub fn average_stress(sys: &FcmSystem, u_full: &[f64]) -> Vector6<f64> {
    let (stress, _) = sys.integrate_stress_strain(u_full);
    let e = sys.mesh.extent();
    stress / (e[0] * e[1] * e[2])
}

/// Volume-averaged strain `<eps> = (1/|O|) int eps dV` over the full box;
/// the void contributes through the compliant fictitious material.
pub fn average_strain(sys: &FcmSystem, u_full: &[f64]) -> Vector6<f64> {
    let (_, strain) = sys.integrate_stress_strain(u_full);
    let e = sys.mesh.extent();
    strain / (e[0] * e[1] * e[2])
}

/// Hill-Mandel residual
/// `|1/2 <sigma>:<eps> - (1/|O|) int 1/2 sigma:eps| / ((1/|O|) int 1/2 sigma:eps)`.
/// Returns None for a zero-energy state.
pub fn hill_mandel_residual(sys: &mut FcmSystem, u_full: &[f64]) -> Option<f64> {
    let (stress_int, strain_int) = sys.integrate_stress_strain(u_full);
    let e = sys.mesh.extent();
    let vol = e[0] * e[1] * e[2];
    let energy_density = sys.elastic_energy(u_full) / vol;
    if energy_density == 0.0 {
        return None;
    }
    let macro_density = 0.5 * (stress_int / vol).dot(&(strain_int / vol));
    Some((macro_density - energy_density).abs() / energy_density)
}

/// Apparent stiffness under the chosen boundary-condition family.
pub fn effective_tensor(
    ctx: &RveContext,
    bc: BcKind,
    cfg: &SolverConfig,
) -> Result<EffectiveTensor> {
    effective_tensor_with(ctx, strategy(bc), cfg)
}

/// Apparent stiffness under an explicit strategy instance (non-registry
/// variants, e.g. full-boundary SUBC for true two-phase grids).
pub fn effective_tensor_with(
    ctx: &RveContext,
    strat: &dyn RveBcStrategy,
    cfg: &SolverConfig,
) -> Result<EffectiveTensor> {
    // Load cases are independent; run them concurrently when small.
    let run_parallel = ctx.mesh.total_dofs() < 200_000;
    let solve_all = |cases: Vec<usize>| -> Vec<Result<CaseSolution>> {
        if run_parallel {
            cases
                .into_par_iter()
                .map(|j| strat.solve_case(ctx, j, cfg))
                .collect()
        } else {
            cases
                .into_iter()
                .map(|j| strat.solve_case(ctx, j, cfg))
                .collect()
        }
    };
    let solutions = solve_all((0..6).collect());

    let mut sig_cols = [Vector6::zeros(); 6];
    let mut eps_cols = [Vector6::zeros(); 6];
    let mut reports = Vec::with_capacity(6);
    let mut hm = Vec::with_capacity(6);
    for (j, sol) in solutions.into_iter().enumerate() {
        let sol = sol.map_err(|e| Error::LoadCase {
            case: j,
            source: Box::new(e),
        })?;
        if !sol.report.converged {
            return Err(Error::LoadCase {
                case: j,
                source: Box::new(Error::SolverStalled {
                    iterations: sol.report.iterations,
                    residual: sol.report.final_residual_rel,
                    tolerance: cfg.rel_tolerance,
                }),
            });
        }
        sig_cols[j] = sol.avg_stress;
        eps_cols[j] = sol.avg_strain;
        reports.push(sol.report);
        hm.push(sol.hill_mandel);
    }

    // C* maps <eps> columns onto <sigma> columns. For strain-controlled
    // families <eps> is the canonical basis and this reduces to columns of
    // averaged stress; for SUBC it solves the measured 6x6 system.
    let mut e_mat = Matrix6::zeros();
    let mut s_mat = Matrix6::zeros();
    for j in 0..6 {
        e_mat.set_column(j, &eps_cols[j]);
        s_mat.set_column(j, &sig_cols[j]);
    }
    let e_inv = e_mat.try_inverse().ok_or(Error::SingularTensor)?;
    let raw = s_mat * e_inv;
    let sym = (raw + raw.transpose()) * 0.5;
    let asymmetry_rel = (raw - raw.transpose()).norm() / raw.norm().max(1e-300);

    Ok(EffectiveTensor {
        c_star: sym,
        bc_kind: strat.kind(),
        rve_id: ctx.rve_id.clone(),
        asymmetry_rel,
        solver_reports: reports,
        hill_mandel: hm,
    })
}

/// Directional Young's moduli from the compliance diagonal.
pub fn directional_modulus(c_star: &Matrix6<f64>) -> Result<[f64; 3]> {
    let s = c_star.try_inverse().ok_or(Error::SingularTensor)?;
    Ok([1.0 / s[(0, 0)], 1.0 / s[(1, 1)], 1.0 / s[(2, 2)]])
}

/// PSD ordering check for apparent tensors of the same sub-RVE volume.
#[derive(Debug, Clone)]
pub struct OrderingReport {
    pub pass: bool,
    pub min_eig_kubc_minus_pbc: f64,
    pub min_eig_pbc_minus_subc: f64,
    pub norm_pbc: f64,
    pub tol: f64,
}

pub fn bound_ordering_check(
    c_kubc: &Matrix6<f64>,
    c_pbc: &Matrix6<f64>,
    c_subc: &Matrix6<f64>,
    tol: f64,
) -> OrderingReport {
    let min_eig = |m: Matrix6<f64>| -> f64 {
        m.symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    };
    let norm_pbc = c_pbc
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, &l| a.max(l.abs()));
    let e1 = min_eig(c_kubc - c_pbc);
    let e2 = min_eig(c_pbc - c_subc);
    let bound = -tol * norm_pbc;
    OrderingReport {
        pass: e1 >= bound && e2 >= bound,
        min_eig_kubc_minus_pbc: e1,
        min_eig_pbc_minus_subc: e2,
        norm_pbc,
        tol,
    }
}

/// Ensemble statistics over per-cell directional moduli.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleStats {
    /// Directional moduli (E_x, E_y, E_z) per successfully homogenized cell.
    pub moduli: Vec<[f64; 3]>,
    pub mean: [f64; 3],
    /// Sample (n-1) standard deviation; zero (flagged) for n = 1.
    pub std: [f64; 3],
    pub n: usize,
    pub single_sample: bool,
    /// Indices and messages of failed cells.
    pub failures: Vec<(usize, String)>,
}

/// Homogenize every cell and aggregate directional-modulus statistics.
/// Individual cell failures are recorded, not fatal.
pub fn ensemble_homogenize(
    cells: &[VoxelGrid],
    voxels_per_cell: [usize; 3],
    degree: usize,
    material: ElasticMaterial,
    bc: BcKind,
    cfg: &SolverConfig,
) -> Result<(EnsembleStats, Vec<EffectiveTensor>)> {
    if cells.is_empty() {
        return Err(Error::Geometry("ensemble needs at least one cell".into()));
    }
    let results: Vec<(usize, Result<([f64; 3], EffectiveTensor)>)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let one = || -> Result<([f64; 3], EffectiveTensor)> {
                let ctx =
                    RveContext::new(cell, voxels_per_cell, degree, material, format!("cell_{i}"))?;
                let tensor = effective_tensor(&ctx, bc, cfg)?;
                let moduli = directional_modulus(&tensor.c_star)?;
                Ok((moduli, tensor))
            };
            (i, one())
        })
        .collect();

    let mut moduli = Vec::new();
    let mut tensors = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok((m, t)) => {
                moduli.push(m);
                tensors.push(t);
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if moduli.is_empty() {
        return Err(Error::Geometry(format!(
            "all {} ensemble cells failed; first: {}",
            cells.len(),
            failures[0].1
        )));
    }

    let n = moduli.len();
    let mut mean = [0.0; 3];
    for m in &moduli {
        for d in 0..3 {
            mean[d] += m[d];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut std = [0.0; 3];
    if n > 1 {
        for m in &moduli {
            for d in 0..3 {
                std[d] += (m[d] - mean[d]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / (n as f64 - 1.0)).sqrt();
        }
    }
    Ok((
        EnsembleStats {
            moduli,
            mean,
            std,
            n,
            single_sample: n == 1,
            failures,
        },
        tensors,
    ))
}
