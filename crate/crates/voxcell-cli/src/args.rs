//! Command-line arguments and the serializable run configurations echoed
//! into manifests. Physical quantities carry their unit in the flag and key
//! names. Unknown keys in config files are rejected.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use voxcell_core::defects::DefectSpec;
use voxcell_core::homog::BcKind;
use voxcell_core::lattice::Axis;
use voxcell_core::solver::Preconditioner;
use voxcell_core::DEFAULT_ALPHA_VOID;

#[derive(Parser)]
#[command(
    name = "voxcell",
    version,
    about = "Voxel-native immersed finite-element analysis of micro-architected structures"
)]
pub struct Cli {
    /// Worker threads (overrides the VOXCELL_THREADS environment variable;
    /// default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate voxelized lattice geometry.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Threshold-segment a grayscale volume into a material mask.
    Segment(SegmentArgs),
    /// Report the porosity (void fraction) of a voxel grid.
    Porosity(PorosityArgs),
    /// Apparent elasticity tensor of a voxel RVE.
    Homogenize(HomogenizeArgs),
    /// Direct tensile-test simulation on a voxel specimen.
    Dns(DnsArgs),
    /// Porosity sweep of the octet cell: E*(phi) curve as CSV.
    Sweep(SweepArgs),
    /// p/h convergence study of the tensile test as CSV.
    Convergence(ConvergenceArgs),
    /// Export fields on the voxel lattice as legacy ASCII VTK.
    #[command(name = "export-vtk")]
    ExportVtk(ExportVtkArgs),
}

#[derive(Subcommand)]
pub enum GenerateKind {
    /// Parametric octet-truss cell, tiled into a specimen.
    Octet(GenerateOctetArgs),
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<_> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got '{s}'"));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("'{p}': {e}"))?;
    }
    Ok(out)
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<_> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated values, got '{s}'"));
    }
    Ok([
        parts[0].trim().parse().map_err(|e| format!("{e}"))?,
        parts[1].trim().parse().map_err(|e| format!("{e}"))?,
    ])
}

/// Discretization variant `V:P` (voxels per cell : degree), e.g. `4:2`.
fn parse_variant(s: &str) -> Result<(usize, usize), String> {
    let (v, p) = s
        .split_once(':')
        .ok_or_else(|| format!("expected V:P, got '{s}'"))?;
    Ok((
        v.trim().parse().map_err(|e| format!("{e}"))?,
        p.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

#[derive(Args)]
pub struct GenerateOctetArgs {
    /// Load every parameter from a manifest config instead of flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "cell-mm", default_value_t = 4.0)]
    pub cell_mm: f64,
    #[arg(long = "d-horizontal", default_value_t = 0.8)]
    pub d_horizontal_mm: f64,
    #[arg(long = "d-inclined", default_value_t = 0.4)]
    pub d_inclined_mm: f64,
    #[arg(long = "spacing-um", default_value_t = 100.0)]
    pub spacing_um: f64,
    #[arg(long, value_parser = parse_triple, default_value = "1,1,1")]
    pub reps: [usize; 3],
    #[arg(long, default_value_t = 2)]
    pub supersample: usize,
    #[arg(long = "build-axis", default_value = "z")]
    pub build_axis: Axis,
    #[arg(long = "node-scale")]
    pub node_scale: Option<f64>,
    #[arg(long = "alpha-void", default_value_t = DEFAULT_ALPHA_VOID)]
    pub alpha_void: f64,
    /// Defect model parameters as a JSON object (DefectSpec).
    #[arg(long)]
    pub defects: Option<String>,
    /// Override the defect RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short, default_value = "octet.raw.json")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub cell_mm: f64,
    pub d_horizontal_mm: f64,
    pub d_inclined_mm: f64,
    pub spacing_um: f64,
    pub reps: [usize; 3],
    pub supersample: usize,
    pub build_axis: Axis,
    pub node_scale: Option<f64>,
    pub alpha_void: f64,
    pub defects: Option<DefectSpec>,
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 14_500.0)]
    pub threshold: f64,
    #[arg(long = "alpha-void", default_value_t = DEFAULT_ALPHA_VOID)]
    pub alpha_void: f64,
    #[arg(long, short, default_value = "segmented.raw.json")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub input: String,
    pub threshold: f64,
    pub alpha_void: f64,
}

#[derive(Args)]
pub struct PorosityArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Segment the input with this grayscale threshold first (otherwise any
    /// nonzero voxel is material).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args)]
pub struct HomogenizeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "pbc")]
    pub bc: String,
    #[arg(long = "E-MPa", default_value_t = 190_000.0)]
    pub e_mpa: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
    #[arg(long = "p", default_value_t = 2)]
    pub degree: usize,
    #[arg(long = "voxels-per-cell", default_value_t = 4)]
    pub voxels_per_cell: usize,
    #[arg(long = "alpha-void", default_value_t = DEFAULT_ALPHA_VOID)]
    pub alpha_void: f64,
    #[arg(long = "rel-tol", default_value_t = 1e-10)]
    pub rel_tolerance: f64,
    #[arg(long = "max-iters", default_value_t = 50_000)]
    pub max_iterations: usize,
    #[arg(long, default_value = "jacobi")]
    pub preconditioner: String,
    /// Extract unit cells of this voxel size and homogenize the ensemble.
    #[arg(long = "extract-cells", value_parser = parse_triple)]
    pub extract_cells: Option<[usize; 3]>,
    /// Cap on the number of extracted cells (scan order).
    #[arg(long = "max-cells")]
    pub max_cells: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeConfig {
    pub input: String,
    pub bc: BcKind,
    pub e_mpa: f64,
    pub nu: f64,
    pub degree: usize,
    pub voxels_per_cell: usize,
    pub alpha_void: f64,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
    pub extract_cells: Option<[usize; 3]>,
    pub max_cells: Option<usize>,
}

#[derive(Args)]
pub struct DnsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long = "E-MPa", default_value_t = 190_000.0)]
    pub e_mpa: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
    #[arg(long = "pull-axis", default_value = "z")]
    pub pull_axis: Axis,
    #[arg(long = "delta-mm", default_value_t = 0.01)]
    pub delta_mm: f64,
    /// Gage region as fractions of the specimen length.
    #[arg(long, value_parser = parse_pair, default_value = "0.25,0.75")]
    pub gage: [f64; 2],
    #[arg(long = "p", default_value_t = 2)]
    pub degree: usize,
    #[arg(long = "voxels-per-cell", default_value_t = 4)]
    pub voxels_per_cell: usize,
    #[arg(long = "alpha-void", default_value_t = DEFAULT_ALPHA_VOID)]
    pub alpha_void: f64,
    #[arg(long = "beta-factor", default_value_t = 1e8)]
    pub beta_factor: f64,
    #[arg(long = "rel-tol", default_value_t = 1e-8)]
    pub rel_tolerance: f64,
    #[arg(long = "max-iters", default_value_t = 50_000)]
    pub max_iterations: usize,
    #[arg(long, default_value = "jacobi")]
    pub preconditioner: String,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsConfig {
    pub input: String,
    pub e_mpa: f64,
    pub nu: f64,
    pub pull_axis: Axis,
    pub delta_mm: f64,
    pub gage: [f64; 2],
    pub degree: usize,
    pub voxels_per_cell: usize,
    pub alpha_void: f64,
    pub beta_factor: f64,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "cell-mm", default_value_t = 4.0)]
    pub cell_mm: f64,
    #[arg(long = "d-horizontal", default_value_t = 0.8)]
    pub d_horizontal_mm: f64,
    #[arg(long = "d-inclined", default_value_t = 0.4)]
    pub d_inclined_mm: f64,
    #[arg(long = "build-axis", default_value = "z")]
    pub build_axis: Axis,
    #[arg(long = "node-scale")]
    pub node_scale: Option<f64>,
    /// Diameter increments in mm applied to both strut families.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6"
    )]
    pub increments: Vec<f64>,
    #[arg(long = "spacing-um", default_value_t = 100.0)]
    pub spacing_um: f64,
    #[arg(long, default_value_t = 2)]
    pub supersample: usize,
    #[arg(long = "p", default_value_t = 2)]
    pub degree: usize,
    #[arg(long = "voxels-per-cell", default_value_t = 4)]
    pub voxels_per_cell: usize,
    #[arg(long = "E-MPa", default_value_t = 190_000.0)]
    pub e_mpa: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
    #[arg(long = "rel-tol", default_value_t = 1e-8)]
    pub rel_tolerance: f64,
    #[arg(long = "max-iters", default_value_t = 50_000)]
    pub max_iterations: usize,
    #[arg(long, short, default_value = "sweep.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub cell_mm: f64,
    pub d_horizontal_mm: f64,
    pub d_inclined_mm: f64,
    pub build_axis: Axis,
    pub node_scale: Option<f64>,
    pub increments: Vec<f64>,
    pub spacing_um: f64,
    pub supersample: usize,
    pub degree: usize,
    pub voxels_per_cell: usize,
    pub e_mpa: f64,
    pub nu: f64,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long = "E-MPa", default_value_t = 190_000.0)]
    pub e_mpa: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
    #[arg(long = "pull-axis", default_value = "z")]
    pub pull_axis: Axis,
    #[arg(long = "delta-mm", default_value_t = 0.01)]
    pub delta_mm: f64,
    #[arg(long, value_parser = parse_pair, default_value = "0.25,0.75")]
    pub gage: [f64; 2],
    /// Variants as V:P pairs (voxels per cell : degree).
    #[arg(long, value_parser = parse_variant, value_delimiter = ',', default_value = "4:1,4:2,2:1,2:2")]
    pub variants: Vec<(usize, usize)>,
    #[arg(long = "alpha-void", default_value_t = DEFAULT_ALPHA_VOID)]
    pub alpha_void: f64,
    #[arg(long = "rel-tol", default_value_t = 1e-8)]
    pub rel_tolerance: f64,
    #[arg(long = "max-iters", default_value_t = 50_000)]
    pub max_iterations: usize,
    #[arg(long, short, default_value = "convergence.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub input: String,
    pub e_mpa: f64,
    pub nu: f64,
    pub pull_axis: Axis,
    pub delta_mm: f64,
    pub gage: [f64; 2],
    pub variants: Vec<(usize, usize)>,
    pub alpha_void: f64,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Args)]
pub struct ExportVtkArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long = "alpha-void", default_value_t = DEFAULT_ALPHA_VOID)]
    pub alpha_void: f64,
    /// Solve a tensile test and export its displacement/von Mises fields
    /// (otherwise zero fields are written).
    #[arg(long = "with-tensile", default_value_t = false)]
    pub with_tensile: bool,
    #[arg(long = "E-MPa", default_value_t = 190_000.0)]
    pub e_mpa: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
    #[arg(long = "pull-axis", default_value = "z")]
    pub pull_axis: Axis,
    #[arg(long = "delta-mm", default_value_t = 0.01)]
    pub delta_mm: f64,
    #[arg(long = "p", default_value_t = 1)]
    pub degree: usize,
    #[arg(long = "voxels-per-cell", default_value_t = 4)]
    pub voxels_per_cell: usize,
    #[arg(long, short, default_value = "fields.vtk")]
    pub output: PathBuf,
}
