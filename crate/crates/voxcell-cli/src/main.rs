mod args;
mod report;
mod vtk;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::Parser;
use serde::de::DeserializeOwned;
use serde::Serialize;

use args::*;
use report::{EnsembleReport, HomogenizeReport, Manifest, ReportFile};
use voxcell_core::assembly::PenaltyConfig;
use voxcell_core::defects::{apply_defects, DefectSpec};
use voxcell_core::dns::{
    convergence_study, porosity_sweep, tensile_test, ConvergenceVariant, TensileSetup,
};
use voxcell_core::fields::evaluate_fields;
use voxcell_core::homog::{directional_modulus, effective_tensor, ensemble_homogenize, RveContext};
use voxcell_core::lattice::{octet_solid, tile, voxelize, OctetCellSpec, DEFAULT_NODE_SCALE};
use voxcell_core::solver::SolverConfig;
use voxcell_core::voxel::{extract_unit_cells, porosity, threshold_segment, SegmentationConfig};
use voxcell_core::voxel_io::{load_grid, load_raw_volume, save_grid};

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let obj = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{obj}");
            ExitCode::from(1)
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("VOXCELL_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Load a run config from a bare config file, a manifest, or a report that
/// embeds a manifest.
fn load_config<C: DeserializeOwned>(path: &Path) -> anyhow::Result<C> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    for candidate in [
        value.pointer("/manifest/config"),
        value.pointer("/config"),
        Some(&value),
    ]
    .into_iter()
    .flatten()
    {
        if let Ok(cfg) = serde_json::from_value::<C>(candidate.clone()) {
            return Ok(cfg);
        }
    }
    bail!("no usable config object in {}", path.display());
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest<C: Serialize>(
    output: &Path,
    command: &str,
    config: &C,
    wall_ms: u128,
) -> anyhow::Result<()> {
    let manifest = Manifest::new(command, config, wall_ms);
    std::fs::write(
        manifest_path(output),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate { kind } => match kind {
            GenerateKind::Octet(a) => generate_octet(a),
        },
        Command::Segment(a) => segment(a),
        Command::Porosity(a) => porosity_cmd(a),
        Command::Homogenize(a) => homogenize(a),
        Command::Dns(a) => dns(a),
        Command::Sweep(a) => sweep(a),
        Command::Convergence(a) => convergence(a),
        Command::ExportVtk(a) => export_vtk_cmd(a),
    }
}

fn generate_octet(a: GenerateOctetArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut config = match &a.config {
        Some(path) => load_config::<GenerateConfig>(path)?,
        None => GenerateConfig {
            cell_mm: a.cell_mm,
            d_horizontal_mm: a.d_horizontal_mm,
            d_inclined_mm: a.d_inclined_mm,
            spacing_um: a.spacing_um,
            reps: a.reps,
            supersample: a.supersample,
            build_axis: a.build_axis,
            node_scale: a.node_scale,
            alpha_void: a.alpha_void,
            defects: match &a.defects {
                Some(json) => Some(serde_json::from_str::<DefectSpec>(json)?),
                None => None,
            },
        },
    };
    if let (Some(seed), Some(d)) = (a.seed, config.defects.as_mut()) {
        d.rng_seed = seed;
    }

    let spec = OctetCellSpec {
        cell_size_mm: config.cell_mm,
        d_horizontal_mm: config.d_horizontal_mm,
        d_inclined_mm: config.d_inclined_mm,
        build_axis: config.build_axis,
        node_scale: config.node_scale.unwrap_or(DEFAULT_NODE_SCALE),
    };
    let spacing = config.spacing_um * 1e-3;
    let n = (config.cell_mm / spacing).round() as usize;
    anyhow::ensure!(
        n >= 1 && (n as f64 * spacing - config.cell_mm).abs() < 1e-9,
        "spacing {} um does not evenly divide the cell size {} mm",
        config.spacing_um,
        config.cell_mm
    );
    let solid = octet_solid(&spec)?;
    let mut cell = voxelize(&solid, [n; 3], [spacing; 3], config.supersample)?;
    cell.alpha_void = config.alpha_void;
    let mut grid = tile(&cell, config.reps)?;
    if let Some(d) = &config.defects {
        grid = apply_defects(&grid, d)?;
    }
    save_grid(&grid, &a.output)?;
    write_manifest(
        &a.output,
        "generate octet",
        &config,
        start.elapsed().as_millis(),
    )?;
    println!(
        "wrote {} ({}x{}x{} voxels, porosity {:?})",
        a.output.display(),
        grid.dims[0],
        grid.dims[1],
        grid.dims[2],
        porosity(&grid)
    );
    Ok(())
}

fn segment(a: SegmentArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let config = match &a.config {
        Some(path) => load_config::<SegmentConfig>(path)?,
        None => SegmentConfig {
            input: a.input.display().to_string(),
            threshold: a.threshold,
            alpha_void: a.alpha_void,
        },
    };
    let vol = load_raw_volume(Path::new(&config.input))?;
    let cfg = SegmentationConfig::new(config.threshold)?;
    let grid = threshold_segment(&vol, &cfg, config.alpha_void)?;
    save_grid(&grid, &a.output)?;
    write_manifest(&a.output, "segment", &config, start.elapsed().as_millis())?;
    println!(
        "wrote {} (porosity {:?})",
        a.output.display(),
        porosity(&grid)
    );
    Ok(())
}

fn porosity_cmd(a: PorosityArgs) -> anyhow::Result<()> {
    let grid = match a.threshold {
        Some(t) => {
            let vol = load_raw_volume(&a.input)?;
            threshold_segment(&vol, &SegmentationConfig::new(t)?, 1e-11)?
        }
        None => load_grid(&a.input, 1e-11)?,
    };
    println!("{:?}", porosity(&grid));
    Ok(())
}

fn homogenize(a: HomogenizeArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let config = match &a.config {
        Some(path) => load_config::<HomogenizeConfig>(path)?,
        None => HomogenizeConfig {
            input: a
                .input
                .as_ref()
                .context("--input is required without --config")?
                .display()
                .to_string(),
            bc: a.bc.parse()?,
            e_mpa: a.e_mpa,
            nu: a.nu,
            degree: a.degree,
            voxels_per_cell: a.voxels_per_cell,
            alpha_void: a.alpha_void,
            rel_tolerance: a.rel_tolerance,
            max_iterations: a.max_iterations,
            preconditioner: a.preconditioner.parse()?,
            extract_cells: a.extract_cells,
            max_cells: a.max_cells,
        },
    };
    let grid = load_grid(Path::new(&config.input), config.alpha_void)?;
    let mat = voxcell_core::material::ElasticMaterial::new(config.e_mpa, config.nu)?;
    let solver = SolverConfig {
        rel_tolerance: config.rel_tolerance,
        max_iterations: config.max_iterations,
        preconditioner: config.preconditioner,
    };
    let vpc = [config.voxels_per_cell; 3];

    if let Some(cell_size) = config.extract_cells {
        let available = (0..3)
            .map(|d| grid.dims[d] / cell_size[d])
            .product::<usize>();
        let count = config.max_cells.unwrap_or(available).min(available);
        let cells = if count == 0 {
            Vec::new()
        } else {
            extract_unit_cells(&grid, cell_size, count)?
        };
        let results = if cells.is_empty() {
            EnsembleReport::default()
        } else {
            let (stats, tensors) =
                ensemble_homogenize(&cells, vpc, config.degree, mat, config.bc, &solver)?;
            EnsembleReport::new(&stats, &tensors)
        };
        let file = ReportFile {
            results,
            manifest: Manifest::new("homogenize", &config, start.elapsed().as_millis()),
        };
        emit(&file, a.output.as_deref())
    } else {
        let ctx = RveContext::new(&grid, vpc, config.degree, mat, config.input.clone())?;
        let tensor = effective_tensor(&ctx, config.bc, &solver)?;
        let e_dir = directional_modulus(&tensor.c_star)?;
        let file = ReportFile {
            results: HomogenizeReport::new(&tensor, e_dir),
            manifest: Manifest::new("homogenize", &config, start.elapsed().as_millis()),
        };
        emit(&file, a.output.as_deref())
    }
}

fn emit<R: Serialize, C: Serialize>(
    file: &ReportFile<R, C>,
    output: Option<&Path>,
) -> anyhow::Result<()> {
    match output {
        Some(path) => report::write_report(file, path),
        None => report::to_stdout(file),
    }
}

#[derive(Serialize)]
struct DnsReport {
    #[serde(rename = "E_star_MPa")]
    e_star_mpa: f64,
    engineering_stress_mpa: f64,
    gage_strain: f64,
    reaction_force_n: f64,
    volume_avg_force_n: f64,
    cross_section_mm2: f64,
    gage_length_mm: f64,
    dofs: usize,
    solver: Vec<report::SolverEntry>,
}

fn dns(a: DnsArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let config = match &a.config {
        Some(path) => load_config::<DnsConfig>(path)?,
        None => DnsConfig {
            input: a
                .input
                .as_ref()
                .context("--input is required without --config")?
                .display()
                .to_string(),
            e_mpa: a.e_mpa,
            nu: a.nu,
            pull_axis: a.pull_axis,
            delta_mm: a.delta_mm,
            gage: a.gage,
            degree: a.degree,
            voxels_per_cell: a.voxels_per_cell,
            alpha_void: a.alpha_void,
            beta_factor: a.beta_factor,
            rel_tolerance: a.rel_tolerance,
            max_iterations: a.max_iterations,
            preconditioner: a.preconditioner.parse()?,
        },
    };
    let grid = load_grid(Path::new(&config.input), config.alpha_void)?;
    let mat = voxcell_core::material::ElasticMaterial::new(config.e_mpa, config.nu)?;
    let setup = TensileSetup {
        pull_axis: config.pull_axis,
        pull_displacement_mm: config.delta_mm,
        gage_fraction: config.gage,
    };
    let solver = SolverConfig {
        rel_tolerance: config.rel_tolerance,
        max_iterations: config.max_iterations,
        preconditioner: config.preconditioner,
    };
    let (res, _, _) = tensile_test(
        &grid,
        [config.voxels_per_cell; 3],
        config.degree,
        &mat,
        &setup,
        &PenaltyConfig {
            beta_factor: config.beta_factor,
        },
        &solver,
    )?;
    let file = ReportFile {
        results: DnsReport {
            e_star_mpa: res.e_star_mpa,
            engineering_stress_mpa: res.engineering_stress_mpa,
            gage_strain: res.gage_strain,
            reaction_force_n: res.reaction_force_n,
            volume_avg_force_n: res.volume_avg_force_n,
            cross_section_mm2: res.cross_section_mm2,
            gage_length_mm: res.gage_length_mm,
            dofs: res.dofs,
            solver: vec![report::SolverEntry::from(&res.report)],
        },
        manifest: Manifest::new("dns", &config, start.elapsed().as_millis()),
    };
    emit(&file, a.output.as_deref())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let config = match &a.config {
        Some(path) => load_config::<SweepConfig>(path)?,
        None => SweepConfig {
            cell_mm: a.cell_mm,
            d_horizontal_mm: a.d_horizontal_mm,
            d_inclined_mm: a.d_inclined_mm,
            build_axis: a.build_axis,
            node_scale: a.node_scale,
            increments: a.increments.clone(),
            spacing_um: a.spacing_um,
            supersample: a.supersample,
            degree: a.degree,
            voxels_per_cell: a.voxels_per_cell,
            e_mpa: a.e_mpa,
            nu: a.nu,
            rel_tolerance: a.rel_tolerance,
            max_iterations: a.max_iterations,
        },
    };
    let base = OctetCellSpec {
        cell_size_mm: config.cell_mm,
        d_horizontal_mm: config.d_horizontal_mm,
        d_inclined_mm: config.d_inclined_mm,
        build_axis: config.build_axis,
        node_scale: config.node_scale.unwrap_or(DEFAULT_NODE_SCALE),
    };
    let mat = voxcell_core::material::ElasticMaterial::new(config.e_mpa, config.nu)?;
    let solver = SolverConfig {
        rel_tolerance: config.rel_tolerance,
        max_iterations: config.max_iterations,
        preconditioner: Default::default(),
    };
    let points = porosity_sweep(
        &base,
        &config.increments,
        config.spacing_um * 1e-3,
        config.supersample,
        [config.voxels_per_cell; 3],
        config.degree,
        &mat,
        &solver,
    )?;
    let mut csv = String::from("phi,E_star_MPa,dofs,p,voxels_per_cell,solver_iters\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.porosity,
            p.e_star_mpa.map_or(String::from("nan"), |e| e.to_string()),
            p.dofs,
            p.degree,
            p.voxels_per_cell[0],
            p.solver_iterations
        ));
    }
    std::fs::write(&a.output, csv)?;
    write_manifest(&a.output, "sweep", &config, start.elapsed().as_millis())?;
    println!("wrote {} ({} points)", a.output.display(), points.len());
    Ok(())
}

fn convergence(a: ConvergenceArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let config = match &a.config {
        Some(path) => load_config::<ConvergenceConfig>(path)?,
        None => ConvergenceConfig {
            input: a
                .input
                .as_ref()
                .context("--input is required without --config")?
                .display()
                .to_string(),
            e_mpa: a.e_mpa,
            nu: a.nu,
            pull_axis: a.pull_axis,
            delta_mm: a.delta_mm,
            gage: a.gage,
            variants: a.variants.clone(),
            alpha_void: a.alpha_void,
            rel_tolerance: a.rel_tolerance,
            max_iterations: a.max_iterations,
        },
    };
    let grid = load_grid(Path::new(&config.input), config.alpha_void)?;
    let phi = porosity(&grid);
    let mat = voxcell_core::material::ElasticMaterial::new(config.e_mpa, config.nu)?;
    let setup = TensileSetup {
        pull_axis: config.pull_axis,
        pull_displacement_mm: config.delta_mm,
        gage_fraction: config.gage,
    };
    let solver = SolverConfig {
        rel_tolerance: config.rel_tolerance,
        max_iterations: config.max_iterations,
        preconditioner: Default::default(),
    };
    let variants: Vec<ConvergenceVariant> = config
        .variants
        .iter()
        .map(|&(v, p)| ConvergenceVariant {
            voxels_per_cell: [v; 3],
            degree: p,
        })
        .collect();
    let study = convergence_study(
        &grid,
        &mat,
        &setup,
        &variants,
        &PenaltyConfig::default(),
        &solver,
    )?;
    let mut csv = String::from("phi,E_star_MPa,dofs,p,voxels_per_cell,solver_iters\n");
    for run in &study.runs {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            phi,
            run.e_star_mpa
                .map_or(String::from("nan"), |e| e.to_string()),
            run.dofs,
            run.variant.degree,
            run.variant.voxels_per_cell[0],
            run.solver_iterations
        ));
    }
    std::fs::write(&a.output, csv)?;
    // Full study (with relative errors) as a JSON report next to the CSV.
    let mut json_path = a.output.clone().into_os_string();
    json_path.push(".json");
    let file = ReportFile {
        results: study,
        manifest: Manifest::new("convergence", &config, start.elapsed().as_millis()),
    };
    report::write_report(&file, Path::new(&json_path))?;
    write_manifest(
        &a.output,
        "convergence",
        &config,
        start.elapsed().as_millis(),
    )?;
    println!("wrote {}", a.output.display());
    Ok(())
}

fn export_vtk_cmd(a: ExportVtkArgs) -> anyhow::Result<()> {
    let grid = load_grid(&a.input, a.alpha_void)?;
    let n = grid.voxel_count();
    let fields = if a.with_tensile {
        let mat = voxcell_core::material::ElasticMaterial::new(a.e_mpa, a.nu)?;
        let setup = TensileSetup {
            pull_axis: a.pull_axis,
            pull_displacement_mm: a.delta_mm,
            gage_fraction: [0.25, 0.75],
        };
        let (_, sys, u) = tensile_test(
            &grid,
            [a.voxels_per_cell; 3],
            a.degree,
            &mat,
            &setup,
            &PenaltyConfig::default(),
            &SolverConfig {
                rel_tolerance: 1e-8,
                ..Default::default()
            },
        )?;
        let mut points = Vec::with_capacity(n);
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    points.push([
                        (x as f64 + 0.5) * grid.spacing[0],
                        (y as f64 + 0.5) * grid.spacing[1],
                        (z as f64 + 0.5) * grid.spacing[2],
                    ]);
                }
            }
        }
        let samples = evaluate_fields(&sys.mesh, &grid, &mat, &u, &points)?;
        vtk::CellFields {
            displacement: samples.iter().map(|s| s.displacement).collect(),
            von_mises: samples.iter().map(|s| s.von_mises()).collect(),
        }
    } else {
        vtk::CellFields::zeros(n)
    };
    vtk::export_vtk(&grid, &fields, &a.output)?;
    println!("wrote {}", a.output.display());
    Ok(())
}
