//! Legacy ASCII VTK STRUCTURED_POINTS export with per-voxel cell data.

use std::io::Write;
use std::path::Path;

use voxcell_core::voxel::VoxelGrid;

/// Per-voxel fields sampled at voxel centers.
pub struct CellFields {
    pub displacement: Vec<[f64; 3]>,
    pub von_mises: Vec<f64>,
}

impl CellFields {
    pub fn zeros(n: usize) -> Self {
        Self {
            displacement: vec![[0.0; 3]; n],
            von_mises: vec![0.0; n],
        }
    }
}

/// Write alpha, displacement and von Mises stress as CELL_DATA on the voxel
/// lattice. DIMENSIONS are the point dims (voxel dims + 1).
pub fn export_vtk(grid: &VoxelGrid, fields: &CellFields, path: &Path) -> anyhow::Result<()> {
    let n = grid.voxel_count();
    anyhow::ensure!(
        fields.displacement.len() == n && fields.von_mises.len() == n,
        "field length does not match the voxel count"
    );
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "voxcell fields")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(
        out,
        "DIMENSIONS {} {} {}",
        grid.dims[0] + 1,
        grid.dims[1] + 1,
        grid.dims[2] + 1
    )?;
    writeln!(out, "ORIGIN 0 0 0")?;
    writeln!(
        out,
        "SPACING {} {} {}",
        grid.spacing[0], grid.spacing[1], grid.spacing[2]
    )?;
    writeln!(out, "CELL_DATA {n}")?;

    writeln!(out, "SCALARS alpha double")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for i in 0..n {
        writeln!(out, "{}", grid.alpha_at(i))?;
    }

    writeln!(out, "VECTORS displacement double")?;
    for u in &fields.displacement {
        writeln!(out, "{} {} {}", u[0], u[1], u[2])?;
    }

    writeln!(out, "SCALARS von_mises double")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in &fields.von_mises {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}
