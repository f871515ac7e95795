//! Static uniform boundary conditions: tractions `t = sigma^M . n` applied
//! on the material part of the box boundary (the physical cut surface; a
//! traction on fictitious void faces would inject load into the compliant
//! filler and produce a meaningless apparent compliance).
//!
//! The pure-traction problem keeps its six rigid modes; they are removed by
//! rank-one penalties on the mean translation and mean rotation functionals,
//! which are consistent constraints and leave the strain field untouched.

use nalgebra::Vector6;

use crate::assembly::{BoxFace, FaceTraction, FcmSystem};
use crate::error::Result;
use crate::kernels::VoxelKernelTable;
use crate::mesh::CellMesh;
use crate::solver::SolverConfig;

use super::{
    average_strain, average_stress, unit_load_cases, BcKind, CaseSolution, RveBcStrategy,
    RveContext,
};

/// Volume-integral rigid-mode functionals: three translations
/// `T_c(u) = int u_c dV` and three rotations about the box center
/// `R_a(u) = int ((x - x_c) x u)_a dV`, as DOF vectors.
pub fn rigid_mode_vectors(mesh: &CellMesh, table: &VoxelKernelTable) -> [Vec<f64>; 6] {
    let n = mesh.total_dofs();
    let mut vecs = [(); 6].map(|_| vec![0.0; n]);
    let n_modes = mesh.modes_per_cell();
    let voxels = table.voxel_count();

    // Per-local-mode volume and first moments over the whole cell.
    let mut vol = vec![0.0; n_modes];
    let mut mom = [vec![0.0; n_modes], vec![0.0; n_modes], vec![0.0; n_modes]];
    for v in 0..voxels {
        for m in 0..n_modes {
            vol[m] += table.mode_volume[v][m];
            for d in 0..3 {
                mom[d][m] += table.mode_moment[v][d][m];
            }
        }
    }

    let ext = mesh.extent();
    let center = [0.5 * ext[0], 0.5 * ext[1], 0.5 * ext[2]];
    let h = mesh.cell_size();
    for cell_id in 0..mesh.cell_count() {
        let cc = mesh.cell_coords(cell_id);
        let origin = [
            cc[0] as f64 * h[0],
            cc[1] as f64 * h[1],
            cc[2] as f64 * h[2],
        ];
        let modes = mesh.cell_scalar_modes(cell_id);
        for (m, &g) in modes.iter().enumerate() {
            let gi = 3 * g as usize;
            // int phi (x - center) dV, global coordinates.
            let mut xm = [0.0; 3];
            for d in 0..3 {
                xm[d] = mom[d][m] + (origin[d] - center[d]) * vol[m];
            }
            for c in 0..3 {
                vecs[c][gi + c] += vol[m];
            }
            // R_x = int (y u_z - z u_y), R_y = int (z u_x - x u_z),
            // R_z = int (x u_y - y u_x).
            vecs[3][gi + 2] += xm[1];
            vecs[3][gi + 1] -= xm[2];
            vecs[4][gi] += xm[2];
            vecs[4][gi + 2] -= xm[0];
            vecs[5][gi + 1] += xm[0];
            vecs[5][gi] -= xm[1];
        }
    }
    vecs
}

/// Attach the six rigid-mode penalties, scaled to the elastic diagonal so
/// the extra eigenvalues blend into the operator spectrum.
pub fn constrain_rigid_modes(sys: &mut FcmSystem) {
    let vecs = rigid_mode_vectors(&sys.mesh, &sys.table);
    let scale = sys.elastic_diagonal_scale();
    for g in vecs {
        let norm_sq: f64 = g.iter().map(|v| v * v).sum();
        if norm_sq > 0.0 {
            sys.add_rank_term(scale / norm_sq, g);
        }
    }
}

/// Tractions `t = sigma^M . n` on all six box faces.
pub fn subc_tractions(sigma_m: &Vector6<f64>, material_only: bool) -> Vec<FaceTraction> {
    // Voigt order (xx, yy, zz, yz, xz, xy).
    let s = [
        [sigma_m[0], sigma_m[5], sigma_m[4]],
        [sigma_m[5], sigma_m[1], sigma_m[3]],
        [sigma_m[4], sigma_m[3], sigma_m[2]],
    ];
    BoxFace::all()
        .iter()
        .map(|&face| {
            let n = face.normal();
            let mut t = [0.0; 3];
            for c in 0..3 {
                for d in 0..3 {
                    t[c] += s[c][d] * n[d];
                }
            }
            FaceTraction {
                face,
                traction: t,
                material_only,
            }
        })
        .collect()
}

#[derive(Default)]
pub struct Subc {
    /// Load the whole embedding boundary instead of only material faces.
    /// The default keeps fictitious void faces traction-free; the full
    /// variant is for grids whose low-alpha phase is a real (soft)
    /// material rather than void.
    pub full_boundary: bool,
}

impl RveBcStrategy for Subc {
    fn kind(&self) -> BcKind {
        BcKind::Subc
    }

    fn name(&self) -> &'static str {
        "subc"
    }

    fn solve_case(
        &self,
        ctx: &RveContext,
        case: usize,
        cfg: &SolverConfig,
    ) -> Result<CaseSolution> {
        let sigma_m = unit_load_cases()[case];
        let mut sys = ctx.base.clone_bare();
        for tr in subc_tractions(&sigma_m, !self.full_boundary) {
            sys.add_traction(&tr);
        }
        constrain_rigid_modes(&mut sys);
        let (u_full, report) = sys.solve(cfg)?;
        let avg_stress = average_stress(&sys, &u_full);
        let avg_strain = average_strain(&sys, &u_full);
        Ok(CaseSolution {
            u_full,
            avg_stress,
            avg_strain,
            report,
            // The Hill-Mandel check applies to the strain-controlled
            // families; not evaluated for traction control.
            hill_mandel: None,
        })
    }
}
