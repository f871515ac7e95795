//! Periodic boundary conditions via master-slave elimination.
//!
//! Opposite faces of the Cartesian box have congruent mode layouts by
//! construction, so pairing is pure index arithmetic: modes on a positive
//! face are slaved to the matching modes on the negative face. Vertex
//! (linear) modes carry the affine jump `eps^M . dx`; higher-order edge and
//! face modes are paired with zero offset since the affine field lives
//! entirely in the linear modes. The remaining rigid translation is removed
//! by pinning the master corner to the affine field value.

use nalgebra::Vector6;

use crate::constraints::{ConstraintBuilder, ConstraintSet};
use crate::error::Result;
use crate::mesh::{CellMesh, Entity};
use crate::solver::SolverConfig;

use super::{
    average_strain, average_stress, hill_mandel_residual, strain_gradient, unit_load_cases, BcKind,
    CaseSolution, RveBcStrategy, RveContext,
};

/// Build the periodic constraint set for a macroscopic strain.
pub fn pbc_constraints(mesh: &CellMesh, eps_m: &Vector6<f64>) -> Result<ConstraintSet> {
    let g_mat = strain_gradient(eps_m);
    let dims = mesh.cell_dims;
    let mut builder = ConstraintBuilder::identity(mesh.total_dofs());

    let wrap = |at: [usize; 3], skip: Option<usize>| -> [usize; 3] {
        let mut w = at;
        for d in 0..3 {
            if Some(d) == skip {
                continue;
            }
            if w[d] == dims[d] {
                w[d] = 0;
            }
        }
        w
    };

    for g in 0..mesh.scalar_mode_count() {
        match mesh.entity_of_scalar(g) {
            Entity::Vertex { at } => {
                let w = wrap(at, None);
                if w != at {
                    let master = mesh.scalar_of_entity(&Entity::Vertex { at: w });
                    let xs = mesh.vertex_position(at);
                    let xm = mesh.vertex_position(w);
                    let dx = [xs[0] - xm[0], xs[1] - xm[1], xs[2] - xm[2]];
                    for c in 0..3 {
                        let offset =
                            g_mat[(c, 0)] * dx[0] + g_mat[(c, 1)] * dx[1] + g_mat[(c, 2)] * dx[2];
                        builder.set_slave(3 * g + c, 3 * master + c, offset)?;
                    }
                } else if at == [0, 0, 0] {
                    // Pin the master corner to the affine value (zero at the
                    // origin): removes the rigid translation.
                    for c in 0..3 {
                        builder.set_fixed(3 * g + c, 0.0)?;
                    }
                }
            }
            Entity::Edge { dir, at, k } => {
                let w = wrap(at, Some(dir));
                if w != at {
                    let master = mesh.scalar_of_entity(&Entity::Edge { dir, at: w, k });
                    for c in 0..3 {
                        builder.set_slave(3 * g + c, 3 * master + c, 0.0)?;
                    }
                }
            }
            Entity::Face { normal, at, k } => {
                if at[normal] == dims[normal] {
                    let mut w = at;
                    w[normal] = 0;
                    let master = mesh.scalar_of_entity(&Entity::Face { normal, at: w, k });
                    for c in 0..3 {
                        builder.set_slave(3 * g + c, 3 * master + c, 0.0)?;
                    }
                }
            }
            Entity::Interior { .. } => {}
        }
    }
    builder.finalize()
}

pub struct Pbc;

impl RveBcStrategy for Pbc {
    fn kind(&self) -> BcKind {
        BcKind::Pbc
    }

    fn name(&self) -> &'static str {
        "pbc"
    }

    fn solve_case(
        &self,
        ctx: &RveContext,
        case: usize,
        cfg: &SolverConfig,
    ) -> Result<CaseSolution> {
        let eps_m = unit_load_cases()[case];
        let mut sys = ctx.base.clone_bare();
        sys.set_constraints(pbc_constraints(&ctx.mesh, &eps_m)?);
        let (u_full, report) = sys.solve(cfg)?;
        let avg_stress = average_stress(&sys, &u_full);
        let avg_strain = average_strain(&sys, &u_full);
        let hill_mandel = hill_mandel_residual(&mut sys, &u_full);
        Ok(CaseSolution {
            u_full,
            avg_stress,
            avg_strain,
            report,
            hill_mandel,
        })
    }
}
