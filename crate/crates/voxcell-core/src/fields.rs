//! Point evaluation of displacement, strain and stress fields.

use nalgebra::Vector6;

use crate::basis::ShapeBasis;
use crate::error::{Error, Result};
use crate::material::{von_mises, ElasticMaterial};
use crate::mesh::CellMesh;
use crate::voxel::VoxelGrid;

#[derive(Debug, Clone)]
pub struct FieldSample {
    pub displacement: [f64; 3],
    /// Voigt strain (engineering shear), order (xx, yy, zz, yz, xz, xy).
    pub strain: Vector6<f64>,
    /// Voigt stress `alpha C eps` of the containing voxel.
    pub stress: Vector6<f64>,
}

impl FieldSample {
    pub fn von_mises(&self) -> f64 {
        von_mises(&self.stress)
    }
}

/// Evaluate `(u, eps, sigma)` at physical points inside the domain.
pub fn evaluate_fields(
    mesh: &CellMesh,
    grid: &VoxelGrid,
    mat: &ElasticMaterial,
    solution: &[f64],
    points: &[[f64; 3]],
) -> Result<Vec<FieldSample>> {
    assert_eq!(solution.len(), mesh.total_dofs());
    let basis = ShapeBasis::new(mesh.degree)?;
    let p1 = mesh.degree + 1;
    let h = mesh.cell_size();
    let extent = mesh.extent();
    let c = mat.stiffness_matrix();

    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        for d in 0..3 {
            if !(0.0..=extent[d]).contains(&p[d]) {
                return Err(Error::OutsideDomain { point: p });
            }
        }
        let mut cell = [0usize; 3];
        let mut xi = [0.0f64; 3];
        for d in 0..3 {
            let c_f = (p[d] / h[d]).floor();
            cell[d] = (c_f as usize).min(mesh.cell_dims[d] - 1);
            xi[d] = 2.0 * (p[d] - cell[d] as f64 * h[d]) / h[d] - 1.0;
            xi[d] = xi[d].clamp(-1.0, 1.0);
        }
        let (vx, dx) = basis.eval(xi[0])?;
        let (vy, dy) = basis.eval(xi[1])?;
        let (vz, dz) = basis.eval(xi[2])?;

        let cell_id = mesh.cell_id(cell);
        let modes = mesh.cell_scalar_modes(cell_id);
        let mut u = [0.0f64; 3];
        let mut grad = [[0.0f64; 3]; 3]; // grad[c][d] = du_c/dx_d
        for cc in 0..p1 {
            for bb in 0..p1 {
                for aa in 0..p1 {
                    let m = aa + p1 * (bb + p1 * cc);
                    let g = modes[m] as usize;
                    let phi = vx[aa] * vy[bb] * vz[cc];
                    let gphi = [
                        dx[aa] * vy[bb] * vz[cc] * 2.0 / h[0],
                        vx[aa] * dy[bb] * vz[cc] * 2.0 / h[1],
                        vx[aa] * vy[bb] * dz[cc] * 2.0 / h[2],
                    ];
                    for comp in 0..3 {
                        let coeff = solution[3 * g + comp];
                        u[comp] += coeff * phi;
                        for d in 0..3 {
                            grad[comp][d] += coeff * gphi[d];
                        }
                    }
                }
            }
        }
        let strain = Vector6::new(
            grad[0][0],
            grad[1][1],
            grad[2][2],
            grad[1][2] + grad[2][1],
            grad[0][2] + grad[2][0],
            grad[0][1] + grad[1][0],
        );
        let mut voxel = [0usize; 3];
        for d in 0..3 {
            voxel[d] = ((p[d] / grid.spacing[d]).floor() as usize).min(grid.dims[d] - 1);
        }
        let alpha = grid.alpha_at(grid.index(voxel[0], voxel[1], voxel[2]));
        let stress = c * strain * alpha;
        out.push(FieldSample {
            displacement: u,
            strain,
            stress,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defects::CounterRng;
    use approx::assert_relative_eq;

    /// Interpolate an affine field through the vertex modes and check that
    /// evaluation reproduces it with constant strain.
    fn affine_solution(mesh: &CellMesh, g: [[f64; 3]; 3]) -> Vec<f64> {
        let mut u = vec![0.0; mesh.total_dofs()];
        for s in 0..mesh.scalar_mode_count() {
            if let crate::mesh::Entity::Vertex { at } = mesh.entity_of_scalar(s) {
                let x = mesh.vertex_position(at);
                for comp in 0..3 {
                    u[3 * s + comp] = g[comp][0] * x[0] + g[comp][1] * x[1] + g[comp][2] * x[2];
                }
            }
        }
        u
    }

    #[test]
    fn affine_field_has_constant_strain_and_stress() {
        let grid = VoxelGrid::solid([4, 4, 4], [0.25; 3]).unwrap();
        let mesh = CellMesh::for_grid(&grid, [2, 2, 2], 3).unwrap();
        let mat = ElasticMaterial::new(190_000.0, 0.3).unwrap();
        let g = [[1e-3, 0.0, 0.0], [0.0, -3e-4, 0.0], [0.0, 0.0, -3e-4]];
        let u = affine_solution(&mesh, g);
        let points = [[0.1, 0.2, 0.3], [0.5, 0.5, 0.5], [0.93, 0.1, 0.77]];
        let samples = evaluate_fields(&mesh, &grid, &mat, &u, &points).unwrap();
        let c = mat.stiffness_matrix();
        let eps = Vector6::new(1e-3, -3e-4, -3e-4, 0.0, 0.0, 0.0);
        let sigma = c * eps;
        for s in &samples {
            for i in 0..6 {
                assert_relative_eq!(s.strain[i], eps[i], epsilon = 1e-12);
                assert_relative_eq!(s.stress[i], sigma[i], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn void_voxel_scales_stress_by_alpha() {
        let mut grid = VoxelGrid::solid([2, 2, 2], [0.5; 3]).unwrap();
        let idx = grid.index(0, 0, 0);
        grid.material[idx] = false;
        let mesh = CellMesh::for_grid(&grid, [2, 2, 2], 1).unwrap();
        let mat = ElasticMaterial::new(190_000.0, 0.3).unwrap();
        let g = [[1e-3, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let u = affine_solution(&mesh, g);
        let inside_void = [[0.25, 0.25, 0.25]];
        let s = &evaluate_fields(&mesh, &grid, &mat, &u, &inside_void).unwrap()[0];
        let c = mat.stiffness_matrix();
        let expected = c[(0, 0)] * 1e-3 * 1e-11;
        assert_relative_eq!(s.stress[0], expected, max_relative = 1e-10);
    }

    #[test]
    fn outside_point_is_error() {
        let grid = VoxelGrid::solid([2, 2, 2], [0.5; 3]).unwrap();
        let mesh = CellMesh::for_grid(&grid, [1, 1, 1], 1).unwrap();
        let mat = ElasticMaterial::new(1.0, 0.3).unwrap();
        let u = vec![0.0; mesh.total_dofs()];
        let err = evaluate_fields(&mesh, &grid, &mat, &u, &[[2.0, 0.1, 0.1]]).unwrap_err();
        assert!(matches!(err, Error::OutsideDomain { .. }));
    }

    /// Finite-difference oracle: strain matches central differences of the
    /// evaluated displacement at random interior points.
    #[test]
    fn strain_matches_finite_differences_of_u() {
        let grid = VoxelGrid::solid([4, 4, 4], [0.25; 3]).unwrap();
        let mesh = CellMesh::for_grid(&grid, [2, 2, 2], 3).unwrap();
        let mat = ElasticMaterial::new(190_000.0, 0.3).unwrap();
        // Random (but fixed) higher-order coefficients.
        let rng = CounterRng::new(21);
        let u: Vec<f64> = (0..mesh.total_dofs())
            .map(|i| 1e-3 * (rng.uniform(i as u64) - 0.5))
            .collect();
        let h_cell = mesh.cell_size()[0];
        let h = 1e-5 * h_cell;
        let points = [[0.31, 0.52, 0.63], [0.71, 0.22, 0.45], [0.52, 0.81, 0.33]];
        let samples = evaluate_fields(&mesh, &grid, &mat, &u, &points).unwrap();
        for (pi, &p) in points.iter().enumerate() {
            let mut grad = [[0.0f64; 3]; 3];
            for d in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[d] += h;
                pm[d] -= h;
                let up = &evaluate_fields(&mesh, &grid, &mat, &u, &[pp]).unwrap()[0];
                let um = &evaluate_fields(&mesh, &grid, &mat, &u, &[pm]).unwrap()[0];
                for comp in 0..3 {
                    grad[comp][d] = (up.displacement[comp] - um.displacement[comp]) / (2.0 * h);
                }
            }
            let fd = Vector6::new(
                grad[0][0],
                grad[1][1],
                grad[2][2],
                grad[1][2] + grad[2][1],
                grad[0][2] + grad[2][0],
                grad[0][1] + grad[1][0],
            );
            let s = &samples[pi];
            for i in 0..6 {
                assert_relative_eq!(s.strain[i], fd[i], epsilon = 1e-9, max_relative = 1e-6);
            }
        }
    }
}
