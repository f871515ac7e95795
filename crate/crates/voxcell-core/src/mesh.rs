//! Cartesian finite-cell mesh with a C0 tensor-product hierarchic basis.
//!
//! Every cell embeds an integer block of voxels and carries the tensor
//! product of the 1D hierarchic basis of degree `p`. Scalar modes attach to
//! mesh entities (vertices, edges, faces, cell interiors); shared entities
//! share global mode numbers, which gives C0 continuity without any
//! orientation bookkeeping since all cells are axis-aligned and identically
//! oriented.
//!
//! Global scalar numbering: vertices, then edges (x-, y-, z-directed), then
//! faces (x-, y-, z-normal), then interiors; each block x-fastest over its
//! lattice. A displacement DOF is `3 * scalar_mode + component`.

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

/// Mesh entity owning one or more scalar modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Vertex {
        at: [usize; 3],
    },
    /// `dir` is the edge direction; `at[dir]` is a cell index, the other two
    /// coordinates are vertex-lattice indices. `k` is the internal mode.
    Edge {
        dir: usize,
        at: [usize; 3],
        k: usize,
    },
    /// `normal` is the face normal; `at[normal]` is a vertex-lattice index,
    /// the other two are cell indices. `k` indexes the (p-1)^2 face modes.
    Face {
        normal: usize,
        at: [usize; 3],
        k: usize,
    },
    Interior {
        cell: [usize; 3],
        k: usize,
    },
}

#[derive(Debug, Clone)]
pub struct CellMesh {
    pub cell_dims: [usize; 3],
    pub voxels_per_cell: [usize; 3],
    pub degree: usize,
    /// Voxel spacing in mm.
    pub spacing: [f64; 3],
    /// Cell-local scalar modes per cell, local tensor order, x-fastest cells.
    cell_modes: Vec<u32>,
    scalar_count: usize,
}

impl CellMesh {
    pub fn new(
        grid_dims: [usize; 3],
        voxels_per_cell: [usize; 3],
        degree: usize,
        spacing: [f64; 3],
    ) -> Result<Self> {
        if degree < 1 {
            return Err(Error::MeshMismatch("degree must be >= 1".into()));
        }
        let mut cell_dims = [0usize; 3];
        for d in 0..3 {
            if voxels_per_cell[d] == 0 {
                return Err(Error::MeshMismatch("voxels_per_cell must be >= 1".into()));
            }
            if grid_dims[d] % voxels_per_cell[d] != 0 {
                return Err(Error::MeshMismatch(format!(
                    "grid dims {:?} not divisible by voxels_per_cell {:?}",
                    grid_dims, voxels_per_cell
                )));
            }
            cell_dims[d] = grid_dims[d] / voxels_per_cell[d];
        }
        let mut mesh = Self {
            cell_dims,
            voxels_per_cell,
            degree,
            spacing,
            cell_modes: Vec::new(),
            scalar_count: 0,
        };
        mesh.scalar_count =
            mesh.offset_interior() + mesh.cell_count() * mesh.interior_modes_per_cell();
        mesh.build_cell_modes();
        Ok(mesh)
    }

    pub fn for_grid(grid: &VoxelGrid, voxels_per_cell: [usize; 3], degree: usize) -> Result<Self> {
        Self::new(grid.dims, voxels_per_cell, degree, grid.spacing)
    }

    pub fn cell_count(&self) -> usize {
        self.cell_dims.iter().product()
    }

    /// Physical cell edge lengths in mm.
    pub fn cell_size(&self) -> [f64; 3] {
        [
            self.voxels_per_cell[0] as f64 * self.spacing[0],
            self.voxels_per_cell[1] as f64 * self.spacing[1],
            self.voxels_per_cell[2] as f64 * self.spacing[2],
        ]
    }

    /// Physical extent of the whole mesh.
    pub fn extent(&self) -> [f64; 3] {
        let h = self.cell_size();
        [
            h[0] * self.cell_dims[0] as f64,
            h[1] * self.cell_dims[1] as f64,
            h[2] * self.cell_dims[2] as f64,
        ]
    }

    pub fn modes_per_cell(&self) -> usize {
        (self.degree + 1).pow(3)
    }

    pub fn dofs_per_cell(&self) -> usize {
        3 * self.modes_per_cell()
    }

    pub fn scalar_mode_count(&self) -> usize {
        self.scalar_count
    }

    pub fn total_dofs(&self) -> usize {
        3 * self.scalar_count
    }

    fn internal_1d(&self) -> usize {
        self.degree - 1
    }

    fn interior_modes_per_cell(&self) -> usize {
        self.internal_1d().pow(3)
    }

    // Entity lattice counts.
    fn vertex_counts(&self) -> [usize; 3] {
        [
            self.cell_dims[0] + 1,
            self.cell_dims[1] + 1,
            self.cell_dims[2] + 1,
        ]
    }

    fn edge_lattice(&self, dir: usize) -> [usize; 3] {
        let mut n = self.vertex_counts();
        n[dir] = self.cell_dims[dir];
        n
    }

    fn face_lattice(&self, normal: usize) -> [usize; 3] {
        let mut n = self.cell_dims;
        n[normal] = self.cell_dims[normal] + 1;
        n
    }

    fn vertex_count(&self) -> usize {
        self.vertex_counts().iter().product()
    }

    fn edge_count(&self, dir: usize) -> usize {
        self.edge_lattice(dir).iter().product()
    }

    fn face_count(&self, normal: usize) -> usize {
        self.face_lattice(normal).iter().product()
    }

    fn offset_edges(&self, dir: usize) -> usize {
        let mut off = self.vertex_count();
        for d in 0..dir {
            off += self.edge_count(d) * self.internal_1d();
        }
        off
    }

    fn offset_faces(&self, normal: usize) -> usize {
        let mut off = self.offset_edges(2) + self.edge_count(2) * self.internal_1d();
        for d in 0..normal {
            off += self.face_count(d) * self.internal_1d().pow(2);
        }
        off
    }

    fn offset_interior(&self) -> usize {
        self.offset_faces(2) + self.face_count(2) * self.internal_1d().pow(2)
    }

    /// Global scalar index of an entity mode.
    pub fn scalar_of_entity(&self, e: &Entity) -> usize {
        let q = self.internal_1d();
        match *e {
            Entity::Vertex { at } => {
                let n = self.vertex_counts();
                at[0] + n[0] * (at[1] + n[1] * at[2])
            }
            Entity::Edge { dir, at, k } => {
                let n = self.edge_lattice(dir);
                let id = at[0] + n[0] * (at[1] + n[1] * at[2]);
                self.offset_edges(dir) + id * q + k
            }
            Entity::Face { normal, at, k } => {
                let n = self.face_lattice(normal);
                let id = at[0] + n[0] * (at[1] + n[1] * at[2]);
                self.offset_faces(normal) + id * q * q + k
            }
            Entity::Interior { cell, k } => {
                let n = self.cell_dims;
                let id = cell[0] + n[0] * (cell[1] + n[1] * cell[2]);
                self.offset_interior() + id * q.pow(3) + k
            }
        }
    }

    /// Inverse of [`scalar_of_entity`].
    pub fn entity_of_scalar(&self, g: usize) -> Entity {
        let q = self.internal_1d();
        let mut rem = g;
        if rem < self.vertex_count() {
            let n = self.vertex_counts();
            return Entity::Vertex {
                at: [rem % n[0], (rem / n[0]) % n[1], rem / (n[0] * n[1])],
            };
        }
        rem -= self.vertex_count();
        for dir in 0..3 {
            let block = self.edge_count(dir) * q;
            if rem < block {
                let id = rem / q;
                let k = rem % q;
                let n = self.edge_lattice(dir);
                return Entity::Edge {
                    dir,
                    at: [id % n[0], (id / n[0]) % n[1], id / (n[0] * n[1])],
                    k,
                };
            }
            rem -= block;
        }
        for normal in 0..3 {
            let block = self.face_count(normal) * q * q;
            if rem < block {
                let id = rem / (q * q);
                let k = rem % (q * q);
                let n = self.face_lattice(normal);
                return Entity::Face {
                    normal,
                    at: [id % n[0], (id / n[0]) % n[1], id / (n[0] * n[1])],
                    k,
                };
            }
            rem -= block;
        }
        let id = rem / q.pow(3);
        let k = rem % q.pow(3);
        let n = self.cell_dims;
        Entity::Interior {
            cell: [id % n[0], (id / n[0]) % n[1], id / (n[0] * n[1])],
            k,
        }
    }

    /// Entity of the cell-local tensor mode `(a, b, c)`, each in `0..=p`:
    /// indices 0 and 1 are the nodal modes at the low/high end, >= 2 are the
    /// internal modes.
    pub fn entity_of_local_mode(&self, cell: [usize; 3], abc: [usize; 3]) -> Entity {
        let q = self.internal_1d();
        let nodal = |i: usize| i < 2;
        let [a, b, c] = abc;
        let internal: Vec<usize> = (0..3).filter(|&d| !nodal(abc[d])).collect();
        match internal.len() {
            0 => Entity::Vertex {
                at: [cell[0] + a, cell[1] + b, cell[2] + c],
            },
            1 => {
                let dir = internal[0];
                let mut at = [cell[0] + a, cell[1] + b, cell[2] + c];
                at[dir] = cell[dir];
                Entity::Edge {
                    dir,
                    at,
                    k: abc[dir] - 2,
                }
            }
            2 => {
                let normal = (0..3).find(|&d| nodal(abc[d])).unwrap();
                let mut at = cell;
                at[normal] = cell[normal] + abc[normal];
                let (t0, t1) = match normal {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                Entity::Face {
                    normal,
                    at,
                    k: (abc[t0] - 2) + q * (abc[t1] - 2),
                }
            }
            _ => Entity::Interior {
                cell,
                k: (a - 2) + q * ((b - 2) + q * (c - 2)),
            },
        }
    }

    fn build_cell_modes(&mut self) {
        let p1 = self.degree + 1;
        let per_cell = self.modes_per_cell();
        let mut modes = vec![0u32; self.cell_count() * per_cell];
        for cz in 0..self.cell_dims[2] {
            for cy in 0..self.cell_dims[1] {
                for cx in 0..self.cell_dims[0] {
                    let cell = [cx, cy, cz];
                    let cell_id = cx + self.cell_dims[0] * (cy + self.cell_dims[1] * cz);
                    let base = cell_id * per_cell;
                    for c in 0..p1 {
                        for b in 0..p1 {
                            for a in 0..p1 {
                                let local = a + p1 * (b + p1 * c);
                                let e = self.entity_of_local_mode(cell, [a, b, c]);
                                modes[base + local] = self.scalar_of_entity(&e) as u32;
                            }
                        }
                    }
                }
            }
        }
        self.cell_modes = modes;
    }

    /// Global scalar modes of one cell in local tensor order.
    pub fn cell_scalar_modes(&self, cell_id: usize) -> &[u32] {
        let per_cell = self.modes_per_cell();
        &self.cell_modes[cell_id * per_cell..(cell_id + 1) * per_cell]
    }

    pub fn cell_coords(&self, cell_id: usize) -> [usize; 3] {
        let n = self.cell_dims;
        [
            cell_id % n[0],
            (cell_id / n[0]) % n[1],
            cell_id / (n[0] * n[1]),
        ]
    }

    pub fn cell_id(&self, cell: [usize; 3]) -> usize {
        cell[0] + self.cell_dims[0] * (cell[1] + self.cell_dims[1] * cell[2])
    }

    /// Physical position of a vertex-lattice node.
    pub fn vertex_position(&self, at: [usize; 3]) -> [f64; 3] {
        let h = self.cell_size();
        [
            at[0] as f64 * h[0],
            at[1] as f64 * h[1],
            at[2] as f64 * h[2],
        ]
    }

    /// Does the entity lie on the outer boundary of the mesh box?
    pub fn entity_on_boundary(&self, e: &Entity) -> bool {
        match *e {
            Entity::Vertex { at } => (0..3).any(|d| at[d] == 0 || at[d] == self.cell_dims[d]),
            Entity::Edge { dir, at, .. } => (0..3)
                .filter(|&d| d != dir)
                .any(|d| at[d] == 0 || at[d] == self.cell_dims[d]),
            Entity::Face { normal, at, .. } => {
                at[normal] == 0 || at[normal] == self.cell_dims[normal]
            }
            Entity::Interior { .. } => false,
        }
    }

    /// All scalar modes with support on the outer boundary.
    pub fn boundary_scalar_modes(&self) -> Vec<usize> {
        (0..self.scalar_count)
            .filter(|&g| self.entity_on_boundary(&self.entity_of_scalar(g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p1_has_only_vertex_modes() {
        let mesh = CellMesh::new([4, 4, 4], [2, 2, 2], 1, [1.0; 3]).unwrap();
        assert_eq!(mesh.cell_dims, [2, 2, 2]);
        assert_eq!(mesh.scalar_mode_count(), 27);
        assert_eq!(mesh.total_dofs(), 81);
    }

    #[test]
    fn p2_mode_counts() {
        // 2x1x1 cells, p=2: 12 vertices + 20 edges + 11 faces + 2 interiors.
        let mesh = CellMesh::new([2, 1, 1], [1, 1, 1], 2, [1.0; 3]).unwrap();
        assert_eq!(mesh.scalar_mode_count(), 45);
        assert_eq!(mesh.total_dofs(), 135);
    }

    #[test]
    fn entity_round_trip() {
        let mesh = CellMesh::new([6, 4, 2], [2, 2, 1], 3, [0.5; 3]).unwrap();
        for g in 0..mesh.scalar_mode_count() {
            let e = mesh.entity_of_scalar(g);
            assert_eq!(mesh.scalar_of_entity(&e), g, "entity {e:?}");
        }
    }

    #[test]
    fn shared_face_modes_match_between_neighbors() {
        let mesh = CellMesh::new([2, 1, 1], [1, 1, 1], 3, [1.0; 3]).unwrap();
        let p1 = mesh.degree + 1;
        let left = mesh.cell_scalar_modes(0);
        let right = mesh.cell_scalar_modes(1);
        // Modes of the left cell with a=1 (high-x end) must equal modes of
        // the right cell with a=0 for every (b, c).
        for c in 0..p1 {
            for b in 0..p1 {
                let l = left[1 + p1 * (b + p1 * c)];
                let r = right[p1 * (b + p1 * c)];
                assert_eq!(l, r, "mismatch at b={b}, c={c}");
            }
        }
    }

    #[test]
    fn cell_modes_are_unique_within_cell() {
        let mesh = CellMesh::new([2, 2, 2], [1, 1, 1], 2, [1.0; 3]).unwrap();
        for cell in 0..mesh.cell_count() {
            let mut modes: Vec<u32> = mesh.cell_scalar_modes(cell).to_vec();
            modes.sort_unstable();
            modes.dedup();
            assert_eq!(modes.len(), mesh.modes_per_cell());
        }
    }

    #[test]
    fn indivisible_grid_rejected() {
        assert!(CellMesh::new([5, 4, 4], [2, 2, 2], 1, [1.0; 3]).is_err());
    }

    #[test]
    fn boundary_modes_of_single_cell() {
        let mesh = CellMesh::new([1, 1, 1], [1, 1, 1], 2, [1.0; 3]).unwrap();
        // Everything except the single interior mode touches the boundary.
        let boundary = mesh.boundary_scalar_modes();
        assert_eq!(boundary.len(), mesh.scalar_mode_count() - 1);
    }

    #[test]
    fn every_scalar_mode_reachable_from_cells() {
        let mesh = CellMesh::new([4, 2, 2], [2, 2, 2], 3, [1.0; 3]).unwrap();
        let mut seen = vec![false; mesh.scalar_mode_count()];
        for cell in 0..mesh.cell_count() {
            for &m in mesh.cell_scalar_modes(cell) {
                seen[m as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
