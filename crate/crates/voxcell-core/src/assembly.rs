//! System assembly: the immersed stiffness operator, penalty Dirichlet and
//! Neumann terms, and the reduced-system transform.
//!
//! Cell stiffness matrices are alpha-weighted sums of the pre-integrated
//! voxel kernels. Cells with identical indicator patterns share one cached
//! matrix (tiled lattices collapse to a few hundred distinct patterns); rare
//! patterns past the cache cap fall back to on-the-fly kernel sums. The
//! operator applies matrix-free over cells in parallel, with a fixed-order
//! scatter so results are bitwise reproducible for any thread count, and can
//! also export explicit sparse/dense storage at oracle scale.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut, Vector6};
use rayon::prelude::*;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::kernels::{precompute_voxel_kernels, VoxelKernelTable};
use crate::material::ElasticMaterial;
use crate::mesh::CellMesh;
use crate::solver::LinearOperator;
use crate::voxel::VoxelGrid;

/// Cache cap on distinct per-cell indicator patterns.
const PATTERN_CACHE_CAP: usize = 8192;

/// Fixed chunk size for parallel reductions; partial sums are folded in
/// chunk order so results do not depend on thread scheduling.
const REDUCTION_CHUNK: usize = 512;

/// Outer box faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxFace {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl BoxFace {
    pub fn normal_dir(&self) -> usize {
        match self {
            BoxFace::XMin | BoxFace::XMax => 0,
            BoxFace::YMin | BoxFace::YMax => 1,
            BoxFace::ZMin | BoxFace::ZMax => 2,
        }
    }

    pub fn positive(&self) -> bool {
        matches!(self, BoxFace::XMax | BoxFace::YMax | BoxFace::ZMax)
    }

    /// Index into the kernel table's face array (-x,+x,-y,+y,-z,+z).
    pub fn table_index(&self) -> usize {
        2 * self.normal_dir() + self.positive() as usize
    }

    /// Outward unit normal.
    pub fn normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.normal_dir()] = if self.positive() { 1.0 } else { -1.0 };
        n
    }

    pub fn all() -> [BoxFace; 6] {
        [
            BoxFace::XMin,
            BoxFace::XMax,
            BoxFace::YMin,
            BoxFace::YMax,
            BoxFace::ZMin,
            BoxFace::ZMax,
        ]
    }

    pub fn opposite_pair(dir: usize) -> (BoxFace, BoxFace) {
        match dir {
            0 => (BoxFace::XMin, BoxFace::XMax),
            1 => (BoxFace::YMin, BoxFace::YMax),
            _ => (BoxFace::ZMin, BoxFace::ZMax),
        }
    }
}

/// Affine prescribed field `u(x) = A x + b`.
#[derive(Debug, Clone, Copy)]
pub struct AffineField {
    pub linear: [[f64; 3]; 3],
    pub constant: [f64; 3],
}

impl AffineField {
    pub fn constant_value(v: [f64; 3]) -> Self {
        Self {
            linear: [[0.0; 3]; 3],
            constant: v,
        }
    }

    pub fn zero() -> Self {
        Self::constant_value([0.0; 3])
    }

    pub fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        let mut u = self.constant;
        for c in 0..3 {
            for d in 0..3 {
                u[c] += self.linear[c][d] * x[d];
            }
        }
        u
    }
}

/// Penalty Dirichlet data on one box face.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyFace {
    pub face: BoxFace,
    pub value: AffineField,
    /// Which displacement components are constrained.
    pub components: [bool; 3],
}

/// Constant traction on one box face.
#[derive(Debug, Clone, Copy)]
pub struct FaceTraction {
    pub face: BoxFace,
    pub traction: [f64; 3],
    /// Apply only on boundary faces of material voxels (the physical cut
    /// boundary); when false the whole embedding face is loaded.
    pub material_only: bool,
}

/// Loads for one boundary value problem.
#[derive(Debug, Clone, Default)]
pub struct LoadSpec {
    pub body_force: [f64; 3],
    pub tractions: Vec<FaceTraction>,
    pub dirichlet: Vec<PenaltyFace>,
}

/// Penalty configuration.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    /// beta_D = beta_factor * E / h_cell.
    pub beta_factor: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { beta_factor: 1e8 }
    }
}

impl PenaltyConfig {
    pub fn beta(&self, mat: &ElasticMaterial, mesh: &CellMesh) -> f64 {
        let h = mesh.cell_size();
        let h_min = h[0].min(h[1]).min(h[2]);
        self.beta_factor * mat.youngs_modulus / h_min
    }
}

#[derive(Debug, Clone, Copy)]
struct PenaltyAttach {
    face_idx: u8,
    beta: f64,
    components: [bool; 3],
}

/// Immutable per-grid operator data shared between load cases.
pub struct CellCore {
    /// Per-cell material bitmask over the embedded voxels.
    masks: Vec<Box<[u64]>>,
    /// Index into `matrices`, or `u32::MAX` for uncached cells.
    matrix_idx: Vec<u32>,
    matrices: Vec<DMatrix<f64>>,
}

impl CellCore {
    pub fn build(mesh: &CellMesh, grid: &VoxelGrid, table: &VoxelKernelTable) -> Self {
        let n_cells = mesh.cell_count();
        let voxels = table.voxel_count();
        let words = voxels.div_ceil(64);

        let [vx, vy, vz] = mesh.voxels_per_cell;
        let mut masks = Vec::with_capacity(n_cells);
        for cell_id in 0..n_cells {
            let [cx, cy, cz] = mesh.cell_coords(cell_id);
            let mut mask = vec![0u64; words].into_boxed_slice();
            let mut bit = 0usize;
            for k in 0..vz {
                for j in 0..vy {
                    for i in 0..vx {
                        let g = grid.index(cx * vx + i, cy * vy + j, cz * vz + k);
                        if grid.material[g] {
                            mask[bit / 64] |= 1 << (bit % 64);
                        }
                        bit += 1;
                    }
                }
            }
            masks.push(mask);
        }

        // Pattern cache: first occurrence wins, deterministic in cell order.
        let alpha_void = grid.alpha_void;
        let mut pattern_of: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut matrix_idx = vec![u32::MAX; n_cells];
        let mut patterns: Vec<usize> = Vec::new(); // representative cell ids
        for cell_id in 0..n_cells {
            let mask: &[u64] = &masks[cell_id];
            if let Some(&idx) = pattern_of.get(mask) {
                matrix_idx[cell_id] = idx;
            } else if patterns.len() < PATTERN_CACHE_CAP {
                let idx = patterns.len() as u32;
                patterns.push(cell_id);
                matrix_idx[cell_id] = idx;
                pattern_of.insert(mask.to_vec(), idx);
            }
        }
        let matrices: Vec<DMatrix<f64>> = patterns
            .par_iter()
            .map(|&cell_id| {
                let alphas = mask_alphas(&masks[cell_id], voxels, alpha_void);
                table.cell_stiffness(&alphas)
            })
            .collect();

        Self {
            masks,
            matrix_idx,
            matrices,
        }
    }

    pub fn voxel_is_material(&self, cell_id: usize, local_voxel: usize) -> bool {
        (self.masks[cell_id][local_voxel / 64] >> (local_voxel % 64)) & 1 == 1
    }
}

/// Assembled immersed system: operator pieces plus right-hand side.
pub struct FcmSystem {
    pub mesh: Arc<CellMesh>,
    pub grid: Arc<VoxelGrid>,
    pub table: Arc<VoxelKernelTable>,
    core: Arc<CellCore>,
    /// Integral penalty faces attached per cell.
    cell_penalties: Vec<Vec<PenaltyAttach>>,
    /// Penalty face definitions for right-hand-side and reaction use.
    penalty_faces: Vec<(PenaltyFace, f64)>,
    /// DOF-wise penalties (dof, beta, target): K += beta e e^T.
    mode_penalties: Vec<(u32, f64, f64)>,
    /// Rank-one terms beta g g^T.
    rank_terms: Vec<(f64, Vec<f64>)>,
    constraints: ConstraintSet,
    rhs_full: Vec<f64>,
    /// Displacement lift: the solve works on the correction `w = u - lift`,
    /// which keeps the right-hand side at elastic scale when penalty data
    /// is representable by an affine field.
    lift: Option<Vec<f64>>,
    lift_field: Option<AffineField>,
    pub warnings: Vec<String>,
    /// Correction (solution minus lift) of the most recent solve; the
    /// penalty reaction reads it to avoid cancellation against the lift.
    last_correction: Option<Vec<f64>>,
    // scratch
    cell_buf: Vec<f64>,
    full_x: Vec<f64>,
    full_y: Vec<f64>,
    finalized_rhs: Option<Vec<f64>>,
}

impl FcmSystem {
    /// Build the bare elastic operator over the grid (no constraints yet).
    pub fn new(mesh: CellMesh, grid: &VoxelGrid, mat: &ElasticMaterial) -> Result<Self> {
        let table = Arc::new(precompute_voxel_kernels(&mesh, mat)?);
        Self::with_table(Arc::new(mesh), Arc::new(grid.clone()), table)
    }

    /// Variant sharing a pre-built kernel table (ensembles, load-case sweeps).
    pub fn with_table(
        mesh: Arc<CellMesh>,
        grid: Arc<VoxelGrid>,
        table: Arc<VoxelKernelTable>,
    ) -> Result<Self> {
        if mesh.cell_dims
            != [
                grid.dims[0] / mesh.voxels_per_cell[0],
                grid.dims[1] / mesh.voxels_per_cell[1],
                grid.dims[2] / mesh.voxels_per_cell[2],
            ]
            || mesh.spacing != grid.spacing
        {
            return Err(Error::MeshMismatch(
                "mesh embedding does not match grid dims/spacing".into(),
            ));
        }
        let core = Arc::new(CellCore::build(&mesh, &grid, &table));
        Ok(Self::from_parts(mesh, grid, table, core))
    }

    fn from_parts(
        mesh: Arc<CellMesh>,
        grid: Arc<VoxelGrid>,
        table: Arc<VoxelKernelTable>,
        core: Arc<CellCore>,
    ) -> Self {
        let n_cells = mesh.cell_count();
        let n_dofs = mesh.total_dofs();
        let dpc = mesh.dofs_per_cell();
        Self {
            constraints: ConstraintSet::identity(n_dofs),
            mesh,
            grid,
            table,
            core,
            cell_penalties: vec![Vec::new(); n_cells],
            penalty_faces: Vec::new(),
            mode_penalties: Vec::new(),
            rank_terms: Vec::new(),
            rhs_full: vec![0.0; n_dofs],
            lift: None,
            lift_field: None,
            last_correction: None,
            warnings: Vec::new(),
            cell_buf: vec![0.0; n_cells * dpc],
            full_x: vec![0.0; n_dofs],
            full_y: vec![0.0; n_dofs],
            finalized_rhs: None,
        }
    }

    /// A fresh unconstrained system over the same grid, sharing all
    /// pattern-cache and kernel data.
    pub fn clone_bare(&self) -> Self {
        Self::from_parts(
            self.mesh.clone(),
            self.grid.clone(),
            self.table.clone(),
            self.core.clone(),
        )
    }

    pub fn n_full(&self) -> usize {
        self.mesh.total_dofs()
    }

    pub fn alpha_void(&self) -> f64 {
        self.grid.alpha_void
    }

    /// Cells whose closure touches the given box face.
    fn boundary_cells(&self, face: BoxFace) -> Vec<usize> {
        let nd = face.normal_dir();
        let fixed = if face.positive() {
            self.mesh.cell_dims[nd] - 1
        } else {
            0
        };
        let mut cells = Vec::new();
        for cz in 0..self.mesh.cell_dims[2] {
            for cy in 0..self.mesh.cell_dims[1] {
                for cx in 0..self.mesh.cell_dims[0] {
                    let c = [cx, cy, cz];
                    if c[nd] == fixed {
                        cells.push(self.mesh.cell_id(c));
                    }
                }
            }
        }
        cells
    }

    /// Integral penalty Dirichlet on a box face: adds
    /// `beta int u.v dGamma` to the operator and `beta int u_hat.v` to the
    /// rhs (the latter assembled lazily against the lift frame).
    pub fn add_penalty_face(&mut self, pf: &PenaltyFace, beta: f64) {
        let fi = pf.face.table_index();
        for cell_id in self.boundary_cells(pf.face) {
            self.cell_penalties[cell_id].push(PenaltyAttach {
                face_idx: fi as u8,
                beta,
                components: pf.components,
            });
        }
        self.penalty_faces.push((*pf, beta));
        self.finalized_rhs = None;
    }

    /// rhs terms `beta int value . v dGamma` for one penalty face.
    fn penalty_face_rhs(&self, pf: &PenaltyFace, value: &AffineField, beta: f64, out: &mut [f64]) {
        let fi = pf.face.table_index();
        let face = &self.table.faces[fi];
        let h = self.mesh.cell_size();
        for cell_id in self.boundary_cells(pf.face) {
            let origin = {
                let c = self.mesh.cell_coords(cell_id);
                [c[0] as f64 * h[0], c[1] as f64 * h[1], c[2] as f64 * h[2]]
            };
            let modes = self.mesh.cell_scalar_modes(cell_id);
            for (ti, &local_m) in face.trace_modes.iter().enumerate() {
                let g = modes[local_m] as usize;
                for c in 0..3 {
                    if !pf.components[c] {
                        continue;
                    }
                    let mut val = value.constant[c] * face.moment0[ti];
                    for d in 0..3 {
                        val += value.linear[c][d]
                            * (face.moment1[d][ti] + origin[d] * face.moment0[ti]);
                    }
                    out[3 * g + c] += beta * val;
                }
            }
        }
    }

    /// Constant traction on a box face (Neumann term).
    pub fn add_traction(&mut self, tr: &FaceTraction) {
        let fi = tr.face.table_index();
        let face = &self.table.faces[fi];
        let nd = face.normal_dir;
        let [vx, vy, _vz] = self.mesh.voxels_per_cell;
        let fixed_voxel = if tr.face.positive() {
            self.mesh.voxels_per_cell[nd] - 1
        } else {
            0
        };
        for cell_id in self.boundary_cells(tr.face) {
            let [cx, cy, cz] = self.mesh.cell_coords(cell_id);
            let modes = self.mesh.cell_scalar_modes(cell_id);
            for (vf, at) in face.voxel_face_load.iter().zip(&face.voxel_face_at) {
                if tr.material_only {
                    // Voxel adjacent to this boundary face.
                    let mut v = [0usize; 3];
                    v[nd] = fixed_voxel;
                    v[face.tangents[0]] = at[0];
                    v[face.tangents[1]] = at[1];
                    let local = v[0] + vx * (v[1] + vy * v[2]);
                    let word = local / 64;
                    let bit = local % 64;
                    let m = (self.core.masks[cell_id][word] >> bit) & 1;
                    if m == 0 {
                        continue;
                    }
                    let _ = (cx, cy, cz);
                }
                for (ti, &local_m) in face.trace_modes.iter().enumerate() {
                    let g = modes[local_m] as usize;
                    for c in 0..3 {
                        if tr.traction[c] != 0.0 {
                            self.rhs_full[3 * g + c] += tr.traction[c] * vf[ti];
                        }
                    }
                }
            }
        }
        self.finalized_rhs = None;
    }

    /// Alpha-weighted body force over the whole domain.
    pub fn add_body_force(&mut self, b: [f64; 3]) {
        if b == [0.0; 3] {
            return;
        }
        let alpha_void = self.alpha_void();
        let voxels = self.table.voxel_count();
        for cell_id in 0..self.mesh.cell_count() {
            let modes = self.mesh.cell_scalar_modes(cell_id);
            let alphas = mask_alphas(&self.core.masks[cell_id], voxels, alpha_void);
            for (v, &alpha) in alphas.iter().enumerate() {
                let vol = &self.table.mode_volume[v];
                for (m, &g) in modes.iter().enumerate() {
                    for c in 0..3 {
                        self.rhs_full[3 * g as usize + c] += alpha * b[c] * vol[m];
                    }
                }
            }
        }
        self.finalized_rhs = None;
    }

    /// DOF-wise penalty pinning `dof` toward `target`.
    pub fn add_mode_penalty(&mut self, dof: usize, target: f64, beta: f64) {
        self.mode_penalties.push((dof as u32, beta, target));
        self.finalized_rhs = None;
    }

    /// Rank-one penalty `beta g g^T` (zero-mean rigid-mode constraints).
    pub fn add_rank_term(&mut self, beta: f64, g: Vec<f64>) {
        assert_eq!(g.len(), self.n_full());
        self.rank_terms.push((beta, g));
        self.finalized_rhs = None;
    }

    pub fn set_constraints(&mut self, set: ConstraintSet) {
        assert_eq!(set.n_full(), self.n_full());
        assert!(
            self.lift.is_none(),
            "affine lift and master-slave constraints cannot be combined"
        );
        self.constraints = set;
        self.finalized_rhs = None;
    }

    /// Affine displacement lift, exactly represented by the vertex modes.
    /// Only valid with identity constraints.
    pub fn set_affine_lift(&mut self, field: &AffineField) {
        assert!(
            self.constraints.is_identity(),
            "affine lift and master-slave constraints cannot be combined"
        );
        let mut lift = vec![0.0; self.n_full()];
        for g in 0..self.mesh.scalar_mode_count() {
            if let crate::mesh::Entity::Vertex { at } = self.mesh.entity_of_scalar(g) {
                let u = field.eval(self.mesh.vertex_position(at));
                lift[3 * g] = u[0];
                lift[3 * g + 1] = u[1];
                lift[3 * g + 2] = u[2];
            }
        }
        self.lift = Some(lift);
        self.lift_field = Some(*field);
        self.finalized_rhs = None;
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn is_constrained(&self) -> bool {
        !self.mode_penalties.is_empty()
            || !self.rank_terms.is_empty()
            || !self.constraints.is_identity()
            || self.cell_penalties.iter().any(|p| !p.is_empty())
    }

    /// Full-space operator application `y = K x` (elastic + penalties).
    pub fn apply_full(&mut self, x: &[f64], y: &mut [f64]) {
        let dpc = self.mesh.dofs_per_cell();
        let n_modes = self.mesh.modes_per_cell();
        let mesh = &self.mesh;
        let table = &self.table;
        let matrices = &self.core.matrices;
        let idx = &self.core.matrix_idx;
        let masks = &self.core.masks;
        let penalties = &self.cell_penalties;
        let alpha_void = self.alpha_void();
        let voxels = table.voxel_count();

        self.cell_buf.par_chunks_mut(dpc).enumerate().for_each_init(
            || (vec![0.0; dpc], Vec::new()),
            |(x_local, scratch), (cell_id, out)| {
                let modes = mesh.cell_scalar_modes(cell_id);
                for (m, &g) in modes.iter().enumerate() {
                    let gi = 3 * g as usize;
                    x_local[3 * m] = x[gi];
                    x_local[3 * m + 1] = x[gi + 1];
                    x_local[3 * m + 2] = x[gi + 2];
                }
                let xv = DVectorView::from_slice(x_local, dpc);
                let mut yv = DVectorViewMut::from_slice(out, dpc);
                let mi = idx[cell_id];
                if mi != u32::MAX {
                    yv.gemv(1.0, &matrices[mi as usize], &xv, 0.0);
                } else {
                    // Uncached: alpha_void * K_sum x + (1-alpha_void) * sum_solid K_v x
                    yv.gemv(alpha_void, &table.stiffness_sum, &xv, 0.0);
                    scratch.clear();
                    scratch.resize(dpc, 0.0);
                    let mut sv = DVectorViewMut::from_slice(scratch, dpc);
                    let mask = &masks[cell_id];
                    for v in 0..voxels {
                        if (mask[v / 64] >> (v % 64)) & 1 == 1 {
                            sv.gemv(1.0, &table.stiffness[v], &xv, 1.0);
                        }
                    }
                    let mut yv = DVectorViewMut::from_slice(out, dpc);
                    for i in 0..dpc {
                        yv[i] += (1.0 - alpha_void) * scratch[i];
                    }
                }
                // Integral face penalties (absent in the elastic-only
                // application, where the vec is taken empty).
                for att in penalties.get(cell_id).map(|v| v.as_slice()).unwrap_or(&[]) {
                    let face = &table.faces[att.face_idx as usize];
                    for (ti, &li) in face.trace_modes.iter().enumerate() {
                        for c in 0..3 {
                            if !att.components[c] {
                                continue;
                            }
                            let mut acc = 0.0;
                            for (tj, &lj) in face.trace_modes.iter().enumerate() {
                                acc += face.mass[(ti, tj)] * x_local[3 * lj + c];
                            }
                            out[3 * li + c] += att.beta * acc;
                        }
                    }
                }
                let _ = n_modes;
            },
        );

        // Fixed-order scatter.
        y.fill(0.0);
        for cell_id in 0..mesh.cell_count() {
            let modes = mesh.cell_scalar_modes(cell_id);
            let buf = &self.cell_buf[cell_id * dpc..(cell_id + 1) * dpc];
            for (m, &g) in modes.iter().enumerate() {
                let gi = 3 * g as usize;
                y[gi] += buf[3 * m];
                y[gi + 1] += buf[3 * m + 1];
                y[gi + 2] += buf[3 * m + 2];
            }
        }
        for &(dof, beta, _) in &self.mode_penalties {
            y[dof as usize] += beta * x[dof as usize];
        }
        for (beta, g) in &self.rank_terms {
            let dot: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
            let scale = *beta * dot;
            for (yi, gi) in y.iter_mut().zip(g) {
                *yi += scale * gi;
            }
        }
    }

    /// Mean absolute diagonal of the bare elastic operator (no penalties),
    /// the natural stiffness scale for consistent auxiliary penalties.
    pub fn elastic_diagonal_scale(&self) -> f64 {
        let mut acc = 0.0;
        let voxels = self.table.voxel_count();
        let alpha_void = self.alpha_void();
        for cell_id in 0..self.mesh.cell_count() {
            let mi = self.core.matrix_idx[cell_id];
            if mi != u32::MAX {
                acc += self.core.matrices[mi as usize]
                    .diagonal()
                    .iter()
                    .sum::<f64>();
            } else {
                let alphas = mask_alphas(&self.core.masks[cell_id], voxels, alpha_void);
                for (v, &alpha) in alphas.iter().enumerate() {
                    acc += alpha * self.table.stiffness[v].diagonal().iter().sum::<f64>();
                }
            }
        }
        acc / self.n_full() as f64
    }

    /// Full-space operator diagonal.
    pub fn diagonal_full(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.n_full()];
        let dpc = self.mesh.dofs_per_cell();
        let voxels = self.table.voxel_count();
        let alpha_void = self.alpha_void();
        for cell_id in 0..self.mesh.cell_count() {
            let modes = self.mesh.cell_scalar_modes(cell_id);
            let mi = self.core.matrix_idx[cell_id];
            if mi != u32::MAX {
                let k = &self.core.matrices[mi as usize];
                for (m, &g) in modes.iter().enumerate() {
                    for c in 0..3 {
                        diag[3 * g as usize + c] += k[(3 * m + c, 3 * m + c)];
                    }
                }
            } else {
                let alphas = mask_alphas(&self.core.masks[cell_id], voxels, alpha_void);
                let mut local = vec![0.0; dpc];
                for (v, &alpha) in alphas.iter().enumerate() {
                    let kv = &self.table.stiffness[v];
                    for (i, l) in local.iter_mut().enumerate() {
                        *l += alpha * kv[(i, i)];
                    }
                }
                for (m, &g) in modes.iter().enumerate() {
                    for c in 0..3 {
                        diag[3 * g as usize + c] += local[3 * m + c];
                    }
                }
            }
            for att in &self.cell_penalties[cell_id] {
                let face = &self.table.faces[att.face_idx as usize];
                for (ti, &li) in face.trace_modes.iter().enumerate() {
                    let g = modes[li] as usize;
                    for c in 0..3 {
                        if att.components[c] {
                            diag[3 * g + c] += att.beta * face.mass[(ti, ti)];
                        }
                    }
                }
            }
        }
        for &(dof, beta, _) in &self.mode_penalties {
            diag[dof as usize] += beta;
        }
        for (beta, g) in &self.rank_terms {
            for (d, gi) in diag.iter_mut().zip(g) {
                *d += beta * gi * gi;
            }
        }
        diag
    }

    /// Application of the elastic cells and rank terms only (no face or
    /// mode penalties); used for the lift frame where the penalty part of
    /// the rhs is formed symbolically.
    fn apply_elastic_rank(&mut self, x: &[f64], y: &mut [f64]) {
        let penalties = std::mem::take(&mut self.cell_penalties);
        let modes = std::mem::take(&mut self.mode_penalties);
        self.apply_full(x, y);
        self.cell_penalties = penalties;
        self.mode_penalties = modes;
    }

    /// Reduced right-hand side of the solve frame.
    ///
    /// Without a lift: `P^T (f - K g)` with `g` the constraint offsets.
    /// With a lift (identity constraints): the penalty contributions are
    /// assembled against `u_hat - lift` symbolically, so no beta-scale
    /// cancellation ever enters the rhs:
    /// `f_base + f_pen(u_hat - lift) + f_mode(target - lift) - (K_e + R) lift`.
    pub fn reduced_rhs(&mut self) -> Vec<f64> {
        if let Some(r) = &self.finalized_rhs {
            return r.clone();
        }
        let n = self.n_full();
        let out = if let Some(lift_field) = self.lift_field {
            let lift = self.lift.clone().expect("lift vector accompanies field");
            let mut rhs = self.rhs_full.clone();
            for (pf, beta) in self.penalty_faces.clone() {
                let diff = AffineField {
                    linear: std::array::from_fn(|r| {
                        std::array::from_fn(|c| pf.value.linear[r][c] - lift_field.linear[r][c])
                    }),
                    constant: std::array::from_fn(|r| {
                        pf.value.constant[r] - lift_field.constant[r]
                    }),
                };
                self.penalty_face_rhs(&pf, &diff, beta, &mut rhs);
            }
            for &(dof, beta, target) in &self.mode_penalties {
                rhs[dof as usize] += beta * (target - lift[dof as usize]);
            }
            let mut k_lift = vec![0.0; n];
            self.apply_elastic_rank(&lift, &mut k_lift);
            let mut out = vec![0.0; self.constraints.n_reduced()];
            let f_minus: Vec<f64> = rhs.iter().zip(&k_lift).map(|(f, k)| f - k).collect();
            self.constraints.restrict_add(&f_minus, &mut out);
            out
        } else {
            let mut rhs = self.rhs_full.clone();
            for (pf, beta) in self.penalty_faces.clone() {
                let value = pf.value;
                self.penalty_face_rhs(&pf, &value, beta, &mut rhs);
            }
            for &(dof, beta, target) in &self.mode_penalties {
                rhs[dof as usize] += beta * target;
            }
            let g = self.constraints.offset_vector();
            let mut out = vec![0.0; self.constraints.n_reduced()];
            if g.iter().any(|&v| v != 0.0) {
                let mut kg = vec![0.0; n];
                self.apply_full(&g, &mut kg);
                let f_minus: Vec<f64> = rhs.iter().zip(&kg).map(|(f, k)| f - k).collect();
                self.constraints.restrict_add(&f_minus, &mut out);
            } else {
                self.constraints.restrict_add(&rhs, &mut out);
            }
            out
        };
        self.finalized_rhs = Some(out.clone());
        out
    }

    pub fn rhs_full(&self) -> &[f64] {
        &self.rhs_full
    }

    /// Recover the full solution from a reduced one.
    pub fn recover(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_full()];
        self.constraints.expand(reduced, &mut full);
        if let Some(lift) = &self.lift {
            for (fi, li) in full.iter_mut().zip(lift) {
                *fi += li;
            }
        }
        full
    }

    /// Elastic strain energy `1/2 u^T K_cells u` (alpha-weighted, without
    /// penalty or rank terms). Summed over fixed cell chunks in a fixed
    /// order, so the result is bitwise reproducible.
    pub fn elastic_energy(&mut self, u_full: &[f64]) -> f64 {
        let dpc = self.mesh.dofs_per_cell();
        let mesh = &self.mesh;
        let matrices = &self.core.matrices;
        let idx = &self.core.matrix_idx;
        let masks = &self.core.masks;
        let table = &self.table;
        let alpha_void = self.alpha_void();
        let voxels = table.voxel_count();
        let n_cells = mesh.cell_count();
        let chunks = n_cells.div_ceil(REDUCTION_CHUNK);
        let partials: Vec<f64> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * REDUCTION_CHUNK;
                let hi = (lo + REDUCTION_CHUNK).min(n_cells);
                let mut acc = 0.0;
                for cell_id in lo..hi {
                    let modes = mesh.cell_scalar_modes(cell_id);
                    let mut x_local = vec![0.0; dpc];
                    for (m, &g) in modes.iter().enumerate() {
                        let gi = 3 * g as usize;
                        x_local[3 * m] = u_full[gi];
                        x_local[3 * m + 1] = u_full[gi + 1];
                        x_local[3 * m + 2] = u_full[gi + 2];
                    }
                    let xv = DVector::from_column_slice(&x_local);
                    let mi = idx[cell_id];
                    let ku = if mi != u32::MAX {
                        &matrices[mi as usize] * &xv
                    } else {
                        let alphas = mask_alphas(&masks[cell_id], voxels, alpha_void);
                        let mut kuv = DVector::zeros(dpc);
                        for (v, &alpha) in alphas.iter().enumerate() {
                            kuv.gemv(alpha, &table.stiffness[v], &xv, 1.0);
                        }
                        kuv
                    };
                    acc += 0.5 * xv.dot(&ku);
                }
                acc
            })
            .collect();
        partials.iter().sum()
    }

    /// Integrals `int alpha C eps dV` and `int eps dV` over the whole box.
    /// Fixed-chunk summation keeps the result bitwise reproducible.
    pub fn integrate_stress_strain(&self, u_full: &[f64]) -> (Vector6<f64>, Vector6<f64>) {
        let dpc = self.mesh.dofs_per_cell();
        let c = self.table.material.stiffness_matrix();
        let voxels = self.table.voxel_count();
        let alpha_void = self.alpha_void();
        let mesh = &self.mesh;
        let masks = &self.core.masks;
        let table = &self.table;
        let n_cells = mesh.cell_count();
        let chunks = n_cells.div_ceil(REDUCTION_CHUNK);
        let partials: Vec<(Vector6<f64>, Vector6<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let lo = chunk * REDUCTION_CHUNK;
                let hi = (lo + REDUCTION_CHUNK).min(n_cells);
                let mut sig_sum = Vector6::zeros();
                let mut eps_sum = Vector6::zeros();
                for cell_id in lo..hi {
                    let modes = mesh.cell_scalar_modes(cell_id);
                    let mut x_local = vec![0.0; dpc];
                    for (m, &g) in modes.iter().enumerate() {
                        let gi = 3 * g as usize;
                        x_local[3 * m] = u_full[gi];
                        x_local[3 * m + 1] = u_full[gi + 1];
                        x_local[3 * m + 2] = u_full[gi + 2];
                    }
                    let xv = DVector::from_column_slice(&x_local);
                    let mask = &masks[cell_id];
                    for v in 0..voxels {
                        let eps_int = &table.strain_int[v] * &xv;
                        let alpha = if (mask[v / 64] >> (v % 64)) & 1 == 1 {
                            1.0
                        } else {
                            alpha_void
                        };
                        let eps6 = Vector6::from_column_slice(eps_int.as_slice());
                        eps_sum += eps6;
                        sig_sum += c * eps6 * alpha;
                    }
                }
                (sig_sum, eps_sum)
            })
            .collect();
        let mut stress = Vector6::zeros();
        let mut strain = Vector6::zeros();
        for (s, e) in partials {
            stress += s;
            strain += e;
        }
        (stress, strain)
    }

    /// Penalty reaction `beta int (u_hat - u) dGamma` over one penalized box
    /// face; returns the force components for constrained components only.
    ///
    /// The difference is taken mode-wise against the exact trace
    /// representation of the affine `u_hat` (bilinear per face, carried by
    /// the corner modes): subtracting the near-equal coefficients first
    /// avoids the catastrophic cancellation of `beta (int u_hat - int u)`.
    pub fn penalty_reaction(&self, pf: &PenaltyFace, beta: f64, u_full: &[f64]) -> [f64; 3] {
        let fi = pf.face.table_index();
        let face = &self.table.faces[fi];
        let h = self.mesh.cell_size();
        let [t0, t1] = face.tangents;
        let nd = face.normal_dir;
        let p1 = self.mesh.degree + 1;
        let mut reaction = [0.0; 3];
        for cell_id in self.boundary_cells(pf.face) {
            let coords = self.mesh.cell_coords(cell_id);
            let origin = [
                coords[0] as f64 * h[0],
                coords[1] as f64 * h[1],
                coords[2] as f64 * h[2],
            ];
            let modes = self.mesh.cell_scalar_modes(cell_id);
            for (ti, &li) in face.trace_modes.iter().enumerate() {
                let m0 = ti % p1;
                let m1 = ti / p1;
                // u_hat trace coefficients: corner modes carry the affine
                // values, internal trace modes are zero.
                let uhat = if m0 < 2 && m1 < 2 {
                    let mut x = origin;
                    x[nd] += if pf.face.positive() { h[nd] } else { 0.0 };
                    x[t0] += if m0 == 1 { h[t0] } else { 0.0 };
                    x[t1] += if m1 == 1 { h[t1] } else { 0.0 };
                    pf.value.eval(x)
                } else {
                    [0.0; 3]
                };
                let g = modes[li] as usize;
                for c in 0..3 {
                    if !pf.components[c] {
                        continue;
                    }
                    let dof = 3 * g + c;
                    // In the lifted frame u = lift + w the difference is
                    // (u_hat - lift) - w, which stays resolvable even when
                    // u_hat - u underflows the coefficient magnitude.
                    let diff = match (&self.lift, &self.last_correction) {
                        (Some(lift), Some(w)) => (uhat[c] - lift[dof]) - w[dof],
                        _ => uhat[c] - u_full[dof],
                    };
                    reaction[c] += beta * diff * face.moment0[ti];
                }
            }
        }
        reaction
    }

    /// Explicit sparse export of the full-space operator (oracle scale).
    pub fn to_sparse(&self) -> SparseMatrix {
        let n = self.n_full();
        let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
        let voxels = self.table.voxel_count();
        let alpha_void = self.alpha_void();
        for cell_id in 0..self.mesh.cell_count() {
            let modes = self.mesh.cell_scalar_modes(cell_id);
            let mi = self.core.matrix_idx[cell_id];
            let owned;
            let k: &DMatrix<f64> = if mi != u32::MAX {
                &self.core.matrices[mi as usize]
            } else {
                let alphas = mask_alphas(&self.core.masks[cell_id], voxels, alpha_void);
                owned = self.table.cell_stiffness(&alphas);
                &owned
            };
            let dpc = self.mesh.dofs_per_cell();
            for i in 0..dpc {
                let gi = 3 * modes[i / 3] as usize + i % 3;
                for j in 0..dpc {
                    let gj = 3 * modes[j / 3] as usize + j % 3;
                    let v = k[(i, j)];
                    if v != 0.0 {
                        triplets.push((gi as u32, gj as u32, v));
                    }
                }
            }
            for att in &self.cell_penalties[cell_id] {
                let face = &self.table.faces[att.face_idx as usize];
                for (ti, &li) in face.trace_modes.iter().enumerate() {
                    for (tj, &lj) in face.trace_modes.iter().enumerate() {
                        for c in 0..3 {
                            if att.components[c] {
                                let gi = 3 * modes[li] as usize + c;
                                let gj = 3 * modes[lj] as usize + c;
                                triplets.push((
                                    gi as u32,
                                    gj as u32,
                                    att.beta * face.mass[(ti, tj)],
                                ));
                            }
                        }
                    }
                }
            }
        }
        for &(dof, beta, _) in &self.mode_penalties {
            triplets.push((dof, dof, beta));
        }
        for (beta, g) in &self.rank_terms {
            for (i, &gi) in g.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                for (j, &gj) in g.iter().enumerate() {
                    if gj != 0.0 {
                        triplets.push((i as u32, j as u32, beta * gi * gj));
                    }
                }
            }
        }
        SparseMatrix::from_triplets(n, triplets)
    }

    /// Dense reduced operator (oracle scale only).
    pub fn to_dense_reduced(&mut self) -> DMatrix<f64> {
        let n = self.constraints.n_reduced();
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e.clone(), &mut col);
            for i in 0..n {
                out[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        out
    }

    /// Solve with CG and recover the full-space solution.
    pub fn solve(
        &mut self,
        cfg: &crate::solver::SolverConfig,
    ) -> Result<(Vec<f64>, crate::solver::SolveReport)> {
        if !self.is_constrained() {
            self.warnings
                .push("system has no Dirichlet data or constraints; it is singular".into());
        }
        let rhs = self.reduced_rhs();
        let (u_red, report) = crate::solver::solve_cg(self, &rhs, cfg)?;
        let mut correction = vec![0.0; self.n_full()];
        self.constraints.expand(&u_red, &mut correction);
        let full = if let Some(lift) = &self.lift {
            correction.iter().zip(lift).map(|(w, l)| w + l).collect()
        } else {
            correction.clone()
        };
        self.last_correction = Some(correction);
        Ok((full, report))
    }
}

impl LinearOperator for FcmSystem {
    fn dim(&self) -> usize {
        self.constraints.n_reduced()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        if self.constraints.is_identity() {
            // Avoid the extra copy in the common unconstrained case.
            let mut full_y = std::mem::take(&mut self.full_y);
            self.apply_full(x, &mut full_y);
            y.copy_from_slice(&full_y);
            self.full_y = full_y;
            return;
        }
        let mut full_x = std::mem::take(&mut self.full_x);
        let mut full_y = std::mem::take(&mut self.full_y);
        self.constraints.expand_homogeneous(x, &mut full_x);
        self.apply_full(&full_x, &mut full_y);
        y.fill(0.0);
        self.constraints.restrict_add(&full_y, y);
        self.full_x = full_x;
        self.full_y = full_y;
    }

    fn diagonal(&self) -> Vec<f64> {
        // Mapped-diagonal approximation of P^T K P; exact for identity
        // constraints, and an effective Jacobi scaling otherwise.
        let full = self.diagonal_full();
        if self.constraints.is_identity() {
            return full;
        }
        let mut out = vec![0.0; self.constraints.n_reduced()];
        self.constraints.restrict_add(&full, &mut out);
        out
    }
}

/// Compressed sparse row matrix for oracle-scale checks.
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut col_idx: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut rows: Vec<u32> = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            if rows.last() == Some(&i) && col_idx.last() == Some(&j) {
                *values.last_mut().unwrap() += v;
            } else {
                rows.push(i);
                col_idx.push(j);
                values.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &i in &rows {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k] as usize)] += self.values[k];
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

fn mask_alphas(mask: &[u64], voxels: usize, alpha_void: f64) -> Vec<f64> {
    (0..voxels)
        .map(|v| {
            if (mask[v / 64] >> (v % 64)) & 1 == 1 {
                1.0
            } else {
                alpha_void
            }
        })
        .collect()
}

/// Assemble the boundary value problem of a load specification: operator
/// plus right-hand side, ready to solve.
pub fn assemble_system(
    mesh: CellMesh,
    grid: &VoxelGrid,
    mat: &ElasticMaterial,
    penalty: &PenaltyConfig,
    loads: &LoadSpec,
) -> Result<FcmSystem> {
    let beta = penalty.beta(mat, &mesh);
    let mut sys = FcmSystem::new(mesh, grid, mat)?;
    for pf in &loads.dirichlet {
        sys.add_penalty_face(pf, beta);
    }
    for tr in &loads.tractions {
        sys.add_traction(tr);
    }
    sys.add_body_force(loads.body_force);
    if !sys.is_constrained() {
        sys.warnings
            .push("no Dirichlet data or other constraint: system is singular".into());
    }
    Ok(sys)
}
