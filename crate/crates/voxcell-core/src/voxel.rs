//! Voxel volumes: grayscale images, segmented indicator grids, porosity and
//! unit-cell extraction.
//!
//! All volumes are stored x-fastest: linear index `i = x + nx*(y + ny*z)`.

use crate::error::{Error, Result};
use crate::DEFAULT_ALPHA_VOID;

/// Scalar grayscale volume (Hounsfield-like units).
#[derive(Debug, Clone)]
pub struct GrayscaleVolume {
    pub dims: [usize; 3],
    /// Voxel spacing in mm.
    pub spacing: [f64; 3],
    /// One value per voxel, x-fastest.
    pub values: Vec<f64>,
}

impl GrayscaleVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], values: Vec<f64>) -> Result<Self> {
        validate_dims_spacing(dims, spacing)?;
        let expected = dims[0] * dims[1] * dims[2];
        if values.len() != expected {
            return Err(Error::BadDescriptor(format!(
                "value count {} does not match dims {:?} ({} voxels)",
                values.len(),
                dims,
                expected
            )));
        }
        Ok(Self {
            dims,
            spacing,
            values,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Segmented indicator grid: every voxel is either material (alpha = 1) or
/// void (alpha = alpha_void with 0 < alpha_void << 1).
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Per-voxel material flag, x-fastest. The indicator value is
    /// 1.0 for `true` and `alpha_void` for `false`.
    pub material: Vec<bool>,
    pub alpha_void: f64,
}

impl VoxelGrid {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        material: Vec<bool>,
        alpha_void: f64,
    ) -> Result<Self> {
        validate_dims_spacing(dims, spacing)?;
        if !(alpha_void > 0.0 && alpha_void < 1.0) {
            return Err(Error::BadDescriptor(format!(
                "alpha_void must lie in (0, 1), got {alpha_void}"
            )));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if material.len() != expected {
            return Err(Error::BadDescriptor(format!(
                "material count {} does not match dims {:?}",
                material.len(),
                dims
            )));
        }
        Ok(Self {
            dims,
            spacing,
            material,
            alpha_void,
        })
    }

    pub fn solid(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, vec![true; n], DEFAULT_ALPHA_VOID)
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn alpha_at(&self, idx: usize) -> f64 {
        if self.material[idx] {
            1.0
        } else {
            self.alpha_void
        }
    }

    /// Physical extent of the grid in mm.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn material_count(&self) -> usize {
        self.material.iter().filter(|&&m| m).count()
    }
}

/// Threshold segmentation configuration.
#[derive(Debug, Clone, Copy)]
pub struct SegmentationConfig {
    /// Grayscale threshold.
    pub threshold: f64,
    /// If true (default), `value >= threshold` classifies as material;
    /// otherwise strictly greater.
    pub inclusive: bool,
}

impl SegmentationConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::BadDescriptor("threshold must be finite".into()));
        }
        Ok(Self {
            threshold,
            inclusive: true,
        })
    }
}

/// Single-threshold segmentation of a grayscale volume.
pub fn threshold_segment(
    vol: &GrayscaleVolume,
    cfg: &SegmentationConfig,
    alpha_void: f64,
) -> Result<VoxelGrid> {
    let material = vol
        .values
        .iter()
        .map(|&v| {
            if cfg.inclusive {
                v >= cfg.threshold
            } else {
                v > cfg.threshold
            }
        })
        .collect();
    VoxelGrid::new(vol.dims, vol.spacing, material, alpha_void)
}

/// Void volume fraction: 1 - material voxels / total voxels.
pub fn porosity(grid: &VoxelGrid) -> f64 {
    1.0 - grid.material_count() as f64 / grid.voxel_count() as f64
}

/// Extract `count` non-overlapping unit-cell subvolumes of `cell_size_voxels`
/// from the grid, in x-fastest scan order over whole cells starting at the
/// origin.
pub fn extract_unit_cells(
    grid: &VoxelGrid,
    cell_size_voxels: [usize; 3],
    count: usize,
) -> Result<Vec<VoxelGrid>> {
    for d in 0..3 {
        if cell_size_voxels[d] == 0 {
            return Err(Error::Geometry("cell size must be positive".into()));
        }
        if cell_size_voxels[d] > grid.dims[d] {
            return Err(Error::Geometry(format!(
                "cell size {:?} exceeds grid dims {:?}",
                cell_size_voxels, grid.dims
            )));
        }
    }
    let cells = [
        grid.dims[0] / cell_size_voxels[0],
        grid.dims[1] / cell_size_voxels[1],
        grid.dims[2] / cell_size_voxels[2],
    ];
    let available = cells[0] * cells[1] * cells[2];
    if count > available {
        return Err(Error::Geometry(format!(
            "requested {count} cells but only {available} fit in the grid"
        )));
    }

    let mut out = Vec::with_capacity(count);
    'scan: for cz in 0..cells[2] {
        for cy in 0..cells[1] {
            for cx in 0..cells[0] {
                if out.len() == count {
                    break 'scan;
                }
                let [sx, sy, sz] = cell_size_voxels;
                let mut material = Vec::with_capacity(sx * sy * sz);
                for z in 0..sz {
                    for y in 0..sy {
                        for x in 0..sx {
                            let idx = grid.index(cx * sx + x, cy * sy + y, cz * sz + z);
                            material.push(grid.material[idx]);
                        }
                    }
                }
                out.push(VoxelGrid::new(
                    cell_size_voxels,
                    grid.spacing,
                    material,
                    grid.alpha_void,
                )?);
            }
        }
    }
    Ok(out)
}

fn validate_dims_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::BadDescriptor(format!(
            "dims must all be >= 1, got {dims:?}"
        )));
    }
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::BadDescriptor(format!(
            "spacing must all be > 0, got {spacing:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol(dims: [usize; 3], values: Vec<f64>) -> GrayscaleVolume {
        GrayscaleVolume::new(dims, [1.0, 1.0, 1.0], values).unwrap()
    }

    #[test]
    fn all_zero_volume_segments_to_void() {
        let v = vol([2, 2, 2], vec![0.0; 8]);
        let cfg = SegmentationConfig::new(14_500.0).unwrap();
        let grid = threshold_segment(&v, &cfg, 1e-11).unwrap();
        assert_eq!(grid.material_count(), 0);
        assert_eq!(porosity(&grid), 1.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let v = vol([1, 1, 1], vec![14_500.0]);
        let cfg = SegmentationConfig::new(14_500.0).unwrap();
        let grid = threshold_segment(&v, &cfg, 1e-11).unwrap();
        assert!(grid.material[0]);
    }

    #[test]
    fn binary_volume_matches_mask() {
        let values = vec![0.0, 20_000.0, 20_000.0, 0.0, 0.0, 0.0, 20_000.0, 0.0];
        let v = vol([2, 2, 2], values.clone());
        let cfg = SegmentationConfig::new(14_500.0).unwrap();
        let grid = threshold_segment(&v, &cfg, 1e-11).unwrap();
        for (m, raw) in grid.material.iter().zip(&values) {
            assert_eq!(*m, *raw >= 14_500.0);
        }
    }

    #[test]
    fn porosity_counts_voids() {
        let grid = VoxelGrid::solid([2, 2, 2], [1.0; 3]).unwrap();
        assert_eq!(porosity(&grid), 0.0);

        let mut half = grid.clone();
        for i in 0..4 {
            half.material[i] = false;
        }
        assert_eq!(porosity(&half), 0.5);
    }

    #[test]
    fn extract_partitions_grid() {
        let mut grid = VoxelGrid::solid([8, 8, 8], [1.0; 3]).unwrap();
        // Tag one voxel per octant so the extraction order is observable.
        let idx = grid.index(4, 0, 0);
        grid.material[idx] = false;
        let cells = extract_unit_cells(&grid, [4, 4, 4], 8).unwrap();
        assert_eq!(cells.len(), 8);
        // Cell 1 (x-fastest scan: second cell) holds the tagged voxel.
        assert_eq!(cells[0].material_count(), 64);
        assert_eq!(cells[1].material_count(), 63);
        for c in &cells {
            assert_eq!(c.dims, [4, 4, 4]);
        }
        let total: usize = cells.iter().map(|c| c.material_count()).sum();
        assert_eq!(total, grid.material_count());
    }

    #[test]
    fn extract_cell_larger_than_grid_fails() {
        let grid = VoxelGrid::solid([4, 4, 4], [1.0; 3]).unwrap();
        assert!(extract_unit_cells(&grid, [8, 8, 8], 1).is_err());
    }

    #[test]
    fn extract_too_many_cells_fails() {
        let grid = VoxelGrid::solid([8, 8, 8], [1.0; 3]).unwrap();
        assert!(extract_unit_cells(&grid, [4, 4, 4], 9).is_err());
    }

    #[test]
    fn extract_subset_in_scan_order() {
        // 2x2x10-cell arrangement: 40 cells available, take 24.
        let grid = VoxelGrid::solid([4, 4, 20], [1.0; 3]).unwrap();
        let cells = extract_unit_cells(&grid, [2, 2, 2], 24).unwrap();
        assert_eq!(cells.len(), 24);
    }

    proptest! {
        /// Rendering a grid back to grayscale {0, 2*threshold} and
        /// re-segmenting reproduces the grid.
        #[test]
        fn segmentation_idempotent(mask in proptest::collection::vec(any::<bool>(), 27),
                                   threshold in 1.0_f64..1e6) {
            let grid = VoxelGrid::new([3, 3, 3], [1.0; 3], mask, 1e-11).unwrap();
            let rendered: Vec<f64> = grid
                .material
                .iter()
                .map(|&m| if m { 2.0 * threshold } else { 0.0 })
                .collect();
            let v = GrayscaleVolume::new([3, 3, 3], [1.0; 3], rendered).unwrap();
            let cfg = SegmentationConfig::new(threshold).unwrap();
            let back = threshold_segment(&v, &cfg, 1e-11).unwrap();
            prop_assert_eq!(back.material, grid.material);
        }

        /// Raising the threshold never decreases porosity.
        #[test]
        fn porosity_monotone_in_threshold(values in proptest::collection::vec(0.0_f64..100.0, 27),
                                          t1 in 0.0_f64..100.0, dt in 0.0_f64..100.0) {
            let v = GrayscaleVolume::new([3, 3, 3], [1.0; 3], values).unwrap();
            let lo = threshold_segment(&v, &SegmentationConfig::new(t1).unwrap(), 1e-11).unwrap();
            let hi = threshold_segment(&v, &SegmentationConfig::new(t1 + dt).unwrap(), 1e-11).unwrap();
            prop_assert!(porosity(&hi) >= porosity(&lo));
        }
    }
}
