//! Synthetic manufacturing-like defects: powder blobs attached to downskin
//! surfaces and oversize of struts facing against the build direction.
//!
//! The model is intentionally simple; it exists to produce ensembles of
//! approximately periodic cells with a controllable geometric spread, not to
//! reproduce melt-pool physics. Material is only ever added, never removed.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lattice::Axis;
use crate::voxel::VoxelGrid;

/// Defect model parameters. Deterministic for a fixed seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    /// Expected blob count per mm^2 of downskin surface.
    pub powder_blob_density: f64,
    /// Blob radius range in mm (uniform draw).
    pub blob_radius_mm: [f64; 2],
    /// Additive radius on downskin strut surfaces in mm.
    pub strut_oversize_mm: f64,
    pub build_axis: Axis,
    pub rng_seed: u64,
}

impl Default for DefectSpec {
    fn default() -> Self {
        Self {
            powder_blob_density: 0.5,
            blob_radius_mm: [0.03, 0.06],
            strut_oversize_mm: 0.0,
            build_axis: Axis::Z,
            rng_seed: 0,
        }
    }
}

/// Counter-based generator: a hash of (seed, counter) yields each draw, so
/// parallel or out-of-order evaluation cannot change the result.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// SplitMix64 finalizer over seed/counter.
    pub fn raw(&self, counter: u64) -> u64 {
        let mut z = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(counter.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .wrapping_add(0x94D0_49BB_1331_11EB);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.raw(counter) >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Apply powder blobs and downskin oversize. Material only grows, so the
/// porosity of the result is never larger than the input's.
pub fn apply_defects(grid: &VoxelGrid, spec: &DefectSpec) -> Result<VoxelGrid> {
    let mut out = grid.clone();
    let rng = CounterRng::new(spec.rng_seed);
    let build = spec.build_axis.index();
    let [nx, ny, nz] = grid.dims;

    // Downskin surface voxels: material with a void neighbor on the -build
    // side (or at the domain floor there is powder below anyway, skip those).
    let mut downskin: Vec<[usize; 3]> = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !grid.material[grid.index(x, y, z)] {
                    continue;
                }
                let mut below = [x as isize, y as isize, z as isize];
                below[build] -= 1;
                if below[build] < 0 {
                    continue;
                }
                let bidx = grid.index(below[0] as usize, below[1] as usize, below[2] as usize);
                if !grid.material[bidx] {
                    downskin.push([x, y, z]);
                }
            }
        }
    }

    let face_area = match spec.build_axis {
        Axis::X => grid.spacing[1] * grid.spacing[2],
        Axis::Y => grid.spacing[0] * grid.spacing[2],
        Axis::Z => grid.spacing[0] * grid.spacing[1],
    };

    for (si, &[x, y, z]) in downskin.iter().enumerate() {
        let counter = si as u64 * 4;
        let face_center = {
            let mut c = [
                (x as f64 + 0.5) * grid.spacing[0],
                (y as f64 + 0.5) * grid.spacing[1],
                (z as f64 + 0.5) * grid.spacing[2],
            ];
            c[build] -= 0.5 * grid.spacing[build];
            c
        };

        // Powder blob: Bernoulli with the expected count per face.
        let p_blob = (spec.powder_blob_density * face_area).min(1.0);
        if p_blob > 0.0 && rng.uniform(counter) < p_blob {
            let [r_lo, r_hi] = spec.blob_radius_mm;
            let r = r_lo + (r_hi - r_lo) * rng.uniform(counter + 1);
            let mut center = face_center;
            // Blob hangs below the surface by half its radius.
            center[build] -= 0.5 * r;
            fill_sphere_below(&mut out, center, r, build, f64::INFINITY);
        }

        // Downskin dilation: fill void within the oversize radius below the
        // face center.
        if spec.strut_oversize_mm > 0.0 {
            fill_sphere_below(
                &mut out,
                face_center,
                spec.strut_oversize_mm,
                build,
                face_center[build],
            );
        }
    }

    Ok(out)
}

/// Set voxels within `radius` of `center` to material, restricted to centers
/// with build-coordinate <= `max_build_coord`.
fn fill_sphere_below(
    grid: &mut VoxelGrid,
    center: [f64; 3],
    radius: f64,
    build: usize,
    max_build_coord: f64,
) {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for d in 0..3 {
        let a = ((center[d] - radius) / grid.spacing[d]).floor().max(0.0) as usize;
        let b = ((center[d] + radius) / grid.spacing[d]).ceil().max(0.0) as usize;
        lo[d] = a.min(grid.dims[d]);
        hi[d] = b.min(grid.dims[d]);
    }
    let r_sq = radius * radius;
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                let c = [
                    (x as f64 + 0.5) * grid.spacing[0],
                    (y as f64 + 0.5) * grid.spacing[1],
                    (z as f64 + 0.5) * grid.spacing[2],
                ];
                if c[build] > max_build_coord {
                    continue;
                }
                let d_sq = (0..3).map(|d| (c[d] - center[d]).powi(2)).sum::<f64>();
                if d_sq <= r_sq {
                    let idx = grid.index(x, y, z);
                    grid.material[idx] = true;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{octet_solid, voxelize, OctetCellSpec};
    use crate::voxel::porosity;

    #[test]
    fn zero_rate_spec_is_identity() {
        let solid = octet_solid(&OctetCellSpec::default()).unwrap();
        let grid = voxelize(&solid, [32, 32, 32], [0.125; 3], 1).unwrap();
        let spec = DefectSpec {
            powder_blob_density: 0.0,
            strut_oversize_mm: 0.0,
            ..Default::default()
        };
        let out = apply_defects(&grid, &spec).unwrap();
        assert_eq!(out.material, grid.material);
    }

    #[test]
    fn same_seed_is_deterministic() {
        let solid = octet_solid(&OctetCellSpec::default()).unwrap();
        let grid = voxelize(&solid, [32, 32, 32], [0.125; 3], 1).unwrap();
        let spec = DefectSpec {
            powder_blob_density: 20.0,
            blob_radius_mm: [0.1, 0.3],
            strut_oversize_mm: 0.05,
            rng_seed: 42,
            ..Default::default()
        };
        let a = apply_defects(&grid, &spec).unwrap();
        let b = apply_defects(&grid, &spec).unwrap();
        assert_eq!(a.material, b.material);

        let c = apply_defects(
            &grid,
            &DefectSpec {
                rng_seed: 43,
                ..spec
            },
        )
        .unwrap();
        assert_ne!(a.material, c.material);
    }

    #[test]
    fn defects_only_add_material() {
        let solid = octet_solid(&OctetCellSpec::default()).unwrap();
        let grid = voxelize(&solid, [32, 32, 32], [0.125; 3], 1).unwrap();
        let spec = DefectSpec {
            powder_blob_density: 10.0,
            blob_radius_mm: [0.1, 0.25],
            strut_oversize_mm: 0.06,
            rng_seed: 7,
            ..Default::default()
        };
        let out = apply_defects(&grid, &spec).unwrap();
        for (before, after) in grid.material.iter().zip(&out.material) {
            assert!(*after || !*before, "material voxel was removed");
        }
        assert!(porosity(&out) <= porosity(&grid));
    }

    /// Blobs at printer-scale parameters push the ideal porosity from
    /// about 0.756 toward the as-manufactured regime; direction and rough
    /// magnitude only.
    #[test]
    fn blobs_reduce_porosity_toward_as_manufactured() {
        let solid = octet_solid(&OctetCellSpec::default()).unwrap();
        // 25 um voxels resolve the 30-60 um blobs.
        let grid = voxelize(&solid, [160, 160, 160], [0.025; 3], 1).unwrap();
        let ideal = porosity(&grid);
        let spec = DefectSpec {
            powder_blob_density: 0.5,
            blob_radius_mm: [0.03, 0.06],
            strut_oversize_mm: 0.04,
            rng_seed: 1,
            ..Default::default()
        };
        let out = apply_defects(&grid, &spec).unwrap();
        let perturbed = porosity(&out);
        assert!(perturbed < ideal, "ideal {ideal}, perturbed {perturbed}");
        assert!(perturbed > 0.5, "defects overwhelmed the cell: {perturbed}");
    }

    #[test]
    fn counter_rng_uniform_in_unit_interval() {
        let rng = CounterRng::new(123);
        for i in 0..1000 {
            let u = rng.uniform(i);
            assert!((0.0..1.0).contains(&u));
        }
        // Different counters decorrelate.
        assert_ne!(rng.raw(0), rng.raw(1));
    }
}
