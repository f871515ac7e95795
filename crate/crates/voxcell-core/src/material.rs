//! Isotropic linear elasticity in Voigt notation.
//!
//! Convention used everywhere in this crate: engineering shear strains
//! (gamma = 2 eps_ij) and component order (xx, yy, zz, yz, xz, xy).

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};

/// Isotropic linear-elastic material.
#[derive(Debug, Clone, Copy)]
pub struct ElasticMaterial {
    /// Young's modulus in MPa.
    pub youngs_modulus: f64,
    /// Poisson's ratio.
    pub poisson_ratio: f64,
}

impl ElasticMaterial {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        if !(youngs_modulus > 0.0) {
            return Err(Error::Geometry(format!(
                "Young's modulus must be positive, got {youngs_modulus}"
            )));
        }
        if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
            return Err(Error::Geometry(format!(
                "Poisson's ratio must lie in (-1, 0.5), got {poisson_ratio}"
            )));
        }
        Ok(Self {
            youngs_modulus,
            poisson_ratio,
        })
    }

    /// 6x6 constitutive matrix C such that sigma = C eps (engineering shear).
    pub fn stiffness_matrix(&self) -> Matrix6<f64> {
        let e = self.youngs_modulus;
        let nu = self.poisson_ratio;
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));

        let mut c = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = lambda;
            }
            c[(i, i)] = lambda + 2.0 * mu;
            c[(i + 3, i + 3)] = mu;
        }
        c
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }
}

/// Von Mises equivalent stress from a Voigt stress vector.
pub fn von_mises(sigma: &Vector6<f64>) -> f64 {
    let (sxx, syy, szz) = (sigma[0], sigma[1], sigma[2]);
    let (syz, sxz, sxy) = (sigma[3], sigma[4], sigma[5]);
    let dev = 0.5 * ((sxx - syy).powi(2) + (syy - szz).powi(2) + (szz - sxx).powi(2));
    (dev + 3.0 * (syz * syz + sxz * sxz + sxy * sxy)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stiffness_matrix_matches_lame_form() {
        let mat = ElasticMaterial::new(900.0, 0.25).unwrap();
        let c = mat.stiffness_matrix();
        // lambda = 360, mu = 360 for E=900, nu=0.25
        assert_relative_eq!(c[(0, 0)], 1080.0, epsilon = 1e-12);
        assert_relative_eq!(c[(0, 1)], 360.0, epsilon = 1e-12);
        assert_relative_eq!(c[(3, 3)], 360.0, epsilon = 1e-12);
        assert_relative_eq!(c[(5, 5)], 360.0, epsilon = 1e-12);
        assert_eq!(c[(0, 3)], 0.0);
    }

    #[test]
    fn stiffness_matrix_is_spd() {
        for nu in [-0.5, 0.0, 0.3, 0.45] {
            let mat = ElasticMaterial::new(190_000.0, nu).unwrap();
            let c = mat.stiffness_matrix();
            assert_relative_eq!((c - c.transpose()).norm(), 0.0, epsilon = 1e-9);
            let eig = c.symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l > 0.0), "nu={nu}: eigenvalues {eig:?}");
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ElasticMaterial::new(0.0, 0.3).is_err());
        assert!(ElasticMaterial::new(1.0, 0.5).is_err());
        assert!(ElasticMaterial::new(1.0, -1.0).is_err());
    }

    #[test]
    fn von_mises_uniaxial() {
        let sigma = Vector6::new(100.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(von_mises(&sigma), 100.0, epsilon = 1e-12);
        let shear = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 10.0);
        assert_relative_eq!(von_mises(&shear), 10.0 * 3.0_f64.sqrt(), epsilon = 1e-12);
    }
}
