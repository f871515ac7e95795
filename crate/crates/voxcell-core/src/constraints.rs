//! Affine master-slave constraints and the symmetric reduced-system
//! transform they induce.
//!
//! Every full DOF is free, fixed to a value, or slaved to a master with a
//! constant offset: `u_slave = u_master + offset`. Writing `u = P u_r + g`
//! with the 0/1 pairing matrix `P` and the offset vector `g`, the reduced
//! system is `P^T K P u_r = P^T (f - K g)`, which stays symmetric positive
//! (semi)definite.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Free,
    Slave { master: usize, offset: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone)]
pub struct ConstraintBuilder {
    kind: Vec<Kind>,
}

impl ConstraintBuilder {
    pub fn identity(n_full: usize) -> Self {
        Self {
            kind: vec![Kind::Free; n_full],
        }
    }

    pub fn set_slave(&mut self, slave: usize, master: usize, offset: f64) -> Result<()> {
        if slave == master {
            return Err(Error::MeshMismatch(format!(
                "dof {slave} cannot be its own master"
            )));
        }
        if self.kind[slave] != Kind::Free {
            return Err(Error::MeshMismatch(format!(
                "dof {slave} constrained twice"
            )));
        }
        self.kind[slave] = Kind::Slave { master, offset };
        Ok(())
    }

    pub fn set_fixed(&mut self, dof: usize, value: f64) -> Result<()> {
        if self.kind[dof] != Kind::Free {
            return Err(Error::MeshMismatch(format!("dof {dof} constrained twice")));
        }
        self.kind[dof] = Kind::Fixed { value };
        Ok(())
    }

    pub fn finalize(self) -> Result<ConstraintSet> {
        let n_full = self.kind.len();
        // Masters must be free or fixed (single-level chains by
        // construction: wrapping resolves to the final representative).
        for k in &self.kind {
            if let Kind::Slave { master, .. } = k {
                if matches!(self.kind[*master], Kind::Slave { .. }) {
                    return Err(Error::MeshMismatch(format!(
                        "master dof {master} is itself a slave"
                    )));
                }
            }
        }
        let mut reduced_of_full = vec![u32::MAX; n_full];
        let mut full_of_reduced = Vec::new();
        for (i, k) in self.kind.iter().enumerate() {
            if matches!(k, Kind::Free) {
                reduced_of_full[i] = full_of_reduced.len() as u32;
                full_of_reduced.push(i as u32);
            }
        }
        Ok(ConstraintSet {
            kind: self.kind,
            reduced_of_full,
            full_of_reduced,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintSet {
    kind: Vec<Kind>,
    reduced_of_full: Vec<u32>,
    full_of_reduced: Vec<u32>,
}

impl ConstraintSet {
    pub fn identity(n_full: usize) -> Self {
        ConstraintBuilder::identity(n_full).finalize().unwrap()
    }

    pub fn n_full(&self) -> usize {
        self.kind.len()
    }

    pub fn n_reduced(&self) -> usize {
        self.full_of_reduced.len()
    }

    pub fn is_identity(&self) -> bool {
        self.n_full() == self.n_reduced()
    }

    pub fn reduced_index(&self, full: usize) -> Option<usize> {
        let r = self.reduced_of_full[full];
        (r != u32::MAX).then_some(r as usize)
    }

    /// `u_full = P u_r + g`.
    pub fn expand(&self, reduced: &[f64], full: &mut [f64]) {
        self.expand_impl(reduced, full, true)
    }

    /// `u_full = P u_r` (offsets and fixed values dropped); this is the
    /// homogeneous map used inside the reduced operator.
    pub fn expand_homogeneous(&self, reduced: &[f64], full: &mut [f64]) {
        self.expand_impl(reduced, full, false)
    }

    fn expand_impl(&self, reduced: &[f64], full: &mut [f64], with_offsets: bool) {
        debug_assert_eq!(reduced.len(), self.n_reduced());
        debug_assert_eq!(full.len(), self.n_full());
        for (i, k) in self.kind.iter().enumerate() {
            full[i] = match *k {
                Kind::Free => reduced[self.reduced_of_full[i] as usize],
                Kind::Slave { master, offset } => {
                    let base = match self.kind[master] {
                        Kind::Free => reduced[self.reduced_of_full[master] as usize],
                        Kind::Fixed { value } => {
                            if with_offsets {
                                value
                            } else {
                                0.0
                            }
                        }
                        Kind::Slave { .. } => unreachable!("chains are resolved at build time"),
                    };
                    base + if with_offsets { offset } else { 0.0 }
                }
                Kind::Fixed { value } => {
                    if with_offsets {
                        value
                    } else {
                        0.0
                    }
                }
            };
        }
    }

    /// The inhomogeneous part `g` alone.
    pub fn offset_vector(&self) -> Vec<f64> {
        let reduced = vec![0.0; self.n_reduced()];
        let mut g = vec![0.0; self.n_full()];
        self.expand(&reduced, &mut g);
        g
    }

    /// `out += P^T full`.
    pub fn restrict_add(&self, full: &[f64], out: &mut [f64]) {
        debug_assert_eq!(full.len(), self.n_full());
        debug_assert_eq!(out.len(), self.n_reduced());
        for (i, k) in self.kind.iter().enumerate() {
            match *k {
                Kind::Free => out[self.reduced_of_full[i] as usize] += full[i],
                Kind::Slave { master, .. } => {
                    if let Kind::Free = self.kind[master] {
                        out[self.reduced_of_full[master] as usize] += full[i];
                    }
                }
                Kind::Fixed { .. } => {}
            }
        }
    }
}
