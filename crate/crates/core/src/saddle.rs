//! Reduction of velocity/pressure saddle systems to their free unknowns.
//!
//! The reduced operator is `[[A, -B^T], [-B, 0]]` where rows and columns of
//! fixed velocity DOFs and pinned pressure DOFs are removed.

use crate::error::Result;
use crate::sparse::{CsrMatrix, SquareSystem};

const FIXED: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct SaddleLayout {
    vel_index: Vec<usize>,
    pres_index: Vec<usize>,
    n_vel: usize,
    n: usize,
}

impl SaddleLayout {
    pub fn new(fixed_velocity: &[bool], pinned_pressure: &[bool]) -> Self {
        let mut next = 0;
        let vel_index = fixed_velocity
            .iter()
            .map(|&f| {
                if f {
                    FIXED
                } else {
                    next += 1;
                    next - 1
                }
            })
            .collect();
        let n_vel = next;
        let pres_index = pinned_pressure
            .iter()
            .map(|&f| {
                if f {
                    FIXED
                } else {
                    next += 1;
                    next - 1
                }
            })
            .collect();
        Self {
            vel_index,
            pres_index,
            n_vel,
            n: next,
        }
    }

    /// Number of reduced unknowns.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_velocity(&self) -> usize {
        self.n_vel
    }

    pub fn is_fixed_velocity(&self, dof: usize) -> bool {
        self.vel_index[dof] == FIXED
    }

    pub fn is_pinned_pressure(&self, dof: usize) -> bool {
        self.pres_index[dof] == FIXED
    }

    /// Builds the reduced saddle operator from the velocity block `a` and the
    /// divergence `b` (rows = pressure DOFs).
    pub fn system(&self, a: &CsrMatrix, b: &CsrMatrix) -> Result<SquareSystem> {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for (i, &ri) in self.vel_index.iter().enumerate() {
            if ri == FIXED {
                continue;
            }
            for (j, v) in a.row(i) {
                let cj = self.vel_index[j];
                if cj != FIXED {
                    cols[cj].push((ri, v));
                }
            }
        }
        for (p, &rp) in self.pres_index.iter().enumerate() {
            if rp == FIXED {
                continue;
            }
            for (j, v) in b.row(p) {
                let cj = self.vel_index[j];
                if cj != FIXED {
                    cols[cj].push((rp, -v));
                    cols[rp].push((cj, -v));
                }
            }
        }
        for c in &mut cols {
            c.sort_by_key(|e| e.0);
        }
        SquareSystem::from_columns(self.n, cols)
    }

    /// Restricts full-length velocity and pressure vectors to the unknowns.
    pub fn gather(&self, vel: &[f64], pres: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, &r) in self.vel_index.iter().enumerate() {
            if r != FIXED {
                x[r] = vel[i];
            }
        }
        for (i, &r) in self.pres_index.iter().enumerate() {
            if r != FIXED {
                x[r] = pres[i];
            }
        }
        x
    }

    /// Expands reduced unknowns to full vectors with zeros at fixed DOFs.
    pub fn scatter(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let vel = self
            .vel_index
            .iter()
            .map(|&r| if r == FIXED { 0.0 } else { x[r] })
            .collect();
        let pres = self
            .pres_index
            .iter()
            .map(|&r| if r == FIXED { 0.0 } else { x[r] })
            .collect();
        (vel, pres)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    #[test]
    fn reduced_system_solves() {
        // A = 2 I (3x3), B = [1 1 1], velocity 2 fixed, no pinned pressure
        let mut ta = TripletBuilder::new(3, 3);
        for i in 0..3 {
            ta.push(i, i, 2.0);
        }
        let mut tb = TripletBuilder::new(1, 3);
        for j in 0..3 {
            tb.push(0, j, 1.0);
        }
        let layout = SaddleLayout::new(&[false, false, true], &[false]);
        assert_eq!(layout.n(), 3);
        let s = layout.system(&ta.build(), &tb.build()).unwrap();
        let f = s.factor(None).unwrap();
        // 2 u0 - p = 1, 2 u1 - p = 1, -(u0 + u1) = -1
        let x = f.solve(&[1.0, 1.0, -1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14 && x[2].abs() < 1e-14);
        let (v, p) = layout.scatter(&x);
        assert_eq!(v.len(), 3);
        assert_eq!(layout.gather(&v, &p), x);
    }
}
