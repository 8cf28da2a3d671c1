//! Mesh-dependent operators shared by every solve on one mesh.

use std::sync::{Arc, OnceLock};

use faer::sparse::linalg::solvers::SymbolicLu;

use crate::assembly::{assemble_divergence, assemble_mass, assemble_scalar_functional, assemble_stiffness};
use crate::error::Result;
use crate::mesh::Mesh;
use crate::quadrature::TriangleRule;
use crate::space::FeSpaces;
use crate::sparse::CsrMatrix;

#[derive(Debug)]
pub struct Discretization {
    pub spaces: FeSpaces,
    pub rule: TriangleRule,
    /// `int grad v : grad w` on the velocity space.
    pub velocity_stiffness: CsrMatrix,
    /// `q^T B v = int q div v`.
    pub divergence: CsrMatrix,
    /// `int q_i` for pressure basis functions.
    pub pressure_weights: Vec<f64>,
    /// Consistent P1 mass and stiffness on the design space.
    pub design_mass: CsrMatrix,
    pub design_stiffness: CsrMatrix,
    /// `int N_i` for design basis functions (lumped mass).
    pub design_weights: Vec<f64>,
    /// Symbolic factorization of the state Jacobian pattern (standard
    /// Dirichlet layout), shared by every solve on this mesh.
    pub(crate) state_symbolic: OnceLock<SymbolicLu<usize>>,
}

impl Discretization {
    pub fn new(mesh: Mesh, rule: TriangleRule) -> Result<Arc<Self>> {
        let spaces = FeSpaces::new(mesh);
        let velocity_stiffness = assemble_stiffness(&spaces.velocity, 1.0, &rule)?;
        let divergence = assemble_divergence(&spaces.velocity, &spaces.pressure, &rule)?;
        let pressure_weights = assemble_scalar_functional(&spaces.pressure, &rule, |_| (1.0, [0.0; 2]));
        let design_mass = assemble_mass(&spaces.design, &rule);
        let design_stiffness = assemble_stiffness(&spaces.design, 1.0, &rule)?;
        let design_weights = assemble_scalar_functional(&spaces.design, &rule, |_| (1.0, [0.0; 2]));
        Ok(Arc::new(Self {
            spaces,
            rule,
            velocity_stiffness,
            divergence,
            pressure_weights,
            design_mass,
            design_stiffness,
            design_weights,
            state_symbolic: OnceLock::new(),
        }))
    }

    /// Default quadrature.
    pub fn structured(mesh: Mesh) -> Result<Arc<Self>> {
        Self::new(mesh, TriangleRule::default_rule())
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.spaces.mesh
    }

    /// `int phi` using the lumped design weights (exact for P1).
    pub fn design_integral(&self, phi: &[f64]) -> f64 {
        crate::sparse::dot(&self.design_weights, phi)
    }
}
