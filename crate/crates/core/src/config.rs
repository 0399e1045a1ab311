//! Scalar tolerances shared across the crate.

/// Every numeric threshold used by the library, in one place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative asymmetry allowed in a covariance matrix.
    pub symmetry: f64,
    /// Eigenvalues below `degeneracy * lambda_max` are treated as zero.
    pub degeneracy: f64,
    /// Allowed deviation of mixture weights from the simplex.
    pub simplex: f64,
    /// Truncation cells with less mass than this are reported as negligible.
    pub negligible_mass: f64,
    /// Grid cells with less standard-normal mass than this are pruned.
    pub prune_mass: f64,
    /// Fixed-point tolerance of the scalar quantizer solver.
    pub quantizer_tol: f64,
    pub quantizer_max_iters: usize,
    /// Marginal mismatch tolerated by the transport solver.
    pub marginal: f64,
    /// Maximum number of cost entries for empirical transport.
    pub empirical_cost_cap: usize,
    /// Maximum number of atoms or components during propagation.
    pub atom_cap: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        TOL
    }
}

pub const TOL: Tolerances = Tolerances {
    symmetry: 1e-12,
    degeneracy: 1e-10,
    simplex: 1e-12,
    negligible_mass: 1e-300,
    prune_mass: 1e-12,
    quantizer_tol: 1e-12,
    quantizer_max_iters: 100_000,
    marginal: 1e-9,
    empirical_cost_cap: 4_000_000,
    atom_cap: 100_000,
};
