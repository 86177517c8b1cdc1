//! Two-constraint portfolio action spaces.
//!
//! The action space is the set of allocations `a` on the N-asset simplex with
//! `Σ_{V1} a ≥ c1` and `Σ_{V2} a ≥ c2`. This crate provides
//!
//! * [`constraints`]: constraint types, normalization of less-equal
//!   constraints, the H-representation, LP feasibility and random task
//!   generation;
//! * [`simplex_decomp`]: the decomposition of that polytope into four padded
//!   standard simplices with adaptive weights, the forward composition and a
//!   constructive inverse;
//! * [`polytope_sampler`]: hit-and-run sampling of uniform allocations.

pub mod constraints;
pub mod error;
pub mod lp;
pub mod numeric;
pub mod polytope_sampler;
pub mod simplex_decomp;

pub use constraints::{
    generate_random_config, is_feasible, normalize_constraint, AllocationConstraint, AssetUniverse,
    ConstraintConfig, Direction, Feasibility, HPolytope,
};
pub use error::{CoreError, Result};
pub use polytope_sampler::{init_sampler, init_sampler_with, SamplerOptions, SamplerState};
pub use simplex_decomp::{
    build_decomposition, compose, compute_weights, membership, Allocation, Composer, Decomposition,
    PaddedSimplex, SubAction, SurrogateAction, WeightVector,
};
