//! Allocation constraints over an N-asset simplex.
//!
//! A task carries two allocation constraints `Σ_{i∈V_j} x_i ≥ c_j`. Less-equal
//! constraints are rewritten on construction into the greater-equal form over
//! the complementary asset set, so everything downstream only ever sees `≥`
//! rows.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lp;
use crate::numeric::dot;

/// Default number of whole-config resamples before random generation gives up.
pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

/// Chebyshev radius below which a feasible polytope counts as having empty interior.
pub const INTERIOR_RADIUS_TOL: f64 = 1e-9;

pub const CASH_LABEL: &str = "CASH";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AssetUniverse {
    labels: Vec<String>,
}

impl AssetUniverse {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(CoreError::InvalidUniverse(format!(
                "need at least 2 assets, got {}",
                labels.len()
            )));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(CoreError::InvalidUniverse(
                "asset labels must be unique".into(),
            ));
        }
        Ok(Self { labels })
    }

    /// `CASH` at index 0 followed by `A01 .. A{n-1}`.
    pub fn with_cash(n_assets: usize) -> Result<Self> {
        let labels = std::iter::once(CASH_LABEL.to_string())
            .chain((1..n_assets).map(|i| format!("A{i:02}")))
            .collect();
        Self::new(labels)
    }

    /// Labels `A00 .. A{n-1}` without a cash convention.
    pub fn anonymous(n_assets: usize) -> Result<Self> {
        Self::new((0..n_assets).map(|i| format!("A{i:02}")).collect())
    }

    pub fn n_assets(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn has_cash(&self) -> bool {
        self.labels[0] == CASH_LABEL
    }
}

impl TryFrom<Vec<String>> for AssetUniverse {
    type Error = CoreError;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<AssetUniverse> for Vec<String> {
    fn from(u: AssetUniverse) -> Self {
        u.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    GreaterEqual,
    LessEqual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationConstraint {
    assets: Vec<usize>,
    threshold: f64,
    direction: Direction,
}

impl AllocationConstraint {
    /// Asset indices are deduplicated and sorted.
    pub fn new(
        assets: impl IntoIterator<Item = usize>,
        threshold: f64,
        direction: Direction,
    ) -> Result<Self> {
        let assets: Vec<usize> = assets
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if assets.is_empty() {
            return Err(CoreError::InvalidConstraint("asset set is empty".into()));
        }
        if !threshold.is_finite() || !(0.0..=1.0).contains(&threshold) {
            return Err(CoreError::InvalidConstraint(format!(
                "threshold {threshold} outside [0, 1]"
            )));
        }
        Ok(Self {
            assets,
            threshold,
            direction,
        })
    }

    pub fn at_least(assets: impl IntoIterator<Item = usize>, threshold: f64) -> Result<Self> {
        Self::new(assets, threshold, Direction::GreaterEqual)
    }

    pub fn at_most(assets: impl IntoIterator<Item = usize>, threshold: f64) -> Result<Self> {
        Self::new(assets, threshold, Direction::LessEqual)
    }

    pub fn assets(&self) -> &[usize] {
        &self.assets
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn contains(&self, asset: usize) -> bool {
        self.assets.binary_search(&asset).is_ok()
    }

    /// Mass that `x` places on the constrained asset set.
    pub fn mass(&self, x: &[f64]) -> f64 {
        self.assets.iter().map(|&i| x[i]).sum()
    }

    /// Signed slack; negative means violated.
    pub fn slack(&self, x: &[f64]) -> f64 {
        match self.direction {
            Direction::GreaterEqual => self.mass(x) - self.threshold,
            Direction::LessEqual => self.threshold - self.mass(x),
        }
    }
}

/// Rewrites `Σ_V x ≤ c` as `Σ_{I∖V} x ≥ 1 − c`; greater-equal inputs pass through.
pub fn normalize_constraint(
    c: &AllocationConstraint,
    universe: &AssetUniverse,
) -> Result<AllocationConstraint> {
    let n = universe.n_assets();
    if let Some(&bad) = c.assets.iter().find(|&&i| i >= n) {
        return Err(CoreError::InvalidConstraint(format!(
            "asset index {bad} outside universe of {n}"
        )));
    }
    match c.direction {
        Direction::GreaterEqual => Ok(c.clone()),
        Direction::LessEqual => {
            let complement: Vec<usize> = (0..n).filter(|i| !c.contains(*i)).collect();
            if complement.is_empty() {
                return Err(CoreError::DegenerateComplement);
            }
            AllocationConstraint::at_least(complement, 1.0 - c.threshold)
        }
    }
}

/// Two normalized (greater-equal) allocation constraints over a universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigDocument", into = "ConfigDocument")]
pub struct ConstraintConfig {
    universe: AssetUniverse,
    first: AllocationConstraint,
    second: AllocationConstraint,
    seed: u64,
}

impl ConstraintConfig {
    pub fn new(
        universe: AssetUniverse,
        first: AllocationConstraint,
        second: AllocationConstraint,
        seed: u64,
    ) -> Result<Self> {
        let first = normalize_constraint(&first, &universe)?;
        let second = normalize_constraint(&second, &universe)?;
        Ok(Self {
            universe,
            first,
            second,
            seed,
        })
    }

    /// Shorthand for two greater-equal constraints.
    pub fn from_sets(
        universe: AssetUniverse,
        v1: impl IntoIterator<Item = usize>,
        c1: f64,
        v2: impl IntoIterator<Item = usize>,
        c2: f64,
    ) -> Result<Self> {
        Self::new(
            universe,
            AllocationConstraint::at_least(v1, c1)?,
            AllocationConstraint::at_least(v2, c2)?,
            0,
        )
    }

    pub fn universe(&self) -> &AssetUniverse {
        &self.universe
    }

    pub fn n_assets(&self) -> usize {
        self.universe.n_assets()
    }

    pub fn first(&self) -> &AllocationConstraint {
        &self.first
    }

    pub fn second(&self) -> &AllocationConstraint {
        &self.second
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `V1 ∩ V2`, sorted.
    pub fn intersection(&self) -> Vec<usize> {
        self.first
            .assets
            .iter()
            .copied()
            .filter(|&i| self.second.contains(i))
            .collect()
    }

    pub fn to_h_polytope(&self) -> HPolytope {
        let n = self.n_assets();
        let mut a_matrix = Vec::with_capacity(n + 2);
        let mut b_vector = Vec::with_capacity(n + 2);
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            a_matrix.push(row);
            b_vector.push(0.0);
        }
        for c in [&self.first, &self.second] {
            let mut row = vec![0.0; n];
            for &i in &c.assets {
                row[i] = 1.0;
            }
            a_matrix.push(row);
            b_vector.push(c.threshold);
        }
        HPolytope {
            dim: n,
            a_matrix,
            b_vector,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigDocument {
    universe: Vec<String>,
    v1: Vec<usize>,
    c1: f64,
    v2: Vec<usize>,
    c2: f64,
    seed: u64,
}

impl TryFrom<ConfigDocument> for ConstraintConfig {
    type Error = CoreError;

    fn try_from(doc: ConfigDocument) -> Result<Self> {
        let universe = AssetUniverse::new(doc.universe)?;
        let cfg = Self::new(
            universe,
            AllocationConstraint::at_least(doc.v1, doc.c1)?,
            AllocationConstraint::at_least(doc.v2, doc.c2)?,
            doc.seed,
        )?;
        Ok(cfg)
    }
}

impl From<ConstraintConfig> for ConfigDocument {
    fn from(cfg: ConstraintConfig) -> Self {
        ConfigDocument {
            universe: cfg.universe.labels,
            v1: cfg.first.assets,
            c1: cfg.first.threshold,
            v2: cfg.second.assets,
            c2: cfg.second.threshold,
            seed: cfg.seed,
        }
    }
}

/// Half-space representation `A·x ≥ b` plus the implicit simplex equality `Σx = 1`.
///
/// The first `dim` rows are always the nonnegativity rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    dim: usize,
    a_matrix: Vec<Vec<f64>>,
    b_vector: Vec<f64>,
}

impl HPolytope {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.a_matrix.len()
    }

    pub fn a_matrix(&self) -> &[Vec<f64>] {
        &self.a_matrix
    }

    pub fn b_vector(&self) -> &[f64] {
        &self.b_vector
    }

    /// Coefficients of the equality row; always all ones.
    pub fn equality_row(&self) -> Vec<f64> {
        vec![1.0; self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.a_matrix
            .iter()
            .map(Vec::as_slice)
            .zip(self.b_vector.iter().copied())
    }

    /// Largest violation over all inequality rows and the equality row.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = (x.iter().sum::<f64>() - 1.0).abs();
        self.rows().map(|(a, b)| b - dot(a, x)).fold(eq, f64::max)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim && x.iter().all(|v| v.is_finite()) && self.max_violation(x) <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Chebyshev center when feasible.
    pub point: Option<Vec<f64>>,
    /// Radius of the largest ball inside the polytope within the `Σx = 1` slice.
    pub radius: f64,
}

impl Feasibility {
    /// Feasible with a nonempty relative interior. Configs where this is false
    /// but `feasible` holds sit on a measure-zero face.
    pub fn has_interior(&self) -> bool {
        self.feasible && self.radius > INTERIOR_RADIUS_TOL
    }
}

pub fn is_feasible(cfg: &ConstraintConfig) -> Feasibility {
    match lp::chebyshev_center(&cfg.to_h_polytope()) {
        Some(c) => Feasibility {
            feasible: true,
            point: Some(c.center),
            radius: c.radius,
        },
        None => Feasibility {
            feasible: false,
            point: None,
            radius: 0.0,
        },
    }
}

/// Draws a random two-constraint task: `|V_j| ~ U{1..N−1}`, `V_j` without
/// replacement, `c_j ~ U[0,1]`, resampling the whole config until feasible.
pub fn generate_random_config(
    universe: &AssetUniverse,
    seed: u64,
    max_attempts: usize,
) -> Result<ConstraintConfig> {
    let n = universe.n_assets();
    if n < 3 {
        return Err(CoreError::InvalidUniverse(format!(
            "random generation needs at least 3 assets, got {n}"
        )));
    }
    if max_attempts == 0 {
        return Err(CoreError::NoFeasibleConfiguration { attempts: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let first = random_constraint(&mut rng, n)?;
        let second = random_constraint(&mut rng, n)?;
        let cfg = ConstraintConfig::new(universe.clone(), first, second, seed)?;
        if is_feasible(&cfg).feasible {
            return Ok(cfg);
        }
    }
    Err(CoreError::NoFeasibleConfiguration {
        attempts: max_attempts,
    })
}

fn random_constraint(rng: &mut impl Rng, n: usize) -> Result<AllocationConstraint> {
    let size = rng.gen_range(1..n);
    let assets = index::sample(rng, n, size).into_vec();
    let threshold: f64 = rng.gen();
    AllocationConstraint::at_least(assets, threshold)
}
