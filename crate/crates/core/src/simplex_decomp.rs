//! Decomposition of the two-constraint action space into four padded standard
//! simplices combined by an adaptive weighted Minkowski sum.
//!
//! With `K1 = V1 ∩ V2`, `K2 = V1`, `K3 = V2`, `K4 = I` and weights
//!
//! ```text
//! z1 = max(0, c1 + c2 − 1)
//! z2 = max(0, c1 − z1)
//! z3 = max(0, c2 − z1 − z2·Σ_{i∈V1∩V2} ã2_i)
//! z4 = 1 − z1 − z2 − z3
//! ```
//!
//! every `a = Σ z_j·ã_j` with `ã_j ∈ PSS_{K_j}` lies in the constrained
//! polytope, and every point of the polytope has at least one such preimage.
//! [`Decomposition::compose`] is the forward map, [`Decomposition::decompose`]
//! constructs a preimage.

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::constraints::{is_feasible, ConstraintConfig};
use crate::error::{CoreError, Result};
use crate::numeric::exact_sum;

/// Sub-action entries below this are treated as sampler noise and zeroed.
pub const DENORMAL_CLAMP: f64 = 1e-15;

/// Tolerance on `Σ = 1` when validating externally supplied vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Maximum composition error accepted from [`Decomposition::decompose`].
pub const ROUNDTRIP_TOL: f64 = 1e-6;

/// A standard simplex over `support ⊆ {0..dim−1}`, zero-padded to `dim` entries.
/// An empty support denotes the single zero vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedSimplex {
    support: Vec<usize>,
    dim: usize,
}

impl PaddedSimplex {
    pub fn new(support: impl IntoIterator<Item = usize>, dim: usize) -> Result<Self> {
        let mut support: Vec<usize> = support.into_iter().collect();
        support.sort_unstable();
        support.dedup();
        if let Some(&bad) = support.iter().find(|&&i| i >= dim) {
            return Err(CoreError::InvalidSubAction(format!(
                "support index {bad} outside dimension {dim}"
            )));
        }
        Ok(Self { support, dim })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of free coordinates `|K|`.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `|K| ≤ 1`: the simplex is a single point.
    pub fn is_degenerate(&self) -> bool {
        self.support.len() <= 1
    }

    pub fn contains(&self, i: usize) -> bool {
        self.support.binary_search(&i).is_ok()
    }

    /// Pads a `|K|`-vector on the local simplex into a [`SubAction`].
    pub fn embed(&self, local: &[f64]) -> Result<SubAction> {
        if local.len() != self.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.len(),
                got: local.len(),
            });
        }
        let mut values = vec![0.0; self.dim];
        for (&i, &v) in self.support.iter().zip(local) {
            values[i] = v;
        }
        SubAction::new(self.clone(), values)
    }

    /// Gathers the `|K|` supported coordinates of a padded vector.
    pub fn restrict(&self, padded: &[f64]) -> Vec<f64> {
        self.support.iter().map(|&i| padded[i]).collect()
    }

    /// Barycenter of the simplex (zero vector when the support is empty).
    pub fn barycenter(&self) -> SubAction {
        let w = 1.0 / self.len().max(1) as f64;
        let mut values = vec![0.0; self.dim];
        for &i in &self.support {
            values[i] = w;
        }
        SubAction {
            spec: self.clone(),
            values,
        }
    }

    /// Draws from `Dir(alpha)` on the support.
    ///
    /// Gamma variates are combined in log space (`G(α+1)·U^{1/α}`) so that
    /// small concentrations do not underflow every coordinate to zero.
    /// Degenerate simplices return their single point without consuming
    /// randomness.
    pub fn sample_dirichlet<R: Rng + ?Sized>(
        &self,
        alpha: &[f64],
        rng: &mut R,
    ) -> Result<SubAction> {
        if alpha.len() != self.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.len(),
                got: alpha.len(),
            });
        }
        if self.is_degenerate() {
            return self.embed(&vec![1.0; self.len()]);
        }
        let log_g: Vec<f64> = alpha
            .iter()
            .map(|&a| {
                let g = Gamma::new(a + 1.0, 1.0)
                    .map_err(|e| CoreError::InvalidSubAction(format!("concentration {a}: {e}")))?
                    .sample(rng);
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                Ok(g.ln() + u.ln() / a)
            })
            .collect::<Result<_>>()?;
        let max = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = log_g.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let local: Vec<f64> = exp.iter().map(|e| e / total).collect();
        self.embed(&local)
    }
}

/// A point `ã ∈ PSS_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubAction {
    spec: PaddedSimplex,
    values: Vec<f64>,
}

impl SubAction {
    /// Validates `values` against `spec`, zeroes entries below
    /// [`DENORMAL_CLAMP`] and renormalizes.
    pub fn new(spec: PaddedSimplex, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.dim {
            return Err(CoreError::DimensionMismatch {
                expected: spec.dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidSubAction("non-finite entry".into()));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if !spec.contains(i) {
                if v.abs() > SIMPLEX_TOL {
                    return Err(CoreError::InvalidSubAction(format!(
                        "mass {v} outside the support at index {i}"
                    )));
                }
                *v = 0.0;
            } else if *v < -SIMPLEX_TOL {
                return Err(CoreError::InvalidSubAction(format!(
                    "negative entry {v} at index {i}"
                )));
            } else if *v < DENORMAL_CLAMP {
                *v = 0.0;
            }
        }
        if spec.is_empty() {
            return Ok(Self { spec, values });
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(CoreError::InvalidSubAction(format!(
                "entries sum to {total}, not 1"
            )));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &PaddedSimplex {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mass on a subset of coordinates.
    pub fn mass_on(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.values[i]).sum()
    }
}

/// The four sub-actions `(ã1, ã2, ã3, ã4)`.
pub type SurrogateAction = [SubAction; 4];

/// A portfolio allocation on the standard simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation {
    values: Vec<f64>,
}

impl Allocation {
    /// Requires finite, nonnegative (to `SIMPLEX_TOL`) entries summing to 1 within `SIMPLEX_TOL`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) {
            return Err(CoreError::NotInActionSpace {
                violation: values.iter().map(|v| -v).fold(f64::NAN, f64::max),
            });
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(CoreError::NotInActionSpace {
                violation: (total - 1.0).abs(),
            });
        }
        Ok(Self { values })
    }

    pub fn unit(n: usize, k: usize) -> Self {
        let mut values = vec![0.0; n];
        values[k] = 1.0;
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector {
    z: [f64; 4],
}

impl WeightVector {
    pub fn as_array(&self) -> [f64; 4] {
        self.z
    }

    pub fn get(&self, j: usize) -> f64 {
        self.z[j]
    }

    pub fn sum(&self) -> f64 {
        self.z.iter().sum()
    }
}

/// The four summand index sets of a feasible config.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    specs: [PaddedSimplex; 4],
    config: ConstraintConfig,
    intersection: Vec<usize>,
}

pub fn build_decomposition(cfg: &ConstraintConfig) -> Result<Decomposition> {
    if !is_feasible(cfg).feasible {
        return Err(CoreError::InfeasibleConfiguration);
    }
    let n = cfg.n_assets();
    let intersection = cfg.intersection();
    let specs = [
        PaddedSimplex::new(intersection.iter().copied(), n)?,
        PaddedSimplex::new(cfg.first().assets().iter().copied(), n)?,
        PaddedSimplex::new(cfg.second().assets().iter().copied(), n)?,
        PaddedSimplex::new(0..n, n)?,
    ];
    Ok(Decomposition {
        specs,
        config: cfg.clone(),
        intersection,
    })
}

/// Weights for a realized `(ã1, ã2)`; see [`Decomposition::weights`].
pub fn compute_weights(
    cfg: &ConstraintConfig,
    sub1: &SubAction,
    sub2: &SubAction,
) -> Result<WeightVector> {
    build_decomposition(cfg)?.weights(sub1, sub2)
}

/// Composes four sub-actions into an allocation of `cfg`'s action space.
pub fn compose(cfg: &ConstraintConfig, subs: &SurrogateAction) -> Result<Allocation> {
    Ok(build_decomposition(cfg)?.compose(subs)?.0)
}

/// Row-by-row evaluation of the config's H-representation.
pub fn membership(cfg: &ConstraintConfig, a: &[f64], tol: f64) -> bool {
    cfg.to_h_polytope().contains(a, tol)
}

impl Decomposition {
    pub fn specs(&self) -> &[PaddedSimplex; 4] {
        &self.specs
    }

    pub fn spec(&self, j: usize) -> &PaddedSimplex {
        &self.specs[j]
    }

    pub fn config(&self) -> &ConstraintConfig {
        &self.config
    }

    pub fn n_assets(&self) -> usize {
        self.config.n_assets()
    }

    /// `V1 ∩ V2` (equal to `K1`).
    pub fn intersection(&self) -> &[usize] {
        &self.intersection
    }

    /// Starts an Algorithm-1 style composition; sub-actions are pushed in order 1→4.
    pub fn composer(&self) -> Composer<'_> {
        Composer {
            decomp: self,
            stage: 0,
            shared: [0.0; 2],
            z: [0.0; 4],
            acc: vec![0.0; self.n_assets()],
        }
    }

    pub fn weights(&self, sub1: &SubAction, sub2: &SubAction) -> Result<WeightVector> {
        let mut c = self.composer();
        c.push(sub1)?;
        c.push(sub2)?;
        let z3 = c.next_weight();
        let z = [c.z[0], c.z[1], z3, remainder(c.z[0], c.z[1], z3)];
        Ok(WeightVector { z })
    }

    pub fn compose(&self, subs: &SurrogateAction) -> Result<(Allocation, WeightVector)> {
        let mut c = self.composer();
        for s in subs {
            c.push(s)?;
        }
        c.finish()
    }

    pub fn membership(&self, a: &[f64], tol: f64) -> bool {
        membership(&self.config, a, tol)
    }

    /// Finds sub-actions with `compose(subs) = a`.
    ///
    /// `z1` and `z2` are constants of the config, so only the `max` inside
    /// `z3` depends on the unknowns. Each branch of that `max` is a linear
    /// feasibility problem in the unnormalized summands `u_j = z_j·ã_j`:
    ///
    /// * `z3 = 0`: `u3 = 0` and `Σ_{V1∩V2} u2 ≥ c2 − z1`;
    /// * `z3 > 0`: `Σ u3 + Σ_{V1∩V2} u2 = c2 − z1`.
    ///
    /// Both are solved with an L1 residual on `Σ_j u_j = a` so that points on
    /// the boundary (within tolerance) are still resolved; the first branch
    /// with a negligible residual wins. The preimage is not unique.
    pub fn decompose(&self, a: &Allocation) -> Result<(SurrogateAction, WeightVector)> {
        let n = self.n_assets();
        if a.len() != n {
            return Err(CoreError::DimensionMismatch {
                expected: n,
                got: a.len(),
            });
        }
        let poly = self.config.to_h_polytope();
        let violation = poly.max_violation(a.values());
        if violation > SIMPLEX_TOL {
            return Err(CoreError::NotInActionSpace { violation });
        }

        let mut best: Option<(f64, SurrogateAction, WeightVector)> = None;
        for positive_z3 in [false, true] {
            let Some(units) = self.solve_preimage(a.values(), positive_z3) else {
                continue;
            };
            let subs = self.normalize_units(units)?;
            let (composed, z) = self.compose(&subs)?;
            let err = composed
                .values()
                .iter()
                .zip(a.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if err <= SIMPLEX_TOL {
                return Ok((subs, z));
            }
            if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
                best = Some((err, subs, z));
            }
        }
        match best {
            Some((err, subs, z)) if err <= ROUNDTRIP_TOL => Ok((subs, z)),
            Some((err, _, _)) => Err(CoreError::NotInActionSpace { violation: err }),
            None => Err(CoreError::Solver(
                "no preimage branch could be solved".into(),
            )),
        }
    }

    fn solve_preimage(&self, a: &[f64], positive_z3: bool) -> Option<[Vec<f64>; 4]> {
        let n = self.n_assets();
        let c2 = self.config.second().threshold();
        let z1 = first_weight(&self.config);
        let z2 = second_weight(&self.config, z1);

        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let mut vars: [Vec<(usize, Variable)>; 4] = Default::default();
        for (j, spec) in self.specs.iter().enumerate() {
            if j == 2 && !positive_z3 {
                continue;
            }
            vars[j] = spec
                .support()
                .iter()
                .map(|&i| (i, problem.add_var(0.0, (0.0, 1.0))))
                .collect();
        }

        for (j, z) in [(0, z1), (1, z2)] {
            if vars[j].is_empty() {
                if z > 0.0 {
                    return None;
                }
                continue;
            }
            problem.add_constraint(vars[j].iter().map(|&(_, v)| (v, 1.0)), ComparisonOp::Eq, z);
        }

        let shared: Vec<(Variable, f64)> = vars[1]
            .iter()
            .filter(|(i, _)| self.intersection.binary_search(i).is_ok())
            .map(|&(_, v)| (v, 1.0))
            .collect();
        let rhs = exact_sum(&[c2, -z1]);
        if positive_z3 {
            let expr: Vec<_> = shared
                .iter()
                .copied()
                .chain(vars[2].iter().map(|&(_, v)| (v, 1.0)))
                .collect();
            problem.add_constraint(expr, ComparisonOp::Eq, rhs);
        } else if shared.is_empty() {
            if rhs > 0.0 {
                return None;
            }
        } else {
            problem.add_constraint(shared, ComparisonOp::Ge, rhs);
        }

        for (i, &target) in a.iter().enumerate() {
            let over = problem.add_var(1.0, (0.0, f64::INFINITY));
            let under = problem.add_var(1.0, (0.0, f64::INFINITY));
            let mut expr: Vec<(Variable, f64)> = vec![(over, 1.0), (under, -1.0)];
            for summand in &vars {
                if let Ok(k) = summand.binary_search_by_key(&i, |&(idx, _)| idx) {
                    expr.push((summand[k].1, 1.0));
                }
            }
            problem.add_constraint(expr, ComparisonOp::Eq, target);
        }

        let solution = problem.solve().ok()?;
        let mut units: [Vec<f64>; 4] = Default::default();
        for (j, summand) in vars.iter().enumerate() {
            let mut u = vec![0.0; n];
            for &(i, v) in summand {
                u[i] = solution[v].max(0.0);
            }
            units[j] = u;
        }
        Some(units)
    }

    fn normalize_units(&self, units: [Vec<f64>; 4]) -> Result<SurrogateAction> {
        let mut out: Vec<SubAction> = Vec::with_capacity(4);
        for (spec, u) in self.specs.iter().zip(units) {
            let total: f64 = u.iter().sum();
            if spec.is_empty() || total <= 1e-12 {
                out.push(spec.barycenter());
            } else {
                let values = u.iter().map(|v| v / total).collect();
                out.push(SubAction::new(spec.clone(), values)?);
            }
        }
        Ok(out.try_into().expect("four summands"))
    }
}

/// Incremental weight schedule: push `ã1 .. ã4` in order, each push returns the
/// weight applied to that sub-action.
#[derive(Debug)]
pub struct Composer<'a> {
    decomp: &'a Decomposition,
    stage: usize,
    /// Contributions `z1·Σ∩ã1` and `z2·Σ∩ã2` to `V1 ∩ V2`.
    shared: [f64; 2],
    z: [f64; 4],
    acc: Vec<f64>,
}

impl Composer<'_> {
    /// Index (0-based) of the next sub-action expected.
    pub fn stage(&self) -> usize {
        self.stage
    }

    /// Weight the next pushed sub-action will receive.
    pub fn next_weight(&self) -> f64 {
        let cfg = &self.decomp.config;
        match self.stage {
            0 => first_weight(cfg),
            1 => second_weight(cfg, self.z[0]),
            2 => exact_sum(&[cfg.second().threshold(), -self.shared[0], -self.shared[1]]).max(0.0),
            _ => remainder(self.z[0], self.z[1], self.z[2]),
        }
    }

    pub fn push(&mut self, sub: &SubAction) -> Result<f64> {
        if self.stage >= 4 {
            return Err(CoreError::InvalidSubAction(
                "more than four sub-actions".into(),
            ));
        }
        let spec = &self.decomp.specs[self.stage];
        if sub.spec() != spec {
            return Err(CoreError::InvalidSubAction(format!(
                "sub-action {} has support {:?}, expected {:?}",
                self.stage + 1,
                sub.spec().support(),
                spec.support()
            )));
        }
        let z = self.next_weight();
        if self.stage < 2 {
            self.shared[self.stage] = z * sub.mass_on(&self.decomp.intersection);
        }
        for (acc, v) in self.acc.iter_mut().zip(sub.values()) {
            *acc += z * v;
        }
        self.z[self.stage] = z;
        self.stage += 1;
        Ok(z)
    }

    pub fn finish(self) -> Result<(Allocation, WeightVector)> {
        if self.stage != 4 {
            return Err(CoreError::InvalidSubAction(format!(
                "composition needs four sub-actions, got {}",
                self.stage
            )));
        }
        let a = Allocation::new(self.acc)?;
        Ok((a, WeightVector { z: self.z }))
    }
}

fn first_weight(cfg: &ConstraintConfig) -> f64 {
    exact_sum(&[cfg.first().threshold(), cfg.second().threshold(), -1.0]).max(0.0)
}

fn second_weight(cfg: &ConstraintConfig, z1: f64) -> f64 {
    exact_sum(&[cfg.first().threshold(), -z1]).max(0.0)
}

fn remainder(z1: f64, z2: f64, z3: f64) -> f64 {
    exact_sum(&[1.0, -z1, -z2, -z3]).max(0.0)
}
