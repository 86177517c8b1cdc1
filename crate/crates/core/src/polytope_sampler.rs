//! Hit-and-run sampling from the constrained action polytope.
//!
//! Directions are drawn isotropically in the tangent space of `Σx = 1`, the
//! chord through the current point is intersected exactly with every
//! half-space row, and the next point is uniform on that chord. The chain
//! starts at the Chebyshev center.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::constraints::{is_feasible, ConstraintConfig, HPolytope};
use crate::error::{CoreError, Result};
use crate::numeric::dot;
use crate::simplex_decomp::Allocation;

pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_THINNING: usize = 10;

/// `a·d` below this is treated as parallel to the row.
const PARALLEL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerOptions {
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    polytope: HPolytope,
    current_point: Vec<f64>,
    rng_seed: u64,
    rng: ChaCha8Rng,
    burn_in: usize,
    thinning: usize,
    burned_in: bool,
}

pub fn init_sampler(cfg: &ConstraintConfig, seed: u64) -> Result<SamplerState> {
    init_sampler_with(cfg, seed, SamplerOptions::default())
}

pub fn init_sampler_with(
    cfg: &ConstraintConfig,
    seed: u64,
    options: SamplerOptions,
) -> Result<SamplerState> {
    let feasibility = is_feasible(cfg);
    if !feasibility.feasible {
        return Err(CoreError::InfeasibleConfiguration);
    }
    if !feasibility.has_interior() {
        return Err(CoreError::DegeneratePolytope {
            radius: feasibility.radius,
        });
    }
    let start = feasibility
        .point
        .expect("feasible configs carry a certificate");
    Ok(SamplerState {
        polytope: cfg.to_h_polytope(),
        current_point: start,
        rng_seed: seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
        burn_in: options.burn_in,
        thinning: options.thinning.max(1),
        burned_in: false,
    })
}

impl SamplerState {
    pub fn current_point(&self) -> &[f64] {
        &self.current_point
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn thinning(&self) -> usize {
        self.thinning
    }

    /// `count` thinned samples; burn-in runs once before the first sample.
    pub fn sample(&mut self, count: usize) -> Vec<Allocation> {
        if !self.burned_in {
            for _ in 0..self.burn_in {
                self.step();
            }
            self.burned_in = true;
        }
        (0..count)
            .map(|_| {
                for _ in 0..self.thinning {
                    self.step();
                }
                Allocation::new(self.current_point.clone()).expect("chain stays on the simplex")
            })
            .collect()
    }

    /// One thinned sample.
    pub fn next_allocation(&mut self) -> Allocation {
        self.sample(1).pop().expect("one sample")
    }

    /// Unit direction in the `Σ = 0` tangent space.
    pub fn random_direction(&mut self) -> Vec<f64> {
        let n = self.current_point.len();
        loop {
            let mut d: Vec<f64> = (0..n)
                .map(|_| StandardNormal.sample(&mut self.rng))
                .collect();
            let mean = d.iter().sum::<f64>() / n as f64;
            d.iter_mut().for_each(|v| *v -= mean);
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                d.iter_mut().for_each(|v| *v /= norm);
                return d;
            }
        }
    }

    /// Feasible step interval `[lo, hi]` along `d` from the current point.
    pub fn chord(&self, d: &[f64]) -> (f64, f64) {
        let x = &self.current_point;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (a, b) in self.polytope.rows() {
            let slope = dot(a, d);
            if slope.abs() < PARALLEL_TOL {
                continue;
            }
            let slack = (dot(a, x) - b).max(0.0);
            let t = -slack / slope;
            if slope > 0.0 {
                lo = lo.max(t);
            } else {
                hi = hi.min(t);
            }
        }
        (lo.min(0.0), hi.max(0.0))
    }

    fn step(&mut self) {
        let d = self.random_direction();
        let (lo, hi) = self.chord(&d);
        let t = if hi > lo {
            Uniform::new_inclusive(lo, hi).sample(&mut self.rng)
        } else {
            0.0
        };
        let n = self.current_point.len() as f64;
        for (x, di) in self.current_point.iter_mut().zip(&d) {
            *x += t * di;
        }
        // pull accumulated rounding back onto the slice and the orthant
        let drift = (1.0 - self.current_point.iter().sum::<f64>()) / n;
        for x in self.current_point.iter_mut() {
            *x = (*x + drift).max(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::AssetUniverse;
    use crate::simplex_decomp::membership;

    fn cfg(n: usize, v1: &[usize], c1: f64, v2: &[usize], c2: f64) -> ConstraintConfig {
        ConstraintConfig::from_sets(
            AssetUniverse::anonymous(n).unwrap(),
            v1.iter().copied(),
            c1,
            v2.iter().copied(),
            c2,
        )
        .unwrap()
    }

    #[test]
    fn starts_at_chebyshev_center() {
        let s = init_sampler(&cfg(3, &[0], 0.0, &[1], 0.0), 1).unwrap();
        for v in s.current_point() {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
        let c = cfg(5, &[1, 3], 0.3, &[2, 4], 0.5);
        let s = init_sampler(&c, 1).unwrap();
        assert!(membership(&c, s.current_point(), 1e-9));
    }

    #[test]
    fn rejects_infeasible_and_degenerate() {
        assert_eq!(
            init_sampler(&cfg(4, &[0, 1], 0.6, &[2, 3], 0.7), 0).unwrap_err(),
            CoreError::InfeasibleConfiguration
        );
        assert!(matches!(
            init_sampler(&cfg(3, &[0], 1.0, &[1], 0.0), 0),
            Err(CoreError::DegeneratePolytope { .. })
        ));
    }

    #[test]
    fn directions_are_tangent() {
        let mut s = init_sampler(&cfg(6, &[0, 1], 0.3, &[2], 0.2), 3).unwrap();
        for _ in 0..1000 {
            let d = s.random_direction();
            assert!(d.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn samples_stay_inside() {
        let c = cfg(8, &[0, 1, 2], 0.6, &[2, 5], 0.35);
        let mut s = init_sampler(&c, 11).unwrap();
        for a in s.sample(2000) {
            assert!(membership(&c, a.values(), 1e-9));
        }
    }

    #[test]
    fn seeded_streams_repeat() {
        let c = cfg(4, &[0], 0.2, &[1, 2], 0.4);
        let a = init_sampler(&c, 5).unwrap().sample(50);
        let b = init_sampler(&c, 5).unwrap().sample(50);
        assert_eq!(a, b);
        let other = init_sampler(&c, 6).unwrap().sample(50);
        assert_ne!(a, other);
    }

    #[test]
    fn segment_mean() {
        let c = cfg(2, &[0], 0.5, &[0], 0.0);
        let mut s = init_sampler(&c, 9).unwrap();
        let xs = s.sample(20_000);
        let mean = xs.iter().map(|a| a.values()[0]).sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.75).abs() < 0.01, "{mean}");
    }
}
