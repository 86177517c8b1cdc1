//! Chebyshev-center LP over an [`HPolytope`] restricted to the `Σx = 1` slice.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::constraints::HPolytope;
use crate::numeric::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevCenter {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Maximizes `r` subject to `a_i·x − r·‖P a_i‖ ≥ b_i` and `Σx = 1`, where `P`
/// projects onto the tangent space of the simplex slice. Returns `None` when
/// the polytope is empty.
///
/// Rows whose projection vanishes (e.g. a constraint over every asset) are
/// constant on the slice and enter without a radius term.
pub fn chebyshev_center(poly: &HPolytope) -> Option<ChebyshevCenter> {
    let n = poly.dim();
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let x: Vec<_> = (0..n).map(|_| problem.add_var(0.0, (0.0, 1.0))).collect();
    let r = problem.add_var(1.0, (0.0, 1.0));

    for (a, b) in poly.rows() {
        let mean = a.iter().sum::<f64>() / n as f64;
        let norm = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
        let mut expr: Vec<_> = x
            .iter()
            .zip(a)
            .filter(|(_, &c)| c != 0.0)
            .map(|(&v, &c)| (v, c))
            .collect();
        if norm > 1e-12 {
            expr.push((r, -norm));
        }
        if expr.is_empty() {
            // 0 ≥ b
            if b > 0.0 {
                return None;
            }
            continue;
        }
        problem.add_constraint(expr, ComparisonOp::Ge, b);
    }
    problem.add_constraint(x.iter().map(|&v| (v, 1.0)), ComparisonOp::Eq, 1.0);

    let solution = problem.solve().ok()?;
    let mut center: Vec<f64> = x.iter().map(|&v| solution[v].max(0.0)).collect();
    let total: f64 = center.iter().sum();
    center.iter_mut().for_each(|v| *v /= total);
    let radius = solution[r].max(0.0);

    // the LP tolerates tiny violations; report the radius the rounded point actually has
    let radius = poly
        .rows()
        .map(|(a, b)| {
            let mean = a.iter().sum::<f64>() / n as f64;
            let norm = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            if norm > 1e-12 {
                (dot(a, &center) - b) / norm
            } else {
                f64::INFINITY
            }
        })
        .fold(radius, f64::min)
        .max(0.0);
    Some(ChebyshevCenter { center, radius })
}
