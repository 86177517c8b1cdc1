//! Dense helpers for the small covariance matrices of the return model.

/// Lower-triangular factor `L` with `L Lᵀ = a` for a symmetric positive
/// semidefinite `a`. Zero pivots (within `tol` of the diagonal scale) give a
/// zero column. Returns `None` when `a` is not PSD.
pub(crate) fn cholesky_psd(a: &[Vec<f64>], tol: f64) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let scale = a
        .iter()
        .enumerate()
        .map(|(i, r)| r[i].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let eps = tol * scale;
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -eps {
            return None;
        }
        if d <= eps {
            for i in j + 1..n {
                let r = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if r.abs() > eps.sqrt() * scale.sqrt() {
                    return None;
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l[j][j] = ljj;
        for i in j + 1..n {
            let r = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = r / ljj;
        }
    }
    Some(l)
}

/// Strict Cholesky factor; `None` unless every pivot exceeds `min_pivot`.
pub(crate) fn cholesky_pd(a: &[Vec<f64>], min_pivot: f64) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if !(d > min_pivot) {
            return None;
        }
        let ljj = d.sqrt();
        l[j][j] = ljj;
        for i in j + 1..n {
            let r = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = r / ljj;
        }
    }
    Some(l)
}

/// Solves `L y = b` in place for lower-triangular `L` with nonzero diagonal.
pub(crate) fn forward_solve(l: &[Vec<f64>], b: &mut [f64]) {
    for i in 0..b.len() {
        let s = (0..i).map(|k| l[i][k] * b[k]).sum::<f64>();
        b[i] = (b[i] - s) / l[i][i];
    }
}

pub(crate) fn lower_mul(l: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    l.iter()
        .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}
