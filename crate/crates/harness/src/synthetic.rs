//! Hand-specified market models for experiments without price data.

use caosd_market::{MarketModel, Result};

/// A persistent bull/bear model over cash plus `n_assets − 1` risky assets.
///
/// Asset `i ≥ 1` has a bull mean of `0.03 − 0.01·(i−1)` and a bear mean of
/// `−0.01 + 0.005·(i−1)`, so long-run means fall with the index while the
/// ordering flips between regimes. Both regimes persist with probability 0.9.
pub fn two_state_model(n_assets: usize) -> Result<MarketModel> {
    let risky = n_assets.saturating_sub(1);
    let mut labels = vec!["CASH".to_string()];
    labels.extend((1..=risky).map(|i| format!("A{i:02}")));
    let mean = |bull: bool| -> Vec<f64> {
        std::iter::once(0.0)
            .chain((0..risky).map(|k| {
                let k = k as f64;
                if bull {
                    0.03 - 0.01 * k
                } else {
                    -0.01 + 0.005 * k
                }
            }))
            .collect()
    };
    let cov = |sd: f64| -> Vec<Vec<f64>> {
        (0..n_assets)
            .map(|i| {
                (0..n_assets)
                    .map(|j| if i == j && i > 0 { sd * sd } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    MarketModel::new(
        labels,
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![mean(true), mean(false)],
        vec![cov(0.04), cov(0.06)],
        vec![0.5, 0.5],
    )
}
