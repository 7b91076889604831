//! k-nearest-neighbour manifold precision and recall.

use crate::error::{invalid, Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each point to its `k`-th nearest other point in the same set.
fn kth_radii(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(points.len());
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            buf.clear();
            buf.extend(points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| sq_dist(p, q)));
            let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `probe` points lying inside at least one `k`-NN ball of `support`.
fn coverage(support: &[Vec<f64>], radii: &[f64], probe: &[Vec<f64>]) -> f64 {
    let hits = probe
        .iter()
        .filter(|x| support.iter().zip(radii).any(|(s, &r)| sq_dist(x, s) <= r))
        .count();
    hits as f64 / probe.len() as f64
}

/// Precision: share of generated points inside the real manifold estimate.
/// Recall: share of real points inside the generated manifold estimate.
pub fn knn_precision_recall(real: &[Vec<f64>], gen: &[Vec<f64>], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(invalid("K must be >= 1"));
    }
    if real.len() <= k || gen.len() <= k {
        return Err(Error::Empty(format!("both sets need more than K = {k} points ({} real, {} generated)", real.len(), gen.len())));
    }
    let d = real[0].len();
    if let Some(x) = real.iter().chain(gen).find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
    }
    let precision = coverage(real, &kth_radii(real, k), gen);
    let recall = coverage(gen, &kth_radii(gen, k), real);
    Ok((precision, recall))
}
