//! Precision-recall distributions over a shared k-means clustering and the
//! derived F-beta scores.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(center, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy k-means++ seeding: each new center is the best of a few
/// D^2-weighted candidates by total potential.
fn greedy_init(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, &[0x6b6d]);
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![points[r.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let potential: f64 = closest.iter().sum();
        if potential <= 0.0 {
            // every point coincides with a center; duplicate to keep k slots
            centers.push(centers[0].clone());
            continue;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let mut target = r.random::<f64>() * potential;
            let mut pick = n - 1;
            for (i, &c) in closest.iter().enumerate() {
                if target < c {
                    pick = i;
                    break;
                }
                target -= c;
            }
            let updated: Vec<f64> = points.iter().zip(&closest).map(|(p, &c)| c.min(sq_dist(p, &points[pick]))).collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| pot < *b) {
                best = Some((pot, pick, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        centers.push(points[pick].clone());
        closest = updated;
    }
    centers
}

/// Lloyd iterations from a seeded greedy initialization. Ties go to the lowest
/// center index; empty clusters keep their previous center.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::Empty("points to cluster".into()));
    }
    if k == 0 {
        return Err(invalid("cluster count must be >= 1"));
    }
    let d = points[0].len();
    let mut centers = greedy_init(points, k, seed);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
    for _ in 0..iterations {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(assign)
}

/// `(1 + beta^2) P R / (beta^2 P + R)`, zero when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// PRD curve of an evaluated histogram against a reference histogram, at
/// `num_angles` slopes spread over `(0, pi/2)`.
pub fn prd_curve(reference: &[f64], evaluated: &[f64], num_angles: usize) -> Result<Vec<(f64, f64)>> {
    if reference.len() != evaluated.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), actual: evaluated.len() });
    }
    if num_angles < 2 {
        return Err(invalid("need at least 2 slopes"));
    }
    let eps = 1e-10;
    let half_pi = std::f64::consts::FRAC_PI_2;
    Ok((0..num_angles)
        .map(|i| {
            let angle = eps + (half_pi - 2.0 * eps) * i as f64 / (num_angles - 1) as f64;
            let slope = angle.tan();
            let precision: f64 = reference.iter().zip(evaluated).map(|(r, e)| (slope * r).min(*e)).sum();
            let recall = precision / slope;
            (precision.clamp(0.0, 1.0), recall.clamp(0.0, 1.0))
        })
        .collect())
}

pub fn max_f_beta(curve: &[(f64, f64)], beta: f64) -> f64 {
    curve.iter().map(|&(p, r)| f_beta(p, r, beta)).fold(0.0, f64::max)
}

/// Normalized cluster histograms of the real and generated sets after
/// clustering their union.
pub fn cluster_histograms(real: &[Vec<f64>], gen: &[Vec<f64>], clusters: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if real.is_empty() || gen.is_empty() {
        return Err(Error::Empty("real or generated set".into()));
    }
    let union: Vec<Vec<f64>> = real.iter().chain(gen).cloned().collect();
    let assign = kmeans(&union, clusters, 50, seed)?;
    let mut hr = vec![0.0; clusters];
    let mut hg = vec![0.0; clusters];
    for (i, &a) in assign.iter().enumerate() {
        if i < real.len() {
            hr[a] += 1.0 / real.len() as f64;
        } else {
            hg[a] += 1.0 / gen.len() as f64;
        }
    }
    Ok((hr, hg))
}

/// `(F_beta for each requested beta)` from the PRD curve of `gen` against `real`.
pub fn prd_f_beta(real: &[Vec<f64>], gen: &[Vec<f64>], clusters: usize, betas: &[f64], seed: u64) -> Result<Vec<f64>> {
    let (hr, hg) = cluster_histograms(real, gen, clusters, seed)?;
    let curve = prd_curve(&hr, &hg, 1001)?;
    Ok(betas.iter().map(|&b| max_f_beta(&curve, b)).collect())
}
