//! Class overlap of generated samples, judged by the Bayes classifier of the true mixture.

use crate::data::ToyMixtureSpec;
use crate::error::{Error, Result};

/// `O[c][c']`: fraction of samples generated under class `c` whose
/// maximum-posterior class under `mixture` is `c'` (ties to the lowest index).
pub fn overlap_rate(gen_per_class: &[Vec<Vec<f64>>], mixture: &ToyMixtureSpec) -> Result<Vec<Vec<f64>>> {
    mixture.validate()?;
    let k = mixture.num_classes();
    if gen_per_class.len() != k {
        return Err(Error::DimensionMismatch { expected: k, actual: gen_per_class.len() });
    }
    gen_per_class
        .iter()
        .enumerate()
        .map(|(c, samples)| {
            if samples.is_empty() {
                return Err(Error::EmptyClass(c));
            }
            let mut row = vec![0.0; k];
            for x in samples {
                if x.len() != mixture.dim() {
                    return Err(Error::DimensionMismatch { expected: mixture.dim(), actual: x.len() });
                }
                row[mixture.bayes_class(x)] += 1.0;
            }
            row.iter_mut().for_each(|v| *v /= samples.len() as f64);
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_gmm_dataset;

    fn erf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 is too coarse; integrate the density instead.
        let n = 20_000;
        let h = x / n as f64;
        let f = |u: f64| (-u * u).exp();
        let mut acc = f(0.0) + f(x);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
    }

    fn normal_cdf(z: f64) -> f64 {
        0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
    }

    // Two 1-D components at 0 and 2 with weights 0.9 / 0.1 and unit scale.
    // The Bayes boundary is at 1 + ln(9) / 2, so the tail's correct mass is
    // P(Z > boundary - 2) under the standard normal.
    #[test]
    fn true_samples_match_bayes_mass() {
        let spec = ToyMixtureSpec::new(vec![0.9, 0.1], vec![vec![0.0], vec![2.0]], vec![1.0, 1.0]).unwrap();
        let ds = generate_gmm_dataset(&spec, &[40_000, 40_000], 17).unwrap();
        let per_class = vec![ds.class_samples(0), ds.class_samples(1)];
        let o = overlap_rate(&per_class, &spec).unwrap();
        let boundary = 1.0 + 9f64.ln() / 2.0;
        let head_correct = normal_cdf(boundary);
        let tail_correct = 1.0 - normal_cdf(boundary - 2.0);
        // binomial standard errors are below 0.0025 at n = 40k
        assert!((o[0][0] - head_correct).abs() < 0.01, "{} vs {head_correct}", o[0][0]);
        assert!((o[1][1] - tail_correct).abs() < 0.01, "{} vs {tail_correct}", o[1][1]);
        for row in &o {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_components_resolve_to_lowest_index() {
        let spec = ToyMixtureSpec::new(vec![0.5, 0.5], vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).unwrap();
        let ds = generate_gmm_dataset(&spec, &[50, 50], 1).unwrap();
        let o = overlap_rate(&[ds.class_samples(0), ds.class_samples(1)], &spec).unwrap();
        assert_eq!(o, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn empty_class_rejected() {
        let spec = ToyMixtureSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(overlap_rate(&[vec![vec![0.0]], vec![]], &spec), Err(Error::EmptyClass(1)));
    }
}
