use super::Rng;
use crate::{Error, Result};

/// Probability floor used before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// `softmax(logits / temperature)`, computed after max-subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::Input("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("softmax logits must be finite".into()));
    }
    Ok(softmax_unchecked(logits, temperature))
}

pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Gradient of a scalar with respect to `logits` given its gradient with
/// respect to `soft = softmax(logits / temperature)`.
pub fn softmax_backward(soft: &[f64], upstream: &[f64], temperature: f64) -> Vec<f64> {
    let dot: f64 = soft.iter().zip(upstream).map(|(s, g)| s * g).sum();
    soft.iter()
        .zip(upstream)
        .map(|(s, g)| s * (g - dot) / temperature)
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// `-ln p[target]` with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(target: &[f64], prediction: &[f64]) -> Result<f64> {
    if target.len() != prediction.len() {
        return Err(Error::Shape(format!(
            "target length {} vs prediction length {}",
            target.len(),
            prediction.len()
        )));
    }
    let ones = target.iter().filter(|v| **v == 1.0).count();
    let zeros = target.iter().filter(|v| **v == 0.0).count();
    if ones != 1 || ones + zeros != target.len() {
        return Err(Error::Input("cross-entropy target is not one-hot".into()));
    }
    Ok(cross_entropy_index(argmax(target), prediction))
}

pub fn cross_entropy_index(class: usize, prediction: &[f64]) -> f64 {
    -prediction[class].max(PROB_FLOOR).ln()
}

/// Cross-entropy against an arbitrary target distribution.
pub fn soft_cross_entropy(target: &[f64], prediction: &[f64]) -> f64 {
    target
        .iter()
        .zip(prediction)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| -t * p.max(PROB_FLOOR).ln())
        .sum()
}

/// A relaxed categorical draw together with its discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub soft: Vec<f64>,
    pub hard: Vec<f64>,
    pub index: usize,
    pub noise: Vec<f64>,
}

/// Gumbel-Softmax draw: `soft = softmax((logits + g) / τ)` and `hard` the
/// one-hot argmax of `soft`.
///
/// Consumers that need gradients treat `hard` as `hard - stop(soft) + soft`,
/// i.e. they use the hard value forward and route the gradient into `soft`
/// (see [`softmax_backward`]). This straight-through path is the only
/// supported gradient for discrete selection.
pub fn gumbel_softmax_sample(logits: &[f64], temperature: f64, rng: &mut Rng) -> Result<GumbelSample> {
    let noise: Vec<f64> = logits.iter().map(|_| rng.gumbel()).collect();
    gumbel_softmax_with_noise(logits, &noise, temperature)
}

/// Same as [`gumbel_softmax_sample`] with caller-supplied Gumbel noise.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], temperature: f64) -> Result<GumbelSample> {
    if noise.len() != logits.len() {
        return Err(Error::Shape("noise length differs from logits".into()));
    }
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| l + g).collect();
    let soft = softmax(&perturbed, temperature)?;
    let index = argmax(&soft);
    Ok(GumbelSample {
        hard: one_hot(index, soft.len()),
        soft,
        index,
        noise: noise.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|v| close(*v, 1.0 / 3.0, 1e-15)));

        let p = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!(close(p[0], 2.0 / 3.0, 1e-15));
        assert!(close(p[1], 1.0 / 3.0, 1e-15));

        let p = softmax(&[1000.0, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(close(p[0], 1.0, 1e-300));
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(softmax(&[1.0], -2.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let ce = cross_entropy(&[1.0, 0.0, 0.0], &[0.5, 0.25, 0.25]).unwrap();
        assert!(close(ce, 0.693_147_180_559_945_3, 1e-12));
        let ce = cross_entropy(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(ce.is_finite() && ce <= -(1e-12f64).ln() + 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_non_one_hot() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], &[0.5, 0.5]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn low_temperature_gumbel_is_nearly_discrete() {
        // At τ = 0.01 the top-two perturbed gap falls below τ·ln 99 in ~2-3% of
        // draws, so the 99% bound needs τ one decade lower.
        let mut rng = Rng::seeded(5);
        let logits = [0.3, -1.2, 0.8, 0.0];
        let sharp = (0..10_000)
            .filter(|_| {
                let s = gumbel_softmax_sample(&logits, 0.001, &mut rng).unwrap();
                s.soft.iter().copied().fold(0.0, f64::max) > 0.99
            })
            .count();
        assert!(sharp as f64 >= 0.99 * 10_000.0, "{sharp}");
    }

    #[test]
    fn gumbel_max_frequencies() {
        for (logits, expect) in [([0.0, 0.0], 0.5), ([3f64.ln(), 0.0], 0.75)] {
            let mut rng = Rng::seeded(17);
            let n = 100_000;
            let hits = (0..n)
                .filter(|_| gumbel_softmax_sample(&logits, 1.0, &mut rng).unwrap().index == 0)
                .count();
            let freq = hits as f64 / n as f64;
            assert!((freq - expect).abs() <= 0.01, "{logits:?}: {freq}");
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = [0.4, -0.3, 1.1];
        let upstream = [0.7, -1.3, 0.2];
        let tau = 2.5;
        let f = |l: &[f64]| -> f64 {
            softmax(l, tau)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        let soft = softmax(&logits, tau).unwrap();
        let analytic = softmax_backward(&soft, &upstream, tau);
        for i in 0..3 {
            let mut up = logits;
            let mut dn = logits;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!(close(fd, analytic[i], 1e-8), "{i}: {fd} vs {}", analytic[i]);
        }
    }
}
