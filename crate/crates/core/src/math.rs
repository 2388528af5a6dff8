use statrs::function::gamma::{digamma, ln_gamma};

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place softmax; returns the log normalizer.
pub(crate) fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let lse = logsumexp(xs);
    for x in xs.iter_mut() {
        *x = (*x - lse).exp();
    }
    lse
}

/// ln(1 + e^x) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry, first one on ties.
pub(crate) fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Log density of Beta(a, b) at `s` in (0, 1).
#[cfg(test)]
pub(crate) fn beta_ln_pdf(s: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * s.ln() + (b - 1.0) * (1.0 - s).ln() - ln_beta(a, b)
}

pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// d/dq of `beta_ln_pdf(s, c q, c (1 - q))`.
pub(crate) fn beta_ln_pdf_dq(s: f64, c: f64, q: f64) -> f64 {
    let a = c * q;
    let b = c * (1.0 - q);
    c * (s.ln() - (1.0 - s).ln() - digamma(a) + digamma(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logsumexp_matches_naive() {
        let xs = [0.1, -2.0, 3.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(logsumexp(&xs), naive, max_relative = 1e-14);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_relative_eq!(logsumexp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
    }

    #[test]
    fn softplus_is_stable() {
        assert_relative_eq!(softplus(0.0), 2f64.ln());
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_first(&[0.5, 0.5]), 0);
        assert_eq!(argmax_first(&[0.1, 0.9]), 1);
    }

    #[test]
    fn beta_density_integrates_to_one() {
        // midpoint rule on Beta(2.5, 7.5)
        let steps = 200_000;
        let h = 1.0 / steps as f64;
        let total: f64 = (0..steps)
            .map(|i| beta_ln_pdf((i as f64 + 0.5) * h, 2.5, 7.5).exp() * h)
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn beta_derivative_matches_finite_difference() {
        let (s, c, q) = (0.3, 10.0, 0.4);
        let h = 1e-6;
        let fd = (beta_ln_pdf(s, c * (q + h), c * (1.0 - q - h))
            - beta_ln_pdf(s, c * (q - h), c * (1.0 - q + h)))
            / (2.0 * h);
        assert_relative_eq!(beta_ln_pdf_dq(s, c, q), fd, max_relative = 1e-6);
    }
}
