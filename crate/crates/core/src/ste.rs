//! Straight-through plane assignment: hard one-hot forward, tempered softmax
//! backward.

pub const DEFAULT_TEMPERATURE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct SteAssignment {
    pub hard: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn ste_assign(logits: &[f64], temperature: f64) -> SteAssignment {
    assert!(!logits.is_empty(), "at least one plane is required");
    assert!(temperature > 0.0, "temperature must be positive");
    let mut hard = vec![0.0; logits.len()];
    hard[argmax(logits)] = 1.0;
    SteAssignment { hard, weights: softmax(logits, temperature) }
}

/// Hard assignments for every row of an `N x L` logit array.
pub fn hard_assignments(plane_logits: &[f64], planes: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane_logits.len()];
    for (row, dst) in plane_logits.chunks_exact(planes).zip(out.chunks_exact_mut(planes)) {
        dst[argmax(row)] = 1.0;
    }
    out
}

/// Maps `∂L/∂ρ` to `∂L/∂ρ'` by elementwise scaling with the tempered
/// softmax. With a single plane the assignment is constant and the logits
/// receive no gradient.
pub fn ste_backward(plane_logits: &[f64], grad_rho: &[f64], planes: usize, temperature: f64) -> Vec<f64> {
    if planes == 1 {
        return vec![0.0; grad_rho.len()];
    }
    let mut out = vec![0.0; grad_rho.len()];
    for ((row, g), dst) in
        plane_logits.chunks_exact(planes).zip(grad_rho.chunks_exact(planes)).zip(out.chunks_exact_mut(planes))
    {
        for ((d, gi), wi) in dst.iter_mut().zip(g).zip(softmax(row, temperature)) {
            *d = gi * wi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(ste_assign(&[0.2, 0.9, 0.1], DEFAULT_TEMPERATURE).hard, vec![0.0, 1.0, 0.0]);
        assert_eq!(ste_assign(&[-3.0], DEFAULT_TEMPERATURE).hard, vec![1.0]);
        let tie = ste_assign(&[0.0, 0.0], DEFAULT_TEMPERATURE);
        assert_eq!(tie.hard, vec![1.0, 0.0]);
        assert_eq!(tie.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn saturated_weights_with_a_clear_gap() {
        let w = softmax(&[0.3, 0.2], DEFAULT_TEMPERATURE);
        // exp(-100) ≈ 3.7e-44
        assert!(w[1] < 1e-20);
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn backward_scales_upstream_elementwise() {
        let logits = [0.0, 0.0005, 0.0001, 0.0];
        let out = ste_backward(&logits, &[1.0, 2.0, 3.0, 4.0], 2, DEFAULT_TEMPERATURE);
        let s0 = softmax(&logits[..2], DEFAULT_TEMPERATURE);
        let s1 = softmax(&logits[2..], DEFAULT_TEMPERATURE);
        let expected = [s0[0], 2.0 * s0[1], 3.0 * s1[0], 4.0 * s1[1]];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(ste_backward(&[1.0, 2.0], &[3.0, 4.0], 1, DEFAULT_TEMPERATURE), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn forward_is_one_hot_and_weights_sum_to_one(logits in proptest::collection::vec(-1.0f64..1.0, 1..8)) {
            let a = ste_assign(&logits, DEFAULT_TEMPERATURE);
            prop_assert_eq!(a.hard.iter().filter(|v| **v == 1.0).count(), 1);
            prop_assert!(a.hard.iter().all(|v| *v == 0.0 || *v == 1.0));
            prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(a.hard[argmax(&logits)], 1.0);
        }
    }
}
