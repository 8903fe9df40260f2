//! Diagonal distance metric over ambient points `x = (λ, τ)`.
//!
//! The nine coordinates mix units (N·m, N, m), so every norm used by the
//! charts and planners is weighted: `‖x‖ = sqrt(x^T M x)` with a strictly
//! positive diagonal `M`.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

/// Ambient coordinates `(λ₁..λ₆, τ₁, τ₂, τ₃)`.
pub type AmbientVec = SVector<f64, 9>;

/// Diagonal metric matrix for ambient points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricM {
    pub weights: [f64; 9],
}

impl Default for MetricM {
    /// Robot-specific weighting for the reference robot, SI units.
    fn default() -> Self {
        MetricM {
            weights: [1e2, 1e2, 1e2, 0.8, 0.8, 0.8, 1.0, 1.0, 1e4],
        }
    }
}

impl MetricM {
    pub fn validate(&self) -> Result<(), String> {
        for (i, w) in self.weights.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(format!("metric weight {} must be positive, got {}", i, w));
            }
        }
        Ok(())
    }

    /// `sqrt(x^T M x)`.
    pub fn norm(&self, x: &AmbientVec) -> f64 {
        self.norm_squared(x).sqrt()
    }

    pub fn norm_squared(&self, x: &AmbientVec) -> f64 {
        x.iter()
            .zip(self.weights.iter())
            .map(|(xi, wi)| wi * xi * xi)
            .sum()
    }

    /// Metric distance between two ambient points.
    pub fn distance(&self, a: &AmbientVec, b: &AmbientVec) -> f64 {
        self.norm(&(a - b))
    }

    /// Distance restricted to the τ block (last three coordinates).
    pub fn distance_tau(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        (0..3)
            .map(|i| self.weights[6 + i] * (a[i] - b[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Per-coordinate scale `1/sqrt(M_ii)`; one metric unit expressed in the
    /// coordinate's own unit. Used to scale finite-difference steps.
    pub fn coordinate_scales(&self) -> [f64; 9] {
        let mut s = [0.0; 9];
        for i in 0..9 {
            s[i] = 1.0 / self.weights[i].sqrt();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_for_equal_points() {
        let m = MetricM::default();
        let x = AmbientVec::from_row_slice(&[0.3, -1.0, 2.0, 4.0, 5.0, -6.0, 7.0, 8.0, 0.05]);
        assert_eq!(m.distance(&x, &x), 0.0);
    }

    #[test]
    fn unit_length_difference_weighs_100() {
        let m = MetricM::default();
        let a = AmbientVec::zeros();
        let mut b = AmbientVec::zeros();
        b[8] = 1.0;
        assert_eq!(m.distance(&a, &b), 1e4f64.sqrt());
    }

    #[test]
    fn rejects_nonpositive_weight() {
        let mut m = MetricM::default();
        m.weights[2] = 0.0;
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn symmetric(a in proptest::array::uniform9(-50f64..50.0),
                     b in proptest::array::uniform9(-50f64..50.0)) {
            let m = MetricM::default();
            let va = AmbientVec::from_row_slice(&a);
            let vb = AmbientVec::from_row_slice(&b);
            prop_assert_eq!(m.distance(&va, &vb), m.distance(&vb, &va));
        }

        #[test]
        fn triangle_inequality(a in proptest::array::uniform9(-50f64..50.0),
                               b in proptest::array::uniform9(-50f64..50.0),
                               c in proptest::array::uniform9(-50f64..50.0)) {
            let m = MetricM::default();
            let va = AmbientVec::from_row_slice(&a);
            let vb = AmbientVec::from_row_slice(&b);
            let vc = AmbientVec::from_row_slice(&c);
            prop_assert!(m.distance(&va, &vc) <= m.distance(&va, &vb) + m.distance(&vb, &vc) + 1e-9);
        }
    }
}
