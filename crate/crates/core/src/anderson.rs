//! Anderson acceleration of a fixed-point map G.
//!
//! The caller evaluates the candidate x̂ = G(x_k) and passes both vectors to
//! [`AndersonState::update`], which returns the mixed next iterate.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Relative threshold on |R_ii| below which the least-squares problem is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-12;
/// Ridge weight relative to ‖D‖²_F used on rank-deficient steps.
const RIDGE: f64 = 1e-10;

/// Mixing weights α, most recent candidate first. They sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingWeights {
    pub alpha: Vec<f64>,
}

/// Candidate iterates and residuals, most recent first.
#[derive(Debug, Clone)]
pub struct AndersonState {
    memory: usize,
    xhat_history: VecDeque<Vec<f64>>,
    f_history: VecDeque<Vec<f64>>,
}

impl AndersonState {
    pub fn new(memory: usize) -> Self {
        Self {
            memory,
            xhat_history: VecDeque::with_capacity(memory + 1),
            f_history: VecDeque::with_capacity(memory + 1),
        }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// Number of stored residuals (m_k + 1 after an update).
    pub fn depth(&self) -> usize {
        self.f_history.len()
    }

    /// Clears both histories; the next update behaves as the first one.
    pub fn reset(&mut self) {
        self.xhat_history.clear();
        self.f_history.clear();
    }

    /// One accelerated step from x_k given x̂_{k+1} = G(x_k).
    pub fn update(&mut self, x_k: &[f64], xhat_next: &[f64]) -> (Vec<f64>, MixingWeights) {
        assert_eq!(x_k.len(), xhat_next.len(), "iterate/candidate length mismatch");
        if let Some(prev) = self.f_history.front() {
            assert_eq!(prev.len(), x_k.len(), "iterate dimension changed");
        }
        if self.memory == 0 {
            return (
                xhat_next.to_vec(),
                MixingWeights { alpha: vec![1.0] },
            );
        }

        let f: Vec<f64> = xhat_next.iter().zip(x_k).map(|(a, b)| a - b).collect();
        self.f_history.push_front(f);
        self.xhat_history.push_front(xhat_next.to_vec());
        self.f_history.truncate(self.memory + 1);
        self.xhat_history.truncate(self.memory + 1);

        let m_k = self.f_history.len() - 1;
        let gamma = if m_k == 0 {
            Vec::new()
        } else {
            self.solve_gamma(m_k)
        };
        let alpha0 = 1.0 - gamma.iter().sum::<f64>();
        let mut alpha = Vec::with_capacity(m_k + 1);
        alpha.push(alpha0);
        alpha.extend(&gamma);

        let n = x_k.len();
        let mut next = vec![0.0; n];
        for (a, xh) in alpha.iter().zip(&self.xhat_history) {
            for (o, v) in next.iter_mut().zip(xh) {
                *o += a * v;
            }
        }
        (next, MixingWeights { alpha })
    }

    /// Minimizes ‖f₀ + Σ_{i≥1} γ_i (f_i − f₀)‖₂ with the sum constraint
    /// already eliminated (α₀ = 1 − Σγ).
    fn solve_gamma(&self, m_k: usize) -> Vec<f64> {
        let f0 = &self.f_history[0];
        let n = f0.len();
        let d = DMatrix::from_fn(n, m_k, |r, c| self.f_history[c + 1][r] - f0[r]);
        let rhs = DVector::from_iterator(n, f0.iter().map(|v| -v));
        let frob_sq = d.norm_squared();
        if frob_sq == 0.0 {
            return vec![0.0; m_k];
        }

        if n >= m_k {
            let qr = d.clone().qr();
            let r = qr.r();
            let diag_max = (0..m_k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
            let well_posed = (0..m_k).all(|i| r[(i, i)].abs() > RANK_TOL * diag_max);
            if well_posed {
                let qtb = qr.q().transpose() * &rhs;
                if let Some(g) = r.solve_upper_triangular(&qtb) {
                    return g.iter().copied().collect();
                }
            }
        }

        // Tikhonov-regularized least squares via the stacked system
        // [D; √λ I] γ = [−f₀; 0].
        let lambda = RIDGE * frob_sq;
        let mut aug = DMatrix::zeros(n + m_k, m_k);
        aug.view_mut((0, 0), (n, m_k)).copy_from(&d);
        for i in 0..m_k {
            aug[(n + i, i)] = lambda.sqrt();
        }
        let mut aug_rhs = DVector::zeros(n + m_k);
        aug_rhs.rows_mut(0, n).copy_from(&rhs);
        let qr = aug.qr();
        let qtb = qr.q().transpose() * &aug_rhs;
        qr.r()
            .solve_upper_triangular(&qtb)
            .map(|g| g.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; m_k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_memory_is_plain_iteration() {
        let mut aa = AndersonState::new(0);
        let (x, w) = aa.update(&[1.0, 2.0], &[0.3, 0.1]);
        assert_eq!(x, vec![0.3, 0.1]);
        assert_eq!(w.alpha, vec![1.0]);
        assert_eq!(aa.depth(), 0);
    }

    #[test]
    fn scalar_affine_two_steps() {
        let g = |x: f64| 0.5 * x + 1.0;
        let mut aa = AndersonState::new(1);
        let (x1, w) = aa.update(&[0.0], &[g(0.0)]);
        assert_eq!(x1, vec![1.0]);
        assert_eq!(w.alpha, vec![1.0]);
        let (x2, w) = aa.update(&x1, &[g(x1[0])]);
        assert_abs_diff_eq!(w.alpha[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.alpha[1], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x2[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_residuals_keep_latest_candidate() {
        let mut aa = AndersonState::new(1);
        aa.update(&[0.0, 0.0], &[1.0, 1.0]);
        let (x, w) = aa.update(&[5.0, 5.0], &[6.0, 6.0]);
        assert_eq!(w.alpha, vec![1.0, 0.0]);
        assert_eq!(x, vec![6.0, 6.0]);
    }

    #[test]
    fn rank_deficient_history_is_regularized() {
        // Three residuals on one line: columns of D are parallel.
        let mut aa = AndersonState::new(2);
        aa.update(&[0.0, 0.0], &[1.0, 2.0]);
        aa.update(&[0.0, 0.0], &[2.0, 4.0]);
        let (x, w) = aa.update(&[0.0, 0.0], &[3.0, 6.0]);
        assert!(x.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(w.alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reset_restarts_history() {
        let mut aa = AndersonState::new(5);
        aa.update(&[0.0], &[1.0]);
        aa.update(&[1.0], &[1.5]);
        aa.reset();
        let (_, w) = aa.update(&[1.5], &[1.75]);
        assert_eq!(w.alpha, vec![1.0]);
        aa.reset();
        aa.reset();
        assert_eq!(aa.depth(), 0);
    }

    #[test]
    fn history_capacity_is_memory_plus_one() {
        let mut aa = AndersonState::new(2);
        let mut x = vec![0.0];
        for _ in 0..6 {
            let xh = vec![0.9 * x[0] + 0.1];
            let (nx, w) = aa.update(&x, &xh);
            assert!(w.alpha.len() <= 3);
            x = nx;
        }
        assert_eq!(aa.depth(), 3);
    }
}
