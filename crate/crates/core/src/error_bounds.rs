//! Error bounds for fixed points of contractive maps, measured in the
//! second-moment norm of stacked PCE coefficients.
//!
//! Stacked vectors are variable-major: variable i occupies
//! `[i * P, (i + 1) * P)` where P is the basis size.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::norm2;
use crate::pce::MultiIndexSet;

/// sqrt(Σ_{i,j} c_{i,j}² ‖Ψ_j‖²) over a stacked coefficient vector.
pub fn weighted_norm(coeffs: &[f64], basis: &MultiIndexSet) -> Result<f64> {
    let p = basis.len();
    if p == 0 || coeffs.len() % p != 0 {
        return Err(Error::DimensionMismatch {
            what: "stacked coefficients (multiple of basis size)",
            expected: p,
            got: coeffs.len(),
        });
    }
    let w = basis.norms_sq();
    Ok(coeffs
        .chunks_exact(p)
        .flat_map(|c| c.iter().zip(&w).map(|(v, n)| v * v * n))
        .sum::<f64>()
        .sqrt())
}

/// Norm used for bounds and Lipschitz sampling.
#[derive(Debug, Clone)]
pub enum CoefficientNorm {
    Euclidean,
    Weighted(Arc<MultiIndexSet>),
}

impl CoefficientNorm {
    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        match self {
            CoefficientNorm::Euclidean => Ok(norm2(v)),
            CoefficientNorm::Weighted(b) => weighted_norm(v, b),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "vector length",
                expected: a.len(),
                got: b.len(),
            });
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm(&d)
    }
}

/// Truncation from a high-order basis onto a nested low-order one.
#[derive(Debug, Clone)]
pub struct CoefficientProjector {
    full: Arc<MultiIndexSet>,
    sub: Arc<MultiIndexSet>,
    /// slot_map[j] = position of sub-basis term j in the full basis.
    slot_map: Vec<usize>,
}

impl CoefficientProjector {
    pub fn new(full: Arc<MultiIndexSet>, sub: Arc<MultiIndexSet>) -> Result<Self> {
        if full.dim() != sub.dim() {
            return Err(Error::DimensionMismatch {
                what: "projector stochastic dimension",
                expected: full.dim(),
                got: sub.dim(),
            });
        }
        let slot_map = sub
            .indices()
            .iter()
            .map(|mi| {
                full.position(mi).ok_or_else(|| {
                    Error::InvalidConfig(format!("term {mi} missing from the full basis"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            full,
            sub,
            slot_map,
        })
    }

    pub fn full_basis(&self) -> &Arc<MultiIndexSet> {
        &self.full
    }

    pub fn sub_basis(&self) -> &Arc<MultiIndexSet> {
        &self.sub
    }

    pub fn slot_map(&self) -> &[usize] {
        &self.slot_map
    }

    fn n_vars(&self, len: usize, p: usize) -> Result<usize> {
        if len % p != 0 {
            return Err(Error::DimensionMismatch {
                what: "stacked coefficients (multiple of basis size)",
                expected: p,
                got: len,
            });
        }
        Ok(len / p)
    }

    /// Keeps the sub-basis coefficients of every variable.
    pub fn project(&self, full: &[f64]) -> Result<Vec<f64>> {
        let pf = self.full.len();
        let n = self.n_vars(full.len(), pf)?;
        let mut out = Vec::with_capacity(n * self.sub.len());
        for chunk in full.chunks_exact(pf) {
            out.extend(self.slot_map.iter().map(|&j| chunk[j]));
        }
        Ok(out)
    }

    /// Zero-pads sub-basis coefficients into the full basis.
    pub fn embed(&self, sub: &[f64]) -> Result<Vec<f64>> {
        let ps = self.sub.len();
        let n = self.n_vars(sub.len(), ps)?;
        let pf = self.full.len();
        let mut out = vec![0.0; n * pf];
        for (i, chunk) in sub.chunks_exact(ps).enumerate() {
            for (&j, &v) in self.slot_map.iter().zip(chunk) {
                out[i * pf + j] = v;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub n_pairs: usize,
    pub is_contraction: bool,
}

/// Largest observed ratio ‖map(a) − map(b)‖ / ‖a − b‖ over sampled pairs.
/// This is a lower bound on the true constant. Coincident pairs are skipped.
pub fn estimate_lipschitz<M, S>(
    map: M,
    mut sampler: S,
    n_pairs: usize,
    rng_seed: u64,
    norm: &CoefficientNorm,
) -> Result<LipschitzEstimate>
where
    M: Fn(&[f64]) -> Result<Vec<f64>>,
    S: FnMut(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>),
{
    if n_pairs == 0 {
        return Err(Error::InvalidConfig("need at least one sample pair".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut value: f64 = 0.0;
    let mut used = 0;
    for _ in 0..n_pairs {
        let (a, b) = sampler(&mut rng);
        let den = norm.distance(&a, &b)?;
        if den == 0.0 {
            continue;
        }
        let num = norm.distance(&map(&a)?, &map(&b)?)?;
        value = value.max(num / den);
        used += 1;
    }
    Ok(LipschitzEstimate {
        value,
        n_pairs: used,
        is_contraction: value < 1.0,
    })
}

/// Pairs of independent standard normal vectors scaled by `scale` around `center`.
pub fn gaussian_pairs(center: Vec<f64>, scale: f64) -> impl FnMut(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    move |rng| {
        let mut draw = || -> Vec<f64> {
            center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(rng);
                    c + scale * z
                })
                .collect()
        };
        let a = draw();
        let b = draw();
        (a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundType {
    APriori,
    APosteriori,
    InPlaneAPriori,
    InPlaneAPosteriori,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_type: BoundType,
    pub lipschitz: f64,
    pub defect_norm: f64,
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub true_error: Option<f64>,
}

impl BoundReport {
    pub fn with_true_error(mut self, err: f64) -> Self {
        self.true_error = Some(err);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn contraction_bound(bound_type: BoundType, lipschitz: f64, defect_norm: f64) -> Result<BoundReport> {
    if !(lipschitz >= 0.0 && lipschitz < 1.0) {
        return Err(Error::NotContraction(lipschitz));
    }
    Ok(BoundReport {
        bound_type,
        lipschitz,
        defect_norm,
        bound: defect_norm / (1.0 - lipschitz),
        true_error: None,
    })
}

fn defect<M>(x: &[f64], step: M, norm: &CoefficientNorm) -> Result<f64>
where
    M: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    let gx = step(x)?;
    norm.distance(x, &gx)
}

/// ‖x̄⋆ − G(x̄⋆)‖ / (1 − L_G): error of the approximate fixed point from the
/// truth solution and one approximate step.
pub fn a_priori_bound<M>(xbar_star: &[f64], step: M, lipschitz: f64, norm: &CoefficientNorm) -> Result<BoundReport>
where
    M: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    if !(lipschitz < 1.0) {
        return Err(Error::NotContraction(lipschitz));
    }
    contraction_bound(BoundType::APriori, lipschitz, defect(xbar_star, step, norm)?)
}

/// ‖x⋆ − Ḡ(x⋆)‖ / (1 − L_Ḡ): error of the computed solution from one truth step.
pub fn a_posteriori_bound<M>(x_star: &[f64], truth_step: M, lipschitz: f64, norm: &CoefficientNorm) -> Result<BoundReport>
where
    M: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    if !(lipschitz < 1.0) {
        return Err(Error::NotContraction(lipschitz));
    }
    contraction_bound(BoundType::APosteriori, lipschitz, defect(x_star, truth_step, norm)?)
}

/// Weighted norm of P x̄⋆ − x⋆, with x⋆ in the sub basis.
pub fn in_plane_error(x_star: &[f64], xbar_star: &[f64], proj: &CoefficientProjector) -> Result<f64> {
    let p = proj.project(xbar_star)?;
    CoefficientNorm::Weighted(proj.sub.clone()).distance(&p, x_star)
}

/// ‖P x̄⋆ − G(P x̄⋆)‖ / (1 − L_G) with G acting on sub-basis coefficients.
pub fn in_plane_apriori<M>(
    xbar_star: &[f64],
    step: M,
    lipschitz: f64,
    proj: &CoefficientProjector,
) -> Result<BoundReport>
where
    M: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    if !(lipschitz < 1.0) {
        return Err(Error::NotContraction(lipschitz));
    }
    let p = proj.project(xbar_star)?;
    let norm = CoefficientNorm::Weighted(proj.sub.clone());
    contraction_bound(BoundType::InPlaneAPriori, lipschitz, defect(&p, step, &norm)?)
}

/// ‖x⋆ − P Ḡ(x⋆)‖ / (1 − L_PḠ) with Ḡ acting on full-basis coefficients and
/// x⋆ embedded by zero padding.
pub fn in_plane_aposteriori<M>(
    x_star: &[f64],
    truth_step: M,
    lipschitz: f64,
    proj: &CoefficientProjector,
) -> Result<BoundReport>
where
    M: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    if !(lipschitz < 1.0) {
        return Err(Error::NotContraction(lipschitz));
    }
    let norm = CoefficientNorm::Weighted(proj.sub.clone());
    let d = defect(
        x_star,
        |x| proj.project(&truth_step(&proj.embed(x)?)?),
        &norm,
    )?;
    contraction_bound(BoundType::InPlaneAPosteriori, lipschitz, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pce::{benchmark_input_coefficients, MultiIndex};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn basis(order: u32) -> Arc<MultiIndexSet> {
        Arc::new(MultiIndexSet::total_degree(2, order))
    }

    #[test]
    fn weighted_norm_examples() {
        let b = basis(3);
        assert_eq!(weighted_norm(&[0.0; 10], &b).unwrap(), 0.0);
        let mut v = vec![0.0; 10];
        v[b.position(&MultiIndex::new(vec![2, 0])).unwrap()] = 3.0;
        assert_abs_diff_eq!(weighted_norm(&v, &b).unwrap(), 3.0 * 2f64.sqrt(), epsilon = 1e-14);
        let row = benchmark_input_coefficients()[0];
        assert_abs_diff_eq!(
            weighted_norm(&row, &b).unwrap(),
            (1.0 + 0.04 + 0.0008 + 0.000024f64).sqrt(),
            epsilon = 1e-14
        );
        assert!(weighted_norm(&[1.0; 7], &b).is_err());
    }

    #[test]
    fn projector_identity_and_high_order_zero() {
        let b = basis(3);
        let p = CoefficientProjector::new(b.clone(), b.clone()).unwrap();
        let v: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert_eq!(p.project(&v).unwrap(), v);

        let p = CoefficientProjector::new(basis(3), basis(1)).unwrap();
        let mut high = vec![0.0; 10];
        high[6] = 1.0; // (3,0)
        high[4] = -2.0; // (1,1)
        assert_eq!(p.project(&high).unwrap(), vec![0.0; 3]);
        assert!(CoefficientProjector::new(basis(1), basis(3)).is_err());
    }

    #[test]
    fn projection_matches_weighted_least_squares() {
        // argmin_c ‖E c − v‖_W solved as a normal-equation system.
        let full = basis(3);
        let proj = CoefficientProjector::new(full.clone(), basis(2)).unwrap();
        let v: Vec<f64> = (0..10).map(|i| ((i * 7 + 3) % 5) as f64 - 1.7).collect();
        let e = DMatrix::from_fn(10, 6, |r, c| if proj.slot_map()[c] == r { 1.0 } else { 0.0 });
        let w = DMatrix::from_diagonal(&DVector::from_vec(full.norms_sq()));
        let lhs = e.transpose() * &w * &e;
        let rhs = e.transpose() * &w * DVector::from_vec(v.clone());
        let c = lhs.lu().solve(&rhs).unwrap();
        let got = proj.project(&v).unwrap();
        for (a, b) in got.iter().zip(c.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lipschitz_estimates() {
        let norm = CoefficientNorm::Euclidean;
        let id = estimate_lipschitz(|x| Ok(x.to_vec()), gaussian_pairs(vec![0.0; 3], 1.0), 20, 1, &norm).unwrap();
        assert_abs_diff_eq!(id.value, 1.0, epsilon = 1e-12);
        assert!(!id.is_contraction);
        let half = estimate_lipschitz(
            |x| Ok(x.iter().map(|v| 0.5 * v).collect()),
            gaussian_pairs(vec![0.0; 3], 1.0),
            20,
            1,
            &norm,
        )
        .unwrap();
        assert_abs_diff_eq!(half.value, 0.5, epsilon = 1e-12);
        assert!(half.is_contraction);

        let degenerate = estimate_lipschitz(|x| Ok(x.to_vec()), |_| (vec![1.0], vec![1.0]), 5, 0, &norm).unwrap();
        assert_eq!(degenerate.n_pairs, 0);
        assert!(estimate_lipschitz(|x| Ok(x.to_vec()), |_| (vec![1.0], vec![2.0]), 0, 0, &norm).is_err());
    }

    #[test]
    fn lipschitz_of_affine_map_against_singular_value() {
        let m = DMatrix::from_row_slice(4, 4, &[
            0.3, -0.1, 0.0, 0.2, //
            0.05, 0.4, -0.2, 0.0, //
            0.0, 0.1, 0.25, -0.15, //
            0.1, 0.0, 0.05, 0.35,
        ]);
        let sigma = m.clone().svd(false, false).singular_values.max();
        let mm = m.clone();
        let est = estimate_lipschitz(
            move |x| Ok((&mm * DVector::from_column_slice(x)).iter().map(|v| v + 1.0).collect()),
            gaussian_pairs(vec![0.0; 4], 1.0),
            200,
            42,
            &CoefficientNorm::Euclidean,
        )
        .unwrap();
        assert!(est.value <= sigma + 1e-12);
        assert!(est.value >= 0.9 * sigma, "{} vs {sigma}", est.value);
    }

    fn scalar_norm() -> CoefficientNorm {
        CoefficientNorm::Weighted(Arc::new(MultiIndexSet::total_degree(1, 0)))
    }

    #[test]
    fn scalar_affine_bounds() {
        // G(x) = 0.5x + 1 (fixed point 2), Ḡ(x) = 0.4x + 1.3 (fixed point 13/6)
        let g = |x: &[f64]| Ok(vec![0.5 * x[0] + 1.0]);
        let gbar = |x: &[f64]| Ok(vec![0.4 * x[0] + 1.3]);
        let (x, xbar): (f64, f64) = (2.0, 13.0 / 6.0);
        let err = (x - xbar).abs();
        let norm = scalar_norm();
        let pri = a_priori_bound(&[xbar], g, 0.5, &norm).unwrap();
        let post = a_posteriori_bound(&[x], gbar, 0.4, &norm).unwrap();
        assert!(pri.bound >= err - 1e-15 && pri.bound <= 10.0 * err);
        assert!(post.bound >= err - 1e-15 && post.bound <= 10.0 * err);

        assert!(a_posteriori_bound(&[xbar], gbar, 0.4, &norm).unwrap().bound <= 1e-14);
        let b = a_posteriori_bound(&[0.0], |_: &[f64]| Ok(vec![0.1]), 0.5, &norm).unwrap();
        assert_abs_diff_eq!(b.bound, 0.2, epsilon = 1e-15);
        let b = a_priori_bound(&[0.0], |_: &[f64]| Ok(vec![0.1]), 0.5, &norm).unwrap();
        assert_abs_diff_eq!(b.bound, 0.2, epsilon = 1e-15);
        assert!(matches!(
            a_posteriori_bound(&[0.0], gbar, 1.0, &norm),
            Err(Error::NotContraction(_))
        ));
        assert!(a_priori_bound(&[0.0], g, 1.5, &norm).is_err());
    }

    #[test]
    fn in_plane_trivial_cases() {
        let proj = CoefficientProjector::new(basis(3), basis(1)).unwrap();
        let xbar: Vec<f64> = (0..10).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let x = proj.project(&xbar).unwrap();
        assert_eq!(in_plane_error(&x, &xbar, &proj).unwrap(), 0.0);

        let same = CoefficientProjector::new(basis(2), basis(2)).unwrap();
        let xbar: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let x: Vec<f64> = (0..6).map(|i| 0.5 * i as f64 + 0.1).collect();
        let full = CoefficientNorm::Weighted(basis(2)).distance(&x, &xbar).unwrap();
        assert_abs_diff_eq!(in_plane_error(&x, &xbar, &same).unwrap(), full, epsilon = 1e-14);
    }

    #[test]
    fn report_json_shape() {
        let r = contraction_bound(BoundType::APosteriori, 0.5, 0.1).unwrap();
        let j: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(j["bound_type"], "a_posteriori");
        assert!(j.get("true_error").is_none());
        let j: serde_json::Value =
            serde_json::from_str(&r.with_true_error(0.05).to_json().unwrap()).unwrap();
        assert_eq!(j["true_error"], 0.05);
    }

    proptest! {
        #[test]
        fn orthogonal_decomposition(v in prop::collection::vec(-5.0f64..5.0, 20), x in prop::collection::vec(-5.0f64..5.0, 6)) {
            let full = basis(3);
            let proj = CoefficientProjector::new(full.clone(), basis(1)).unwrap();
            let norm = CoefficientNorm::Weighted(full);
            let total = norm.distance(&proj.embed(&x).unwrap(), &v).unwrap();
            let pv = proj.embed(&proj.project(&v).unwrap()).unwrap();
            let out_of_plane = norm.distance(&v, &pv).unwrap();
            let in_plane = in_plane_error(&x, &v, &proj).unwrap();
            prop_assert!((total.powi(2) - out_of_plane.powi(2) - in_plane.powi(2)).abs() <= 1e-10 * (1.0 + total.powi(2)));
        }

        #[test]
        fn projection_is_contractive_and_idempotent(v in prop::collection::vec(-5.0f64..5.0, 20)) {
            let proj = CoefficientProjector::new(basis(3), basis(2)).unwrap();
            let p = proj.project(&v).unwrap();
            prop_assert!(weighted_norm(&p, &basis(2)).unwrap() <= weighted_norm(&v, &basis(3)).unwrap() + 1e-12);
            prop_assert_eq!(proj.project(&proj.embed(&p).unwrap()).unwrap(), p);
        }
    }
}
