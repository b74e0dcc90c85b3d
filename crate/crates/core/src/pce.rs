//! Hermite polynomial chaos: multi-index sets, tensor Gauss–Hermite
//! quadrature, non-intrusive spectral projection (NISP) and moments.
//!
//! All polynomials are probabilists' Hermite polynomials, orthogonal under
//! the standard normal measure. Coefficient layouts follow the graded
//! lexicographic ordering produced by [`MultiIndexSet::total_degree`], so the
//! constant term is always column 0.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Exponents of a product Hermite polynomial, one per germ dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        Self(entries)
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree ‖j‖₁.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Parses labels of the form `(1,0,2)`.
    pub fn parse_label(label: &str) -> Result<Self> {
        let inner = label
            .trim()
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("bad multi-index label {label:?}")))?;
        inner
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::Parse(format!("bad multi-index entry {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str(")")
    }
}

/// Total-degree multi-index set {j : ‖j‖₁ ≤ order} in graded lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    dim: usize,
    order: u32,
    indices: Vec<MultiIndex>,
}

impl MultiIndexSet {
    /// Builds the total-degree set. Within each degree, indices are sorted in
    /// descending lexicographic order, e.g. (2,0), (1,1), (0,2).
    pub fn total_degree(dim: usize, order: u32) -> Self {
        assert!(dim >= 1, "germ dimension must be at least 1");
        let mut indices = Vec::new();
        let mut scratch = vec![0u32; dim];
        for degree in 0..=order {
            push_compositions(degree, 0, &mut scratch, &mut indices);
        }
        Self {
            dim,
            order,
            indices,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, term: usize) -> &MultiIndex {
        &self.indices[term]
    }

    pub fn position(&self, mi: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|m| m == mi)
    }

    /// ‖Ψ_j‖² for every term, in basis order.
    pub fn norms_sq(&self) -> Vec<f64> {
        self.indices.iter().map(basis_norm_sq).collect()
    }

    /// Values Ψ_j(xi) for every term, in basis order.
    pub fn eval_all(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_dim("germ point", self.dim, xi.len())?;
        let max_deg = self.order as usize;
        // Per-dimension Hermite tables avoid recomputing the recurrence per term.
        let tables: Vec<Vec<f64>> = xi.iter().map(|&x| hermite_table(max_deg, x)).collect();
        Ok(self
            .indices
            .iter()
            .map(|mi| {
                mi.entries()
                    .iter()
                    .zip(&tables)
                    .map(|(&e, t)| t[e as usize])
                    .product()
            })
            .collect())
    }
}

fn push_compositions(remaining: u32, pos: usize, scratch: &mut [u32], out: &mut Vec<MultiIndex>) {
    if pos == scratch.len() - 1 {
        scratch[pos] = remaining;
        out.push(MultiIndex(scratch.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[pos] = e;
        push_compositions(remaining - e, pos + 1, scratch, out);
    }
}

/// Probabilists' Hermite polynomial He_degree(x) via the three-term recurrence.
pub fn hermite_eval(degree: u32, x: f64) -> f64 {
    hermite_table(degree as usize, x)[degree as usize]
}

fn hermite_table(max_degree: usize, x: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(max_degree + 1);
    t.push(1.0);
    if max_degree >= 1 {
        t.push(x);
    }
    for k in 1..max_degree {
        let next = x * t[k] - k as f64 * t[k - 1];
        t.push(next);
    }
    t
}

/// Ψ_mi(xi) = ∏ He_{mi_k}(xi_k).
pub fn basis_eval(mi: &MultiIndex, xi: &[f64]) -> Result<f64> {
    check_dim("germ point", mi.dim(), xi.len())?;
    Ok(mi
        .entries()
        .iter()
        .zip(xi)
        .map(|(&e, &x)| hermite_eval(e, x))
        .product())
}

/// E[Ψ_mi²] = ∏ mi_k! under the standard normal measure.
pub fn basis_norm_sq(mi: &MultiIndex) -> f64 {
    mi.entries()
        .iter()
        .map(|&e| (1..=e).map(f64::from).product::<f64>())
        .product()
}

/// Tensor-product quadrature rule for the standard normal measure.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points_per_dim: usize,
    /// Row-major `[n_points × dim]`.
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_dim(&self) -> usize {
        self.points_per_dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dim..(q + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// 1D Gauss–Hermite nodes and weights from the eigen-decomposition of the
/// symmetric tridiagonal Jacobi matrix (zero diagonal, off-diagonal √k).
pub fn gauss_hermite_1d(points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1, "need at least one quadrature point");
    let jacobi = DMatrix::from_fn(points, points, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Renormalize so the weights form an exact probability measure.
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Full tensor product of the 1D rule. The last germ dimension varies fastest.
pub fn gauss_hermite_rule(points_per_dim: usize, dim: usize) -> QuadratureRule {
    assert!(dim >= 1, "germ dimension must be at least 1");
    let (x1, w1) = gauss_hermite_1d(points_per_dim);
    let n_points = points_per_dim.pow(dim as u32);
    let mut nodes = Vec::with_capacity(n_points * dim);
    let mut weights = Vec::with_capacity(n_points);
    let mut digits = vec![0usize; dim];
    for _ in 0..n_points {
        let mut w = 1.0;
        for &d in &digits {
            nodes.push(x1[d]);
            w *= w1[d];
        }
        weights.push(w);
        for k in (0..dim).rev() {
            digits[k] += 1;
            if digits[k] < points_per_dim {
                break;
            }
            digits[k] = 0;
        }
    }
    QuadratureRule {
        dim,
        points_per_dim,
        nodes,
        weights,
    }
}

/// Dense PCE coefficients for a vector of scalar random variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PceExpansion {
    basis: Arc<MultiIndexSet>,
    /// `[n_components × n_terms]`.
    coeffs: DMatrix<f64>,
}

impl PceExpansion {
    pub fn new(basis: Arc<MultiIndexSet>, coeffs: DMatrix<f64>) -> Result<Self> {
        check_dim("coefficient columns", basis.len(), coeffs.ncols())?;
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Arc<MultiIndexSet>, n_components: usize) -> Self {
        let n_terms = basis.len();
        Self {
            basis,
            coeffs: DMatrix::zeros(n_components, n_terms),
        }
    }

    /// Builds from row-major coefficient blocks, one block of `n_terms` per component.
    pub fn from_flat(basis: Arc<MultiIndexSet>, flat: &[f64]) -> Result<Self> {
        let n_terms = basis.len();
        if flat.len() % n_terms != 0 {
            return Err(Error::DimensionMismatch {
                what: "flat coefficient length (multiple of term count)",
                expected: n_terms * (flat.len() / n_terms + 1),
                got: flat.len(),
            });
        }
        let coeffs = DMatrix::from_row_slice(flat.len() / n_terms, n_terms, flat);
        Ok(Self { basis, coeffs })
    }

    /// Row-major flattening: component 0 terms, then component 1 terms, ...
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coeffs.len());
        for r in self.coeffs.row_iter() {
            out.extend(r.iter());
        }
        out
    }

    pub fn basis(&self) -> &Arc<MultiIndexSet> {
        &self.basis
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn n_components(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.coeffs.row(i).iter().copied().collect()
    }

    /// Writes the documented CSV layout: header `component,(0,0),...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["component".to_string()];
        header.extend(self.basis.indices().iter().map(|m| m.to_string()));
        wtr.write_record(&header)?;
        for (i, row) in self.coeffs.row_iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`PceExpansion::write_csv`]. The header
    /// must list a complete total-degree set in canonical order.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("component") {
            return Err(Error::Parse("first CSV column must be `component`".into()));
        }
        let labels = header
            .iter()
            .skip(1)
            .map(MultiIndex::parse_label)
            .collect::<Result<Vec<_>>>()?;
        let first = labels
            .first()
            .ok_or_else(|| Error::Parse("no coefficient columns".into()))?;
        let dim = first.dim();
        let order = labels.iter().map(MultiIndex::order).max().unwrap_or(0);
        let basis = MultiIndexSet::total_degree(dim, order);
        if basis.indices() != labels.as_slice() {
            return Err(Error::Parse(
                "coefficient columns are not a canonical total-degree set".into(),
            ));
        }
        let mut flat = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter().skip(1) {
                flat.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad coefficient {field:?}: {e}")))?,
                );
            }
        }
        Self::from_flat(Arc::new(basis), &flat)
    }
}

/// result[i] = Σ_j coeff[i][j] Ψ_j(xi).
pub fn eval_expansion(e: &PceExpansion, xi: &[f64]) -> Result<Vec<f64>> {
    let psi = e.basis.eval_all(xi)?;
    Ok(e.coeffs
        .row_iter()
        .map(|row| row.iter().zip(&psi).map(|(c, p)| c * p).sum())
        .collect())
}

/// Mean and variance of every component.
pub fn moments(e: &PceExpansion) -> (Vec<f64>, Vec<f64>) {
    let norms = e.basis.norms_sq();
    let mean = e.coeffs.column(0).iter().copied().collect();
    let var = e
        .coeffs
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(&norms)
                .skip(1)
                .map(|(c, n)| c * c * n)
                .sum()
        })
        .collect();
    (mean, var)
}

/// Precomputed NISP weights: `weight[q][j] = w_q Ψ_j(ξ_q) / ‖Ψ_j‖²`.
///
/// Used on hot paths where the same basis and rule project many fields.
#[derive(Debug, Clone)]
pub struct NispProjector {
    basis: Arc<MultiIndexSet>,
    /// `[n_points × n_terms]`.
    weights: DMatrix<f64>,
    /// Ψ_j(ξ_q), `[n_points × n_terms]`.
    psi: DMatrix<f64>,
}

impl NispProjector {
    pub fn new(basis: Arc<MultiIndexSet>, rule: &QuadratureRule) -> Result<Self> {
        check_dim("quadrature dimension", basis.dim(), rule.dim())?;
        let n_terms = basis.len();
        let norms = basis.norms_sq();
        let mut psi = DMatrix::zeros(rule.len(), n_terms);
        let mut weights = DMatrix::zeros(rule.len(), n_terms);
        for (q, node) in rule.nodes().enumerate() {
            let vals = basis.eval_all(node)?;
            for j in 0..n_terms {
                psi[(q, j)] = vals[j];
                weights[(q, j)] = rule.weights()[q] * vals[j] / norms[j];
            }
        }
        Ok(Self {
            basis,
            weights,
            psi,
        })
    }

    pub fn basis(&self) -> &Arc<MultiIndexSet> {
        &self.basis
    }

    pub fn n_points(&self) -> usize {
        self.weights.nrows()
    }

    /// Ψ_j at quadrature node q.
    pub fn psi(&self, q: usize, j: usize) -> f64 {
        self.psi[(q, j)]
    }

    /// Evaluates a row-major flat coefficient block (`n_terms` per variable)
    /// at quadrature node `q`, writing one value per variable into `out`.
    pub fn realize(&self, flat_coeffs: &[f64], q: usize, out: &mut [f64]) {
        let n_terms = self.basis.len();
        for (o, block) in out.iter_mut().zip(flat_coeffs.chunks_exact(n_terms)) {
            *o = block
                .iter()
                .enumerate()
                .map(|(j, c)| c * self.psi[(q, j)])
                .sum();
        }
    }

    /// Projects `evaluations[q][i]` (row-major `[n_points × n_vars]`) to
    /// row-major flat coefficients `[n_vars × n_terms]`.
    pub fn project_flat(&self, evaluations: &[f64], n_vars: usize) -> Vec<f64> {
        let n_terms = self.basis.len();
        let mut out = vec![0.0; n_vars * n_terms];
        for q in 0..self.n_points() {
            let row = &evaluations[q * n_vars..(q + 1) * n_vars];
            for (i, &f) in row.iter().enumerate() {
                let block = &mut out[i * n_terms..(i + 1) * n_terms];
                for (j, b) in block.iter_mut().enumerate() {
                    *b += self.weights[(q, j)] * f;
                }
            }
        }
        out
    }
}

/// coeff[i][j] = Σ_q w_q f_q[i] Ψ_j(ξ_q) / ‖Ψ_j‖².
///
/// `evaluations` is `[n_points × n_components]`; row q belongs to rule node q.
pub fn nisp_project(
    evaluations: &DMatrix<f64>,
    basis: Arc<MultiIndexSet>,
    rule: &QuadratureRule,
) -> Result<PceExpansion> {
    check_dim("evaluation rows", rule.len(), evaluations.nrows())?;
    let proj = NispProjector::new(basis.clone(), rule)?;
    // [n_components × n_points] · [n_points × n_terms]
    let coeffs = evaluations.transpose() * &proj.weights;
    PceExpansion::new(basis, coeffs)
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Input coefficients of the diffusion benchmark (boundary value, reaction
/// parameter) over the d=2, p=3 basis.
pub fn benchmark_input_coefficients() -> [[f64; 10]; 2] {
    [
        [1.0, 0.2, 0.0, 0.02, 0.0, 0.0, 0.002, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.02, 0.0, 0.0, 0.002],
    ]
}
