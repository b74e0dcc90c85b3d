//! Stationary nonlinear diffusion benchmark on the unit square.
//!
//! −Δv + (e^{μv} − 1) = f on (0,1)², v = v_Γ on the boundary, discretized
//! with bilinear quadrilaterals and solved by Newton's method. The module also
//! builds the overlapping domain decomposition and the network whose
//! components are NISP propagators over subdomains.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Component, Edge, Network, Propagator};
use crate::pce::{
    benchmark_input_coefficients, gauss_hermite_rule, nisp_project, MultiIndexSet, NispProjector,
    PceExpansion, QuadratureRule,
};

/// Source term as a function of physical coordinates.
pub type Forcing = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

pub fn benchmark_forcing() -> Forcing {
    Arc::new(|x, y| 10.0 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin())
}

/// Uniform structured grid of `nx × ny` nodes. Node (i, j) sits at
/// (x0 + i·hx, y0 + j·hy) and has index j·nx + i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Mesh {
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidConfig(format!(
                "mesh needs at least 2 nodes per axis, got {nx}x{ny}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            x0: 0.0,
            y0: 0.0,
            hx: 1.0 / (nx - 1) as f64,
            hy: 1.0 / (ny - 1) as f64,
        })
    }

    /// Sub-grid over the inclusive node window [i0, i1] × [j0, j1].
    pub fn window(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> Self {
        Self {
            nx: i1 - i0 + 1,
            ny: j1 - j0 + 1,
            x0: self.x0 + i0 as f64 * self.hx,
            y0: self.y0 + j0 as f64 * self.hy,
            hx: self.hx,
            hy: self.hy,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + i as f64 * self.hx, self.y0 + j as f64 * self.hy)
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&n| {
                let (i, j) = self.ij(n);
                self.is_boundary(i, j)
            })
            .collect()
    }
}

/// One deterministic boundary value problem.
#[derive(Clone)]
pub struct DeterministicProblem {
    mesh: Mesh,
    mu: f64,
    forcing: Forcing,
    /// Prescribed value per node, None for free nodes.
    fixed: Vec<Option<f64>>,
}

impl std::fmt::Debug for DeterministicProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeterministicProblem")
            .field("mesh", &self.mesh)
            .field("mu", &self.mu)
            .field("n_fixed", &self.fixed.iter().flatten().count())
            .finish()
    }
}

impl DeterministicProblem {
    /// Every mesh boundary node must be prescribed exactly once; interior
    /// nodes may not be.
    pub fn new(mesh: Mesh, mu: f64, dirichlet: &[(usize, f64)]) -> Result<Self> {
        Self::with_forcing(mesh, mu, benchmark_forcing(), dirichlet)
    }

    pub fn with_forcing(mesh: Mesh, mu: f64, forcing: Forcing, dirichlet: &[(usize, f64)]) -> Result<Self> {
        let mut fixed = vec![None; mesh.n_nodes()];
        for &(n, g) in dirichlet {
            if n >= mesh.n_nodes() {
                return Err(Error::InvalidConfig(format!("Dirichlet node {n} outside the mesh")));
            }
            let (i, j) = mesh.ij(n);
            if !mesh.is_boundary(i, j) {
                return Err(Error::InvalidConfig(format!("Dirichlet node ({i},{j}) is interior")));
            }
            if fixed[n].replace(g).is_some() {
                return Err(Error::InvalidConfig(format!("node ({i},{j}) prescribed twice")));
            }
        }
        if let Some(n) = mesh.boundary_nodes().into_iter().find(|&n| fixed[n].is_none()) {
            let (i, j) = mesh.ij(n);
            return Err(Error::InvalidConfig(format!("boundary node ({i},{j}) has no value")));
        }
        Ok(Self {
            mesh,
            mu,
            forcing,
            fixed,
        })
    }

    /// Same value on the whole boundary.
    pub fn uniform_boundary(mesh: Mesh, mu: f64, value: f64) -> Self {
        let bc: Vec<(usize, f64)> = mesh.boundary_nodes().into_iter().map(|n| (n, value)).collect();
        Self::new(mesh, mu, &bc).expect("boundary list is complete by construction")
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn prescribed(&self, node: usize) -> Option<f64> {
        self.fixed[node]
    }

    /// Copy of `v` with Dirichlet values written in.
    pub fn impose(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.fixed)
            .map(|(&x, g)| g.unwrap_or(x))
            .collect()
    }
}

/// Bilinear shape functions at the 2×2 Gauss points of the reference square.
struct ReferenceElement {
    /// phi[g][a], dx[g][a], dy[g][a]
    phi: [[f64; 4]; 4],
    dx: [[f64; 4]; 4],
    dy: [[f64; 4]; 4],
    /// Gauss point offsets inside the element, physical units.
    offset: [(f64, f64); 4],
    weight: f64,
}

const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

impl ReferenceElement {
    fn new(hx: f64, hy: f64) -> Self {
        let gp = 1.0 / 3f64.sqrt();
        let pts = [(-gp, -gp), (gp, -gp), (gp, gp), (-gp, gp)];
        let mut e = Self {
            phi: [[0.0; 4]; 4],
            dx: [[0.0; 4]; 4],
            dy: [[0.0; 4]; 4],
            offset: [(0.0, 0.0); 4],
            weight: hx * hy / 4.0,
        };
        for (g, &(xi, eta)) in pts.iter().enumerate() {
            e.offset[g] = ((1.0 + xi) * hx / 2.0, (1.0 + eta) * hy / 2.0);
            for (a, &(xa, ya)) in CORNERS.iter().enumerate() {
                e.phi[g][a] = (1.0 + xa * xi) * (1.0 + ya * eta) / 4.0;
                e.dx[g][a] = xa * (1.0 + ya * eta) / 4.0 * (2.0 / hx);
                e.dy[g][a] = ya * (1.0 + xa * xi) / 4.0 * (2.0 / hy);
            }
        }
        e
    }
}

fn element_nodes(m: &Mesh, ei: usize, ej: usize) -> [usize; 4] {
    [
        m.node(ei, ej),
        m.node(ei + 1, ej),
        m.node(ei + 1, ej + 1),
        m.node(ei, ej + 1),
    ]
}

/// Galerkin residual and Jacobian triplets before any Dirichlet treatment.
fn raw_system(p: &DeterministicProblem, v: &[f64], with_jacobian: bool) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
    let m = &p.mesh;
    let re = ReferenceElement::new(m.hx, m.hy);
    let mut r = vec![0.0; m.n_nodes()];
    let mut trip = Vec::with_capacity(if with_jacobian { 16 * (m.nx - 1) * (m.ny - 1) } else { 0 });
    for ej in 0..m.ny - 1 {
        for ei in 0..m.nx - 1 {
            let nodes = element_nodes(m, ei, ej);
            let (xe, ye) = m.point(ei, ej);
            let mut re_loc = [0.0; 4];
            let mut ke = [[0.0; 4]; 4];
            for g in 0..4 {
                let (mut vg, mut gx, mut gy) = (0.0, 0.0, 0.0);
                for a in 0..4 {
                    let va = v[nodes[a]];
                    vg += re.phi[g][a] * va;
                    gx += re.dx[g][a] * va;
                    gy += re.dy[g][a] * va;
                }
                let f = (p.forcing)(xe + re.offset[g].0, ye + re.offset[g].1);
                let ex = (p.mu * vg).exp();
                for a in 0..4 {
                    re_loc[a] += re.weight
                        * (gx * re.dx[g][a] + gy * re.dy[g][a] + (ex - 1.0 - f) * re.phi[g][a]);
                    if with_jacobian {
                        for b in 0..4 {
                            ke[a][b] += re.weight
                                * (re.dx[g][a] * re.dx[g][b]
                                    + re.dy[g][a] * re.dy[g][b]
                                    + p.mu * ex * re.phi[g][a] * re.phi[g][b]);
                        }
                    }
                }
            }
            for a in 0..4 {
                r[nodes[a]] += re_loc[a];
                if with_jacobian {
                    for b in 0..4 {
                        trip.push((nodes[a], nodes[b], ke[a][b]));
                    }
                }
            }
        }
    }
    (r, trip)
}

/// Residual and sparse Jacobian at `v`. Dirichlet rows read v_i − g_i with an
/// identity Jacobian row.
pub fn assemble_system(p: &DeterministicProblem, v: &[f64]) -> Result<(DVector<f64>, CscMatrix<f64>)> {
    let n = p.mesh.n_nodes();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            what: "nodal values",
            expected: n,
            got: v.len(),
        });
    }
    let (mut r, trip) = raw_system(p, v, true);
    let mut coo = CooMatrix::new(n, n);
    for (i, j, val) in trip {
        if p.fixed[i].is_none() {
            coo.push(i, j, val);
        }
    }
    for (i, g) in p.fixed.iter().enumerate() {
        if let Some(g) = g {
            r[i] = v[i] - g;
            coo.push(i, i, 1.0);
        }
    }
    Ok((DVector::from_vec(r), CscMatrix::from(&coo)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub v: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Full-step Newton on the free unknowns, starting from `v0` with Dirichlet
/// values imposed. Converged when the residual 2-norm is at most `opts.tol`.
pub fn newton_solve(p: &DeterministicProblem, v0: &[f64], opts: NewtonOptions) -> Result<NewtonSolution> {
    let n = p.mesh.n_nodes();
    if v0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial guess",
            expected: n,
            got: v0.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("Newton tolerance {} must be positive", opts.tol)));
    }
    let mut free_idx = vec![usize::MAX; n];
    let mut free = Vec::new();
    for (i, g) in p.fixed.iter().enumerate() {
        if g.is_none() {
            free_idx[i] = free.len();
            free.push(i);
        }
    }
    let mut v = p.impose(v0);
    for it in 0..=opts.max_iter {
        let (r, trip) = raw_system(p, &v, true);
        let rf: Vec<f64> = free.iter().map(|&i| r[i]).collect();
        let norm = rf.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NewtonDiverged {
                iterations: it,
                residual: norm,
            });
        }
        if norm <= opts.tol {
            return Ok(NewtonSolution {
                v,
                iterations: it,
                residual: norm,
            });
        }
        if it == opts.max_iter {
            return Err(Error::NewtonDiverged {
                iterations: it,
                residual: norm,
            });
        }
        let nf = free.len();
        let mut coo = CooMatrix::new(nf, nf);
        for (i, j, val) in trip {
            let (fi, fj) = (free_idx[i], free_idx[j]);
            if fi != usize::MAX && fj != usize::MAX {
                coo.push(fi, fj, val);
            }
        }
        let jac = CscMatrix::from(&coo);
        let delta = solve_spd(&jac, &rf)?;
        for (k, &i) in free.iter().enumerate() {
            v[i] -= delta[k];
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Sparse Cholesky, falling back to dense LU when the matrix is not positive
/// definite (possible for negative reaction parameters).
fn solve_spd(a: &CscMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b);
    if let Ok(chol) = CscCholesky::factor(a) {
        return Ok(chol.solve(&rhs).column(0).iter().copied().collect());
    }
    let dense = DMatrix::from(a);
    dense
        .lu()
        .solve(&rhs)
        .map(|x| x.column(0).iter().copied().collect())
        .ok_or_else(|| Error::LinearSolve("singular Newton Jacobian".into()))
}

/// Overlapping block of the global grid, inclusive node windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subdomain {
    pub id: usize,
    pub bx: usize,
    pub by: usize,
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Subdomain {
    pub fn nx(&self) -> usize {
        self.i1 - self.i0 + 1
    }

    pub fn ny(&self) -> usize {
        self.j1 - self.j0 + 1
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    pub fn is_window_boundary(&self, i: usize, j: usize) -> bool {
        self.contains(i, j) && (i == self.i0 || i == self.i1 || j == self.j0 || j == self.j1)
    }

    pub fn local_node(&self, i: usize, j: usize) -> usize {
        (j - self.j0) * self.nx() + (i - self.i0)
    }

    pub fn mesh(&self, global: &Mesh) -> Mesh {
        global.window(self.i0, self.i1, self.j0, self.j1)
    }
}

/// Directed coupling: `to` reads the listed nodes from `from`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceMap {
    pub from: usize,
    pub to: usize,
    /// Global (i, j) nodes: interior to `from`, artificial boundary of `to`.
    pub nodes: Vec<(usize, usize)>,
}

/// Splitting of each axis into `s` blocks of `b = (N − 1)/s` elements; block
/// k spans nodes [k·b, (k+1)·b + 1] clipped to the grid, so neighbours share
/// one element. Interior coordinates [k·b + 1, (k+1)·b] belong to block k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub global: Mesh,
    pub n_sub_x: usize,
    pub n_sub_y: usize,
    pub subdomains: Vec<Subdomain>,
    /// Artificial-boundary nodes per subdomain, ordered by global node index.
    pub artificial: Vec<Vec<(usize, usize)>>,
    pub interface_maps: Vec<InterfaceMap>,
    block_x: usize,
    block_y: usize,
}

fn axis_blocks(nodes: usize, parts: usize) -> Result<usize> {
    if parts == 0 || (nodes - 1) % parts != 0 {
        return Err(Error::IndivisibleMesh { nodes, parts });
    }
    Ok((nodes - 1) / parts)
}

fn owning_block(coord: usize, b: usize, parts: usize) -> usize {
    (coord.saturating_sub(1) / b).min(parts - 1)
}

pub fn decompose(global: &Mesh, n_sub_x: usize, n_sub_y: usize) -> Result<Decomposition> {
    let bx = axis_blocks(global.nx, n_sub_x)?;
    let by = axis_blocks(global.ny, n_sub_y)?;
    let mut subdomains = Vec::with_capacity(n_sub_x * n_sub_y);
    for sy in 0..n_sub_y {
        for sx in 0..n_sub_x {
            subdomains.push(Subdomain {
                id: subdomains.len(),
                bx: sx,
                by: sy,
                i0: sx * bx,
                i1: ((sx + 1) * bx + 1).min(global.nx - 1),
                j0: sy * by,
                j1: ((sy + 1) * by + 1).min(global.ny - 1),
            });
        }
    }
    let mut d = Decomposition {
        global: *global,
        n_sub_x,
        n_sub_y,
        subdomains,
        artificial: Vec::new(),
        interface_maps: Vec::new(),
        block_x: bx,
        block_y: by,
    };

    let mut maps: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for s in &d.subdomains {
        let mut nodes = Vec::new();
        for j in s.j0..=s.j1 {
            for i in s.i0..=s.i1 {
                if s.is_window_boundary(i, j) && !global.is_boundary(i, j) {
                    nodes.push((i, j));
                    let owner = d.owner(i, j);
                    debug_assert_ne!(owner, s.id);
                    maps.entry((owner, s.id)).or_default().push((i, j));
                }
            }
        }
        d.artificial.push(nodes);
    }
    d.interface_maps = maps
        .into_iter()
        .map(|((from, to), nodes)| InterfaceMap { from, to, nodes })
        .collect();
    Ok(d)
}

impl Decomposition {
    pub fn n_subdomains(&self) -> usize {
        self.subdomains.len()
    }

    /// Subdomain that owns node (i, j) as an interior node.
    pub fn owner(&self, i: usize, j: usize) -> usize {
        let sx = owning_block(i, self.block_x, self.n_sub_x);
        let sy = owning_block(j, self.block_y, self.n_sub_y);
        sy * self.n_sub_x + sx
    }

    /// Neighbour sets derived from the interface maps (undirected).
    pub fn neighbors(&self, s: usize) -> BTreeSet<usize> {
        self.interface_maps
            .iter()
            .filter_map(|m| {
                if m.from == s {
                    Some(m.to)
                } else if m.to == s {
                    Some(m.from)
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Distribution of the boundary value and reaction parameter.
#[derive(Debug, Clone)]
pub struct StochasticInputs {
    pub basis: Arc<MultiIndexSet>,
    pub rule: QuadratureRule,
    /// Two variables: v_Γ then μ.
    pub exo: PceExpansion,
}

impl StochasticInputs {
    pub fn benchmark() -> Self {
        let c = benchmark_input_coefficients();
        Self::from_coefficients(&c[0], &c[1]).expect("benchmark coefficients fit the basis")
    }

    /// Inputs over the d=2, p=3 basis with the 4-point-per-dimension rule.
    pub fn from_coefficients(boundary: &[f64], mu: &[f64]) -> Result<Self> {
        let basis = Arc::new(MultiIndexSet::total_degree(2, 3));
        let flat: Vec<f64> = boundary.iter().chain(mu).copied().collect();
        let exo = PceExpansion::from_flat(basis.clone(), &flat)?;
        if exo.n_components() != 2 {
            return Err(Error::DimensionMismatch {
                what: "input variables",
                expected: 2,
                got: exo.n_components(),
            });
        }
        Ok(Self {
            basis,
            rule: gauss_hermite_rule(4, 2),
            exo,
        })
    }

    pub fn n_terms(&self) -> usize {
        self.basis.len()
    }

    pub fn exo_flat(&self) -> Vec<f64> {
        self.exo.to_flat()
    }

    /// Stacked exogenous vector for a benchmark network: every component
    /// receives its own copy of the input coefficients.
    pub fn network_inputs(&self, n_components: usize) -> Vec<f64> {
        self.exo_flat().repeat(n_components)
    }
}

/// NISP propagator of one subdomain with a per-quadrature-node warm start.
pub struct SubdomainPropagator {
    id: usize,
    mesh: Mesh,
    /// Local indices of nodes on the physical boundary (value v_Γ).
    outer: Vec<usize>,
    /// Local indices of artificial-boundary nodes, in endogenous order.
    artificial: Vec<usize>,
    /// Local indices of exported nodes, in output order.
    exported: Vec<usize>,
    projector: Arc<NispProjector>,
    newton: NewtonOptions,
    warm: Vec<Mutex<Option<Vec<f64>>>>,
}

impl SubdomainPropagator {
    pub fn new(
        decomp: &Decomposition,
        sub: usize,
        exported: &[(usize, usize)],
        projector: Arc<NispProjector>,
        newton: NewtonOptions,
    ) -> Self {
        let s = decomp.subdomains[sub];
        let mesh = s.mesh(&decomp.global);
        let outer = (s.j0..=s.j1)
            .flat_map(|j| (s.i0..=s.i1).map(move |i| (i, j)))
            .filter(|&(i, j)| s.is_window_boundary(i, j) && decomp.global.is_boundary(i, j))
            .map(|(i, j)| s.local_node(i, j))
            .collect();
        let artificial = decomp.artificial[sub]
            .iter()
            .map(|&(i, j)| s.local_node(i, j))
            .collect();
        let exported = exported.iter().map(|&(i, j)| s.local_node(i, j)).collect();
        let n_points = projector.n_points();
        Self {
            id: sub,
            mesh,
            outer,
            artificial,
            exported,
            projector,
            newton,
            warm: (0..n_points).map(|_| Mutex::new(None)).collect(),
        }
    }

    pub fn n_endo(&self) -> usize {
        self.artificial.len() * self.projector.basis().len()
    }

    pub fn n_out(&self) -> usize {
        self.exported.len() * self.projector.basis().len()
    }

    /// Drops cached Newton states so the next call starts from zero.
    pub fn reset_warm_start(&self) {
        for w in &self.warm {
            *w.lock().expect("warm-start lock poisoned") = None;
        }
    }
}

impl Propagator for SubdomainPropagator {
    fn propagate(&self, endo: &[f64], exo: &[f64]) -> Result<Vec<f64>> {
        let p = self.projector.basis().len();
        if endo.len() != self.n_endo() || exo.len() != 2 * p {
            return Err(Error::Propagator {
                component: self.id,
                message: format!(
                    "expected {} endogenous and {} exogenous values, got {} and {}",
                    self.n_endo(),
                    2 * p,
                    endo.len(),
                    exo.len()
                ),
            });
        }
        let n_points = self.projector.n_points();
        let n_exp = self.exported.len();
        let mut evals = vec![0.0; n_points * n_exp];
        let mut inputs = [0.0; 2];
        let mut art = vec![0.0; self.artificial.len()];
        let forcing = benchmark_forcing();
        for q in 0..n_points {
            self.projector.realize(exo, q, &mut inputs);
            self.projector.realize(endo, q, &mut art);
            let [vg, mu] = inputs;
            let bc: Vec<(usize, f64)> = self
                .outer
                .iter()
                .map(|&n| (n, vg))
                .chain(self.artificial.iter().copied().zip(art.iter().copied()))
                .collect();
            let prob = DeterministicProblem::with_forcing(self.mesh, mu, forcing.clone(), &bc)?;
            let mut slot = self.warm[q].lock().expect("warm-start lock poisoned");
            let v0 = slot.take().unwrap_or_else(|| vec![0.0; self.mesh.n_nodes()]);
            let sol = newton_solve(&prob, &v0, self.newton).map_err(|e| Error::Propagator {
                component: self.id,
                message: format!("quadrature node {q}: {e}"),
            })?;
            for (k, &n) in self.exported.iter().enumerate() {
                evals[q * n_exp + k] = sol.v[n];
            }
            *slot = Some(sol.v);
        }
        Ok(self.projector.project_flat(&evals, n_exp))
    }
}

/// Where things live in the benchmark network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkMetadata {
    pub decomposition: Decomposition,
    /// Exported nodes of each component, in output order.
    pub outputs: Vec<Vec<(usize, usize)>>,
    /// Probe nodes (domain centre, then a node near the left boundary).
    pub probes: Vec<(usize, usize)>,
    /// First output slot of each probe's coefficient block.
    pub probe_slots: Vec<usize>,
    pub n_terms: usize,
}

/// Centre node and a node one eighth of the way in from the left edge.
pub fn probe_nodes(global: &Mesh) -> Vec<(usize, usize)> {
    let cx = (global.nx - 1) / 2;
    let cy = (global.ny - 1) / 2;
    let near = ((global.nx - 1) / 8).max(1);
    let mut p = vec![(cx.max(1), cy.max(1)), (near, cy.max(1))];
    p.dedup();
    p
}

/// One component per subdomain. Component k reads, for each artificial
/// boundary node, the coefficient block exported by the node's owner, and
/// every component receives the same input coefficients (v_Γ then μ).
pub fn build_benchmark_network(
    global: &Mesh,
    n_sub_x: usize,
    n_sub_y: usize,
    inputs: &StochasticInputs,
    newton: NewtonOptions,
) -> Result<(Network, BenchmarkMetadata)> {
    let decomp = decompose(global, n_sub_x, n_sub_y)?;
    let n_sub = decomp.n_subdomains();
    let p = inputs.n_terms();
    let projector = Arc::new(NispProjector::new(inputs.basis.clone(), &inputs.rule)?);
    let probes = probe_nodes(global);

    let mut exported: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n_sub];
    for m in &decomp.interface_maps {
        exported[m.from].extend(m.nodes.iter().map(|&(i, j)| (j, i)));
    }
    for &(i, j) in &probes {
        exported[decomp.owner(i, j)].insert((j, i));
    }
    // (j, i) keys sort by global node index.
    let outputs: Vec<Vec<(usize, usize)>> = exported
        .into_iter()
        .map(|s| s.into_iter().map(|(j, i)| (i, j)).collect())
        .collect();

    let mut components = Vec::with_capacity(n_sub);
    for s in 0..n_sub {
        let prop = SubdomainPropagator::new(&decomp, s, &outputs[s], projector.clone(), newton);
        components.push(Component::new(
            s,
            prop.n_endo(),
            2 * p,
            prop.n_out(),
            Box::new(prop),
        ));
    }

    let mut out_base = vec![0; n_sub];
    for s in 1..n_sub {
        out_base[s] = out_base[s - 1] + outputs[s - 1].len() * p;
    }
    let out_slot = |owner: usize, node: (usize, usize)| -> usize {
        let k = outputs[owner]
            .iter()
            .position(|&n| n == node)
            .expect("owner exports the node");
        out_base[owner] + k * p
    };

    let mut edges = Vec::new();
    let mut endo_base = 0;
    for s in 0..n_sub {
        for &(i, j) in &decomp.artificial[s] {
            let src = out_slot(decomp.owner(i, j), (i, j));
            for t in 0..p {
                edges.push(Edge::new(endo_base + t, src + t));
            }
            endo_base += p;
        }
    }

    let probe_slots: Vec<usize> = probes
        .iter()
        .map(|&(i, j)| out_slot(decomp.owner(i, j), (i, j)))
        .collect();
    let qoi: Vec<usize> = probe_slots.iter().flat_map(|&b| b..b + p).collect();
    let net = Network::assemble(components, &edges, qoi)?;
    Ok((
        net,
        BenchmarkMetadata {
            decomposition: decomp,
            outputs,
            probes,
            probe_slots,
            n_terms: p,
        },
    ))
}

/// Monolithic NISP over the global mesh: one Newton solve from zero per
/// quadrature node. Rows of the result are mesh nodes.
pub fn global_uq_solve(global: &Mesh, inputs: &StochasticInputs, newton: NewtonOptions) -> Result<PceExpansion> {
    global_uq_solve_timed(global, inputs, newton).map(|(f, _)| f)
}

/// As [`global_uq_solve`], also returning the summed wall time of the
/// deterministic solves (the serial cost of the monolithic approach).
pub fn global_uq_solve_timed(
    global: &Mesh,
    inputs: &StochasticInputs,
    newton: NewtonOptions,
) -> Result<(PceExpansion, f64)> {
    let projector = NispProjector::new(inputs.basis.clone(), &inputs.rule)?;
    let exo = inputs.exo_flat();
    let n = global.n_nodes();
    let forcing = benchmark_forcing();
    let bnodes = global.boundary_nodes();
    let solutions = (0..inputs.rule.len())
        .into_par_iter()
        .map(|q| {
            let start = Instant::now();
            let mut vals = [0.0; 2];
            projector.realize(&exo, q, &mut vals);
            let bc: Vec<(usize, f64)> = bnodes.iter().map(|&b| (b, vals[0])).collect();
            let prob = DeterministicProblem::with_forcing(*global, vals[1], forcing.clone(), &bc)?;
            let v = newton_solve(&prob, &vec![0.0; n], newton)?.v;
            Ok((v, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let evals = DMatrix::from_fn(solutions.len(), n, |q, k| solutions[q].0[k]);
    let seconds = solutions.iter().map(|s| s.1).sum();
    Ok((nisp_project(&evals, inputs.basis.clone(), &inputs.rule)?, seconds))
}

/// Writes coefficient `term` of a nodal field as `x,y,value` rows.
pub fn write_field_csv<W: Write>(mesh: &Mesh, field: &PceExpansion, term: usize, w: W) -> Result<()> {
    if field.n_components() != mesh.n_nodes() {
        return Err(Error::DimensionMismatch {
            what: "field rows",
            expected: mesh.n_nodes(),
            got: field.n_components(),
        });
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "y", "value"])?;
    for n in 0..mesh.n_nodes() {
        let (i, j) = mesh.ij(n);
        let (x, y) = mesh.point(i, j);
        wtr.write_record([x.to_string(), y.to_string(), field.coeffs()[(n, term)].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// L² error of the discrete solution for v = sin(πx)sin(πy), μ = 0, with the
/// matching forcing 2π² sin(πx)sin(πy) on an n×n mesh. The integral uses a
/// 3×3 Gauss rule per element.
pub fn manufactured_l2_error(n: usize) -> Result<f64> {
    let m = Mesh::unit_square(n, n)?;
    let f: Forcing = Arc::new(|x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin());
    let bc: Vec<(usize, f64)> = m.boundary_nodes().into_iter().map(|b| (b, 0.0)).collect();
    let p = DeterministicProblem::with_forcing(m, 0.0, f, &bc)?;
    let sol = newton_solve(&p, &vec![0.0; m.n_nodes()], NewtonOptions::default())?;
    let g = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
    let w = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut err = 0.0;
    for ej in 0..n - 1 {
        for ei in 0..n - 1 {
            let nodes = element_nodes(&m, ei, ej);
            let (xe, ye) = m.point(ei, ej);
            for (a, &xi) in g.iter().enumerate() {
                for (b, &eta) in g.iter().enumerate() {
                    let vh: f64 = CORNERS
                        .iter()
                        .zip(nodes)
                        .map(|(&(xa, ya), nd)| (1.0 + xa * xi) * (1.0 + ya * eta) / 4.0 * sol.v[nd])
                        .sum();
                    let x = xe + (1.0 + xi) * m.hx / 2.0;
                    let y = ye + (1.0 + eta) * m.hy / 2.0;
                    let d = vh - (PI * x).sin() * (PI * y).sin();
                    err += w[a] * w[b] * d * d * m.hx * m.hy / 4.0;
                }
            }
        }
    }
    Ok(err.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::{solve, Method, SolverConfig};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_forcing() -> Forcing {
        Arc::new(|_, _| 0.0)
    }

    #[test]
    fn mesh_geometry() {
        let m = Mesh::unit_square(5, 3).unwrap();
        assert_eq!(m.n_nodes(), 15);
        assert_eq!(m.node(4, 2), 14);
        assert_eq!(m.ij(7), (2, 1));
        assert_eq!(m.point(4, 2), (1.0, 1.0));
        assert_eq!(m.boundary_nodes().len(), 12);
        assert!(Mesh::unit_square(1, 4).is_err());
        let w = m.window(1, 3, 0, 1);
        assert_eq!((w.nx, w.ny), (3, 2));
        assert_abs_diff_eq!(w.x0, 0.25);
    }

    #[test]
    fn problem_validation() {
        let m = Mesh::unit_square(3, 3).unwrap();
        let mut bc: Vec<(usize, f64)> = m.boundary_nodes().into_iter().map(|n| (n, 0.0)).collect();
        assert!(DeterministicProblem::new(m, 1.0, &bc).is_ok());
        bc.push((0, 1.0));
        assert!(DeterministicProblem::new(m, 1.0, &bc).is_err());
        bc.pop();
        bc.pop();
        assert!(DeterministicProblem::new(m, 1.0, &bc).is_err());
        bc.push((4, 0.0));
        assert!(DeterministicProblem::new(m, 1.0, &bc).is_err());
    }

    #[test]
    fn patch_test_linear_field() {
        let m = Mesh::unit_square(6, 5).unwrap();
        let exact = |x: f64, y: f64| 0.3 + 1.7 * x - 0.9 * y;
        let v: Vec<f64> = (0..m.n_nodes())
            .map(|n| {
                let (i, j) = m.ij(n);
                let (x, y) = m.point(i, j);
                exact(x, y)
            })
            .collect();
        let bc: Vec<(usize, f64)> = m.boundary_nodes().into_iter().map(|n| (n, v[n])).collect();
        let p = DeterministicProblem::with_forcing(m, 0.0, zero_forcing(), &bc).unwrap();
        let (r, _) = assemble_system(&p, &v).unwrap();
        assert!(r.amax() <= 1e-12, "{}", r.amax());
    }

    #[test]
    fn manufactured_solution_order() {
        let e: Vec<f64> = [9, 17, 33].iter().map(|&n| manufactured_l2_error(n).unwrap()).collect();
        for k in 0..2 {
            let order = (e[k] / e[k + 1]).log2();
            assert!((1.8..=2.2).contains(&order), "order {order}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = Mesh::unit_square(5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..m.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bc: Vec<(usize, f64)> = m.boundary_nodes().into_iter().map(|n| (n, v[n])).collect();
        let p = DeterministicProblem::new(m, 1.3, &bc).unwrap();
        let (_, jac) = assemble_system(&p, &v).unwrap();
        let jd = DMatrix::from(&jac);
        let h = 1e-6;
        let mut fd = DMatrix::zeros(m.n_nodes(), m.n_nodes());
        for k in 0..m.n_nodes() {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[k] += h;
            vm[k] -= h;
            let rp = assemble_system(&p, &vp).unwrap().0;
            let rm = assemble_system(&p, &vm).unwrap().0;
            fd.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        let rel = (&jd - &fd).amax() / jd.amax();
        assert!(rel <= 1e-6, "{rel}");
    }

    #[test]
    fn newton_linear_one_step_and_benchmark() {
        let m = Mesh::unit_square(11, 11).unwrap();
        let p = DeterministicProblem::uniform_boundary(m, 0.0, 1.0);
        let s = newton_solve(&p, &vec![0.0; m.n_nodes()], NewtonOptions::default()).unwrap();
        assert_eq!(s.iterations, 1);

        let m = Mesh::unit_square(41, 41).unwrap();
        let p = DeterministicProblem::uniform_boundary(m, 1.0, 1.0);
        let s = newton_solve(&p, &vec![0.0; m.n_nodes()], NewtonOptions::default()).unwrap();
        assert!(s.iterations <= 10);
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn newton_failure_path() {
        let m = Mesh::unit_square(11, 11).unwrap();
        let p = DeterministicProblem::uniform_boundary(m, 100.0, 1.0);
        let e = newton_solve(&p, &vec![0.0; m.n_nodes()], NewtonOptions::default()).unwrap_err();
        assert!(matches!(e, Error::NewtonDiverged { .. }));
    }

    /// Independent checker: coverage, one-element overlap, unique owners.
    fn check_decomposition(d: &Decomposition) {
        let g = d.global;
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!(d.subdomains.iter().any(|s| s.contains(i, j)));
            }
        }
        for a in &d.subdomains {
            for b in &d.subdomains {
                if b.bx == a.bx + 1 && b.by == a.by {
                    assert_eq!(a.i1, b.i0 + 1, "x overlap");
                }
                if b.by == a.by + 1 && b.bx == a.bx {
                    assert_eq!(a.j1, b.j0 + 1, "y overlap");
                }
            }
        }
        for (s, nodes) in d.artificial.iter().enumerate() {
            for &(i, j) in nodes {
                let owners: Vec<usize> = d
                    .subdomains
                    .iter()
                    .filter(|o| o.id != s && o.contains(i, j) && !o.is_window_boundary(i, j))
                    .map(|o| o.id)
                    .collect();
                assert!(owners.contains(&d.owner(i, j)));
            }
        }
        for m in &d.interface_maps {
            for &(i, j) in &m.nodes {
                assert!(d.artificial[m.to].contains(&(i, j)));
                assert_eq!(d.owner(i, j), m.from);
            }
        }
    }

    #[test]
    fn decomposition_shapes() {
        let g = Mesh::unit_square(41, 41).unwrap();
        let d = decompose(&g, 2, 2).unwrap();
        check_decomposition(&d);
        assert_eq!(d.n_subdomains(), 4);
        assert_eq!((d.subdomains[0].nx(), d.subdomains[3].nx()), (22, 21));
        assert_eq!(d.interface_maps.len(), 12);
        for s in 0..4 {
            assert_eq!(d.neighbors(s).len(), 3);
        }

        let d = decompose(&g, 4, 4).unwrap();
        check_decomposition(&d);
        let deg: Vec<usize> = (0..16).map(|s| d.neighbors(s).len()).collect();
        assert_eq!(deg[0], 3);
        assert_eq!(deg[15], 3);
        assert_eq!(deg[5], 8);
        // independent grid-neighbour oracle: king moves on a 4×4 board
        for s in 0..16usize {
            let (x, y) = ((s % 4) as i64, (s / 4) as i64);
            let want = (0..16usize)
                .filter(|&t| {
                    let (a, b) = ((t % 4) as i64, (t / 4) as i64);
                    t != s && (a - x).abs() <= 1 && (b - y).abs() <= 1
                })
                .count();
            assert_eq!(deg[s], want);
        }

        check_decomposition(&decompose(&g, 8, 8).unwrap());
        let one = decompose(&g, 1, 1).unwrap();
        assert_eq!(one.subdomains[0].nx(), 41);
        assert!(one.interface_maps.is_empty());
        assert!(matches!(decompose(&g, 3, 3), Err(Error::IndivisibleMesh { .. })));

        let weak = Mesh::unit_square(11, 11).unwrap();
        check_decomposition(&decompose(&weak, 2, 2).unwrap());
    }

    #[test]
    fn network_connectivity() {
        let g = Mesh::unit_square(41, 41).unwrap();
        let inputs = StochasticInputs::benchmark();
        let (net, meta) = build_benchmark_network(&g, 2, 2, &inputs, NewtonOptions::default()).unwrap();
        assert_eq!(net.n_components(), 4);
        let mut pairs = net.component_edges();
        pairs.sort_unstable();
        pairs.dedup();
        assert_eq!(pairs.len(), 12);
        assert_eq!(meta.probes, vec![(20, 20), (5, 20)]);
        assert_eq!(net.qoi_slots().len(), 20);

        let (net, _) = build_benchmark_network(&g, 1, 1, &inputs, NewtonOptions::default()).unwrap();
        assert_eq!(net.n_endo(), 0);
    }

    #[test]
    fn deterministic_inputs_give_deterministic_outputs() {
        let mut bnd = [0.0; 10];
        let mut mu = [0.0; 10];
        bnd[0] = 0.5;
        mu[0] = 1.0;
        let inputs = StochasticInputs::from_coefficients(&bnd, &mu).unwrap();
        let g = Mesh::unit_square(11, 11).unwrap();
        let field = global_uq_solve(&g, &inputs, NewtonOptions::default()).unwrap();
        for n in 0..g.n_nodes() {
            for t in 1..10 {
                assert!(field.coeffs()[(n, t)].abs() <= 1e-10);
            }
        }
        let (net, _) = build_benchmark_network(&g, 2, 2, &inputs, NewtonOptions::default()).unwrap();
        let u = inputs.network_inputs(net.n_components());
        let out = net
            .apply_f(&crate::network::NetworkState::new(vec![0.0; net.n_out()], u))
            .unwrap();
        for block in out.chunks_exact(10) {
            for &c in &block[1..] {
                assert!(c.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn zero_endogenous_first_call_matches_standalone_nisp() {
        let g = Mesh::unit_square(11, 11).unwrap();
        let inputs = StochasticInputs::benchmark();
        let (net, meta) = build_benchmark_network(&g, 2, 2, &inputs, NewtonOptions::default()).unwrap();
        let u = inputs.exo_flat();
        let c = 0;
        let (out, _) = net
            .propagate_component(c, &vec![0.0; net.components()[c].n_endo], &inputs.network_inputs(4))
            .unwrap();

        let d = &meta.decomposition;
        let s = d.subdomains[c];
        let sm = s.mesh(&g);
        let rule = gauss_hermite_rule(4, 2);
        let mut evals = DMatrix::zeros(rule.len(), meta.outputs[c].len());
        for q in 0..rule.len() {
            let psi = inputs.basis.eval_all(rule.node(q)).unwrap();
            let vg: f64 = (0..10).map(|j| u[j] * psi[j]).sum();
            let mu: f64 = (0..10).map(|j| u[10 + j] * psi[j]).sum();
            let bc: Vec<(usize, f64)> = sm
                .boundary_nodes()
                .into_iter()
                .map(|n| {
                    let (li, lj) = sm.ij(n);
                    let on_outer = g.is_boundary(li + s.i0, lj + s.j0);
                    (n, if on_outer { vg } else { 0.0 })
                })
                .collect();
            let p = DeterministicProblem::new(sm, mu, &bc).unwrap();
            let sol = newton_solve(&p, &vec![0.0; sm.n_nodes()], NewtonOptions::default()).unwrap();
            for (k, &(i, j)) in meta.outputs[c].iter().enumerate() {
                evals[(q, k)] = sol.v[s.local_node(i, j)];
            }
        }
        let want = nisp_project(&evals, inputs.basis.clone(), &rule).unwrap().to_flat();
        for (a, b) in out.iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_subdomain_matches_global() {
        let g = Mesh::unit_square(11, 11).unwrap();
        let inputs = StochasticInputs::benchmark();
        let truth = global_uq_solve(&g, &inputs, NewtonOptions::default()).unwrap();
        let (net, meta) = build_benchmark_network(&g, 1, 1, &inputs, NewtonOptions::default()).unwrap();
        let cfg = SolverConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let out = solve(&net, &inputs.network_inputs(1), Method::Jacobi, &cfg, None).unwrap();
        assert_eq!(out.trace.iterations(), 1);
        for (k, &(i, j)) in meta.probes.iter().enumerate() {
            let got = &out.state.x[meta.probe_slots[k]..meta.probe_slots[k] + 10];
            let want = truth.component(g.node(i, j));
            for (a, b) in got.iter().zip(&want) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn linear_response_to_input_perturbation() {
        let g = Mesh::unit_square(11, 11).unwrap();
        let c = benchmark_input_coefficients();
        let base = global_uq_solve(&g, &StochasticInputs::benchmark(), NewtonOptions::default()).unwrap();
        let mut half = c[0];
        half[1] = 0.1;
        let inputs = StochasticInputs::from_coefficients(&half, &c[1]).unwrap();
        let pert = global_uq_solve(&g, &inputs, NewtonOptions::default()).unwrap();
        let n = g.node(5, 5);
        let ratio = pert.coeffs()[(n, 1)] / base.coeffs()[(n, 1)];
        assert!((0.4..=0.6).contains(&ratio), "{ratio}");
    }

    #[test]
    fn mean_field_follows_forcing_sign() {
        let g = Mesh::unit_square(41, 41).unwrap();
        let field = global_uq_solve(&g, &StochasticInputs::benchmark(), NewtonOptions::default()).unwrap();
        // forcing is positive in the (¼, ¼) quadrant and negative at (¾, ¼)
        let a = field.coeffs()[(g.node(10, 10), 0)];
        let b = field.coeffs()[(g.node(30, 10), 0)];
        assert!(a > b);
    }

    #[test]
    fn field_csv_layout() {
        let g = Mesh::unit_square(3, 3).unwrap();
        let f = PceExpansion::zeros(Arc::new(MultiIndexSet::total_degree(2, 3)), 9);
        let mut buf = Vec::new();
        write_field_csv(&g, &f, 0, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,y,value\n"));
        assert_eq!(s.lines().count(), 10);
    }
}
