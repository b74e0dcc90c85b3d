//! Component/network data model: black-box propagators, the adjacency map
//! between outputs and endogenous inputs, stacked state vectors, and the
//! fixed-point residual.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A component's discrete uncertainty-propagation operator, mapping
/// endogenous and exogenous input coefficients to output coefficients.
///
/// Implementations must tolerate being called from any thread. The solvers
/// never call one component's propagator concurrently with itself.
pub trait Propagator: Send + Sync {
    fn propagate(&self, endo: &[f64], exo: &[f64]) -> Result<Vec<f64>>;
}

struct FnPropagator<F>(F);

impl<F> Propagator for FnPropagator<F>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    fn propagate(&self, endo: &[f64], exo: &[f64]) -> Result<Vec<f64>> {
        Ok((self.0)(endo, exo))
    }
}

pub struct Component {
    pub id: usize,
    pub n_endo: usize,
    pub n_exo: usize,
    pub n_out: usize,
    pub cost_hint: Option<f64>,
    propagator: Box<dyn Propagator>,
}

impl Component {
    pub fn new(
        id: usize,
        n_endo: usize,
        n_exo: usize,
        n_out: usize,
        propagator: Box<dyn Propagator>,
    ) -> Self {
        Self {
            id,
            n_endo,
            n_exo,
            n_out,
            cost_hint: None,
            propagator,
        }
    }

    /// Wraps an infallible closure.
    pub fn from_fn<F>(id: usize, n_endo: usize, n_exo: usize, n_out: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::new(id, n_endo, n_exo, n_out, Box::new(FnPropagator(f)))
    }

    pub fn with_cost_hint(mut self, seconds: f64) -> Self {
        self.cost_hint = Some(seconds);
        self
    }
}

impl fmt::Debug for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Component")
            .field("id", &self.id)
            .field("n_endo", &self.n_endo)
            .field("n_exo", &self.n_exo)
            .field("n_out", &self.n_out)
            .finish_non_exhaustive()
    }
}

/// One coupling: the global endogenous slot is fed by the global output slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub endo_slot: usize,
    pub out_slot: usize,
}

impl Edge {
    pub fn new(endo_slot: usize, out_slot: usize) -> Self {
        Self {
            endo_slot,
            out_slot,
        }
    }
}

/// Start offsets of one component's blocks in the stacked vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offsets {
    pub endo: usize,
    pub exo: usize,
    pub out: usize,
}

#[derive(Debug)]
pub struct Network {
    components: Vec<Component>,
    /// Indexed by endogenous slot; each slot has exactly one source.
    sources: Vec<usize>,
    qoi_slots: Vec<usize>,
    offsets: Vec<Offsets>,
    n_endo: usize,
    n_exo: usize,
    n_out: usize,
    endo_owner: Vec<usize>,
    out_owner: Vec<usize>,
}

/// Stacked output and exogenous coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl NetworkState {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Self {
        Self { x, u }
    }
}

/// Outputs of one sweep plus the wall time spent in each component.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub outputs: Vec<f64>,
    pub component_seconds: Vec<f64>,
}

impl Network {
    /// Validates the edge map and computes stacked offsets.
    pub fn assemble(components: Vec<Component>, edges: &[Edge], qoi_slots: Vec<usize>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(components.len());
        let (mut n_endo, mut n_exo, mut n_out) = (0usize, 0usize, 0usize);
        let mut endo_owner = Vec::new();
        let mut out_owner = Vec::new();
        for (c, comp) in components.iter().enumerate() {
            offsets.push(Offsets {
                endo: n_endo,
                exo: n_exo,
                out: n_out,
            });
            n_endo = n_endo
                .checked_add(comp.n_endo)
                .ok_or_else(|| Error::InvalidNetwork("endogenous dimension overflow".into()))?;
            n_exo = n_exo
                .checked_add(comp.n_exo)
                .ok_or_else(|| Error::InvalidNetwork("exogenous dimension overflow".into()))?;
            n_out = n_out
                .checked_add(comp.n_out)
                .ok_or_else(|| Error::InvalidNetwork("output dimension overflow".into()))?;
            endo_owner.extend(std::iter::repeat(c).take(comp.n_endo));
            out_owner.extend(std::iter::repeat(c).take(comp.n_out));
        }

        let mut sources = vec![usize::MAX; n_endo];
        for e in edges {
            if e.endo_slot >= n_endo {
                return Err(Error::InvalidNetwork(format!(
                    "endogenous slot {} out of range (n_y = {n_endo})",
                    e.endo_slot
                )));
            }
            if e.out_slot >= n_out {
                return Err(Error::InvalidNetwork(format!(
                    "output slot {} out of range (n_x = {n_out})",
                    e.out_slot
                )));
            }
            if endo_owner[e.endo_slot] == out_owner[e.out_slot] {
                return Err(Error::InvalidNetwork(format!(
                    "self-loop: component {} feeds its own endogenous slot {}",
                    endo_owner[e.endo_slot], e.endo_slot
                )));
            }
            if sources[e.endo_slot] != usize::MAX {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate endogenous slot {}",
                    e.endo_slot
                )));
            }
            sources[e.endo_slot] = e.out_slot;
        }
        if let Some(slot) = sources.iter().position(|&s| s == usize::MAX) {
            return Err(Error::InvalidNetwork(format!(
                "endogenous slot {slot} has no source"
            )));
        }
        if let Some(&q) = qoi_slots.iter().find(|&&q| q >= n_out) {
            return Err(Error::InvalidNetwork(format!(
                "QoI slot {q} out of range (n_x = {n_out})"
            )));
        }
        Ok(Self {
            components,
            sources,
            qoi_slots,
            offsets,
            n_endo,
            n_exo,
            n_out,
            endo_owner,
            out_owner,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn offsets(&self) -> &[Offsets] {
        &self.offsets
    }

    pub fn n_endo(&self) -> usize {
        self.n_endo
    }

    pub fn n_exo(&self) -> usize {
        self.n_exo
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn qoi_slots(&self) -> &[usize] {
        &self.qoi_slots
    }

    /// Edges ordered by endogenous slot.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.sources
            .iter()
            .enumerate()
            .map(|(endo_slot, &out_slot)| Edge::new(endo_slot, out_slot))
    }

    /// Output slot feeding each endogenous slot.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn endo_owner(&self, endo_slot: usize) -> usize {
        self.endo_owner[endo_slot]
    }

    pub fn out_owner(&self, out_slot: usize) -> usize {
        self.out_owner[out_slot]
    }

    pub fn endo_range(&self, c: usize) -> std::ops::Range<usize> {
        let o = self.offsets[c].endo;
        o..o + self.components[c].n_endo
    }

    pub fn exo_range(&self, c: usize) -> std::ops::Range<usize> {
        let o = self.offsets[c].exo;
        o..o + self.components[c].n_exo
    }

    pub fn out_range(&self, c: usize) -> std::ops::Range<usize> {
        let o = self.offsets[c].out;
        o..o + self.components[c].n_out
    }

    /// Component-level digraph: `(source, target)` for every distinct pair
    /// linked by at least one edge, sorted.
    pub fn component_edges(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .edges()
            .map(|e| (self.out_owner[e.out_slot], self.endo_owner[e.endo_slot]))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// y = A x: copies every source output into its endogenous slot.
    pub fn gather_endo(&self, x: &[f64]) -> Vec<f64> {
        self.sources.iter().map(|&s| x[s]).collect()
    }

    /// Endogenous inputs of component `c`, reading from `x`.
    pub fn gather_component(&self, c: usize, x: &[f64]) -> Vec<f64> {
        self.sources[self.endo_range(c)].iter().map(|&s| x[s]).collect()
    }

    pub(crate) fn check_state(&self, s: &NetworkState) -> Result<()> {
        if s.x.len() != self.n_out {
            return Err(Error::DimensionMismatch {
                what: "stacked outputs",
                expected: self.n_out,
                got: s.x.len(),
            });
        }
        if s.u.len() != self.n_exo {
            return Err(Error::DimensionMismatch {
                what: "stacked exogenous inputs",
                expected: self.n_exo,
                got: s.u.len(),
            });
        }
        Ok(())
    }

    /// Runs one component on explicit inputs, checking the output length.
    pub fn propagate_component(&self, c: usize, endo: &[f64], u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let comp = &self.components[c];
        let start = Instant::now();
        let out = comp.propagator.propagate(endo, &u[self.exo_range(c)])?;
        let secs = start.elapsed().as_secs_f64();
        if out.len() != comp.n_out {
            return Err(Error::PropagatorOutput {
                component: c,
                expected: comp.n_out,
                got: out.len(),
            });
        }
        Ok((out, secs))
    }

    /// Propagates the listed components concurrently, each reading its
    /// endogenous inputs through `endo_for`. Results come back in the order
    /// of `which`.
    pub(crate) fn propagate_set<E>(
        &self,
        which: &[usize],
        u: &[f64],
        endo_for: E,
    ) -> Result<Vec<(Vec<f64>, f64)>>
    where
        E: Fn(usize) -> Vec<f64> + Sync,
    {
        which
            .par_iter()
            .map(|&c| self.propagate_component(c, &endo_for(c), u))
            .collect()
    }

    /// F(x, u) with per-component timings.
    pub fn propagate_all(&self, s: &NetworkState) -> Result<Propagation> {
        self.check_state(s)?;
        let all: Vec<usize> = (0..self.n_components()).collect();
        let results = self.propagate_set(&all, &s.u, |c| self.gather_component(c, &s.x))?;
        let mut outputs = vec![0.0; self.n_out];
        let mut component_seconds = vec![0.0; self.n_components()];
        for (c, (out, secs)) in results.into_iter().enumerate() {
            outputs[self.out_range(c)].copy_from_slice(&out);
            component_seconds[c] = secs;
        }
        Ok(Propagation {
            outputs,
            component_seconds,
        })
    }

    /// F(x, u): every component applied to its gathered inputs, stacked in
    /// component order.
    pub fn apply_f(&self, s: &NetworkState) -> Result<Vec<f64>> {
        Ok(self.propagate_all(s)?.outputs)
    }

    /// x − F(x, u).
    pub fn residual(&self, s: &NetworkState) -> Result<Vec<f64>> {
        let fx = self.apply_f(s)?;
        Ok(s.x.iter().zip(&fx).map(|(a, b)| a - b).collect())
    }

    /// ‖x − F(x,u)‖₂ / ‖0 − F(0,u)‖₂.
    pub fn relative_residual(&self, s: &NetworkState) -> Result<f64> {
        let zero = NetworkState::new(vec![0.0; self.n_out], s.u.clone());
        let denom = norm2(&self.apply_f(&zero)?);
        if denom == 0.0 {
            return Err(Error::ZeroInitialResidual);
        }
        Ok(norm2(&self.residual(s)?) / denom)
    }

    /// q = selected output slots, in QoI order.
    pub fn extract_qoi(&self, x: &[f64]) -> Vec<f64> {
        self.qoi_slots.iter().map(|&q| x[q]).collect()
    }

    pub fn topology(&self) -> NetworkTopology {
        NetworkTopology {
            components: self
                .components
                .iter()
                .map(|c| ComponentShape {
                    id: c.id,
                    n_endo: c.n_endo,
                    n_exo: c.n_exo,
                    n_out: c.n_out,
                })
                .collect(),
            edges: self.edges().map(|e| [e.endo_slot, e.out_slot]).collect(),
            qoi: self.qoi_slots.clone(),
        }
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentShape {
    pub id: usize,
    pub n_endo: usize,
    pub n_exo: usize,
    pub n_out: usize,
}

/// JSON-serializable network shape: `{components, edges, qoi}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub components: Vec<ComponentShape>,
    pub edges: Vec<[usize; 2]>,
    pub qoi: Vec<usize>,
}

impl NetworkTopology {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Rebuilds a network from this shape, attaching one propagator per
    /// component in order.
    pub fn instantiate(&self, propagators: Vec<Box<dyn Propagator>>) -> Result<Network> {
        if propagators.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                what: "propagator count",
                expected: self.components.len(),
                got: propagators.len(),
            });
        }
        let comps = self
            .components
            .iter()
            .zip(propagators)
            .map(|(s, p)| Component::new(s.id, s.n_endo, s.n_exo, s.n_out, p))
            .collect();
        let edges: Vec<Edge> = self.edges.iter().map(|e| Edge::new(e[0], e[1])).collect();
        Network::assemble(comps, &edges, self.qoi.clone())
    }
}
