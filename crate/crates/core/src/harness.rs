//! Experiment orchestration: strong and weak scaling sweeps, the permutation
//! study, and CSV/JSON artifacts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_diffusion::{
    build_benchmark_network, global_uq_solve_timed, write_field_csv, BenchmarkMetadata, Mesh,
    NewtonOptions, StochasticInputs,
};
use crate::network::Network;
use crate::pce::PceExpansion;
use crate::relaxation::{
    dag_from_permutation, find_low_nseq_permutation, solve, DagSchedule, Method, Permutation,
    SolveOutcome, SolveStatus, SolverConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Strong,
    Weak,
    Permutations,
    Verify,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "run" => Ok(Mode::Single),
            "strong" => Ok(Mode::Strong),
            "weak" => Ok(Mode::Weak),
            "permutations" | "perms" => Ok(Mode::Permutations),
            "verify" => Ok(Mode::Verify),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Jacobi,
    GaussSeidel,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Jacobi => vec![Method::Jacobi],
            MethodChoice::GaussSeidel => vec![Method::GaussSeidel],
            MethodChoice::Both => vec![Method::Jacobi, Method::GaussSeidel],
        }
    }
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(MethodChoice::Both),
            other => Ok(match other.parse::<Method>()? {
                Method::Jacobi => MethodChoice::Jacobi,
                Method::GaussSeidel => MethodChoice::GaussSeidel,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Nodes per axis of the strong-scaling mesh.
    pub mesh: usize,
    /// Each entry s means an s×s decomposition.
    pub decompositions: Vec<usize>,
    pub method: MethodChoice,
    pub omegas: Vec<f64>,
    pub anderson_memories: Vec<usize>,
    pub tol: f64,
    pub error_study_tol: f64,
    pub max_iter: usize,
    /// Random permutations in the permutation study.
    pub n_perm_trials: usize,
    /// Random candidates tried by the low-n_seq permutation search.
    pub search_trials: usize,
    pub rng_seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub newton: NewtonOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Single,
            mesh: 41,
            decompositions: vec![2, 4, 8],
            method: MethodChoice::Both,
            omegas: vec![2.0 / 3.0, 1.0],
            anderson_memories: vec![0, 5],
            tol: 1e-3,
            error_study_tol: 1e-10,
            max_iter: 10_000,
            n_perm_trials: 10,
            search_trials: 20,
            rng_seed: 0,
            output_dir: PathBuf::from("netuq_out"),
            threads: None,
            newton: NewtonOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.tol > 0.0) || !(self.error_study_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.decompositions.is_empty() || self.omegas.is_empty() || self.anderson_memories.is_empty() {
            return bad("decompositions, omegas and memories must be non-empty".into());
        }
        if self.mesh < 2 {
            return bad(format!("mesh of {} nodes per axis", self.mesh));
        }
        for &s in &self.decompositions {
            if s == 0 {
                return bad("decomposition count must be positive".into());
            }
            if self.mode == Mode::Strong || self.mode == Mode::Single || self.mode == Mode::Permutations {
                if (self.mesh - 1) % s != 0 {
                    return Err(Error::IndivisibleMesh {
                        nodes: self.mesh,
                        parts: s,
                    });
                }
            }
        }
        for &w in &self.omegas {
            SolverConfig {
                omega: w,
                tol: self.tol,
                ..Default::default()
            }
            .validate()?;
        }
        Ok(())
    }
}

/// Nodes per axis of the weak-scaling mesh for an s×s decomposition.
pub fn weak_mesh_nodes(s: usize) -> usize {
    5 * s + 1
}

/// How the Gauss–Seidel permutation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermChoice {
    /// Low-n_seq search with the given number of random candidates and seed.
    Search { trials: usize, seed: u64 },
    /// Uniformly random permutation from the seed.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub mesh: usize,
    pub decomposition: usize,
    pub method: Method,
    pub omega: f64,
    pub memory: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub perm: PermChoice,
}

impl RunSpec {
    pub fn run_id(&self, mode: &str) -> String {
        let mut id = format!(
            "{mode}_n{}_s{}_{}_w{:.3}_m{}",
            self.mesh, self.decomposition, self.method, self.omega, self.memory
        );
        if let PermChoice::Random { seed } = self.perm {
            id.push_str(&format!("_p{seed}"));
        }
        id
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            omega: self.omega,
            tol: self.tol,
            max_iter: self.max_iter,
            anderson_memory: self.memory,
            anderson_restart: None,
        }
    }
}

/// Monolithic reference solution on one mesh.
#[derive(Debug, Clone)]
pub struct GlobalTruth {
    pub mesh: Mesh,
    pub field: PceExpansion,
    pub serial_seconds: f64,
}

pub fn global_truth(nodes: usize, newton: NewtonOptions) -> Result<GlobalTruth> {
    let mesh = Mesh::unit_square(nodes, nodes)?;
    let (field, serial_seconds) = global_uq_solve_timed(&mesh, &StochasticInputs::benchmark(), newton)?;
    Ok(GlobalTruth {
        mesh,
        field,
        serial_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub mode: String,
    pub mesh: usize,
    pub decomposition: usize,
    pub method: Method,
    pub omega: f64,
    pub memory: usize,
    pub tol: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_residual: f64,
    pub n_seq: usize,
    pub permutation: String,
    pub probe0_rel_err: f64,
    pub probe1_rel_err: f64,
    pub sim_parallel_s: f64,
    pub measured_s: f64,
    pub global_solve_s: f64,
    pub speedup: f64,
}

impl RunRecord {
    /// Equality on every field that does not depend on wall-clock time or on
    /// the mode label.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.mesh == other.mesh
            && self.decomposition == other.decomposition
            && self.method == other.method
            && self.omega == other.omega
            && self.memory == other.memory
            && self.tol == other.tol
            && self.status == other.status
            && self.iterations == other.iterations
            && self.final_residual == other.final_residual
            && self.n_seq == other.n_seq
            && self.permutation == other.permutation
            && self.probe0_rel_err == other.probe0_rel_err
            && self.probe1_rel_err == other.probe1_rel_err
    }
}

/// Everything produced by one benchmark solve.
pub struct RunResult {
    pub record: RunRecord,
    pub outcome: SolveOutcome,
    pub meta: BenchmarkMetadata,
    pub network: Network,
}

fn relative_error(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = want.iter().map(|a| a * a).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn schedule_for(net: &Network, method: Method, perm: PermChoice) -> Result<DagSchedule> {
    if method == Method::Jacobi {
        return Ok(DagSchedule::jacobi(net));
    }
    let perm = match perm {
        PermChoice::Search { trials, seed } => find_low_nseq_permutation(net, trials, seed)?.0,
        PermChoice::Random { seed } => random_permutation(net.n_components(), seed),
    };
    dag_from_permutation(&perm, net)
}

pub fn random_permutation(n: usize, seed: u64) -> Permutation {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Permutation::new(order).expect("shuffled identity is a permutation")
}

/// Builds the benchmark network for `spec`, solves it and compares the probe
/// coefficients against `truth` (which must live on the same mesh).
pub fn run_benchmark(mode: &str, spec: &RunSpec, truth: &GlobalTruth, newton: NewtonOptions) -> Result<RunResult> {
    let mesh = Mesh::unit_square(spec.mesh, spec.mesh)?;
    if mesh != truth.mesh {
        return Err(Error::InvalidConfig("reference solution lives on a different mesh".into()));
    }
    let inputs = StochasticInputs::benchmark();
    let (net, meta) = build_benchmark_network(&mesh, spec.decomposition, spec.decomposition, &inputs, newton)?;
    let sched = schedule_for(&net, spec.method, spec.perm)?;
    let u = inputs.network_inputs(net.n_components());
    let start = Instant::now();
    let outcome = solve(&net, &u, spec.method, &spec.solver_config(), Some(&sched))?;
    let measured_s = start.elapsed().as_secs_f64();

    let p = meta.n_terms;
    let errs: Vec<f64> = meta
        .probes
        .iter()
        .zip(&meta.probe_slots)
        .map(|(&(i, j), &slot)| {
            relative_error(&outcome.state.x[slot..slot + p], &truth.field.component(mesh.node(i, j)))
        })
        .collect();
    let sim = outcome.trace.total_wall_s();
    let record = RunRecord {
        run_id: spec.run_id(mode),
        mode: mode.to_string(),
        mesh: spec.mesh,
        decomposition: spec.decomposition,
        method: spec.method,
        omega: spec.omega,
        memory: spec.memory,
        tol: spec.tol,
        status: outcome.trace.status,
        iterations: outcome.trace.iterations(),
        final_residual: outcome.trace.final_residual(),
        n_seq: sched.n_seq(),
        permutation: sched
            .perm()
            .order()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" "),
        probe0_rel_err: errs.first().copied().unwrap_or(0.0),
        probe1_rel_err: errs.get(1).copied().unwrap_or(0.0),
        sim_parallel_s: sim,
        measured_s,
        global_solve_s: truth.serial_seconds,
        speedup: if sim > 0.0 { truth.serial_seconds / sim } else { f64::INFINITY },
    };
    log::info!(
        "{}: {} after {} iterations (residual {:.3e})",
        record.run_id,
        record.status,
        record.iterations,
        record.final_residual
    );
    Ok(RunResult {
        record,
        outcome,
        meta,
        network: net,
    })
}

fn sweep_specs(cfg: &ExperimentConfig, mesh_for: impl Fn(usize) -> usize, tol: f64) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &s in &cfg.decompositions {
        for method in cfg.method.methods() {
            for &omega in &cfg.omegas {
                for &memory in &cfg.anderson_memories {
                    specs.push(RunSpec {
                        mesh: mesh_for(s),
                        decomposition: s,
                        method,
                        omega,
                        memory,
                        tol,
                        max_iter: cfg.max_iter,
                        perm: PermChoice::Search {
                            trials: cfg.search_trials,
                            seed: cfg.rng_seed,
                        },
                    });
                }
            }
        }
    }
    specs
}

/// Runs each spec, reusing one reference solution per mesh size.
fn run_specs(mode: &str, specs: &[RunSpec], newton: NewtonOptions, mut keep: impl FnMut(RunResult)) -> Result<()> {
    let mut truths: Vec<GlobalTruth> = Vec::new();
    for spec in specs {
        let idx = match truths.iter().position(|t| t.mesh.nx == spec.mesh) {
            Some(i) => i,
            None => {
                truths.push(global_truth(spec.mesh, newton)?);
                truths.len() - 1
            }
        };
        keep(run_benchmark(mode, spec, &truths[idx], newton)?);
    }
    Ok(())
}

/// Fixed mesh, growing decomposition.
pub fn run_strong(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let specs = sweep_specs(cfg, |_| cfg.mesh, cfg.tol);
    let mut out = Vec::new();
    run_specs("strong", &specs, cfg.newton, |r| out.push(r))?;
    Ok(out)
}

/// Mesh grows with the decomposition so that subdomains keep their size.
pub fn run_weak(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let specs = sweep_specs(cfg, weak_mesh_nodes, cfg.tol);
    let mut out = Vec::new();
    run_specs("weak", &specs, cfg.newton, |r| out.push(r))?;
    Ok(out)
}

/// Solves under `n_perm_trials` random permutations for each decomposition.
pub fn run_permutation_study(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let memory = if cfg.anderson_memories.contains(&5) { 5 } else { cfg.anderson_memories[0] };
    let mut specs = Vec::new();
    for &s in &cfg.decompositions {
        for k in 0..cfg.n_perm_trials {
            specs.push(RunSpec {
                mesh: cfg.mesh,
                decomposition: s,
                method: Method::GaussSeidel,
                omega: 1.0,
                memory,
                tol: cfg.tol,
                max_iter: cfg.max_iter,
                perm: PermChoice::Random {
                    seed: cfg.rng_seed.wrapping_add(k as u64),
                },
            });
        }
    }
    let mut out = Vec::new();
    run_specs("perms", &specs, cfg.newton, |r| out.push(r))?;
    Ok(out)
}

/// Min, mean and max of a statistic over a set of records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len().max(1) as f64;
        Self {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / n,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub decomposition: usize,
    pub iterations: Spread,
    pub n_seq: Spread,
    pub sim_parallel_s: Spread,
}

pub fn summarize_permutations(records: &[RunRecord]) -> Vec<PermutationSummary> {
    let mut ds: Vec<usize> = records.iter().map(|r| r.decomposition).collect();
    ds.sort_unstable();
    ds.dedup();
    ds.into_iter()
        .map(|d| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.decomposition == d).collect();
            PermutationSummary {
                decomposition: d,
                iterations: Spread::of(rs.iter().map(|r| r.iterations as f64)),
                n_seq: Spread::of(rs.iter().map(|r| r.n_seq as f64)),
                sim_parallel_s: Spread::of(rs.iter().map(|r| r.sim_parallel_s)),
            }
        })
        .collect()
}

/// `<out>/runs.csv` plus one trace per run.
pub fn write_run_artifacts(dir: &Path, results: &[RunResult]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("runs.csv"))?));
    for r in results {
        wtr.serialize(&r.record)?;
        let f = BufWriter::new(File::create(dir.join(format!("trace_{}.csv", r.record.run_id)))?);
        r.outcome.trace.write_csv(f)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// One `field_<i>_<j>.csv` per basis term, named after the multi-index.
pub fn write_field_artifacts(dir: &Path, truth: &GlobalTruth) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (t, mi) in truth.field.basis().indices().iter().enumerate() {
        let name = mi
            .entries()
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join("_");
        let f = BufWriter::new(File::create(dir.join(format!("field_{name}.csv")))?);
        write_field_csv(&truth.mesh, &truth.field, t, f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_json_overrides() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"mode": "weak", "tol": 1e-4}"#).unwrap();
        assert_eq!(cfg.mode, Mode::Weak);
        assert_eq!(cfg.tol, 1e-4);
        assert_eq!(cfg.decompositions, vec![2, 4, 8]);
        assert!(cfg.validate().is_ok());
        let bad = ExperimentConfig {
            mode: Mode::Strong,
            decompositions: vec![3],
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::IndivisibleMesh { .. })));
        let bad = ExperimentConfig {
            omegas: vec![0.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_strong_sweep_size() {
        let cfg = ExperimentConfig::default();
        assert_eq!(sweep_specs(&cfg, |_| 41, cfg.tol).len(), 24);
        assert_eq!(weak_mesh_nodes(8), 41);
    }

    #[test]
    fn single_subdomain_run_and_artifacts() {
        let truth = global_truth(11, NewtonOptions::default()).unwrap();
        let spec = RunSpec {
            mesh: 11,
            decomposition: 1,
            method: Method::Jacobi,
            omega: 1.0,
            memory: 0,
            tol: 1e-3,
            max_iter: 100,
            perm: PermChoice::Search { trials: 1, seed: 0 },
        };
        let r = run_benchmark("single", &spec, &truth, NewtonOptions::default()).unwrap();
        assert_eq!(r.record.iterations, 1);
        assert!(r.record.probe0_rel_err < 1e-12);

        let dir = tempfile::tempdir().unwrap();
        write_run_artifacts(dir.path(), std::slice::from_ref(&r)).unwrap();
        let back = read_runs_csv(&dir.path().join("runs.csv")).unwrap();
        assert!(back[0].same_outcome(&r.record));
        assert!(dir.path().join(format!("trace_{}.csv", r.record.run_id)).exists());
        write_field_artifacts(dir.path(), &truth).unwrap();
        assert!(dir.path().join("field_0_0.csv").exists());
        assert!(dir.path().join("field_0_3.csv").exists());
    }

    #[test]
    fn permutation_summary() {
        let rec = |d, it, ns| RunRecord {
            run_id: String::new(),
            mode: "perms".into(),
            mesh: 41,
            decomposition: d,
            method: Method::GaussSeidel,
            omega: 1.0,
            memory: 5,
            tol: 1e-3,
            status: SolveStatus::Converged,
            iterations: it,
            final_residual: 0.0,
            n_seq: ns,
            permutation: String::new(),
            probe0_rel_err: 0.0,
            probe1_rel_err: 0.0,
            sim_parallel_s: 1.0,
            measured_s: 1.0,
            global_solve_s: 1.0,
            speedup: 1.0,
        };
        let s = summarize_permutations(&[rec(2, 10, 2), rec(2, 14, 4), rec(4, 7, 3)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].iterations, Spread { min: 10.0, mean: 12.0, max: 14.0 });
        assert_eq!(s[1].n_seq.max, 3.0);
    }
}
