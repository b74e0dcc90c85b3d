use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use netuq::harness::{
    global_truth, run_benchmark, run_permutation_study, run_strong, run_weak, summarize_permutations,
    write_field_artifacts, write_run_artifacts, ExperimentConfig, MethodChoice, Mode, PermChoice, RunResult,
    RunSpec,
};
use netuq::relaxation::{Method, SolveStatus};
use netuq::verify::{run_verify, VerifyContext, CRITERIA};
use netuq::Error;

#[derive(Parser)]
#[command(name = "netuq", version, about = "Uncertainty propagation through networks of coupled solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// One relaxation solve of the diffusion benchmark.
    Run,
    /// Fixed mesh, growing decomposition.
    Strong,
    /// Mesh grows with the decomposition.
    Weak,
    /// Gauss-Seidel under random permutations.
    Perms,
    /// Probe errors against the global solve at a tight tolerance.
    Errors,
    /// Acceptance checks.
    Verify {
        /// Comma-separated criterion ids; all when omitted.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Nodes per axis.
    #[arg(long, global = true)]
    mesh: Option<usize>,
    /// Decompositions, e.g. 2,4,8.
    #[arg(long, global = true, value_delimiter = ',')]
    decomp: Vec<usize>,
    /// jacobi, gauss_seidel or both.
    #[arg(long, global = true)]
    method: Option<MethodChoice>,
    #[arg(long, global = true, value_delimiter = ',')]
    omega: Vec<f64>,
    /// Anderson memories, e.g. 0,5.
    #[arg(long, global = true, value_delimiter = ',')]
    memory: Vec<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Random permutations per decomposition in the permutation study.
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self, mode: Mode) -> netuq::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.mode = mode;
        if let Some(m) = self.mesh {
            cfg.mesh = m;
        }
        if !self.decomp.is_empty() {
            cfg.decompositions = self.decomp.clone();
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if !self.omega.is_empty() {
            cfg.omegas = self.omega.clone();
        }
        if !self.memory.is_empty() {
            cfg.anderson_memories = self.memory.clone();
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
            cfg.error_study_tol = t;
        }
        if let Some(m) = self.max_iter {
            cfg.max_iter = m;
        }
        if let Some(t) = self.trials {
            cfg.n_perm_trials = t;
        }
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_records(results: &[RunResult]) {
    for r in results {
        let rec = &r.record;
        println!(
            "{:<40} {:>12?} iters {:>5}  n_seq {:>2}  res {:.2e}  probe err {:.2e}/{:.2e}  sim {:.2}s  speedup {:.2}",
            rec.run_id,
            rec.status,
            rec.iterations,
            rec.n_seq,
            rec.final_residual,
            rec.probe0_rel_err,
            rec.probe1_rel_err,
            rec.sim_parallel_s,
            rec.speedup
        );
    }
}

fn single_spec(cfg: &ExperimentConfig, method: Method, tol: f64) -> RunSpec {
    RunSpec {
        mesh: cfg.mesh,
        decomposition: cfg.decompositions[0],
        method,
        omega: cfg.omegas[0],
        memory: cfg.anderson_memories[0],
        tol,
        max_iter: cfg.max_iter,
        perm: PermChoice::Search {
            trials: cfg.search_trials,
            seed: cfg.rng_seed,
        },
    }
}

fn execute(cli: &Cli) -> netuq::Result<ExitCode> {
    let mode = match cli.command {
        Command::Run | Command::Errors => Mode::Single,
        Command::Strong => Mode::Strong,
        Command::Weak => Mode::Weak,
        Command::Perms => Mode::Permutations,
        Command::Verify { .. } => Mode::Verify,
    };
    let cfg = cli.common.config(mode)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;

    match &cli.command {
        Command::Run => {
            let method = cfg.method.methods()[0];
            let spec = single_spec(&cfg, method, cfg.tol);
            let truth = global_truth(spec.mesh, cfg.newton)?;
            let r = run_benchmark("single", &spec, &truth, cfg.newton)?;
            let diverged = r.record.status == SolveStatus::Diverged;
            write_field_artifacts(out, &truth)?;
            let results = [r];
            write_run_artifacts(out, &results)?;
            print_records(&results);
            return Ok(if diverged { ExitCode::from(3) } else { ExitCode::SUCCESS });
        }
        Command::Errors => {
            let mut results = Vec::new();
            for &s in &cfg.decompositions {
                let spec = RunSpec {
                    decomposition: s,
                    method: Method::GaussSeidel,
                    omega: 1.0,
                    memory: 5,
                    ..single_spec(&cfg, Method::GaussSeidel, cfg.error_study_tol)
                };
                let truth = global_truth(spec.mesh, cfg.newton)?;
                results.push(run_benchmark("errors", &spec, &truth, cfg.newton)?);
            }
            write_run_artifacts(out, &results)?;
            print_records(&results);
        }
        Command::Strong => {
            let results = run_strong(&cfg)?;
            write_run_artifacts(out, &results)?;
            print_records(&results);
        }
        Command::Weak => {
            let results = run_weak(&cfg)?;
            write_run_artifacts(out, &results)?;
            print_records(&results);
        }
        Command::Perms => {
            let results = run_permutation_study(&cfg)?;
            write_run_artifacts(out, &results)?;
            print_records(&results);
            let records: Vec<_> = results.iter().map(|r| r.record.clone()).collect();
            let summary = summarize_permutations(&records);
            fs::write(out.join("perms_summary.json"), serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Verify { only } => {
            let ids: Vec<u8> = if only.is_empty() {
                CRITERIA.iter().map(|(id, _)| *id).collect()
            } else {
                only.clone()
            };
            let mut ctx = VerifyContext::new(cfg.newton);
            let report = run_verify(&ids, &mut ctx, |r| println!("{}", r.line()));
            fs::write(out.join("verify.json"), serde_json::to_string_pretty(&report)?)?;
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    info!("artifacts in {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e @ (Error::InvalidConfig(_) | Error::IndivisibleMesh { .. } | Error::Json(_) | Error::Parse(_))) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
