//! Command-line driver: feeder synthesis, central and distributed runs, and
//! run comparison.
//!
//! Exit codes: 0 on success, 2 on invalid flags, unreadable inputs or
//! mismatched records, 3 when the distributed run reaches no consensus, 4
//! when a subproblem fails or the central solve exceeds its time budget.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dopf_core::network::DerMode;
use dopf_core::{
    build_feeder, decompose, place_ders, run_central, run_distributed, CoordinatorError,
    DerScenario, FeederSpec, FpiConfig, Objective, Power, RadialNetwork, RunRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_CONSENSUS: i32 = 3;
pub const EXIT_SOLVE_FAILURE: i32 = 4;

/// File names written by `run` into its output directory.
pub const RECORD_FILE: &str = "record.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const VOLTAGE_FILE: &str = "voltages.csv";

#[derive(Debug, Parser)]
#[command(name = "dopf", version, about = "Distributed optimal power flow for radial feeders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feeder and write it as network JSON.
    Synth(SynthArgs),
    /// Solve a network centrally or by area decomposition.
    Run(RunArgs),
    /// Compare two run records, or run a central scaling sweep.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub laterals: usize,
    #[arg(long, default_value_t = 20)]
    pub neighborhoods: usize,
    #[arg(long, default_value_t = 20)]
    pub households: usize,
    #[arg(long = "main-nodes", default_value_t = 4)]
    pub main_nodes: usize,
    /// Use the household load and line impedance of the reference case
    /// instead of the raw defaults.
    #[arg(long)]
    pub reference: bool,
    /// Load per bus, per-unit active part.
    #[arg(long)]
    pub load_p: Option<f64>,
    /// Load per bus, per-unit reactive part.
    #[arg(long)]
    pub load_q: Option<f64>,
    /// Branch resistance in per-unit.
    #[arg(long)]
    pub r: Option<f64>,
    /// Branch reactance in per-unit.
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(short = 'o', long = "output", required = true)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Central,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveArg {
    LossMin,
    DerMax,
    DvMin,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::LossMin => Objective::LossMin,
            ObjectiveArg::DerMax => Objective::DerMax,
            ObjectiveArg::DvMin => Objective::DeltaVMin,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "distributed")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "loss-min")]
    pub objective: ObjectiveArg,
    /// Network JSON file.
    #[arg(short = 'n', long = "network")]
    pub network: PathBuf,
    /// Replace the file's DERs with a seeded placement at this fraction of
    /// load buses. Without it the DERs in the file are used as they are.
    #[arg(long)]
    pub penetration: Option<f64>,
    /// DER rating in kVA (defaults: 8.4 for reactive dispatch, 21 for
    /// active dispatch).
    #[arg(long)]
    pub rating_kva: Option<f64>,
    /// Measured output (reactive dispatch) or active cap (active dispatch)
    /// in kW (defaults: 7 and 21).
    #[arg(long)]
    pub der_kw: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub load_multiplier: f64,
    /// Substation squared voltage; DER maximization defaults to 1.05².
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub max_area_nodes: usize,
    /// FPI damping; defaults to the objective's value.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_macro_iters: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Optimality tolerance of every area or central solve.
    #[arg(long, default_value_t = 1e-8)]
    pub kkt_tol: f64,
    /// Wall-clock budget of a central solve in seconds.
    #[arg(long, default_value_t = 600.0)]
    pub time_budget_s: f64,
    /// Parallel area solves; defaults to DOPF_THREADS or all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(short = 'o', long = "output", default_value = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Two record files: reference first.
    #[arg(num_args = 0..=2)]
    pub records: Vec<PathBuf>,
    /// Comma-separated bus counts for a central scaling sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    #[arg(long, value_enum, default_value = "loss-min")]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 1.0)]
    pub penetration: f64,
    #[arg(long, default_value_t = 100)]
    pub max_area_nodes: usize,
    /// Central solves per size; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 600.0)]
    pub time_budget_s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Sweep CSV destination; printed to stdout when absent.
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

/// Every setting of a `run`, echoed into its record so it can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: ModeArg,
    pub objective: ObjectiveArg,
    pub network: PathBuf,
    pub penetration: Option<f64>,
    pub rating_kva: f64,
    pub der_kw: f64,
    pub load_multiplier: f64,
    pub v0: f64,
    pub max_area_nodes: usize,
    pub alpha: f64,
    pub eps_tol: f64,
    pub max_macro_iters: usize,
    pub seed: u64,
    pub kkt_tol: f64,
    pub time_budget_s: f64,
    pub threads: Option<usize>,
    pub output: PathBuf,
}

/// Content of `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config: RunConfig,
    pub record: RunRecord,
}

impl RunConfig {
    fn from_args(a: &RunArgs, network_v0: f64) -> Result<Self> {
        let objective: Objective = a.objective.into();
        let active = objective.dispatches_active();
        let cfg = RunConfig {
            mode: a.mode,
            objective: a.objective,
            network: a.network.clone(),
            penetration: a.penetration,
            rating_kva: a.rating_kva.unwrap_or(if active { 21.0 } else { 8.4 }),
            der_kw: a.der_kw.unwrap_or(if active { 21.0 } else { 7.0 }),
            load_multiplier: a.load_multiplier,
            v0: a.v0.unwrap_or(if active { objective.default_v0() } else { network_v0 }),
            max_area_nodes: a.max_area_nodes,
            alpha: a.alpha.unwrap_or(objective.default_alpha()),
            eps_tol: a.eps_tol,
            max_macro_iters: a.max_macro_iters,
            seed: a.seed,
            kkt_tol: a.kkt_tol,
            time_budget_s: a.time_budget_s,
            threads: a.threads,
            output: a.output.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if let Some(p) = self.penetration {
            if !(0.0..=1.0).contains(&p) {
                bail!("penetration {p} outside [0, 1]");
            }
        }
        if self.max_area_nodes == 0 {
            bail!("max-area-nodes must be at least 1");
        }
        if !(self.alpha >= 0.0) {
            bail!("alpha must be nonnegative");
        }
        if !(self.eps_tol > 0.0 && self.kkt_tol > 0.0) {
            bail!("tolerances must be positive");
        }
        if !(self.v0 > 0.0) {
            bail!("v0 must be positive");
        }
        if !(self.time_budget_s > 0.0) {
            bail!("time budget must be positive");
        }
        if self.max_macro_iters == 0 {
            bail!("max-macro-iters must be at least 1");
        }
        Ok(())
    }

    fn fpi(&self) -> FpiConfig {
        FpiConfig {
            alpha: self.alpha,
            eps_tol: self.eps_tol,
            max_macro_iters: self.max_macro_iters,
            threads: self.threads,
            kkt_tol: self.kkt_tol,
            ..FpiConfig::default()
        }
    }

    /// Applies the DER scenario and substation voltage to `network`.
    pub fn prepare(&self, network: &RadialNetwork) -> Result<RadialNetwork> {
        let mut net = network.clone();
        if let Some(p) = self.penetration {
            let objective: Objective = self.objective.into();
            let scenario = DerScenario {
                penetration: p,
                rating_kva: self.rating_kva,
                p_nominal_kw: self.der_kw,
                mode: if objective.dispatches_active() {
                    DerMode::ActiveDispatch
                } else {
                    DerMode::ReactiveDispatch
                },
                load_multiplier: self.load_multiplier,
                seed: self.seed,
            };
            net = place_ders(&net, &scenario)?;
        }
        Ok(net.with_v0(self.v0)?)
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let base = if a.reference { FeederSpec::reference_case() } else { FeederSpec::default() };
    let spec = FeederSpec {
        laterals: a.laterals,
        neighborhoods_per_lateral: a.neighborhoods,
        households_per_neighborhood: a.households,
        main_nodes_between_laterals: a.main_nodes,
        load: Power::new(a.load_p.unwrap_or(base.load.p), a.load_q.unwrap_or(base.load.q)),
        z: (a.r.unwrap_or(base.z.0), a.x.unwrap_or(base.z.1)),
        ..base
    };
    let net = build_feeder(&spec)?;
    net.save(&a.output).with_context(|| format!("writing {}", a.output.display()))?;
    println!("buses {} branches {}", net.num_buses(), net.branches().len());
    Ok(EXIT_OK)
}

pub fn cmd_run(a: &RunArgs) -> Result<i32> {
    let raw = RadialNetwork::load(&a.network)
        .with_context(|| format!("reading {}", a.network.display()))?;
    let config = RunConfig::from_args(a, raw.v0())?;
    let net = config.prepare(&raw)?;
    let objective: Objective = config.objective.into();
    let outcome = match config.mode {
        ModeArg::Central => run_central(
            &net,
            objective,
            config.kkt_tol,
            Duration::from_secs_f64(config.time_budget_s),
        ),
        ModeArg::Distributed => {
            let partition = decompose(&net, config.max_area_nodes);
            run_distributed(&net, &partition, objective, &config.fpi())
        }
    };
    let (record, code) = match outcome {
        Ok(r) => (r, EXIT_OK),
        Err(CoordinatorError::NoConsensus { record }) => (*record, EXIT_NO_CONSENSUS),
        Err(
            e @ (CoordinatorError::SubproblemFailure { .. }
            | CoordinatorError::TimeBudgetExceeded { .. }),
        ) => {
            eprintln!("error: {e}");
            return Ok(EXIT_SOLVE_FAILURE);
        }
        Err(e) => return Err(e.into()),
    };
    write_outputs(&config, &record)?;
    println!(
        "{} {:?}: objective {:.6} {}, {} macro-iterations, final residual {:.3e}, {:.3} s",
        if record.converged { "converged" } else { "not converged" },
        objective,
        record.objective,
        record.objective_unit,
        record.macro_iterations,
        record.final_residual(),
        record.wall_time_s
    );
    if code == EXIT_NO_CONSENSUS {
        eprintln!("error: no consensus within {} macro-iterations", config.max_macro_iters);
    }
    Ok(code)
}

fn write_outputs(config: &RunConfig, record: &RunRecord) -> Result<()> {
    let dir = &config.output;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let out = RunOutput { config: config.clone(), record: record.clone() };
    fs::write(dir.join(RECORD_FILE), serde_json::to_string_pretty(&out)?)?;

    let mut w = csv::Writer::from_path(dir.join(CONVERGENCE_FILE))?;
    w.write_record(["n", "residual", "objective_kw", "max_area_time_s"])?;
    for it in &record.iterations {
        w.write_record([
            it.n.to_string(),
            format!("{:e}", it.residual),
            it.objective.to_string(),
            it.max_area_time_s.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(VOLTAGE_FILE))?;
    w.write_record(["bus_id", "v_pu_magnitude"])?;
    for (bus, v) in record.state.v.iter().enumerate() {
        w.write_record([bus.to_string(), v.max(0.0).sqrt().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `record.json` written by `run`.
pub fn read_output(path: &Path) -> Result<RunOutput> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a run record", path.display()))
}

/// Relative gap of `candidate` to `reference` in percent.
pub fn objective_gap_pct(reference: f64, candidate: f64) -> f64 {
    if reference == candidate {
        return 0.0;
    }
    100.0 * (candidate - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
}

pub fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    match (a.records.len(), a.sweep.is_empty()) {
        (2, true) => compare_records(&a.records[0], &a.records[1]),
        (0, false) => {
            let rows = scaling_sweep(a)?;
            let text = sweep_csv(&rows)?;
            match &a.output {
                Some(p) => {
                    fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
        _ => bail!("give either two record files or --sweep"),
    }
}

fn compare_records(a: &Path, b: &Path) -> Result<i32> {
    let ra = read_output(a)?.record;
    let rb = read_output(b)?.record;
    if ra.objective_kind != rb.objective_kind || ra.num_buses != rb.num_buses {
        bail!(
            "records describe different problems ({:?} on {} buses vs {:?} on {} buses)",
            ra.objective_kind,
            ra.num_buses,
            rb.objective_kind,
            rb.num_buses
        );
    }
    println!(
        "{:<12} {:>10} {:>6} {:>12} {:>10} {:>10}",
        "record", "mode", "areas", "objective", "iters", "time_s"
    );
    for (name, r) in [("reference", &ra), ("candidate", &rb)] {
        println!(
            "{:<12} {:>10} {:>6} {:>12.6} {:>10} {:>10.3}",
            name,
            format!("{:?}", r.mode).to_lowercase(),
            r.num_areas,
            r.objective,
            r.macro_iterations,
            r.wall_time_s
        );
    }
    println!("gap {:.6}%", objective_gap_pct(ra.objective, rb.objective));
    Ok(EXIT_OK)
}

/// One size of a scaling sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub nodes: usize,
    pub central_time_s: f64,
    pub central_ok: bool,
    pub distributed_time_s: f64,
    pub distributed_ok: bool,
    pub macro_iterations: usize,
    pub gap_pct: f64,
}

/// Central and distributed solves of sized reference feeders.
pub fn scaling_sweep(a: &CompareArgs) -> Result<Vec<SweepRow>> {
    let objective: Objective = a.objective.into();
    let budget = Duration::from_secs_f64(a.time_budget_s);
    let mut rows = Vec::with_capacity(a.sweep.len());
    for &target in &a.sweep {
        let net = build_feeder(&FeederSpec::sized(target))?;
        let scenario = if objective.dispatches_active() {
            DerScenario::hosting(a.penetration, a.seed)
        } else {
            DerScenario::volt_var(a.penetration, a.seed)
        };
        let net = place_ders(&net, &scenario)?;
        let net =
            if objective.dispatches_active() { net.with_v0(objective.default_v0())? } else { net };

        let mut central_time = f64::INFINITY;
        let mut central = None;
        for _ in 0..a.repeats.max(1) {
            let t = Instant::now();
            let r = run_central(&net, objective, 1e-8, budget);
            central_time = central_time.min(t.elapsed().as_secs_f64());
            match r {
                Ok(r) => central = Some(r),
                Err(e) => {
                    log::warn!("central solve on {} buses failed: {e}", net.num_buses());
                    central = None;
                    break;
                }
            }
        }
        let partition = decompose(&net, a.max_area_nodes);
        let t = Instant::now();
        let dist =
            run_distributed(&net, &partition, objective, &FpiConfig::for_objective(objective));
        let distributed_time = t.elapsed().as_secs_f64();
        let gap = match (&central, &dist) {
            (Some(c), Ok(d)) => objective_gap_pct(c.objective, d.objective),
            _ => f64::NAN,
        };
        rows.push(SweepRow {
            nodes: net.num_buses(),
            central_time_s: central_time,
            central_ok: central.is_some(),
            distributed_time_s: distributed_time,
            distributed_ok: dist.is_ok(),
            macro_iterations: dist.as_ref().map_or(0, |d| d.macro_iterations),
            gap_pct: gap,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
