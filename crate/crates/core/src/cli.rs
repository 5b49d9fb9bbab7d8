//! `sdm` command line: run manifests, degradation scenario files and the
//! curve / solve / oracle / pm / compare commands.
//!
//! Every output embeds the SHA-256 of the manifest text (plus any
//! command-line override) and the seeds in use. Worker count is not part of
//! the hash and does not change any output.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{oracle_report, solve_pm, OracleConfig, PmPolicy};
use crate::degradation::{
    defaults, posterior_update, simulate_rld, DegradationModel, RemainingLifeDistribution, SignalHistory,
    ThetaPrior,
};
use crate::error::{Error, Result};
use crate::iam::{run_iam, IamConfig};
use crate::instance::{
    generate_instance, load_instance, select_maintenance_nodes, Instance, PMedianMethod, Rounding,
};
use crate::maintcost::{build_cost_curve, build_tangent_envelope, CostCurve, CostParams};
use crate::simulate::{compare_policies, SimMode, SimulationSetup};
use crate::tsptw::{RouteSolver, SolveConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sdm", version, about = "Sensor-driven maintenance and TSPTW routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run the command named in the manifest.
    Run(CommonArgs),
    /// Posterior, remaining-life distribution and cost curve.
    Curve(CommonArgs),
    /// Iterative alignment on one instance.
    Solve(CommonArgs),
    /// Brute-force optimum, no-delay optimum and envelope bound (n <= 9).
    Oracle(CommonArgs),
    /// Periodic-maintenance benchmark route.
    Pm(CommonArgs),
    /// Simulated SDM vs PM comparison.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run manifest (TOML).
    pub manifest: PathBuf,
    /// Output directory; overrides the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Maintenance-capable nodes, comma separated; overrides the manifest.
    #[arg(long, value_delimiter = ',')]
    pub maint_nodes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Curve,
    Solve,
    Oracle,
    Pm,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedInstance {
    pub name: String,
    pub n: usize,
    pub width: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaintenanceSection {
    /// Explicit node list; takes precedence over `p`.
    pub nodes: Option<Vec<usize>>,
    /// Number of nodes chosen by p-median when `nodes` is absent.
    pub p: Option<usize>,
    /// Service time at a maintenance node; falls back to the instance file,
    /// then 5.
    pub duration: Option<f64>,
    /// Falls back to the instance file, then the default rate.
    pub cost_rate: Option<f64>,
    pub seed: u64,
}

impl Default for MaintenanceSection {
    fn default() -> Self {
        Self {
            nodes: None,
            p: None,
            duration: None,
            cost_rate: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IamSection {
    pub b: usize,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// `heuristic` or `exact`.
    pub solver: String,
    pub restarts: usize,
    pub max_no_improve: usize,
    pub seed: u64,
    pub time_limit: f64,
}

impl Default for IamSection {
    fn default() -> Self {
        let s = SolveConfig::default();
        let c = IamConfig::default();
        Self {
            b: c.b,
            epsilon: c.epsilon,
            max_iterations: c.max_iterations,
            solver: "heuristic".into(),
            restarts: s.restarts,
            max_no_improve: s.max_no_improve,
            seed: s.seed,
            time_limit: s.time_limit,
        }
    }
}

impl IamSection {
    fn route_solver(&self) -> Result<RouteSolver> {
        match self.solver.as_str() {
            "exact" => Ok(RouteSolver::Exact),
            "heuristic" => Ok(RouteSolver::Heuristic(SolveConfig {
                restarts: self.restarts,
                max_no_improve: self.max_no_improve,
                seed: self.seed,
                time_limit: self.time_limit,
            })),
            other => Err(Error::InvalidInput(format!("unknown solver '{other}'"))),
        }
    }

    fn config(&self) -> Result<IamConfig> {
        Ok(IamConfig {
            b: self.b,
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            solver: self.route_solver()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub grid_step: f64,
    /// Defaults to twice the remaining-life horizon.
    pub grid_max: Option<f64>,
    pub k_lines: usize,
}

impl Default for CurveSection {
    fn default() -> Self {
        Self {
            grid_step: 0.25,
            grid_max: None,
            k_lines: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub max_n: usize,
    pub pi_grid_step: Option<f64>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            max_n: 9,
            pi_grid_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmSection {
    pub age_window: [f64; 2],
    pub flat_cost: f64,
}

impl Default for PmSection {
    fn default() -> Self {
        let p = PmPolicy::default();
        Self {
            age_window: [p.age_window.0, p.age_window.1],
            flat_cost: p.flat_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub n_scenarios: usize,
    pub flex_sweep: Option<Vec<usize>>,
    /// `resolve` or `reuse`.
    pub mode: String,
    pub seed: u64,
    pub obs_times: Option<Vec<f64>>,
    pub m_samples: usize,
    /// `fleet` (heterogeneous) or `scenario` (prior from the scenario file).
    pub prior: String,
}

impl Default for CompareSection {
    fn default() -> Self {
        let s = SimulationSetup::default();
        Self {
            n_scenarios: 100,
            flex_sweep: None,
            mode: "resolve".into(),
            seed: s.seed,
            obs_times: None,
            m_samples: s.m_samples,
            prior: "fleet".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: Command,
    /// Instance file for curve/solve/oracle/pm; relative paths resolve
    /// against the manifest's directory.
    pub instance: Option<PathBuf>,
    /// Instance files for compare.
    #[serde(default)]
    pub instances: Vec<PathBuf>,
    /// Synthetic instances, appended after the files.
    #[serde(default)]
    pub generated: Vec<GeneratedInstance>,
    pub scenario: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_rounding")]
    pub rounding: String,
    #[serde(default)]
    pub maintenance: MaintenanceSection,
    #[serde(default)]
    pub iam: IamSection,
    #[serde(default)]
    pub curve: CurveSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub pm: PmSection,
    #[serde(default)]
    pub compare: CompareSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("sdm-out")
}

fn default_rounding() -> String {
    "none".into()
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))
    }
}

/// Degradation scenario: model, prior, observed signal and Monte-Carlo
/// settings, read from `key = value` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationScenario {
    pub model: DegradationModel,
    pub prior: ThetaPrior,
    pub observations: Vec<(f64, f64)>,
    pub seed: u64,
    pub m_samples: usize,
    pub step: f64,
    pub horizon: f64,
    pub cp: f64,
    pub cf: f64,
}

impl Default for DegradationScenario {
    fn default() -> Self {
        Self {
            model: defaults::model(),
            prior: defaults::prior(),
            observations: Vec::new(),
            seed: 2024,
            m_samples: 10_000,
            step: 0.25,
            horizon: 4.0 * defaults::TARGET_MEAN_LIFE,
            cp: 1000.0,
            cf: 4000.0,
        }
    }
}

fn parse_floats(value: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number '{}'", s.trim()),
            })
        })
        .collect()
}

pub fn parse_scenario(text: &str) -> Result<DegradationScenario> {
    let mut sc = DegradationScenario::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: "expected key = value".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let one = || -> Result<f64> {
            let v = parse_floats(value, line)?;
            if v.len() != 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("{key} takes one number"),
                });
            }
            Ok(v[0])
        };
        let count = |v: f64| -> Result<u64> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Parse {
                    line,
                    msg: format!("{key} must be a nonnegative integer"),
                });
            }
            Ok(v as u64)
        };
        match key {
            "phi" => sc.model.offset_phi = one()?,
            "threshold" => sc.model.threshold = one()?,
            "noise_sigma" => sc.model.noise_sigma = one()?,
            "prior_mean" => {
                let v = parse_floats(value, line)?;
                if v.len() != 2 {
                    return Err(Error::Parse {
                        line,
                        msg: "prior_mean takes two numbers".into(),
                    });
                }
                sc.prior.mean = [v[0], v[1]];
            }
            "prior_cov" => {
                let v = parse_floats(value, line)?;
                if v.len() != 4 {
                    return Err(Error::Parse {
                        line,
                        msg: "prior_cov takes four numbers (row major)".into(),
                    });
                }
                sc.prior.cov = [[v[0], v[1]], [v[2], v[3]]];
            }
            "observations" => {
                sc.observations = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|pair| {
                        let (t, d) = pair.split_once(':').ok_or_else(|| Error::Parse {
                            line,
                            msg: format!("observation '{}' is not t:amplitude", pair.trim()),
                        })?;
                        let t = parse_floats(t, line)?[0];
                        let d = parse_floats(d, line)?[0];
                        Ok((t, d))
                    })
                    .collect::<Result<_>>()?;
            }
            "seed" => sc.seed = count(one()?)?,
            "m_samples" => sc.m_samples = count(one()?)? as usize,
            "step" => sc.step = one()?,
            "horizon" => sc.horizon = one()?,
            "cp" => sc.cp = one()?,
            "cf" => sc.cf = one()?,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    sc.model = DegradationModel::new(sc.model.offset_phi, sc.model.noise_sigma, sc.model.threshold)?;
    sc.prior.validate()?;
    Ok(sc)
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::InvalidInput(_)
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::OutOfRange { .. }
        | Error::Size(_)
        | Error::Io(_) => EXIT_INPUT,
        Error::Budget(_) | Error::ConstraintViolation(_) => EXIT_ERROR,
    }
}

/// Loaded manifest with resolved paths and its hash.
pub struct Run {
    pub manifest: RunManifest,
    pub base_dir: PathBuf,
    pub hash: String,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn load(path: &Path, out: Option<PathBuf>, maint_nodes: Option<Vec<usize>>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut manifest = RunManifest::parse(&text)?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        if let Some(nodes) = maint_nodes {
            hasher.update(format!("\nmaint-nodes={nodes:?}").as_bytes());
            manifest.maintenance.nodes = Some(nodes);
        }
        let hash = hex::encode(hasher.finalize());
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_dir = out.unwrap_or_else(|| base_dir.join(&manifest.output_dir));
        Ok(Self {
            manifest,
            base_dir,
            hash,
            out_dir,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn rounding(&self) -> Result<Rounding> {
        self.manifest.rounding.parse()
    }

    fn with_maintenance(&self, mut inst: Instance) -> Result<Instance> {
        let m = &self.manifest.maintenance;
        if let Some(cr) = m.cost_rate {
            inst.cr = cr;
        }
        let duration = m.duration.unwrap_or(if inst.maint_nodes.is_empty() { 5.0 } else { inst.p_maint });
        let nodes = if let Some(nodes) = &m.nodes {
            nodes.clone()
        } else if let Some(p) = m.p {
            select_maintenance_nodes(&inst, p, PMedianMethod::Exact, m.seed)
                .or_else(|_| select_maintenance_nodes(&inst, p, PMedianMethod::GreedyInterchange, m.seed))?
        } else {
            inst.maint_nodes.clone()
        };
        if !nodes.is_empty() {
            inst.set_maintenance(nodes, duration)?;
        }
        Ok(inst)
    }

    fn instance(&self) -> Result<Instance> {
        let path = self
            .manifest
            .instance
            .as_ref()
            .map(|p| self.resolve(p))
            .or_else(|| self.manifest.instances.first().map(|p| self.resolve(p)));
        let inst = match path {
            Some(p) => load_instance(&p, self.rounding()?)?,
            None => {
                let g = self
                    .manifest
                    .generated
                    .first()
                    .ok_or_else(|| Error::InvalidInput("manifest names no instance".into()))?;
                generate_instance(&g.name, g.n, g.width, g.seed)
            }
        };
        self.with_maintenance(inst)
    }

    fn all_instances(&self) -> Result<Vec<Instance>> {
        let mut out = Vec::new();
        let files = self.manifest.instance.iter().chain(&self.manifest.instances);
        for p in files {
            out.push(self.with_maintenance(load_instance(&self.resolve(p), self.rounding()?)?)?);
        }
        for g in &self.manifest.generated {
            out.push(self.with_maintenance(generate_instance(&g.name, g.n, g.width, g.seed))?);
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("manifest names no instance".into()));
        }
        Ok(out)
    }

    fn scenario(&self) -> Result<DegradationScenario> {
        match &self.manifest.scenario {
            Some(p) => parse_scenario(&fs::read_to_string(self.resolve(p))?),
            None => Ok(DegradationScenario::default()),
        }
    }

    /// Header line carried by every CSV output.
    fn stamp(&self, seeds: &[(&str, u64)]) -> String {
        let s: Vec<String> = seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# manifest_sha256={} seeds: {}\n", self.hash, s.join(" "))
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        fs::write(&path, body)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let body = serde_json::to_string_pretty(value)
            .map_err(|e| Error::InvalidInput(format!("serialize {name}: {e}")))?;
        self.write(name, &(body + "\n"))
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    manifest_sha256: &'a str,
    seeds: std::collections::BTreeMap<&'a str, u64>,
    #[serde(flatten)]
    body: T,
}

fn stamped<'a, T: Serialize>(run: &'a Run, seeds: &[(&'a str, u64)], body: T) -> Stamped<'a, T> {
    Stamped {
        manifest_sha256: &run.hash,
        seeds: seeds.iter().copied().collect(),
        body,
    }
}

struct CurveBundle {
    rld: RemainingLifeDistribution,
    curve: CostCurve,
}

fn build_curve(run: &Run, sc: &DegradationScenario) -> Result<CurveBundle> {
    let hist = SignalHistory::new(sc.observations.clone())?;
    let post = posterior_update(&sc.prior, &hist, &sc.model)?;
    let rld = simulate_rld(&post, &sc.model, sc.m_samples, sc.horizon, sc.step, sc.seed)?;
    if rld.already_failed {
        return Err(Error::InvalidInput("signal already above the failure threshold".into()));
    }
    let params = CostParams::new(sc.cp, sc.cf, hist.t_o())?;
    let c = &run.manifest.curve;
    let curve = build_cost_curve(&rld, &params, c.grid_step, c.grid_max.unwrap_or(2.0 * sc.horizon))?;
    Ok(CurveBundle { rld, curve })
}

fn iam_seed(run: &Run) -> u64 {
    run.manifest.iam.seed
}

pub fn cmd_curve(run: &Run) -> Result<i32> {
    let sc = run.scenario()?;
    let b = build_curve(run, &sc)?;
    let seeds = [("rld", sc.seed)];
    run.write("curve.csv", &(run.stamp(&seeds) + &b.curve.to_csv()))?;
    run.write("rld.csv", &(run.stamp(&seeds) + &b.rld.to_csv()))?;
    #[derive(Serialize)]
    struct Summary {
        t_min: f64,
        lambda: f64,
        t_o: f64,
        m_samples: usize,
        censored_fraction: f64,
        mean_remaining_life: f64,
    }
    run.write_json(
        "curve_summary.json",
        &stamped(
            run,
            &seeds,
            Summary {
                t_min: b.curve.t_min,
                lambda: b.curve.lambda_min,
                t_o: b.rld.t_o,
                m_samples: b.rld.len(),
                censored_fraction: b.rld.censored_fraction(),
                mean_remaining_life: b.rld.mean(),
            },
        ),
    )?;
    println!("T_min = {}  lambda = {}", b.curve.t_min, b.curve.lambda_min);
    Ok(EXIT_OK)
}

pub fn cmd_solve(run: &Run) -> Result<i32> {
    let sc = run.scenario()?;
    let inst = run.instance()?;
    let b = build_curve(run, &sc)?;
    let res = run_iam(&inst, &b.curve, &run.manifest.iam.config()?)?;
    let seeds = [("rld", sc.seed), ("solver", iam_seed(run))];
    run.write("trace.csv", &(run.stamp(&seeds) + &res.trace_csv()))?;
    #[derive(Serialize)]
    struct Out<'a> {
        instance: &'a str,
        t_min: f64,
        lambda: f64,
        #[serde(flatten)]
        result: &'a crate::iam::IamResult,
    }
    run.write_json(
        "solution.json",
        &stamped(
            run,
            &seeds,
            Out {
                instance: &inst.name,
                t_min: b.curve.t_min,
                lambda: b.curve.lambda_min,
                result: &res,
            },
        ),
    )?;
    println!(
        "z = {}  U = {}  L = {}  iterations = {}  converged = {}",
        res.best.z, res.upper, res.lower, res.iterations, res.converged
    );
    Ok(if res.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_oracle(run: &Run) -> Result<i32> {
    let sc = run.scenario()?;
    let inst = run.instance()?;
    let b = build_curve(run, &sc)?;
    let env = build_tangent_envelope(
        &b.curve,
        run.manifest.curve.k_lines,
        (b.curve.t_start(), b.curve.t_end()),
        1e-6 * sc.cf,
    )?;
    let cfg = OracleConfig {
        max_n: run.manifest.oracle.max_n,
        pi_grid_step: run.manifest.oracle.pi_grid_step,
        allow_delay: true,
    };
    let rep = oracle_report(&inst, &b.curve, Some(&env), &cfg)?;
    let seeds = [("rld", sc.seed)];
    run.write_json("oracle.json", &stamped(run, &seeds, &rep))?;
    println!(
        "z* = {}  z_no_delay = {}  envelope LB = {}",
        rep.z_star,
        rep.z_no_delay,
        rep.envelope_lb.unwrap_or(f64::NAN)
    );
    Ok(EXIT_OK)
}

pub fn cmd_pm(run: &Run) -> Result<i32> {
    let sc = run.scenario()?;
    let inst = run.instance()?;
    let p = &run.manifest.pm;
    let policy = PmPolicy::new(p.age_window[0], p.age_window[1], p.flat_cost)?;
    let t_o = sc.observations.last().map_or(0.0, |o| o.0);
    let pm = solve_pm(&inst, &policy, &run.manifest.iam.route_solver()?, t_o)?;
    let seeds = [("solver", iam_seed(run))];
    run.write_json("pm.json", &stamped(run, &seeds, &pm))?;
    println!(
        "z = {}  maintenance age = {}  window violated = {}",
        pm.z, pm.maint_age, pm.window_violated
    );
    Ok(EXIT_OK)
}

pub fn cmd_compare(run: &Run) -> Result<i32> {
    let insts = run.all_instances()?;
    let c = &run.manifest.compare;
    let mut setup = SimulationSetup::default();
    if c.prior == "scenario" {
        let sc = run.scenario()?;
        setup.model = sc.model;
        setup.prior = sc.prior;
        setup.cp = sc.cp;
        setup.cf = sc.cf;
    } else if c.prior != "fleet" {
        return Err(Error::InvalidInput(format!("unknown prior '{}'", c.prior)));
    }
    setup.seed = c.seed;
    setup.m_samples = c.m_samples;
    if let Some(t) = &c.obs_times {
        setup.obs_times = t.clone();
    }
    setup.mode = match c.mode.as_str() {
        "resolve" => SimMode::Resolve,
        "reuse" => SimMode::Reuse,
        other => return Err(Error::InvalidInput(format!("unknown mode '{other}'"))),
    };
    setup.iam = run.manifest.iam.config()?;
    setup.pm_solver = setup.iam.solver;
    let p = &run.manifest.pm;
    setup.pm = PmPolicy::new(p.age_window[0], p.age_window[1], p.flat_cost)?;
    let rep = compare_policies(&insts, &setup, c.n_scenarios, c.flex_sweep.as_deref())?;
    for (name, why) in &rep.skipped {
        eprintln!("skipped {name}: {why}");
    }
    let seeds = [("simulation", c.seed), ("solver", iam_seed(run)), ("p_median", run.manifest.maintenance.seed)];
    let stamp = run.stamp(&seeds);
    run.write("table3.csv", &(stamp.clone() + &rep.table3_csv()))?;
    run.write("table4.csv", &(stamp.clone() + &rep.table4_csv()))?;
    if c.flex_sweep.is_some() {
        run.write("table5.csv", &(stamp + &rep.table5_csv()))?;
    }
    run.write_json("compare.json", &stamped(run, &seeds, &rep))?;
    print!("{}", rep.table3_csv());
    Ok(if rep.rows.is_empty() { EXIT_INFEASIBLE } else { EXIT_OK })
}

/// Run the CLI; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (args, forced) = match cli.command {
        CliCommand::Run(a) => (a, None),
        CliCommand::Curve(a) => (a, Some(Command::Curve)),
        CliCommand::Solve(a) => (a, Some(Command::Solve)),
        CliCommand::Oracle(a) => (a, Some(Command::Oracle)),
        CliCommand::Pm(a) => (a, Some(Command::Pm)),
        CliCommand::Compare(a) => (a, Some(Command::Compare)),
    };
    if let Some(w) = args.workers {
        if w == 0 {
            eprintln!("error: --workers must be >= 1");
            return EXIT_INPUT;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    }
    let result = Run::load(&args.manifest, args.out, args.maint_nodes).and_then(|run| {
        match forced.unwrap_or(run.manifest.command) {
            Command::Curve => cmd_curve(&run),
            Command::Solve => cmd_solve(&run),
            Command::Oracle => cmd_oracle(&run),
            Command::Pm => cmd_pm(&run),
            Command::Compare => cmd_compare(&run),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_file_round() {
        let text = "# vehicle 7\nphi = 0.2\nnoise_sigma = 0.05\nprior_mean = -3, 0.02\n\
                    prior_cov = 0.04, 0, 0, 1e-6\nobservations = 5:0.26, 10:0.27\nseed = 9\n";
        let sc = parse_scenario(text).unwrap();
        assert_eq!(sc.model.noise_sigma, 0.05);
        assert_eq!(sc.prior.mean, [-3.0, 0.02]);
        assert_eq!(sc.observations, vec![(5.0, 0.26), (10.0, 0.27)]);
        assert_eq!(sc.seed, 9);
    }

    #[test]
    fn scenario_errors_carry_lines() {
        let err = parse_scenario("phi = 0.2\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_scenario("observations = 5-0.26\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(parse_scenario("prior_cov = 1, 2, 2, 1\n").is_err());
    }

    #[test]
    fn manifest_defaults() {
        let m = RunManifest::parse("command = \"solve\"\ninstance = \"a.txt\"\n").unwrap();
        assert_eq!(m.command, Command::Solve);
        assert_eq!(m.iam.b, 5);
        assert_eq!(m.pm.age_window, [100.0, 112.0]);
        assert!(RunManifest::parse("command = \"solve\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Infeasible("x".into())), EXIT_INFEASIBLE);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), EXIT_INPUT);
    }
}
