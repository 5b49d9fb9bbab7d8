//! Realized-cost simulation of sensor-driven (SDM) and periodic (PM)
//! maintenance plans against sampled true failure times.
//!
//! Ages are vehicle ages: a route dispatched at observation time `t_o` that
//! maintains `pi` time units in does so at age `t_o + pi`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{solve_pm, PmPolicy, PmSolution};
use crate::degradation::{
    defaults, posterior_update, sample_true_failure, simulate_history, simulate_rld, stream_rng, DegradationModel,
    SignalHistory, ThetaPosterior, ThetaPrior,
};
use crate::error::{Error, Result};
use crate::iam::{run_iam, IamConfig, IamResult};
use crate::instance::{nested_maintenance_sets, Instance};
use crate::maintcost::{build_cost_curve, CostCurve, CostParams};
use crate::tsptw::RouteSolver;

/// Stream index of the reference vehicle in reuse mode.
const BASE_VEHICLE_STREAM: u64 = 1 << 40;
const MAX_REJECTIONS: usize = 100_000;

/// Independent 64-bit seed for `(seed, tag, index)` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub true_theta: [f64; 2],
    /// Signal observed up to dispatch.
    pub history: Vec<(f64, f64)>,
    /// Vehicle age at breakdown.
    pub failure_time: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Sdm,
    Pm,
}

/// What a policy committed to before the failure time is revealed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSolution {
    pub policy: Policy,
    pub tau: f64,
    pub routing_cost: f64,
    pub maint_node: Option<usize>,
    /// Vehicle age at the planned maintenance.
    pub maint_age: f64,
    /// Objective the planner minimized (`cr * tau` plus its maintenance
    /// cost model).
    pub planned_z: f64,
}

impl PlannedSolution {
    /// SDM plan from an IAM answer. A route without maintenance defers it to
    /// `T_min`.
    pub fn from_iam(result: &IamResult, curve: &CostCurve, t_o: f64) -> Self {
        let s = &result.best.schedule;
        Self {
            policy: Policy::Sdm,
            tau: s.makespan,
            routing_cost: result.best.routing_cost,
            maint_node: s.maint_node,
            maint_age: t_o + s.maint_time.unwrap_or(curve.t_min),
            planned_z: result.best.z,
        }
    }

    pub fn from_pm(pm: &PmSolution) -> Self {
        Self {
            policy: Policy::Pm,
            tau: pm.schedule.makespan,
            routing_cost: pm.routing_cost,
            maint_node: pm.schedule.maint_node,
            maint_age: pm.maint_age,
            planned_z: pm.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub routing_cost: f64,
    pub maintenance_cost: f64,
    pub total_cost: f64,
    pub failed: bool,
}

/// Corrective maintenance when the vehicle breaks down strictly before the
/// planned age; a tie counts as preventive.
pub fn simulate_policy(plan: &PlannedSolution, scenario: &Scenario, cp: f64, cf: f64) -> PolicyOutcome {
    let failed = plan.maint_age > scenario.failure_time;
    let maintenance_cost = if failed { cf } else { cp };
    PolicyOutcome {
        routing_cost: plan.routing_cost,
        maintenance_cost,
        total_cost: plan.routing_cost + maintenance_cost,
        failed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Fresh sensor history per scenario, SDM re-solved each time.
    Resolve,
    /// One reference vehicle and one SDM solution; truths drawn from that
    /// vehicle's posterior.
    Reuse,
}

/// `(true parameters, signal history)`.
type Vehicle = ([f64; 2], Vec<(f64, f64)>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSetup {
    pub model: DegradationModel,
    pub prior: ThetaPrior,
    /// Observation times; the last one is the dispatch age `t_o`.
    pub obs_times: Vec<f64>,
    pub cp: f64,
    pub cf: f64,
    pub m_samples: usize,
    pub rld_step: f64,
    pub horizon: f64,
    pub grid_step: f64,
    pub grid_max: f64,
    pub iam: IamConfig,
    pub pm: PmPolicy,
    pub pm_solver: RouteSolver,
    pub mode: SimMode,
    pub seed: u64,
}

impl Default for SimulationSetup {
    fn default() -> Self {
        Self {
            model: defaults::model(),
            prior: defaults::fleet_prior(),
            obs_times: (1..=8).map(|k| 5.0 * k as f64).collect(),
            cp: 1000.0,
            cf: 4000.0,
            m_samples: 2000,
            rld_step: 0.25,
            horizon: 4.0 * defaults::TARGET_MEAN_LIFE,
            grid_step: 0.25,
            grid_max: 8.0 * defaults::TARGET_MEAN_LIFE,
            iam: IamConfig {
                solver: RouteSolver::Exact,
                ..IamConfig::default()
            },
            pm: PmPolicy::default(),
            pm_solver: RouteSolver::Exact,
            mode: SimMode::Resolve,
            seed: 7,
        }
    }
}

impl SimulationSetup {
    pub fn t_o(&self) -> f64 {
        self.obs_times.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.obs_times.is_empty() {
            return Err(Error::InvalidInput("simulation needs at least one observation time".into()));
        }
        CostParams::new(self.cp, self.cf, self.t_o())?;
        Ok(())
    }

    /// Posterior, remaining-life distribution and cost curve for a history.
    pub fn curve_for(&self, history: &[(f64, f64)], seed: u64) -> Result<(ThetaPosterior, CostCurve)> {
        let hist = SignalHistory::new(history.to_vec())?;
        let post = posterior_update(&self.prior, &hist, &self.model)?;
        let rld = simulate_rld(&post, &self.model, self.m_samples, self.horizon, self.rld_step, seed)?;
        let params = CostParams::new(self.cp, self.cf, hist.t_o())?;
        let curve = build_cost_curve(&rld, &params, self.grid_step, self.grid_max)?;
        Ok((post, curve))
    }

    /// True parameters and a signal history that stays below the threshold.
    fn healthy_history(&self, index: u64) -> Result<Vehicle> {
        let mut rng = stream_rng(self.seed, index);
        for _ in 0..MAX_REJECTIONS {
            let theta = self.prior.sample(&mut rng);
            let hist = simulate_history(&self.model, theta, &self.obs_times, &mut rng);
            if hist.iter().all(|&(_, d)| d < self.model.threshold) {
                return Ok((theta, hist));
            }
        }
        Err(Error::Budget("could not draw a vehicle that survives to dispatch".into()))
    }
}

/// Scenarios shared by every policy and sweep point (common random numbers).
pub fn draw_scenarios(setup: &SimulationSetup, n: usize) -> Result<Vec<Scenario>> {
    setup.validate()?;
    let t_o = setup.t_o();
    let base = match setup.mode {
        SimMode::Resolve => None,
        SimMode::Reuse => {
            let (_, hist) = setup.healthy_history(BASE_VEHICLE_STREAM)?;
            let h = SignalHistory::new(hist.clone())?;
            let post = posterior_update(&setup.prior, &h, &setup.model)?;
            Some((hist, ThetaPrior::new(post.mean, post.cov)?))
        }
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(setup.seed, 1, i as u64);
            let (theta, history) = match &base {
                None => setup.healthy_history(i as u64)?,
                Some((hist, post)) => {
                    let mut rng = stream_rng(setup.seed, i as u64);
                    (post.sample(&mut rng), hist.clone())
                }
            };
            let amp = history.last().unwrap().1;
            let r = sample_true_failure(&setup.model, theta, amp, setup.rld_step, setup.horizon, seed)?;
            Ok(Scenario {
                index: i,
                true_theta: theta,
                history,
                failure_time: t_o + r,
                seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub routing_cost: f64,
    pub maintenance_cost: f64,
    pub total_cost: f64,
    pub failures: usize,
}

impl PolicySummary {
    fn from_outcomes<'a>(outcomes: impl Iterator<Item = &'a PolicyOutcome>) -> Self {
        let mut s = Self::default();
        let mut k = 0usize;
        for o in outcomes {
            s.routing_cost += o.routing_cost;
            s.maintenance_cost += o.maintenance_cost;
            s.total_cost += o.total_cost;
            s.failures += o.failed as usize;
            k += 1;
        }
        if k > 0 {
            let k = k as f64;
            s.routing_cost /= k;
            s.maintenance_cost /= k;
            s.total_cost /= k;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDetail {
    pub scenario: usize,
    pub failure_time: f64,
    pub sdm_maint_age: f64,
    pub pm_maint_age: f64,
    pub sdm_planned_z: f64,
    pub sdm: PolicyOutcome,
    pub pm: PolicyOutcome,
    pub sdm_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub instance: String,
    pub n: usize,
    pub p: usize,
    pub maint_nodes: Vec<usize>,
    pub sdm: PolicySummary,
    pub pm: PolicySummary,
    /// Mean of the SDM planning objective over scenarios.
    pub sdm_planned_z: f64,
    /// `100 * (PM / SDM - 1)` on mean total cost.
    pub reduction_pct: f64,
    pub pm_window_violated: bool,
    pub details: Vec<ScenarioDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub mode: SimMode,
    pub n_scenarios: usize,
    pub rows: Vec<ComparisonRow>,
    /// `(instance, reason)` for instances that could not be solved.
    pub skipped: Vec<(String, String)>,
}

/// SDM plan for one history.
pub fn plan_sdm(
    instance: &Instance,
    setup: &SimulationSetup,
    history: &[(f64, f64)],
    rld_seed: u64,
) -> Result<(PlannedSolution, bool)> {
    let (_, curve) = setup.curve_for(history, rld_seed)?;
    let res = run_iam(instance, &curve, &setup.iam)?;
    Ok((PlannedSolution::from_iam(&res, &curve, setup.t_o()), res.converged))
}

fn compare_one(instance: &Instance, setup: &SimulationSetup, scenarios: &[Scenario]) -> Result<ComparisonRow> {
    let pm = solve_pm(instance, &setup.pm, &setup.pm_solver, setup.t_o())?;
    let pm_plan = PlannedSolution::from_pm(&pm);
    let shared = match setup.mode {
        SimMode::Reuse => {
            let hist = &scenarios
                .first()
                .ok_or_else(|| Error::InvalidInput("no scenarios".into()))?
                .history;
            Some(plan_sdm(instance, setup, hist, derive_seed(setup.seed, 2, 0))?)
        }
        SimMode::Resolve => None,
    };
    let details: Vec<ScenarioDetail> = scenarios
        .par_iter()
        .map(|sc| {
            let (plan, converged) = match &shared {
                Some(p) => p.clone(),
                None => plan_sdm(instance, setup, &sc.history, derive_seed(setup.seed, 2, sc.index as u64))?,
            };
            Ok(ScenarioDetail {
                scenario: sc.index,
                failure_time: sc.failure_time,
                sdm_maint_age: plan.maint_age,
                pm_maint_age: pm_plan.maint_age,
                sdm_planned_z: plan.planned_z,
                sdm: simulate_policy(&plan, sc, setup.cp, setup.cf),
                pm: simulate_policy(&pm_plan, sc, setup.cp, setup.cf),
                sdm_converged: converged,
            })
        })
        .collect::<Result<_>>()?;
    let sdm = PolicySummary::from_outcomes(details.iter().map(|d| &d.sdm));
    let pms = PolicySummary::from_outcomes(details.iter().map(|d| &d.pm));
    Ok(ComparisonRow {
        instance: instance.name.clone(),
        n: instance.n,
        p: instance.maint_nodes.len(),
        maint_nodes: instance.maint_nodes.clone(),
        reduction_pct: 100.0 * (pms.total_cost / sdm.total_cost - 1.0),
        sdm_planned_z: details.iter().map(|d| d.sdm_planned_z).sum::<f64>() / details.len().max(1) as f64,
        sdm,
        pm: pms,
        pm_window_violated: pm.window_violated,
        details,
    })
}

/// Solve and simulate both policies on every instance, optionally for each
/// number of maintenance nodes in `flex_sweep` (nested p-median sets).
pub fn compare_policies(
    instances: &[Instance],
    setup: &SimulationSetup,
    n_scenarios: usize,
    flex_sweep: Option<&[usize]>,
) -> Result<CompareReport> {
    let scenarios = draw_scenarios(setup, n_scenarios)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for inst in instances {
        let variants: Result<Vec<Instance>> = match flex_sweep {
            None => Ok(vec![inst.clone()]),
            Some(ps) => nested_maintenance_sets(inst, ps, setup.seed).and_then(|sets| {
                sets.into_iter()
                    .map(|set| inst.clone().with_maintenance(set, inst.p_maint))
                    .collect()
            }),
        };
        let result = variants.and_then(|vs| vs.iter().map(|v| compare_one(v, setup, &scenarios)).collect::<Result<Vec<_>>>());
        match result {
            Ok(r) => rows.extend(r),
            Err(e @ (Error::Infeasible(_) | Error::ConstraintViolation(_) | Error::Size(_))) => {
                skipped.push((inst.name.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CompareReport {
        seed: setup.seed,
        mode: setup.mode,
        n_scenarios,
        rows,
        skipped,
    })
}

fn fmt(x: f64) -> String {
    format!("{x:.1}")
}

impl CompareReport {
    /// Cost comparison: dataset, N/MN, SDM and PM cost columns, reduction.
    pub fn table3_csv(&self) -> String {
        let mut out = String::from(
            "dataset,n_mn,sdm_total,sdm_routing,sdm_maintenance,pm_total,pm_routing,pm_maintenance,reduction_pct\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{}/{},{},{},{},{},{},{},{}\n",
                r.instance,
                r.n,
                r.p,
                fmt(r.sdm.total_cost),
                fmt(r.sdm.routing_cost),
                fmt(r.sdm.maintenance_cost),
                fmt(r.pm.total_cost),
                fmt(r.pm.routing_cost),
                fmt(r.pm.maintenance_cost),
                fmt(r.reduction_pct)
            ));
        }
        out
    }

    /// Failure counts per instance.
    pub fn table4_csv(&self) -> String {
        let mut out = String::from("dataset,n_mn,sdm_failures,pm_failures\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}/{},{},{}\n", r.instance, r.n, r.p, r.sdm.failures, r.pm.failures));
        }
        out
    }

    /// Costs by number of maintenance nodes.
    pub fn table5_csv(&self) -> String {
        let mut out = String::from(
            "dataset,maintenance_nodes,sdm_total,sdm_routing,sdm_maintenance,pm_total,pm_routing,pm_maintenance\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.instance,
                r.p,
                fmt(r.sdm.total_cost),
                fmt(r.sdm.routing_cost),
                fmt(r.sdm.maintenance_cost),
                fmt(r.pm.total_cost),
                fmt(r.pm.routing_cost),
                fmt(r.pm.maintenance_cost)
            ));
        }
        out
    }
}
