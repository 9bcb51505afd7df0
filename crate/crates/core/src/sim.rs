//! Slotted Monte-Carlo engine.
//!
//! Each slot runs, in order: the policy decision on the current states,
//! delivery (iff exactly one terminal transmits), post-action AoI sampling,
//! then arrival draws and state transitions. Statistics exclude warmup.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FieldError, SimError};
use crate::ipra::{self, IpraParams, RoundRecord};
use crate::mdp::{solve_joint, TruncationSpec};
use crate::model::{bernoulli, slot_cost, step_terminal, step_terminal_no_buffer, SystemState, TerminalState};
use crate::policy::{BufferMode, Policy, PolicyDecision, PolicyKind, Scheduler};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Per-terminal arrival rates; the terminal count is their length.
    pub lambdas: Vec<f64>,
    pub policy: PolicyKind,
    /// Slots, or transmission frames for IPRA.
    pub horizon: u64,
    /// `None` selects [`default_warmup`].
    pub warmup: Option<u64>,
    pub seed: u64,
    pub replications: usize,
    pub ipra: IpraParams,
    /// Grid for the joint MDP policy; `None` selects [`joint_truncation`].
    pub mdp: Option<TruncationSpec>,
}

impl Scenario {
    pub fn uniform(n_terminals: usize, lambda: f64, policy: PolicyKind) -> Self {
        Scenario::heterogeneous(vec![lambda; n_terminals], policy)
    }

    pub fn heterogeneous(lambdas: Vec<f64>, policy: PolicyKind) -> Self {
        Scenario {
            lambdas,
            policy,
            horizon: 1_000_000,
            warmup: None,
            seed: 1,
            replications: 1,
            ipra: IpraParams::default(),
            mdp: None,
        }
    }

    pub fn n_terminals(&self) -> usize {
        self.lambdas.len()
    }

    pub fn effective_warmup(&self) -> u64 {
        self.warmup.unwrap_or_else(|| default_warmup(self.horizon))
    }

    /// Collects every field-level problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errors = Vec::new();
        if self.lambdas.is_empty() {
            errors.push(FieldError::new("n_terminals", "must be at least 1"));
        }
        for (n, &l) in self.lambdas.iter().enumerate() {
            if !(l > 0.0 && l <= 1.0) {
                errors.push(FieldError::new(
                    format!("lambdas[{n}]"),
                    format!("rate out of range: {l} not in (0, 1]"),
                ));
            }
        }
        if self.horizon == 0 {
            errors.push(FieldError::new("horizon", "must be positive"));
        } else if self.effective_warmup() >= self.horizon {
            errors.push(FieldError::new(
                "warmup",
                format!("warmup {} must be below horizon {}", self.effective_warmup(), self.horizon),
            ));
        }
        if self.replications == 0 {
            errors.push(FieldError::new("replications", "must be at least 1"));
        }
        if self.policy == PolicyKind::Mdp && self.lambdas.len() != 2 {
            errors.push(FieldError::new(
                "policy",
                format!("mdp policy needs exactly 2 terminals, got {}", self.lambdas.len()),
            ));
        }
        if let Some(t) = &self.mdp {
            if let Err(e) = t.validate() {
                errors.push(FieldError::new("mdp", e.to_string()));
            }
        }
        if self.policy == PolicyKind::Ipra {
            if let Err(e) = self.ipra.validate() {
                errors.push(FieldError::new("ipra", e.to_string()));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(errors))
        }
    }
}

/// 1% of the horizon, at least 1000 slots, never more than half the horizon.
pub fn default_warmup(horizon: u64) -> u64 {
    (horizon / 100).max(1000).min(horizon / 2)
}

/// Joint grid wide enough that the slowest terminal rarely reaches the age
/// boundary: `a_max = ceil(ln 1e-5 / ln(1 - lambda_min))` within `[8, 48]`.
pub fn joint_truncation(lambdas: &[f64]) -> TruncationSpec {
    let lmin = lambdas.iter().copied().fold(1.0, f64::min);
    let a_max = if lmin >= 1.0 {
        8
    } else {
        ((1e-5f64).ln() / (1.0 - lmin).ln()).ceil().clamp(8.0, 48.0) as u64
    };
    TruncationSpec {
        a_max,
        d_max: 32,
        tol: 1e-6,
        max_iters: 1_000_000,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: PolicyKind,
    pub mean_aoi: f64,
    pub per_terminal_aoi: Vec<f64>,
    /// Across replications; absent for a single replication.
    pub std_error: Option<f64>,
    pub collision_count: u64,
    pub idle_count: u64,
    pub success_count: u64,
    /// Decision rounds after warmup; equals the sum of the three counts.
    pub rounds: u64,
    /// IPRA only.
    pub overhead_fraction: Option<f64>,
    pub replications: usize,
}

/// One simulated slot, handed to observers before states advance.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotRecord<'a> {
    pub t: u64,
    /// States at decision time.
    pub states: &'a [TerminalState],
    pub decision: &'a PolicyDecision,
    pub delivered: Option<usize>,
    /// Post-action AoI per terminal (the sampled cost).
    pub post_action_aoi: &'a [u64],
    pub arrivals: &'a [bool],
}

/// Builds the slotted policy for `kind`. The MDP policy solves the joint
/// problem first. IPRA has no slotted form.
pub fn build_policy(scenario: &Scenario, seed: u64) -> Result<Policy, SimError> {
    let lambdas = &scenario.lambdas;
    let policy = match scenario.policy {
        PolicyKind::WhittleOneBuffer => Policy::whittle_one_buffer(lambdas).map_err(crate::error::MdpError::from)?,
        PolicyKind::WhittleNoBuffer => Policy::whittle_no_buffer(lambdas).map_err(crate::error::MdpError::from)?,
        PolicyKind::RrOne => Policy::round_robin(lambdas.len()),
        PolicyKind::MaxAge => Policy::MaxAge,
        PolicyKind::Random => Policy::Random {
            rng: rng::stream(seed, rng::POLICY_STREAM),
        },
        PolicyKind::Mdp => {
            let trunc = scenario.mdp.unwrap_or_else(|| joint_truncation(lambdas));
            Policy::Mdp {
                table: Arc::new(solve_joint(lambdas, &trunc)?),
            }
        }
        PolicyKind::Ipra => {
            return Err(SimError::Invalid(vec![FieldError::new(
                "policy",
                "ipra runs on the contention engine, not as a slotted policy",
            )]))
        }
    };
    Ok(policy)
}

/// One replication at `scenario.seed`.
pub fn run(scenario: &Scenario) -> Result<SimReport, SimError> {
    scenario.validate()?;
    if scenario.policy == PolicyKind::Ipra {
        return run_ipra(scenario, scenario.seed, None);
    }
    let mut policy = build_policy(scenario, scenario.seed)?;
    run_with_policy(scenario, &mut policy, scenario.seed, None)
}

/// Runs the slotted engine with an explicit scheduler. `observer` sees every
/// slot, warmup included.
pub fn run_with_policy(
    scenario: &Scenario,
    scheduler: &mut dyn Scheduler,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(&SlotRecord<'_>)>,
) -> Result<SimReport, SimError> {
    let n = scenario.n_terminals();
    let lambdas = &scenario.lambdas;
    let warmup = scenario.effective_warmup();
    let mode = scheduler.buffer_mode();
    let mut arrivals_rng = rng::arrival_streams(seed, n);

    let mut state = SystemState::fresh(n);
    let mut cost = vec![0u128; n];
    let mut post = vec![0u64; n];
    let mut arrivals = vec![false; n];
    let (mut success, mut collision, mut idle) = (0u64, 0u64, 0u64);

    for t in 0..scenario.horizon {
        let decision = scheduler.decide(&state);
        let delivered = decision.unique();
        for (i, s) in state.terminals().iter().enumerate() {
            post[i] = slot_cost(*s, delivered == Some(i));
        }
        for (i, arr) in arrivals.iter_mut().enumerate() {
            *arr = bernoulli(lambdas[i], &mut arrivals_rng[i]);
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(&SlotRecord {
                t,
                states: state.terminals(),
                decision: &decision,
                delivered,
                post_action_aoi: &post,
                arrivals: &arrivals,
            });
        }
        if t >= warmup {
            for (c, &p) in cost.iter_mut().zip(&post) {
                *c += p as u128;
            }
            match decision.transmitters().len() {
                0 => idle += 1,
                1 => success += 1,
                _ => collision += 1,
            }
        }
        for (i, s) in state.terminals_mut().iter_mut().enumerate() {
            let scheduled = delivered == Some(i);
            *s = match mode {
                BufferMode::OneBuffer => step_terminal(*s, scheduled, arrivals[i]),
                BufferMode::NoBuffer => step_terminal_no_buffer(*s, scheduled, arrivals[i]),
            };
        }
    }

    let measured = (scenario.horizon - warmup) as f64;
    let per_terminal_aoi: Vec<f64> = cost.iter().map(|&c| c as f64 / measured).collect();
    Ok(SimReport {
        policy: scenario.policy,
        mean_aoi: per_terminal_aoi.iter().sum::<f64>() / n as f64,
        per_terminal_aoi,
        std_error: None,
        collision_count: collision,
        idle_count: idle,
        success_count: success,
        rounds: success + collision + idle,
        overhead_fraction: None,
        replications: 1,
    })
}

fn run_ipra(
    scenario: &Scenario,
    seed: u64,
    observer: Option<&mut dyn FnMut(&RoundRecord<'_>)>,
) -> Result<SimReport, SimError> {
    let stats = ipra::simulate(
        &scenario.lambdas,
        &scenario.ipra,
        scenario.horizon,
        scenario.effective_warmup(),
        seed,
        observer,
    )?;
    Ok(SimReport {
        policy: PolicyKind::Ipra,
        mean_aoi: stats.mean_aoi,
        per_terminal_aoi: stats.per_terminal_aoi,
        std_error: None,
        collision_count: stats.collision_count,
        idle_count: stats.idle_count,
        success_count: stats.success_count,
        rounds: stats.success_count + stats.collision_count + stats.idle_count,
        overhead_fraction: Some(stats.overhead_fraction),
        replications: 1,
    })
}

/// Independent replications with seeds `replication_seed(seed, r)`, run in
/// parallel and aggregated in replication order. The MDP table is solved
/// once and shared.
pub fn run_replications(scenario: &Scenario) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let shared = match scenario.policy {
        PolicyKind::Mdp => Some(build_policy(scenario, scenario.seed)?),
        _ => None,
    };
    let reports = (0..scenario.replications as u64)
        .into_par_iter()
        .map(|r| {
            let seed = rng::replication_seed(scenario.seed, r);
            match (&shared, scenario.policy) {
                (_, PolicyKind::Ipra) => run_ipra(scenario, seed, None),
                (Some(p), _) => run_with_policy(scenario, &mut p.clone(), seed, None),
                (None, _) => run_with_policy(scenario, &mut build_policy(scenario, seed)?, seed, None),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(&reports))
}

fn aggregate(reports: &[SimReport]) -> SimReport {
    let r = reports.len();
    let n = reports[0].per_terminal_aoi.len();
    let mean = |f: &dyn Fn(&SimReport) -> f64| reports.iter().map(f).sum::<f64>() / r as f64;
    let means: Vec<f64> = reports.iter().map(|x| x.mean_aoi).collect();
    let overhead = reports[0]
        .overhead_fraction
        .map(|_| mean(&|x| x.overhead_fraction.unwrap_or(0.0)));
    SimReport {
        policy: reports[0].policy,
        mean_aoi: mean(&|x| x.mean_aoi),
        per_terminal_aoi: (0..n).map(|i| mean(&|x| x.per_terminal_aoi[i])).collect(),
        std_error: ipra::standard_error(&means),
        collision_count: reports.iter().map(|x| x.collision_count).sum(),
        idle_count: reports.iter().map(|x| x.idle_count).sum(),
        success_count: reports.iter().map(|x| x.success_count).sum(),
        rounds: reports.iter().map(|x| x.rounds).sum(),
        overhead_fraction: overhead,
        replications: r,
    }
}

/// Runs one replication at `scenario.seed` and writes a per-slot CSV trace
/// (`t, a0, d0, a1, d1, ..., action, delivered`). `action` lists the
/// transmitting terminals separated by `;` or reads `idle`. For IPRA, `t` is
/// the start of the round in ticks.
pub fn run_traced<W: Write>(scenario: &Scenario, out: W) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let n = scenario.n_terminals();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        header.push(format!("a{i}"));
        header.push(format!("d{i}"));
    }
    header.push("action".into());
    header.push("delivered".into());
    w.write_record(&header)?;

    let mut failure: Option<csv::Error> = None;
    let mut row = Vec::with_capacity(header.len());
    let mut emit = |t: u64, states: &[TerminalState], action: String, delivered: bool| {
        if failure.is_some() {
            return;
        }
        row.clear();
        row.push(t.to_string());
        for s in states {
            row.push(s.a().to_string());
            row.push(s.d().to_string());
        }
        row.push(action);
        row.push(u8::from(delivered).to_string());
        if let Err(e) = w.write_record(&row) {
            failure = Some(e);
        }
    };

    let report = if scenario.policy == PolicyKind::Ipra {
        let mut obs = |r: &RoundRecord<'_>| {
            let action = match &r.outcome.result {
                ipra::RoundResult::Success(n) => n.to_string(),
                ipra::RoundResult::Collision(v) => join_ids(v),
                ipra::RoundResult::Idle => "idle".to_string(),
            };
            emit(r.start, r.states, action, r.outcome.winner().is_some());
        };
        run_ipra(scenario, scenario.seed, Some(&mut obs))?
    } else {
        let mut policy = build_policy(scenario, scenario.seed)?;
        let mut obs = |r: &SlotRecord<'_>| {
            let ids = r.decision.transmitters();
            let action = if ids.is_empty() { "idle".to_string() } else { join_ids(ids) };
            emit(r.t, r.states, action, r.delivered.is_some());
        };
        run_with_policy(scenario, &mut policy, scenario.seed, Some(&mut obs))?
    };
    if let Some(e) = failure {
        return Err(e.into());
    }
    w.flush()?;
    Ok(report)
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}
