//! Index-prioritized random access.
//!
//! Each terminal computes its own Whittle index from its local `(a, d)`.
//! Terminals whose index reaches a public threshold transmit with
//! probability `p` after a contention slot of length `delta`. A round ends
//! with a transmission frame (`t_s`) when exactly one terminal transmitted,
//! a collision frame (`t_c`) when several did, or after the bare contention
//! slot when none did. The controller acknowledges at the end of the frame.
//!
//! Time is counted in integer ticks; one transmission frame of `t_s` ticks is
//! the unit in which AoI is reported, so results compare directly against
//! the slotted policies. Packet arrivals are Bernoulli draws at every
//! multiple of `t_s` on the global clock. Because arrivals and deliveries only
//! happen on that lattice, every `d` is a whole number of frames and all
//! packet ages share the phase of the clock; the index uses the frame counts
//! `(floor(a / t_s), d / t_s)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IpraError, ParamError};
use crate::model::{bernoulli, TerminalState};
use crate::rng;
use crate::whittle::WhittleIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpraParams {
    /// Transmission probability of an eligible terminal.
    pub p: f64,
    pub index_threshold: f64,
    /// Transmission frame length in ticks.
    pub t_s: u64,
    /// Collision frame length in ticks.
    pub t_c: u64,
    /// Contention slot length in ticks.
    pub delta: u64,
}

impl Default for IpraParams {
    fn default() -> Self {
        IpraParams {
            p: 1.0,
            index_threshold: 0.0,
            t_s: 100,
            t_c: 100,
            delta: 1,
        }
    }
}

impl IpraParams {
    pub fn validate(&self) -> Result<(), IpraError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(IpraError::Probability(self.p));
        }
        if !(self.index_threshold.is_finite() && self.index_threshold >= 0.0) {
            return Err(IpraError::Threshold(self.index_threshold));
        }
        if self.t_s == 0 || self.t_c == 0 || self.delta > self.t_s {
            return Err(IpraError::Timing);
        }
        Ok(())
    }

    pub fn with_search_point(&self, p: f64, index_threshold: f64) -> Self {
        IpraParams {
            p,
            index_threshold,
            ..*self
        }
    }

    /// Whether a terminal with index `index` contends. Terminals with nothing
    /// to deliver (index 0) never do.
    #[inline]
    pub fn eligible(&self, index: f64) -> bool {
        index > 0.0 && index >= self.index_threshold
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundResult {
    Success(usize),
    Collision(Vec<usize>),
    Idle,
}

/// One contention round, or a run of consecutive idle rounds during which
/// no terminal was eligible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentionOutcome {
    pub result: RoundResult,
    /// Number of contention rounds represented (1 unless idle rounds were
    /// merged).
    pub rounds: u64,
    /// Ticks spent in contention slots.
    pub contention: u64,
    /// Ticks spent in the transmission or collision frame.
    pub frame: u64,
}

impl ContentionOutcome {
    pub fn elapsed(&self) -> u64 {
        self.contention + self.frame
    }

    pub fn success(terminal: usize, params: &IpraParams) -> Self {
        ContentionOutcome {
            result: RoundResult::Success(terminal),
            rounds: 1,
            contention: params.delta,
            frame: params.t_s,
        }
    }

    pub fn collision(terminals: Vec<usize>, params: &IpraParams) -> Self {
        ContentionOutcome {
            result: RoundResult::Collision(terminals),
            rounds: 1,
            contention: params.delta,
            frame: params.t_c,
        }
    }

    pub fn idle(rounds: u64, params: &IpraParams) -> Self {
        ContentionOutcome {
            result: RoundResult::Idle,
            rounds,
            contention: rounds * params.delta,
            frame: 0,
        }
    }

    pub fn winner(&self) -> Option<usize> {
        match self.result {
            RoundResult::Success(n) => Some(n),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.result {
            RoundResult::Success(_) => "success",
            RoundResult::Collision(_) => "collision",
            RoundResult::Idle => "idle",
        }
    }
}

/// Index a terminal computes from its own packet age and delivery history.
pub fn local_index(terminal: TerminalState, lambda: f64) -> Result<f64, ParamError> {
    Ok(WhittleIndex::new(lambda)?.of(terminal))
}

/// One contention period: every eligible terminal transmits independently
/// with probability `p`, consuming one variate each.
pub fn contention_round<R: Rng + ?Sized>(indices: &[f64], params: &IpraParams, rng: &mut R) -> ContentionOutcome {
    let mut transmitters = Vec::new();
    for (n, &index) in indices.iter().enumerate() {
        if params.eligible(index) && bernoulli(params.p, rng) {
            transmitters.push(n);
        }
    }
    match transmitters.len() {
        0 => ContentionOutcome::idle(1, params),
        1 => ContentionOutcome::success(transmitters[0], params),
        _ => ContentionOutcome::collision(transmitters, params),
    }
}

/// Share of elapsed time spent in successful transmission frames.
pub fn overhead_fraction(trace: &[ContentionOutcome]) -> Result<f64, IpraError> {
    if trace.is_empty() {
        return Err(IpraError::EmptyTrace);
    }
    let (mut useful, mut total) = (0u128, 0u128);
    for o in trace {
        if o.winner().is_some() {
            useful += o.frame as u128;
        }
        total += o.elapsed() as u128;
    }
    Ok(if total == 0 { 0.0 } else { useful as f64 / total as f64 })
}

/// Per-round trace entry handed to [`simulate`]'s observer.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord<'a> {
    pub round: u64,
    /// Clock at the start of the round, in ticks.
    pub start: u64,
    pub outcome: &'a ContentionOutcome,
    /// Terminal states at the start of the round, in frame units.
    pub states: &'a [TerminalState],
}

const BATCHES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpraStats {
    /// Time-average AoI in frames, averaged over terminals.
    pub mean_aoi: f64,
    pub per_terminal_aoi: Vec<f64>,
    /// Batch-means standard error of `mean_aoi`.
    pub std_error: f64,
    pub success_count: u64,
    pub collision_count: u64,
    pub idle_count: u64,
    pub overhead_fraction: f64,
    /// Measured time in frames.
    pub measured_frames: f64,
    /// Index evaluations per terminal; each uses only that terminal's state.
    pub index_evaluations: Vec<u64>,
}

struct Agent {
    index: WhittleIndex,
    /// AoI at the destination, ticks.
    h: u64,
    /// Age of the buffered packet, ticks.
    a: u64,
    evaluations: u64,
}

impl Agent {
    fn frame_state(&self, t_s: u64) -> TerminalState {
        TerminalState::new(self.a / t_s, (self.h - self.a) / t_s).expect("packet age is at least one frame")
    }

    fn local_index(&mut self, t_s: u64) -> f64 {
        self.evaluations += 1;
        if self.h == self.a {
            0.0
        } else {
            self.index.of(self.frame_state(t_s))
        }
    }
}

/// Runs the protocol for `horizon` frames and reports statistics collected
/// after `warmup` frames. Arrivals use the same per-terminal streams as the
/// slotted simulator, so runs sharing a seed see the same arrivals.
pub fn simulate(
    lambdas: &[f64],
    params: &IpraParams,
    horizon: u64,
    warmup: u64,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(&RoundRecord<'_>)>,
) -> Result<IpraStats, IpraError> {
    params.validate()?;
    if horizon <= warmup {
        return Err(IpraError::Range("horizon must exceed warmup"));
    }
    let n = lambdas.len();
    let t_s = params.t_s;
    let mut agents = lambdas
        .iter()
        .map(|&l| {
            Ok(Agent {
                index: WhittleIndex::new(l)?,
                h: t_s,
                a: t_s,
                evaluations: 0,
            })
        })
        .collect::<Result<Vec<_>, ParamError>>()?;
    let mut arrivals = rng::arrival_streams(seed, n);
    let mut contention = rng::stream(seed, rng::POLICY_STREAM);

    let end = horizon * t_s;
    let start_measure = warmup * t_s;
    let batch_len = (end - start_measure).div_ceil(BATCHES as u64);
    let mut batch_cost = [0u128; BATCHES];
    let mut batch_time = [0u128; BATCHES];

    let mut indices = vec![0.0; n];
    let mut snapshot = Vec::with_capacity(n);
    let mut per_terminal_cost = vec![0u128; n];
    let (mut success, mut collision, mut idle) = (0u64, 0u64, 0u64);
    let (mut useful, mut measured) = (0u128, 0u128);

    let mut t = 0u64;
    let mut next_arrival = t_s;
    let mut round = 0u64;
    while t < end {
        let mut any_eligible = false;
        for (agent, slot) in agents.iter_mut().zip(indices.iter_mut()) {
            *slot = agent.local_index(t_s);
            any_eligible |= params.eligible(*slot);
        }

        let outcome = if any_eligible {
            contention_round(&indices, params, &mut contention)
        } else {
            // Nothing changes until the next arrival instant.
            let gap = next_arrival - t;
            if params.delta == 0 {
                ContentionOutcome {
                    result: RoundResult::Idle,
                    rounds: 1,
                    contention: gap,
                    frame: 0,
                }
            } else {
                ContentionOutcome::idle(gap.div_ceil(params.delta), params)
            }
        };

        if let Some(obs) = observer.as_deref_mut() {
            snapshot.clear();
            snapshot.extend(agents.iter().map(|ag| ag.frame_state(t_s)));
            obs(&RoundRecord {
                round,
                start: t,
                outcome: &outcome,
                states: &snapshot,
            });
        }

        if let Some(w) = outcome.winner() {
            agents[w].h = agents[w].a;
        }

        let elapsed = outcome.elapsed();
        if t >= start_measure {
            // Left sum over each idle sub-round of the post-action AoI.
            let k = outcome.rounds as u128;
            let step = if outcome.frame == 0 && outcome.rounds > 1 {
                params.delta as u128
            } else {
                0
            };
            let aging = step * step * k * (k - 1) / 2;
            let mut round_cost = 0u128;
            for (agent, acc) in agents.iter().zip(per_terminal_cost.iter_mut()) {
                let c = agent.h as u128 * elapsed as u128 + aging;
                *acc += c;
                round_cost += c;
            }
            let b = (((t - start_measure) / batch_len) as usize).min(BATCHES - 1);
            batch_cost[b] += round_cost;
            batch_time[b] += elapsed as u128;
            measured += elapsed as u128;
            match outcome.result {
                RoundResult::Success(_) => {
                    success += 1;
                    useful += outcome.frame as u128;
                }
                RoundResult::Collision(_) => collision += 1,
                RoundResult::Idle => idle += outcome.rounds,
            }
        }

        t += elapsed;
        for agent in agents.iter_mut() {
            agent.h += elapsed;
            agent.a += elapsed;
        }
        while next_arrival <= t {
            for (i, agent) in agents.iter_mut().enumerate() {
                if bernoulli(lambdas[i], &mut arrivals[i]) {
                    agent.a = t_s + (t - next_arrival);
                }
            }
            next_arrival += t_s;
        }
        round += 1;
    }

    let norm = measured.max(1) as f64 * t_s as f64;
    let per_terminal_aoi: Vec<f64> = per_terminal_cost.iter().map(|&c| c as f64 / norm).collect();
    let mean_aoi = per_terminal_aoi.iter().sum::<f64>() / n.max(1) as f64;
    let batch_means: Vec<f64> = batch_cost
        .iter()
        .zip(&batch_time)
        .filter(|(_, &time)| time > 0)
        .map(|(&c, &time)| c as f64 / (time as f64 * t_s as f64 * n as f64))
        .collect();
    Ok(IpraStats {
        mean_aoi,
        per_terminal_aoi,
        std_error: standard_error(&batch_means).unwrap_or(f64::NAN),
        success_count: success,
        collision_count: collision,
        idle_count: idle,
        overhead_fraction: if measured == 0 { 0.0 } else { useful as f64 / measured as f64 },
        measured_frames: measured as f64 / t_s as f64,
        index_evaluations: agents.iter().map(|a| a.evaluations).collect(),
    })
}

pub(crate) fn standard_error(samples: &[f64]) -> Option<f64> {
    let k = samples.len();
    if k < 2 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / k as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    Some((var / k as f64).sqrt())
}

/// Evaluation budget of [`optimize_params`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Simulated frames per evaluation.
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    /// Golden-section steps over the threshold.
    pub outer_iters: usize,
    /// Golden-section steps over `p` for every threshold.
    pub inner_iters: usize,
    /// Points per axis of the fallback lattice.
    pub grid_points: usize,
    /// Relative slack tolerated before a sampled profile counts as
    /// non-unimodal.
    pub unimodal_slack: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            horizon: 100_000,
            warmup: 1_000,
            seed: 1,
            outer_iters: 12,
            inner_iters: 10,
            grid_points: 8,
            unimodal_slack: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedIpra {
    pub params: IpraParams,
    pub mean_aoi: f64,
    pub std_error: f64,
    pub evaluations: usize,
    /// The golden-section profile was not unimodal and a lattice search
    /// produced the result.
    pub fallback: bool,
}

struct Search {
    /// Every `(x, f(x))` evaluated, including both endpoints.
    samples: Vec<(f64, f64)>,
    best: (f64, f64),
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimisation on `[lo, hi]`; both endpoints are evaluated
/// as candidates. Ties move towards `lo`.
fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, iters: usize) -> Search {
    let mut samples = Vec::with_capacity(iters + 4);
    let mut eval = |x: f64, samples: &mut Vec<(f64, f64)>| {
        let y = f(x);
        samples.push((x, y));
        y
    };
    eval(lo, &mut samples);
    if hi > lo {
        eval(hi, &mut samples);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = eval(c, &mut samples);
        let mut fd = eval(d, &mut samples);
        for _ in 0..iters {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = eval(c, &mut samples);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = eval(d, &mut samples);
            }
        }
    }
    let best = samples
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |acc, s| if s.1 < acc.1 { s } else { acc });
    Search { samples, best }
}

/// Whether samples, ordered by `x`, fall to the minimum and then rise, up to
/// a relative slack.
fn looks_unimodal(samples: &[(f64, f64)], slack: f64) -> bool {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|l, r| l.0.total_cmp(&r.0));
    let Some(k) = sorted
        .iter()
        .enumerate()
        .min_by(|l, r| l.1 .1.total_cmp(&r.1 .1))
        .map(|(i, _)| i)
    else {
        return true;
    };
    let tol = |y: f64| slack * y.abs();
    let falling = sorted[..=k].windows(2).all(|w| w[1].1 <= w[0].1 + tol(w[0].1));
    let rising = sorted[k..].windows(2).all(|w| w[1].1 + tol(w[1].1) >= w[0].1);
    falling && rising
}

/// Nested golden-section search over `(index_threshold, p)`; each evaluation
/// is a fixed-seed simulation, so repeated calls return identical results.
/// Falls back to a lattice search when a sampled profile is not unimodal.
pub fn optimize_params(
    lambdas: &[f64],
    base: &IpraParams,
    p_range: (f64, f64),
    threshold_range: (f64, f64),
    budget: &SearchBudget,
) -> Result<OptimizedIpra, IpraError> {
    let (p_lo, p_hi) = p_range;
    if !(p_lo > 0.0 && p_lo <= p_hi && p_hi <= 1.0) {
        return Err(IpraError::Range("p"));
    }
    let (t_lo, t_hi) = threshold_range;
    if !(t_lo >= 0.0 && t_lo <= t_hi && t_hi.is_finite()) {
        return Err(IpraError::Range("threshold"));
    }
    base.with_search_point(p_hi, t_lo).validate()?;

    let mut evaluations = 0usize;
    let mut first_error = None;
    let mut evaluate = |p: f64, threshold: f64| -> f64 {
        evaluations += 1;
        match simulate(
            lambdas,
            &base.with_search_point(p, threshold),
            budget.horizon,
            budget.warmup,
            budget.seed,
            None,
        ) {
            Ok(stats) => stats.mean_aoi,
            Err(e) => {
                first_error.get_or_insert(e);
                f64::INFINITY
            }
        }
    };

    let mut unimodal = true;
    let mut best_p_at = Vec::new();
    let outer = golden_section(
        |threshold| {
            let inner = golden_section(|p| evaluate(p, threshold), p_lo, p_hi, budget.inner_iters);
            unimodal &= looks_unimodal(&inner.samples, budget.unimodal_slack);
            best_p_at.push((threshold, inner.best.0));
            inner.best.1
        },
        t_lo,
        t_hi,
        budget.outer_iters,
    );
    unimodal &= looks_unimodal(&outer.samples, budget.unimodal_slack);

    let (mut best_threshold, mut best_value) = outer.best;
    let mut best_p = best_p_at
        .iter()
        .find(|(t, _)| *t == best_threshold)
        .map(|&(_, p)| p)
        .unwrap_or(p_hi);

    if !unimodal {
        let k = budget.grid_points.max(2);
        for i in 0..k {
            let threshold = t_lo + (t_hi - t_lo) * i as f64 / (k - 1) as f64;
            for j in 0..k {
                let p = p_lo + (p_hi - p_lo) * j as f64 / (k - 1) as f64;
                let v = evaluate(p, threshold);
                if v < best_value {
                    (best_threshold, best_p, best_value) = (threshold, p, v);
                }
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    let params = base.with_search_point(best_p, best_threshold);
    let stats = simulate(lambdas, &params, budget.horizon, budget.warmup, budget.seed, None)?;
    Ok(OptimizedIpra {
        params,
        mean_aoi: stats.mean_aoi,
        std_error: stats.std_error,
        evaluations,
        fallback: !unimodal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::whittle::whittle;

    fn params(p: f64, threshold: f64) -> IpraParams {
        IpraParams {
            p,
            index_threshold: threshold,
            ..IpraParams::default()
        }
    }

    #[test]
    fn local_index_examples() {
        let s = |a, d| TerminalState::new(a, d).unwrap();
        assert!((local_index(s(1, 3), 1.0).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(local_index(s(7, 0), 0.4).unwrap(), 0.0);
        assert_eq!(local_index(s(2, 5), 0.5).unwrap(), whittle(0.5, 2, 5).unwrap());
        assert!(local_index(s(2, 5), 0.0).is_err());
    }

    #[test]
    fn contention_examples() {
        let mut rng = rng::stream(5, 0);
        let o = contention_round(&[6.0, 1.0], &params(1.0, 5.0), &mut rng);
        assert_eq!(o.result, RoundResult::Success(0));
        assert_eq!(o.elapsed(), 101);
        let o = contention_round(&[6.0, 7.0], &params(1.0, 5.0), &mut rng);
        assert_eq!(o.result, RoundResult::Collision(vec![0, 1]));
        assert_eq!(o.elapsed(), 101);
        let o = contention_round(&[1.0, 2.0], &params(1.0, 5.0), &mut rng);
        assert_eq!(o.result, RoundResult::Idle);
        assert_eq!(o.elapsed(), 1);
    }

    #[test]
    fn contention_probabilities_for_two_terminals() {
        // Enumerating the four transmit patterns at p = 1/2 gives
        // P(success) = 1/2, P(collision) = P(idle) = 1/4.
        let p = 0.5;
        let enumerated_success = 2.0 * p * (1.0 - p);
        let enumerated_collision = p * p;
        let rounds = 200_000;
        let mut rng = rng::stream(11, 0);
        let (mut s, mut c, mut i) = (0, 0, 0);
        for _ in 0..rounds {
            match contention_round(&[6.0, 7.0], &params(p, 5.0), &mut rng).result {
                RoundResult::Success(_) => s += 1,
                RoundResult::Collision(_) => c += 1,
                RoundResult::Idle => i += 1,
            }
        }
        let se = |q: f64| (q * (1.0 - q) / rounds as f64).sqrt();
        let check = |count: i32, q: f64| (count as f64 / rounds as f64 - q).abs() <= 4.0 * se(q);
        assert!(check(s, enumerated_success));
        assert!(check(c, enumerated_collision));
        assert!(check(i, 1.0 - enumerated_success - enumerated_collision));
    }

    #[test]
    fn success_probability_matches_binomial_term() {
        let rounds = 100_000;
        for (k, p) in [(3usize, 0.2), (5, 0.3), (8, 0.1)] {
            let expected = k as f64 * p * (1.0 - p).powi(k as i32 - 1);
            let mut rng = rng::stream(k as u64, 0);
            let wins = (0..rounds)
                .filter(|_| contention_round(&vec![9.0; k], &params(p, 1.0), &mut rng).winner().is_some())
                .count();
            let se = (expected * (1.0 - expected) / rounds as f64).sqrt();
            let got = wins as f64 / rounds as f64;
            assert!((got - expected).abs() <= 3.0 * se, "k {k} p {p}: {got} vs {expected}");
        }
    }

    #[test]
    fn zero_contention_single_terminal_matches_slotted_engine() {
        use crate::policy::{Policy, PolicyKind};
        use crate::sim::{run_with_policy, Scenario};
        let p = IpraParams {
            delta: 0,
            ..params(1.0, 0.0)
        };
        for lambda in [0.15, 0.6, 1.0] {
            let ipra = simulate(&[lambda], &p, 20_000, 500, 21, None).unwrap();
            let s = Scenario {
                horizon: 20_000,
                warmup: Some(500),
                ..Scenario::uniform(1, lambda, PolicyKind::WhittleOneBuffer)
            };
            let mut policy = Policy::whittle_one_buffer(&[lambda]).unwrap();
            let slotted = run_with_policy(&s, &mut policy, 21, None).unwrap();
            assert!((ipra.mean_aoi - slotted.mean_aoi).abs() < 1e-12, "lambda {lambda}");
            assert_eq!(ipra.success_count, slotted.success_count);
            assert_eq!(ipra.measured_frames, 19_500.0);
        }
    }

    #[test]
    fn empty_buffers_never_contend() {
        let mut rng = rng::stream(1, 0);
        for _ in 0..100 {
            let o = contention_round(&[0.0, 0.0, 0.0], &params(1.0, 0.0), &mut rng);
            assert_eq!(o.result, RoundResult::Idle);
        }
    }

    #[test]
    fn overhead_examples() {
        let p = IpraParams::default();
        let all_success = vec![ContentionOutcome::success(0, &p); 50];
        assert!((overhead_fraction(&all_success).unwrap() - 100.0 / 101.0).abs() < 1e-15);
        let all_idle = vec![ContentionOutcome::idle(1, &p); 50];
        assert_eq!(overhead_fraction(&all_idle).unwrap(), 0.0);
        let alternating: Vec<_> = (0..100)
            .map(|k| {
                if k % 2 == 0 {
                    ContentionOutcome::success(0, &p)
                } else {
                    ContentionOutcome::collision(vec![0, 1], &p)
                }
            })
            .collect();
        let expected = 0.5 * 100.0 / 101.0;
        assert!((overhead_fraction(&alternating).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.495).abs() < 1e-3);
        assert_eq!(overhead_fraction(&[]), Err(IpraError::EmptyTrace));
    }

    #[test]
    fn overhead_approaches_one_as_frames_lengthen() {
        let mut last = 0.0;
        for t_s in [10, 100, 1000] {
            let p = IpraParams {
                t_s,
                t_c: t_s,
                ..IpraParams::default()
            };
            let trace = vec![ContentionOutcome::success(0, &p); 10];
            let frac = overhead_fraction(&trace).unwrap();
            assert_eq!(frac, t_s as f64 / (t_s + 1) as f64);
            assert!(frac > last);
            last = frac;
        }
    }

    #[test]
    fn params_validation() {
        assert!(params(0.0, 1.0).validate().is_err());
        assert!(params(1.5, 1.0).validate().is_err());
        assert!(params(0.5, -1.0).validate().is_err());
        let bad = IpraParams {
            delta: 200,
            ..IpraParams::default()
        };
        assert_eq!(bad.validate(), Err(IpraError::Timing));
        assert!(IpraParams::default().validate().is_ok());
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = params(0.4, 3.0);
        let a = simulate(&[0.3; 4], &p, 5_000, 100, 9, None).unwrap();
        let b = simulate(&[0.3; 4], &p, 5_000, 100, 9, None).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_aoi >= 1.0);
    }

    #[test]
    fn index_evaluations_are_per_terminal() {
        let stats = simulate(&[0.3; 3], &params(0.5, 0.0), 2_000, 10, 4, None).unwrap();
        let evals = &stats.index_evaluations;
        assert!(evals.iter().all(|&e| e == evals[0] && e > 0));
    }

    #[test]
    fn collisions_keep_packets() {
        // p = 1 with two always-eligible terminals collides forever.
        let mut deliveries = 0;
        let mut obs = |r: &RoundRecord<'_>| {
            if r.outcome.winner().is_some() {
                deliveries += 1;
            }
        };
        let stats = simulate(&[1.0, 1.0], &params(1.0, 0.0), 200, 0, 3, Some(&mut obs)).unwrap();
        assert_eq!(deliveries, 0);
        assert!(stats.collision_count > 0);
        assert_eq!(stats.success_count, 0);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let s = golden_section(|x| (x - 0.3).powi(2), 0.0, 1.0, 40);
        assert!((s.best.0 - 0.3).abs() < 1e-6);
        assert!(looks_unimodal(&s.samples, 0.0));
        let wavy = [(0.0, 1.0), (0.25, 0.2), (0.5, 1.0), (0.75, 0.1), (1.0, 1.0)];
        assert!(!looks_unimodal(&wavy, 0.01));
    }

    #[test]
    fn single_terminal_optimum_always_transmits() {
        let lambda = 0.4;
        let budget = SearchBudget {
            horizon: 20_000,
            warmup: 100,
            outer_iters: 6,
            inner_iters: 6,
            ..SearchBudget::default()
        };
        let best = optimize_params(&[lambda], &IpraParams::default(), (0.05, 1.0), (0.0, 20.0), &budget).unwrap();
        assert_eq!(best.params.p, 1.0);
        // smallest positive index is m(a, 1) = 1 / lambda
        assert!(best.params.index_threshold <= 1.0 / lambda);
        let again = optimize_params(&[lambda], &IpraParams::default(), (0.05, 1.0), (0.0, 20.0), &budget).unwrap();
        assert_eq!(best, again);
    }

    #[test]
    fn optimizer_rejects_bad_ranges() {
        let b = SearchBudget::default();
        let p = IpraParams::default();
        assert!(optimize_params(&[0.5], &p, (0.0, 1.0), (0.0, 1.0), &b).is_err());
        assert!(optimize_params(&[0.5], &p, (0.5, 0.2), (0.0, 1.0), &b).is_err());
        assert!(optimize_params(&[0.5], &p, (0.5, 1.0), (2.0, 1.0), &b).is_err());
    }
}
