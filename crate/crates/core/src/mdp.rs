//! Average-cost relative value iteration on truncated `(a, d)` grids.
//!
//! Two models are solved:
//!
//! * the decoupled single-terminal model with auxiliary scheduling cost `m`,
//! * the joint two-terminal model where exactly one terminal is scheduled
//!   per slot.
//!
//! Transitions leaving the grid are clamped to its boundary. Iteration runs on
//! the aperiodic transform `h <- (1 - tau) h + tau T h` so that deterministic
//! (`lambda = 1`) chains converge, and stops once the span of `T h - h` drops
//! below the tolerance. The reference state `(1, 0)` is pinned to zero.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MdpError;
use crate::model::TerminalState;
use crate::whittle::{self, DecoupledParams};

/// Weight of the Bellman update in the aperiodic transform.
const APERIODICITY: f64 = 0.5;

/// Absolute tolerance under which two Bellman branches count as equal.
pub const TIE_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationSpec {
    pub a_max: u64,
    pub d_max: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl TruncationSpec {
    pub fn new(a_max: u64, d_max: u64, tol: f64, max_iters: usize) -> Result<Self, MdpError> {
        let spec = TruncationSpec {
            a_max,
            d_max,
            tol,
            max_iters,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n x n` grid (`a` in `1..=n`, `d` in `0..=n`).
    pub fn square(n: u64, tol: f64) -> Self {
        TruncationSpec {
            a_max: n,
            d_max: n,
            tol,
            max_iters: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        if self.a_max < 2 || self.d_max < 1 {
            return Err(MdpError::Truncation(format!(
                "grid {}x{} too small",
                self.a_max, self.d_max
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(MdpError::Truncation(format!("tolerance {} must be positive", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(MdpError::Truncation("max_iters must be positive".into()));
        }
        Ok(())
    }

    fn per_terminal(&self) -> usize {
        (self.a_max * (self.d_max + 1)) as usize
    }

    #[inline]
    fn index(&self, a: u64, d: u64) -> usize {
        ((a - 1) * (self.d_max + 1) + d) as usize
    }

    #[inline]
    fn state(&self, i: usize) -> TerminalState {
        let row = self.d_max as usize + 1;
        TerminalState::new((i / row) as u64 + 1, (i % row) as u64).expect("a >= 1 by layout")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Decoupled(DecoupledParams),
    Joint { lambdas: Vec<f64> },
}

/// Solution of an average-cost MDP on a truncated grid.
///
/// Decoupled tables store one entry per `(a, d)`; `policy` is 1 for schedule
/// and 0 for idle. Joint tables store one entry per `((a1, d1), (a2, d2))`
/// with terminal 1 major; `policy` is the index of the scheduled terminal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    model: Model,
    trunc: TruncationSpec,
    f: Vec<f64>,
    j_avg: f64,
    policy: Vec<u8>,
    iterations: usize,
    span: f64,
    warnings: Vec<String>,
}

impl ValueTable {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn truncation(&self) -> &TruncationSpec {
        &self.trunc
    }

    pub fn j_avg(&self) -> f64 {
        self.j_avg
    }

    /// Final span of the Bellman residual.
    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn n_terminals(&self) -> usize {
        match &self.model {
            Model::Decoupled(_) => 1,
            Model::Joint { lambdas } => lambdas.len(),
        }
    }

    fn decoupled_params(&self) -> Result<&DecoupledParams, MdpError> {
        match &self.model {
            Model::Decoupled(p) => Ok(p),
            Model::Joint { .. } => Err(MdpError::WrongModel {
                expected: "decoupled",
            }),
        }
    }

    /// Differential cost-to-go `f(a, d)` of a decoupled table.
    pub fn value(&self, a: u64, d: u64) -> f64 {
        debug_assert!(matches!(self.model, Model::Decoupled(_)));
        self.f[self.trunc.index(a, d)]
    }

    /// Greedy decoupled action at `(a, d)`: `true` schedules.
    pub fn schedules(&self, a: u64, d: u64) -> bool {
        debug_assert!(matches!(self.model, Model::Decoupled(_)));
        self.policy[self.trunc.index(a, d)] == 1
    }

    /// Bellman branches `(idle, schedule)` at `(a, d)` of a decoupled table,
    /// excluding the average cost.
    pub fn q_values(&self, a: u64, d: u64) -> Result<(f64, f64), MdpError> {
        let params = self.decoupled_params()?;
        Ok(decoupled_q(&self.trunc, params, &self.f, a, d))
    }

    /// Joint value `f(s1, s2)`, clamped into the grid.
    pub fn joint_value(&self, states: &[TerminalState]) -> f64 {
        self.f[self.joint_index(states)]
    }

    /// Terminal scheduled by a joint table, clamped into the grid.
    pub fn joint_action(&self, states: &[TerminalState]) -> usize {
        self.policy[self.joint_index(states)] as usize
    }

    fn joint_index(&self, states: &[TerminalState]) -> usize {
        assert_eq!(states.len(), 2, "joint tables cover two terminals");
        let t = &self.trunc;
        let p = t.per_terminal();
        let s1 = states[0].clamped(t.a_max, t.d_max);
        let s2 = states[1].clamped(t.a_max, t.d_max);
        t.index(s1.a(), s1.d()) * p + t.index(s2.a(), s2.d())
    }

    /// Width of the band along `a = a_max` and `d = d_max` where clamping may
    /// distort a decoupled solution: `max(10, ceil(2 beta))`, widened in `a`
    /// until the chance of drifting to the age boundary, `(1 - lambda)^k`,
    /// drops below `1e-10`.
    pub fn guard_band(&self) -> (u64, u64) {
        let (lambda, b) = match &self.model {
            Model::Decoupled(p) => (p.lambda(), whittle::beta(p)),
            Model::Joint { lambdas } => (lambdas.iter().copied().fold(1.0, f64::min), 0.0),
        };
        let base = 10u64.max((2.0 * b).ceil() as u64);
        let drift = if lambda < 1.0 {
            ((1e-10f64).ln() / (1.0 - lambda).ln()).ceil() as u64
        } else {
            0
        };
        (base.max(drift), base)
    }

    /// Largest `(a, d)` outside the guard band.
    pub fn interior(&self) -> (u64, u64) {
        let (ga, gd) = self.guard_band();
        (
            self.trunc.a_max.saturating_sub(ga),
            self.trunc.d_max.saturating_sub(gd),
        )
    }

    /// Row-major CSV dump with a `#` header carrying the grid dimensions.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), MdpError> {
        let io = |e: std::io::Error| MdpError::Truncation(format!("write failed: {e}"));
        let t = &self.trunc;
        writeln!(
            out,
            "# a_max={} d_max={} terminals={} j_avg={:.12} iterations={} span={:e}",
            t.a_max,
            t.d_max,
            self.n_terminals(),
            self.j_avg,
            self.iterations,
            self.span
        )
        .map_err(io)?;
        match &self.model {
            Model::Decoupled(_) => {
                writeln!(out, "a,d,f,action").map_err(io)?;
                for (i, (&v, &u)) in self.f.iter().zip(&self.policy).enumerate() {
                    let s = t.state(i);
                    writeln!(out, "{},{},{:.12},{}", s.a(), s.d(), v, u).map_err(io)?;
                }
            }
            Model::Joint { .. } => {
                writeln!(out, "a1,d1,a2,d2,f,action").map_err(io)?;
                let p = t.per_terminal();
                for (i, (&v, &u)) in self.f.iter().zip(&self.policy).enumerate() {
                    let (s1, s2) = (t.state(i / p), t.state(i % p));
                    writeln!(
                        out,
                        "{},{},{},{},{:.12},{}",
                        s1.a(),
                        s1.d(),
                        s2.a(),
                        s2.d(),
                        v,
                        u
                    )
                    .map_err(io)?;
                }
            }
        }
        Ok(())
    }
}

struct Converged {
    f: Vec<f64>,
    j_avg: f64,
    iterations: usize,
    span: f64,
}

/// Relative value iteration driver. `bellman(h, out)` writes `T h` into `out`.
fn relative_value_iteration<B>(
    n: usize,
    trunc: &TruncationSpec,
    init: Option<&[f64]>,
    mut bellman: B,
) -> Result<Converged, MdpError>
where
    B: FnMut(&[f64], &mut [f64]),
{
    let mut h = match init {
        Some(v) if v.len() == n => v.to_vec(),
        _ => vec![0.0; n],
    };
    let mut th = vec![0.0; n];
    let mut span = f64::INFINITY;
    for iteration in 1..=trunc.max_iters {
        bellman(&h, &mut th);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&t, &v) in th.iter().zip(&h) {
            let diff = t - v;
            lo = lo.min(diff);
            hi = hi.max(diff);
        }
        span = hi - lo;
        // reference state (1, 0) sits at index 0 in both layouts
        let reference = (1.0 - APERIODICITY) * h[0] + APERIODICITY * th[0];
        for (v, &t) in h.iter_mut().zip(&th) {
            *v = (1.0 - APERIODICITY) * *v + APERIODICITY * t - reference;
        }
        if span <= trunc.tol {
            return Ok(Converged {
                f: h,
                j_avg: 0.5 * (lo + hi),
                iterations: iteration,
                span,
            });
        }
    }
    Err(MdpError::NotConverged {
        iterations: trunc.max_iters,
        span,
    })
}

#[inline]
fn decoupled_q(
    t: &TruncationSpec,
    params: &DecoupledParams,
    h: &[f64],
    a: u64,
    d: u64,
) -> (f64, f64) {
    let lambda = params.lambda();
    let a_next = (a + 1).min(t.a_max);
    let af = a as f64;
    let idle = af
        + d as f64
        + (1.0 - lambda) * h[t.index(a_next, d)]
        + lambda * h[t.index(1, (d + a).min(t.d_max))];
    let sched = af
        + params.m()
        + (1.0 - lambda) * h[t.index(a_next, 0)]
        + lambda * h[t.index(1, a.min(t.d_max))];
    (idle, sched)
}

#[inline]
fn prefers_schedule(idle: f64, sched: f64) -> bool {
    sched <= idle + TIE_TOLERANCE
}

/// Solves the decoupled model. Ties between idle and schedule go to
/// schedule, matching the rule "schedule iff `d >= D_a`".
pub fn solve_decoupled(params: &DecoupledParams, trunc: &TruncationSpec) -> Result<ValueTable, MdpError> {
    solve_decoupled_from(params, trunc, None)
}

/// [`solve_decoupled`] warm-started from a previous table on the same grid.
pub fn solve_decoupled_from(
    params: &DecoupledParams,
    trunc: &TruncationSpec,
    warm: Option<&ValueTable>,
) -> Result<ValueTable, MdpError> {
    trunc.validate()?;
    let t = *trunc;
    let n = t.per_terminal();
    let row = t.d_max as usize + 1;
    let init = warm
        .filter(|w| w.trunc.a_max == t.a_max && w.trunc.d_max == t.d_max && w.n_terminals() == 1)
        .map(|w| w.f.as_slice());

    let solved = relative_value_iteration(n, &t, init, |h, out| {
        for (ai, out_row) in out.chunks_mut(row).enumerate() {
            let a = ai as u64 + 1;
            for (d, slot) in out_row.iter_mut().enumerate() {
                let (idle, sched) = decoupled_q(&t, params, h, a, d as u64);
                *slot = idle.min(sched);
            }
        }
    })?;

    let policy: Vec<u8> = (0..n)
        .map(|i| {
            let s = t.state(i);
            let (idle, sched) = decoupled_q(&t, params, &solved.f, s.a(), s.d());
            prefers_schedule(idle, sched) as u8
        })
        .collect();

    let mut table = ValueTable {
        model: Model::Decoupled(*params),
        trunc: t,
        f: solved.f,
        j_avg: solved.j_avg,
        policy,
        iterations: solved.iterations,
        span: solved.span,
        warnings: Vec::new(),
    };
    table.warnings = truncation_warnings(&table);
    Ok(table)
}

fn truncation_warnings(vt: &ValueTable) -> Vec<String> {
    let t = &vt.trunc;
    let mut warnings = Vec::new();
    let mut idle_at_edge = Vec::new();
    for a in 1..=t.a_max {
        if let Err(e) = row_threshold(vt, a) {
            warnings.push(format!("non-threshold policy near the grid edge: {e}"));
        }
        if !vt.schedules(a, t.d_max) {
            idle_at_edge.push(a);
        }
    }
    if let (Some(first), Some(last)) = (idle_at_edge.first(), idle_at_edge.last()) {
        warnings.push(format!(
            "policy idles at d = d_max = {} for a in {first}..={last}; thresholds exceed the grid",
            t.d_max
        ));
    }
    warnings
}

fn row_threshold(vt: &ValueTable, a: u64) -> Result<Option<u64>, MdpError> {
    let d_max = vt.trunc.d_max;
    let first = (0..=d_max).find(|&d| vt.schedules(a, d));
    if let Some(th) = first {
        if let Some(idle) = (th..=d_max).find(|&d| !vt.schedules(a, d)) {
            return Err(MdpError::NotThreshold {
                a,
                scheduled: th,
                idle,
            });
        }
    }
    Ok(first)
}

/// Smallest scheduled `d` for every `a` in `1..=a_max` (`None` when the row
/// idles across the whole grid). Fails if some row is not of threshold form.
pub fn extract_thresholds(vt: &ValueTable) -> Result<Vec<Option<u64>>, MdpError> {
    vt.decoupled_params()?;
    (1..=vt.trunc.a_max).map(|a| row_threshold(vt, a)).collect()
}

/// Per-terminal transition table used by the joint solver.
struct LocalChain {
    lambda: f64,
    /// `next[i][u][arrival]`
    next: Vec<[[u32; 2]; 2]>,
    aoi: Vec<f64>,
    age: Vec<f64>,
}

impl LocalChain {
    fn new(t: &TruncationSpec, lambda: f64) -> Self {
        let n = t.per_terminal();
        let mut next = Vec::with_capacity(n);
        let mut aoi = Vec::with_capacity(n);
        let mut age = Vec::with_capacity(n);
        for i in 0..n {
            let s = t.state(i);
            let mut row = [[0u32; 2]; 2];
            for (u, out) in row.iter_mut().enumerate() {
                for (arr, slot) in out.iter_mut().enumerate() {
                    let ns = s.step(u == 1, arr == 1).clamped(t.a_max, t.d_max);
                    *slot = t.index(ns.a(), ns.d()) as u32;
                }
            }
            next.push(row);
            aoi.push(s.aoi() as f64);
            age.push(s.a() as f64);
        }
        LocalChain {
            lambda,
            next,
            aoi,
            age,
        }
    }
}

/// Solves the joint two-terminal MDP over work-conserving, collision-free
/// policies (one terminal scheduled per slot). `j_avg` is the summed AoI per
/// slot; divide by 2 for the per-terminal benchmark. Ties go to terminal 0.
pub fn solve_joint(lambdas: &[f64], trunc: &TruncationSpec) -> Result<ValueTable, MdpError> {
    if lambdas.len() != 2 {
        return Err(MdpError::UnsupportedTerminalCount(lambdas.len()));
    }
    for &lambda in lambdas {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(crate::error::ParamError::Lambda(lambda).into());
        }
    }
    trunc.validate()?;
    let t = *trunc;
    let p = t.per_terminal();
    let first = LocalChain::new(&t, lambdas[0]);
    let second = LocalChain::new(&t, lambdas[1]);

    let sweep = |h: &[f64], i: usize, out_row: &mut [f64], policy_row: Option<&mut [u8]>, g: &mut [Vec<f64>; 2]| {
        // g[u](j) = E over terminal 0's arrival of h((s0' given u), j)
        let l0 = first.lambda;
        for (u, gu) in g.iter_mut().enumerate() {
            let sched0 = u == 0;
            let [r0, r1] = first.next[i][sched0 as usize];
            let (row0, row1) = (&h[r0 as usize * p..][..p], &h[r1 as usize * p..][..p]);
            for ((x, &v0), &v1) in gu.iter_mut().zip(row0).zip(row1) {
                *x = (1.0 - l0) * v0 + l0 * v1;
            }
        }
        let l1 = second.lambda;
        let mut policy_row = policy_row;
        for j in 0..p {
            let [n00, n01] = second.next[j][0];
            let [n10, n11] = second.next[j][1];
            let q0 = first.age[i] + second.aoi[j]
                + (1.0 - l1) * g[0][n00 as usize]
                + l1 * g[0][n01 as usize];
            let q1 = first.aoi[i] + second.age[j]
                + (1.0 - l1) * g[1][n10 as usize]
                + l1 * g[1][n11 as usize];
            out_row[j] = q0.min(q1);
            if let Some(pr) = policy_row.as_deref_mut() {
                pr[j] = if q0 <= q1 + TIE_TOLERANCE { 0 } else { 1 };
            }
        }
    };

    let solved = relative_value_iteration(p * p, &t, None, |h, out| {
        out.par_chunks_mut(p)
            .enumerate()
            .for_each_init(
                || [vec![0.0; p], vec![0.0; p]],
                |g, (i, out_row)| sweep(h, i, out_row, None, g),
            );
    })?;

    let mut policy = vec![0u8; p * p];
    let mut scratch = vec![0.0; p * p];
    policy
        .par_chunks_mut(p)
        .zip(scratch.par_chunks_mut(p))
        .enumerate()
        .for_each_init(
            || [vec![0.0; p], vec![0.0; p]],
            |g, (i, (pol_row, out_row))| sweep(&solved.f, i, out_row, Some(pol_row), g),
        );

    Ok(ValueTable {
        model: Model::Joint {
            lambdas: lambdas.to_vec(),
        },
        trunc: t,
        f: solved.f,
        j_avg: solved.j_avg,
        policy,
        iterations: solved.iterations,
        span: solved.span,
        warnings: Vec::new(),
    })
}
