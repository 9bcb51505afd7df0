//! Closed forms for the single-terminal decoupled model: the threshold
//! family, its average cost and the Whittle index, plus an indexability
//! checker over a truncated state grid.
//!
//! In the decoupled model a terminal pays an auxiliary cost `m` every time it
//! is scheduled. The optimal policy idles in `(a, d)` while `d < D_a` and
//! schedules otherwise, where
//!
//! ```text
//! beta solves  beta^2 / 2 + (1/lambda - 1/2) beta - m = 0,   beta >= 0
//! D_a = (1 - lambda + a lambda) beta - lambda a (a - 1) / 2   for 1 <= a < beta
//! D_a = lambda m                                              for a >= beta
//! J   = 1/lambda + beta
//! ```
//!
//! The index of a state is the auxiliary cost at which `d = D_a`.

use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::model::TerminalState;

fn check_lambda(lambda: f64) -> Result<(), ParamError> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(ParamError::Lambda(lambda))
    }
}

/// Arrival rate and auxiliary scheduling cost of the decoupled model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupledParams {
    lambda: f64,
    m: f64,
}

impl DecoupledParams {
    pub fn new(lambda: f64, m: f64) -> Result<Self, ParamError> {
        check_lambda(lambda)?;
        if !(m.is_finite() && m >= 0.0) {
            return Err(ParamError::Cost(m));
        }
        Ok(DecoupledParams { lambda, m })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Same arrival rate, different auxiliary cost.
    pub fn with_cost(&self, m: f64) -> Result<Self, ParamError> {
        Self::new(self.lambda, m)
    }
}

/// Non-negative root of `beta^2 / 2 + (1/lambda - 1/2) beta - m = 0`.
pub fn beta(params: &DecoupledParams) -> f64 {
    let b = 1.0 / params.lambda - 0.5;
    let m = params.m;
    // b >= 1/2, so the rationalised form never cancels.
    2.0 * m / (b + (b * b + 2.0 * m).sqrt())
}

/// `D_a` for a single packet age.
pub fn threshold(params: &DecoupledParams, a: u64) -> Result<f64, ParamError> {
    if a == 0 {
        return Err(ParamError::Age);
    }
    Ok(ThresholdFamily::new(params).threshold(a))
}

/// Average AoI plus auxiliary cost of the optimal decoupled policy.
pub fn optimal_cost(params: &DecoupledParams) -> f64 {
    1.0 / params.lambda + beta(params)
}

/// The thresholds `D_a` for one `(lambda, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFamily {
    params: DecoupledParams,
    beta: f64,
}

impl ThresholdFamily {
    pub fn new(params: &DecoupledParams) -> Self {
        ThresholdFamily {
            params: *params,
            beta: beta(params),
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn params(&self) -> &DecoupledParams {
        &self.params
    }

    /// `D_a`; `a` must be at least 1.
    pub fn threshold(&self, a: u64) -> f64 {
        debug_assert!(a >= 1);
        let lambda = self.params.lambda;
        let af = a as f64;
        if af < self.beta {
            (1.0 - lambda + af * lambda) * self.beta - lambda * (af - 1.0) * af / 2.0
        } else {
            lambda * self.params.m
        }
    }

    /// `D_1, ..., D_{a_max}`.
    pub fn thresholds(&self, a_max: u64) -> Vec<f64> {
        (1..=a_max).map(|a| self.threshold(a)).collect()
    }

    /// Optimal decoupled action: schedule iff `d >= D_a`.
    pub fn schedules(&self, s: TerminalState) -> bool {
        s.d() as f64 >= self.threshold(s.a())
    }

    /// Smallest integer `d` that is scheduled at packet age `a`.
    pub fn integer_crossing(&self, a: u64) -> u64 {
        self.threshold(a).ceil().max(0.0) as u64
    }
}

/// Whittle index `m(a, d)`.
pub fn whittle(lambda: f64, a: u64, d: u64) -> Result<f64, ParamError> {
    if a == 0 {
        return Err(ParamError::Age);
    }
    Ok(WhittleIndex::new(lambda)?.value(a as f64, d as f64))
}

/// Index evaluator for one arrival rate; validated once so it can sit in
/// per-slot loops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhittleIndex {
    lambda: f64,
}

impl WhittleIndex {
    pub fn new(lambda: f64) -> Result<Self, ParamError> {
        check_lambda(lambda)?;
        Ok(WhittleIndex { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn of(&self, s: TerminalState) -> f64 {
        self.value(s.a() as f64, s.d() as f64)
    }

    /// Index at a real-valued state. Ties on the branch boundary take the
    /// `d / lambda` branch; both branches agree there.
    #[inline]
    pub fn value(&self, a: f64, d: f64) -> f64 {
        let lambda = self.lambda;
        if d > self.branch_point(a) {
            let x = (d + a * (a - 1.0) * lambda / 2.0) / (1.0 - lambda + a * lambda);
            0.5 * x * x + (1.0 / lambda - 0.5) * x
        } else {
            d / lambda
        }
    }

    /// `(lambda / 2) a^2 + (1 - lambda / 2) a`, the gap above which the
    /// quadratic branch applies.
    #[inline]
    pub fn branch_point(&self, a: f64) -> f64 {
        let lambda = self.lambda;
        0.5 * lambda * a * a + (1.0 - 0.5 * lambda) * a
    }
}

/// First inclusion failure found by [`check_indexability`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionViolation {
    pub m_low: f64,
    pub m_high: f64,
    pub a: u64,
    pub d: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexabilityReport {
    pub lambda: f64,
    pub m_grid: Vec<f64>,
    /// `|Pi_m|` on the grid for every entry of `m_grid`.
    pub idle_counts: Vec<usize>,
    /// Number of `(m_i, m_{i+1}, state)` triples breaking inclusion.
    pub violation_count: usize,
    pub first_violation: Option<InclusionViolation>,
    /// `|Pi_0|` on the grid; indexability requires zero.
    pub zero_cost_idle: usize,
}

impl IndexabilityReport {
    pub fn is_indexable(&self) -> bool {
        self.violation_count == 0 && self.zero_cost_idle == 0
    }
}

/// Idle set `{(a, d) : d < D_a}` on `[1, a_max] x [0, d_max]`, row-major.
fn idle_set(family: &ThresholdFamily, a_max: u64, d_max: u64) -> Vec<bool> {
    let mut out = Vec::with_capacity((a_max * (d_max + 1)) as usize);
    for a in 1..=a_max {
        let th = family.threshold(a);
        out.extend((0..=d_max).map(|d| (d as f64) < th));
    }
    out
}

/// Verifies `m_1 < m_2 => Pi_{m_1} ⊆ Pi_{m_2}` along an ascending cost grid
/// and that `Pi_0` is empty.
pub fn check_indexability(
    lambda: f64,
    m_grid: &[f64],
    a_max: u64,
    d_max: u64,
) -> Result<IndexabilityReport, ParamError> {
    check_lambda(lambda)?;
    if a_max < 1 || d_max < 1 {
        return Err(ParamError::Grid("grid bounds must be at least 1".into()));
    }
    if m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ParamError::Grid("cost grid must be strictly ascending".into()));
    }
    let family_at = |m: f64| DecoupledParams::new(lambda, m).map(|p| ThresholdFamily::new(&p));

    let zero = idle_set(&family_at(0.0)?, a_max, d_max);
    let zero_cost_idle = zero.iter().filter(|&&idle| idle).count();

    let mut idle_counts = Vec::with_capacity(m_grid.len());
    let mut violation_count = 0;
    let mut first_violation = None;
    let mut prev: Option<(f64, Vec<bool>)> = None;
    for &m in m_grid {
        let set = idle_set(&family_at(m)?, a_max, d_max);
        idle_counts.push(set.iter().filter(|&&idle| idle).count());
        if let Some((m_low, low)) = &prev {
            for (i, (&was_idle, &is_idle)) in low.iter().zip(&set).enumerate() {
                if was_idle && !is_idle {
                    violation_count += 1;
                    if first_violation.is_none() {
                        let row = (d_max + 1) as usize;
                        first_violation = Some(InclusionViolation {
                            m_low: *m_low,
                            m_high: m,
                            a: (i / row) as u64 + 1,
                            d: (i % row) as u64,
                        });
                    }
                }
            }
        }
        prev = Some((m, set));
    }

    Ok(IndexabilityReport {
        lambda,
        m_grid: m_grid.to_vec(),
        idle_counts,
        violation_count,
        first_violation,
        zero_cost_idle,
    })
}
