//! Closed-form concentration bounds for the empirical angular measure, its truncated
//! version and the extreme-region classification risk.
//!
//! The universal constant `C` is not known explicitly, so totals are bound shapes
//! unless a certified value is supplied. Logarithms are natural. Violated side
//! conditions are reported in [`BoundReport::conditions`] instead of failing.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: u64,
    pub k: u64,
    pub d: usize,
    pub delta: f64,
    pub rho: f64,
    pub tau: f64,
    /// Hull-gap constant `c`.
    pub c: f64,
    /// Universal constant `C`.
    pub cap_c: f64,
    /// VC dimension of the framing class (`V_F`, or `V_M` when truncated).
    pub vc: f64,
    pub m: Option<f64>,
    pub bias: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            n: 100_000,
            k: 316,
            d: 2,
            delta: 0.05,
            rho: 0.05,
            tau: 0.1,
            c: 1.0,
            cap_c: 1.0,
            vc: 4.0,
            m: None,
            bias: 0.0,
        }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if self.n == 0 || self.k == 0 {
            return Err(invalid("k", "n and k must be positive"));
        }
        if self.d < 2 {
            return Err(invalid("d", "dimension must be at least 2"));
        }
        for (name, v) in [("delta", self.delta), ("rho", self.rho), ("tau", self.tau)] {
            if !unit(v) {
                return Err(invalid(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if !(self.c > 0.0) {
            return Err(invalid("c", "hull-gap constant must be positive"));
        }
        if !(self.cap_c >= 0.0) || !(self.vc >= 0.0) || !(self.bias >= 0.0) {
            return Err(invalid("C", "C, vc and bias must be non-negative"));
        }
        if let Some(m) = self.m {
            if !(m > 1.0) {
                return Err(invalid("M", format!("truncation level must exceed 1, got {m}")));
            }
        }
        Ok(())
    }

    /// `log((d + 1) / delta)`.
    pub fn log_term(&self) -> f64 {
        ((self.d as f64 + 1.0) / self.delta).ln()
    }
}

/// `Delta = C sqrt(L / (rho k)) + C L / k`, `L = log((d + 1) / delta)`.
pub fn compute_delta(inp: &BoundInputs) -> f64 {
    let l = inp.log_term();
    let k = inp.k as f64;
    inp.cap_c * (l / (inp.rho * k)).sqrt() + inp.cap_c * l / k
}

/// `(2d + 3c (log(d/(3c)) - log Delta + 1)) Delta`.
pub fn gap_untruncated(d: usize, c: f64, delta: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let d = d as f64;
    (2.0 * d + 3.0 * c * ((d / (3.0 * c)).ln() - delta.ln() + 1.0)) * delta
}

/// `M/(M-1) (4 d Delta + 3 c Delta log(min(M, d/(3 c Delta))) + (3 c Delta - d/M)_+)`.
pub fn gap_truncated(d: usize, c: f64, delta: f64, m: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let d = d as f64;
    let cd = 3.0 * c * delta;
    let inner = 4.0 * d * delta + cd * m.min(d / cd).ln() + (cd - d / m).max(0.0);
    m / (m - 1.0) * inner
}

/// `C (sqrt(d (1 + Delta) V L / k) + L / k)`.
fn stochastic_error(inp: &BoundInputs, delta: f64) -> f64 {
    let l = inp.log_term();
    let k = inp.k as f64;
    inp.cap_c * ((inp.d as f64 * (1.0 + delta) * inp.vc * l / k).sqrt() + l / k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideCondition {
    pub name: String,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta_term: f64,
    pub error_term: f64,
    pub gap_term: f64,
    pub bias_term: f64,
    pub total: f64,
    pub conditions: Vec<SideCondition>,
    pub r_minus: f64,
    pub r_plus: f64,
}

impl BoundReport {
    pub fn all_conditions_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }
}

/// Preconditions of the untruncated deviation bound, evaluated at `delta`.
pub fn side_conditions(inp: &BoundInputs, delta: f64) -> Vec<SideCondition> {
    let (n, k) = (inp.n as f64, inp.k as f64);
    let floor = 3.0f64.max(6.0 * inp.c);
    let cond = |name: &str, satisfied: bool| SideCondition { name: name.to_string(), satisfied };
    vec![
        cond("n > max(3, 6c) / tau", n > floor / inp.tau),
        cond("k > max(3, 6c)", k > floor),
        cond("k < tau n", k < inp.tau * n),
        cond("k/n < rho", k / n < inp.rho),
        cond("rho < tau", inp.rho < inp.tau),
        cond("Delta >= 2/k", delta >= 2.0 / k),
        cond("Delta < 1 - 1/k", delta < 1.0 - 1.0 / k),
        cond("Delta < 1/(3c)", delta < 1.0 / (3.0 * inp.c)),
        cond("rho/(1 - Delta rho) <= tau", delta * inp.rho < 1.0 && inp.rho / (1.0 - delta * inp.rho) <= inp.tau),
    ]
}

fn report(inp: &BoundInputs, delta: f64, factor: f64, gap: f64) -> BoundReport {
    let error_term = factor * stochastic_error(inp, delta);
    let bias_term = factor * inp.bias;
    let r0 = 1.0 + 1.0 / inp.n as f64 - 1.0 / inp.k as f64;
    BoundReport {
        delta_term: delta,
        error_term,
        gap_term: gap,
        bias_term,
        total: bias_term + error_term + gap,
        conditions: side_conditions(inp, delta),
        r_minus: r0 - delta,
        r_plus: r0 + delta,
    }
}

/// Deviation bound for `sup_A |Phi_hat(A) - Phi(A)|`, holding with probability `1 - delta`.
pub fn bound_untruncated(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let delta = compute_delta(inp);
    Ok(report(inp, delta, 1.0, gap_untruncated(inp.d, inp.c, delta)))
}

/// Deviation bound for the truncated estimator; requires `inp.m`.
pub fn bound_truncated(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let m = inp.m.ok_or_else(|| invalid("M", "truncation level required"))?;
    let delta = compute_delta(inp);
    Ok(report(inp, delta, m / (m - 1.0), gap_truncated(inp.d, inp.c, delta, m)))
}

/// Classification risk deviation `2 (error + bias + gap)` with its confidence level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationBound {
    pub bound: f64,
    pub confidence: f64,
    pub report: BoundReport,
}

pub fn bound_classification(inp: &BoundInputs) -> Result<ClassificationBound> {
    let report = bound_untruncated(inp)?;
    let d = inp.d as f64;
    Ok(ClassificationBound {
        bound: 2.0 * report.total,
        confidence: 1.0 - inp.delta * (d + 2.0) / (d + 1.0),
        report,
    })
}

/// `delta` such that the classification bound holds with probability `1 - alpha`.
pub fn delta_for_classification_level(d: usize, alpha: f64) -> f64 {
    let d = d as f64;
    alpha * (d + 1.0) / (d + 2.0)
}

/// Heuristic VC dimension of a class defined by `constraints` linear inequalities in
/// dimension `d`: `constraints * (d + 2)`. An upper-bound guide only.
pub fn heuristic_vc(d: usize, constraints: usize) -> f64 {
    (constraints * (d + 2)) as f64
}
