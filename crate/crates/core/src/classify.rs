//! Binary classification in the extreme region with angular grid classifiers.
//!
//! Risks only involve training points with `||V_hat_i|| >= n/k` (optionally capped at
//! `M n/k`) whose angle lies in `S_tau`. Angles are assigned to grid cells with
//! [`GridClass::cell_of_lenient`], so every angle of `S_tau` has exactly one cell.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{fit_conditional_with, Band, Retained};
use crate::geometry::{in_tau_interior, GridClass};
use crate::simgen::{monte_carlo_counts, DirichletPareto, MassEstimate};
use crate::transform::{Dataset, Label, RankModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularClassifier {
    pub grid: GridClass,
    /// Label of each cell, indexed by cell id.
    pub cell_labels: Vec<Label>,
    pub default_label: Label,
}

impl AngularClassifier {
    pub fn new(grid: GridClass, cell_labels: Vec<Label>, default_label: Label) -> Result<Self> {
        if cell_labels.len() != grid.len() {
            return Err(invalid("cell_labels", format!("expected {} labels, got {}", grid.len(), cell_labels.len())));
        }
        Ok(Self { grid, cell_labels, default_label })
    }

    pub fn constant(grid: GridClass, label: Label) -> Self {
        let cell_labels = vec![label; grid.len()];
        Self { grid, cell_labels, default_label: label }
    }

    /// `g(theta)`.
    pub fn predict(&self, theta: &[f64]) -> Label {
        self.grid
            .cell_of_lenient(theta)
            .map_or(self.default_label, |id| self.cell_labels[id])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub empirical_risk: f64,
    /// Points entering the risk: radially retained with angle in `S_tau`.
    pub retained: usize,
    /// Positive points predicted negative.
    pub false_negatives: usize,
    /// Negative points predicted positive.
    pub false_positives: usize,
    pub risk_positive: f64,
    pub risk_negative: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(invalid("tau", format!("must lie in (0, 1), got {tau}")))
    }
}

fn training_band(n: usize, k: usize, m: Option<f64>) -> Result<Band> {
    if k == 0 || k > n {
        return Err(invalid("k", format!("must lie in 1..={n}, got {k}")));
    }
    let t = Band::threshold(n, k);
    match m {
        None => Ok(Band::Above(t)),
        Some(m) if m > 1.0 => Ok(Band::Closed(t, m * t)),
        Some(m) => Err(invalid("M", format!("truncation level must exceed 1, got {m}"))),
    }
}

/// Prefactor `1/k`, or `M / (k (M - 1))` when truncated.
fn prefactor(k: usize, m: Option<f64>) -> f64 {
    match m {
        None => 1.0 / k as f64,
        Some(m) => m / (k as f64 * (m - 1.0)),
    }
}

/// `L_hat^tau(g)` or, with `m`, its truncated version.
pub fn empirical_risk(
    g: &AngularClassifier,
    model: &RankModel,
    data: &Dataset,
    k: usize,
    tau: f64,
    m: Option<f64>,
) -> Result<RiskReport> {
    check_tau(tau)?;
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    let band = training_band(data.n(), k, m)?;
    let kept = Retained::ranked(model, data, band)?;
    let (mut retained, mut fneg, mut fpos) = (0, 0, 0);
    for (i, theta) in kept.iter_angles().enumerate() {
        if !in_tau_interior(theta, tau) {
            continue;
        }
        retained += 1;
        let y = labels[kept.rows[i]];
        if g.predict(theta) != y {
            match y {
                Label::Positive => fneg += 1,
                Label::Negative => fpos += 1,
            }
        }
    }
    let w = prefactor(k, m);
    Ok(RiskReport {
        empirical_risk: (fneg + fpos) as f64 * w,
        retained,
        false_negatives: fneg,
        false_positives: fpos,
        risk_positive: fneg as f64 * w,
        risk_negative: fpos as f64 * w,
    })
}

/// Per-cell `(positives, negatives)` among training points entering the risk.
pub fn cell_votes(
    grid: &GridClass,
    model: &RankModel,
    data: &Dataset,
    k: usize,
    m: Option<f64>,
) -> Result<(Vec<(usize, usize)>, (usize, usize))> {
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    let kept = Retained::ranked(model, data, training_band(data.n(), k, m)?)?;
    let mut votes = vec![(0usize, 0usize); grid.len()];
    let mut overall = (0usize, 0usize);
    for (i, theta) in kept.iter_angles().enumerate() {
        let positive = labels[kept.rows[i]] == Label::Positive;
        if positive {
            overall.0 += 1;
        } else {
            overall.1 += 1;
        }
        if let Some(id) = grid.cell_of_lenient(theta) {
            if positive {
                votes[id].0 += 1;
            } else {
                votes[id].1 += 1;
            }
        }
    }
    Ok((votes, overall))
}

/// Empirical risk minimizer over all labelings of the grid `(d, tau, s)`: majority vote
/// per cell. Tied and empty cells take the majority label of all retained points
/// (positive on a tie).
pub fn train_grid_majority(
    model: &RankModel,
    data: &Dataset,
    k: usize,
    tau: f64,
    s: usize,
    m: Option<f64>,
) -> Result<AngularClassifier> {
    check_tau(tau)?;
    let grid = GridClass::new(data.d(), tau, s)?;
    let (votes, (pos, neg)) = cell_votes(&grid, model, data, k, m)?;
    if pos + neg == 0 {
        return Err(Error::NoRetainedPoints);
    }
    let default_label = Label::from_sign(pos >= neg);
    let cell_labels = votes
        .iter()
        .map(|&(p, q)| match p.cmp(&q) {
            std::cmp::Ordering::Greater => Label::Positive,
            std::cmp::Ordering::Less => Label::Negative,
            std::cmp::Ordering::Equal => default_label,
        })
        .collect();
    AngularClassifier::new(grid, cell_labels, default_label)
}

/// Misclassification rate over test points with `||V_hat'_i|| >= n/k` and angle in
/// `S_tau`, where `V_hat'` uses the training ranks. `None` when no test point qualifies.
pub fn test_error(
    g: &AngularClassifier,
    model: &RankModel,
    test: &Dataset,
    k: usize,
    n: usize,
    tau: f64,
) -> Result<Option<f64>> {
    let labels = test.labels().ok_or(Error::MissingLabels)?;
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    let kept = Retained::ranked(model, test, Band::Above(Band::threshold(n, k)))?;
    let (mut count, mut wrong) = (0usize, 0usize);
    for (i, theta) in kept.iter_angles().enumerate() {
        if in_tau_interior(theta, tau) {
            count += 1;
            wrong += usize::from(g.predict(theta) != labels[kept.rows[i]]);
        }
    }
    Ok((count > 0).then(|| wrong as f64 / count as f64))
}

/// Both sides of `L_hat^tau(g) = (k_+/k) Phi_hat_+(S_g^- ∩ S_tau) + (k_-/k) Phi_hat_-(S_g^+ ∩ S_tau)`
/// in exact rational arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RiskIdentity {
    pub lhs: Ratio<i128>,
    pub rhs: Ratio<i128>,
}

pub fn risk_identity_check(
    g: &AngularClassifier,
    model: &RankModel,
    data: &Dataset,
    k: usize,
    tau: f64,
) -> Result<RiskIdentity> {
    let direct = empirical_risk(g, model, data, k, tau, None)?;
    let lhs = Ratio::new((direct.false_negatives + direct.false_positives) as i128, k as i128);
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    let n = data.n() as i128;
    let mut rhs = Ratio::from_integer(0);
    for label in [Label::Positive, Label::Negative] {
        let n_sigma = labels.iter().filter(|&&l| l == label).count() as i128;
        if n_sigma == 0 {
            continue;
        }
        let (est, _) = fit_conditional_with(model, data, k, label)?;
        let count = est.count_with(|t| in_tau_interior(t, tau) && g.predict(t) == label.flip()) as i128;
        let k_sigma = Ratio::new(k as i128 * n_sigma, n);
        let phi = Ratio::from_integer(count) / k_sigma;
        rhs += k_sigma / Ratio::from_integer(k as i128) * phi;
    }
    Ok(RiskIdentity { lhs, rhs })
}

/// Monte Carlo surrogate of the limit risk
/// `L_inf(g) = p Phi_+(S_g^- ∩ S_tau) + (1 - p) Phi_-(S_g^+ ∩ S_tau)` for the two-class
/// Pareto-Dirichlet model, with class-conditional measures computed per class.
pub fn limit_risk_mc(
    g: &AngularClassifier,
    tau: f64,
    nu_plus: f64,
    nu_minus: f64,
    p: f64,
    samples: u64,
    seed: u64,
) -> Result<MassEstimate> {
    check_tau(tau)?;
    if samples == 0 {
        return Err(invalid("N", "Monte Carlo size must be positive"));
    }
    let d = g.grid.d;
    let mut mass = 0.0;
    let mut var = 0.0;
    for (i, (label, nu, w)) in [(Label::Positive, nu_plus, p), (Label::Negative, nu_minus, 1.0 - p)]
        .into_iter()
        .enumerate()
    {
        let law = DirichletPareto::new(d, nu)?;
        let counts = monte_carlo_counts(&law, samples, seed.wrapping_add(i as u64), 1, |t| {
            (in_tau_interior(t, tau) && g.predict(t) != label).then_some(0)
        });
        let est = crate::simgen::mass_from_count(d, counts[0], samples);
        mass += w * est.mass;
        var += (w * est.std).powi(2);
    }
    Ok(MassEstimate { mass, std: var.sqrt() })
}
