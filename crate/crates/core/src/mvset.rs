//! Minimum-volume sets on the sphere and anomaly flagging of extreme directions.
//!
//! Volumes use the face-wise Lebesgue measure of [`SphereSet::volume`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{AngularEstimate, Band};
use crate::geometry::{angle, sup_norm, GridClass, SphereSet};
use crate::transform::{Dataset, RankModel};

#[derive(Clone, Debug)]
pub struct MvProblem {
    pub class: Vec<SphereSet>,
    pub alpha: f64,
    pub psi: f64,
}

impl MvProblem {
    fn validate(&self) -> Result<()> {
        if self.class.is_empty() {
            return Err(Error::EmptyCandidateClass);
        }
        check_levels(self.alpha, self.psi)
    }
}

fn check_levels(alpha: f64, psi: f64) -> Result<()> {
    if !(alpha > 0.0) || !(psi >= 0.0) {
        return Err(invalid("alpha", format!("need alpha > 0 and psi >= 0, got {alpha}, {psi}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvResult {
    pub chosen: SphereSet,
    /// Class index of the chosen member, or chosen cell ids for the greedy solver.
    pub members: Vec<usize>,
    pub volume: f64,
    pub mass_hat: f64,
    pub feasible: bool,
}

/// Index of the smallest volume among members with `mass >= threshold`, lowest index on ties.
pub fn argmin_feasible(volumes: &[f64], masses: &[f64], threshold: f64) -> Option<usize> {
    volumes
        .iter()
        .zip(masses)
        .enumerate()
        .filter(|(_, (_, &m))| m >= threshold)
        .fold(None, |best: Option<(usize, f64)>, (i, (&v, _))| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Minimizes `lambda(A)` over the class subject to `Phi_hat(A) >= alpha - psi`.
pub fn solve_mvset(problem: &MvProblem, estimate: &AngularEstimate) -> Result<MvResult> {
    problem.validate()?;
    let d = estimate.d();
    let (volumes, masses): (Vec<f64>, Vec<f64>) = problem
        .class
        .par_iter()
        .map(|a| (a.volume(d), estimate.query(a)))
        .unzip();
    let threshold = problem.alpha - problem.psi;
    Ok(match argmin_feasible(&volumes, &masses, threshold) {
        Some(i) => MvResult {
            chosen: problem.class[i].clone(),
            members: vec![i],
            volume: volumes[i],
            mass_hat: masses[i],
            feasible: true,
        },
        None => MvResult {
            chosen: SphereSet::Empty,
            members: vec![],
            volume: 0.0,
            mass_hat: 0.0,
            feasible: false,
        },
    })
}

/// Cells taken in decreasing mass order (index order on ties) until the running mass
/// reaches `threshold`. Returns the selection and its mass, or `None` if the total falls short.
pub fn greedy_select(masses: &[f64], threshold: f64) -> Option<(Vec<usize>, f64)> {
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| masses[b].total_cmp(&masses[a]).then(a.cmp(&b)));
    let mut total = 0.0;
    let mut chosen = Vec::new();
    for i in order {
        if total >= threshold {
            break;
        }
        total += masses[i];
        chosen.push(i);
    }
    (total >= threshold).then(|| {
        chosen.sort_unstable();
        (chosen, total)
    })
}

/// Exact minimum-volume union of equal-volume grid cells with `Phi_hat >= alpha - psi`.
pub fn solve_mvset_greedy_cells(grid: &GridClass, alpha: f64, psi: f64, estimate: &AngularEstimate) -> Result<MvResult> {
    check_levels(alpha, psi)?;
    if grid.d != estimate.d() {
        return Err(Error::DimensionMismatch { expected: estimate.d(), got: grid.d });
    }
    let counts = estimate.count_grid(grid);
    // ordering by counts equals ordering by mass
    let weight = estimate.weight();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let threshold = alpha - psi;
    let mut running = 0usize;
    let mut chosen = Vec::new();
    for &i in &order {
        if estimate.mass_of_count(running) >= threshold {
            break;
        }
        running += counts[i];
        chosen.push(i);
    }
    let feasible = estimate.mass_of_count(running) >= threshold;
    if !feasible {
        return Ok(MvResult {
            chosen: SphereSet::Empty,
            members: vec![],
            volume: 0.0,
            mass_hat: running as f64 * weight,
            feasible: false,
        });
    }
    chosen.sort_unstable();
    let chosen_set = SphereSet::Union {
        members: chosen.iter().map(|&i| SphereSet::GridCell(grid.cell(i))).collect(),
    };
    Ok(MvResult {
        chosen: chosen_set,
        volume: chosen.len() as f64 * grid.cell_volume(),
        mass_hat: estimate.mass_of_count(running),
        members: chosen,
        feasible: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub extreme: bool,
    pub anomaly: bool,
}

/// Flags each test point: non-extreme when `||v_hat(x)|| < n/k`, otherwise anomalous
/// iff its angle lies outside the chosen set.
pub fn score_anomalies(result: &MvResult, model: &RankModel, k: usize, n: usize, test: &Dataset) -> Result<Vec<AnomalyFlag>> {
    if test.d() != model.d() {
        return Err(Error::DimensionMismatch { expected: model.d(), got: test.d() });
    }
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    let band = Band::Above(Band::threshold(n, k));
    (0..test.n())
        .into_par_iter()
        .map(|i| {
            let v = model.transform(test.row(i))?;
            if !band.keeps(sup_norm(&v)) {
                return Ok(AnomalyFlag { extreme: false, anomaly: false });
            }
            let theta = angle(&v)?;
            Ok(AnomalyFlag { extreme: true, anomaly: !result.chosen.contains(&theta) })
        })
        .collect()
}
