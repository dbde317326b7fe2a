//! Simulation studies: estimation error sweeps against a Monte Carlo truth, and the
//! comparison of plain and truncated grid classifiers.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{test_error, train_grid_majority};
use crate::error::{invalid, Result};
use crate::estimators::{
    fit_empirical_with, fit_monte_carlo_grid, fit_oracle, fit_truncated_with, Band, Retained,
};
use crate::geometry::GridClass;
use crate::ks::ks_two_sample;
use crate::simgen::{derive_seed, DirichletPareto, MassEstimate, SimSpec};
use crate::transform::{LinearMargins, RankModel};

const TRUTH_TAG: u64 = 0x7275_7468;

/// `k = floor(sqrt(n))`.
pub fn sqrt_rule(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).max(1)
}

/// Truncation level discarding the `ceil(f * r)` largest of the `r` retained norms
/// (more when norms tie). The cut sits halfway between the smallest discarded norm and
/// the next smaller retained norm (or `n/k`), then is rescaled by `k/n`.
pub fn truncation_level(norms: &[f64], n: usize, k: usize, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid("fraction", format!("must lie in (0, 1), got {fraction}")));
    }
    if norms.is_empty() {
        return Err(crate::error::Error::NoRetainedPoints);
    }
    let t = Band::threshold(n, k);
    let mut sorted = norms.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = ((fraction * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let a = sorted[m - 1];
    let b = sorted[m..].iter().copied().find(|&x| x < a).unwrap_or(t);
    let level = (a + b) / 2.0 / t;
    if level > 1.0 {
        Ok(level)
    } else {
        Err(invalid("fraction", "retained norms all sit on the threshold"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    pub nu: f64,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub tau: f64,
    pub s: usize,
    pub truncation_fractions: Vec<f64>,
    pub seed: u64,
    pub mc_samples: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dims: vec![2],
            nu: 10.0,
            n_list: vec![5_000, 10_000, 50_000, 100_000],
            reps: 20,
            tau: 0.1,
            s: 5,
            truncation_fractions: vec![0.10, 0.05, 0.02],
            seed: 1,
            mc_samples: 10_000_000,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(invalid("reps", "need at least one replication"));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("n_list", "must be non-empty and strictly ascending"));
        }
        if self.dims.is_empty() {
            return Err(invalid("dims", "need at least one dimension"));
        }
        if self.mc_samples == 0 {
            return Err(invalid("mc_samples", "must be positive"));
        }
        for &f in &self.truncation_fractions {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid("truncation_fractions", format!("{f} outside (0, 1)")));
            }
        }
        for &d in &self.dims {
            DirichletPareto::new(d, self.nu)?;
            GridClass::new(d, self.tau, self.s)?;
        }
        Ok(())
    }

    /// Estimator labels in output order.
    pub fn estimators(&self) -> Vec<String> {
        let mut names = vec!["empirical".to_string()];
        names.extend(self.truncation_fractions.iter().map(|f| format!("truncated_{f}")));
        names.push("oracle".to_string());
        names
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub estimator: String,
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub mean_sup_error: f64,
    pub std_sup_error: f64,
    pub reference: f64,
}

/// Monte Carlo truth of one dimension, shared by every replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub d: usize,
    pub nu: f64,
    pub samples: u64,
    pub seed: u64,
    pub cells: Vec<MassEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub truths: Vec<Truth>,
    /// `sup_error[row][rep]`, same order as `rows`.
    pub sup_errors: Vec<Vec<f64>>,
}

pub fn grid_truth(d: usize, nu: f64, tau: f64, s: usize, samples: u64, seed: u64) -> Result<Truth> {
    let law = DirichletPareto::new(d, nu)?;
    let grid = GridClass::new(d, tau, s)?;
    let seed = derive_seed(seed, &[TRUTH_TAG, d as u64]);
    let cells = fit_monte_carlo_grid(&law, samples, &grid, seed)?;
    Ok(Truth { d, nu, samples, seed, cells })
}

fn sup_error(masses: &[f64], truth: &[MassEstimate]) -> f64 {
    masses.iter().zip(truth).fold(0.0, |m, (a, t)| m.max((a - t.mass).abs()))
}

/// Sup-errors of every estimator on one simulated sample.
fn replicate(cfg: &SweepConfig, d: usize, n: usize, rep: usize, truth: &[MassEstimate]) -> Result<Vec<f64>> {
    let grid = GridClass::new(d, cfg.tau, cfg.s)?;
    let k = sqrt_rule(n);
    let seed = derive_seed(cfg.seed, &[d as u64, n as u64, rep as u64]);
    let data = SimSpec::unlabeled(d, cfg.nu, n, seed).sample()?;
    let model = RankModel::fit(&data)?;
    let plain = fit_empirical_with(&model, &data, k)?;
    let mut errors = vec![sup_error(&plain.query_grid(&grid), truth)];
    for &f in &cfg.truncation_fractions {
        let m = truncation_level(&plain.retained().norms, n, k, f)?;
        let est = fit_truncated_with(&model, &data, k, m)?;
        errors.push(sup_error(&est.query_grid(&grid), truth));
    }
    let oracle = fit_oracle(&data, k, &LinearMargins { scale: d as f64 })?;
    errors.push(sup_error(&oracle.query_grid(&grid), truth));
    Ok(errors)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let names = cfg.estimators();
    let mut out = SweepOutput { rows: vec![], truths: vec![], sup_errors: vec![] };
    for &d in &cfg.dims {
        let truth = grid_truth(d, cfg.nu, cfg.tau, cfg.s, cfg.mc_samples, cfg.seed)?;
        let jobs: Vec<(usize, usize)> =
            cfg.n_list.iter().flat_map(|&n| (0..cfg.reps).map(move |r| (n, r))).collect();
        let results: Vec<Vec<f64>> = jobs
            .par_iter()
            .map(|&(n, r)| replicate(cfg, d, n, r, &truth.cells))
            .collect::<Result<_>>()?;
        for (ni, &n) in cfg.n_list.iter().enumerate() {
            let k = sqrt_rule(n);
            let block = &results[ni * cfg.reps..(ni + 1) * cfg.reps];
            for (e, name) in names.iter().enumerate() {
                let errs: Vec<f64> = block.iter().map(|r| r[e]).collect();
                let (mean, std) = mean_std(&errs);
                out.rows.push(SweepRow {
                    estimator: name.clone(),
                    d,
                    n,
                    k,
                    mean_sup_error: mean,
                    std_sup_error: std,
                    reference: 1.0 / (4.0 * (k as f64).sqrt()),
                });
                out.sup_errors.push(errs);
            }
        }
        out.truths.push(truth);
    }
    Ok(out)
}

/// Least-squares slope of `log(mean error)` on `log(k)` for one estimator and dimension.
pub fn log_log_slope(rows: &[SweepRow], estimator: &str, d: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.estimator == estimator && r.d == d && r.mean_sup_error > 0.0)
        .map(|r| ((r.k as f64).ln(), r.mean_sup_error.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "d", "n", "k", "mean_sup_error", "std_sup_error", "reference"])?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.d.to_string(),
            r.n.to_string(),
            r.k.to_string(),
            format!("{:?}", r.mean_sup_error),
            format!("{:?}", r.std_sup_error),
            format!("{:?}", r.reference),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifConfig {
    pub d: usize,
    pub nu_plus: f64,
    pub nu_minus: f64,
    pub p: f64,
    pub n: usize,
    pub n_test: usize,
    pub reps: usize,
    pub tau: f64,
    pub s: usize,
    pub truncation_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifConfig {
    fn default() -> Self {
        Self {
            d: 5,
            nu_plus: 1.0,
            nu_minus: 2.0,
            p: 0.5,
            n: 20_000,
            n_test: 20_000,
            reps: 30,
            tau: 0.1,
            s: 2,
            truncation_fraction: 0.05,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifRep {
    pub rep: usize,
    pub k: usize,
    pub m: Option<f64>,
    pub error_plain: Option<f64>,
    pub error_truncated: Option<f64>,
    /// Reason when the replication produced no comparison.
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifSummary {
    pub config: ClassifConfig,
    pub reps: Vec<ClassifRep>,
    pub mean_error_plain: f64,
    pub mean_error_truncated: f64,
    pub mean_abs_difference: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

fn classif_rep(cfg: &ClassifConfig, rep: usize) -> Result<ClassifRep> {
    let k = sqrt_rule(cfg.n);
    let seed = derive_seed(cfg.seed, &[cfg.d as u64, cfg.n as u64, rep as u64]);
    let train = SimSpec::labeled(cfg.d, cfg.nu_plus, cfg.nu_minus, cfg.p, cfg.n, seed).sample()?;
    let test = SimSpec::labeled(cfg.d, cfg.nu_plus, cfg.nu_minus, cfg.p, cfg.n_test, derive_seed(seed, &[1])).sample()?;
    let model = RankModel::fit(&train)?;
    let mut out = ClassifRep { rep, k, m: None, error_plain: None, error_truncated: None, note: None };
    let retained = Retained::ranked(&model, &train, Band::Above(Band::threshold(cfg.n, k)))?;
    let m = match truncation_level(&retained.norms, cfg.n, k, cfg.truncation_fraction) {
        Ok(m) => m,
        Err(e) => {
            out.note = Some(e.to_string());
            return Ok(out);
        }
    };
    out.m = Some(m);
    let fit = |m| train_grid_majority(&model, &train, k, cfg.tau, cfg.s, m);
    match (fit(None), fit(Some(m))) {
        (Ok(g), Ok(gm)) => {
            out.error_plain = test_error(&g, &model, &test, k, cfg.n, cfg.tau)?;
            out.error_truncated = test_error(&gm, &model, &test, k, cfg.n, cfg.tau)?;
            if out.error_plain.is_none() {
                out.note = Some("no test point in the extreme region".into());
            }
        }
        (Err(e), _) | (_, Err(e)) => out.note = Some(e.to_string()),
    }
    Ok(out)
}

pub fn run_classif_experiment(cfg: &ClassifConfig) -> Result<ClassifSummary> {
    if cfg.reps == 0 {
        return Err(invalid("reps", "need at least one replication"));
    }
    SimSpec::labeled(cfg.d, cfg.nu_plus, cfg.nu_minus, cfg.p, cfg.n, cfg.seed).validate()?;
    GridClass::new(cfg.d, cfg.tau, cfg.s)?;
    let reps: Vec<ClassifRep> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| classif_rep(cfg, r))
        .collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = reps
        .iter()
        .filter_map(|r| Some((r.error_plain?, r.error_truncated?)))
        .collect();
    if pairs.is_empty() {
        return Err(crate::error::Error::NoRetainedPoints);
    }
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let count = pairs.len() as f64;
    let (ks_statistic, ks_p_value) = ks_two_sample(&a, &b).expect("non-empty samples");
    Ok(ClassifSummary {
        config: cfg.clone(),
        mean_error_plain: a.iter().sum::<f64>() / count,
        mean_error_truncated: b.iter().sum::<f64>() / count,
        mean_abs_difference: pairs.iter().map(|(x, y)| (x - y).abs()).sum::<f64>() / count,
        ks_statistic,
        ks_p_value,
        reps,
    })
}
