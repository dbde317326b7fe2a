//! Empirical, truncated, oracle and class-conditional angular measure estimators.
//!
//! Fitting standardizes every row, keeps only the points passing the radial cut
//! and stores their angles. A query counts the retained angles falling in a set and
//! multiplies the count by a fixed weight.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{angle_into, GridClass, SphereSet};
use crate::simgen::{self, DirichletPareto, MassEstimate};
use crate::transform::{transform_oracle, Dataset, Label, Margins, RankModel};

const FIT_CHUNK: usize = 4096;

/// Radial selection applied to standardized norms, with `t = n/k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Band {
    /// `norm >= t`.
    Above(f64),
    /// `t <= norm < M t`.
    HalfOpen(f64, f64),
    /// `t <= norm <= M t`.
    Closed(f64, f64),
}

impl Band {
    pub fn threshold(n: usize, k: usize) -> f64 {
        n as f64 / k as f64
    }

    pub fn keeps(self, norm: f64) -> bool {
        match self {
            Band::Above(lo) => norm >= lo,
            Band::HalfOpen(lo, hi) => lo <= norm && norm < hi,
            Band::Closed(lo, hi) => lo <= norm && norm <= hi,
        }
    }
}

/// Standardized points kept by a [`Band`], in row order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Retained {
    pub d: usize,
    /// Row indices in the source dataset.
    pub rows: Vec<usize>,
    pub norms: Vec<f64>,
    /// Row-major angles.
    pub angles: Vec<f64>,
}

impl Retained {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn angle(&self, i: usize) -> &[f64] {
        &self.angles[i * self.d..(i + 1) * self.d]
    }

    pub fn iter_angles(&self) -> impl Iterator<Item = &[f64]> {
        self.angles.chunks_exact(self.d.max(1))
    }

    /// Standardizes each row with `standardize` and keeps those whose norm is in `band`.
    pub fn collect<F>(data: &Dataset, band: Band, standardize: F) -> Retained
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let d = data.d();
        let parts: Vec<Retained> = (0..data.n().div_ceil(FIT_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut part = Retained { d, ..Default::default() };
                let mut v = vec![0.0; d];
                let mut theta = vec![0.0; d];
                for i in c * FIT_CHUNK..((c + 1) * FIT_CHUNK).min(data.n()) {
                    standardize(data.row(i), &mut v);
                    let norm = v.iter().fold(0.0_f64, |m, &x| m.max(x));
                    if !band.keeps(norm) {
                        continue;
                    }
                    if norm.is_infinite() {
                        v.iter_mut().for_each(|x| *x = if x.is_infinite() { 1.0 } else { 0.0 });
                        theta.copy_from_slice(&v);
                    } else {
                        angle_into(&v, &mut theta);
                    }
                    part.rows.push(i);
                    part.norms.push(norm);
                    part.angles.extend_from_slice(&theta);
                }
                part
            })
            .collect();
        parts.into_iter().fold(Retained { d, ..Default::default() }, |mut acc, p| {
            acc.rows.extend(p.rows);
            acc.norms.extend(p.norms);
            acc.angles.extend(p.angles);
            acc
        })
    }

    /// Rank-standardized points of `data` under `model`.
    pub fn ranked(model: &RankModel, data: &Dataset, band: Band) -> Result<Retained> {
        if model.d() != data.d() {
            return Err(Error::DimensionMismatch { expected: model.d(), got: data.d() });
        }
        Ok(Self::collect(data, band, |p, out| {
            model.transform_into(p, out).expect("dimension checked")
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    Empirical,
    Truncated { m: f64 },
    Oracle,
    Conditional { label: Label },
}

/// A fitted angular measure estimate. Immutable once built.
#[derive(Clone, Debug)]
pub struct AngularEstimate {
    kind: EstimatorKind,
    n: usize,
    k: usize,
    retained: Retained,
    /// Multiplier applied to every count.
    weight: f64,
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(invalid("k", format!("must lie in 1..={n}, got {k}")));
    }
    Ok(())
}

fn check_m(m: f64) -> Result<()> {
    if m > 1.0 {
        Ok(())
    } else {
        Err(invalid("M", format!("truncation level must exceed 1, got {m}")))
    }
}

/// `M / (M - 1)`.
pub fn truncation_factor(m: f64) -> f64 {
    m / (m - 1.0)
}

/// `Phi_hat(A) = (1/k) #{i : ||V_hat_i|| >= n/k, theta(V_hat_i) in A}`.
pub fn fit_empirical(data: &Dataset, k: usize) -> Result<AngularEstimate> {
    let model = RankModel::fit(data)?;
    fit_empirical_with(&model, data, k)
}

/// As [`fit_empirical`] with a rank model fitted beforehand on `data`.
pub fn fit_empirical_with(model: &RankModel, data: &Dataset, k: usize) -> Result<AngularEstimate> {
    let n = data.n();
    check_k(n, k)?;
    let retained = Retained::ranked(model, data, Band::Above(Band::threshold(n, k)))?;
    Ok(AngularEstimate { kind: EstimatorKind::Empirical, n, k, retained, weight: 1.0 / k as f64 })
}

/// `Phi_hat_M(A) = M/(M-1) (1/k) #{i : n/k <= ||V_hat_i|| < M n/k, theta(V_hat_i) in A}`.
pub fn fit_truncated(data: &Dataset, k: usize, m: f64) -> Result<AngularEstimate> {
    check_m(m)?;
    let model = RankModel::fit(data)?;
    fit_truncated_with(&model, data, k, m)
}

pub fn fit_truncated_with(model: &RankModel, data: &Dataset, k: usize, m: f64) -> Result<AngularEstimate> {
    check_m(m)?;
    let n = data.n();
    check_k(n, k)?;
    let t = Band::threshold(n, k);
    let retained = Retained::ranked(model, data, Band::HalfOpen(t, m * t))?;
    Ok(AngularEstimate {
        kind: EstimatorKind::Truncated { m },
        n,
        k,
        retained,
        weight: truncation_factor(m) / k as f64,
    })
}

/// `Phi_tilde`: as [`fit_empirical`] with the known standardization `V_i = v(X_i)`.
pub fn fit_oracle(data: &Dataset, k: usize, margins: &dyn Margins) -> Result<AngularEstimate> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    check_k(n, k)?;
    let retained = Retained::collect(data, Band::Above(Band::threshold(n, k)), |p, out| {
        out.copy_from_slice(&transform_oracle(p, margins))
    });
    Ok(AngularEstimate { kind: EstimatorKind::Oracle, n, k, retained, weight: 1.0 / k as f64 })
}

/// `Phi_hat_sigma(A) = (1/k_sigma) #{i : Y_i = sigma, ||V_hat_i|| >= n/k, theta(V_hat_i) in A}`
/// with `k_sigma = k n_sigma / n`. Ranks use the whole sample regardless of labels.
/// Returns the estimate and `k_sigma`.
pub fn fit_conditional(data: &Dataset, k: usize, label: Label) -> Result<(AngularEstimate, f64)> {
    let model = RankModel::fit(data)?;
    fit_conditional_with(&model, data, k, label)
}

pub fn fit_conditional_with(
    model: &RankModel,
    data: &Dataset,
    k: usize,
    label: Label,
) -> Result<(AngularEstimate, f64)> {
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    let n = data.n();
    check_k(n, k)?;
    let n_sigma = labels.iter().filter(|&&l| l == label).count();
    if n_sigma == 0 {
        return Err(Error::EmptyClass(label));
    }
    let k_sigma = k as f64 * n_sigma as f64 / n as f64;
    let all = Retained::ranked(model, data, Band::Above(Band::threshold(n, k)))?;
    let mut retained = Retained { d: all.d, ..Default::default() };
    for i in 0..all.len() {
        if labels[all.rows[i]] == label {
            retained.rows.push(all.rows[i]);
            retained.norms.push(all.norms[i]);
            retained.angles.extend_from_slice(all.angle(i));
        }
    }
    let est = AngularEstimate {
        kind: EstimatorKind::Conditional { label },
        n,
        k,
        retained,
        weight: 1.0 / k_sigma,
    };
    Ok((est, k_sigma))
}

/// `Phi_MC(A) = (d/N) #{i : Theta_i/||Theta_i|| in A, R_i ||Theta_i|| >= 1}`.
pub fn fit_monte_carlo(law: &DirichletPareto, samples: u64, set: &SphereSet, seed: u64) -> Result<MassEstimate> {
    simgen::true_angular_mass(law, set, samples, seed)
}

/// `Phi_MC` for every cell of `grid` in a single pass.
pub fn fit_monte_carlo_grid(law: &DirichletPareto, samples: u64, grid: &GridClass, seed: u64) -> Result<Vec<MassEstimate>> {
    if samples == 0 {
        return Err(invalid("N", "Monte Carlo size must be positive"));
    }
    if grid.d != law.d {
        return Err(Error::DimensionMismatch { expected: law.d, got: grid.d });
    }
    let counts = simgen::monte_carlo_counts(law, samples, seed, grid.len(), |t| grid.cell_of(t));
    Ok(counts.into_iter().map(|c| simgen::mass_from_count(law.d, c, samples)).collect())
}

impl AngularEstimate {
    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.retained.d
    }

    /// Mass carried by each retained point.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn retained(&self) -> &Retained {
        &self.retained
    }

    pub fn retained_count(&self) -> usize {
        self.retained.len()
    }

    /// Number of retained angles satisfying `pred`.
    pub fn count_with(&self, pred: impl Fn(&[f64]) -> bool) -> usize {
        self.retained.iter_angles().filter(|t| pred(t)).count()
    }

    pub fn count(&self, set: &SphereSet) -> usize {
        self.count_with(|t| set.contains(t))
    }

    pub fn mass_of_count(&self, count: usize) -> f64 {
        count as f64 * self.weight
    }

    pub fn query(&self, set: &SphereSet) -> f64 {
        self.mass_of_count(self.count(set))
    }

    pub fn query_with(&self, pred: impl Fn(&[f64]) -> bool) -> f64 {
        self.mass_of_count(self.count_with(pred))
    }

    /// Per-cell counts of `grid`, one pass over the retained points.
    pub fn count_grid(&self, grid: &GridClass) -> Vec<usize> {
        let mut counts = vec![0usize; grid.len()];
        for t in self.retained.iter_angles() {
            if let Some(id) = grid.cell_of(t) {
                counts[id] += 1;
            }
        }
        counts
    }

    /// Masses of every cell of `grid`, indexed by cell id.
    pub fn query_grid(&self, grid: &GridClass) -> Vec<f64> {
        self.count_grid(grid).into_iter().map(|c| self.mass_of_count(c)).collect()
    }

    /// `(1/k) sum_retained theta_j`, per coordinate, with the estimator's weight.
    pub fn moments(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d()];
        for t in self.retained.iter_angles() {
            m.iter_mut().zip(t).for_each(|(a, &x)| *a += x);
        }
        m.iter_mut().for_each(|a| *a *= self.weight);
        m
    }
}

/// Writes `set_id,mass` rows.
pub fn write_masses_csv<W: Write>(writer: W, masses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["set_id", "mass"])?;
    for (id, m) in masses.iter().enumerate() {
        w.write_record([id.to_string(), format!("{m:?}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rect, GridCell};
    use crate::simgen::SimSpec;
    use crate::transform::{LinearMargins, UnitPareto};
    use proptest::prelude::*;

    /// Raw values whose per-column ranks are (1,2,3,4) and (2,1,4,3).
    fn four_points() -> Dataset {
        Dataset::from_rows(
            vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 4.0], vec![4.0, 3.0]],
            None,
        )
        .unwrap()
    }

    fn band_set() -> SphereSet {
        // theta_1 = 1, theta_2 in (0.3, 0.7)
        SphereSet::Rect(Rect {
            face: 0,
            face_floor: 1.0,
            lower: vec![1.0, 0.3],
            upper: vec![1.0, 0.7],
            tau: 0.0,
        })
    }

    #[test]
    fn four_point_hand_example() {
        let data = four_points();
        let model = RankModel::fit(&data).unwrap();
        let v = model.transform_dataset(&data).unwrap();
        let expect = [1.25, 5.0 / 3.0, 5.0 / 3.0, 1.25, 2.5, 5.0, 5.0, 2.5];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let est = fit_empirical(&data, 2).unwrap();
        assert_eq!(est.retained().rows, vec![2, 3]);
        assert!(band_set().contains(&[1.0, 0.5]));
        assert_eq!(est.query(&band_set()), 0.5);
        assert_eq!(est.query(&SphereSet::Empty), 0.0);
        assert_eq!(est.query(&SphereSet::Full), 1.0);
    }

    #[test]
    fn truncated_examples() {
        let data = four_points();
        let est = fit_truncated(&data, 2, 2.0).unwrap();
        assert_eq!(est.retained_count(), 0);
        assert_eq!(est.query(&SphereSet::Full), 0.0);
        let big = fit_truncated(&data, 2, 10.0).unwrap();
        let plain = fit_empirical(&data, 2).unwrap();
        assert_eq!(big.query(&band_set()), plain.query(&band_set()) * 10.0 / 9.0);
        assert!(fit_truncated(&data, 2, 1.0).is_err());
        assert!(fit_empirical(&data, 0).is_err());
        assert!(fit_empirical(&data, 5).is_err());
    }

    #[test]
    fn oracle_examples() {
        let data = four_points();
        let est = fit_oracle(&data, 2, &UnitPareto).unwrap();
        // raw norms (2, 2, 4, 4) against n/k = 2
        assert_eq!(est.retained_count(), 4);
        let all = fit_oracle(&data, 4, &LinearMargins { scale: 2.0 }).unwrap();
        assert_eq!(all.query(&SphereSet::Full), 1.0);
        let sim = SimSpec::unlabeled(2, 1.0, 2000, 4).sample().unwrap();
        let k = 44;
        let est = fit_oracle(&sim, k, &LinearMargins { scale: 2.0 }).unwrap();
        let t = 2000.0 / 44.0;
        let direct = sim.rows().filter(|r| 2.0 * r[0].max(r[1]) >= t).count();
        assert_eq!(est.retained_count(), direct);
    }

    #[test]
    fn conditional_partition() {
        let sim = SimSpec::labeled(3, 1.0, 3.0, 0.5, 4000, 21).sample().unwrap();
        let k = 63;
        let plain = fit_empirical(&sim, k).unwrap();
        let (pos, kp) = fit_conditional(&sim, k, Label::Positive).unwrap();
        let (neg, kn) = fit_conditional(&sim, k, Label::Negative).unwrap();
        assert_eq!(kp, 31.5);
        assert_eq!(kn, 31.5);
        let grid = GridClass::new(3, 0.1, 3).unwrap();
        for set in grid.sets().iter().chain([&SphereSet::Full]) {
            let lhs = kp / k as f64 * pos.query(set) + kn / k as f64 * neg.query(set);
            assert!((lhs - plain.query(set)).abs() < 1e-12);
            assert_eq!(pos.count(set) + neg.count(set), plain.count(set));
        }
    }

    #[test]
    fn conditional_single_class_sides() {
        let data = Dataset::from_rows(
            vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 4.0], vec![4.0, 3.0]],
            Some(vec![Label::Negative, Label::Negative, Label::Positive, Label::Positive]),
        )
        .unwrap();
        let (neg, _) = fit_conditional(&data, 2, Label::Negative).unwrap();
        assert_eq!(neg.query(&SphereSet::Full), 0.0);
        let unlabeled = four_points();
        assert!(matches!(fit_conditional(&unlabeled, 2, Label::Positive), Err(Error::MissingLabels)));
        let one_class = Dataset::from_rows(vec![vec![1.0, 2.0]], Some(vec![Label::Positive])).unwrap();
        assert!(matches!(fit_conditional(&one_class, 1, Label::Negative), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn grid_query_matches_per_set_query() {
        let sim = SimSpec::unlabeled(3, 2.0, 5000, 2).sample().unwrap();
        let est = fit_empirical(&sim, 70).unwrap();
        let grid = GridClass::new(3, 0.1, 4).unwrap();
        let masses = est.query_grid(&grid);
        for (id, set) in grid.sets().iter().enumerate() {
            assert_eq!(masses[id], est.query(set));
        }
    }

    #[test]
    fn moment_constraint_on_simulated_data() {
        let n = 100_000;
        let sim = SimSpec::unlabeled(3, 2.0, n, 17).sample().unwrap();
        let est = fit_empirical(&sim, (n as f64).sqrt() as usize).unwrap();
        for m in est.moments() {
            assert!((m - 1.0).abs() <= 0.15, "{m}");
        }
        assert!(est.query(&SphereSet::Full) <= n as f64 / est.k() as f64);
    }

    #[test]
    fn monte_carlo_examples() {
        let law = DirichletPareto::new(2, 1.0).unwrap();
        assert_eq!(fit_monte_carlo(&law, 1000, &SphereSet::Empty, 1).unwrap().mass, 0.0);
        let grid = GridClass::new(2, 0.0, 2).unwrap();
        let cells = fit_monte_carlo_grid(&law, 200_000, &grid, 5).unwrap();
        let a = grid.sets()[0].clone();
        let b = grid.sets()[1].clone();
        let union = SphereSet::Union { members: vec![a.clone(), b.clone()] };
        let ua = fit_monte_carlo(&law, 200_000, &union, 5).unwrap().mass;
        assert!((ua - cells[0].mass - cells[1].mass).abs() < 1e-12);
    }

    #[test]
    fn csv_dump() {
        let mut out = Vec::new();
        write_masses_csv(&mut out, &[0.5, 0.25]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "set_id,mass\n0,0.5\n1,0.25\n");
    }

    #[test]
    fn truncation_limit_recovers_plain_estimate() {
        let sim = SimSpec::unlabeled(2, 3.0, 3000, 8).sample().unwrap();
        let plain = fit_empirical(&sim, 54).unwrap();
        let max = plain.retained().norms.iter().cloned().fold(0.0, f64::max);
        let m = 2.0 * max * 54.0 / 3000.0;
        let tr = fit_truncated(&sim, 54, m).unwrap();
        let cell = SphereSet::GridCell(GridCell { face: 0, index: vec![3], tau: 0.1, per_axis: 5 });
        assert_eq!(tr.count(&cell), plain.count(&cell));
        assert_eq!(tr.retained_count(), plain.retained_count());
    }

    fn dataset_strategy() -> impl Strategy<Value = Dataset> {
        (2usize..4, 5usize..40).prop_flat_map(|(d, n)| {
            prop::collection::vec(0.01f64..100.0, d * n)
                .prop_map(move |v| Dataset::from_flat(d, v, None).unwrap())
        })
    }

    proptest! {
        #[test]
        fn additive_and_monotone(data in dataset_strategy(), k_frac in 0.05f64..1.0) {
            let k = ((data.n() as f64 * k_frac) as usize).max(1);
            let grid = GridClass::new(data.d(), 0.05, 3).unwrap();
            let sets = grid.sets();
            for est in [fit_empirical(&data, k).unwrap(), fit_truncated(&data, k, 3.0).unwrap()] {
                let a = SphereSet::Union { members: sets[..2].to_vec() };
                let b = SphereSet::Union { members: sets[2..5].to_vec() };
                let ab = SphereSet::Union { members: sets[..5].to_vec() };
                prop_assert_eq!(est.count(&ab), est.count(&a) + est.count(&b));
                prop_assert!(est.query(&a) <= est.query(&ab));
                let full = est.query(&SphereSet::Full);
                prop_assert!(full >= 0.0 && full <= data.n() as f64 / k as f64 * est.weight() * k as f64 + 1e-12);
            }
        }

        #[test]
        fn rank_invariance(data in dataset_strategy(), k_frac in 0.05f64..1.0) {
            let k = ((data.n() as f64 * k_frac) as usize).max(1);
            let moved = data.map_values(|j, x| if j == 0 { x.powi(3) } else { 2.0 * x + 1.0 }).unwrap();
            let grid = GridClass::new(data.d(), 0.05, 3).unwrap();
            prop_assert_eq!(
                fit_empirical(&data, k).unwrap().query_grid(&grid),
                fit_empirical(&moved, k).unwrap().query_grid(&grid)
            );
            prop_assert_eq!(
                fit_truncated(&data, k, 1.7).unwrap().query_grid(&grid),
                fit_truncated(&moved, k, 1.7).unwrap().query_grid(&grid)
            );
        }
    }
}
