//! Reference model `X = R Theta` with `R` unit-Pareto and `Theta` symmetric Dirichlet.
//!
//! Its angular measure is explicit: `Phi(A) = d P(X in C_A) = d E[||Theta|| 1{Theta/||Theta|| in A}]`,
//! and the oracle standardization is `v(x) = d x` on `[1, inf)^d`.
//!
//! All randomness is drawn from ChaCha8 streams: block `b` of a run seeded with `s`
//! uses stream `b` of the generator keyed by `s`, so results do not depend on how
//! blocks are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::SphereSet;
use crate::transform::{Dataset, DirichletParetoMargins, Label, Margins};

const ROW_BLOCK: usize = 1 << 12;
/// Samples per Monte Carlo block.
pub const MC_BLOCK: u64 = 1 << 20;

/// SplitMix64 finalizer applied to `base` and each tag in turn.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Law of `(R, Theta)`: unit-Pareto radius, symmetric Dirichlet(`nu`) direction on the simplex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPareto {
    pub d: usize,
    pub nu: f64,
}

impl DirichletPareto {
    pub fn new(d: usize, nu: f64) -> Result<Self> {
        if d < 2 {
            return Err(invalid("d", format!("dimension must be at least 2, got {d}")));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", format!("concentration must be positive, got {nu}")));
        }
        Ok(Self { d, nu })
    }

    fn gamma(&self) -> Gamma<f64> {
        Gamma::new(self.nu, 1.0).expect("nu validated")
    }

    /// Fills `theta` with a Dirichlet draw and returns a unit-Pareto radius.
    fn draw(&self, gamma: &Gamma<f64>, rng: &mut ChaCha8Rng, theta: &mut [f64]) -> f64 {
        let mut sum = 0.0;
        for t in theta.iter_mut() {
            *t = gamma.sample(rng);
            sum += *t;
        }
        if sum > 0.0 {
            theta.iter_mut().for_each(|t| *t /= sum);
        } else {
            // every gamma draw underflowed (tiny nu): put the mass on one vertex
            let j = rng.random_range(0..theta.len());
            theta.iter_mut().enumerate().for_each(|(i, t)| *t = f64::from(u8::from(i == j)));
        }
        let u: f64 = rng.random();
        1.0 / (1.0 - u)
    }

    /// Iterator over `count` draws of `(R, Theta)` from stream `stream` of `seed`.
    pub fn draws(&self, seed: u64, stream: u64, count: usize) -> impl Iterator<Item = (f64, Vec<f64>)> + '_ {
        let gamma = self.gamma();
        let mut rng = stream_rng(seed, stream);
        (0..count).map(move |_| {
            let mut theta = vec![0.0; self.d];
            let r = self.draw(&gamma, &mut rng, &mut theta);
            (r, theta)
        })
    }
}

/// Class structure of a simulated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Classes {
    Unlabeled { nu: f64 },
    /// `Theta | Y = ±1` is symmetric Dirichlet(`nu_plus` / `nu_minus`); exactly
    /// `round(p n)` rows are positive.
    Labeled { nu_plus: f64, nu_minus: f64, p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub classes: Classes,
}

impl SimSpec {
    pub fn unlabeled(d: usize, nu: f64, n: usize, seed: u64) -> Self {
        Self { d, n, seed, classes: Classes::Unlabeled { nu } }
    }

    pub fn labeled(d: usize, nu_plus: f64, nu_minus: f64, p: f64, n: usize, seed: u64) -> Self {
        Self { d, n, seed, classes: Classes::Labeled { nu_plus, nu_minus, p } }
    }

    /// Number of positive rows in labeled mode.
    pub fn positives(&self) -> Option<usize> {
        match self.classes {
            Classes::Unlabeled { .. } => None,
            Classes::Labeled { p, .. } => Some((p * self.n as f64).round() as usize),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "sample size must be positive"));
        }
        match self.classes {
            Classes::Unlabeled { nu } => DirichletPareto::new(self.d, nu).map(drop),
            Classes::Labeled { nu_plus, nu_minus, p } => {
                DirichletPareto::new(self.d, nu_plus)?;
                DirichletPareto::new(self.d, nu_minus)?;
                let pos = self.positives().unwrap_or(0);
                if !(0.0..=1.0).contains(&p) || pos == 0 || pos == self.n {
                    return Err(invalid("p", format!("both classes need members (n={}, p={p})", self.n)));
                }
                Ok(())
            }
        }
    }

    /// Draws the dataset `X_i = R_i Theta_i`.
    pub fn sample(&self) -> Result<Dataset> {
        self.validate()?;
        let d = self.d;
        let positives = self.positives();
        let laws: Vec<(DirichletPareto, Gamma<f64>)> = match self.classes {
            Classes::Unlabeled { nu } => vec![nu],
            Classes::Labeled { nu_plus, nu_minus, .. } => vec![nu_minus, nu_plus],
        }
        .into_iter()
        .map(|nu| {
            let law = DirichletPareto { d, nu };
            (law, law.gamma())
        })
        .collect();
        let mut values = vec![0.0; self.n * d];
        values
            .par_chunks_mut(ROW_BLOCK * d)
            .enumerate()
            .for_each(|(b, chunk)| {
                let mut rng = stream_rng(self.seed, b as u64);
                for (r, row) in chunk.chunks_exact_mut(d).enumerate() {
                    let i = b * ROW_BLOCK + r;
                    let which = positives.map_or(0, |pos| usize::from(i < pos));
                    let (law, gamma) = &laws[which];
                    let radius = law.draw(gamma, &mut rng, row);
                    row.iter_mut().for_each(|x| *x *= radius);
                }
            });
        let labels = positives.map(|pos| (0..self.n).map(|i| Label::from_sign(i < pos)).collect());
        Dataset::from_flat(d, values, labels)
    }
}

/// `v(x)` of the symmetric model: `d x` on `[1, inf)^d`, incomplete-beta evaluation below.
pub fn oracle_margin_transform(x: &[f64], nu: f64) -> Vec<f64> {
    let margins = DirichletParetoMargins::symmetric(x.len(), nu);
    x.iter().enumerate().map(|(j, &t)| margins.standardize(j, t)).collect()
}

/// A Monte Carlo estimate with its standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub mass: f64,
    pub std: f64,
}

/// Streams `samples` draws of `(R', Theta')` in blocks and counts, per bin, the draws with
/// `R' ||Theta'|| >= 1` whose angle `Theta'/||Theta'||` is sent to that bin by `bin_of`.
pub fn monte_carlo_counts<F>(law: &DirichletPareto, samples: u64, seed: u64, bins: usize, bin_of: F) -> Vec<u64>
where
    F: Fn(&[f64]) -> Option<usize> + Sync,
{
    let blocks = samples.div_ceil(MC_BLOCK);
    let gamma = law.gamma();
    let partial: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let len = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut counts = vec![0u64; bins];
            let mut theta = vec![0.0; law.d];
            for _ in 0..len {
                let r = law.draw(&gamma, &mut rng, &mut theta);
                let norm = theta.iter().fold(0.0_f64, |m, &x| m.max(x));
                if r * norm >= 1.0 {
                    theta.iter_mut().for_each(|t| *t /= norm);
                    if let Some(bin) = bin_of(&theta) {
                        counts[bin] += 1;
                    }
                }
            }
            counts
        })
        .collect();
    partial.into_iter().fold(vec![0u64; bins], |mut acc, c| {
        acc.iter_mut().zip(c).for_each(|(a, x)| *a += x);
        acc
    })
}

/// `Phi_MC = (d / N) * count`, with standard deviation `d sqrt(q (1 - q) / N)`, `q = count / N`.
pub fn mass_from_count(d: usize, count: u64, samples: u64) -> MassEstimate {
    let q = count as f64 / samples as f64;
    MassEstimate {
        mass: d as f64 * q,
        std: d as f64 * (q * (1.0 - q) / samples as f64).sqrt(),
    }
}

/// Monte Carlo estimate of `Phi(A)`.
pub fn true_angular_mass(law: &DirichletPareto, set: &SphereSet, samples: u64, seed: u64) -> Result<MassEstimate> {
    if samples == 0 {
        return Err(invalid("N", "Monte Carlo size must be positive"));
    }
    let counts = monte_carlo_counts(law, samples, seed, 1, |t| set.contains(t).then_some(0));
    Ok(mass_from_count(law.d, counts[0], samples))
}

/// `d E[||Theta|| 1{Theta/||Theta|| in A}]` averaged over `samples` Dirichlet draws
/// (no radial variable, hence lower variance than [`true_angular_mass`]).
pub fn angular_mass_closed_form(law: &DirichletPareto, set: &SphereSet, samples: u64, seed: u64) -> MassEstimate {
    let gamma = law.gamma();
    let blocks = samples.div_ceil(MC_BLOCK);
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let len = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut theta = vec![0.0; law.d];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                law.draw(&gamma, &mut rng, &mut theta);
                let norm = theta.iter().fold(0.0_f64, |m, &x| m.max(x));
                theta.iter_mut().for_each(|t| *t /= norm);
                if set.contains(&theta) {
                    s += norm;
                    s2 += norm * norm;
                }
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial.into_iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let nf = samples as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    MassEstimate {
        mass: law.d as f64 * mean,
        std: law.d as f64 * (var / nf).sqrt(),
    }
}
