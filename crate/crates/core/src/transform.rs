//! Marginal standardization to unit-Pareto scale.
//!
//! The rank transform `v_hat_j(t) = 1 / (1 - n/(n+1) F_hat_j(t))` only depends on
//! how many training values are `<= t` in column `j`; it is evaluated from integer
//! counts as `(n + 1) / (n + 1 - count)`, so any strictly increasing change of the
//! raw columns leaves it bit-for-bit unchanged.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "-1")]
    Negative,
    #[serde(rename = "1")]
    Positive,
}

impl Label {
    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

/// `n` observations in dimension `d`, stored row-major, with optional `±1` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    d: usize,
    values: Vec<f64>,
    labels: Option<Vec<Label>>,
}

impl Dataset {
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Option<Vec<Label>>) -> Result<Self> {
        let d = rows.first().ok_or(Error::EmptyDataset)?.len();
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(d, values, labels)
    }

    pub fn from_flat(d: usize, values: Vec<f64>, labels: Option<Vec<Label>>) -> Result<Self> {
        if d == 0 || values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if values.len() % d != 0 {
            return Err(invalid("values", format!("length {} not a multiple of d={d}", values.len())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(invalid("values", "non-finite observation"));
        }
        let n = values.len() / d;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: l.len() });
            }
        }
        Ok(Self { d, values, labels })
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.d).copied()
    }

    /// Applies `g(j, x)` to every entry.
    pub fn map_values(&self, g: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let d = self.d;
        let values = self.values.iter().enumerate().map(|(i, &x)| g(i % d, x)).collect();
        Self::from_flat(d, values, self.labels.clone())
    }

    /// Headerless CSV; with `labeled`, the last column holds `-1` / `1`.
    pub fn read_csv<R: Read>(reader: R, labeled: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut values = Vec::new();
        let mut labels = labeled.then(Vec::new);
        let mut width = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = line + 1;
            let cols = rec.len() - usize::from(labeled);
            if cols == 0 {
                return Err(Error::Parse { line, reason: "no feature columns".into() });
            }
            if *width.get_or_insert(cols) != cols {
                return Err(Error::Parse { line, reason: format!("expected {} columns", width.unwrap()) });
            }
            for field in rec.iter().take(cols) {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse { line, reason: format!("not a number: {field:?}") })?;
                values.push(x);
            }
            if let Some(l) = labels.as_mut() {
                l.push(match &rec[cols] {
                    "1" => Label::Positive,
                    "-1" => Label::Negative,
                    other => {
                        return Err(Error::Parse { line, reason: format!("label must be -1 or 1, got {other:?}") })
                    }
                });
            }
        }
        Self::from_flat(width.ok_or(Error::EmptyDataset)?, values, labels)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        let mut record: Vec<String> = Vec::with_capacity(self.d + 1);
        for (i, row) in self.rows().enumerate() {
            record.clear();
            // shortest round-trip representation
            record.extend(row.iter().map(|x| format!("{x:?}")));
            if let Some(l) = &self.labels {
                record.push(l[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-column empirical distribution functions of a training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RankModel {
    sorted_columns: Vec<Vec<f64>>,
    n: usize,
}

impl RankModel {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let n = data.n();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let sorted_columns = (0..data.d())
            .into_par_iter()
            .map(|j| {
                let mut col: Vec<f64> = data.column(j).collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Ok(Self { sorted_columns, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.sorted_columns.len()
    }

    /// `#{i : X_ij <= t}`.
    pub fn count_le(&self, j: usize, t: f64) -> usize {
        self.sorted_columns[j].partition_point(|&x| x <= t)
    }

    /// `F_hat_j(t)`.
    pub fn ecdf(&self, j: usize, t: f64) -> f64 {
        self.count_le(j, t) as f64 / self.n as f64
    }

    /// `v_hat_j(t)`, in `[1, n + 1]`.
    pub fn standardize(&self, j: usize, t: f64) -> f64 {
        let m = (self.n + 1) as f64;
        m / (m - self.count_le(j, t) as f64)
    }

    pub fn transform_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        if p.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: p.len() });
        }
        for (j, (o, &x)) in out.iter_mut().zip(p).enumerate() {
            *o = self.standardize(j, x);
        }
        Ok(())
    }

    /// `v_hat(p)`.
    pub fn transform(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; p.len()];
        self.transform_into(p, &mut out)?;
        Ok(out)
    }

    /// `v_hat` applied to every row, row-major.
    pub fn transform_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.d() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: data.d() });
        }
        let d = self.d();
        let mut out = vec![0.0; data.n() * d];
        out.par_chunks_mut(d * 1024)
            .zip(data.values.par_chunks(d * 1024))
            .for_each(|(o, x)| {
                for (orow, xrow) in o.chunks_exact_mut(d).zip(x.chunks_exact(d)) {
                    self.transform_into(xrow, orow).expect("dimension checked");
                }
            });
        Ok(out)
    }
}

/// Known marginal distributions, used for the oracle standardization `v(x)`.
pub trait Margins: Sync {
    /// `F_j(x)`.
    fn cdf(&self, j: usize, x: f64) -> f64;

    /// `v_j(x) = 1 / (1 - F_j(x))`, `+inf` when `F_j(x) = 1`.
    fn standardize(&self, j: usize, x: f64) -> f64 {
        let tail = 1.0 - self.cdf(j, x);
        if tail <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / tail
        }
    }
}

/// Oracle transform `v(p)`.
pub fn transform_oracle(p: &[f64], margins: &dyn Margins) -> Vec<f64> {
    p.iter().enumerate().map(|(j, &x)| margins.standardize(j, x)).collect()
}

/// Unit-Pareto margins, `F(x) = 1 - 1/x` on `[1, inf)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitPareto;

impl Margins for UnitPareto {
    fn cdf(&self, _j: usize, x: f64) -> f64 {
        if x <= 1.0 {
            0.0
        } else {
            1.0 - 1.0 / x
        }
    }

    fn standardize(&self, _j: usize, x: f64) -> f64 {
        x.max(1.0)
    }
}

/// Margins of `X = R Theta` with `R` unit-Pareto and `Theta` a mixture of symmetric
/// Dirichlet laws on the unit simplex.
///
/// For `x >= 1`, `v_j(x) = d x` exactly. Below one, `1 - F_j(x) = E min(1, Theta_j / x)`
/// with `Theta_j ~ Beta(nu, (d - 1) nu)`, evaluated through regularized incomplete
/// beta functions.
#[derive(Clone, Debug)]
pub struct DirichletParetoMargins {
    d: usize,
    /// `(weight, nu)` pairs of the Dirichlet mixture.
    components: Vec<(f64, f64)>,
}

impl DirichletParetoMargins {
    pub fn symmetric(d: usize, nu: f64) -> Self {
        Self { d, components: vec![(1.0, nu)] }
    }

    pub fn mixture(d: usize, components: Vec<(f64, f64)>) -> Self {
        Self { d, components }
    }

    /// `P(X_j > x) = E min(1, Theta_j / x)`.
    pub fn tail(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if x >= 1.0 {
            return 1.0 / (self.d as f64 * x);
        }
        let d = self.d as f64;
        self.components
            .iter()
            .map(|&(w, nu)| {
                let (a, b) = (nu, (d - 1.0) * nu);
                // E[Theta; Theta < x] = a/(a+b) I_x(a+1, b)
                let partial_mean = a / (a + b) * beta_reg(a + 1.0, b, x);
                w * (partial_mean / x + 1.0 - beta_reg(a, b, x))
            })
            .sum()
    }
}

impl Margins for DirichletParetoMargins {
    fn cdf(&self, _j: usize, x: f64) -> f64 {
        1.0 - self.tail(x)
    }

    fn standardize(&self, _j: usize, x: f64) -> f64 {
        if x >= 1.0 {
            self.d as f64 * x
        } else {
            1.0 / self.tail(x)
        }
    }
}

/// `v(x) = scale * x`: the standardization of the Pareto-Dirichlet model on `[1, inf)^d`
/// (with `scale = d`), extended linearly below one.
#[derive(Clone, Copy, Debug)]
pub struct LinearMargins {
    pub scale: f64,
}

impl Margins for LinearMargins {
    fn cdf(&self, _j: usize, x: f64) -> f64 {
        (1.0 - 1.0 / (self.scale * x)).max(0.0)
    }

    fn standardize(&self, _j: usize, x: f64) -> f64 {
        self.scale * x
    }
}
