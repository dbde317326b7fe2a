//! Max-norm geometry of the punctured orthant `E = [0, inf)^d \ {0}`.
//!
//! Angles live on the sup-norm unit sphere `S = {x >= 0 : max_j x_j = 1}`.
//! Subsets of `S` are described by [`SphereSet`], which supports membership,
//! inner/outer hulls and a face-wise Lebesgue volume. Regular grids of
//! hyper-rectangles on `S_tau = {x in S : min_j x_j > tau}` are produced by
//! [`GridClass`], which also provides O(d) cell lookup for a given angle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Sup norm `max_j |x_j|`.
pub fn sup_norm(p: &[f64]) -> f64 {
    p.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// `theta(p) = p / ||p||_inf`. The largest coordinate of the result is exactly `1.0`.
pub fn angle(p: &[f64]) -> Result<Vec<f64>> {
    let norm = sup_norm(p);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(p.iter().map(|&x| x / norm).collect())
}

/// Writes `theta(p)` into `out` and returns `||p||_inf`. The caller guarantees `p != 0`.
#[inline]
pub(crate) fn angle_into(p: &[f64], out: &mut [f64]) -> f64 {
    let norm = sup_norm(p);
    for (o, &x) in out.iter_mut().zip(p) {
        *o = x / norm;
    }
    norm
}

/// `true` iff `min_j theta_j > tau`.
#[inline]
pub fn in_tau_interior(theta: &[f64], tau: f64) -> bool {
    theta.iter().all(|&x| x > tau)
}

/// `M` of the truncated cone; `None` stands for `M = inf`.
pub fn cone_contains(set: &SphereSet, p: &[f64], truncation: Option<f64>) -> Result<bool> {
    if let Some(m) = truncation {
        if m <= 1.0 || m.is_nan() {
            return Err(invalid("M", format!("truncation level must exceed 1, got {m}")));
        }
    }
    let norm = sup_norm(p);
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if norm < 1.0 || truncation.is_some_and(|m| norm >= m) {
        return Ok(false);
    }
    Ok(set.contains(&angle(p)?))
}

/// Which hull of a set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Inner,
    Outer,
}

/// How far a linear constraint moves under an `eps`-hull.
///
/// `Euclidean` shifts every linear constraint `<a, x> <= beta` by `sqrt(d) * eps`
/// (valid for unit Euclidean `a`). `Tight` shifts by `||a||_1 * eps`, which is
/// `eps` for axis-aligned constraints, using `<a, y - x> <= ||a||_1 ||y - x||_inf`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullMode {
    #[default]
    Euclidean,
    Tight,
}

impl HullMode {
    fn axis_shift(self, eps: f64, d: usize) -> f64 {
        match self {
            HullMode::Euclidean => (d as f64).sqrt() * eps,
            HullMode::Tight => eps,
        }
    }

    fn linear_shift(self, a: &[f64], eps: f64) -> f64 {
        match self {
            HullMode::Euclidean => {
                let l2 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                (a.len() as f64).sqrt() * l2 * eps
            }
            HullMode::Tight => a.iter().map(|x| x.abs()).sum::<f64>() * eps,
        }
    }
}

/// A cell of the regular grid on `S_tau`: the face coordinate equals one and each
/// free coordinate `j` lies in the open interval `(tau + i_j h, tau + (i_j + 1) h)`,
/// where the upper end of the last interval is exactly `1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    /// Zero-based index of the coordinate fixed to one.
    pub face: usize,
    /// Interval index of each free coordinate, in increasing coordinate order.
    pub index: Vec<usize>,
    pub tau: f64,
    /// Number of intervals per free axis.
    #[serde(rename = "s")]
    pub per_axis: usize,
}

impl GridCell {
    pub fn dim(&self) -> usize {
        self.index.len() + 1
    }

    pub fn side(&self) -> f64 {
        (1.0 - self.tau) / self.per_axis as f64
    }

    fn bound(&self, i: usize) -> f64 {
        lattice_bound(self.tau, self.side(), self.per_axis, i)
    }

    /// Open interval of free coordinate `j` (`j != face`).
    pub fn interval(&self, j: usize) -> (f64, f64) {
        let slot = if j < self.face { j } else { j - 1 };
        let i = self.index[slot];
        (self.bound(i), self.bound(i + 1))
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        if theta.len() != self.dim() || theta[self.face] < 1.0 {
            return false;
        }
        (0..theta.len())
            .filter(|&j| j != self.face)
            .all(|j| {
                let (lo, hi) = self.interval(j);
                lo < theta[j] && theta[j] < hi
            })
    }

    /// The same cell as a generic [`Rect`].
    pub fn to_rect(&self) -> Rect {
        let d = self.dim();
        let mut lower = vec![f64::NEG_INFINITY; d];
        let mut upper = vec![f64::INFINITY; d];
        for j in (0..d).filter(|&j| j != self.face) {
            let (lo, hi) = self.interval(j);
            lower[j] = lo;
            upper[j] = hi;
        }
        Rect {
            face: self.face,
            face_floor: 1.0,
            lower,
            upper,
            tau: self.tau,
        }
    }
}

fn lattice_bound(tau: f64, h: f64, per_axis: usize, i: usize) -> f64 {
    if i == 0 {
        tau
    } else if i >= per_axis {
        1.0
    } else {
        tau + i as f64 * h
    }
}

/// `{theta in S : theta_face >= face_floor, lower_j < theta_j < upper_j (j != face), min theta > tau}`.
///
/// Generic box produced by hulls of grid cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub face: usize,
    pub face_floor: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub tau: f64,
}

impl Rect {
    pub fn contains(&self, theta: &[f64]) -> bool {
        if theta.len() != self.lower.len() || theta[self.face] < self.face_floor {
            return false;
        }
        theta.iter().enumerate().all(|(j, &x)| {
            x > self.tau && (j == self.face || (self.lower[j] < x && x < self.upper[j]))
        })
    }

    fn free(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.lower.len()).filter(move |&j| j != self.face)
    }

    fn hull(&self, eps: f64, side: Side, mode: HullMode) -> SphereSet {
        let d = self.lower.len();
        let s = mode.axis_shift(eps, d);
        match side {
            Side::Inner => {
                let tau = self.tau + eps;
                if tau >= 1.0 {
                    return SphereSet::Empty;
                }
                let face_floor = if self.face_floor + s <= 1.0 {
                    self.face_floor + s
                } else if self.free().all(|j| self.upper[j] <= 1.0) {
                    // every free coordinate stays below one, so the face coordinate is one
                    self.face_floor
                } else {
                    return SphereSet::Empty;
                };
                let lower: Vec<f64> = self.lower.iter().map(|&x| x + s).collect();
                let upper: Vec<f64> = self.upper.iter().map(|&x| x - s).collect();
                if self.free().any(|j| lower[j] >= upper[j]) {
                    return SphereSet::Empty;
                }
                SphereSet::Rect(Rect {
                    face: self.face,
                    face_floor,
                    lower,
                    upper,
                    tau,
                })
            }
            Side::Outer => SphereSet::Rect(Rect {
                face: self.face,
                face_floor: self.face_floor - s,
                lower: self.lower.iter().map(|&x| x - s).collect(),
                upper: self.upper.iter().map(|&x| x + s).collect(),
                tau: self.tau - eps,
            }),
        }
    }

    /// Exact volume when the box stays on its own face.
    fn exact_volume(&self) -> Option<f64> {
        if self.face_floor < 1.0 || self.free().any(|j| self.upper[j] > 1.0) {
            return None;
        }
        if self.tau >= 1.0 {
            return Some(0.0);
        }
        let floor = self.tau.max(0.0);
        Some(
            self.free()
                .map(|j| (self.upper[j].min(1.0) - self.lower[j].max(floor)).max(0.0))
                .product(),
        )
    }
}

/// A Borel subset of the sup-norm unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SphereSet {
    Empty,
    Full,
    TauInterior {
        tau: f64,
    },
    GridCell(GridCell),
    Rect(Rect),
    /// `{theta in S : <a, theta> <= beta, min theta > tau}`.
    HalfSpace {
        a: Vec<f64>,
        beta: f64,
        tau: f64,
    },
    Intersection {
        members: Vec<SphereSet>,
    },
    Union {
        members: Vec<SphereSet>,
    },
}

impl SphereSet {
    /// Membership of an angle `theta` (assumed to satisfy `||theta||_inf = 1`).
    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            SphereSet::Empty => false,
            SphereSet::Full => true,
            SphereSet::TauInterior { tau } => in_tau_interior(theta, *tau),
            SphereSet::GridCell(c) => c.contains(theta),
            SphereSet::Rect(r) => r.contains(theta),
            SphereSet::HalfSpace { a, beta, tau } => {
                a.len() == theta.len()
                    && in_tau_interior(theta, *tau)
                    && a.iter().zip(theta).map(|(x, y)| x * y).sum::<f64>() <= *beta
            }
            SphereSet::Intersection { members } => members.iter().all(|m| m.contains(theta)),
            SphereSet::Union { members } => members.iter().any(|m| m.contains(theta)),
        }
    }

    /// Inner (`A_-(eps)`) or outer (`A_+(eps)`) hull.
    ///
    /// Inner hulls satisfy `(A_-(eps) + eps B) ∩ S ⊆ A`, outer hulls
    /// `(A + eps B) ∩ S ⊆ A_+(eps)`, with `B` the closed sup-norm unit ball.
    /// Since `S` has sup-norm diameter one, `eps >= 1` gives the empty set
    /// (inner, for any proper subset) or the whole sphere (outer).
    pub fn hull(&self, eps: f64, side: Side, mode: HullMode) -> SphereSet {
        if eps <= 0.0 {
            return self.clone();
        }
        match self {
            SphereSet::Empty => return SphereSet::Empty,
            SphereSet::Full => return SphereSet::Full,
            _ => {}
        }
        if eps >= 1.0 {
            return match side {
                Side::Inner => SphereSet::Empty,
                Side::Outer => SphereSet::Full,
            };
        }
        match self {
            SphereSet::Empty | SphereSet::Full => unreachable!(),
            SphereSet::TauInterior { tau } => match side {
                Side::Inner if tau + eps >= 1.0 => SphereSet::Empty,
                Side::Inner => SphereSet::TauInterior { tau: tau + eps },
                Side::Outer if tau - eps <= 0.0 => SphereSet::Full,
                Side::Outer => SphereSet::TauInterior { tau: tau - eps },
            },
            SphereSet::GridCell(c) => c.to_rect().hull(eps, side, mode),
            SphereSet::Rect(r) => r.hull(eps, side, mode),
            SphereSet::HalfSpace { a, beta, tau } => {
                let s = mode.linear_shift(a, eps);
                match side {
                    Side::Inner if tau + eps >= 1.0 => SphereSet::Empty,
                    Side::Inner => SphereSet::HalfSpace {
                        a: a.clone(),
                        beta: beta - s,
                        tau: tau + eps,
                    },
                    Side::Outer => SphereSet::HalfSpace {
                        a: a.clone(),
                        beta: beta + s,
                        tau: tau - eps,
                    },
                }
            }
            SphereSet::Intersection { members } => SphereSet::Intersection {
                members: members.iter().map(|m| m.hull(eps, side, mode)).collect(),
            },
            SphereSet::Union { members } => SphereSet::Union {
                members: members.iter().map(|m| m.hull(eps, side, mode)).collect(),
            },
        }
    }

    /// Exact `(d-1)`-dimensional face-wise Lebesgue volume when available.
    pub fn exact_volume(&self, d: usize) -> Option<f64> {
        match self {
            SphereSet::Empty => Some(0.0),
            SphereSet::Full => Some(d as f64),
            SphereSet::TauInterior { tau } => {
                Some(d as f64 * (1.0 - tau.max(0.0)).max(0.0).powi(d as i32 - 1))
            }
            SphereSet::GridCell(c) => Some(c.side().powi(c.dim() as i32 - 1)),
            SphereSet::Rect(r) => r.exact_volume(),
            SphereSet::Union { members } => {
                let mut seen: Vec<&GridCell> = Vec::with_capacity(members.len());
                for m in members {
                    match m {
                        SphereSet::GridCell(c) if !seen.contains(&c) => seen.push(c),
                        SphereSet::GridCell(_) => {}
                        _ => return None,
                    }
                }
                Some(seen.iter().map(|c| c.side().powi(c.dim() as i32 - 1)).sum())
            }
            _ => None,
        }
    }

    /// Volume `lambda(A)`: exact when known, otherwise quasi-Monte Carlo on the faces.
    pub fn volume(&self, d: usize) -> f64 {
        self.exact_volume(d)
            .unwrap_or_else(|| face_volume(d, QMC_POINTS, QMC_SEED, |t| self.contains(t)))
    }
}

/// Default number of low-discrepancy points per face for volume estimates.
pub const QMC_POINTS: usize = 100_000;
/// Seed of the Cranley-Patterson shift used by default volume estimates.
pub const QMC_SEED: u64 = 0x5eed_a11e;

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// Estimates the face-wise Lebesgue measure of `{theta in S : pred(theta)}` with a
/// randomly shifted Halton sequence of `points` points per face.
pub fn face_volume(d: usize, points: usize, seed: u64, pred: impl Fn(&[f64]) -> bool) -> f64 {
    assert!(d >= 2 && d - 1 <= PRIMES.len(), "unsupported dimension {d}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d - 1).map(|_| rng.random::<f64>()).collect();
    let mut hits = vec![0usize; d];
    let mut free = vec![0.0; d - 1];
    let mut theta = vec![0.0; d];
    for i in 1..=points as u64 {
        for (m, u) in free.iter_mut().enumerate() {
            *u = (radical_inverse(i, PRIMES[m]) + shift[m]).fract();
        }
        for (face, h) in hits.iter_mut().enumerate() {
            let mut it = free.iter();
            for (j, t) in theta.iter_mut().enumerate() {
                *t = if j == face { 1.0 } else { *it.next().unwrap() };
            }
            if pred(&theta) {
                *h += 1;
            }
        }
    }
    hits.iter().map(|&h| h as f64 / points as f64).sum()
}

/// Face-wise Lebesgue measure of `A_+(eps) \ A_-(eps)`.
pub fn hull_gap_volume(set: &SphereSet, d: usize, eps: f64, mode: HullMode, points: usize, seed: u64) -> f64 {
    let outer = set.hull(eps, Side::Outer, mode);
    let inner = set.hull(eps, Side::Inner, mode);
    face_volume(d, points, seed, |t| outer.contains(t) && !inner.contains(t))
}

/// Parameters of a framing set `Gamma^side(r, s; h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramingSpec {
    pub r: f64,
    /// `0` means no upper radial cut.
    pub s: f64,
    pub h: f64,
    pub side: Side,
}

impl FramingSpec {
    pub fn new(r: f64, s: f64, h: f64, side: Side) -> Result<Self> {
        if !(r > 0.0) {
            return Err(invalid("r", "must be positive"));
        }
        if !(s >= 0.0 && s < r) {
            return Err(invalid("s", format!("need 0 <= s < r, got s={s}, r={r}")));
        }
        if !(h > 0.0) {
            return Err(invalid("h", "must be positive"));
        }
        Ok(Self { r, s, h, side })
    }
}

/// `1/r <= ||p|| (< 1/s when s > 0)` and `theta(p)` in the hull of `set` at radius `h ||p||`.
pub fn framing_contains(set: &SphereSet, spec: &FramingSpec, mode: HullMode, p: &[f64]) -> Result<bool> {
    let norm = sup_norm(p);
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if norm < 1.0 / spec.r || (spec.s > 0.0 && norm >= 1.0 / spec.s) {
        return Ok(false);
    }
    let hull = set.hull(spec.h * norm, spec.side, mode);
    Ok(hull.contains(&angle(p)?))
}

/// The regular grid of `d * S^(d-1)` hyper-rectangles of side `(1 - tau) / S` on `S_tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridClass {
    pub d: usize,
    pub tau: f64,
    #[serde(rename = "s")]
    pub per_axis: usize,
}

impl GridClass {
    pub fn new(d: usize, tau: f64, per_axis: usize) -> Result<Self> {
        if d < 2 {
            return Err(invalid("d", format!("dimension must be at least 2, got {d}")));
        }
        if d - 1 > PRIMES.len() {
            return Err(invalid("d", format!("dimension above {} unsupported", PRIMES.len() + 1)));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(invalid("tau", format!("must lie in [0, 1), got {tau}")));
        }
        if per_axis == 0 {
            return Err(invalid("S", "must be at least 1"));
        }
        let cells = (per_axis as u128).checked_pow(d as u32 - 1).map(|c| c * d as u128);
        if cells.is_none_or(|c| c > 1 << 32) {
            return Err(invalid("S", "grid too large"));
        }
        Ok(Self { d, tau, per_axis })
    }

    pub fn side(&self) -> f64 {
        (1.0 - self.tau) / self.per_axis as f64
    }

    fn cells_per_face(&self) -> usize {
        self.per_axis.pow(self.d as u32 - 1)
    }

    pub fn len(&self) -> usize {
        self.d * self.cells_per_face()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume `h^(d-1)` shared by every cell.
    pub fn cell_volume(&self) -> f64 {
        self.side().powi(self.d as i32 - 1)
    }

    pub fn cell(&self, id: usize) -> GridCell {
        let per_face = self.cells_per_face();
        let face = id / per_face;
        let mut rest = id % per_face;
        let mut index = vec![0; self.d - 1];
        for slot in index.iter_mut().rev() {
            *slot = rest % self.per_axis;
            rest /= self.per_axis;
        }
        GridCell {
            face,
            index,
            tau: self.tau,
            per_axis: self.per_axis,
        }
    }

    pub fn cells(&self) -> Vec<GridCell> {
        (0..self.len()).map(|id| self.cell(id)).collect()
    }

    pub fn sets(&self) -> Vec<SphereSet> {
        self.cells().into_iter().map(SphereSet::GridCell).collect()
    }

    fn bound(&self, i: usize) -> f64 {
        lattice_bound(self.tau, self.side(), self.per_axis, i)
    }

    fn interval_index(&self, x: f64, strict: bool) -> Option<usize> {
        if x <= self.tau || x > 1.0 {
            return None;
        }
        let s = self.per_axis;
        let mut i = (((x - self.tau) / self.side()).floor().max(0.0) as usize).min(s - 1);
        while i > 0 && x < self.bound(i) {
            i -= 1;
        }
        while i + 1 < s && x >= self.bound(i + 1) {
            i += 1;
        }
        if strict && !(self.bound(i) < x && x < self.bound(i + 1)) {
            return None;
        }
        Some(i)
    }

    fn encode(&self, face: usize, theta: &[f64], strict: bool) -> Option<usize> {
        let mut id = face;
        for (j, &x) in theta.iter().enumerate() {
            if j == face {
                continue;
            }
            id = id * self.per_axis + self.interval_index(x, strict)?;
        }
        Some(id)
    }

    /// Cell containing `theta` under the open-interval convention; `None` on lattice
    /// boundaries, outside `S_tau`, or when several coordinates attain the maximum.
    pub fn cell_of(&self, theta: &[f64]) -> Option<usize> {
        if theta.len() != self.d {
            return None;
        }
        let mut faces = theta.iter().enumerate().filter(|(_, &x)| x >= 1.0);
        let (face, _) = faces.next()?;
        if faces.next().is_some() {
            return None;
        }
        self.encode(face, theta, true)
    }

    /// Total assignment of angles in `S_tau` to cells: ties in the maximum go to the
    /// lowest face, lattice boundaries to the upper interval.
    pub fn cell_of_lenient(&self, theta: &[f64]) -> Option<usize> {
        if theta.len() != self.d || !in_tau_interior(theta, self.tau) {
            return None;
        }
        let face = theta.iter().position(|&x| x >= 1.0)?;
        self.encode(face, theta, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cell(face: usize, index: Vec<usize>, tau: f64, s: usize) -> SphereSet {
        SphereSet::GridCell(GridCell {
            face,
            index,
            tau,
            per_axis: s,
        })
    }

    #[test]
    fn angle_examples() {
        assert_eq!(angle(&[2.0, 1.0]).unwrap(), vec![1.0, 0.5]);
        assert_eq!(angle(&[3.0, 3.0, 3.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        let a = angle(&[0.2, 0.8]).unwrap();
        assert_relative_eq!(a[0], 0.25, max_relative = 1e-15);
        assert_eq!(a[1], 1.0);
        assert!(matches!(angle(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn cone_examples() {
        assert!(!cone_contains(&SphereSet::Full, &[0.5, 0.3], None).unwrap());
        assert!(!cone_contains(&SphereSet::Full, &[2.0, 1.0], Some(1.5)).unwrap());
        assert!(cone_contains(&SphereSet::Full, &[2.0, 1.0], Some(2.5)).unwrap());
        let a = cell(0, vec![2], 0.1, 5);
        assert!(cone_contains(&a, &[3.0, 1.5], None).unwrap());
        assert!(!cone_contains(&a, &[1.5, 3.0], None).unwrap());
        assert!(cone_contains(&a, &[3.0, 1.5], Some(1.0)).is_err());
    }

    #[test]
    fn grid_cell_interval_arithmetic() {
        let SphereSet::GridCell(c) = cell(0, vec![2], 0.1, 5) else { unreachable!() };
        let (lo, hi) = c.interval(1);
        assert_relative_eq!(lo, 0.46, max_relative = 1e-12);
        assert_relative_eq!(hi, 0.64, max_relative = 1e-12);
        assert_relative_eq!(c.side(), 0.18, max_relative = 1e-12);
    }

    #[test]
    fn grid_class_sizes() {
        let g = GridClass::new(2, 0.1, 5).unwrap();
        assert_eq!(g.len(), 10);
        assert_relative_eq!(g.side(), 0.18, max_relative = 1e-12);
        assert_eq!(GridClass::new(5, 0.1, 5).unwrap().len(), 3125);
        let g = GridClass::new(2, 0.0, 1).unwrap();
        assert_eq!(g.len(), 2);
        // open faces: (1, x) with 0 < x < 1
        assert_eq!(g.cell_of(&[1.0, 0.3]), Some(0));
        assert_eq!(g.cell_of(&[0.7, 1.0]), Some(1));
        assert_eq!(g.cell_of(&[1.0, 1.0]), None);
    }

    #[test]
    fn cell_ids_roundtrip() {
        let g = GridClass::new(3, 0.1, 4).unwrap();
        for (id, c) in g.cells().iter().enumerate() {
            // centre of the cell maps back to it
            let theta: Vec<f64> = (0..3)
                .map(|j| {
                    if j == c.face {
                        1.0
                    } else {
                        let (lo, hi) = c.interval(j);
                        0.5 * (lo + hi)
                    }
                })
                .collect();
            assert!(c.contains(&theta));
            assert_eq!(g.cell_of(&theta), Some(id));
            assert_eq!(g.cell_of_lenient(&theta), Some(id));
        }
    }

    #[test]
    fn lenient_lookup_ties() {
        let g = GridClass::new(2, 0.1, 5).unwrap();
        assert_eq!(g.cell_of(&[1.0, 1.0]), None);
        // lowest face, top interval
        assert_eq!(g.cell_of_lenient(&[1.0, 1.0]), Some(4));
        let b = 0.1 + 2.0 * g.side();
        assert_eq!(g.cell_of(&[1.0, b]), None);
        assert_eq!(g.cell_of_lenient(&[1.0, b]), Some(2));
        assert_eq!(g.cell_of_lenient(&[1.0, 0.05]), None);
    }

    #[test]
    fn hull_examples() {
        let a = cell(0, vec![2], 0.1, 5);
        // eps >= 1 empties any proper set and fills the outer hull
        assert_eq!(a.hull(1.0, Side::Inner, HullMode::Euclidean), SphereSet::Empty);
        assert_eq!(a.hull(1.5, Side::Outer, HullMode::Tight), SphereSet::Full);
        // TauInterior outer hull with eps >= tau drops the constraint
        let t = SphereSet::TauInterior { tau: 0.1 };
        assert_eq!(t.hull(0.1, Side::Outer, HullMode::Euclidean), SphereSet::Full);
        assert_eq!(t.hull(0.2, Side::Outer, HullMode::Euclidean), SphereSet::Full);
        assert_eq!(
            t.hull(0.05, Side::Inner, HullMode::Euclidean),
            SphereSet::TauInterior { tau: 0.15000000000000002 }
        );
        // tight inner hull shrinks (0.46, 0.64) to (0.48, 0.62)
        let SphereSet::Rect(r) = a.hull(0.02, Side::Inner, HullMode::Tight) else {
            panic!("expected rect")
        };
        assert_relative_eq!(r.lower[1], 0.48, max_relative = 1e-12);
        assert_relative_eq!(r.upper[1], 0.62, max_relative = 1e-12);
        // euclidean mode shifts by sqrt(2) * eps
        let SphereSet::Rect(r) = a.hull(0.02, Side::Inner, HullMode::Euclidean) else {
            panic!("expected rect")
        };
        assert_relative_eq!(r.lower[1], 0.46 + 2f64.sqrt() * 0.02, max_relative = 1e-12);
        // too much shrinkage gives an explicit empty set
        assert_eq!(a.hull(0.1, Side::Inner, HullMode::Tight), SphereSet::Empty);
    }

    #[test]
    fn half_space_hull_follows_linear_shift() {
        let a = vec![0.6, 0.8];
        let set = SphereSet::HalfSpace { a: a.clone(), beta: 1.0, tau: 0.1 };
        match set.hull(0.05, Side::Inner, HullMode::Euclidean) {
            SphereSet::HalfSpace { beta, tau, .. } => {
                assert_relative_eq!(beta, 1.0 - 2f64.sqrt() * 0.05, max_relative = 1e-12);
                assert_relative_eq!(tau, 0.15, max_relative = 1e-12);
            }
            other => panic!("{other:?}"),
        }
        match set.hull(0.05, Side::Outer, HullMode::Tight) {
            SphereSet::HalfSpace { beta, tau, .. } => {
                assert_relative_eq!(beta, 1.0 + 1.4 * 0.05, max_relative = 1e-12);
                assert_relative_eq!(tau, 0.05, max_relative = 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn framing_radial_cut() {
        let spec = FramingSpec::new(0.5, 0.0, 0.01, Side::Outer).unwrap();
        assert!(!framing_contains(&SphereSet::Full, &spec, HullMode::Euclidean, &[1.5, 0.2]).unwrap());
        assert!(framing_contains(&SphereSet::Full, &spec, HullMode::Euclidean, &[2.5, 0.2]).unwrap());
        let band = FramingSpec::new(1.0, 0.5, 1e-12, Side::Inner).unwrap();
        assert!(!framing_contains(&SphereSet::Full, &band, HullMode::Euclidean, &[2.0, 0.2]).unwrap());
        assert!(FramingSpec::new(1.0, 1.0, 0.1, Side::Inner).is_err());
        assert!(FramingSpec::new(1.0, 0.0, 0.0, Side::Inner).is_err());
    }

    #[test]
    fn degenerate_framing_agrees_with_cone() {
        let a = cell(0, vec![2], 0.1, 5);
        let spec = FramingSpec::new(1.0, 0.0, 1e-12, Side::Inner).unwrap();
        for p in [[3.0, 1.5], [1.2, 0.6], [0.9, 0.5], [5.0, 2.7], [2.0, 1.9]] {
            assert_eq!(
                framing_contains(&a, &spec, HullMode::Euclidean, &p).unwrap(),
                cone_contains(&a, &p, None).unwrap(),
                "{p:?}"
            );
        }
    }

    #[test]
    fn volumes() {
        let g = GridClass::new(2, 0.1, 5).unwrap();
        assert_relative_eq!(g.cell_volume(), 0.18, max_relative = 1e-12);
        let u = SphereSet::Union { members: g.sets() };
        assert_relative_eq!(u.exact_volume(2).unwrap(), 1.8, max_relative = 1e-12);
        assert_eq!(SphereSet::Full.volume(3), 3.0);
        // half-plane x_1 <= x_2 on the 2d sphere: face 2 fully, face 1 only at x_2 = 1
        let hs = SphereSet::HalfSpace { a: vec![1.0, -1.0], beta: 0.0, tau: -1.0 };
        assert!((hs.volume(2) - 1.0).abs() < 1e-3);
        // QMC agrees with an exact box volume
        let c = cell(1, vec![1, 3], 0.2, 4);
        let exact = c.exact_volume(3).unwrap();
        let qmc = face_volume(3, 50_000, 7, |t| c.contains(t));
        assert!((qmc - exact).abs() < 2e-3, "{qmc} vs {exact}");
    }

    #[test]
    fn serde_shape() {
        let s = SphereSet::Union {
            members: vec![cell(0, vec![1], 0.1, 5), SphereSet::Full, SphereSet::TauInterior { tau: 0.2 }],
        };
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["kind"], "union");
        assert_eq!(json["members"][0]["kind"], "grid_cell");
        assert_eq!(json["members"][0]["s"], 5);
        assert_eq!(json["members"][1]["kind"], "full");
        assert_eq!(json["members"][2]["kind"], "tau_interior");
        let back: SphereSet = serde_json::from_value(json).unwrap();
        assert_eq!(back, s);
        let hs: SphereSet =
            serde_json::from_str(r#"{"kind":"half_space","a":[1,0],"beta":0.5,"tau":0.1}"#).unwrap();
        assert!(hs.contains(&[0.4, 1.0]));
    }

    use proptest::prelude::*;

    fn sphere_point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        (0..d, prop::collection::vec(0.0f64..=1.0, d)).prop_map(|(face, mut v)| {
            v[face] = 1.0;
            v
        })
    }

    fn cells_and_points() -> impl Strategy<Value = (SphereSet, Vec<f64>)> {
        (2usize..5).prop_flat_map(|d| {
            let g = GridClass::new(d, 0.1, 3).unwrap();
            (0..g.len(), sphere_point(d)).prop_map(move |(id, p)| (SphereSet::GridCell(g.cell(id)), p))
        })
    }

    proptest! {
        #[test]
        fn angle_is_lipschitz(p in prop::collection::vec(0.0f64..10.0, 3), q in prop::collection::vec(0.0f64..10.0, 3)) {
            prop_assume!(sup_norm(&p) > 0.0 && sup_norm(&q) > 0.0);
            let (a, b) = (angle(&p).unwrap(), angle(&q).unwrap());
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let pq: Vec<f64> = p.iter().zip(&q).map(|(x, y)| x - y).collect();
            let bound = 2.0 * sup_norm(&pq) / sup_norm(&p).max(sup_norm(&q));
            prop_assert!(sup_norm(&diff) <= bound * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn angle_is_scale_invariant(p in prop::collection::vec(0.01f64..10.0, 4), lambda in 0.001f64..1000.0) {
            let scaled: Vec<f64> = p.iter().map(|x| x * lambda).collect();
            let (a, b) = (angle(&p).unwrap(), angle(&scaled).unwrap());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-14);
            }
        }

        #[test]
        fn hulls_nest((set, p) in cells_and_points(), e1 in 0.0f64..0.2, e2 in 0.0f64..0.2, tight in any::<bool>()) {
            let mode = if tight { HullMode::Tight } else { HullMode::Euclidean };
            let (small, big) = (e1.min(e2), e1.max(e2));
            let inner_big = set.hull(big, Side::Inner, mode).contains(&p);
            let inner_small = set.hull(small, Side::Inner, mode).contains(&p);
            let outer_small = set.hull(small, Side::Outer, mode).contains(&p);
            let outer_big = set.hull(big, Side::Outer, mode).contains(&p);
            prop_assert!(!inner_big || inner_small);
            prop_assert!(!inner_small || set.contains(&p));
            prop_assert!(!set.contains(&p) || outer_small);
            prop_assert!(!outer_small || outer_big);
        }

        #[test]
        fn framing_sandwiches_cone(
            (set, theta) in cells_and_points(),
            radius in 0.5f64..3.0,
            r_minus in 0.3f64..=1.0,
            r_plus in 1.0f64..3.0,
            h in 0.0001f64..0.1,
        ) {
            let p: Vec<f64> = theta.iter().map(|x| x * radius).collect();
            let inner = FramingSpec::new(r_minus, 0.0, h, Side::Inner).unwrap();
            let outer = FramingSpec::new(r_plus, 0.0, h, Side::Outer).unwrap();
            let cone = cone_contains(&set, &p, None).unwrap();
            prop_assert!(!framing_contains(&set, &inner, HullMode::Euclidean, &p).unwrap() || cone);
            prop_assert!(!cone || framing_contains(&set, &outer, HullMode::Euclidean, &p).unwrap());
        }

        #[test]
        fn off_lattice_angles_lie_in_one_cell(p in sphere_point(3)) {
            let g = GridClass::new(3, 0.1, 3).unwrap();
            let hits: Vec<usize> = (0..g.len()).filter(|&i| g.cell(i).contains(&p)).collect();
            match g.cell_of(&p) {
                Some(id) => prop_assert_eq!(hits, vec![id]),
                None => prop_assert!(hits.is_empty()),
            }
        }
    }

    #[test]
    fn hull_gap_is_linear_in_eps() {
        let g = GridClass::new(3, 0.1, 3).unwrap();
        let cell = SphereSet::GridCell(g.cell(4));
        for mode in [HullMode::Tight, HullMode::Euclidean] {
            let slopes: Vec<f64> = [0.005, 0.01, 0.02]
                .iter()
                .map(|&e| hull_gap_volume(&cell, 3, e, mode, 50_000, 3) / e)
                .collect();
            let max = slopes.iter().cloned().fold(0.0, f64::max);
            let min = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(max < 1.5 * min, "{mode:?}: {slopes:?}");
        }
    }
}
