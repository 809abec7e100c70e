//! CHSH trial distributions and the polytopes they live in.
//!
//! Settings `z = xy` and outcomes `c = ab` are packed into indices
//! `z = x + 2y` and `c = a + 2b`, which gives the row/column order
//! `00, 10, 01, 11` used by the published count tables. A flat index over
//! both is `4 * z + c` (row `xy`, column `ab`).

mod fit;
mod io;
mod polytope;

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fit::{fit_mle, log_likelihood, statistical_strength, MleFit, StrengthReport};
pub use io::{
    counts_from_csv, counts_from_json, counts_to_csv, counts_to_json, distribution_from_json,
    distribution_to_json,
};
pub use polytope::{enumerate_extreme_points, tsirelson_vertices, PolytopeVertexSet};

/// Normalization tolerance for conditional distributions.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Default tolerance of the membership test for the Tsirelson polytope.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Tsirelson's bound on every CHSH expression.
pub const TSIRELSON_BOUND: f64 = 2.0 * SQRT_2;
/// Local-realistic bound on every CHSH expression.
pub const LOCAL_BOUND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SettingsPair {
    pub x: u8,
    pub y: u8,
}

impl SettingsPair {
    pub const ALL: [SettingsPair; 4] = [
        SettingsPair { x: 0, y: 0 },
        SettingsPair { x: 1, y: 0 },
        SettingsPair { x: 0, y: 1 },
        SettingsPair { x: 1, y: 1 },
    ];

    pub fn new(x: u8, y: u8) -> Result<Self> {
        if x > 1 || y > 1 {
            return Err(Error::InvalidInput(format!(
                "settings ({x},{y}) are not binary"
            )));
        }
        Ok(Self { x, y })
    }

    pub fn index(self) -> usize {
        (self.x + 2 * self.y) as usize
    }

    pub fn from_index(z: usize) -> Self {
        Self::ALL[z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutcomePair {
    pub a: u8,
    pub b: u8,
}

impl OutcomePair {
    pub const ALL: [OutcomePair; 4] = [
        OutcomePair { a: 0, b: 0 },
        OutcomePair { a: 1, b: 0 },
        OutcomePair { a: 0, b: 1 },
        OutcomePair { a: 1, b: 1 },
    ];

    pub fn new(a: u8, b: u8) -> Result<Self> {
        if a > 1 || b > 1 {
            return Err(Error::InvalidInput(format!(
                "outcomes ({a},{b}) are not binary"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn index(self) -> usize {
        (self.a + 2 * self.b) as usize
    }

    pub fn from_index(c: usize) -> Self {
        Self::ALL[c]
    }
}

/// Outcome probabilities `p(ab|xy)`, stored as `p[z][c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct ConditionalDistribution {
    p: [[f64; 4]; 4],
}

impl TryFrom<[[f64; 4]; 4]> for ConditionalDistribution {
    type Error = Error;

    fn try_from(p: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ConditionalDistribution> for [[f64; 4]; 4] {
    fn from(d: ConditionalDistribution) -> Self {
        d.p
    }
}

impl ConditionalDistribution {
    /// Validates nonnegativity and per-setting normalization.
    pub fn new(p: [[f64; 4]; 4]) -> Result<Self> {
        for (z, row) in p.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "row {z} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "row {z} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { p })
    }

    /// Rescales each row to sum to one. Used for tables printed to a finite
    /// number of digits.
    pub fn normalized(mut p: [[f64; 4]; 4]) -> Result<Self> {
        for row in p.iter_mut() {
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0) {
                return Err(Error::InvalidDistribution("row with zero mass".into()));
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Self::new(p)
    }

    pub fn uniform() -> Self {
        Self { p: [[0.25; 4]; 4] }
    }

    /// The local-deterministic strategy `a = f(x)`, `b = g(y)`.
    pub fn deterministic(a_of_x: [u8; 2], b_of_y: [u8; 2]) -> Self {
        let mut p = [[0.0; 4]; 4];
        for (z, s) in SettingsPair::ALL.iter().enumerate() {
            let c = OutcomePair {
                a: a_of_x[s.x as usize],
                b: b_of_y[s.y as usize],
            };
            p[z][c.index()] = 1.0;
        }
        Self { p }
    }

    /// Popescu-Rohrlich box: perfectly correlated except anti-correlated at
    /// `x = y = 1`.
    pub fn pr_box() -> Self {
        let mut p = [[0.0; 4]; 4];
        for (z, row) in p.iter_mut().enumerate() {
            if z == 3 {
                row[1] = 0.5;
                row[2] = 0.5;
            } else {
                row[0] = 0.5;
                row[3] = 0.5;
            }
        }
        Self { p }
    }

    /// Convex combination `sum_i w_i d_i`. Weights must be nonnegative and sum to one.
    pub fn mixture(parts: &[(f64, &ConditionalDistribution)]) -> Result<Self> {
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(
                "mixture weights must form a probability vector".into(),
            ));
        }
        let mut p = [[0.0; 4]; 4];
        for (w, d) in parts {
            for z in 0..4 {
                for c in 0..4 {
                    p[z][c] += w * d.p[z][c];
                }
            }
        }
        Self::normalized(p)
    }

    pub fn get(&self, c: OutcomePair, z: SettingsPair) -> f64 {
        self.p[z.index()][c.index()]
    }

    pub fn rows(&self) -> &[[f64; 4]; 4] {
        &self.p
    }

    pub fn row(&self, z: usize) -> &[f64; 4] {
        &self.p[z]
    }

    /// Flat view in `4 * z + c` order.
    pub fn flat(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for z in 0..4 {
            out[4 * z..4 * z + 4].copy_from_slice(&self.p[z]);
        }
        out
    }

    pub(crate) fn from_flat_unchecked(v: &[f64; 16]) -> Self {
        let mut p = [[0.0; 4]; 4];
        for z in 0..4 {
            p[z].copy_from_slice(&v[4 * z..4 * z + 4]);
        }
        Self { p }
    }

    /// Correlator `E_z = P(a = b | z) - P(a != b | z)`.
    pub fn correlator(&self, z: usize) -> f64 {
        let r = &self.p[z];
        r[0] + r[3] - r[1] - r[2]
    }

    /// The eight signed CHSH expressions `sum_z s_z E_z` where the sign
    /// pattern has an odd number of minus signs.
    pub fn chsh_values(&self) -> [f64; 8] {
        let e: [f64; 4] = std::array::from_fn(|z| self.correlator(z));
        let mut out = [0.0; 8];
        for (i, signs) in chsh_sign_patterns().iter().enumerate() {
            out[i] = (0..4).map(|z| signs[z] * e[z]).sum();
        }
        out
    }

    pub fn max_chsh(&self) -> f64 {
        self.chsh_values()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest deviation from the non-signaling equalities.
    pub fn signaling_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        // Alice's marginal P(a=0|x) across y, Bob's P(b=0|y) across x.
        for x in 0..2 {
            let z0 = SettingsPair { x, y: 0 }.index();
            let z1 = SettingsPair { x, y: 1 }.index();
            let m0 = self.p[z0][0] + self.p[z0][2];
            let m1 = self.p[z1][0] + self.p[z1][2];
            worst = worst.max((m0 - m1).abs());
        }
        for y in 0..2 {
            let z0 = SettingsPair { x: 0, y }.index();
            let z1 = SettingsPair { x: 1, y }.index();
            let m0 = self.p[z0][0] + self.p[z0][1];
            let m1 = self.p[z1][0] + self.p[z1][1];
            worst = worst.max((m0 - m1).abs());
        }
        worst
    }

    /// Membership in the Tsirelson-bounded non-signaling polytope.
    pub fn is_member_t(&self, tol: f64) -> bool {
        self.p.iter().flatten().all(|v| *v >= -tol)
            && self.signaling_deviation() <= tol
            && self.max_chsh() <= TSIRELSON_BOUND + tol
    }

    /// Membership in the local-realistic polytope.
    pub fn is_local(&self, tol: f64) -> bool {
        self.p.iter().flatten().all(|v| *v >= -tol)
            && self.signaling_deviation() <= tol
            && self.max_chsh() <= LOCAL_BOUND + tol
    }

    pub fn max_abs_diff(&self, other: &ConditionalDistribution) -> f64 {
        self.flat()
            .iter()
            .zip(other.flat().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Free-function form of [`ConditionalDistribution::is_member_t`].
pub fn is_member_t(d: &ConditionalDistribution, tol: f64) -> bool {
    d.is_member_t(tol)
}

/// Sign patterns of the eight CHSH expressions, indexed by `z`.
pub fn chsh_sign_patterns() -> [[f64; 4]; 8] {
    let mut out = [[0.0; 4]; 8];
    let mut n = 0;
    for mask in 0u8..16 {
        if mask.count_ones() % 2 == 1 {
            for z in 0..4 {
                out[n][z] = if mask >> z & 1 == 1 { -1.0 } else { 1.0 };
            }
            n += 1;
        }
    }
    out
}

/// Counts `n(ab|xy)` of calibration trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "[[u64; 4]; 4]", into = "[[u64; 4]; 4]")]
pub struct CountsTable {
    n: [[u64; 4]; 4],
}

impl From<[[u64; 4]; 4]> for CountsTable {
    fn from(n: [[u64; 4]; 4]) -> Self {
        Self { n }
    }
}

impl From<CountsTable> for [[u64; 4]; 4] {
    fn from(t: CountsTable) -> Self {
        t.n
    }
}

impl CountsTable {
    pub fn new(n: [[u64; 4]; 4]) -> Self {
        Self { n }
    }

    pub fn get(&self, c: OutcomePair, z: SettingsPair) -> u64 {
        self.n[z.index()][c.index()]
    }

    pub fn add(&mut self, c: OutcomePair, z: SettingsPair, k: u64) {
        self.n[z.index()][c.index()] += k;
    }

    pub fn rows(&self) -> &[[u64; 4]; 4] {
        &self.n
    }

    pub fn total(&self) -> u64 {
        self.n.iter().flatten().sum()
    }

    pub fn setting_total(&self, z: usize) -> u64 {
        self.n[z].iter().sum()
    }

    pub fn merge(&mut self, other: &CountsTable) {
        for z in 0..4 {
            for c in 0..4 {
                self.n[z][c] += other.n[z][c];
            }
        }
    }

    /// Raw conditional frequencies `n(ab|xy) / n(xy)`.
    pub fn empirical(&self) -> Result<ConditionalDistribution> {
        let mut p = [[0.0; 4]; 4];
        for z in 0..4 {
            let tot = self.setting_total(z);
            if tot == 0 {
                return Err(Error::InvalidInput(format!(
                    "no counts for setting index {z}"
                )));
            }
            for c in 0..4 {
                p[z][c] = self.n[z][c] as f64 / tot as f64;
            }
        }
        ConditionalDistribution::normalized(p)
    }
}

/// Input distribution of trial position `j`: uniform settings with
/// probability `q`, otherwise the fixed settings `00`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    q: f64,
}

impl InputDistribution {
    pub fn from_q(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 4.0 / 3.0) {
            return Err(Error::InvalidInput(format!("q = {q} outside (0, 4/3)")));
        }
        Ok(Self { q })
    }

    /// Input distribution at position `j` of a block with maximum length `2^k`.
    pub fn at_position(j: u64, k: u32) -> Result<Self> {
        let max = block_capacity(k)?;
        if j < 1 || j > max {
            return Err(Error::PositionOutOfRange { position: j, max });
        }
        Ok(Self {
            q: position_q(j, k),
        })
    }

    pub fn uniform() -> Self {
        Self { q: 1.0 }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `nu_q(z)`.
    pub fn prob(&self, z: usize) -> f64 {
        if z == 0 {
            1.0 - 0.75 * self.q
        } else {
            0.25 * self.q
        }
    }

    pub fn table(&self) -> [f64; 4] {
        std::array::from_fn(|z| self.prob(z))
    }
}

/// Free-function form of [`InputDistribution::at_position`].
pub fn input_distribution(j: u64, k: u32) -> Result<InputDistribution> {
    InputDistribution::at_position(j, k)
}

/// `q_j = 1 / (2^k - j + 1)`.
pub fn position_q(j: u64, k: u32) -> f64 {
    1.0 / ((1u64 << k) - j + 1) as f64
}

/// `2^k`, rejecting block lengths that do not fit the wire format.
pub fn block_capacity(k: u32) -> Result<u64> {
    if k > 31 {
        return Err(Error::InvalidInput(format!("k = {k} too large")));
    }
    Ok(1u64 << k)
}
