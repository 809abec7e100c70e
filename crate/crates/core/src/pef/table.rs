//! Per-block PEF families built from three interpolation anchors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::optimize_with_powers;
use super::{interpolate, is_valid_pef, lift_to_uniform, LiftedPef, TrialPef, VertexPowers};
use crate::error::{Error, Result};
use crate::model::{
    block_capacity, tsirelson_vertices, ConditionalDistribution, InputDistribution,
    PolytopeVertexSet,
};

/// PEFs for every position `j = 1..=2^k` of a block, interpolated from
/// anchors at `j = 1`, `j_mid` and `2^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PefTableFile", into = "PefTableFile")]
pub struct PefTable {
    k: u32,
    beta: f64,
    j_mid: u64,
    anchors: [TrialPef; 3],
    lifted: [LiftedPef; 3],
}

/// On-disk form. `anchors` holds excesses `e` with `F = 1 + beta e`.
#[derive(Debug, Serialize, Deserialize)]
struct PefTableFile {
    k: u32,
    beta: f64,
    j_mid: u64,
    encoding: String,
    anchors: [[f64; 16]; 3],
}

const ENCODING: &str = "excess";

impl TryFrom<PefTableFile> for PefTable {
    type Error = Error;

    fn try_from(f: PefTableFile) -> Result<Self> {
        if f.encoding != ENCODING {
            return Err(Error::InvalidPefTable(format!(
                "unknown encoding {:?}",
                f.encoding
            )));
        }
        let positions = anchor_positions(f.k, f.j_mid)?;
        let mut anchors = [TrialPef::one(f.beta, 1.0)?; 3];
        for (a, (e, j)) in anchors.iter_mut().zip(f.anchors.iter().zip(positions)) {
            let q = InputDistribution::at_position(j, f.k)?.q();
            *a = TrialPef::from_excess(*e, f.beta, q)?;
        }
        PefTable::from_anchors(f.k, f.beta, f.j_mid, anchors)
    }
}

impl From<PefTable> for PefTableFile {
    fn from(t: PefTable) -> Self {
        PefTableFile {
            k: t.k,
            beta: t.beta,
            j_mid: t.j_mid,
            encoding: ENCODING.into(),
            anchors: t.anchors.map(|a| *a.excess()),
        }
    }
}

fn anchor_positions(k: u32, j_mid: u64) -> Result<[u64; 3]> {
    let max = block_capacity(k)?;
    if j_mid < 1 || j_mid > max {
        return Err(Error::PositionOutOfRange {
            position: j_mid,
            max,
        });
    }
    Ok([1, j_mid, max])
}

impl PefTable {
    /// Anchors are the PEFs at positions `1`, `j_mid` and `2^k`.
    pub fn from_anchors(k: u32, beta: f64, j_mid: u64, anchors: [TrialPef; 3]) -> Result<Self> {
        let positions = anchor_positions(k, j_mid)?;
        let mut lifted = Vec::with_capacity(3);
        for (a, j) in anchors.iter().zip(positions) {
            let q = InputDistribution::at_position(j, k)?;
            if a.q() != q.q() {
                return Err(Error::InvalidPefTable(format!(
                    "anchor at position {j} built for q = {}, expected {}",
                    a.q(),
                    q.q()
                )));
            }
            if a.beta() != beta {
                return Err(Error::InvalidPefTable(
                    "anchor power differs from table power".into(),
                ));
            }
            lifted.push(lift_to_uniform(a, q));
        }
        Ok(Self {
            k,
            beta,
            j_mid,
            anchors,
            lifted: [lifted[0], lifted[1], lifted[2]],
        })
    }

    /// Every position uses `F = 1`.
    pub fn constant_one(k: u32, beta: f64, j_mid: u64) -> Result<Self> {
        let positions = anchor_positions(k, j_mid)?;
        let mut anchors = [TrialPef::one(beta, 1.0)?; 3];
        for (a, j) in anchors.iter_mut().zip(positions) {
            *a = TrialPef::one(beta, InputDistribution::at_position(j, k)?.q())?;
        }
        Self::from_anchors(k, beta, j_mid, anchors)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn j_mid(&self) -> u64 {
        self.j_mid
    }

    pub fn anchors(&self) -> &[TrialPef; 3] {
        &self.anchors
    }

    pub fn capacity(&self) -> u64 {
        1u64 << self.k
    }

    /// PEF at position `j`.
    pub fn f_at(&self, j: u64) -> Result<TrialPef> {
        let max = self.capacity();
        if j < 1 || j > max {
            return Err(Error::PositionOutOfRange { position: j, max });
        }
        if j == 1 {
            return Ok(self.anchors[0]);
        }
        if j == self.j_mid {
            return Ok(self.anchors[1]);
        }
        if j == max {
            return Ok(self.anchors[2]);
        }
        interpolate(&self.lifted, j, self.k)
    }

    /// `log2(F_j(cz)) / beta` for all 16 cells at every position, indexed
    /// `[j - 1][4 z + c]`.
    pub fn log2_table(&self) -> Result<Vec<[f64; 16]>> {
        (1..=self.capacity())
            .map(|j| {
                let f = self.f_at(j)?;
                Ok(std::array::from_fn(|i| f.log2_over_beta(i)))
            })
            .collect()
    }

    /// Checks that each anchor is a PEF for its input distribution, which
    /// makes every interpolated position one too.
    pub fn validate(&self, model: &PolytopeVertexSet) -> Result<()> {
        let positions = anchor_positions(self.k, self.j_mid)?;
        for (a, j) in self.anchors.iter().zip(positions) {
            let q = InputDistribution::at_position(j, self.k)?;
            if !is_valid_pef(a, q, model) {
                return Err(Error::InvalidPefTable(format!(
                    "anchor at position {j} violates the PEF inequality"
                )));
            }
        }
        Ok(())
    }
}

/// Optimizes the three anchors for `nu_h` in parallel and assembles the
/// table.
pub fn build_pef_table(
    nu_h: &ConditionalDistribution,
    beta: f64,
    k: u32,
    j_mid: u64,
) -> Result<PefTable> {
    let positions = anchor_positions(k, j_mid)?;
    let powers = VertexPowers::new(tsirelson_vertices()?, beta)?;
    let anchors: Vec<TrialPef> = positions
        .par_iter()
        .map(|&j| {
            let q = InputDistribution::at_position(j, k)?;
            optimize_with_powers(&powers, nu_h, q).map(|(f, _)| f)
        })
        .collect::<Result<_>>()?;
    PefTable::from_anchors(k, beta, j_mid, [anchors[0], anchors[1], anchors[2]])
}

pub(crate) fn build_with_powers(
    powers: &VertexPowers,
    nu_h: &ConditionalDistribution,
    k: u32,
    ends: &[TrialPef; 2],
    j_mid: u64,
) -> Result<PefTable> {
    let q = InputDistribution::at_position(j_mid, k)?;
    let mid = if j_mid == 1 {
        ends[0]
    } else if j_mid == 1u64 << k {
        ends[1]
    } else {
        optimize_with_powers(powers, nu_h, q)?.0
    };
    PefTable::from_anchors(k, powers.beta, j_mid, [ends[0], mid, ends[1]])
}
