//! The spot-checked block experiment: honest-device simulation, sparse block
//! records, running entropy witness and randomness accounting.
//!
//! A block of maximum length `2^k` has a uniformly random length `l`. Trials
//! `1..l` use settings `00`; trial `l` is the spot check with uniform
//! settings. Only detections (outcomes other than `00`) at non-spot trials
//! are recorded, together with the spot check.

mod accumulate;
mod dataset;
mod simulate;
mod wire;

pub use accumulate::{
    accumulate, Accumulation, Accumulator, AccumulatorState, CheckGranularity, ConstantOneBuilder,
    OptimizedPefBuilder, PefBuilder, PreparedTable, RunConfig, TracePoint, Witness,
};
pub use dataset::{read_dataset, trace_to_csv, write_dataset};
pub use simulate::{
    simulate_block, simulate_calibration, simulate_dataset, BlockSimulator, SimulationConfig,
};
pub use wire::{
    read_blocks, read_blocks_jsonl, write_block, write_blocks, write_blocks_jsonl, BlockReader,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::ExtractorParams;
use crate::model::{block_capacity, CountsTable, OutcomePair, SettingsPair};

/// A non-spot trial with a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// 1-based position within the block.
    pub position: u32,
    pub outcome: OutcomePair,
}

/// The spot-check trial, always at the last position of its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub settings: SettingsPair,
    pub outcome: OutcomePair,
}

/// One block in sparse form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub length: u32,
    /// Strictly increasing positions `< length`, outcomes other than `00`.
    pub events: Vec<Event>,
    pub spot: SpotCheck,
}

/// One trial of a block in dense form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub position: u32,
    pub settings: SettingsPair,
    pub outcome: OutcomePair,
}

impl BlockRecord {
    pub fn validate(&self, k: u32) -> Result<()> {
        let max = block_capacity(k)?;
        if self.length == 0 || self.length as u64 > max {
            return Err(Error::InvalidInput(format!(
                "block length {} outside 1..={max}",
                self.length
            )));
        }
        let mut last = 0u32;
        for e in &self.events {
            if e.position <= last || e.position >= self.length {
                return Err(Error::InvalidInput(format!(
                    "event position {} out of order or not before the spot check at {}",
                    e.position, self.length
                )));
            }
            if e.outcome.index() == 0 {
                return Err(Error::InvalidInput(format!(
                    "event at position {} records outcome 00",
                    e.position
                )));
            }
            last = e.position;
        }
        Ok(())
    }

    /// Every trial of the block in order, including the implicit `00` ones.
    pub fn dense(&self) -> Vec<Trial> {
        let fixed = SettingsPair::from_index(0);
        let mut out = Vec::with_capacity(self.length as usize);
        let mut events = self.events.iter().peekable();
        for position in 1..self.length {
            let outcome = match events.next_if(|e| e.position == position) {
                Some(e) => e.outcome,
                None => OutcomePair::from_index(0),
            };
            out.push(Trial {
                position,
                settings: fixed,
                outcome,
            });
        }
        out.push(Trial {
            position: self.length,
            settings: self.spot.settings,
            outcome: self.spot.outcome,
        });
        out
    }

    /// Inverse of [`BlockRecord::dense`].
    pub fn from_dense(trials: &[Trial]) -> Result<Self> {
        let (spot, rest) = trials
            .split_last()
            .ok_or_else(|| Error::InvalidInput("empty trial list".into()))?;
        let mut events = Vec::new();
        for (i, t) in rest.iter().enumerate() {
            if t.position as usize != i + 1 || t.settings.index() != 0 {
                return Err(Error::InvalidInput(format!(
                    "trial {} is not a non-spot trial at position {}",
                    t.position,
                    i + 1
                )));
            }
            if t.outcome.index() != 0 {
                events.push(Event {
                    position: t.position,
                    outcome: t.outcome,
                });
            }
        }
        Ok(Self {
            length: trials.len() as u32,
            events,
            spot: SpotCheck {
                settings: spot.settings,
                outcome: spot.outcome,
            },
        })
    }
}

/// A block's output zero-padded to the fixed length `2 * 2^k` bits.
#[derive(Debug, Clone, Copy)]
pub struct PaddedBlock<'a> {
    record: &'a BlockRecord,
    k: u32,
}

pub fn pad_block(record: &BlockRecord, k: u32) -> Result<PaddedBlock<'_>> {
    record.validate(k)?;
    Ok(PaddedBlock { record, k })
}

impl PaddedBlock<'_> {
    /// `2 * 2^k`.
    pub fn len(&self) -> u64 {
        2u64 << self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bits of observed output, `2 l`.
    pub fn observed_len(&self) -> u64 {
        2 * self.record.length as u64
    }

    /// `2 (2^k - l)`.
    pub fn zero_fill(&self) -> u64 {
        self.len() - self.observed_len()
    }

    /// Materializes the output as bits `a_1 b_1 a_2 b_2 ...`.
    pub fn to_bits(&self) -> Vec<u8> {
        let mut bits = vec![0u8; self.len() as usize];
        let mut put = |position: u32, c: OutcomePair| {
            let i = 2 * (position as usize - 1);
            bits[i] = c.a;
            bits[i + 1] = c.b;
        };
        for e in &self.record.events {
            put(e.position, e.outcome);
        }
        put(self.record.length, self.record.spot.outcome);
        bits
    }
}

/// Extractor input length `m_in = n_b * 2^k * 2`.
pub fn output_length(n_b: u64, k: u32) -> u128 {
    (n_b as u128) << (k + 1)
}

/// Random bits spent on block lengths and spot-check settings:
/// `n_run (k + 2)`.
pub fn consumed_bits(n_run: u64, k: u32) -> u64 {
    n_run * (k as u64 + 2)
}

/// A run's output and input randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub consumed_bits: u64,
    pub d_s: u64,
    /// `consumed_bits + d_s`.
    pub k_in: u64,
    pub k_out: u64,
    /// `k_out / k_in`.
    pub ratio: f64,
    /// `k_out - k_in`.
    pub net: i128,
}

pub fn expansion_ratio(n_run: u64, k: u32, k_out: u64, d_s: u64) -> ExpansionReport {
    let consumed = consumed_bits(n_run, k);
    let k_in = consumed + d_s;
    ExpansionReport {
        consumed_bits: consumed,
        d_s,
        k_in,
        k_out,
        ratio: k_out as f64 / k_in as f64,
        net: k_out as i128 - k_in as i128,
    }
}

/// Expansion accounting for a successful run.
pub fn expansion_summary(
    state: &AccumulatorState,
    extractor: &ExtractorParams,
    k: u32,
) -> Result<ExpansionReport> {
    if !state.succeeded {
        return Err(Error::NotSucceeded);
    }
    Ok(expansion_ratio(
        state.n_run,
        k,
        extractor.k_out,
        extractor.d_s,
    ))
}

/// An expansion file: consecutive blocks followed by calibration trials.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpansionFile {
    pub blocks: Vec<BlockRecord>,
    pub trailing_calibration: CountsTable,
}

/// A calibration file followed by expansion files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleData {
    pub calibration: CountsTable,
    pub files: Vec<ExpansionFile>,
}

impl CycleData {
    pub fn block_count(&self) -> usize {
        self.files.iter().map(|f| f.blocks.len()).sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockRecord> {
        self.files.iter().flat_map(|f| f.blocks.iter())
    }
}
