//! Honest-device simulation. Every block and calibration file draws from its
//! own ChaCha stream of one 64-bit seed, so any shard of the experiment can
//! be regenerated independently.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BlockRecord, CycleData, Event, ExpansionFile, SpotCheck};
use crate::error::{Error, Result};
use crate::model::{
    block_capacity, ConditionalDistribution, CountsTable, OutcomePair, SettingsPair,
};

/// Calibration streams live in the upper half of the stream space.
const CALIBRATION_STREAM: u64 = 1 << 63;

/// Samplers for one distribution and block length.
#[derive(Debug, Clone)]
pub struct BlockSimulator {
    k: u32,
    seed: u64,
    max: u64,
    /// Gaps between detections at settings `00`; `None` when there are none.
    gap: Option<Geometric>,
    detection: Option<WeightedIndex<f64>>,
    rows: Vec<WeightedIndex<f64>>,
}

impl BlockSimulator {
    pub fn new(nu_h: &ConditionalDistribution, k: u32, seed: u64) -> Result<Self> {
        let max = block_capacity(k)?;
        let row0 = nu_h.row(0);
        let p_det = row0[1] + row0[2] + row0[3];
        let (gap, detection) = if p_det > 0.0 {
            let g = Geometric::new(p_det.min(1.0))
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            let w = WeightedIndex::new(&row0[1..])
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            (Some(g), Some(w))
        } else {
            (None, None)
        };
        let rows = (0..4)
            .map(|z| {
                WeightedIndex::new(nu_h.row(z))
                    .map_err(|e| Error::InvalidDistribution(e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            k,
            seed,
            max,
            gap,
            detection,
            rows,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Block number `index` of the experiment.
    pub fn block(&self, index: u64) -> BlockRecord {
        let mut rng = stream(self.seed, index & !CALIBRATION_STREAM);
        self.sample(&mut rng)
    }

    /// Blocks `start..start + count`, generated in parallel.
    pub fn blocks(&self, start: u64, count: u64) -> Vec<BlockRecord> {
        (start..start + count)
            .into_par_iter()
            .map(|i| self.block(i))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BlockRecord {
        let length = rng.random_range(1..=self.max) as u32;
        let mut events = Vec::new();
        if let (Some(gap), Some(det)) = (&self.gap, &self.detection) {
            // Geometric skips over the no-detection trials 1..length.
            let mut pos = 0u64;
            loop {
                pos = pos.saturating_add(gap.sample(rng)).saturating_add(1);
                if pos >= length as u64 {
                    break;
                }
                events.push(Event {
                    position: pos as u32,
                    outcome: OutcomePair::from_index(det.sample(rng) + 1),
                });
            }
        }
        let z = rng.random_range(0..4usize);
        let c = self.rows[z].sample(rng);
        BlockRecord {
            length,
            events,
            spot: SpotCheck {
                settings: SettingsPair::from_index(z),
                outcome: OutcomePair::from_index(c),
            },
        }
    }

    /// `n` calibration trials with uniform settings from calibration stream
    /// `index`.
    pub fn calibration(&self, index: u64, n: u64) -> CountsTable {
        let mut rng = stream(self.seed, CALIBRATION_STREAM | index);
        let mut t = CountsTable::default();
        for _ in 0..n {
            let z = rng.random_range(0..4usize);
            let c = self.rows[z].sample(&mut rng);
            t.add(OutcomePair::from_index(c), SettingsPair::from_index(z), 1);
        }
        t
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One block from an arbitrary generator.
pub fn simulate_block<R: Rng + ?Sized>(
    nu_h: &ConditionalDistribution,
    k: u32,
    rng: &mut R,
) -> Result<BlockRecord> {
    Ok(BlockSimulator::new(nu_h, k, 0)?.sample(rng))
}

/// `n` calibration trials with uniform settings.
pub fn simulate_calibration<R: Rng + ?Sized>(
    nu_h: &ConditionalDistribution,
    n: u64,
    rng: &mut R,
) -> Result<CountsTable> {
    let sim = BlockSimulator::new(nu_h, 0, 0)?;
    let mut t = CountsTable::default();
    for _ in 0..n {
        let z = rng.random_range(0..4usize);
        let c = sim.rows[z].sample(rng);
        t.add(OutcomePair::from_index(c), SettingsPair::from_index(z), 1);
    }
    Ok(t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub k: u32,
    pub n_blocks: u64,
    pub seed: u64,
    pub blocks_per_file: u64,
    pub files_per_cycle: u64,
    /// Trials in the calibration file opening each cycle.
    pub calibration_trials: u64,
    /// Calibration trials appended to each expansion file.
    pub trailing_calibration_trials: u64,
}

impl SimulationConfig {
    pub fn new(k: u32, n_blocks: u64, seed: u64) -> Self {
        Self {
            k,
            n_blocks,
            seed,
            blocks_per_file: n_blocks.max(1),
            files_per_cycle: 1,
            calibration_trials: 0,
            trailing_calibration_trials: 0,
        }
    }
}

/// Simulates a full dataset of `n_blocks` blocks split into files and
/// cycles. The last file may be short.
pub fn simulate_dataset(
    nu_h: &ConditionalDistribution,
    cfg: &SimulationConfig,
) -> Result<Vec<CycleData>> {
    if cfg.blocks_per_file == 0 || cfg.files_per_cycle == 0 {
        return Err(Error::InvalidInput(
            "files and cycles must hold at least one block".into(),
        ));
    }
    let sim = BlockSimulator::new(nu_h, cfg.k, cfg.seed)?;
    let per_cycle = cfg.blocks_per_file * cfg.files_per_cycle;
    let n_cycles = cfg.n_blocks.div_ceil(per_cycle).max(1);
    // Calibration stream ids: one per cycle opening plus one per file.
    let slots = cfg.files_per_cycle + 1;
    let mut cycles = Vec::with_capacity(n_cycles as usize);
    let mut next = 0u64;
    for c in 0..n_cycles {
        let calibration = sim.calibration(c * slots, cfg.calibration_trials);
        let mut files = Vec::new();
        for f in 0..cfg.files_per_cycle {
            if f > 0 && next >= cfg.n_blocks {
                break;
            }
            let count = cfg.blocks_per_file.min(cfg.n_blocks - next);
            files.push(ExpansionFile {
                blocks: sim.blocks(next, count),
                trailing_calibration: sim
                    .calibration(c * slots + 1 + f, cfg.trailing_calibration_trials),
            });
            next += count;
        }
        cycles.push(CycleData { calibration, files });
    }
    Ok(cycles)
}
