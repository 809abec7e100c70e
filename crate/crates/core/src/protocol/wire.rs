//! Block stream formats.
//!
//! Binary, little-endian, per block: `u32` length, `u16` event count, each
//! event as `u32` position and `u8` outcome index, then the spot check as
//! `u8` settings index and `u8` outcome index. Indices follow the table
//! order `c = a + 2b`, `z = x + 2y`. The debug format is one JSON object per
//! line.

use std::io::{BufRead, ErrorKind, Read, Write};

use super::{BlockRecord, Event, SpotCheck};
use crate::error::{Error, Result};
use crate::model::{OutcomePair, SettingsPair};

pub fn write_block<W: Write>(w: &mut W, block: &BlockRecord) -> Result<()> {
    let count = u16::try_from(block.events.len()).map_err(|_| {
        Error::Wire(format!(
            "{} events exceed the u16 event count",
            block.events.len()
        ))
    })?;
    let mut buf = Vec::with_capacity(8 + 5 * block.events.len());
    buf.extend_from_slice(&block.length.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for e in &block.events {
        buf.extend_from_slice(&e.position.to_le_bytes());
        buf.push(e.outcome.index() as u8);
    }
    buf.push(block.spot.settings.index() as u8);
    buf.push(block.spot.outcome.index() as u8);
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_blocks<W: Write>(w: &mut W, blocks: &[BlockRecord]) -> Result<()> {
    for b in blocks {
        write_block(w, b)?;
    }
    Ok(())
}

/// Iterator over a binary block stream.
pub struct BlockReader<R> {
    inner: R,
    index: u64,
}

impl<R: Read> BlockReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, index: 0 }
    }

    fn next_block(&mut self) -> Result<Option<BlockRecord>> {
        let mut head = [0u8; 6];
        // A clean end of stream is only allowed between blocks.
        match self.inner.read(&mut head[..1]) {
            Ok(0) => return Ok(None),
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => return self.next_block(),
            Err(e) => return Err(e.into()),
        }
        self.read_exact(&mut head[1..])?;
        let length = u32::from_le_bytes(head[..4].try_into().expect("4 bytes"));
        let count = u16::from_le_bytes(head[4..].try_into().expect("2 bytes")) as usize;
        let mut body = vec![0u8; 5 * count + 2];
        self.read_exact(&mut body)?;
        let events = body[..5 * count]
            .chunks_exact(5)
            .map(|c| {
                Ok(Event {
                    position: u32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                    outcome: outcome(c[4], self.index)?,
                })
            })
            .collect::<Result<_>>()?;
        let (z, c) = (body[5 * count], body[5 * count + 1]);
        if z > 3 {
            return Err(Error::Wire(format!(
                "block {}: settings index {z}",
                self.index
            )));
        }
        let block = BlockRecord {
            length,
            events,
            spot: SpotCheck {
                settings: SettingsPair::from_index(z as usize),
                outcome: outcome(c, self.index)?,
            },
        };
        self.index += 1;
        Ok(Some(block))
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == ErrorKind::UnexpectedEof {
                Error::Wire(format!("block {} truncated", self.index))
            } else {
                e.into()
            }
        })
    }
}

fn outcome(c: u8, block: u64) -> Result<OutcomePair> {
    if c > 3 {
        return Err(Error::Wire(format!("block {block}: outcome index {c}")));
    }
    Ok(OutcomePair::from_index(c as usize))
}

impl<R: Read> Iterator for BlockReader<R> {
    type Item = Result<BlockRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_block().transpose()
    }
}

pub fn read_blocks<R: Read>(r: R) -> Result<Vec<BlockRecord>> {
    BlockReader::new(r).collect()
}

pub fn write_blocks_jsonl<W: Write>(w: &mut W, blocks: &[BlockRecord]) -> Result<()> {
    for b in blocks {
        serde_json::to_writer(&mut *w, b)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_blocks_jsonl<R: BufRead>(r: R) -> Result<Vec<BlockRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<BlockRecord> {
        vec![
            BlockRecord {
                length: 70_000,
                events: vec![Event {
                    position: 65_537,
                    outcome: OutcomePair::from_index(2),
                }],
                spot: SpotCheck {
                    settings: SettingsPair::from_index(3),
                    outcome: OutcomePair::from_index(1),
                },
            },
            BlockRecord {
                length: 1,
                events: vec![],
                spot: SpotCheck {
                    settings: SettingsPair::from_index(0),
                    outcome: OutcomePair::from_index(0),
                },
            },
        ]
    }

    #[test]
    fn binary_layout() {
        let mut buf = Vec::new();
        write_blocks(&mut buf, &sample()).unwrap();
        assert_eq!(buf.len(), (6 + 5 + 2) + (6 + 2));
        assert_eq!(&buf[..6], &[0x70, 0x11, 0x01, 0x00, 0x01, 0x00]);
        assert_eq!(read_blocks(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let mut buf = Vec::new();
        write_blocks(&mut buf, &sample()).unwrap();
        buf.pop();
        assert!(matches!(read_blocks(buf.as_slice()), Err(Error::Wire(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut buf = Vec::new();
        write_blocks_jsonl(&mut buf, &sample()).unwrap();
        assert_eq!(read_blocks_jsonl(buf.as_slice()).unwrap(), sample());
    }
}
