//! Directory layout of a recorded or simulated experiment:
//!
//! ```text
//! cycle_00000/calibration.csv
//! cycle_00000/file_00000.blocks
//! cycle_00000/file_00000.calibration.csv
//! cycle_00000/file_00001.blocks
//! ...
//! cycle_00001/...
//! ```
//!
//! Cycles and files are processed in lexicographic order of their names. A
//! missing trailing calibration file is an empty table.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{read_blocks, write_blocks, CycleData, ExpansionFile, TracePoint};
use crate::error::{Error, Result};
use crate::model::{counts_from_csv, counts_to_csv, CountsTable};

pub fn write_dataset(dir: &Path, cycles: &[CycleData]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (c, cycle) in cycles.iter().enumerate() {
        let cdir = dir.join(format!("cycle_{c:05}"));
        fs::create_dir_all(&cdir)?;
        fs::write(
            cdir.join("calibration.csv"),
            counts_to_csv(&cycle.calibration),
        )?;
        for (f, file) in cycle.files.iter().enumerate() {
            let mut w = BufWriter::new(fs::File::create(cdir.join(format!("file_{f:05}.blocks")))?);
            write_blocks(&mut w, &file.blocks)?;
            w.flush()?;
            fs::write(
                cdir.join(format!("file_{f:05}.calibration.csv")),
                counts_to_csv(&file.trailing_calibration),
            )?;
        }
    }
    Ok(())
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if keep(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read_counts(path: &Path) -> Result<CountsTable> {
    let text = fs::read_to_string(path)?;
    counts_from_csv(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<CycleData>> {
    let cycle_dirs = sorted_entries(dir, |p| {
        p.is_dir()
            && p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("cycle_"))
    })?;
    if cycle_dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no cycle directories in {}",
            dir.display()
        )));
    }
    let mut cycles = Vec::with_capacity(cycle_dirs.len());
    for cdir in cycle_dirs {
        let calib = cdir.join("calibration.csv");
        let calibration = if calib.exists() {
            read_counts(&calib)?
        } else {
            CountsTable::default()
        };
        let block_files = sorted_entries(&cdir, |p| p.extension().is_some_and(|e| e == "blocks"))?;
        let mut files = Vec::with_capacity(block_files.len());
        for bf in block_files {
            let blocks = read_blocks(BufReader::new(fs::File::open(&bf)?))
                .map_err(|e| Error::Wire(format!("{}: {e}", bf.display())))?;
            let trailing = bf.with_extension("calibration.csv");
            let trailing_calibration = if trailing.exists() {
                read_counts(&trailing)?
            } else {
                CountsTable::default()
            };
            files.push(ExpansionFile {
                blocks,
                trailing_calibration,
            });
        }
        cycles.push(CycleData { calibration, files });
    }
    Ok(cycles)
}

/// `block_index,g_run,bits_consumed` rows with a header.
pub fn trace_to_csv(trace: &[TracePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in trace {
        w.serialize(t)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}
