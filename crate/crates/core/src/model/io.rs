//! Text formats for counts tables and distributions.
//!
//! CSV rows are `x,y,a,b,count` with an optional header. JSON documents are
//! objects holding a 4x4 array in table layout (rows `xy`, columns `ab`).

use serde::{Deserialize, Serialize};

use super::{ConditionalDistribution, CountsTable, OutcomePair, SettingsPair};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CountsDocument {
    counts: CountsTable,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistributionDocument {
    distribution: ConditionalDistribution,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    x: u8,
    y: u8,
    a: u8,
    b: u8,
    count: u64,
}

/// Parses `x,y,a,b,count` rows. Repeated cells are summed.
pub fn counts_from_csv(text: &str) -> Result<CountsTable> {
    let has_header = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.chars().any(|c| c.is_ascii_alphabetic()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut table = CountsTable::default();
    for (i, rec) in reader.deserialize::<CsvRow>().enumerate() {
        let line = i + 1 + usize::from(has_header);
        let row = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(line, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let z = SettingsPair::new(row.x, row.y).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let c = OutcomePair::new(row.a, row.b).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        table.add(c, z, row.count);
    }
    Ok(table)
}

/// Writes all 16 cells in table order with a header row.
pub fn counts_to_csv(table: &CountsTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for z in SettingsPair::ALL {
        for c in OutcomePair::ALL {
            w.serialize(CsvRow {
                x: z.x,
                y: z.y,
                a: c.a,
                b: c.b,
                count: table.get(c, z),
            })
            .expect("writing to memory");
        }
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is utf-8")
}

pub fn counts_from_json(text: &str) -> Result<CountsTable> {
    Ok(serde_json::from_str::<CountsDocument>(text)?.counts)
}

pub fn counts_to_json(table: &CountsTable) -> String {
    serde_json::to_string_pretty(&CountsDocument { counts: *table }).expect("plain data")
}

pub fn distribution_from_json(text: &str) -> Result<ConditionalDistribution> {
    Ok(serde_json::from_str::<DistributionDocument>(text)?.distribution)
}

pub fn distribution_to_json(d: &ConditionalDistribution) -> String {
    serde_json::to_string_pretty(&DistributionDocument { distribution: *d }).expect("plain data")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CountsTable {
        let mut n = [[0u64; 4]; 4];
        for z in 0..4 {
            for c in 0..4 {
                n[z][c] = (10 * z + c) as u64 * 1_000_003;
            }
        }
        CountsTable::new(n)
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let text = counts_to_csv(&t);
        assert!(text.starts_with("x,y,a,b,count\n0,0,0,0,0\n0,0,1,0,1000003\n"));
        assert_eq!(counts_from_csv(&text).unwrap(), t);
    }

    #[test]
    fn csv_without_header_and_duplicates() {
        let t = counts_from_csv("1,1,0,1,5\n1,1,0,1,2\n").unwrap();
        assert_eq!(t.rows()[3][2], 7);
        assert_eq!(t.total(), 7);
    }

    #[test]
    fn csv_reports_line_of_bad_value() {
        let err = counts_from_csv("x,y,a,b,count\n0,0,0,0,1\n0,2,0,0,1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(counts_from_csv("0,0,0,0,-1\n").is_err());
    }

    #[test]
    fn json_round_trips() {
        let t = sample();
        assert_eq!(counts_from_json(&counts_to_json(&t)).unwrap(), t);
        let d = ConditionalDistribution::normalized([
            [0.1, 0.2, 0.3, 0.4],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [0.25; 4],
            [0.7, 0.1, 0.1, 0.1],
        ])
        .unwrap();
        let back = distribution_from_json(&distribution_to_json(&d)).unwrap();
        assert_eq!(back, d);
    }
}
