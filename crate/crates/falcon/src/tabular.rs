//! Tabular benchmark files: one CSV row per design with both budget
//! scores and optional per-instance correctness packed as hex.
//!
//! Header: `design_id,warmup_score,full_score,instance_bits`. The bits
//! column is a hex string read most-significant nibble first, so its
//! length times four is the instance count; an empty column means the
//! benchmark carries no instance data.

use std::fs;
use std::path::Path;

use csv::{ReaderBuilder, Trim, WriterBuilder};
use falcon_core::eval::{TabularBenchmark, TabularRow};
use falcon_core::SpaceIndex;

use crate::AppError;

const HEADER: [&str; 4] = ["design_id", "warmup_score", "full_score", "instance_bits"];

pub fn encode_bits(bits: &[bool]) -> String {
    assert!(bits.len() % 4 == 0, "instance counts are multiples of four");
    let mut out = String::with_capacity(bits.len() / 4);
    for nibble in bits.chunks(4) {
        let mut v = 0u8;
        for (i, &b) in nibble.iter().enumerate() {
            if b {
                v |= 8 >> i;
            }
        }
        out.push(char::from_digit(u32::from(v), 16).unwrap());
    }
    out
}

pub fn decode_bits(text: &str) -> Result<Vec<bool>, AppError> {
    let mut bits = Vec::with_capacity(text.len() * 4);
    for c in text.chars() {
        let v = c
            .to_digit(16)
            .ok_or_else(|| AppError::config(format!("bad hex digit {c:?} in instance_bits")))?;
        for i in 0..4 {
            bits.push(v & (8 >> i) != 0);
        }
    }
    Ok(bits)
}

pub fn load(path: &Path, index: &SpaceIndex) -> Result<TabularBenchmark, AppError> {
    let cite = |msg: String| AppError::config(format!("{}: {msg}", path.display()));
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
    let mut reader = ReaderBuilder::new().trim(Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| cite(e.to_string()))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(cite(format!(
            "expected header {}, found {}",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut rows: Vec<Option<TabularRow>> = vec![None; index.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| cite(e.to_string()))?;
        let row_cite =
            |msg: String| cite(format!("row {} ({msg})", line + 2));
        if record.len() != 4 {
            return Err(row_cite(format!("expected 4 fields, found {}", record.len())));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| row_cite(format!("bad design_id {:?}", &record[0])))?;
        if id >= index.len() {
            return Err(row_cite(format!("design_id {id} outside 0..{}", index.len())));
        }
        if rows[id].is_some() {
            return Err(row_cite(format!("duplicate design_id {id}")));
        }
        let warmup: f64 = record[1]
            .parse()
            .map_err(|_| row_cite(format!("bad warmup_score {:?}", &record[1])))?;
        let full: f64 = record[2]
            .parse()
            .map_err(|_| row_cite(format!("bad full_score {:?}", &record[2])))?;
        let instance_bits = if record[3].is_empty() {
            None
        } else {
            Some(decode_bits(&record[3]).map_err(|e| row_cite(e.to_string()))?)
        };
        rows[id] = Some(TabularRow { warmup, full, instance_bits });
    }

    let missing: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter_map(|(id, r)| r.is_none().then_some(id))
        .collect();
    if !missing.is_empty() {
        return Err(cite(format!(
            "{} designs missing, first ids {:?}",
            missing.len(),
            &missing[..missing.len().min(5)]
        )));
    }
    let rows: Vec<TabularRow> = rows.into_iter().map(Option::unwrap).collect();
    TabularBenchmark::new(index.len(), rows).map_err(|e| cite(e.to_string()))
}

pub fn save(path: &Path, bench: &TabularBenchmark) -> Result<(), AppError> {
    let mut writer = WriterBuilder::new().from_writer(Vec::new());
    writer.write_record(HEADER).map_err(|e| AppError::runtime(e.to_string()))?;
    for id in 0..bench.len() {
        let row = bench.row(id).expect("benchmark covers every design");
        let bits = row.instance_bits.as_deref().map(encode_bits).unwrap_or_default();
        writer
            .write_record([
                id.to_string(),
                format!("{}", row.warmup),
                format!("{}", row.full),
                bits,
            ])
            .map_err(|e| AppError::runtime(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| AppError::runtime(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}
