//! CSV schema.
//!
//! Flat data: header `x0,...,x{D-1}[,y]`. Sequence data: header
//! `seq_id,t,x0,...,x{D-1}[,y]`, rows of one sequence contiguous with `t`
//! counting from 0. Labels are 0-based integers. Floats are written in
//! shortest round-trip form.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use pfmix::eval::EvalData;
use pfmix::{Dataset, Sequence, SequenceDataset};

use crate::error::{data, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Flat(Dataset),
    Sequences(SequenceDataset),
}

impl Table {
    pub fn as_eval(&self) -> EvalData<'_> {
        match self {
            Table::Flat(d) => EvalData::Flat(d),
            Table::Sequences(s) => EvalData::Sequences(s),
        }
    }

    /// Row view; sequences are concatenated.
    pub fn flat(&self) -> Dataset {
        match self {
            Table::Flat(d) => d.clone(),
            Table::Sequences(s) => s.flatten(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Table::Flat(d) => d.dim(),
            Table::Sequences(s) => s.dim(),
        }
    }
}

struct Layout {
    sequential: bool,
    dim: usize,
    labeled: bool,
}

fn parse_header(header: &csv::StringRecord) -> CliResult<Layout> {
    let cols: Vec<&str> = header.iter().collect();
    let sequential = cols.first() == Some(&"seq_id");
    let mut rest = &cols[..];
    if sequential {
        if cols.get(1) != Some(&"t") {
            return Err(data("sequence header must start with seq_id,t"));
        }
        rest = &cols[2..];
    }
    let labeled = rest.last() == Some(&"y");
    let features = if labeled { &rest[..rest.len() - 1] } else { rest };
    if features.is_empty() {
        return Err(data("header has no feature columns"));
    }
    for (d, name) in features.iter().enumerate() {
        if *name != format!("x{d}") {
            return Err(data(format!("header column {} is '{name}', expected 'x{d}'", d + 1)));
        }
    }
    Ok(Layout {
        sequential,
        dim: features.len(),
        labeled,
    })
}

fn cell<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> CliResult<T> {
    let raw = record.get(idx).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|_| data(format!("row {row}, column '{name}': cannot parse '{raw}'")))
}

/// Parse a table from any reader. `source` names the input in diagnostics.
pub fn read_table_from<R: Read>(reader: R, source: &str) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| data(format!("{source}: {e}")))?
        .clone();
    let layout = parse_header(&header).map_err(|e| data(format!("{source}: {e}")))?;
    let offset = if layout.sequential { 2 } else { 0 };
    let width = offset + layout.dim + layout.labeled as usize;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut seq_keys: Vec<(String, usize)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| data(format!("{source}: row {row}: {e}")))?;
        if rec.len() != width {
            return Err(data(format!("{source}: row {row} has {} fields, expected {width}", rec.len())));
        }
        if layout.sequential {
            let id = rec.get(0).unwrap_or("").to_string();
            let t: usize = cell(&rec, 1, "t", row)?;
            seq_keys.push((id, t));
        }
        for d in 0..layout.dim {
            let v: f64 = cell(&rec, offset + d, &format!("x{d}"), row)?;
            if !v.is_finite() {
                return Err(data(format!("{source}: row {row}, column 'x{d}': non-finite value")));
            }
            values.push(v);
        }
        if layout.labeled {
            labels.push(cell::<usize>(&rec, width - 1, "y", row)?);
        }
    }
    let n = values.len() / layout.dim;
    if n == 0 {
        return Err(data(format!("{source}: no data rows")));
    }
    let x = Array2::from_shape_vec((n, layout.dim), values).expect("row widths checked");
    let y = layout.labeled.then_some(labels);
    if !layout.sequential {
        return Ok(Table::Flat(Dataset::new(x, y, None)?));
    }

    let mut seqs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut start = 0;
    while start < n {
        let id = &seq_keys[start].0;
        if !seen.insert(id.clone()) {
            return Err(data(format!("{source}: rows of sequence '{id}' are not contiguous")));
        }
        let mut end = start;
        while end < n && &seq_keys[end].0 == id {
            if seq_keys[end].1 != end - start {
                return Err(data(format!(
                    "{source}: row {}: sequence '{id}' expected t = {}, found {}",
                    end + 1,
                    end - start,
                    seq_keys[end].1
                )));
            }
            end += 1;
        }
        seqs.push(Sequence {
            x: x.slice(ndarray::s![start..end, ..]).to_owned(),
            y: y.as_ref().map(|y| y[start..end].to_vec()),
        });
        start = end;
    }
    Ok(Table::Sequences(SequenceDataset::new(seqs, None)?))
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    read_table_from(file, &path.display().to_string())
}

fn header(dim: usize, sequential: bool, labeled: bool) -> Vec<String> {
    let mut h = Vec::new();
    if sequential {
        h.push("seq_id".to_string());
        h.push("t".to_string());
    }
    h.extend((0..dim).map(|d| format!("x{d}")));
    if labeled {
        h.push("y".to_string());
    }
    h
}

fn push_row(out: &mut Vec<String>, x: ndarray::ArrayView1<f64>, y: Option<usize>) {
    out.extend(x.iter().map(|v| v.to_string()));
    if let Some(y) = y {
        out.push(y.to_string());
    }
}

pub fn write_table_to<W: Write>(writer: W, table: &Table) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let wrap = |e: csv::Error| data(format!("writing CSV: {e}"));
    match table {
        Table::Flat(d) => {
            w.write_record(header(d.dim(), false, d.y().is_some())).map_err(wrap)?;
            for (i, row) in d.x().rows().into_iter().enumerate() {
                let mut rec = Vec::with_capacity(d.dim() + 1);
                push_row(&mut rec, row, d.y().map(|y| y[i]));
                w.write_record(&rec).map_err(wrap)?;
            }
        }
        Table::Sequences(s) => {
            w.write_record(header(s.dim(), true, s.is_labeled())).map_err(wrap)?;
            for (id, seq) in s.sequences().iter().enumerate() {
                for (t, row) in seq.x.rows().into_iter().enumerate() {
                    let mut rec = vec![id.to_string(), t.to_string()];
                    push_row(&mut rec, row, seq.y.as_ref().map(|y| y[t]));
                    w.write_record(&rec).map_err(wrap)?;
                }
            }
        }
    }
    w.flush().map_err(|e| data(format!("writing CSV: {e}")))
}

pub fn write_table(path: &Path, table: &Table) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(CliError::io(path))?;
    write_table_to(std::io::BufWriter::new(file), table)
}
