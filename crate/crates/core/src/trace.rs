//! Recorded gradient traces: CSV with header
//! `step,sample,h_0..h_{d_h-1},v_0..v_{d-1}`, rows grouped by step.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::ridge::EditBatch;

/// Replays recorded batches in file order.
#[derive(Debug, Clone)]
pub struct TraceSource {
    batches: Arc<Vec<EditBatch>>,
    cursor: usize,
    pub d: usize,
    pub d_h: usize,
}

impl TraceSource {
    pub fn from_batches(batches: Vec<EditBatch>) -> Result<Self> {
        let first = batches.first().ok_or(Error::Empty("trace batches"))?;
        let d = first.v_raw.nrows();
        let d_h = first.h.nrows();
        for b in &batches {
            b.validate()?;
            if b.v_raw.nrows() != d || b.h.nrows() != d_h {
                return Err(Error::dim("trace batch", d, b.v_raw.nrows()));
            }
        }
        Ok(Self {
            batches: Arc::new(batches),
            cursor: 0,
            d,
            d_h,
        })
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.batches.len() - self.cursor
    }

    pub fn batches(&self) -> &[EditBatch] {
        &self.batches
    }

    pub fn next_batch(&mut self) -> Option<EditBatch> {
        let b = self.batches.get(self.cursor)?.clone();
        self.cursor += 1;
        Some(b)
    }
}

fn header_dims(header: &csv::StringRecord) -> std::result::Result<(usize, usize), String> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[0] != "step" || cols[1] != "sample" {
        return Err("header must start with step,sample".into());
    }
    let d_h = cols[2..].iter().take_while(|c| c.starts_with("h_")).count();
    let d = cols.len() - 2 - d_h;
    if d_h == 0 || d == 0 {
        return Err("header needs at least one h_ and one v_ column".into());
    }
    for (i, c) in cols[2..2 + d_h].iter().enumerate() {
        if *c != format!("h_{i}") {
            return Err(format!("expected column h_{i}, found `{c}`"));
        }
    }
    for (i, c) in cols[2 + d_h..].iter().enumerate() {
        if *c != format!("v_{i}") {
            return Err(format!("expected column v_{i}, found `{c}`"));
        }
    }
    Ok((d, d_h))
}

/// Parse a trace from any reader. Row numbers in errors count the header
/// as row 1.
pub fn parse_trace(reader: impl Read) -> Result<TraceSource> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Trace {
            row: 1,
            reason: e.to_string(),
        })?
        .clone();
    let (d, d_h) = header_dims(&header).map_err(|reason| Error::Trace { row: 1, reason })?;
    let width = 2 + d_h + d;

    let mut batches = Vec::new();
    let mut current: Option<u64> = None;
    let mut h_cols: Vec<f64> = Vec::new();
    let mut v_cols: Vec<f64> = Vec::new();
    let flush = |h_cols: &mut Vec<f64>,
                 v_cols: &mut Vec<f64>,
                 batches: &mut Vec<EditBatch>|
     -> Result<()> {
        let n = h_cols.len() / d_h;
        let h = DMatrix::from_column_slice(d_h, n, h_cols);
        let v = DMatrix::from_column_slice(d, n, v_cols);
        batches.push(EditBatch::new(h, v)?);
        h_cols.clear();
        v_cols.clear();
        Ok(())
    };

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Trace {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::Trace {
                row,
                reason: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let step: u64 = rec[0].trim().parse().map_err(|_| Error::Trace {
            row,
            reason: format!("bad step id `{}`", &rec[0]),
        })?;
        rec[1].trim().parse::<u64>().map_err(|_| Error::Trace {
            row,
            reason: format!("bad sample index `{}`", &rec[1]),
        })?;
        match current {
            Some(prev) if step < prev => {
                return Err(Error::Trace {
                    row,
                    reason: format!("step id {step} after {prev} (steps must be non-decreasing)"),
                })
            }
            Some(prev) if step > prev => flush(&mut h_cols, &mut v_cols, &mut batches)?,
            _ => {}
        }
        current = Some(step);
        for (j, field) in rec.iter().enumerate().skip(2) {
            let x: f64 = field.trim().parse().map_err(|_| Error::Trace {
                row,
                reason: format!("bad number `{field}` in column {}", &header[j]),
            })?;
            if !x.is_finite() {
                return Err(Error::Trace {
                    row,
                    reason: format!("non-finite value in column {}", &header[j]),
                });
            }
            if j < 2 + d_h {
                h_cols.push(x);
            } else {
                v_cols.push(x);
            }
        }
    }
    if current.is_none() {
        return Err(Error::Trace {
            row: 2,
            reason: "trace has no data rows".into(),
        });
    }
    flush(&mut h_cols, &mut v_cols, &mut batches)?;
    TraceSource::from_batches(batches)
}

pub fn ingest_trace(path: &Path) -> Result<TraceSource> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(std::io::BufReader::new(file))
}

/// Write batches in trace format; steps are numbered from 1.
pub fn write_trace<'a>(
    out: impl Write,
    batches: impl IntoIterator<Item = &'a EditBatch>,
) -> Result<()> {
    let mut batches = batches.into_iter().peekable();
    let first = batches.peek().ok_or(Error::Empty("trace batches"))?;
    let d = first.v_raw.nrows();
    let d_h = first.h.nrows();
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "sample".to_string()];
    header.extend((0..d_h).map(|i| format!("h_{i}")));
    header.extend((0..d).map(|i| format!("v_{i}")));
    let csv_err = |e: csv::Error| Error::Numerical {
        context: "write_trace",
        detail: e.to_string(),
    };
    wtr.write_record(&header).map_err(csv_err)?;
    for (s, b) in batches.enumerate() {
        if b.v_raw.nrows() != d || b.h.nrows() != d_h {
            return Err(Error::dim("write_trace", d, b.v_raw.nrows()));
        }
        for i in 0..b.len() {
            let mut row = vec![(s + 1).to_string(), i.to_string()];
            row.extend(b.h.column(i).iter().map(|&x| fmt_f64(x)));
            row.extend(b.v_raw.column(i).iter().map(|&x| fmt_f64(x)));
            wtr.write_record(&row).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("trace output", e))?;
    Ok(())
}
