use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::engine::{MetricsSink, StepRecord};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,loss_real,loss_fake_d,loss_fake_g,k,m_global,lr,carry";

/// `%.9g`: nine significant digits, trailing zeros removed.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn format_metrics_row(r: &StepRecord) -> String {
    let vals = [r.loss_real, r.loss_fake_d, r.loss_fake_g, r.k, r.m_global, r.lr, r.carry];
    let mut row = r.step.to_string();
    for v in vals {
        row.push(',');
        row.push_str(&format_sig9(v));
    }
    row
}

/// CSV metrics file; the header is written on creation.
pub struct CsvMetrics<W: Write> {
    out: W,
    rows: u64,
}

impl<W: Write> CsvMetrics<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(CsvMetrics { out, rows: 0 })
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl CsvMetrics<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        Self::new(BufWriter::new(f))
    }
}

/// Append rows to an existing metrics file, keeping its header.
pub fn append_metrics(path: &Path) -> Result<CsvMetrics<BufWriter<File>>> {
    let f = File::options()
        .append(true)
        .open(path)
        .map_err(|e| Error::file(path, e))?;
    Ok(CsvMetrics {
        out: BufWriter::new(f),
        rows: 0,
    })
}

impl<W: Write> MetricsSink for CsvMetrics<W> {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        writeln!(self.out, "{}", format_metrics_row(record))?;
        self.rows += 1;
        Ok(())
    }
}

/// Parse a metrics CSV back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    parse_metrics(BufReader::new(f)).map_err(|e| match e {
        Error::Io(source) => Error::File {
            path: PathBuf::from(path),
            source,
        },
        other => other,
    })
}

pub fn parse_metrics(input: impl BufRead) -> Result<Vec<StepRecord>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected metrics header, got {other:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let bad = |msg: String| Error::Parse { line: i + 2, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(format!("{} fields, expected 8", fields.len())));
        }
        let step = fields[0].parse().map_err(|_| bad(format!("bad step {:?}", fields[0])))?;
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(format!("bad number {f:?}")))?;
        }
        out.push(StepRecord {
            step,
            loss_real: v[0],
            loss_fake_d: v[1],
            loss_fake_g: v[2],
            k: v[3],
            m_global: v[4],
            lr: v[5],
            carry: v[6],
        });
    }
    Ok(out)
}
