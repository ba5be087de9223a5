//! File formats: JSON documents for models and observers, CSV for
//! trajectories and simulation traces.
//!
//! Numbers are written with the shortest representation that round-trips
//! exactly, so a file read back reproduces the matrices bit for bit.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::datalog::HistoricalData;
use crate::error::{Result, UioError};
use crate::numkit::RankTolerance;
use crate::plant::{StateSpaceModel, UioRealization};
use crate::simlab::RunTrace;
use crate::synth::AcceptorReport;

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &Rows, expect_rows: Option<usize>) -> Result<DMatrix<f64>> {
    if let Some(want) = expect_rows {
        if rows.len() != want {
            return Err(UioError::Parse(format!("{name} has {} rows, expected {want}", rows.len())));
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(UioError::Parse(format!("{name} has rows of unequal length")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D")]
    d: Rows,
    #[serde(rename = "E")]
    e: Rows,
    #[serde(rename = "F")]
    f: Rows,
}

pub fn model_to_json(model: &StateSpaceModel) -> String {
    let doc = ModelDoc {
        name: model.name.clone(),
        a: to_rows(&model.a),
        b: to_rows(&model.b),
        c: to_rows(&model.c),
        d: to_rows(&model.d),
        e: to_rows(&model.e),
        f: to_rows(&model.f),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

/// Parses and validates a model document.
pub fn model_from_json(text: &str) -> Result<StateSpaceModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| UioError::Parse(e.to_string()))?;
    let a = from_rows("A", &doc.a, None)?;
    let n = a.nrows();
    let c = from_rows("C", &doc.c, None)?;
    let p = c.nrows();
    let model = StateSpaceModel::new_unchecked(
        a,
        from_rows("B", &doc.b, Some(n))?,
        c,
        from_rows("D", &doc.d, Some(p))?,
        from_rows("E", &doc.e, Some(n))?,
        from_rows("F", &doc.f, Some(p))?,
    );
    let violations = model.validate(RankTolerance::default());
    if !violations.is_empty() {
        return Err(UioError::InvalidModel(violations.iter().map(ToString::to_string).collect()));
    }
    Ok(match doc.name {
        Some(name) => model.with_name(name),
        None => model,
    })
}

pub fn read_model(path: &std::path::Path) -> Result<StateSpaceModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

/// Diagnostics echoed next to an observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UioDiagnostics {
    /// `[re, im]` pairs
    pub eigenvalues: Vec<[f64; 2]>,
    pub spectral_radius: f64,
    pub is_schur: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc3: Option<f64>,
}

impl UioDiagnostics {
    pub fn new(eigenvalues: &[Complex64], spectral_radius: f64, is_schur: bool, acceptor: Option<&AcceptorReport>) -> Self {
        Self {
            eigenvalues: eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            spectral_radius,
            is_schur,
            acc1: acceptor.map(|a| a.acc1),
            acc2: acceptor.map(|a| a.acc2),
            acc3: acceptor.map(|a| a.acc3),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct UioDoc {
    #[serde(rename = "A_uio")]
    a_uio: Rows,
    #[serde(rename = "B_u")]
    b_u: Rows,
    #[serde(rename = "B_y")]
    b_y: Rows,
    #[serde(rename = "D_u")]
    d_u: Rows,
    #[serde(rename = "D_y")]
    d_y: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<UioDiagnostics>,
}

pub fn uio_to_json(uio: &UioRealization, diagnostics: Option<&UioDiagnostics>) -> String {
    let doc = UioDoc {
        a_uio: to_rows(&uio.a_uio),
        b_u: to_rows(&uio.b_u),
        b_y: to_rows(&uio.b_y),
        d_u: to_rows(&uio.d_u),
        d_y: to_rows(&uio.d_y),
        diagnostics: diagnostics.cloned(),
    };
    serde_json::to_string_pretty(&doc).expect("observer serializes")
}

pub fn uio_from_json(text: &str) -> Result<(UioRealization, Option<UioDiagnostics>)> {
    let doc: UioDoc = serde_json::from_str(text).map_err(|e| UioError::Parse(e.to_string()))?;
    let a_uio = from_rows("A_uio", &doc.a_uio, None)?;
    let n = a_uio.nrows();
    if a_uio.ncols() != n {
        return Err(UioError::Parse(format!("A_uio is {n}x{}, must be square", a_uio.ncols())));
    }
    let uio = UioRealization {
        a_uio,
        b_u: from_rows("B_u", &doc.b_u, Some(n))?,
        b_y: from_rows("B_y", &doc.b_y, Some(n))?,
        d_u: from_rows("D_u", &doc.d_u, Some(n))?,
        d_y: from_rows("D_y", &doc.d_y, Some(n))?,
    };
    if uio.b_u.ncols() != uio.d_u.ncols() || uio.b_y.ncols() != uio.d_y.ncols() {
        return Err(UioError::Parse("B_u/D_u or B_y/D_y column counts differ".into()));
    }
    Ok((uio, doc.diagnostics))
}

pub fn read_uio(path: &std::path::Path) -> Result<(UioRealization, Option<UioDiagnostics>)> {
    uio_from_json(&std::fs::read_to_string(path)?)
}

fn csv_err(e: csv::Error) -> UioError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => UioError::Io(io),
        other => UioError::Parse(format!("{other:?}")),
    }
}

fn header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

fn push_all(record: &mut Vec<String>, v: &DVector<f64>) {
    record.extend(v.iter().map(|x| x.to_string()));
}

/// Writes `t, x_*, u_*, y_*[, d_*]`, one row per sample.
pub fn write_trajectory<W: Write>(out: W, data: &HistoricalData) -> Result<()> {
    let dims = data.dims();
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["t".to_string()];
    head.extend(header("x", dims.n));
    head.extend(header("u", dims.m));
    head.extend(header("y", dims.p));
    if data.d.is_some() {
        head.extend(header("d", dims.r));
    }
    w.write_record(&head).map_err(csv_err)?;
    for t in 0..data.len() {
        let mut rec = vec![t.to_string()];
        push_all(&mut rec, &data.x[t]);
        push_all(&mut rec, &data.u[t]);
        push_all(&mut rec, &data.y[t]);
        if let Some(d) = &data.d {
            push_all(&mut rec, &d[t]);
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory file. Column groups are recognised by their header
/// prefixes and must appear in the order `t, x, u, y, d`.
pub fn read_trajectory<R: Read>(input: R) -> Result<HistoricalData> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let head: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if head.first().map(String::as_str) != Some("t") {
        return Err(UioError::Parse("first column must be `t`".into()));
    }
    let groups = ["x", "u", "y", "d"];
    let mut counts = [0usize; 4];
    let mut stage = 0;
    for name in &head[1..] {
        let (prefix, idx) = name
            .split_once('_')
            .ok_or_else(|| UioError::Parse(format!("unexpected column `{name}`")))?;
        let g = groups
            .iter()
            .position(|&g| g == prefix)
            .ok_or_else(|| UioError::Parse(format!("unexpected column `{name}`")))?;
        if g < stage {
            return Err(UioError::Parse(format!("column `{name}` out of order")));
        }
        stage = g;
        counts[g] += 1;
        if idx != counts[g].to_string() {
            return Err(UioError::Parse(format!("column `{name}` out of sequence")));
        }
    }
    let [n, m, p, r_dim] = counts;
    if n == 0 || p == 0 {
        return Err(UioError::Parse("trajectory needs x and y columns".into()));
    }
    let synthetic = head.iter().any(|h| h.starts_with("d_"));

    let (mut x, mut u, mut y, mut d) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| UioError::Parse(format!("row {row}: `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != head.len() {
            return Err(UioError::Parse(format!("row {row} has {} fields, header has {}", vals.len(), head.len())));
        }
        if vals[0] != row as f64 {
            return Err(UioError::Parse(format!("row {row} has t = {}, expected {row}", vals[0])));
        }
        let mut at = 1;
        let mut take = |k: usize| {
            let v = DVector::from_column_slice(&vals[at..at + k]);
            at += k;
            v
        };
        x.push(take(n));
        u.push(take(m));
        y.push(take(p));
        d.push(take(r_dim));
    }
    HistoricalData::new(x, u, y, synthetic.then_some(d))
}

pub fn read_trajectory_file(path: &std::path::Path) -> Result<HistoricalData> {
    read_trajectory(std::fs::File::open(path)?)
}

/// Writes a simulation trace: the trajectory columns followed by
/// `z_*`, `xhat_*`, `e_*`.
pub fn write_trace<W: Write>(out: W, trace: &RunTrace) -> Result<()> {
    let n = trace.x.first().map_or(0, DVector::len);
    let m = trace.u.first().map_or(0, DVector::len);
    let p = trace.y.first().map_or(0, DVector::len);
    let r = trace.d.first().map_or(0, DVector::len);
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["t".to_string()];
    for (prefix, k) in [("x", n), ("u", m), ("y", p), ("d", r), ("z", n), ("xhat", n), ("e", n)] {
        head.extend(header(prefix, k));
    }
    w.write_record(&head).map_err(csv_err)?;
    for t in 0..trace.len() {
        let mut rec = vec![t.to_string()];
        for v in [&trace.x[t], &trace.u[t], &trace.y[t], &trace.d[t], &trace.z[t], &trace.x_hat[t], &trace.e[t]] {
            push_all(&mut rec, v);
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
