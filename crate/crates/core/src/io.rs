//! File formats.
//!
//! * Graph CSV: first line `nodes=N`, an optional `i,j,weight` header, then
//!   one edge per line with 0-based node indices. Edges listed in one
//!   direction are mirrored; edges listed in both must agree and the larger
//!   weight is kept.
//! * Signal CSV: one row per node, one column per signal, no header. An empty
//!   cell or `NaN` marks a missing entry; blank lines are skipped, so a
//!   single-column file must use `NaN`.
//! * Kernel parameters: JSON `{"mu": [...], "s": [...]}`.
//! * Checkpoint: a JSON file plus `<stem>_coefficients_<m>.csv` per graph
//!   next to it.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::dictionary::KernelParamVector;
use crate::error::{Result, SgklError};
use crate::graph::{Graph, ObservedSignalSet};
use crate::learner::{Checkpoint, GraphDataset};

/// Relative disagreement allowed between the two directions of an edge.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> SgklError {
    SgklError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn load_graph_csv(path: &Path) -> Result<Graph> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let n = loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(path, 1, "missing `nodes=N` line"));
        };
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let value = t
            .strip_prefix("nodes=")
            .ok_or_else(|| parse_err(path, i + 1, format!("expected `nodes=N`, found {t:?}")))?;
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("invalid node count {value:?}")))?;
        if n == 0 {
            return Err(parse_err(path, i + 1, "node count must be positive"));
        }
        break n;
    };
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut seen = DMatrix::<u8>::zeros(n, n);
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() || t.replace(' ', "") == "i,j,weight" {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let a: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad node index {:?}", fields[0])))?;
        let b: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad node index {:?}", fields[1])))?;
        let weight: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad weight {:?}", fields[2])))?;
        if a >= n || b >= n {
            return Err(parse_err(
                path,
                lineno,
                format!("node index out of range 0..{n}"),
            ));
        }
        if a == b {
            return Err(parse_err(path, lineno, "self-loops are not allowed"));
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(parse_err(
                path,
                lineno,
                format!("weight must be finite and nonnegative, got {weight}"),
            ));
        }
        if seen[(a, b)] != 0 {
            return Err(parse_err(
                path,
                lineno,
                format!("edge ({a},{b}) listed twice"),
            ));
        }
        seen[(a, b)] = 1;
        if seen[(b, a)] != 0 {
            let other = w[(b, a)];
            if (other - weight).abs() > SYMMETRY_TOLERANCE * other.abs().max(weight.abs()) {
                return Err(SgklError::NotSymmetric((other - weight).abs()));
            }
        }
        let v = w[(a, b)].max(weight);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    Graph::new(w)
}

pub fn save_graph_csv(graph: &Graph, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let w = graph.weights();
    writeln!(out, "nodes={}", graph.node_count())?;
    writeln!(out, "i,j,weight")?;
    for a in 0..w.nrows() {
        for b in a + 1..w.ncols() {
            if w[(a, b)] != 0.0 {
                writeln!(out, "{a},{b},{}", w[(a, b)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a numeric matrix; empty cells and `NaN` become NaN.
pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let row = rec
            .iter()
            .map(|cell| {
                let c = cell.trim();
                if c.is_empty() || c.eq_ignore_ascii_case("nan") {
                    Ok(f64::NAN)
                } else {
                    c.parse::<f64>()
                        .map_err(|_| parse_err(path, line, format!("not a number: {c:?}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "empty matrix"));
    }
    let (n, k) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, k, |r, c| rows[r][c]))
}

/// Writes a matrix; NaN entries become empty cells.
pub fn save_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for r in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|c| {
            if m[(r, c)].is_nan() {
                String::new()
            } else {
                m[(r, c)].to_string()
            }
        }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_signals_csv(path: &Path) -> Result<ObservedSignalSet> {
    let m = load_matrix_csv(path)?;
    if m.iter().any(|v| v.is_infinite()) {
        return Err(parse_err(path, 1, "infinite values are not allowed"));
    }
    ObservedSignalSet::from_nan_encoded(m)
}

pub fn save_signals_csv(signals: &ObservedSignalSet, path: &Path) -> Result<()> {
    save_matrix_csv(&signals.to_nan_encoded(), path)
}

/// Loads a graph and its signals and checks that they fit together.
pub fn load_dataset(graph_path: &Path, signals_path: &Path) -> Result<GraphDataset> {
    let graph = load_graph_csv(graph_path)?;
    let signals = load_signals_csv(signals_path)?;
    if graph.node_count() != signals.node_count() {
        return Err(SgklError::ShapeMismatch(format!(
            "{} has {} nodes but {} has {} rows",
            graph_path.display(),
            graph.node_count(),
            signals_path.display(),
            signals.node_count()
        )));
    }
    log::info!(
        "loaded {} nodes, {} signals, {:.1}% observed",
        graph.node_count(),
        signals.signal_count(),
        100.0 * signals.observed_fraction()
    );
    Ok(GraphDataset { graph, signals })
}

pub fn save_psi(psi: &KernelParamVector, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(psi)? + "\n")?;
    Ok(())
}

pub fn load_psi(path: &Path) -> Result<KernelParamVector> {
    let psi: KernelParamVector = serde_json::from_str(&fs::read_to_string(path)?)?;
    psi.validate()?;
    Ok(psi)
}

fn coefficient_path(checkpoint: &Path, m: usize) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    checkpoint.with_file_name(format!("{stem}_coefficients_{m}.csv"))
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(ck)? + "\n")?;
    for (m, x) in ck.coefficients.iter().enumerate() {
        save_matrix_csv(x, &coefficient_path(path, m))?;
    }
    Ok(())
}

/// Loads the JSON part and every coefficient file found next to it.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut m = 0;
    loop {
        let p = coefficient_path(path, m);
        if !p.exists() {
            break;
        }
        let x = load_matrix_csv(&p)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(&p, 1, "coefficients must be finite"));
        }
        ck.coefficients.push(x);
        m += 1;
    }
    Ok(ck)
}
