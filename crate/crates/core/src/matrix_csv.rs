//! Plain-text matrix format for kernels, functions, measures and weights.
//!
//! The first line names the states, comma separated. A kernel follows with one
//! line per source state; functions, measures and weights follow with a single
//! line. Values are written in scientific notation with 17 significant digits,
//! which round-trips every finite `f64` exactly.
//!
//! ```text
//! idle,busy
//! 6.9999999999999996e-1,2.9999999999999999e-1
//! 2.5000000000000000e-1,7.5000000000000000e-1
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel_algebra::{FiniteFunction, FiniteKernel, FiniteMeasure, StateSpace, WeightFunction};

/// Format a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(space: &StateSpace) -> String {
    space.labels().join(",")
}

fn row(values: &[f64]) -> String {
    values.iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(",")
}

pub fn write_kernel(space: &StateSpace, k: &FiniteKernel) -> Result<String> {
    crate::error::check_dim("write_kernel", space.size(), k.size())?;
    let mut out = header(space);
    out.push('\n');
    for r in k.entries().row_iter() {
        let v: Vec<f64> = r.iter().copied().collect();
        out.push_str(&row(&v));
        out.push('\n');
    }
    Ok(out)
}

fn write_vector(space: &StateSpace, v: &[f64]) -> Result<String> {
    crate::error::check_dim("write_vector", space.size(), v.len())?;
    Ok(format!("{}\n{}\n", header(space), row(v)))
}

pub fn write_function(space: &StateSpace, h: &FiniteFunction) -> Result<String> {
    write_vector(space, h.as_slice())
}

pub fn write_measure(space: &StateSpace, eta: &FiniteMeasure) -> Result<String> {
    write_vector(space, eta.as_slice())
}

pub fn write_weight(space: &StateSpace, w: &WeightFunction) -> Result<String> {
    write_vector(space, w.as_slice())
}

fn parse_lines(text: &str) -> Result<(StateSpace, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let space = StateSpace::new(head.split(',').map(|s| s.trim().to_string()).collect())?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let vals = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != space.size() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {} values, found {}", space.size(), vals.len()),
            });
        }
        rows.push(vals);
    }
    Ok((space, rows))
}

fn single_row(text: &str) -> Result<(StateSpace, Vec<f64>)> {
    let (space, mut rows) = parse_lines(text)?;
    if rows.len() != 1 {
        return Err(Error::Parse {
            line: 2,
            message: format!("expected exactly one data row, found {}", rows.len()),
        });
    }
    Ok((space, rows.remove(0)))
}

/// Parse a kernel. Kernels with a negative entry are returned as signed.
pub fn read_kernel(text: &str) -> Result<(StateSpace, FiniteKernel)> {
    let (space, rows) = parse_lines(text)?;
    if rows.len() != space.size() {
        return Err(Error::Parse {
            line: rows.len() + 2,
            message: format!("expected {} kernel rows, found {}", space.size(), rows.len()),
        });
    }
    let n = space.size();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let k = if m.iter().any(|v| *v < 0.0) {
        FiniteKernel::signed(m)?
    } else {
        FiniteKernel::nonnegative(m)?
    };
    Ok((space, k))
}

pub fn read_function(text: &str) -> Result<(StateSpace, FiniteFunction)> {
    let (space, v) = single_row(text)?;
    Ok((space, FiniteFunction::new(v)?))
}

pub fn read_measure(text: &str) -> Result<(StateSpace, FiniteMeasure)> {
    let (space, v) = single_row(text)?;
    Ok((space, FiniteMeasure::new(v)?))
}

pub fn read_weight(text: &str) -> Result<(StateSpace, WeightFunction)> {
    let (space, v) = single_row(text)?;
    Ok((space, WeightFunction::new(v)?))
}
