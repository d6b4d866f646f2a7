//! CSV serialization of driving signals.
//!
//! Header `t,x1,...,xl` optionally followed by `a11,a12,...,all`. Row `k`
//! holds the path at `t_k`; its level-2 columns hold the cell [t_{k-1}, t_k]
//! (zeros on the first row). Floats use the shortest round-trip representation.

use super::{DrivingSignal, SampledPath, TimeGrid};
use crate::error::{Error, Result};
use std::io::{BufRead, Write};

pub fn write_signal_csv<W: Write>(signal: &DrivingSignal, mut w: W, with_level2: bool) -> Result<()> {
    let l = signal.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=l).map(|i| format!("x{i}")));
    if with_level2 {
        for i in 1..=l {
            for j in 1..=l {
                header.push(format!("a{i}{j}"));
            }
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (k, &t) in signal.grid().points().iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(signal.value(k).iter().map(|v| v.to_string()));
        if with_level2 {
            if k == 0 {
                row.extend(std::iter::repeat_n("0".to_string(), l * l));
            } else {
                row.extend(signal.cell_level2(k - 1).iter().map(|v| v.to_string()));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read a signal; without level-2 columns the piecewise-linear lift is used.
pub fn read_signal_csv<R: BufRead>(r: R, p: f64) -> Result<DrivingSignal> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Invalid("empty signal file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Invalid("signal header must start with 't'".into()));
    }
    let l = cols[1..].iter().take_while(|c| c.starts_with('x')).count();
    if l == 0 {
        return Err(Error::Invalid("signal header has no x columns".into()));
    }
    for (i, c) in cols[1..=l].iter().enumerate() {
        if *c != format!("x{}", i + 1) {
            return Err(Error::Invalid(format!("unexpected column '{c}'")));
        }
    }
    let extra = cols.len() - 1 - l;
    let has_level2 = match extra {
        0 => false,
        e if e == l * l => {
            let mut k = 1 + l;
            for i in 1..=l {
                for j in 1..=l {
                    if cols[k] != format!("a{i}{j}") {
                        return Err(Error::Invalid(format!("unexpected column '{}'", cols[k])));
                    }
                    k += 1;
                }
            }
            true
        }
        _ => {
            return Err(Error::Invalid(format!(
                "expected {} level-2 columns, found {extra}",
                l * l
            )))
        }
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut level2 = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Invalid(format!("row {}: {e}", lineno + 2)))?;
        if fields.len() != cols.len() {
            return Err(Error::Invalid(format!(
                "row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        times.push(fields[0]);
        values.extend_from_slice(&fields[1..=l]);
        if has_level2 && times.len() > 1 {
            level2.extend_from_slice(&fields[1 + l..]);
        }
    }
    let path = SampledPath {
        grid: TimeGrid::new(times)?,
        dim: l,
        values,
    };
    if has_level2 {
        DrivingSignal::with_level2(path, level2, p)
    } else {
        super::lift_step2(&path, p)
    }
}
