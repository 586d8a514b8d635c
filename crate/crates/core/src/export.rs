//! Plain-text field output: CSV and a self-describing structured-grid format.
//!
//! The grid format is a header
//!
//! ```text
//! # vkflex-grid 1
//! # nx ny h x0 y0
//! # omega x_min x_max y_min y_max
//! # fields name:rows:cols ...
//! ```
//!
//! followed by one line per node (row-major in `y`) listing every component of
//! every field. Values use shortest round-trip formatting.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::grid::{Grid2, Rect};

fn check_same_grid(fields: &[(&str, &Field)]) -> Result<Grid2> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidParameter("no fields to export".into()))?;
    let g = first.1.grid().clone();
    if fields.iter().any(|(_, f)| !f.grid().same_nodes(&g)) {
        return Err(Error::GridMismatch);
    }
    Ok(g)
}

/// CSV with columns `x, y, name_0, name_1, ...`.
pub fn write_csv<W: Write>(out: &mut W, fields: &[(&str, &Field)]) -> Result<()> {
    let g = check_same_grid(fields)?;
    let mut header = String::from("x,y");
    for (name, f) in fields {
        for c in 0..f.comps() {
            write!(header, ",{name}_{c}").unwrap();
        }
    }
    writeln!(out, "{header}")?;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let mut line = format!("{},{}", g.x(i), g.y(j));
            for (_, f) in fields {
                for v in f.at(i, j) {
                    write!(line, ",{v}").unwrap();
                }
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_grid<W: Write>(out: &mut W, fields: &[(&str, &Field)]) -> Result<()> {
    let g = check_same_grid(fields)?;
    let o = g.omega();
    let [x0, y0] = g.origin();
    writeln!(out, "# vkflex-grid 1")?;
    writeln!(out, "# {} {} {} {} {}", g.nx(), g.ny(), g.h(), x0, y0)?;
    writeln!(out, "# omega {} {} {} {}", o.x_min, o.x_max, o.y_min, o.y_max)?;
    let mut names = String::from("# fields");
    for (name, f) in fields {
        if name.contains(char::is_whitespace) || name.contains(':') {
            return Err(Error::InvalidParameter(format!("field name {name:?}")));
        }
        write!(names, " {name}:{}:{}", f.shape().rows, f.shape().cols).unwrap();
    }
    writeln!(out, "{names}")?;
    for n in 0..g.len() {
        let mut line = String::new();
        for (_, f) in fields {
            let nc = f.comps();
            for v in &f.data()[n * nc..(n + 1) * nc] {
                if !line.is_empty() {
                    line.push(' ');
                }
                write!(line, "{v:e}").unwrap();
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Inverse of [`write_grid`].
pub fn read_grid<R: BufRead>(input: R) -> Result<Vec<(String, Field)>> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse("unexpected end of input".into()))?
            .map_err(Error::from)
    };
    let magic = next()?;
    if magic.trim() != "# vkflex-grid 1" {
        return Err(Error::Parse(format!("bad header {magic:?}")));
    }
    let nums = |s: &str, skip: usize| -> Result<Vec<f64>> {
        s.split_whitespace()
            .skip(skip)
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
            .collect()
    };
    let dims = nums(&next()?, 1)?;
    let om = nums(&next()?, 2)?;
    if dims.len() != 5 || om.len() != 4 {
        return Err(Error::Parse("malformed grid header".into()));
    }
    let (nx, ny, h) = (dims[0] as usize, dims[1] as usize, dims[2]);
    let grid = Grid2::from_parts(Rect::new(om[0], om[1], om[2], om[3]), nx, ny, h, [dims[3], dims[4]])?;
    let spec_line = next()?;
    let mut specs = Vec::new();
    for tok in spec_line.split_whitespace().skip(2) {
        let parts: Vec<&str> = tok.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("bad field spec {tok:?}")));
        }
        let rows = parts[1].parse().map_err(|_| Error::Parse(tok.into()))?;
        let cols = parts[2].parse().map_err(|_| Error::Parse(tok.into()))?;
        specs.push((parts[0].to_string(), Shape { rows, cols }));
    }
    let total: usize = specs.iter().map(|(_, s)| s.comps()).sum();
    let mut bufs: Vec<Vec<f64>> = specs.iter().map(|(_, s)| Vec::with_capacity(grid.len() * s.comps())).collect();
    for _ in 0..grid.len() {
        let vals = nums(&next()?, 0)?;
        if vals.len() != total {
            return Err(Error::Parse(format!("expected {total} values, got {}", vals.len())));
        }
        let mut at = 0;
        for (b, (_, s)) in bufs.iter_mut().zip(&specs) {
            b.extend_from_slice(&vals[at..at + s.comps()]);
            at += s.comps();
        }
    }
    specs
        .into_iter()
        .zip(bufs)
        .map(|((name, shape), data)| Ok((name, Field::from_vec(&grid, shape, data)?)))
        .collect()
}
