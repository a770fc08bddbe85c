//! Legacy VTK snapshots and probe time series.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A named cell field in global lexicographic order (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct CellField<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// Renders an ASCII `STRUCTURED_POINTS` dataset with one `SCALARS` block
/// per field. Values carry 17 significant digits so they re-read exactly.
pub fn render_snapshot(grid: &Grid, title: &str, fields: &[CellField<'_>]) -> Result<String> {
    let n = grid.n_cells();
    for f in fields {
        if f.values.len() != n {
            return Err(Error::InvalidInput(format!("field '{}' has {} values for {n} cells", f.name, f.values.len())));
        }
        if f.name.is_empty() || f.name.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("field name '{}' must be a single word", f.name)));
        }
    }
    let d = grid.dims();
    let spec = grid.spec();
    let corner: [f64; 3] = std::array::from_fn(|a| spec.origin[a] - 0.5 * spec.spacing[a]);
    let mut s = String::with_capacity(64 + fields.len() * n * 25);
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str(title.lines().next().unwrap_or(""));
    s.push_str("\nASCII\nDATASET STRUCTURED_POINTS\n");
    s.push_str(&format!("DIMENSIONS {} {} {}\n", d[0] + 1, d[1] + 1, d[2] + 1));
    s.push_str(&format!("ORIGIN {:.16e} {:.16e} {:.16e}\n", corner[0], corner[1], corner[2]));
    s.push_str(&format!("SPACING {:.16e} {:.16e} {:.16e}\n", spec.spacing[0], spec.spacing[1], spec.spacing[2]));
    s.push_str(&format!("CELL_DATA {n}\n"));
    for f in fields {
        s.push_str(&format!("SCALARS {} double 1\nLOOKUP_TABLE default\n", f.name));
        for v in f.values {
            s.push_str(&format!("{v:.16e}\n"));
        }
    }
    Ok(s)
}

pub fn write_snapshot(grid: &Grid, title: &str, fields: &[CellField<'_>], path: &Path) -> Result<()> {
    let text = render_snapshot(grid, title, fields)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Contents of a snapshot read back from text.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub title: String,
    /// Point dimensions (cells + 1 along each axis).
    pub dimensions: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub fields: Vec<(String, Vec<f64>)>,
}

impl Snapshot {
    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("malformed snapshot: {}", msg.into()))
}

fn triple<V: std::str::FromStr>(line: Option<&str>, key: &str) -> Result<[V; 3]> {
    let line = line.ok_or_else(|| bad(format!("missing {key}")))?;
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(bad(format!("expected {key}, found '{line}'")));
    }
    let v: Vec<V> = it.map(|t| t.parse().map_err(|_| bad(format!("bad {key} value '{t}'")))).collect::<Result<_>>()?;
    v.try_into().map_err(|_| bad(format!("{key} needs three values")))
}

/// Parses the subset of legacy VTK written by [`render_snapshot`].
pub fn parse_snapshot(text: &str) -> Result<Snapshot> {
    let mut lines = text.lines();
    if !lines.next().is_some_and(|l| l.starts_with("# vtk DataFile")) {
        return Err(bad("missing header"));
    }
    let title = lines.next().ok_or_else(|| bad("missing title"))?.to_string();
    if lines.next() != Some("ASCII") || lines.next() != Some("DATASET STRUCTURED_POINTS") {
        return Err(bad("expected ASCII STRUCTURED_POINTS"));
    }
    let dimensions: [usize; 3] = triple(lines.next(), "DIMENSIONS")?;
    let origin = triple(lines.next(), "ORIGIN")?;
    let spacing = triple(lines.next(), "SPACING")?;
    let n: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("CELL_DATA "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad("missing CELL_DATA"))?;
    if dimensions.iter().map(|d| d.saturating_sub(1)).product::<usize>() != n {
        return Err(bad("CELL_DATA does not match DIMENSIONS"));
    }
    let mut fields = Vec::new();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let name = match toks.as_slice() {
            ["SCALARS", name, _, ..] => name.to_string(),
            _ => return Err(bad(format!("expected SCALARS, found '{line}'"))),
        };
        if !lines.next().is_some_and(|l| l.starts_with("LOOKUP_TABLE")) {
            return Err(bad("missing LOOKUP_TABLE"));
        }
        let values = (0..n)
            .map(|_| {
                let l = lines.next().ok_or_else(|| bad(format!("field '{name}' is truncated")))?;
                l.trim().parse::<f64>().map_err(|_| bad(format!("bad value '{l}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        fields.push((name, values));
    }
    Ok(Snapshot { title, dimensions, origin, spacing, fields })
}

/// Column header of the probe CSV.
pub fn probe_header(names: &[&str]) -> String {
    let mut s = String::from("t");
    for n in names {
        s.push_str(&format!(",theta_{n}"));
    }
    for n in names {
        s.push_str(&format!(",h_{n}"));
    }
    s
}

/// Appends `t, theta(probe_1), ..., h(probe_1), ...` to `path`. `cells` are
/// global cell indices into `theta` and `h`.
pub fn write_probes(cells: &[usize], t: f64, theta: &[f64], h: &[f64], path: &Path) -> Result<()> {
    let mut row = format!("{t}");
    for &c in cells {
        row.push_str(&format!(",{}", theta[c]));
    }
    for &c in cells {
        row.push_str(&format!(",{}", h[c]));
    }
    row.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(row.as_bytes())?;
    Ok(())
}
