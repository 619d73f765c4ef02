//! Plain-text field snapshots.
//!
//! ```text
//! 2 180 periodic
//! 1.0000000000000000e0 0.0000000000000000e0 -2.5000000000000000e-1
//! ...
//! ```
//!
//! The header holds the dimension, cells per side and boundary kind. Each
//! following line holds the components of one dof, in dof order, written with
//! 17 significant digits so that values round-trip exactly.

use std::io::{BufRead, Write};
use std::sync::Arc;

use super::field::NodalVectorField;
use super::mesh::{BoundaryKind, StructuredMesh};
use crate::error::{Error, Result};

pub fn write_snapshot<W: Write>(out: &mut W, field: &NodalVectorField) -> Result<()> {
    let m = field.mesh();
    writeln!(out, "{} {} {}", m.dim(), m.cells(), m.bc())?;
    let mut line = String::new();
    for d in 0..field.n_dofs() {
        line.clear();
        for (c, v) in field.at(d).iter().enumerate() {
            if c > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_snapshot(path: &std::path::Path, field: &NodalVectorField) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_snapshot(&mut f, field)?;
    f.flush()?;
    Ok(())
}

/// Reads a snapshot, building its mesh. Pass `mesh` to reuse an existing
/// mesh; it must match the header.
pub fn read_snapshot<R: BufRead>(input: R, mesh: Option<Arc<StructuredMesh>>) -> Result<NodalVectorField> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty snapshot".into(),
    })?;
    let header = header?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected `dim N bc`, got `{header}`"),
        });
    }
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let dim: usize = parts[0]
        .parse()
        .map_err(|_| bad(format!("bad dimension `{}`", parts[0])))?;
    let cells: usize = parts[1]
        .parse()
        .map_err(|_| bad(format!("bad cell count `{}`", parts[1])))?;
    let bc: BoundaryKind = parts[2]
        .parse()
        .map_err(|_| bad(format!("bad boundary `{}`", parts[2])))?;
    let mesh = match mesh {
        Some(m) => {
            if m.dim() != dim || m.cells() != cells || m.bc() != bc {
                return Err(Error::Consistency("snapshot header does not match mesh".into()));
            }
            m
        }
        None => Arc::new(StructuredMesh::new(dim, cells, bc)?),
    };
    let mut values = Vec::with_capacity(mesh.n_dofs() * 3);
    let mut components = 0;
    let mut rows = 0;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut k = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad number `{tok}`"),
            })?;
            values.push(v);
            k += 1;
        }
        if rows == 0 {
            components = k;
        } else if k != components {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {components} values, found {k}"),
            });
        }
        rows += 1;
    }
    if rows != mesh.n_dofs() {
        return Err(Error::Parse {
            line: rows + 2,
            msg: format!("expected {} value lines, found {rows}", mesh.n_dofs()),
        });
    }
    NodalVectorField::new(mesh, components, values)
}

pub fn load_snapshot(path: &std::path::Path, mesh: Option<Arc<StructuredMesh>>) -> Result<NodalVectorField> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_snapshot(f, mesh)
}
