//! Legacy ASCII VTK snapshots of displacement and damage.

use crate::mesh::Mesh;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VtkError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed VTK file: {0}")]
    Format(String),
}

/// Contents of a snapshot as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub title: String,
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    /// Total displacement, three components per point.
    pub displacement: Vec<[f64; 3]>,
    pub damage: Vec<f64>,
}

fn num(x: f64) -> String {
    // 17 significant digits
    format!("{:.16e}", x)
}

/// Render a snapshot. `disp` holds `dim` components per node.
pub fn render(mesh: &Mesh, title: &str, disp: &[f64], damage: &[f64]) -> String {
    let dim = mesh.dim();
    let n = mesh.num_nodes();
    assert_eq!(disp.len(), dim * n);
    assert_eq!(damage.len(), n);
    let mut s = String::with_capacity(80 * n);
    s.push_str("# vtk DataFile Version 3.0\n");
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    let _ = writeln!(s, "{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {n} double");
    for x in mesh.all_coords() {
        let _ = writeln!(s, "{} {} {}", num(x[0]), num(x[1]), num(x[2]));
    }
    let npe = mesh.nodes_per_element();
    let ne = mesh.num_elements();
    let _ = writeln!(s, "CELLS {ne} {}", ne * (npe + 1));
    for e in 0..ne {
        let ids: Vec<String> = mesh.element(e).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{npe} {}", ids.join(" "));
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    let ct = if dim == 3 { "10\n" } else { "5\n" };
    for _ in 0..ne {
        s.push_str(ct);
    }
    let _ = writeln!(s, "POINT_DATA {n}\nVECTORS displacement double");
    for i in 0..n {
        let c = |k: usize| if k < dim { disp[i * dim + k] } else { 0.0 };
        let _ = writeln!(s, "{} {} {}", num(c(0)), num(c(1)), num(c(2)));
    }
    s.push_str("SCALARS damage double 1\nLOOKUP_TABLE default\n");
    for a in damage {
        s.push_str(&num(*a));
        s.push('\n');
    }
    s
}

pub fn write_snapshot(path: &Path, mesh: &Mesh, title: &str, disp: &[f64], damage: &[f64]) -> std::io::Result<()> {
    crate::cli::output::write_atomic(path, render(mesh, title, disp, damage).as_bytes())
}

struct Tokens<'a> {
    it: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, VtkError> {
        self.it.next().ok_or_else(|| VtkError::Format(format!("unexpected end of file reading {what}")))
    }

    fn expect(&mut self, word: &str) -> Result<(), VtkError> {
        let t = self.next(word)?;
        if t.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(VtkError::Format(format!("expected `{word}`, found `{t}`")))
        }
    }

    fn usize(&mut self, what: &str) -> Result<usize, VtkError> {
        let t = self.next(what)?;
        t.parse().map_err(|_| VtkError::Format(format!("bad integer `{t}` in {what}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, VtkError> {
        let t = self.next(what)?;
        t.parse().map_err(|_| VtkError::Format(format!("bad number `{t}` in {what}")))
    }
}

/// Parse snapshots produced by [`render`].
pub fn parse(text: &str) -> Result<Snapshot, VtkError> {
    let mut lines = text.splitn(3, '\n');
    let header = lines.next().unwrap_or("");
    if !header.starts_with("# vtk DataFile") {
        return Err(VtkError::Format("missing VTK header".into()));
    }
    let title = lines.next().unwrap_or("").to_string();
    let mut t = Tokens { it: lines.next().unwrap_or("").split_whitespace().peekable() };
    t.expect("ASCII")?;
    t.expect("DATASET")?;
    t.expect("UNSTRUCTURED_GRID")?;
    t.expect("POINTS")?;
    let n = t.usize("POINTS")?;
    t.next("POINTS type")?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push([t.f64("POINTS")?, t.f64("POINTS")?, t.f64("POINTS")?]);
    }
    t.expect("CELLS")?;
    let ne = t.usize("CELLS")?;
    t.usize("CELLS")?;
    let mut cells = Vec::with_capacity(ne);
    for _ in 0..ne {
        let k = t.usize("CELLS")?;
        let c = (0..k).map(|_| t.usize("CELLS")).collect::<Result<Vec<_>, _>>()?;
        if c.iter().any(|&v| v >= n) {
            return Err(VtkError::Format("cell references a missing point".into()));
        }
        cells.push(c);
    }
    t.expect("CELL_TYPES")?;
    let nt = t.usize("CELL_TYPES")?;
    for _ in 0..nt {
        t.usize("CELL_TYPES")?;
    }
    t.expect("POINT_DATA")?;
    if t.usize("POINT_DATA")? != n {
        return Err(VtkError::Format("POINT_DATA size differs from POINTS".into()));
    }
    let mut displacement = None;
    let mut damage = None;
    while let Some(kind) = t.it.next() {
        match kind.to_ascii_uppercase().as_str() {
            "VECTORS" => {
                let name = t.next("VECTORS")?;
                t.next("VECTORS type")?;
                let v = (0..n)
                    .map(|_| Ok([t.f64(name)?, t.f64(name)?, t.f64(name)?]))
                    .collect::<Result<Vec<_>, VtkError>>()?;
                if name == "displacement" {
                    displacement = Some(v);
                }
            }
            "SCALARS" => {
                let name = t.next("SCALARS")?;
                t.next("SCALARS type")?;
                if t.it.peek().map_or(false, |s| s.parse::<usize>().is_ok()) {
                    t.next("SCALARS components")?;
                }
                t.expect("LOOKUP_TABLE")?;
                t.next("LOOKUP_TABLE")?;
                let v = (0..n).map(|_| t.f64(name)).collect::<Result<Vec<_>, _>>()?;
                if name == "damage" {
                    damage = Some(v);
                }
            }
            other => return Err(VtkError::Format(format!("unsupported section `{other}`"))),
        }
    }
    Ok(Snapshot {
        title,
        points,
        cells,
        displacement: displacement.ok_or_else(|| VtkError::Format("no displacement field".into()))?,
        damage: damage.ok_or_else(|| VtkError::Format("no damage field".into()))?,
    })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, VtkError> {
    parse(&std::fs::read_to_string(path)?)
}
