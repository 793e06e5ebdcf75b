//! Shape files: curves as legacy ASCII VTK polydata, meshes as Wavefront
//! OBJ. Every write goes to a temporary file in the destination directory
//! and is renamed into place.
//!
//! VTK grammar written (and the subset read back):
//!
//! ```text
//! # vtk DataFile Version 3.0
//! <title line>
//! ASCII
//! DATASET POLYDATA
//! POINTS <n> double
//! <x> <y> <z>                 (n lines)
//! LINES <cells> <cells + total indices>
//! <k> <i_1> ... <i_k>          (one polyline per cell)
//! CELL_DATA <cells>            (optional)
//! SCALARS label int 1
//! LOOKUP_TABLE default
//! <label>                      (one per cell)
//! ```
//!
//! Consecutive edges sharing a label and a vertex are grouped into one
//! cell, so reading a written file reproduces the edge list and labels
//! exactly. Without `CELL_DATA`, each cell gets its index as label.
//! Coordinates use the shortest decimal that round-trips exactly.
//!
//! OBJ: `v x y z` and triangular `f a b c` records (1-based; `a/t/n`
//! forms and negative indices accepted); other records are ignored.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DiscreteShape, Geometry, Polylines, TriMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFormat {
    Vtk,
    Obj,
}

impl ShapeFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("vtk") => Ok(ShapeFormat::Vtk),
            Some("obj") => Ok(ShapeFormat::Obj),
            _ => Err(Error::UnsupportedExtension(path.to_path_buf())),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ShapeFormat::Vtk => "vtk",
            ShapeFormat::Obj => "obj",
        }
    }

    pub fn of(shape: &DiscreteShape) -> Self {
        match shape.geometry() {
            Geometry::Curves(_) => ShapeFormat::Vtk,
            Geometry::Mesh(_) => ShapeFormat::Obj,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_shape(path: &Path) -> Result<DiscreteShape> {
    let format = ShapeFormat::from_path(path)?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let geometry = match format {
        ShapeFormat::Vtk => Geometry::Curves(parse_vtk(&text, path)?),
        ShapeFormat::Obj => Geometry::Mesh(parse_obj(&text, path)?),
    };
    DiscreteShape::new(geometry).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// Writes curves as VTK and meshes as OBJ; the extension must match.
pub fn write_shape(shape: &DiscreteShape, path: &Path) -> Result<()> {
    let format = ShapeFormat::from_path(path)?;
    let text = match (shape.geometry(), format) {
        (Geometry::Curves(c), ShapeFormat::Vtk) => format_vtk(c),
        (Geometry::Mesh(m), ShapeFormat::Obj) => format_obj(m),
        _ => return Err(Error::UnsupportedExtension(path.to_path_buf())),
    };
    write_atomic(path, text.as_bytes())
}

/// Groups the edge list into maximal chains of consecutive, connected,
/// equally labeled edges.
fn chains(curves: &Polylines) -> Vec<(u32, Vec<usize>)> {
    let mut out: Vec<(u32, Vec<usize>)> = Vec::new();
    for (edge, &label) in curves.edges().iter().zip(curves.labels()) {
        match out.last_mut() {
            Some((l, chain)) if *l == label && chain.last() == Some(&edge[0]) => chain.push(edge[1]),
            _ => out.push((label, vec![edge[0], edge[1]])),
        }
    }
    out
}

pub fn format_vtk(curves: &Polylines) -> String {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\npartial-varifold curves\nASCII\nDATASET POLYDATA\n");
    let _ = writeln!(s, "POINTS {} double", curves.vertices().len());
    for v in curves.vertices() {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    let cells = chains(curves);
    let size: usize = cells.iter().map(|(_, c)| c.len() + 1).sum();
    let _ = writeln!(s, "LINES {} {}", cells.len(), size);
    for (_, chain) in &cells {
        s.push_str(&chain.len().to_string());
        for i in chain {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_DATA {}", cells.len());
    s.push_str("SCALARS label int 1\nLOOKUP_TABLE default\n");
    for (label, _) in &cells {
        let _ = writeln!(s, "{label}");
    }
    s
}

pub fn format_obj(mesh: &TriMesh) -> String {
    let mut s = String::from("# partial-varifold mesh\n");
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// Whitespace tokens with their 1-based line numbers, comments stripped.
struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    path: PathBuf,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str, path: &Path) -> Self {
        let items = text
            .lines()
            .enumerate()
            .skip(2)
            .flat_map(|(i, line)| line.split('#').next().unwrap_or("").split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Self {
            items,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or_else(|| self.items.last())
            .map_or(0, |(l, _)| *l)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|(_, t)| *t)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let line = self.line();
        let item = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(line, format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn keyword(&mut self, expected: &str) -> Result<()> {
        let (line, tok) = self.next(expected)?;
        if !tok.eq_ignore_ascii_case(expected) {
            return Err(self.err(line, format!("expected `{expected}`, found `{tok}`")));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (line, tok) = self.next(what)?;
        tok.parse().map_err(|_| self.err(line, format!("invalid {what} `{tok}`")))
    }
}

pub fn parse_vtk(text: &str, path: &Path) -> Result<Polylines> {
    let parse_err = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines();
    if !lines.next().is_some_and(|l| l.trim_start().starts_with("# vtk DataFile")) {
        return Err(parse_err(1, "missing `# vtk DataFile` header"));
    }
    lines.next().ok_or_else(|| parse_err(2, "missing title line"))?;

    let mut t = Tokens::new(text, path);
    t.keyword("ASCII")?;
    t.keyword("DATASET")?;
    t.keyword("POLYDATA")?;

    let mut points: Option<Vec<Vec3>> = None;
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut cell_line: Vec<usize> = Vec::new();
    let mut labels: Option<Vec<u32>> = None;
    while let Some(tok) = t.peek() {
        let line = t.line();
        match tok.to_ascii_uppercase().as_str() {
            "POINTS" => {
                t.next("POINTS")?;
                let n: usize = t.parse("point count")?;
                let _ty = t.next("point type")?;
                let mut pts = Vec::with_capacity(n);
                for _ in 0..n {
                    let x = t.parse("coordinate")?;
                    let y = t.parse("coordinate")?;
                    let z = t.parse("coordinate")?;
                    pts.push(Vec3::new(x, y, z));
                }
                points = Some(pts);
            }
            "LINES" => {
                t.next("LINES")?;
                let pts = points
                    .as_ref()
                    .ok_or_else(|| t.err(line, "LINES section before any POINTS section"))?;
                let count: usize = t.parse("cell count")?;
                let size: usize = t.parse("cell list size")?;
                let mut seen = 0;
                for _ in 0..count {
                    let cl = t.line();
                    let k: usize = t.parse("cell length")?;
                    let mut cell = Vec::with_capacity(k);
                    for _ in 0..k {
                        let il = t.line();
                        let i: usize = t.parse("point index")?;
                        if i >= pts.len() {
                            return Err(t.err(il, format!("point index {i} out of range ({} points)", pts.len())));
                        }
                        cell.push(i);
                    }
                    if k < 2 {
                        return Err(t.err(cl, "line cell needs at least two points"));
                    }
                    seen += k + 1;
                    cells.push(cell);
                    cell_line.push(cl);
                }
                if seen != size {
                    return Err(t.err(line, format!("LINES size {size} does not match cell data ({seen})")));
                }
            }
            "CELL_DATA" => {
                t.next("CELL_DATA")?;
                let n: usize = t.parse("cell count")?;
                if n != cells.len() {
                    return Err(t.err(line, format!("CELL_DATA count {n} does not match {} cells", cells.len())));
                }
                t.keyword("SCALARS")?;
                let (nl, name) = t.next("array name")?;
                if name != "label" {
                    return Err(t.err(nl, format!("unsupported cell array `{name}`")));
                }
                let _ty = t.next("array type")?;
                if t.peek().is_some_and(|s| s.parse::<usize>().is_ok()) {
                    t.next("component count")?;
                }
                t.keyword("LOOKUP_TABLE")?;
                t.next("lookup table name")?;
                let mut ls = Vec::with_capacity(n);
                for _ in 0..n {
                    ls.push(t.parse("label")?);
                }
                labels = Some(ls);
            }
            other => return Err(t.err(line, format!("unsupported section `{other}`"))),
        }
    }

    let vertices = points.ok_or_else(|| t.err(t.line(), "missing POINTS section"))?;
    if cells.is_empty() {
        return Err(t.err(t.line(), "missing LINES section"));
    }
    let labels = labels.unwrap_or_else(|| (0..cells.len() as u32).collect());
    let curves: Vec<(u32, Vec<usize>)> = labels.into_iter().zip(cells).collect();
    Polylines::from_curves(vertices, &curves).map_err(|e| {
        let line = match &e {
            Error::DegenerateEdge { .. } | Error::IndexOutOfRange { .. } => cell_line.first().copied().unwrap_or(0),
            _ => 0,
        };
        t.err(line, e.to_string())
    })
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut parts = content.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse().map_err(|_| err(line, format!("invalid coordinate `{s}`"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err(line, "vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = parts
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        head.parse().map_err(|_| err(line, format!("invalid face index `{s}`")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err(line, format!("only triangles are supported, found {} indices", idx.len())));
                }
                let mut face = [0usize; 3];
                for (slot, &k) in face.iter_mut().zip(&idx) {
                    let resolved = match k {
                        k if k > 0 => (k - 1) as usize,
                        k if k < 0 && (-k) as usize <= vertices.len() => vertices.len() - (-k) as usize,
                        _ => usize::MAX,
                    };
                    if resolved >= vertices.len() {
                        return Err(err(line, format!("face index {k} out of range ({} vertices so far)", vertices.len())));
                    }
                    *slot = resolved;
                }
                faces.push(face);
                face_lines.push(line);
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(err(text.lines().count(), "no faces".into()));
    }
    TriMesh::new(vertices, faces).map_err(|e| {
        let line = match &e {
            Error::DegenerateFace { index, .. } => face_lines[*index],
            _ => 0,
        };
        err(line, e.to_string())
    })
}
