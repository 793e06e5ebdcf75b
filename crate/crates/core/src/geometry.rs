//! Shape containers and their discretization into oriented varifold atoms.
//!
//! Curves become one atom per edge (midpoint, unit tangent, length) and
//! triangle meshes one atom per face (centroid, unit normal, area). Edge
//! and face vertex order define orientation, so file order is preserved
//! everywhere.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Degeneracy tolerance, relative to the bounding-box diagonal.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// One weighted Dirac of a discrete oriented varifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub position: Vec3,
    /// Unit tangent (curves) or unit normal (surfaces).
    pub direction: Vec3,
    /// Edge length or face area.
    pub weight: f64,
}

/// Partial derivatives of a scalar with respect to one atom's parameters.
/// `direction` is the derivative with respect to the unconstrained vector;
/// the pullback projects it onto the sphere's tangent plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomGradient {
    pub position: Vec3,
    pub direction: Vec3,
    pub weight: f64,
}

impl Default for AtomGradient {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            direction: Vec3::zeros(),
            weight: 0.0,
        }
    }
}

/// A union of oriented polylines stored as an edge list. Each edge carries
/// the label of the curve it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Polylines {
    vertices: Vec<Vec3>,
    edges: Vec<[usize; 2]>,
    labels: Vec<u32>,
}

impl Polylines {
    /// All edges get label 0.
    pub fn new(vertices: Vec<Vec3>, edges: Vec<[usize; 2]>) -> Result<Self> {
        let labels = vec![0; edges.len()];
        Self::with_labels(vertices, edges, labels)
    }

    pub fn with_labels(vertices: Vec<Vec3>, edges: Vec<[usize; 2]>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != edges.len() {
            return Err(Error::SizeMismatch {
                expected: edges.len(),
                found: labels.len(),
            });
        }
        if edges.is_empty() && !vertices.is_empty() {
            return Err(Error::EmptyShape);
        }
        let shape = Self {
            vertices,
            edges,
            labels,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// Builds one labeled polyline per entry of `curves`, each given as a
    /// list of indices into `vertices`.
    pub fn from_curves(vertices: Vec<Vec3>, curves: &[(u32, Vec<usize>)]) -> Result<Self> {
        let mut edges = Vec::new();
        let mut labels = Vec::new();
        for (label, chain) in curves {
            for pair in chain.windows(2) {
                edges.push([pair[0], pair[1]]);
                labels.push(*label);
            }
        }
        Self::with_labels(vertices, edges, labels)
    }

    fn validate(&self) -> Result<()> {
        let count = self.vertices.len();
        for (index, edge) in self.edges.iter().enumerate() {
            for &vertex in edge {
                if vertex >= count {
                    return Err(Error::IndexOutOfRange {
                        element: "edge",
                        index,
                        vertex,
                        count,
                    });
                }
            }
        }
        discretize_curves(self).map(|_| ())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Distinct labels in order of first appearance.
    pub fn distinct_labels(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for &l in &self.labels {
            if !out.contains(&l) {
                out.push(l);
            }
        }
        out
    }

    pub fn total_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|&[a, b]| (self.vertices[b] - self.vertices[a]).norm())
            .sum()
    }
}

/// Triangle mesh. Consistent face orientation is the caller's
/// responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() && !vertices.is_empty() {
            return Err(Error::EmptyShape);
        }
        let count = vertices.len();
        for (index, face) in faces.iter().enumerate() {
            for &vertex in face {
                if vertex >= count {
                    return Err(Error::IndexOutOfRange {
                        element: "face",
                        index,
                        vertex,
                        count,
                    });
                }
            }
        }
        let mesh = Self { vertices, faces };
        discretize_mesh(&mesh)?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Curves(Polylines),
    Mesh(TriMesh),
}

impl Geometry {
    pub fn vertices(&self) -> &[Vec3] {
        match self {
            Geometry::Curves(c) => c.vertices(),
            Geometry::Mesh(m) => m.vertices(),
        }
    }

    /// Same connectivity, new vertex positions, validated.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Geometry> {
        if vertices.len() != self.vertices().len() {
            return Err(Error::SizeMismatch {
                expected: self.vertices().len(),
                found: vertices.len(),
            });
        }
        Ok(match self {
            Geometry::Curves(c) => Geometry::Curves(Polylines::with_labels(
                vertices,
                c.edges.clone(),
                c.labels.clone(),
            )?),
            Geometry::Mesh(m) => Geometry::Mesh(TriMesh::new(vertices, m.faces.clone())?),
        })
    }

    /// Atoms of this connectivity evaluated at arbitrary vertex positions.
    /// No degeneracy check: a collapsed element yields non-finite values,
    /// which the optimizer rejects as a failed trial step.
    pub fn atoms_at(&self, vertices: &[Vec3]) -> Vec<Atom> {
        match self {
            Geometry::Curves(c) => c.edges.iter().map(|&[a, b]| edge_atom(vertices[a], vertices[b])).collect(),
            Geometry::Mesh(m) => m
                .faces
                .iter()
                .map(|&[a, b, c]| face_atom(vertices[a], vertices[b], vertices[c]))
                .collect(),
        }
    }

    /// Chain rule from per-atom gradients to per-vertex gradients.
    pub fn pullback(&self, vertices: &[Vec3], atom_grads: &[AtomGradient]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); vertices.len()];
        match self {
            Geometry::Curves(c) => {
                for (&[a, b], g) in c.edges.iter().zip(atom_grads) {
                    let e = vertices[b] - vertices[a];
                    let len = e.norm();
                    let u = e / len;
                    let tangential = g.direction - u * u.dot(&g.direction);
                    let ge = tangential / len + u * g.weight;
                    out[a] += g.position * 0.5 - ge;
                    out[b] += g.position * 0.5 + ge;
                }
            }
            Geometry::Mesh(m) => {
                for (&[a, b, c], g) in m.faces.iter().zip(atom_grads) {
                    let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
                    let n = (pb - pa).cross(&(pc - pa));
                    let nn = n.norm();
                    let u = n / nn;
                    let tangential = g.direction - u * u.dot(&g.direction);
                    let gn = tangential / nn + u * (0.5 * g.weight);
                    let third = g.position / 3.0;
                    let gb = (pc - pa).cross(&gn);
                    let gc = gn.cross(&(pb - pa));
                    out[a] += third - gb - gc;
                    out[b] += third + gb;
                    out[c] += third + gc;
                }
            }
        }
        out
    }
}

fn edge_atom(a: Vec3, b: Vec3) -> Atom {
    let e = b - a;
    let len = e.norm();
    Atom {
        position: (a + b) * 0.5,
        direction: e / len,
        weight: len,
    }
}

fn face_atom(a: Vec3, b: Vec3, c: Vec3) -> Atom {
    let n = (b - a).cross(&(c - a));
    let nn = n.norm();
    Atom {
        position: (a + b + c) / 3.0,
        direction: n / nn,
        weight: 0.5 * nn,
    }
}

/// One atom per edge: midpoint, unit edge vector, edge length.
pub fn discretize_curves(shape: &Polylines) -> Result<Vec<Atom>> {
    let tol = DEGENERACY_TOL * bbox_diagonal(&shape.vertices);
    shape
        .edges
        .iter()
        .enumerate()
        .map(|(index, &[a, b])| {
            let atom = edge_atom(shape.vertices[a], shape.vertices[b]);
            if !(atom.weight > tol) {
                return Err(Error::DegenerateEdge {
                    index,
                    length: atom.weight,
                });
            }
            Ok(atom)
        })
        .collect()
}

/// One atom per face: centroid, unit normal from the vertex order, area.
pub fn discretize_mesh(shape: &TriMesh) -> Result<Vec<Atom>> {
    let diag = bbox_diagonal(&shape.vertices);
    let tol = DEGENERACY_TOL * diag * diag;
    shape
        .faces
        .iter()
        .enumerate()
        .map(|(index, &[a, b, c])| {
            let atom = face_atom(shape.vertices[a], shape.vertices[b], shape.vertices[c]);
            if !(atom.weight > tol) {
                return Err(Error::DegenerateFace {
                    index,
                    area: atom.weight,
                });
            }
            Ok(atom)
        })
        .collect()
}

/// A validated geometry together with its atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteShape {
    geometry: Geometry,
    atoms: Vec<Atom>,
}

impl DiscreteShape {
    pub fn new(geometry: Geometry) -> Result<Self> {
        let atoms = match &geometry {
            Geometry::Curves(c) => discretize_curves(c)?,
            Geometry::Mesh(m) => discretize_mesh(m)?,
        };
        Ok(Self { geometry, atoms })
    }

    pub fn from_curves(curves: Polylines) -> Result<Self> {
        Self::new(Geometry::Curves(curves))
    }

    pub fn from_mesh(mesh: TriMesh) -> Result<Self> {
        Self::new(Geometry::Mesh(mesh))
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn vertices(&self) -> &[Vec3] {
        self.geometry.vertices()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        Self::new(self.geometry.with_vertices(vertices)?)
    }

    pub fn translated(&self, offset: &Vec3) -> Result<Self> {
        self.with_vertices(self.vertices().iter().map(|v| v + offset).collect())
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(self.vertices())
    }
}

/// Axis-aligned bounding box `(min, max)`; `None` for no points.
pub fn bbox(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    bbox(points).map_or(0.0, |(lo, hi)| (hi - lo).norm())
}

/// Mass-weighted mean of the atom positions.
pub fn barycenter(shape: &DiscreteShape) -> Result<Vec3> {
    if shape.is_empty() {
        return Err(Error::EmptyShape);
    }
    let mut sum = Vec3::zeros();
    let mut mass = 0.0;
    for a in shape.atoms() {
        sum += a.position * a.weight;
        mass += a.weight;
    }
    Ok(sum / mass)
}

/// Translates `source` so that its barycenter coincides with the target's.
pub fn align_barycenters(source: &DiscreteShape, target: &DiscreteShape) -> Result<DiscreteShape> {
    let offset = barycenter(target)? - barycenter(source)?;
    source.translated(&offset)
}

/// Maps every vertex through `x -> R x + t`.
pub fn apply_rigid(shape: &DiscreteShape, rotation: &Matrix3<f64>, translation: &Vec3) -> Result<DiscreteShape> {
    let defect = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
    let det = rotation.determinant();
    if defect > 1e-9 || (det - 1.0).abs() > 1e-9 {
        return Err(Error::NotARotation { defect, det });
    }
    shape.with_vertices(shape.vertices().iter().map(|v| rotation * v + translation).collect())
}
