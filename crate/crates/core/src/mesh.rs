//! Matching simplicial meshes of polygonal domains.
//!
//! Faces are stored once globally. Local face `i` of a cell is the face
//! opposite to its local vertex `i`; the outward normal of that incidence is
//! kept per cell, so the two incidences of an interior face carry opposite
//! normals.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Interior faces are shared by two cells, boundary faces belong to one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceKind {
    Interior,
    Boundary,
}

#[derive(Clone, Debug)]
pub struct Face {
    /// Endpoints, sorted ascending. The face tangent points from the first to the second.
    pub vertices: [usize; 2],
    /// First adjacent cell and, for interior faces, the second one.
    pub cells: (usize, Option<usize>),
    pub kind: FaceKind,
    pub length: f64,
    pub barycenter: Point,
    pub tangent: Point,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.kind == FaceKind::Interior
    }

    /// The cells of the face patch `ω_F`.
    pub fn cell_list(&self) -> impl Iterator<Item = usize> {
        std::iter::once(self.cells.0).chain(self.cells.1)
    }
}

#[derive(Clone, Debug)]
pub struct CellGeometry {
    pub area: f64,
    pub barycenter: Point,
    /// Diameter `h_K` (longest edge).
    pub diameter: f64,
    /// Radius `r_K` of the inscribed circle.
    pub inradius: f64,
    /// Outward unit normal of local face `i`.
    pub normals: [Point; 3],
}

/// A matching triangulation together with its face structure and geometric data.
#[derive(Clone, Debug)]
pub struct SimplicialMesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    faces: Vec<Face>,
    cell_faces: Vec<[usize; 3]>,
    geometry: Vec<CellGeometry>,
    interior_index: Vec<Option<usize>>,
    interior_faces: Vec<usize>,
    vertex_cells: Vec<Vec<usize>>,
    boundary_vertex: Vec<bool>,
}

impl SimplicialMesh {
    /// Builds a mesh from vertex coordinates and triangles.
    ///
    /// Negatively oriented triangles are reoriented; degenerate triangles,
    /// faces shared by more than two cells and hanging vertices are rejected.
    pub fn new(vertices: Vec<Point>, mut cells: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        for (k, c) in cells.iter_mut().enumerate() {
            if c.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("cell {k} references a missing vertex")));
            }
            if c[0] == c[1] || c[1] == c[2] || c[0] == c[2] {
                return Err(Error::InvalidMesh(format!("cell {k} repeats a vertex")));
            }
            let a = cross(sub(vertices[c[1]], vertices[c[0]]), sub(vertices[c[2]], vertices[c[0]]));
            let scale = norm(sub(vertices[c[1]], vertices[c[0]])).max(norm(sub(vertices[c[2]], vertices[c[0]])));
            if a.abs() <= 1e-14 * scale * scale {
                return Err(Error::InvalidMesh(format!("cell {k} has zero area")));
            }
            if a < 0.0 {
                c.swap(1, 2);
            }
        }

        let mut faces: Vec<Face> = Vec::new();
        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
        let mut cell_faces = vec![[0usize; 3]; cells.len()];
        for (k, c) in cells.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (c[(i + 1) % 3], c[(i + 2) % 3]);
                let key = if a < b { [a, b] } else { [b, a] };
                let f = match lookup.get(&key) {
                    Some(&f) => {
                        let face = &mut faces[f];
                        if face.cells.1.is_some() {
                            return Err(Error::NonMatching(format!(
                                "edge ({}, {}) is shared by more than two cells",
                                key[0], key[1]
                            )));
                        }
                        face.cells.1 = Some(k);
                        face.kind = FaceKind::Interior;
                        f
                    }
                    None => {
                        let (p, q) = (vertices[key[0]], vertices[key[1]]);
                        let length = norm(sub(q, p));
                        faces.push(Face {
                            vertices: key,
                            cells: (k, None),
                            kind: FaceKind::Boundary,
                            length,
                            barycenter: [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])],
                            tangent: [(q[0] - p[0]) / length, (q[1] - p[1]) / length],
                        });
                        lookup.insert(key, faces.len() - 1);
                        faces.len() - 1
                    }
                };
                cell_faces[k][i] = f;
            }
        }

        let geometry = cells
            .iter()
            .map(|c| {
                let p = [vertices[c[0]], vertices[c[1]], vertices[c[2]]];
                let area = 0.5 * cross(sub(p[1], p[0]), sub(p[2], p[0]));
                let edge = |i: usize| norm(sub(p[(i + 2) % 3], p[(i + 1) % 3]));
                let lengths = [edge(0), edge(1), edge(2)];
                let perimeter: f64 = lengths.iter().sum();
                let normals = std::array::from_fn(|i| {
                    let t = sub(p[(i + 2) % 3], p[(i + 1) % 3]);
                    let l = norm(t);
                    // counter-clockwise cells: outward normal is the tangent rotated clockwise
                    [t[1] / l, -t[0] / l]
                });
                CellGeometry {
                    area,
                    barycenter: [
                        (p[0][0] + p[1][0] + p[2][0]) / 3.0,
                        (p[0][1] + p[1][1] + p[2][1]) / 3.0,
                    ],
                    diameter: lengths.iter().cloned().fold(0.0, f64::max),
                    inradius: 2.0 * area / perimeter,
                    normals,
                }
            })
            .collect();

        let mut interior_index = vec![None; faces.len()];
        let mut interior_faces = Vec::new();
        for (f, face) in faces.iter().enumerate() {
            if face.is_interior() {
                interior_index[f] = Some(interior_faces.len());
                interior_faces.push(f);
            }
        }

        let mut vertex_cells = vec![Vec::new(); nv];
        for (k, c) in cells.iter().enumerate() {
            for &v in c {
                vertex_cells[v].push(k);
            }
        }
        let mut boundary_vertex = vec![false; nv];
        for face in faces.iter().filter(|f| !f.is_interior()) {
            boundary_vertex[face.vertices[0]] = true;
            boundary_vertex[face.vertices[1]] = true;
        }

        let mesh = SimplicialMesh {
            dim: 2,
            vertices,
            cells,
            faces,
            cell_faces,
            geometry,
            interior_index,
            interior_faces,
            vertex_cells,
            boundary_vertex,
        };
        mesh.check_hanging_vertices()?;
        Ok(mesh)
    }

    /// A hanging vertex lies in the relative interior of a boundary-classified edge.
    fn check_hanging_vertices(&self) -> Result<()> {
        let bverts: Vec<usize> = (0..self.vertices.len()).filter(|&v| self.boundary_vertex[v]).collect();
        for face in self.faces.iter().filter(|f| !f.is_interior()) {
            let a = self.vertices[face.vertices[0]];
            let t = face.tangent;
            for &v in &bverts {
                if v == face.vertices[0] || v == face.vertices[1] {
                    continue;
                }
                let d = sub(self.vertices[v], a);
                let s = dot(d, t);
                let off = cross(t, d).abs();
                if off <= 1e-12 * face.length && s > 1e-12 * face.length && s < face.length * (1.0 - 1e-12) {
                    return Err(Error::NonMatching(format!(
                        "vertex {v} hangs on edge ({}, {})",
                        face.vertices[0], face.vertices[1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Uniform `n × n` grid of the unit square, each square split along the
    /// diagonal from its lower-left to its upper-right corner.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMesh("unit_square needs n >= 1".into()));
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut cells = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                cells.push([a, b, c]);
                cells.push([a, c, d]);
            }
        }
        Self::new(vertices, cells)
    }

    /// Red refinement: every triangle is split into four similar children
    /// through its edge midpoints.
    pub fn refine_red(&self) -> Result<Self> {
        if self.dim != 2 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        let mut vertices = self.vertices.clone();
        let mid: Vec<usize> = self
            .faces
            .iter()
            .map(|f| {
                vertices.push(f.barycenter);
                vertices.len() - 1
            })
            .collect();
        let mut cells = Vec::with_capacity(4 * self.cells.len());
        for (k, c) in self.cells.iter().enumerate() {
            let m = self.cell_faces[k].map(|f| mid[f]);
            cells.push([c[0], m[2], m[1]]);
            cells.push([m[2], c[1], m[0]]);
            cells.push([m[1], m[0], c[2]]);
            cells.push([m[0], m[1], m[2]]);
        }
        Self::new(vertices, cells)
    }

    /// Reads the plain-text mesh format: a header `n_vertices n_cells`, then one
    /// `x y` line per vertex, then one `i j k` line per cell (0-based).
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or(Error::Parse { line: 0, message: "empty mesh file".into() })?;
        let counts: Vec<usize> = parse_fields(hl, header)?;
        if counts.len() != 2 {
            return Err(Error::Parse { line: hl, message: "header must be `n_vertices n_cells`".into() });
        }
        let mut vertices = Vec::with_capacity(counts[0]);
        for _ in 0..counts[0] {
            let (ln, l) = lines.next().ok_or(Error::Parse { line: hl, message: "missing vertex lines".into() })?;
            let xs: Vec<f64> = parse_fields(ln, l)?;
            match xs.len() {
                2 => vertices.push([xs[0], xs[1]]),
                3 => return Err(Error::UnsupportedDimension(3)),
                _ => return Err(Error::Parse { line: ln, message: "expected two coordinates".into() }),
            }
        }
        let mut cells = Vec::with_capacity(counts[1]);
        for _ in 0..counts[1] {
            let (ln, l) = lines.next().ok_or(Error::Parse { line: hl, message: "missing cell lines".into() })?;
            let ids: Vec<usize> = parse_fields(ln, l)?;
            match ids.len() {
                3 => cells.push([ids[0], ids[1], ids[2]]),
                4 => return Err(Error::UnsupportedDimension(3)),
                _ => return Err(Error::Parse { line: ln, message: "expected three vertex indices".into() }),
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::Parse { line: ln, message: "trailing data after the last cell".into() });
        }
        Self::new(vertices, cells)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.vertices.len(), self.cells.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        for c in &self.cells {
            let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_interior_faces(&self) -> usize {
        self.interior_faces.len()
    }

    /// Global indices of the interior faces, in increasing order.
    pub fn interior_faces(&self) -> &[usize] {
        &self.interior_faces
    }

    /// Position of face `f` among the interior faces.
    pub fn interior_index(&self, f: usize) -> Option<usize> {
        self.interior_index[f]
    }

    pub fn cell_faces(&self, k: usize) -> [usize; 3] {
        self.cell_faces[k]
    }

    pub fn cell_vertices(&self, k: usize) -> [Point; 3] {
        self.cells[k].map(|v| self.vertices[v])
    }

    pub fn geometry(&self, k: usize) -> &CellGeometry {
        &self.geometry[k]
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    /// Cells containing vertex `v`.
    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    /// Cells sharing at least one vertex with cell `k` (including `k`), sorted.
    pub fn vertex_patch(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.cells[k].iter().flat_map(|&v| self.vertex_cells[v].iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Local index (0..3) of global vertex `v` in cell `k`.
    pub fn local_vertex(&self, k: usize, v: usize) -> Option<usize> {
        self.cells[k].iter().position(|&w| w == v)
    }

    /// Barycentric coordinates of `x` with respect to cell `k`.
    pub fn barycentric(&self, k: usize, x: Point) -> [f64; 3] {
        let p = self.cell_vertices(k);
        let det = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let d = sub(x, p[0]);
        let l1 = cross(d, sub(p[2], p[0])) / det;
        let l2 = cross(sub(p[1], p[0]), d) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Maps barycentric coordinates on cell `k` to a physical point.
    pub fn map_to_cell(&self, k: usize, lambda: &[f64]) -> Point {
        let p = self.cell_vertices(k);
        [
            lambda[0] * p[0][0] + lambda[1] * p[1][0] + lambda[2] * p[2][0],
            lambda[0] * p[0][1] + lambda[1] * p[1][1] + lambda[2] * p[2][1],
        ]
    }

    /// Maps barycentric coordinates on face `f` (with respect to its sorted endpoints).
    pub fn map_to_face(&self, f: usize, lambda: &[f64]) -> Point {
        let [a, b] = self.faces[f].vertices.map(|v| self.vertices[v]);
        [lambda[0] * a[0] + lambda[1] * b[0], lambda[0] * a[1] + lambda[1] * b[1]]
    }

    /// Largest `γ` with `γ r_K ≤ h_K` for all cells.
    pub fn shape_parameter(&self) -> Result<f64> {
        let mut gamma = f64::INFINITY;
        for (k, g) in self.geometry.iter().enumerate() {
            if g.inradius <= 0.0 {
                return Err(Error::InvalidMesh(format!("cell {k} is degenerate")));
            }
            gamma = gamma.min(g.diameter / g.inradius);
        }
        Ok(gamma)
    }

    /// Mesh size `h = max_K h_K`.
    pub fn h_max(&self) -> f64 {
        self.geometry.iter().map(|g| g.diameter).fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }
}

fn parse_fields<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| Error::Parse { line, message: format!("cannot parse `{t}`") }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_counts() {
        let m = SimplicialMesh::unit_square(1).unwrap();
        assert_eq!((m.n_cells(), m.n_faces(), m.n_interior_faces()), (2, 5, 1));
        // Euler: E = (3T + B) / 2 with T = 8, B = 8
        let m = SimplicialMesh::unit_square(2).unwrap();
        assert_eq!((m.n_cells(), m.n_faces(), m.n_interior_faces()), (8, 16, 8));
        assert!((m.h_max() - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn shape_parameter_closed_forms() {
        let s3 = 3f64.sqrt();
        let eq = SimplicialMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.5, s3 / 2.0]], vec![[0, 1, 2]]).unwrap();
        assert!((eq.shape_parameter().unwrap() - 2.0 * s3).abs() < 1e-12);

        let right = SimplicialMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let r = (2.0 - 2f64.sqrt()) / 2.0;
        assert!((right.shape_parameter().unwrap() - 2f64.sqrt() / r).abs() < 1e-12);
        assert!((right.shape_parameter().unwrap() - 4.828_427_124_746_19).abs() < 1e-12);

        let g1 = SimplicialMesh::unit_square(1).unwrap().shape_parameter().unwrap();
        let g4 = SimplicialMesh::unit_square(4).unwrap().shape_parameter().unwrap();
        assert!((g1 - g4).abs() < 1e-12);
    }

    #[test]
    fn invariants_hold() {
        let m = SimplicialMesh::unit_square(3).unwrap().refine_red().unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        for k in 0..m.n_cells() {
            let g = m.geometry(k);
            assert!(g.area > 0.0 && g.inradius > 0.0 && g.inradius <= g.diameter);
            let mut s = [0.0, 0.0];
            for (i, &f) in m.cell_faces(k).iter().enumerate() {
                assert!(m.face(f).length <= g.diameter + 1e-15);
                s[0] += m.face(f).length * g.normals[i][0];
                s[1] += m.face(f).length * g.normals[i][1];
            }
            assert!(norm(s) < 1e-12);
        }
        for (f, face) in m.faces().iter().enumerate() {
            if let (k1, Some(k2)) = face.cells {
                let i1 = m.cell_faces(k1).iter().position(|&g| g == f).unwrap();
                let i2 = m.cell_faces(k2).iter().position(|&g| g == f).unwrap();
                let (n1, n2) = (m.geometry(k1).normals[i1], m.geometry(k2).normals[i2]);
                assert!((n1[0] + n2[0]).abs() < 1e-14 && (n1[1] + n2[1]).abs() < 1e-14);
                let mut a: Vec<usize> = m.cells()[k1].iter().copied().filter(|v| face.vertices.contains(v)).collect();
                let mut b: Vec<usize> = m.cells()[k2].iter().copied().filter(|v| face.vertices.contains(v)).collect();
                a.sort();
                b.sort();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn red_refinement() {
        let m = SimplicialMesh::unit_square(1).unwrap();
        let r = m.refine_red().unwrap();
        assert_eq!(r.n_cells(), 8);
        assert_eq!(r.h_max(), m.h_max() / 2.0);
        assert!((r.shape_parameter().unwrap() - m.shape_parameter().unwrap()).abs() < 1e-12);
        // a distorted triangle keeps its shape parameter too
        let t = SimplicialMesh::new(vec![[0.0, 0.0], [1.0, 0.1], [0.3, 0.7]], vec![[0, 1, 2]]).unwrap();
        let tr = t.refine_red().unwrap().refine_red().unwrap();
        assert_eq!(tr.n_cells(), 16);
        assert!((tr.shape_parameter().unwrap() - t.shape_parameter().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn text_round_trip_and_rejections() {
        let m = SimplicialMesh::unit_square(2).unwrap();
        let back = SimplicialMesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.cells(), m.cells());
        assert_eq!(back.vertices(), m.vertices());

        // hanging vertex: one big triangle next to two small ones
        let hanging = "5 3\n0 0\n1 0\n1 1\n0 1\n0.5 0.5\n0 1 3\n1 2 4\n4 2 3\n";
        assert!(matches!(SimplicialMesh::from_text(hanging), Err(Error::NonMatching(_))));
        // three triangles on one edge
        let fan = "5 3\n0 0\n1 0\n0.5 1\n0.5 -1\n0.5 0.5\n0 1 2\n0 3 1\n0 1 4\n";
        assert!(matches!(SimplicialMesh::from_text(fan), Err(Error::NonMatching(_))));
        let degenerate = "3 1\n0 0\n1 0\n2 0\n0 1 2\n";
        assert!(matches!(SimplicialMesh::from_text(degenerate), Err(Error::InvalidMesh(_))));
        assert!(matches!(SimplicialMesh::from_text("3 1\n0 0 0\n"), Err(Error::UnsupportedDimension(3))));
        assert!(matches!(SimplicialMesh::from_text("2 1\n0 x\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn barycentric_round_trip() {
        let m = SimplicialMesh::unit_square(2).unwrap();
        let x = m.map_to_cell(3, &[0.2, 0.3, 0.5]);
        let l = m.barycentric(3, x);
        assert!((l[0] - 0.2).abs() < 1e-14 && (l[1] - 0.3).abs() < 1e-14 && (l[2] - 0.5).abs() < 1e-14);
    }
}
