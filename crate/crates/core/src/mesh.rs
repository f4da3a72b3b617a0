//! Structured triangulations of a rectangular channel with tagged walls.
//!
//! The channel is `(0, length) x (0, height)`. Each boundary edge carries a
//! [`BoundaryTag`]; vertices where a Dirichlet edge meets a Neumann edge are
//! recorded as corner points. Type changes are only allowed at right angles,
//! which for a rectangle means at its four vertices.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

type TagFn = dyn Fn(Side, [f64; 2]) -> BoundaryTag + Send + Sync;

/// Rule assigning a tag to every boundary edge.
#[derive(Clone, Default)]
pub enum GammaSpec {
    /// Dirichlet walls at y = 0 and y = height, Neumann ends at x = 0 and x = length.
    #[default]
    Channel,
    /// One tag per side of the rectangle.
    Sides {
        bottom: BoundaryTag,
        right: BoundaryTag,
        top: BoundaryTag,
        left: BoundaryTag,
    },
    /// Caller-supplied rule evaluated at each boundary edge midpoint.
    Custom(Arc<TagFn>),
}

impl std::fmt::Debug for GammaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GammaSpec::Channel => write!(f, "Channel"),
            GammaSpec::Sides {
                bottom,
                right,
                top,
                left,
            } => write!(f, "Sides({bottom:?}, {right:?}, {top:?}, {left:?})"),
            GammaSpec::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}


impl GammaSpec {
    pub fn all_dirichlet() -> Self {
        GammaSpec::Sides {
            bottom: BoundaryTag::Dirichlet,
            right: BoundaryTag::Dirichlet,
            top: BoundaryTag::Dirichlet,
            left: BoundaryTag::Dirichlet,
        }
    }

    fn tag(&self, side: Side, midpoint: [f64; 2]) -> BoundaryTag {
        match self {
            GammaSpec::Channel => match side {
                Side::Bottom | Side::Top => BoundaryTag::Dirichlet,
                Side::Left | Side::Right => BoundaryTag::Neumann,
            },
            GammaSpec::Sides {
                bottom,
                right,
                top,
                left,
            } => match side {
                Side::Bottom => *bottom,
                Side::Right => *right,
                Side::Top => *top,
                Side::Left => *left,
            },
            GammaSpec::Custom(f) => f(side, midpoint),
        }
    }
}

/// Geometry and resolution of a channel mesh.
#[derive(Debug, Clone)]
pub struct ChannelParams {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    /// Geometric grading ratio toward the rectangle ends (> 1 refines the ends).
    pub grading: Option<f64>,
    pub gamma: GammaSpec,
}

impl ChannelParams {
    pub fn new(length: f64, height: f64, nx: usize, ny: usize) -> Self {
        ChannelParams {
            length,
            height,
            nx,
            ny,
            grading: None,
            gamma: GammaSpec::Channel,
        }
    }

    pub fn with_gamma(mut self, gamma: GammaSpec) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_grading(mut self, ratio: f64) -> Self {
        self.grading = Some(ratio);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelMesh {
    pub length: f64,
    pub height: f64,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub corner_points: Vec<usize>,
    pub h: f64,
}

fn graded_coordinates(extent: f64, n: usize, grading: Option<f64>) -> Vec<f64> {
    let sizes: Vec<f64> = match grading {
        Some(ratio) if ratio != 1.0 => (0..n)
            .map(|i| ratio.powi(i.min(n - 1 - i) as i32))
            .collect(),
        _ => vec![1.0; n],
    };
    let total: f64 = sizes.iter().sum();
    let mut coords = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    coords.push(0.0);
    for s in &sizes[..n - 1] {
        acc += s;
        coords.push(extent * acc / total);
    }
    coords.push(extent);
    coords
}

/// Build a structured channel mesh. Each grid cell is split along a diagonal
/// whose direction alternates in a checkerboard pattern.
pub fn build_channel_mesh(params: &ChannelParams) -> Result<ChannelMesh> {
    let ChannelParams {
        length,
        height,
        nx,
        ny,
        grading,
        ref gamma,
    } = *params;
    if !(length > 0.0 && length.is_finite() && height > 0.0 && height.is_finite()) {
        return Err(Error::InvalidMesh(format!(
            "channel extents must be positive, got {length} x {height}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh(format!(
            "need at least one cell per direction, got nx={nx}, ny={ny}"
        )));
    }
    if let Some(r) = grading {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidMesh(format!("grading ratio must be positive, got {r}")));
        }
    }
    let xs = graded_coordinates(length, nx, grading);
    let ys = graded_coordinates(height, ny, grading);
    let vid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for &y in &ys {
        for &x in &xs {
            vertices.push([x, y]);
        }
    }
    // Pin the rectangle boundary to exact coordinates.
    for v in vertices.iter_mut() {
        for (c, ext) in [(0, length), (1, height)] {
            if (v[c] - ext).abs() < 1e-14 * ext {
                v[c] = ext;
            }
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    let mut push_edge = |a: usize, b: usize, side: Side, vertices: &Vec<[f64; 2]>| {
        let mid = [
            0.5 * (vertices[a][0] + vertices[b][0]),
            0.5 * (vertices[a][1] + vertices[b][1]),
        ];
        boundary_edges.push(BoundaryEdge {
            vertices: [a, b],
            tag: gamma.tag(side, mid),
        });
    };
    // Counter-clockwise traversal of the boundary.
    for i in 0..nx {
        push_edge(vid(i, 0), vid(i + 1, 0), Side::Bottom, &vertices);
    }
    for j in 0..ny {
        push_edge(vid(nx, j), vid(nx, j + 1), Side::Right, &vertices);
    }
    for i in (0..nx).rev() {
        push_edge(vid(i + 1, ny), vid(i, ny), Side::Top, &vertices);
    }
    for j in (0..ny).rev() {
        push_edge(vid(0, j + 1), vid(0, j), Side::Left, &vertices);
    }

    ChannelMesh::from_parts(length, height, vertices, triangles, boundary_edges)
}

impl ChannelMesh {
    /// Assemble a mesh from raw parts, detecting corner points and checking
    /// every invariant.
    pub fn from_parts(
        length: f64,
        height: f64,
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        let mut mesh = ChannelMesh {
            length,
            height,
            vertices,
            triangles,
            boundary_edges,
            corner_points: Vec::new(),
            h: 0.0,
        };
        mesh.h = mesh.max_edge_length();
        mesh.corner_points = mesh.detect_corners()?;
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for tri in &self.triangles {
            for k in 0..3 {
                let (p, q) = (self.vertices[tri[k]], self.vertices[tri[(k + 1) % 3]]);
                h = h.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        h
    }

    pub fn has_neumann(&self) -> bool {
        self.boundary_edges
            .iter()
            .any(|e| e.tag == BoundaryTag::Neumann)
    }

    pub fn edge_tag(&self, a: usize, b: usize) -> Option<BoundaryTag> {
        self.boundary_edges
            .iter()
            .find(|e| {
                (e.vertices[0] == a && e.vertices[1] == b) || (e.vertices[0] == b && e.vertices[1] == a)
            })
            .map(|e| e.tag)
    }

    fn detect_corners(&self) -> Result<Vec<usize>> {
        let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
        for (k, e) in self.boundary_edges.iter().enumerate() {
            for &v in &e.vertices {
                incident.entry(v).or_default().push(k);
            }
        }
        let mut corners = Vec::new();
        let mut keys: Vec<usize> = incident.keys().copied().collect();
        keys.sort_unstable();
        for v in keys {
            let edges = &incident[&v];
            if edges.len() != 2 {
                return Err(Error::InvalidMesh(format!(
                    "boundary vertex {v} has {} incident boundary edges",
                    edges.len()
                )));
            }
            let (e0, e1) = (&self.boundary_edges[edges[0]], &self.boundary_edges[edges[1]]);
            if e0.tag == e1.tag {
                continue;
            }
            let dir = |e: &BoundaryEdge| {
                let other = if e.vertices[0] == v { e.vertices[1] } else { e.vertices[0] };
                let (p, q) = (self.vertices[v], self.vertices[other]);
                let d = [q[0] - p[0], q[1] - p[1]];
                let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
                [d[0] / n, d[1] / n]
            };
            let (d0, d1) = (dir(e0), dir(e1));
            let cos = d0[0] * d1[0] + d0[1] * d1[1];
            if cos.abs() > 1e-12 {
                return Err(Error::Tagging(format!(
                    "boundary type changes at vertex {v} ({:?}) where the edges are not perpendicular",
                    self.vertices[v]
                )));
            }
            corners.push(v);
        }
        Ok(corners)
    }

    /// Check all structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            if self.triangle_area(t) <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} is degenerate or negatively oriented"
                )));
            }
        }
        // Topological boundary: edges used by exactly one triangle.
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut topo: Vec<(usize, usize)> = count
            .into_iter()
            .filter_map(|(e, c)| (c == 1).then_some(e))
            .collect();
        topo.sort_unstable();
        let mut tagged: Vec<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|e| (e.vertices[0].min(e.vertices[1]), e.vertices[0].max(e.vertices[1])))
            .collect();
        tagged.sort_unstable();
        let before = tagged.len();
        tagged.dedup();
        if tagged.len() != before {
            return Err(Error::InvalidMesh("a boundary edge is tagged more than once".into()));
        }
        if tagged != topo {
            return Err(Error::InvalidMesh(
                "tagged edges do not coincide with the topological boundary".into(),
            ));
        }
        if !self
            .boundary_edges
            .iter()
            .any(|e| e.tag == BoundaryTag::Dirichlet)
        {
            return Err(Error::Tagging("the Dirichlet part of the boundary is empty".into()));
        }
        Ok(())
    }

    /// Uniform red refinement: every triangle is split into four.
    pub fn refine(&self) -> Result<ChannelMesh> {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for e in &self.boundary_edges {
            let [a, b] = e.vertices;
            let m = mid(a, b, &mut vertices);
            boundary_edges.push(BoundaryEdge {
                vertices: [a, m],
                tag: e.tag,
            });
            boundary_edges.push(BoundaryEdge {
                vertices: [m, b],
                tag: e.tag,
            });
        }
        ChannelMesh::from_parts(self.length, self.height, vertices, triangles, boundary_edges)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ChannelMesh> {
        let raw: ChannelMesh = serde_json::from_str(text)?;
        let mesh = ChannelMesh::from_parts(
            raw.length,
            raw.height,
            raw.vertices,
            raw.triangles,
            raw.boundary_edges,
        )?;
        Ok(mesh)
    }

    /// Legacy-VTK unstructured grid with optional vertex data.
    pub fn write_vtk(&self, out: &mut impl Write, point_data: &[VtkPointData<'_>]) -> std::io::Result<()> {
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "mixed-ns channel mesh")?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(out, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} 0", v[0], v[1])?;
        }
        writeln!(out, "CELLS {} {}", self.triangles.len(), 4 * self.triangles.len())?;
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(out, "CELL_TYPES {}", self.triangles.len())?;
        for _ in &self.triangles {
            writeln!(out, "5")?;
        }
        if !point_data.is_empty() {
            writeln!(out, "POINT_DATA {}", self.vertices.len())?;
            for field in point_data {
                match field {
                    VtkPointData::Scalar { name, values } => {
                        writeln!(out, "SCALARS {name} double 1")?;
                        writeln!(out, "LOOKUP_TABLE default")?;
                        for v in values.iter() {
                            writeln!(out, "{v:.17e}")?;
                        }
                    }
                    VtkPointData::Vector { name, values } => {
                        writeln!(out, "VECTORS {name} double")?;
                        for v in values.iter() {
                            writeln!(out, "{:.17e} {:.17e} 0", v[0], v[1])?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Vertex-based data attached to a VTK export.
#[derive(Debug, Clone)]
pub enum VtkPointData<'a> {
    Scalar { name: &'a str, values: &'a [f64] },
    Vector { name: &'a str, values: &'a [[f64; 2]] },
}
