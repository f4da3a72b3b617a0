//! Taylor-Hood (P2 velocity / P1 pressure) assembly on a [`ChannelMesh`].
//!
//! Velocity degrees of freedom are blocked by component: dof `c * n_nodes + node`
//! for component `c` in {0, 1}. Nodes are the mesh vertices followed by the edge
//! midpoints. Pressure lives on the vertices.
//!
//! Dirichlet conditions are imposed on Γ_D only, by eliminating the pinned rows
//! and columns; Γ_N dofs stay free so the do-nothing condition holds weakly.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, ChannelMesh};
use crate::quadrature::TriangleRule;
use crate::sparse::{self, SparseLu, SparseMatrix, TripletBuilder};

/// P2 basis values on the reference triangle at (xi, eta).
fn p2_values(xi: f64, eta: f64) -> [f64; 6] {
    let l = [1.0 - xi - eta, xi, eta];
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

/// P2 basis gradients with respect to (xi, eta).
fn p2_ref_gradients(xi: f64, eta: f64) -> [[f64; 2]; 6] {
    let l = [1.0 - xi - eta, xi, eta];
    let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        for d in 0..2 {
            g[i][d] = (4.0 * l[i] - 1.0) * dl[i][d];
        }
    }
    let pairs = [(1, 2), (2, 0), (0, 1)];
    for (e, &(a, b)) in pairs.iter().enumerate() {
        for d in 0..2 {
            g[3 + e][d] = 4.0 * (l[a] * dl[b][d] + l[b] * dl[a][d]);
        }
    }
    g
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    origin: [f64; 2],
    jac: [[f64; 2]; 2],
    inv_t: [[f64; 2]; 2],
    det: f64,
}

impl Affine {
    fn new(p: [[f64; 2]; 3]) -> Self {
        let jac = [
            [p[1][0] - p[0][0], p[2][0] - p[0][0]],
            [p[1][1] - p[0][1], p[2][1] - p[0][1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        // inverse transpose of the Jacobian
        let inv_t = [
            [jac[1][1] / det, -jac[1][0] / det],
            [-jac[0][1] / det, jac[0][0] / det],
        ];
        Affine {
            origin: p[0],
            jac,
            inv_t,
            det,
        }
    }

    fn map(&self, xi: f64, eta: f64) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * xi + self.jac[0][1] * eta,
            self.origin[1] + self.jac[1][0] * xi + self.jac[1][1] * eta,
        ]
    }

    fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1],
            self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1],
        ]
    }

    /// Reference coordinates of a physical point.
    fn pull_back(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        let (a, b, c, e) = (self.jac[0][0], self.jac[0][1], self.jac[1][0], self.jac[1][1]);
        [(e * d[0] - b * d[1]) / self.det, (-c * d[0] + a * d[1]) / self.det]
    }
}

/// Basis values and physical gradients at every quadrature point of every element.
#[derive(Debug, Clone)]
pub struct QuadCache {
    /// Number of quadrature points per element.
    pub points_per_element: usize,
    /// `weights[e * q + k]` already includes |det J|.
    pub weights: Vec<f64>,
    pub coords: Vec<[f64; 2]>,
    pub values: Vec<[f64; 6]>,
    pub gradients: Vec<[[f64; 2]; 6]>,
}

/// Discrete velocity/pressure spaces and their assembled operators.
#[derive(Debug)]
pub struct DiscreteSpaces {
    pub mesh: Arc<ChannelMesh>,
    /// Global P2 node ids of each element: three vertices then edges (1-2), (2-0), (0-1).
    pub elements: Vec<[usize; 6]>,
    pub node_coords: Vec<[f64; 2]>,
    pub n_nodes: usize,
    pub ndof_v: usize,
    pub ndof_p: usize,
    /// Velocity mass matrix over all dofs.
    pub mass: SparseMatrix,
    /// Velocity stiffness (gradient-gradient) matrix over all dofs.
    pub stiffness: SparseMatrix,
    /// Divergence constraint `B[q, v] = -∫ ψ_q div φ_v`, pressure rows by velocity columns.
    pub divergence: SparseMatrix,
    pub pressure_mass: SparseMatrix,
    /// Scalar P2 mass and stiffness (one velocity component).
    pub scalar_mass: SparseMatrix,
    pub scalar_stiffness: SparseMatrix,
    pub dirichlet_dofs: Vec<usize>,
    pub free_dofs: Vec<usize>,
    /// Scalar nodes not pinned by Γ_D.
    pub free_nodes: Vec<usize>,
    /// Operators restricted to the free velocity dofs.
    pub mass_free: SparseMatrix,
    pub stiffness_free: SparseMatrix,
    pub divergence_free: SparseMatrix,
    pub quad: QuadCache,
    affines: Vec<Affine>,
    locator: Locator,
}

/// Uniform bucket grid over the bounding box; each bucket lists the triangles
/// whose bounding boxes overlap it.
#[derive(Debug, Clone)]
struct Locator {
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(mesh: &ChannelMesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &mesh.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let n = (mesh.n_triangles() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = [n, n];
        let cell = [
            ((hi[0] - lo[0]) / n as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / n as f64).max(f64::MIN_POSITIVE),
        ];
        let mut loc = Locator {
            origin: lo,
            cell,
            dims,
            buckets: vec![Vec::new(); n * n],
        };
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let (mut a, mut b) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in tri {
                for d in 0..2 {
                    a[d] = a[d].min(mesh.vertices[v][d]);
                    b[d] = b[d].max(mesh.vertices[v][d]);
                }
            }
            let (i0, j0) = loc.cell_of(a);
            let (i1, j1) = loc.cell_of(b);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    loc.buckets[j * n + i].push(t);
                }
            }
        }
        loc
    }

    fn cell_of(&self, x: [f64; 2]) -> (usize, usize) {
        let f = |d: usize| {
            let k = ((x[d] - self.origin[d]) / self.cell[d]).floor();
            (k.max(0.0) as usize).min(self.dims[d] - 1)
        };
        (f(0), f(1))
    }
}

/// Assemble the Taylor-Hood spaces on `mesh`.
pub fn assemble(mesh: Arc<ChannelMesh>) -> Result<DiscreteSpaces> {
    mesh.validate()?;
    let nv = mesh.n_vertices();

    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut node_coords: Vec<[f64; 2]> = mesh.vertices.clone();
    let mut elements = Vec::with_capacity(mesh.n_triangles());
    for tri in &mesh.triangles {
        let mut nodes = [tri[0], tri[1], tri[2], 0, 0, 0];
        for (e, (a, b)) in [(tri[1], tri[2]), (tri[2], tri[0]), (tri[0], tri[1])]
            .into_iter()
            .enumerate()
        {
            let key = (a.min(b), a.max(b));
            let id = *edge_ids.entry(key).or_insert_with(|| {
                let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
                node_coords.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                node_coords.len() - 1
            });
            nodes[3 + e] = id;
        }
        elements.push(nodes);
    }
    let n_nodes = node_coords.len();
    let ndof_v = 2 * n_nodes;
    let ndof_p = nv;

    let mut pinned_node = vec![false; n_nodes];
    for e in &mesh.boundary_edges {
        let [a, b] = e.vertices;
        let mid = *edge_ids
            .get(&(a.min(b), a.max(b)))
            .ok_or_else(|| Error::InvalidMesh(format!("boundary edge ({a}, {b}) is not a mesh edge")))?;
        if e.tag == BoundaryTag::Dirichlet {
            pinned_node[a] = true;
            pinned_node[b] = true;
            pinned_node[mid] = true;
        }
    }
    let free_nodes: Vec<usize> = (0..n_nodes).filter(|&n| !pinned_node[n]).collect();
    let mut dirichlet_dofs = Vec::new();
    let mut free_dofs = Vec::new();
    for c in 0..2 {
        for n in 0..n_nodes {
            if pinned_node[n] {
                dirichlet_dofs.push(c * n_nodes + n);
            } else {
                free_dofs.push(c * n_nodes + n);
            }
        }
    }

    let rule = TriangleRule::degree5();
    let nq = rule.len();
    let ref_vals: Vec<[f64; 6]> = rule.points.iter().map(|p| p2_values(p[0], p[1])).collect();
    let ref_grads: Vec<[[f64; 2]; 6]> = rule.points.iter().map(|p| p2_ref_gradients(p[0], p[1])).collect();

    let mut affines = Vec::with_capacity(elements.len());
    let mut quad = QuadCache {
        points_per_element: nq,
        weights: Vec::with_capacity(elements.len() * nq),
        coords: Vec::with_capacity(elements.len() * nq),
        values: Vec::with_capacity(elements.len() * nq),
        gradients: Vec::with_capacity(elements.len() * nq),
    };

    let mut smass = TripletBuilder::new(n_nodes, n_nodes);
    let mut sstiff = TripletBuilder::new(n_nodes, n_nodes);
    let mut div = TripletBuilder::new(ndof_p, ndof_v);
    let mut pmass = TripletBuilder::new(ndof_p, ndof_p);

    for (t, nodes) in elements.iter().enumerate() {
        let tri = mesh.triangles[t];
        let aff = Affine::new([mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]]);
        affines.push(aff);
        let mut me = [[0.0; 6]; 6];
        let mut ke = [[0.0; 6]; 6];
        let mut be = [[[0.0; 6]; 2]; 3];
        let mut pe = [[0.0; 3]; 3];
        for q in 0..nq {
            let w = rule.weights[q] * aff.det.abs();
            let [xi, eta] = rule.points[q];
            let vals = ref_vals[q];
            let mut grads = [[0.0; 2]; 6];
            for i in 0..6 {
                grads[i] = aff.grad(ref_grads[q][i]);
            }
            let lin = [1.0 - xi - eta, xi, eta];
            for i in 0..6 {
                for j in 0..6 {
                    me[i][j] += w * vals[i] * vals[j];
                    ke[i][j] += w * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
            for a in 0..3 {
                for c in 0..2 {
                    for j in 0..6 {
                        be[a][c][j] -= w * lin[a] * grads[j][c];
                    }
                }
                for b in 0..3 {
                    pe[a][b] += w * lin[a] * lin[b];
                }
            }
            quad.weights.push(w);
            quad.coords.push(aff.map(xi, eta));
            quad.values.push(vals);
            quad.gradients.push(grads);
        }
        for i in 0..6 {
            for j in 0..6 {
                smass.push(nodes[i], nodes[j], me[i][j]);
                sstiff.push(nodes[i], nodes[j], ke[i][j]);
            }
        }
        for a in 0..3 {
            for c in 0..2 {
                for j in 0..6 {
                    div.push(tri[a], c * n_nodes + nodes[j], be[a][c][j]);
                }
            }
            for b in 0..3 {
                pmass.push(tri[a], tri[b], pe[a][b]);
            }
        }
    }

    let locator = Locator::new(&mesh);
    let scalar_mass = smass.build();
    let scalar_stiffness = sstiff.build();
    let mass = block_diagonal(&scalar_mass);
    let stiffness = block_diagonal(&scalar_stiffness);
    let divergence = div.build();
    let pressure_mass = pmass.build();
    let all_p: Vec<usize> = (0..ndof_p).collect();

    Ok(DiscreteSpaces {
        mass_free: sparse::submatrix(&mass, &free_dofs, &free_dofs),
        stiffness_free: sparse::submatrix(&stiffness, &free_dofs, &free_dofs),
        divergence_free: sparse::submatrix(&divergence, &all_p, &free_dofs),
        mesh,
        elements,
        node_coords,
        n_nodes,
        ndof_v,
        ndof_p,
        mass,
        stiffness,
        divergence,
        pressure_mass,
        scalar_mass,
        scalar_stiffness,
        dirichlet_dofs,
        free_dofs,
        free_nodes,
        quad,
        affines,
        locator,
    })
}

fn block_diagonal(a: &SparseMatrix) -> SparseMatrix {
    let n = a.nrows();
    let mut b = TripletBuilder::new(2 * n, 2 * n);
    for (i, j, v) in sparse::entries(a) {
        b.push(i, j, v);
        b.push(n + i, n + j, v);
    }
    b.build()
}

impl DiscreteSpaces {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.ndof_v {
            return Err(Error::DimensionMismatch {
                expected: self.ndof_v,
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Whether the pressure is only determined up to a constant (no Neumann part).
    pub fn pressure_has_constant_mode(&self) -> bool {
        !self.mesh.has_neumann()
    }

    /// Dimension of the discretely divergence-free, Γ_D-constrained velocity space.
    pub fn divergence_free_dimension(&self) -> usize {
        let rank = if self.pressure_has_constant_mode() {
            self.ndof_p - 1
        } else {
            self.ndof_p
        };
        self.n_free().saturating_sub(rank)
    }

    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| u[d]).collect()
    }

    pub fn extend(&self, u_free: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.ndof_v];
        for (k, &d) in self.free_dofs.iter().enumerate() {
            u[d] = u_free[k];
        }
        u
    }

    /// Zero the Γ_D dofs in place.
    pub fn apply_dirichlet(&self, u: &mut [f64]) {
        for &d in &self.dirichlet_dofs {
            u[d] = 0.0;
        }
    }

    /// Nodal interpolation of a vector field into the velocity space (no constraints applied).
    pub fn interpolate_velocity(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut u = vec![0.0; self.ndof_v];
        for (n, &x) in self.node_coords.iter().enumerate() {
            let v = f(x);
            u[n] = v[0];
            u[self.n_nodes + n] = v[1];
        }
        u
    }

    pub fn interpolate_pressure(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.mesh.vertices.iter().map(|&x| f(x)).collect()
    }

    fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 2])> {
        let tol = 1e-12;
        let (i, j) = self.locator.cell_of(x);
        self.locator.buckets[j * self.locator.dims[0] + i]
            .iter()
            .find_map(|&t| {
                let r = self.affines[t].pull_back(x);
                (r[0] >= -tol && r[1] >= -tol && r[0] + r[1] <= 1.0 + tol).then_some((t, r))
            })
    }

    /// Velocity value at a physical point; `None` outside the mesh.
    pub fn evaluate_velocity(&self, u: &[f64], x: [f64; 2]) -> Option<[f64; 2]> {
        let (t, r) = self.locate(x)?;
        let vals = p2_values(r[0], r[1]);
        let nodes = self.elements[t];
        let mut out = [0.0; 2];
        for i in 0..6 {
            out[0] += vals[i] * u[nodes[i]];
            out[1] += vals[i] * u[self.n_nodes + nodes[i]];
        }
        Some(out)
    }

    pub fn evaluate_pressure(&self, p: &[f64], x: [f64; 2]) -> Option<f64> {
        let (t, r) = self.locate(x)?;
        let tri = self.mesh.triangles[t];
        let lin = [1.0 - r[0] - r[1], r[0], r[1]];
        Some((0..3).map(|a| lin[a] * p[tri[a]]).sum())
    }

    /// Nodal interpolation of `u` into the velocity space of `target`, which must
    /// cover the same domain. Exact when `target` is a refinement of `self`.
    pub fn transfer_velocity(&self, u: &[f64], target: &DiscreteSpaces) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let mut out = vec![0.0; target.ndof_v];
        for (n, &x) in target.node_coords.iter().enumerate() {
            let v = self
                .evaluate_velocity(u, x)
                .ok_or_else(|| Error::InvalidMesh(format!("node ({}, {}) outside source mesh", x[0], x[1])))?;
            out[n] = v[0];
            out[target.n_nodes + n] = v[1];
        }
        Ok(out)
    }

    /// Values and gradients of a velocity field at every quadrature point.
    /// Gradient layout: `grad[i][j] = ∂u_i/∂x_j`.
    pub fn field_at_quadrature(&self, u: &[f64]) -> (Vec<[f64; 2]>, Vec<[[f64; 2]; 2]>) {
        let nq = self.quad.points_per_element;
        let total = self.elements.len() * nq;
        let mut vals = Vec::with_capacity(total);
        let mut grads = Vec::with_capacity(total);
        for (t, nodes) in self.elements.iter().enumerate() {
            for q in 0..nq {
                let k = t * nq + q;
                let (bv, bg) = (&self.quad.values[k], &self.quad.gradients[k]);
                let mut v = [0.0; 2];
                let mut g = [[0.0; 2]; 2];
                for i in 0..6 {
                    for c in 0..2 {
                        let coef = u[c * self.n_nodes + nodes[i]];
                        v[c] += coef * bv[i];
                        g[c][0] += coef * bg[i][0];
                        g[c][1] += coef * bg[i][1];
                    }
                }
                vals.push(v);
                grads.push(g);
            }
        }
        (vals, grads)
    }

    /// The convection form `b(θ, ψ, φ) = ∫ θ_j ∂ψ_i/∂x_j φ_i`.
    pub fn trilinear_b(&self, theta: &[f64], psi: &[f64], phi: &[f64]) -> Result<f64> {
        self.check_len(theta)?;
        self.check_len(psi)?;
        self.check_len(phi)?;
        let (tv, _) = self.field_at_quadrature(theta);
        let (_, pg) = self.field_at_quadrature(psi);
        let (fv, _) = self.field_at_quadrature(phi);
        Ok(self
            .quad
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let mut s = 0.0;
                for i in 0..2 {
                    let adv = tv[k][0] * pg[k][i][0] + tv[k][1] * pg[k][i][1];
                    s += adv * fv[k][i];
                }
                w * s
            })
            .sum())
    }

    /// Write M, K and B in coordinate format under `dir`.
    pub fn export_matrices(&self, dir: &std::path::Path) -> Result<()> {
        for (name, m) in [
            ("mass.mtx", &self.mass),
            ("stiffness.mtx", &self.stiffness),
            ("divergence.mtx", &self.divergence),
        ] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = std::io::BufWriter::new(file);
            sparse::write_coordinate(m, &mut out)
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// `(u, v)` in L², using the velocity mass matrix.
pub fn inner_l2(spaces: &DiscreteSpaces, u: &[f64], v: &[f64]) -> Result<f64> {
    spaces.check_len(u)?;
    spaces.check_len(v)?;
    Ok(sparse::bilinear(&spaces.mass, u, v))
}

/// `((u, v)) = ∫ ∇u : ∇v`, using the velocity stiffness matrix.
pub fn inner_v(spaces: &DiscreteSpaces, u: &[f64], v: &[f64]) -> Result<f64> {
    spaces.check_len(u)?;
    spaces.check_len(v)?;
    Ok(sparse::bilinear(&spaces.stiffness, u, v))
}

/// Discrete inf-sup constant `β = min_q sup_v (Bv, q) / (|v|_1 ‖q‖_0)` on the free dofs,
/// computed densely from the pressure Schur complement. Intended for small meshes.
pub fn inf_sup_constant(spaces: &DiscreteSpaces) -> Result<f64> {
    let np = spaces.ndof_p;
    let lu = SparseLu::new(&spaces.stiffness_free)?;
    let bt_cols: Vec<Vec<f64>> = (0..np)
        .map(|q| {
            let mut e = vec![0.0; np];
            e[q] = 1.0;
            sparse::matvec_transpose(&spaces.divergence_free, &e)
        })
        .collect();
    let mut schur = Mat::<f64>::zeros(np, np);
    for (q, col) in bt_cols.iter().enumerate() {
        let x = lu.solve(col);
        let bx = sparse::matvec(&spaces.divergence_free, &x);
        for (p, v) in bx.into_iter().enumerate() {
            schur[(p, q)] = v;
        }
    }
    let mut mp = Mat::<f64>::zeros(np, np);
    for (i, j, v) in sparse::entries(&spaces.pressure_mass) {
        mp[(i, j)] = v;
    }
    let llt = mp
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("pressure mass: {e:?}")))?;
    let l = llt.L().to_owned();
    // C = L⁻¹ S L⁻ᵀ
    let linv = l.partial_piv_lu().solve(Mat::<f64>::identity(np, np));
    let c = &linv * &schur * linv.transpose();
    let sym = Mat::<f64>::from_fn(np, np, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let eig = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::EigenNonConvergence(format!("{e:?}")))?;
    let idx = usize::from(spaces.pressure_has_constant_mode());
    Ok(eig[idx].max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_channel_mesh, ChannelParams, GammaSpec};

    fn unit_square(n: usize) -> DiscreteSpaces {
        let mesh = build_channel_mesh(&ChannelParams::new(1.0, 1.0, n, n)).unwrap();
        assemble(Arc::new(mesh)).unwrap()
    }

    #[test]
    fn constant_field_mass_and_stiffness() {
        let s = unit_square(4);
        let u = s.interpolate_velocity(|_| [1.0, 0.0]);
        assert!((inner_l2(&s, &u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(inner_v(&s, &u, &u).unwrap().abs() < 1e-12);
    }

    #[test]
    fn linear_shear_field_has_unit_energy() {
        let s = unit_square(4);
        let u = s.interpolate_velocity(|x| [x[1], 0.0]);
        assert!((inner_v(&s, &u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrices_are_symmetric() {
        let s = unit_square(3);
        assert!(sparse::asymmetry(&s.mass) < 1e-14);
        assert!(sparse::asymmetry(&s.stiffness) < 1e-14);
        assert!(sparse::asymmetry(&s.mass_free) < 1e-14);
        assert!(sparse::asymmetry(&s.stiffness_free) < 1e-14);
    }

    #[test]
    fn divergence_of_linear_fields() {
        // B u = -∫ ψ div u; for u = (x, 0) this is -∫ψ.
        let s = unit_square(3);
        let u = s.interpolate_velocity(|x| [x[0], 0.0]);
        let bu = sparse::matvec(&s.divergence, &u);
        let ones = vec![1.0; s.ndof_p];
        let total: f64 = sparse::dot(&bu, &ones);
        assert!((total + 1.0).abs() < 1e-12);
        let v = s.interpolate_velocity(|x| [x[1], x[0]]);
        assert!(sparse::norm2(&sparse::matvec(&s.divergence, &v)) < 1e-13);
    }

    #[test]
    fn dirichlet_dofs_only_on_walls() {
        let s = unit_square(4);
        for &d in &s.dirichlet_dofs {
            let node = d % s.n_nodes;
            let [_, y] = s.node_coords[node];
            assert!(y == 0.0 || y == 1.0);
        }
        // Every wall node is pinned in both components.
        let wall_nodes = s.node_coords.iter().filter(|x| x[1] == 0.0 || x[1] == 1.0).count();
        assert_eq!(s.dirichlet_dofs.len(), 2 * wall_nodes);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = unit_square(2);
        assert!(matches!(
            inner_l2(&s, &[1.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn point_evaluation_reproduces_quadratics() {
        let s = unit_square(3);
        let f = |x: [f64; 2]| [x[0] * x[1] + 0.5, x[0] * x[0] - x[1]];
        let u = s.interpolate_velocity(f);
        for &x in &[[0.13, 0.77], [0.5, 0.5], [0.999, 0.001]] {
            let v = s.evaluate_velocity(&u, x).unwrap();
            let e = f(x);
            assert!((v[0] - e[0]).abs() < 1e-13 && (v[1] - e[1]).abs() < 1e-13);
        }
        assert!(s.evaluate_velocity(&u, [1.5, 0.5]).is_none());
        let p = s.interpolate_pressure(|x| 2.0 * x[0] - x[1]);
        assert!((s.evaluate_pressure(&p, [0.3, 0.4]).unwrap() - 0.2).abs() < 1e-13);
    }

    #[test]
    fn trilinear_form_polynomial_case() {
        let s = unit_square(3);
        let theta = s.interpolate_velocity(|_| [1.0, 0.0]);
        let psi = s.interpolate_velocity(|x| [x[0], -x[1]]);
        let phi = s.interpolate_velocity(|_| [1.0, 0.0]);
        let b = s.trilinear_b(&theta, &psi, &phi).unwrap();
        assert!((b - 1.0).abs() < 1e-13);
        let zero = vec![0.0; s.ndof_v];
        assert_eq!(s.trilinear_b(&zero, &psi, &phi).unwrap(), 0.0);
    }

    #[test]
    fn inf_sup_positive_on_small_channel() {
        let mesh = build_channel_mesh(&ChannelParams::new(3.0, 1.0, 12, 4)).unwrap();
        let s = assemble(Arc::new(mesh)).unwrap();
        let beta = inf_sup_constant(&s).unwrap();
        assert!(beta > 0.1, "beta = {beta}");
    }

    #[test]
    fn all_dirichlet_has_constant_pressure_mode() {
        let mesh = build_channel_mesh(
            &ChannelParams::new(1.0, 1.0, 4, 4).with_gamma(GammaSpec::all_dirichlet()),
        )
        .unwrap();
        let s = assemble(Arc::new(mesh)).unwrap();
        assert!(s.pressure_has_constant_mode());
        let ones = vec![1.0; s.ndof_p];
        let bt1 = sparse::matvec_transpose(&s.divergence_free, &ones);
        assert!(sparse::norm2(&bt1) < 1e-13);
    }
}
