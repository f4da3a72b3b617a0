//! Smallest eigenpairs of `K x = λ M x` subject to the linear constraint `B x = 0`.
//!
//! Shift-invert block Krylov iteration on the saddle-point operator
//! `x ↦ y` with `[K Bᵀ; B 0] [y; q] = [M x; 0]`, full M-orthogonal
//! reorthogonalization and Rayleigh-Ritz with K. Every Krylov vector satisfies the
//! constraint to solver precision.

use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sparse::{self, SparseLu, SparseMatrix, TripletBuilder};

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Convergence when the projected residual is at most `tol * λ`.
    pub tol: f64,
    /// Once the residuals stop improving (round-off floor), accept the pairs
    /// if every residual is at most `accept_tol * λ`.
    pub accept_tol: f64,
    pub block_size: usize,
    /// Hard cap on the Krylov basis size.
    pub max_basis: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-10,
            accept_tol: 1e-8,
            block_size: 4,
            max_basis: 1200,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Vec<f64>,
    /// M-orthonormal eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// Residual `min_q ‖K x − λ M x + Bᵀ q‖_{M⁻¹}` of each pair.
    pub residuals: Vec<f64>,
    pub basis_size: usize,
}

/// Factorizations of the two saddle-point systems shared by the iteration.
pub struct ConstrainedPencil<'a> {
    stiffness: &'a SparseMatrix,
    mass: &'a SparseMatrix,
    constraint: Option<&'a SparseMatrix>,
    shift_invert: SparseLu,
    mass_projector: SparseLu,
    n: usize,
}

impl std::fmt::Debug for ConstrainedPencil<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstrainedPencil").field("n", &self.n).finish()
    }
}

/// `[A Cᵀ; C 0]`
pub fn saddle_matrix(a: &SparseMatrix, c: Option<&SparseMatrix>) -> SparseMatrix {
    let n = a.nrows();
    let m = c.map_or(0, |c| c.nrows());
    let mut t = TripletBuilder::new(n + m, n + m);
    for (i, j, v) in sparse::entries(a) {
        t.push(i, j, v);
    }
    if let Some(c) = c {
        for (i, j, v) in sparse::entries(c) {
            t.push(n + i, j, v);
            t.push(j, n + i, v);
        }
    }
    t.build()
}

impl<'a> ConstrainedPencil<'a> {
    /// `constraint` must have full row rank.
    pub fn new(
        stiffness: &'a SparseMatrix,
        mass: &'a SparseMatrix,
        constraint: Option<&'a SparseMatrix>,
    ) -> Result<Self> {
        let n = stiffness.nrows();
        if mass.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: mass.nrows(),
            });
        }
        if let Some(c) = constraint {
            if c.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: c.ncols(),
                });
            }
        }
        let shift_invert = SparseLu::new(&saddle_matrix(stiffness, constraint))
            .map_err(|e| Error::SingularSaddlePoint(e.to_string()))?;
        let mass_projector = SparseLu::new(&saddle_matrix(mass, constraint))
            .map_err(|e| Error::SingularSaddlePoint(e.to_string()))?;
        Ok(ConstrainedPencil {
            stiffness,
            mass,
            constraint,
            shift_invert,
            mass_projector,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn n_constraints(&self) -> usize {
        self.constraint.map_or(0, |c| c.nrows())
    }

    /// Constrained solve of `K y = M x`.
    pub fn apply_inverse(&self, x: &[f64]) -> Vec<f64> {
        let mut rhs = sparse::matvec(self.mass, x);
        rhs.resize(self.n + self.n_constraints(), 0.0);
        let mut y = self.shift_invert.solve(&rhs);
        y.truncate(self.n);
        y
    }

    /// M-orthogonal projection onto the constraint kernel.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut rhs = sparse::matvec(self.mass, x);
        rhs.resize(self.n + self.n_constraints(), 0.0);
        let mut y = self.mass_projector.solve(&rhs);
        y.truncate(self.n);
        y
    }

    /// `‖r‖` in the dual norm of the constrained space: `min_q ‖r + Bᵀq‖_{M⁻¹}`.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        let mut rhs = r.to_vec();
        rhs.resize(self.n + self.n_constraints(), 0.0);
        let mut z = self.mass_projector.solve(&rhs);
        z.truncate(self.n);
        // ‖z‖_M rather than sqrt(zᵀr): r has a large Bᵀ component and zᵀr cancels.
        sparse::bilinear(self.mass, &z, &z).sqrt()
    }

    pub fn residual(&self, lambda: f64, x: &[f64]) -> f64 {
        let kx = sparse::matvec(self.stiffness, x);
        let mx = sparse::matvec(self.mass, x);
        let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - lambda * b).collect();
        self.dual_norm(&r)
    }

    /// The `count` smallest eigenpairs; `available` is the dimension of the constrained space.
    pub fn smallest(&self, count: usize, available: usize, opts: &EigenOptions) -> Result<EigenResult> {
        if count > available {
            return Err(Error::TooManyModes {
                requested: count,
                available,
            });
        }
        if count == 0 {
            return Ok(EigenResult {
                values: vec![],
                vectors: vec![],
                residuals: vec![],
                basis_size: 0,
            });
        }
        let n = self.n;
        let bs = opts.block_size.max(1);
        let cap = opts.max_basis.min(available);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let random_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        };

        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut mbasis: Vec<Vec<f64>> = Vec::new();
        let mut kbasis: Vec<Vec<f64>> = Vec::new();
        let mut block: Vec<Vec<f64>> = (0..bs).map(|_| self.apply_inverse(&random_vec(&mut rng))).collect();
        let mut next_check = (2 * count + 10).max(3 * bs).min(cap);
        let mut last_block_start = 0;
        let mut best_worst = f64::INFINITY;
        let mut stalled = 0;

        loop {
            let mut added = 0;
            for v in block.drain(..) {
                if basis.len() >= cap {
                    break;
                }
                if let Some(q) = self.orthonormalize(v, &basis, &mbasis) {
                    mbasis.push(sparse::matvec(self.mass, &q));
                    kbasis.push(sparse::matvec(self.stiffness, &q));
                    basis.push(q);
                    added += 1;
                }
            }
            let exhausted = basis.len() >= cap;
            if basis.len() >= next_check || exhausted || added == 0 {
                let result = self.rayleigh_ritz(count, &basis, &kbasis)?;
                let worst = result
                    .values
                    .iter()
                    .zip(&result.residuals)
                    .map(|(l, r)| r / l.abs().max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                if worst <= opts.tol || (exhausted && basis.len() >= available) {
                    return Ok(result);
                }
                if worst < 0.5 * best_worst {
                    best_worst = worst;
                    stalled = 0;
                } else {
                    stalled += 1;
                }
                if stalled >= 3 && worst <= opts.accept_tol {
                    return Ok(result);
                }
                if exhausted {
                    return Err(Error::EigenNonConvergence(format!(
                        "basis cap {cap} reached with relative residual {worst:.3e} > {:.1e}",
                        opts.tol
                    )));
                }
                next_check = (basis.len() + (count / 2).max(2 * bs)).min(cap);
            }
            // Expand from the most recent block; refill with fresh directions on breakdown.
            let start = last_block_start.min(basis.len());
            block = basis[start..].iter().map(|v| self.apply_inverse(v)).collect();
            last_block_start = basis.len();
            while block.len() < bs {
                block.push(self.apply_inverse(&random_vec(&mut rng)));
            }
        }
    }

    /// Two-pass M-orthogonal Gram-Schmidt; `None` if `v` is numerically in the span.
    fn orthonormalize(&self, mut v: Vec<f64>, basis: &[Vec<f64>], mbasis: &[Vec<f64>]) -> Option<Vec<f64>> {
        let norm0 = sparse::bilinear(self.mass, &v, &v).sqrt();
        if !(norm0 > 0.0) || !norm0.is_finite() {
            return None;
        }
        for pass in 0..2 {
            for (q, mq) in basis.iter().zip(mbasis) {
                let c = sparse::dot(mq, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
            // Cancellation amplifies the tiny constraint violation of the solves; remove it.
            if pass == 0 && self.constraint.is_some() {
                v = self.project(&v);
            }
        }
        let norm = sparse::bilinear(self.mass, &v, &v).sqrt();
        if norm <= 1e-10 * norm0 {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Some(v)
    }

    fn rayleigh_ritz(&self, count: usize, basis: &[Vec<f64>], kbasis: &[Vec<f64>]) -> Result<EigenResult> {
        let m = basis.len();
        let h = Mat::<f64>::from_fn(m, m, |i, j| {
            0.5 * (sparse::dot(&basis[i], &kbasis[j]) + sparse::dot(&basis[j], &kbasis[i]))
        });
        let eig = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::EigenNonConvergence(format!("Rayleigh-Ritz: {e:?}")))?;
        let s = eig.S();
        let u = eig.U();
        let take = count.min(m);
        let mut values = Vec::with_capacity(take);
        let mut vectors = Vec::with_capacity(take);
        for k in 0..take {
            let mut x = vec![0.0; self.n];
            for (j, q) in basis.iter().enumerate() {
                let c = u[(j, k)];
                for (xi, qi) in x.iter_mut().zip(q) {
                    *xi += c * qi;
                }
            }
            if self.constraint.is_some() {
                x = self.project(&x);
            }
            values.push(s[k]);
            vectors.push(x);
        }
        self.reorthonormalize(&mut vectors);
        let residuals = values
            .iter()
            .zip(&vectors)
            .map(|(&l, x)| self.residual(l, x))
            .collect();
        Ok(EigenResult {
            values,
            vectors,
            residuals,
            basis_size: m,
        })
    }

    /// Modified Gram-Schmidt in the M inner product.
    pub fn reorthonormalize(&self, vectors: &mut [Vec<f64>]) {
        for k in 0..vectors.len() {
            let (done, rest) = vectors.split_at_mut(k);
            let v = &mut rest[0];
            for q in done.iter() {
                let c = sparse::bilinear(self.mass, q, v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
            let norm = sparse::bilinear(self.mass, v, v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> (SparseMatrix, SparseMatrix) {
        // Linear elements on (0, 1) with Dirichlet ends, n interior nodes.
        let h = 1.0 / (n + 1) as f64;
        let mut k = TripletBuilder::new(n, n);
        let mut m = TripletBuilder::new(n, n);
        for i in 0..n {
            k.push(i, i, 2.0 / h);
            m.push(i, i, 4.0 * h / 6.0);
            if i + 1 < n {
                k.push(i, i + 1, -1.0 / h);
                k.push(i + 1, i, -1.0 / h);
                m.push(i, i + 1, h / 6.0);
                m.push(i + 1, i, h / 6.0);
            }
        }
        (k.build(), m.build())
    }

    #[test]
    fn unconstrained_matches_closed_form() {
        let n = 200;
        let (k, m) = laplace_1d(n);
        let pencil = ConstrainedPencil::new(&k, &m, None).unwrap();
        let res = pencil.smallest(6, n, &EigenOptions::default()).unwrap();
        let h = 1.0 / (n + 1) as f64;
        for (j, &l) in res.values.iter().enumerate() {
            let t = (j + 1) as f64 * std::f64::consts::PI * h;
            let exact = 6.0 / (h * h) * (1.0 - t.cos()) / (2.0 + t.cos());
            assert!((l - exact).abs() < 1e-9 * exact, "{l} vs {exact}");
        }
        for (l, r) in res.values.iter().zip(&res.residuals) {
            assert!(*r <= 1e-10 * l);
        }
    }

    #[test]
    fn constraint_is_respected() {
        let n = 80;
        let (k, m) = laplace_1d(n);
        // Zero mean against the first 10 nodes plus one point constraint.
        let mut c = TripletBuilder::new(2, n);
        for i in 0..10 {
            c.push(0, i, 1.0);
        }
        c.push(1, 40, 1.0);
        let c = c.build();
        let pencil = ConstrainedPencil::new(&k, &m, Some(&c)).unwrap();
        let res = pencil.smallest(5, n - 2, &EigenOptions::default()).unwrap();
        for x in &res.vectors {
            assert!(sparse::norm2(&sparse::matvec(&c, x)) < 1e-10);
        }
        for w in res.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
        // Gram matrix under M is the identity.
        for i in 0..res.vectors.len() {
            for j in 0..res.vectors.len() {
                let g = sparse::bilinear(&m, &res.vectors[i], &res.vectors[j]);
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_many_modes_is_an_error() {
        let (k, m) = laplace_1d(5);
        let pencil = ConstrainedPencil::new(&k, &m, None).unwrap();
        assert!(matches!(
            pencil.smallest(6, 5, &EigenOptions::default()),
            Err(Error::TooManyModes { .. })
        ));
        // The whole space is recovered exactly.
        let res = pencil.smallest(5, 5, &EigenOptions::default()).unwrap();
        assert_eq!(res.values.len(), 5);
    }
}
