//! Quadrature rules on the reference triangle and on intervals.

/// A quadrature rule on the reference triangle with vertices (0,0), (1,0), (0,1).
/// Weights sum to the reference area 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Seven-point rule exact for polynomials of total degree 5.
    pub fn degree5() -> Self {
        let s = 15f64.sqrt();
        let a1 = (6.0 - s) / 21.0;
        let b1 = (9.0 + 2.0 * s) / 21.0;
        let a2 = (6.0 + s) / 21.0;
        let b2 = (9.0 - 2.0 * s) / 21.0;
        let w0 = 9.0 / 80.0;
        let w1 = (155.0 - s) / 2400.0;
        let w2 = (155.0 + s) / 2400.0;
        TriangleRule {
            points: vec![
                [1.0 / 3.0, 1.0 / 3.0],
                [a1, a1],
                [b1, a1],
                [a1, b1],
                [a2, a2],
                [b2, a2],
                [a2, b2],
            ],
            weights: vec![w0, w1, w1, w1, w2, w2, w2],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let nodes = x.iter().map(|&xi| 0.5 * (xi + 1.0)).collect();
    let weights = w.iter().map(|&wi| 0.5 * wi).collect();
    (nodes, weights)
}

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
