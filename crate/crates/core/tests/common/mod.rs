#![allow(dead_code)]

use gsrecon::fem::{load_vector, Quadrature, StiffnessSystem};
use gsrecon::reconstruction::NormalEquation;
use gsrecon::{Mesh, Point, PsiField, MU0};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss–Legendre nodes and weights on [0, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

/// `∫_T f` over the triangle `a b c` with an n×n collapsed Gauss rule.
pub fn integrate_triangle(a: Point, b: Point, c: Point, n: usize, f: impl Fn(Point) -> f64) -> f64 {
    let gl = gauss_legendre(n);
    let jac = ((b.r - a.r) * (c.z - a.z) - (c.r - a.r) * (b.z - a.z)).abs();
    let mut total = 0.0;
    for &(u, wu) in &gl {
        for &(v, wv) in &gl {
            // (u, v) ∈ [0,1]² → (s, t) = (u, (1−u)v) in the reference triangle.
            let s = u;
            let t = (1.0 - u) * v;
            let p = Point::new(
                a.r + s * (b.r - a.r) + t * (c.r - a.r),
                a.z + s * (b.z - a.z) + t * (c.z - a.z),
            );
            total += wu * wv * (1.0 - u) * f(p);
        }
    }
    total * jac
}

/// Copy of `base` with every `A`, `B` coefficient scaled by `1 + rel·N(0,1)`.
pub fn perturbed_spec(base: &gsrecon::twin::TwinSpec, rel: f64, seed: u64) -> gsrecon::twin::TwinSpec {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, rel).unwrap();
    let mut spec = base.clone();
    for v in spec.a.iter_mut().chain(spec.b.iter_mut()) {
        *v *= 1.0 + normal.sample(&mut rng);
    }
    spec
}

/// Hat gradients from the affine interpolation conditions of each vertex.
pub fn oracle_gradients(v: [Point; 3]) -> [[f64; 2]; 3] {
    let det = (v[1].r - v[0].r) * (v[2].z - v[0].z) - (v[2].r - v[0].r) * (v[1].z - v[0].z);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [(v[j].z - v[k].z) / det, (v[k].r - v[j].r) / det];
    }
    g
}

/// `(r−1.5)² z²` and `−Δ*` of it.
pub fn mms_exact(p: Point) -> f64 {
    (p.r - 1.5).powi(2) * p.z * p.z
}

pub fn mms_source(p: Point) -> f64 {
    -(3.0 * p.z * p.z / (p.r * p.r) + 2.0 * (p.r - 1.5).powi(2) / p.r) / MU0
}

pub fn l2_error(m: &Mesh, psi: &PsiField) -> f64 {
    let mut total = 0.0;
    for t in 0..m.triangle_count() {
        let v = m.vertices(t);
        let tri = m.triangle(t);
        let g = oracle_gradients(v);
        let u0 = psi.values()[tri[0]];
        let (u1, u2) = (psi.values()[tri[1]], psi.values()[tri[2]]);
        total += integrate_triangle(v[0], v[1], v[2], 6, |p| {
            let dr = p.r - v[0].r;
            let dz = p.z - v[0].z;
            // P1 interpolant through the vertex values.
            let uh = u0 + (u1 - u0) * (g[1][0] * dr + g[1][1] * dz) + (u2 - u0) * (g[2][0] * dr + g[2][1] * dz);
            (uh - mms_exact(p)).powi(2)
        });
    }
    total.sqrt()
}

/// L2 error of the manufactured solution on an n×n rectangle mesh.
pub fn mms_error(n: usize) -> f64 {
    let m = Mesh::rectangle(1.0, 2.0, -0.5, 0.5, n, n).unwrap();
    let q = Quadrature::new(&m);
    let sys = StiffnessSystem::new(&m).unwrap();
    let y = load_vector(&m, &q, mms_source);
    let h: Vec<f64> = m.boundary_nodes().iter().map(|&i| mms_exact(m.node(i))).collect();
    let psi = sys.solve_direct(&y, &h).unwrap();
    l2_error(&m, &psi)
}

pub fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn small_mesh() -> Mesh {
    Mesh::rectangle(1.5, 2.5, -0.5, 0.5, 4, 4).unwrap()
}

/// Random instance of the weighted least-squares problem on a small mesh.
pub fn instance(seed: u64, l: usize, cols: usize, eps: f64) -> (Mesh, StiffnessSystem, NormalEquation, DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = small_mesh();
    let sys = StiffnessSystem::new(&m).unwrap();
    let n = m.node_count();
    let c = random(&mut rng, l, n);
    // K⁻¹ is of order μ₀; this keeps Ẽ of order one.
    let mut y = random(&mut rng, n, cols) * 1e6;
    for &b in m.boundary_nodes() {
        y.row_mut(b).fill(0.0);
    }
    let h: Vec<f64> = m.boundary_nodes().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let hv = sys.dirichlet_vector(&h).unwrap();
    let k: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d: Vec<f64> = (0..l).map(|_| rng.random_range(0.5..2.0)).collect();
    let g = random(&mut rng, cols, cols);
    let reg = g.transpose() * g * eps;
    let ne = NormalEquation::assemble(&c, &sys, &y, &hv, &k, &d, reg).unwrap();
    (m, sys, ne, c, y, d)
}

/// `J(x + d) − J(x)` expanded so that tiny steps do not cancel.
pub fn cost_increase(ne: &NormalEquation, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let r = &ne.e * x - &ne.f;
    let ed = &ne.e * d;
    r.dot(&ed) + 0.5 * ed.norm_squared() + x.dot(&(&ne.reg * d)) + 0.5 * d.dot(&(&ne.reg * d))
}

/// Pattern search on a 9⁴ grid that recentres on the best point and halves
/// the spacing when the centre wins.
pub fn grid_minimum(ne: &NormalEquation) -> DVector<f64> {
    let dim = ne.e.ncols();
    assert_eq!(dim, 4);
    let mut x = DVector::zeros(dim);
    let mut h = 1.0;
    while h > 1e-14 {
        let mut best = (0.0, DVector::zeros(dim));
        for idx in 0..9usize.pow(4) {
            let d = DVector::from_fn(dim, |k, _| ((idx / 9usize.pow(k as u32)) % 9) as f64 - 4.0) * h;
            let inc = cost_increase(ne, &x, &d);
            if inc < best.0 {
                best = (inc, d);
            }
        }
        if best.1.norm() == 0.0 {
            h *= 0.5;
        } else {
            x += best.1;
        }
    }
    x
}
