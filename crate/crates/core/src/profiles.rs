//! Profile functions `A`, `B`, `n_e` on a reduced basis and the physical
//! quantities derived from them.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::geometry::{flux_contour, PlasmaDomain};
use crate::mesh::{Mesh, PsiField};
use crate::MU0;

/// Coefficients of `A`, `B` (dimensionless) and `n_e` (m⁻³).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ProfileCoefficients {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let out = ProfileCoefficients { a, b, c };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.a.len();
        if self.b.len() != m || self.c.len() != m {
            return Err(Error::Dimension(format!(
                "coefficient lengths a={}, b={}, c={} differ",
                self.a.len(),
                self.b.len(),
                self.c.len()
            )));
        }
        if self.a.iter().chain(&self.b).chain(&self.c).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite profile coefficient".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `u = (a, b)`.
    pub fn u(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).copied().collect()
    }

    pub fn set_u(&mut self, u: &[f64]) {
        let m = self.a.len();
        self.a.copy_from_slice(&u[..m]);
        self.b.copy_from_slice(&u[m..2 * m]);
    }
}

fn check_len(coeffs: &[f64], family: &BasisFamily) -> Result<()> {
    if coeffs.len() != family.dim() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a basis of dimension {}",
            coeffs.len(),
            family.dim()
        )));
    }
    Ok(())
}

/// `Σ_i u_i Φ_i(x)`.
pub fn eval_profile(coeffs: &[f64], family: &BasisFamily, x: f64) -> Result<f64> {
    check_len(coeffs, family)?;
    let phi = family.eval(x)?;
    Ok(coeffs.iter().zip(&phi).map(|(c, p)| c * p).sum())
}

/// `λ[(r/R₀)A(ψ̄) + (R₀/r)B(ψ̄)]` inside the plasma, zero outside.
#[allow(clippy::too_many_arguments)]
pub fn toroidal_current_density(
    a: &[f64],
    b: &[f64],
    family: &BasisFamily,
    lambda: f64,
    r0: f64,
    r: f64,
    psibar: f64,
    inside: bool,
) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::InvalidInput(format!("radius {r} ≤ 0")));
    }
    check_len(a, family)?;
    check_len(b, family)?;
    if !inside {
        return Ok(0.0);
    }
    let av = eval_profile(a, family, psibar)?;
    let bv = eval_profile(b, family, psibar)?;
    Ok(lambda * ((r / r0) * av + (r0 / r) * bv))
}

/// Physical profiles sampled on a ψ̄ grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedProfiles {
    pub psibar: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub ne: Vec<f64>,
    /// Pa/Wb
    pub pprime: Vec<f64>,
    /// T²m²/Wb
    pub ffprime: Vec<f64>,
    pub p: Vec<f64>,
    pub f: Vec<f64>,
    pub q: Vec<f64>,
}

/// Uniform grid of `n` points on [0, 1].
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

/// `∫_{x_k}^{1} g dx` by the composite trapezoid rule, for every grid point.
fn tail_integrals(x: &[f64], g: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for k in (0..n - 1).rev() {
        out[k] = out[k + 1] + 0.5 * (x[k + 1] - x[k]) * (g[k] + g[k + 1]);
    }
    out
}

/// p′, ff′, p and f on `grid` (increasing, ending at 1). `q` is left empty;
/// see [`safety_factor`].
#[allow(clippy::too_many_arguments)]
pub fn derived_profiles(
    coeffs: &ProfileCoefficients,
    family: &BasisFamily,
    lambda: f64,
    r0: f64,
    f_b: f64,
    grid: &[f64],
    psi_axis: f64,
    psi_b: f64,
) -> Result<DerivedProfiles> {
    coeffs.validate()?;
    check_len(&coeffs.a, family)?;
    if psi_b == psi_axis {
        return Err(Error::NoPlasma("boundary flux equals axis flux".into()));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) || grid[grid.len() - 1] != 1.0 {
        return Err(Error::InvalidInput(
            "profile grid must increase strictly and end at 1".into(),
        ));
    }
    let dpsi = psi_b - psi_axis;
    let eval = |c: &[f64]| -> Result<Vec<f64>> {
        grid.iter().map(|&x| eval_profile(c, family, x)).collect()
    };
    let a = eval(&coeffs.a)?;
    let b = eval(&coeffs.b)?;
    let ne = eval(&coeffs.c)?;
    let pprime: Vec<f64> = a.iter().map(|v| lambda * v / r0).collect();
    let ffprime: Vec<f64> = b.iter().map(|v| lambda * MU0 * r0 * v).collect();
    // dp/dψ̄ = (ψ_b − ψ_axis) p′ with p(1) = 0.
    let p: Vec<f64> = tail_integrals(grid, &pprime)
        .into_iter()
        .map(|i| -dpsi * i)
        .collect();
    // d(f²/2)/dψ̄ = (ψ_b − ψ_axis) ff′ with f(1) = f_b.
    let mut f = Vec::with_capacity(grid.len());
    for (k, i) in tail_integrals(grid, &ffprime).into_iter().enumerate() {
        let f2 = f_b * f_b - 2.0 * dpsi * i;
        if f2 < 0.0 {
            return Err(Error::Numerical(format!(
                "f² = {f2} < 0 at grid point {k} (ψ̄ = {})",
                grid[k]
            )));
        }
        f.push(f2.sqrt().copysign(f_b));
    }
    Ok(DerivedProfiles {
        psibar: grid.to_vec(),
        a,
        b,
        ne,
        pprime,
        ffprime,
        p,
        f,
        q: Vec::new(),
    })
}

/// Minimum number of contour vertices used for the line integral.
const Q_VERTICES: usize = 256;

/// `q = (1/2π) ∮ f/(r|∇ψ|) dl` on the flux surface of each level.
pub fn safety_factor(
    mesh: &Mesh,
    psi: &PsiField,
    domain: &PlasmaDomain,
    f_values: &[f64],
    levels: &[f64],
) -> Result<Vec<f64>> {
    if f_values.len() != levels.len() {
        return Err(Error::Dimension(format!(
            "{} f values for {} levels",
            f_values.len(),
            levels.len()
        )));
    }
    let v = psi.values();
    levels
        .iter()
        .zip(f_values)
        .map(|(&level, &f)| {
            let contour = flux_contour(mesh, psi, domain, level)?;
            let segments = contour.triangles.len();
            let sub = Q_VERTICES.div_ceil(segments.max(1)).max(1);
            let mut integral = 0.0;
            for (k, &t) in contour.triangles.iter().enumerate() {
                let g = mesh.triangle_gradient(t, v);
                let gnorm = g[0].hypot(g[1]);
                if gnorm == 0.0 {
                    return Err(Error::Contour(format!(
                        "zero flux gradient on the level {level} contour"
                    )));
                }
                let (p0, p1) = (contour.points[k], contour.points[k + 1]);
                let dl = p0.dist(p1) / sub as f64;
                for j in 0..sub {
                    let mid = p0.lerp(p1, (j as f64 + 0.5) / sub as f64);
                    integral += dl / (mid.r * gnorm);
                }
            }
            Ok(f * integral / (2.0 * PI))
        })
        .collect()
}

/// Fills `derived.q`. Levels whose contour cannot be extracted (the
/// endpoints, and levels squeezed between the refined axis and the nearest
/// nodes) are filled by linear interpolation or extrapolation from their
/// neighbors in ψ̄.
pub fn attach_safety_factor(
    derived: &mut DerivedProfiles,
    mesh: &Mesh,
    psi: &PsiField,
    domain: &PlasmaDomain,
) {
    let n = derived.psibar.len();
    let mut q: Vec<Option<f64>> = vec![None; n];
    for k in 0..n {
        let x = derived.psibar[k];
        if x <= 0.0 || x >= 1.0 {
            continue;
        }
        q[k] = safety_factor(mesh, psi, domain, &derived.f[k..=k], &[x])
            .ok()
            .map(|v| v[0])
            .filter(|v| v.is_finite());
    }
    let known: Vec<usize> = (0..n).filter(|&k| q[k].is_some()).collect();
    derived.q = (0..n)
        .map(|k| {
            if let Some(v) = q[k] {
                return v;
            }
            if known.len() < 2 {
                return known.first().map_or(f64::NAN, |&j| q[j].unwrap());
            }
            let pos = known.partition_point(|&j| j < k);
            let (i, j) = if pos == 0 {
                (known[0], known[1])
            } else if pos == known.len() {
                (known[pos - 2], known[pos - 1])
            } else {
                (known[pos - 1], known[pos])
            };
            let (xi, xj) = (derived.psibar[i], derived.psibar[j]);
            let (qi, qj) = (q[i].unwrap(), q[j].unwrap());
            qi + (qj - qi) * (derived.psibar[k] - xi) / (xj - xi)
        })
        .collect();
}

/// Plain-text profile table: one header line, then columns
/// ψ̄ A B n_e p′ ff′ p f q.
pub fn profile_table(d: &DerivedProfiles) -> String {
    let mut s = String::from("# psibar A B n_e pprime ffprime p f q\n");
    for k in 0..d.psibar.len() {
        let q = d.q.get(k).copied().unwrap_or(f64::NAN);
        let row = [
            d.psibar[k], d.a[k], d.b[k], d.ne[k], d.pprime[k], d.ffprime[k], d.p[k], d.f[k], q,
        ];
        let cols: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", cols.join(" "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisKind;
    use crate::fem::Quadrature;
    use crate::geometry::plasma_domain;
    use crate::mesh::Point;

    fn cubic() -> BasisFamily {
        BasisFamily::uniform(BasisKind::CubicBSpline, 7).unwrap()
    }

    #[test]
    fn constant_coefficients_give_constant_profile() {
        for kind in [BasisKind::PiecewiseLinear, BasisKind::CubicBSpline] {
            let fam = BasisFamily::uniform(kind, 8).unwrap();
            for x in [0.0, 0.13, 0.5, 0.999, 1.0] {
                assert!((eval_profile(&[2.5; 8], &fam, x).unwrap() - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_coefficients_give_hats() {
        let fam = BasisFamily::uniform(BasisKind::PiecewiseLinear, 5).unwrap();
        let mut e = vec![0.0; 5];
        e[2] = 1.0;
        assert_eq!(eval_profile(&e, &fam, 0.5).unwrap(), 1.0);
        assert!((eval_profile(&e, &fam, 0.625).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn profile_is_dot_product() {
        let fam = cubic();
        let c = [0.3, -1.2, 2.0, 0.7, 0.1, -0.4, 1.5];
        let phi = fam.eval(0.37).unwrap();
        let dot: f64 = c.iter().zip(&phi).map(|(a, b)| a * b).sum();
        assert_eq!(eval_profile(&c, &fam, 0.37).unwrap(), dot);
        assert!(eval_profile(&c[..3], &fam, 0.37).is_err());
    }

    #[test]
    fn current_density_cases() {
        let fam = cubic();
        let a = fam.affine_coefficients(1.0, -1.0);
        let b = fam.affine_coefficients(0.5, 0.0);
        assert_eq!(toroidal_current_density(&a, &b, &fam, 3.0, 2.4, 2.0, 0.3, false).unwrap(), 0.0);
        let j = toroidal_current_density(&a, &b, &fam, 3.0, 2.4, 2.4, 0.3, true).unwrap();
        assert!((j - 3.0 * (0.7 + 0.5)).abs() < 1e-12);
        assert!(toroidal_current_density(&a, &b, &fam, 3.0, 2.4, 0.0, 0.3, true).is_err());
    }

    #[test]
    fn gauge_scaling_leaves_current_unchanged() {
        let fam = cubic();
        let a = [1.0, 0.9, 0.7, 0.5, 0.3, 0.1, 0.0];
        let b = [0.8, 0.7, 0.6, 0.4, 0.2, 0.1, 0.0];
        let gamma = 4.0; // power of two: exact scaling
        let ga: Vec<f64> = a.iter().map(|v| v * gamma).collect();
        let gb: Vec<f64> = b.iter().map(|v| v * gamma).collect();
        for x in [0.0, 0.21, 0.66] {
            let j1 = toroidal_current_density(&a, &b, &fam, 1.7e5, 2.4, 2.1, x, true).unwrap();
            let j2 = toroidal_current_density(&ga, &gb, &fam, 1.7e5 / gamma, 2.4, 2.1, x, true).unwrap();
            assert!((j1 - j2).abs() <= f64::EPSILON * j1.abs());
        }
    }

    fn coeffs(fam: &BasisFamily, a: Vec<f64>, b: Vec<f64>) -> ProfileCoefficients {
        ProfileCoefficients::new(a, b, vec![0.0; fam.dim()]).unwrap()
    }

    #[test]
    fn zero_a_zero_pressure_zero_b_vacuum_f() {
        let fam = cubic();
        let c = coeffs(&fam, vec![0.0; 7], vec![0.0; 7]);
        let d = derived_profiles(&c, &fam, 2e5, 2.4, 9.36, &uniform_grid(101), 0.4, 0.1).unwrap();
        assert!(d.p.iter().all(|&p| p == 0.0));
        assert!(d.f.iter().all(|&f| f == 9.36));
    }

    #[test]
    fn affine_pressure_matches_closed_form() {
        let fam = cubic();
        let c = coeffs(&fam, fam.affine_coefficients(1.0, -1.0), vec![0.0; 7]);
        let (lambda, r0, psi_axis, psi_b) = (2e5, 2.4, 0.4, 0.1);
        let grid = uniform_grid(101);
        let d = derived_profiles(&c, &fam, lambda, r0, 9.36, &grid, psi_axis, psi_b).unwrap();
        for (x, p) in grid.iter().zip(&d.p) {
            // p = −(ψ_b − ψ_axis) λ/R₀ ∫_x^1 (1 − s) ds
            let exact = -(psi_b - psi_axis) * lambda / r0 * 0.5 * (1.0 - x).powi(2);
            assert!((p - exact).abs() <= 1e-8 * exact.abs().max(1.0), "{p} vs {exact}");
        }
        assert_eq!(d.p[100], 0.0);
        // p′ back from p by centered differences, per unit ψ.
        for k in 1..100 {
            let fd = (d.p[k + 1] - d.p[k - 1]) / (0.02 * (psi_b - psi_axis));
            assert!((fd - d.pprime[k]).abs() < 1e-6 * d.pprime[0]);
        }
    }

    #[test]
    fn negative_f_squared_is_reported() {
        let fam = cubic();
        let c = coeffs(&fam, vec![0.0; 7], vec![1.0; 7]);
        // ψ_b > ψ_axis with B > 0 lowers f² toward the axis.
        let r = derived_profiles(&c, &fam, 1e9, 2.4, 0.1, &uniform_grid(11), 0.0, 1.0);
        assert!(matches!(r, Err(Error::Numerical(ref m)) if m.contains("grid point")));
    }

    fn circle_setup() -> (Mesh, PsiField, PlasmaDomain) {
        let rings: Vec<(f64, usize)> = (1..=14).map(|k| (0.05 * k as f64, 8 * k)).collect();
        let m = Mesh::polar_disk(Point::new(2.4, 0.0), &rings, Some(12)).unwrap();
        let psi = PsiField::from_fn(&m, |p| 1.0 - ((p.r - 2.4).powi(2) + p.z.powi(2)).sqrt()).unwrap();
        let quad = Quadrature::new(&m);
        let dom = plasma_domain(&m, &quad, &psi).unwrap();
        (m, psi, dom)
    }

    #[test]
    fn q_for_circular_surfaces() {
        // |∇ψ| = 1, so q = f/(2π) ∮ dl/r = f ρ/√(R² − ρ²).
        let (m, psi, dom) = circle_setup();
        let level = 0.5;
        let rho = 1.0 - (dom.psi_axis + level * (dom.psi_b - dom.psi_axis));
        let q = safety_factor(&m, &psi, &dom, &[3.0], &[level]).unwrap()[0];
        let exact = 3.0 * rho / (2.4f64.powi(2) - rho * rho).sqrt();
        assert!((q - exact).abs() < 0.02 * exact, "{q} vs {exact}");
        let q0 = safety_factor(&m, &psi, &dom, &[0.0], &[level]).unwrap()[0];
        assert_eq!(q0, 0.0);
        let q2 = safety_factor(&m, &psi, &dom, &[6.0], &[level]).unwrap()[0];
        assert_eq!(q2, 2.0 * q);
    }

    #[test]
    fn table_has_header_and_rows() {
        let fam = cubic();
        let c = coeffs(&fam, fam.affine_coefficients(1.0, -1.0), vec![0.0; 7]);
        let mut d = derived_profiles(&c, &fam, 1.0, 2.4, 9.0, &uniform_grid(5), 1.0, 0.0).unwrap();
        let (m, psi, dom) = circle_setup();
        attach_safety_factor(&mut d, &m, &psi, &dom);
        assert!(d.q.iter().all(|v| v.is_finite()));
        let t = profile_table(&d);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1].split_whitespace().count(), 9);
    }
}
