//! Measurement model: flux loops (Dirichlet data), magnetic probes,
//! interferometry and polarimetry chords, and the observation operator.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::geometry::PlasmaDomain;
use crate::mesh::{Mesh, Point, PsiField};

pub const FORMAT_VERSION: u32 = 1;

/// Flux loop at boundary arclength `s` (m, from the first boundary node).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxLoop {
    pub s: f64,
    /// Wb/rad
    pub psi: f64,
    pub sigma: f64,
}

/// Magnetic probe measuring `(1/r) ∂ψ/∂n` at a boundary point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub r: f64,
    pub z: f64,
    /// Unit sensor normal.
    pub normal: [f64; 2],
    pub value: f64,
    pub sigma: f64,
}

impl Probe {
    pub fn point(&self) -> Point {
        Point::new(self.r, self.z)
    }
}

/// Line of sight carrying an interferometry (`β`) and a polarimetry (`α`)
/// reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chord {
    /// Polyline vertices `[r, z]`.
    pub points: Vec<[f64; 2]>,
    pub alpha: f64,
    pub beta: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    #[serde(default = "yes")]
    pub polarimetry: bool,
    #[serde(default = "yes")]
    pub interferometry: bool,
}

fn yes() -> bool {
    true
}

impl Chord {
    pub fn straight(a: Point, b: Point) -> Self {
        Chord {
            points: vec![[a.r, a.z], [b.r, b.z]],
            alpha: 0.0,
            beta: 0.0,
            sigma_alpha: 1.0,
            sigma_beta: 1.0,
            polarimetry: true,
            interferometry: true,
        }
    }

    fn vertices(&self) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().map(|p| Point::new(p[0], p[1]))
    }
}

/// One frame of measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub version: u32,
    pub flux_loops: Vec<FluxLoop>,
    pub probes: Vec<Probe>,
    pub chords: Vec<Chord>,
    /// A
    pub plasma_current: f64,
}

impl MeasurementSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: MeasurementSet = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if set.version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "measurement format version {} (expected {FORMAT_VERSION})",
                set.version
            )));
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            e => e,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("measurements serialize");
        s.push('\n');
        s
    }

    /// Checks the set against a mesh.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.plasma_current == 0.0 || !self.plasma_current.is_finite() {
            return Err(Error::InvalidInput("plasma current must be nonzero".into()));
        }
        let tol = 1e-8 * mesh.perimeter();
        for (i, l) in self.flux_loops.iter().enumerate() {
            if !(l.sigma > 0.0) {
                return Err(Error::InvalidInput(format!("flux loop {i}: σ = {} ≤ 0", l.sigma)));
            }
        }
        for (i, p) in self.probes.iter().enumerate() {
            if !(p.sigma > 0.0) {
                return Err(Error::InvalidInput(format!("probe {i}: σ = {} ≤ 0", p.sigma)));
            }
            let n = p.normal[0].hypot(p.normal[1]);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("probe {i}: normal has length {n}")));
            }
            let d = mesh.distance_to_boundary(p.point());
            if d > tol {
                return Err(Error::InvalidInput(format!(
                    "probe {i} at ({}, {}) is {d:e} m off the boundary",
                    p.r, p.z
                )));
            }
        }
        for (i, c) in self.chords.iter().enumerate() {
            if c.points.len() < 2 {
                return Err(Error::InvalidInput(format!("chord {i} has fewer than 2 points")));
            }
            if c.polarimetry && !(c.sigma_alpha > 0.0) {
                return Err(Error::InvalidInput(format!("chord {i}: σ_α ≤ 0")));
            }
            if c.interferometry && !(c.sigma_beta > 0.0) {
                return Err(Error::InvalidInput(format!("chord {i}: σ_β ≤ 0")));
            }
        }
        Ok(())
    }

    /// Copy with every flux-sign-carrying reading negated.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.flux_loops {
            l.psi = -l.psi;
        }
        for p in &mut out.probes {
            p.value = -p.value;
        }
        for c in &mut out.chords {
            c.alpha = -c.alpha;
        }
        out.plasma_current = -out.plasma_current;
        out
    }

    pub fn polarimetry_chords(&self) -> impl Iterator<Item = (usize, &Chord)> + '_ {
        self.chords.iter().enumerate().filter(|(_, c)| c.polarimetry)
    }

    pub fn interferometry_chords(&self) -> impl Iterator<Item = (usize, &Chord)> + '_ {
        self.chords.iter().enumerate().filter(|(_, c)| c.interferometry)
    }
}

/// Periodic cubic spline through `(x_i, y_i)` with period `period`.
#[derive(Clone, Debug)]
pub struct PeriodicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
    period: f64,
}

impl PeriodicSpline {
    /// `x` must be strictly increasing within one period.
    pub fn new(x: Vec<f64>, y: Vec<f64>, period: f64) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::InvalidInput("periodic spline needs ≥ 3 points".into()));
        }
        let h = |i: usize| {
            if i + 1 < n {
                x[i + 1] - x[i]
            } else {
                x[0] + period - x[n - 1]
            }
        };
        let mut a = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            let (h0, h1) = (h(prev), h(i));
            a[(i, prev)] += h0 / 6.0;
            a[(i, i)] += (h0 + h1) / 3.0;
            a[(i, next)] += h1 / 6.0;
            rhs[i] = (y[next] - y[i]) / h1 - (y[i] - y[prev]) / h0;
        }
        let m = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular periodic spline system".into()))?;
        Ok(PeriodicSpline {
            x,
            y,
            m: m.iter().copied().collect(),
            period,
        })
    }

    pub fn eval(&self, s: f64) -> f64 {
        let n = self.x.len();
        let mut s = (s - self.x[0]).rem_euclid(self.period) + self.x[0];
        if s >= self.x[0] + self.period {
            s = self.x[0];
        }
        let i = self.x.partition_point(|&xi| xi <= s).saturating_sub(1);
        let j = (i + 1) % n;
        let x1 = if j == 0 { self.x[0] + self.period } else { self.x[j] };
        let h = x1 - self.x[i];
        let (a, b) = ((x1 - s) / h, (s - self.x[i]) / h);
        a * self.y[i]
            + b * self.y[j]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[j]) * h * h / 6.0
    }
}

/// Dirichlet values `h` on every boundary node (boundary-loop order) by
/// periodic cubic-spline interpolation of the loop readings in arclength.
pub fn interpolate_dirichlet(loops: &[FluxLoop], mesh: &Mesh) -> Result<Vec<f64>> {
    if loops.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "{} flux loops given, at least 4 required",
            loops.len()
        )));
    }
    let period = mesh.perimeter();
    let mut pts: Vec<(f64, f64)> = loops
        .iter()
        .map(|l| (l.s.rem_euclid(period), l.psi))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let tol = 1e-12 * period;
    for k in 0..pts.len() {
        let next = if k + 1 < pts.len() { pts[k + 1].0 } else { pts[0].0 + period };
        if next - pts[k].0 <= tol {
            return Err(Error::InvalidInput(format!(
                "duplicate flux loop position s = {}",
                pts[k].0
            )));
        }
    }
    let spline = PeriodicSpline::new(
        pts.iter().map(|p| p.0).collect(),
        pts.iter().map(|p| p.1).collect(),
        period,
    )?;
    Ok(mesh.boundary_arclength().iter().map(|&s| spline.eval(s)).collect())
}

/// Rows of `C` for the probes: `(1/r) ∇v_k·n` on the containing triangle.
pub fn probe_rows(mesh: &Mesh, probes: &[Probe]) -> Result<DMatrix<f64>> {
    let mut c = DMatrix::zeros(probes.len(), mesh.node_count());
    let tol = 1e-8 * mesh.perimeter();
    for (i, p) in probes.iter().enumerate() {
        let pt = p.point();
        if mesh.distance_to_boundary(pt) > tol {
            return Err(Error::InvalidInput(format!(
                "probe {i} at ({}, {}) is not on the boundary",
                p.r, p.z
            )));
        }
        let t = mesh.locate(pt)?;
        let g = mesh.hat_gradients(t);
        for (k, &node) in mesh.triangle(t).iter().enumerate() {
            c[(i, node)] += (g[k][0] * p.normal[0] + g[k][1] * p.normal[1]) / p.r;
        }
    }
    Ok(c)
}

/// Quadrature point of a chord line integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChordPoint {
    pub point: Point,
    pub weight: f64,
    pub triangle: usize,
    /// Unit normal to the chord direction: the direction rotated clockwise
    /// by a right angle.
    pub normal: [f64; 2],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChordRule {
    /// Two-point Gauss–Legendre per clipped piece.
    #[default]
    Gauss2,
    /// One midpoint per clipped piece (coarser, for synthetic data).
    Midpoint,
}

/// Parameter interval of segment `a + t(b − a)`, `t ∈ [0, 1]`, inside
/// triangle `tri`.
fn clip_to_triangle(v: [Point; 3], a: Point, b: Point) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let d = (b.r - a.r, b.z - a.z);
    for k in 0..3 {
        let (p, q) = (v[k], v[(k + 1) % 3]);
        // Inside half-plane of a counterclockwise triangle: cross ≥ 0.
        let e = (q.r - p.r, q.z - p.z);
        let f0 = e.0 * (a.z - p.z) - e.1 * (a.r - p.r);
        let df = e.0 * d.1 - e.1 * d.0;
        if df == 0.0 {
            if f0 < 0.0 {
                return None;
            }
        } else {
            let t = -f0 / df;
            if df > 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
        if t0 >= t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Clips the chord against every triangle and returns quadrature points
/// whose weights sum to the in-mesh chord length.
pub fn chord_quadrature(mesh: &Mesh, chord: &Chord, rule: ChordRule) -> Result<Vec<ChordPoint>> {
    let verts: Vec<Point> = chord.vertices().collect();
    if verts.len() < 2 {
        return Err(Error::InvalidInput("chord has fewer than 2 points".into()));
    }
    let mut out = Vec::new();
    for w in verts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.dist(b);
        if len == 0.0 {
            continue;
        }
        let normal = [(b.z - a.z) / len, -(b.r - a.r) / len];
        let mut pieces: Vec<(f64, f64, usize)> = (0..mesh.triangle_count())
            .filter_map(|t| clip_to_triangle(mesh.vertices(t), a, b).map(|(t0, t1)| (t0, t1, t)))
            .collect();
        pieces.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.2.cmp(&y.2)));
        // Pieces along shared edges overlap; keep each stretch once.
        let mut reach = 0.0f64;
        for (t0, t1, t) in pieces {
            let s0 = t0.max(reach);
            if t1 <= s0 {
                continue;
            }
            reach = t1;
            let piece = (t1 - s0) * len;
            let nodes: &[(f64, f64)] = match rule {
                ChordRule::Gauss2 => {
                    let g = 0.5 / 3f64.sqrt();
                    &[(0.5 - g, 0.5), (0.5 + g, 0.5)]
                }
                ChordRule::Midpoint => &[(0.5, 1.0)],
            };
            for &(x, wt) in nodes {
                out.push(ChordPoint {
                    point: a.lerp(b, s0 + x * (t1 - s0)),
                    weight: wt * piece,
                    triangle: t,
                    normal,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "chord from ({}, {}) does not intersect the mesh",
            verts[0].r, verts[0].z
        )));
    }
    Ok(out)
}

/// `ψ̄` at a chord point with the vacuum policy applied: `None` outside the
/// plasma (`ψ̄ > 1` or off the axis component), clamped to [0, 1] inside.
fn chord_psibar(mesh: &Mesh, psi: &[f64], domain: &PlasmaDomain, cp: &ChordPoint) -> Option<f64> {
    if !domain.in_component(cp.triangle) {
        return None;
    }
    let bary = mesh.barycentric(cp.triangle, cp.point);
    let tri = mesh.triangle(cp.triangle);
    let value: f64 = (0..3).map(|k| bary[k] * psi[tri[k]]).sum();
    let x = domain.psibar(value);
    if x > 1.0 {
        None
    } else {
        Some(x.max(0.0))
    }
}

/// `M_ij = ∫_{C_i} Φ_j(ψ̄) dl`, one row per chord quadrature list.
pub fn interferometry_matrix(
    mesh: &Mesh,
    chords: &[&[ChordPoint]],
    psi: &PsiField,
    domain: &PlasmaDomain,
    family: &BasisFamily,
) -> DMatrix<f64> {
    let m = family.dim();
    let mut out = DMatrix::zeros(chords.len(), m);
    let mut phi = vec![0.0; m];
    for (i, pts) in chords.iter().enumerate() {
        for cp in pts.iter() {
            if let Some(x) = chord_psibar(mesh, psi.values(), domain, cp) {
                family.eval_into(x, &mut phi);
                for j in 0..m {
                    out[(i, j)] += cp.weight * phi[j];
                }
            }
        }
    }
    out
}

/// Rows of `C` for polarimetry: applied to Ψ they give
/// `∫ (n_e(ψ̄)/r) ∇ψ·ν dl` at frozen `ψ̄` and `n_e`.
pub fn polarimetry_rows(
    mesh: &Mesh,
    chords: &[&[ChordPoint]],
    ne_coeffs: &[f64],
    family: &BasisFamily,
    psi: &PsiField,
    domain: &PlasmaDomain,
) -> Result<DMatrix<f64>> {
    if ne_coeffs.len() != family.dim() {
        return Err(Error::Dimension(format!(
            "{} density coefficients for a basis of dimension {}",
            ne_coeffs.len(),
            family.dim()
        )));
    }
    let mut out = DMatrix::zeros(chords.len(), mesh.node_count());
    let mut phi = vec![0.0; family.dim()];
    for (i, pts) in chords.iter().enumerate() {
        for cp in pts.iter() {
            let Some(x) = chord_psibar(mesh, psi.values(), domain, cp) else {
                continue;
            };
            family.eval_into(x, &mut phi);
            let ne: f64 = ne_coeffs.iter().zip(&phi).map(|(c, p)| c * p).sum();
            if ne == 0.0 {
                continue;
            }
            let s = cp.weight * ne / cp.point.r;
            let g = mesh.hat_gradients(cp.triangle);
            for (k, &node) in mesh.triangle(cp.triangle).iter().enumerate() {
                out[(i, node)] += s * (g[k][0] * cp.normal[0] + g[k][1] * cp.normal[1]);
            }
        }
    }
    Ok(out)
}

/// Diagonal of `D`: `1/σ²` for each probe, then `K₁/σ_α²` for each
/// polarimetry chord.
pub fn weight_matrix(measurements: &MeasurementSet, k1: f64) -> Result<Vec<f64>> {
    if !(k1 >= 0.0) {
        return Err(Error::InvalidInput(format!("K₁ = {k1} < 0")));
    }
    let mut d = Vec::new();
    for (i, p) in measurements.probes.iter().enumerate() {
        if !(p.sigma > 0.0) {
            return Err(Error::InvalidInput(format!("probe {i}: σ = {} ≤ 0", p.sigma)));
        }
        d.push(1.0 / (p.sigma * p.sigma));
    }
    for (i, c) in measurements.polarimetry_chords() {
        if !(c.sigma_alpha > 0.0) {
            return Err(Error::InvalidInput(format!("chord {i}: σ_α ≤ 0")));
        }
        d.push(k1 / (c.sigma_alpha * c.sigma_alpha));
    }
    Ok(d)
}

/// Precomputed, ψ-independent part of the measurement model.
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub probe_rows: DMatrix<f64>,
    /// Quadrature of every chord, in input order.
    pub chords: Vec<Vec<ChordPoint>>,
    pub polarimetry: Vec<usize>,
    pub interferometry: Vec<usize>,
}

impl SensorModel {
    pub fn new(mesh: &Mesh, measurements: &MeasurementSet, rule: ChordRule) -> Result<Self> {
        let probe_rows = probe_rows(mesh, &measurements.probes)?;
        let chords = measurements
            .chords
            .iter()
            .map(|c| chord_quadrature(mesh, c, rule))
            .collect::<Result<Vec<_>>>()?;
        Ok(SensorModel {
            probe_rows,
            chords,
            polarimetry: measurements.polarimetry_chords().map(|(i, _)| i).collect(),
            interferometry: measurements.interferometry_chords().map(|(i, _)| i).collect(),
        })
    }

    pub fn polarimetry_quadrature(&self) -> Vec<&[ChordPoint]> {
        self.polarimetry.iter().map(|&i| self.chords[i].as_slice()).collect()
    }

    pub fn interferometry_quadrature(&self) -> Vec<&[ChordPoint]> {
        self.interferometry.iter().map(|&i| self.chords[i].as_slice()).collect()
    }

    /// `C` with probe rows first, then active polarimetry rows.
    pub fn observation_matrix(
        &self,
        mesh: &Mesh,
        ne_coeffs: &[f64],
        family: &BasisFamily,
        psi: &PsiField,
        domain: &PlasmaDomain,
    ) -> Result<DMatrix<f64>> {
        let pol = polarimetry_rows(mesh, &self.polarimetry_quadrature(), ne_coeffs, family, psi, domain)?;
        let (np, n) = (self.probe_rows.nrows(), mesh.node_count());
        let mut c = DMatrix::zeros(np + pol.nrows(), n);
        c.view_mut((0, 0), (np, n)).copy_from(&self.probe_rows);
        c.view_mut((np, 0), (pol.nrows(), n)).copy_from(&pol);
        Ok(c)
    }
}

/// Measurement vector `k` matching the rows of `C`.
pub fn measurement_vector(measurements: &MeasurementSet) -> Vec<f64> {
    measurements
        .probes
        .iter()
        .map(|p| p.value)
        .chain(measurements.polarimetry_chords().map(|(_, c)| c.alpha))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisKind;
    use crate::fem::Quadrature;
    use crate::geometry::plasma_domain;

    fn square() -> Mesh {
        Mesh::rectangle(1.0, 3.0, -1.0, 1.0, 8, 8).unwrap()
    }

    fn loops_from(mesh: &Mesh, n: usize, f: impl Fn(f64) -> f64) -> Vec<FluxLoop> {
        let p = mesh.perimeter();
        (0..n)
            .map(|k| {
                let s = p * k as f64 / n as f64;
                FluxLoop { s, psi: f(s), sigma: 1.0 }
            })
            .collect()
    }

    #[test]
    fn constant_loops_give_constant_dirichlet() {
        let m = square();
        let h = interpolate_dirichlet(&loops_from(&m, 6, |_| 0.3), &m).unwrap();
        assert_eq!(h.len(), m.boundary_nodes().len());
        assert!(h.iter().all(|v| (v - 0.3).abs() < 1e-14));
    }

    #[test]
    fn loops_on_nodes_are_reproduced() {
        let m = square();
        let s = m.boundary_arclength();
        let loops: Vec<FluxLoop> = (0..s.len())
            .step_by(4)
            .map(|k| FluxLoop { s: s[k], psi: (k as f64).sin(), sigma: 1.0 })
            .collect();
        let h = interpolate_dirichlet(&loops, &m).unwrap();
        for k in (0..s.len()).step_by(4) {
            assert!((h[k] - (k as f64).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_is_interpolated_within_one_percent() {
        let rings: Vec<(f64, usize)> = (1..=4).map(|k| (0.2 * k as f64, 16 * k)).collect();
        let m = Mesh::polar_disk(Point::new(2.4, 0.0), &rings, None).unwrap();
        assert_eq!(m.boundary_nodes().len(), 64);
        let p = m.perimeter();
        let f = |s: f64| (2.0 * std::f64::consts::PI * s / p).sin() + 0.5 * (4.0 * std::f64::consts::PI * s / p).cos();
        let h = interpolate_dirichlet(&loops_from(&m, 16, f), &m).unwrap();
        for (k, &s) in m.boundary_arclength().iter().enumerate() {
            assert!((h[k] - f(s)).abs() <= 0.01 * 1.5, "{} vs {}", h[k], f(s));
        }
    }

    #[test]
    fn loop_errors() {
        let m = square();
        assert!(interpolate_dirichlet(&loops_from(&m, 3, |_| 0.0), &m).is_err());
        let mut l = loops_from(&m, 5, |_| 0.0);
        l[1].s = l[0].s + m.perimeter();
        assert!(interpolate_dirichlet(&l, &m).is_err());
    }

    fn probe(r: f64, z: f64, n: [f64; 2]) -> Probe {
        Probe { r, z, normal: n, value: 0.0, sigma: 1.0 }
    }

    #[test]
    fn probe_readings() {
        let m = square();
        let probes = [probe(2.0, 1.0, [0.0, 1.0]), probe(3.0, 0.3, [1.0, 0.0]), probe(1.0, -0.2, [-1.0, 0.0])];
        let c = probe_rows(&m, &probes).unwrap();
        let constant = DVector::from_element(m.node_count(), 4.0);
        assert!((&c * constant).amax() < 1e-12);
        let z = PsiField::from_fn(&m, |p| p.z).unwrap();
        let zv = DVector::from_column_slice(z.values());
        let r = &c * zv;
        assert!((r[0] - 0.5).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12);
        assert!(probe_rows(&m, &[probe(2.0, 0.0, [1.0, 0.0])]).is_err());
    }

    #[test]
    fn chord_in_one_triangle() {
        let m = Mesh::parse("nodes 3 triangles 1 boundary 3 limiter 0\n1 0\n2 0\n1 1\n0 1 2\n0\n1\n2\n").unwrap();
        let chord = Chord::straight(Point::new(0.5, 0.25), Point::new(3.0, 0.25));
        let q = chord_quadrature(&m, &chord, ChordRule::Gauss2).unwrap();
        let total: f64 = q.iter().map(|p| p.weight).sum();
        assert!((total - 0.75).abs() < 1e-14);
        let outside = Chord::straight(Point::new(5.0, 5.0), Point::new(6.0, 5.0));
        assert!(chord_quadrature(&m, &outside, ChordRule::Gauss2).is_err());
    }

    #[test]
    fn chord_along_shared_edges_is_counted_once() {
        let m = square();
        // Runs along the grid line z = 0.
        let chord = Chord::straight(Point::new(0.0, 0.0), Point::new(4.0, 0.0));
        for rule in [ChordRule::Gauss2, ChordRule::Midpoint] {
            let q = chord_quadrature(&m, &chord, rule).unwrap();
            let total: f64 = q.iter().map(|p| p.weight).sum();
            assert!((total - 2.0).abs() < 1e-12, "{total}");
        }
    }

    fn plasma_setup() -> (Mesh, PsiField, PlasmaDomain) {
        let rings: Vec<(f64, usize)> = (1..=8).map(|k| (0.1 * k as f64, 8 * k)).collect();
        let m = Mesh::polar_disk(Point::new(2.4, 0.0), &rings, Some(6)).unwrap();
        let psi = PsiField::from_fn(&m, |p| 1.0 - (p.r - 2.4).powi(2) - p.z.powi(2)).unwrap();
        let dom = plasma_domain(&m, &Quadrature::new(&m), &psi).unwrap();
        (m, psi, dom)
    }

    #[test]
    fn interferometry_rows() {
        let (m, psi, dom) = plasma_setup();
        let fam = BasisFamily::uniform(BasisKind::CubicBSpline, 6).unwrap();
        let outside = chord_quadrature(&m, &Chord::straight(Point::new(3.1, -0.8), Point::new(3.1, 0.8)), ChordRule::Gauss2).unwrap();
        let through = chord_quadrature(&m, &Chord::straight(Point::new(2.4, -0.8), Point::new(2.4, 0.8)), ChordRule::Gauss2).unwrap();
        let mm = interferometry_matrix(&m, &[&outside, &through], &psi, &dom, &fam);
        assert!(mm.row(0).iter().all(|&v| v == 0.0));
        assert!(mm.iter().all(|&v| v >= 0.0));
        let in_plasma: f64 = through
            .iter()
            .filter(|cp| chord_psibar(&m, psi.values(), &dom, cp).is_some())
            .map(|cp| cp.weight)
            .sum();
        let pred: f64 = mm.row(1).iter().sum();
        assert!((pred - in_plasma).abs() < 1e-12);
        // Limiter ring at radius 0.7.
        assert!((in_plasma - 1.4).abs() < 0.05, "{in_plasma}");
    }

    #[test]
    fn polarimetry_zero_cases() {
        let (m, psi, dom) = plasma_setup();
        let fam = BasisFamily::uniform(BasisKind::CubicBSpline, 6).unwrap();
        let q = chord_quadrature(&m, &Chord::straight(Point::new(2.5, -0.8), Point::new(2.5, 0.8)), ChordRule::Gauss2).unwrap();
        let zero = polarimetry_rows(&m, &[&q], &[0.0; 6], &fam, &psi, &dom).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let rows = polarimetry_rows(&m, &[&q], &[1.0; 6], &fam, &psi, &dom).unwrap();
        let ones = DVector::from_element(m.node_count(), 1.0);
        assert!((&rows * ones).amax() < 1e-12);
        assert!(polarimetry_rows(&m, &[&q], &[1.0; 5], &fam, &psi, &dom).is_err());
    }

    #[test]
    fn weights() {
        let mut set = MeasurementSet {
            version: 1,
            flux_loops: vec![],
            probes: vec![probe(1.0, 0.0, [1.0, 0.0]), probe(1.0, 0.0, [1.0, 0.0])],
            chords: vec![Chord::straight(Point::new(0.0, 0.0), Point::new(1.0, 0.0))],
            plasma_current: 1.0,
        };
        assert_eq!(weight_matrix(&set, 1.0).unwrap(), vec![1.0; 3]);
        set.probes[1].sigma = 2.0;
        assert_eq!(weight_matrix(&set, 0.0).unwrap(), vec![1.0, 0.25, 0.0]);
        set.probes[0].sigma = 0.0;
        assert!(weight_matrix(&set, 1.0).is_err());
    }

    #[test]
    fn json_round_trip_and_version() {
        let set = MeasurementSet {
            version: 1,
            flux_loops: vec![FluxLoop { s: 0.1, psi: -0.2, sigma: 1e-3 }],
            probes: vec![probe(2.0, 1.0, [0.0, 1.0])],
            chords: vec![Chord::straight(Point::new(2.0, -1.0), Point::new(2.0, 1.0))],
            plasma_current: 1e6,
        };
        let back = MeasurementSet::from_json(&set.to_json()).unwrap();
        assert_eq!(back, set);
        let bad = set.to_json().replace("\"version\": 1", "\"version\": 2");
        assert!(MeasurementSet::from_json(&bad).is_err());
        assert!(matches!(MeasurementSet::from_json("{\n\"version\": "), Err(Error::Parse { line: 2, .. })));
    }
}
