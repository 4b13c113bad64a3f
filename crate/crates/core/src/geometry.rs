//! Magnetic axis, X-point, plasma boundary flux, flux normalization, the
//! plasma domain and flux-surface contours.
//!
//! Flux is assumed maximal on the magnetic axis. Critical points of the P1
//! interpolant sit on mesh vertices; their positions and values are refined
//! with a least-squares quadratic fit over the vertex 1-ring.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::Quadrature;
use crate::mesh::{Mesh, Point, PsiField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub point: Point,
    pub psi: f64,
    /// Node holding the discrete maximum.
    pub node: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XPoint {
    pub point: Point,
    pub psi: f64,
    pub node: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Limiter,
    XPoint,
}

/// Quadratic `c0 + c1 dx + c2 dz + c3 dx² + c4 dx dz + c5 dz²` in local,
/// scaled coordinates around `origin`.
#[derive(Clone, Debug)]
struct QuadraticFit {
    origin: Point,
    scale: f64,
    c: [f64; 6],
    /// Largest distance from the origin to a fitted node.
    radius: f64,
}

impl QuadraticFit {
    fn value(&self, p: Point) -> f64 {
        let (x, z) = ((p.r - self.origin.r) / self.scale, (p.z - self.origin.z) / self.scale);
        let c = &self.c;
        c[0] + c[1] * x + c[2] * z + c[3] * x * x + c[4] * x * z + c[5] * z * z
    }

    fn hessian_det(&self) -> f64 {
        4.0 * self.c[3] * self.c[5] - self.c[4] * self.c[4]
    }

    fn is_concave(&self) -> bool {
        self.c[3] < 0.0 && self.hessian_det() > 0.0
    }

    /// Stationary point of the fit, if the Hessian is invertible.
    fn stationary_point(&self) -> Option<Point> {
        let c = &self.c;
        let det = self.hessian_det();
        let scale = (c[3].abs() + c[4].abs() + c[5].abs()).powi(2);
        if det.abs() <= 1e-12 * scale || scale == 0.0 {
            return None;
        }
        // [2c3 c4; c4 2c5] d = -[c1; c2]
        let dx = (-c[1] * 2.0 * c[5] + c[2] * c[4]) / det;
        let dz = (-c[2] * 2.0 * c[3] + c[1] * c[4]) / det;
        Some(Point::new(
            self.origin.r + dx * self.scale,
            self.origin.z + dz * self.scale,
        ))
    }
}

fn fit_patch(mesh: &Mesh, psi: &[f64], node: usize) -> Option<QuadraticFit> {
    let mut patch: Vec<usize> = std::iter::once(node)
        .chain(mesh.node_neighbors(node).iter().copied())
        .collect();
    if patch.len() < 7 {
        let mut second: Vec<usize> = patch
            .iter()
            .flat_map(|&v| mesh.node_neighbors(v).iter().copied())
            .collect();
        second.sort_unstable();
        second.dedup();
        for v in second {
            if !patch.contains(&v) {
                patch.push(v);
            }
        }
    }
    if patch.len() < 6 {
        return None;
    }
    let origin = mesh.node(node);
    let radius = patch
        .iter()
        .map(|&v| mesh.node(v).dist(origin))
        .fold(0.0, f64::max);
    let scale = radius;
    let mut a = DMatrix::zeros(patch.len(), 6);
    let mut b = DVector::zeros(patch.len());
    for (row, &v) in patch.iter().enumerate() {
        let p = mesh.node(v);
        let (x, z) = ((p.r - origin.r) / scale, (p.z - origin.z) / scale);
        let basis = [1.0, x, z, x * x, x * z, z * z];
        for (k, val) in basis.iter().enumerate() {
            a[(row, k)] = *val;
        }
        b[row] = psi[v];
    }
    let svd = a.svd(true, true);
    let sol = svd.solve(&b, 1e-10).ok()?;
    Some(QuadraticFit {
        origin,
        scale,
        c: [sol[0], sol[1], sol[2], sol[3], sol[4], sol[5]],
        radius,
    })
}

fn check_len(mesh: &Mesh, psi: &PsiField) -> Result<()> {
    if psi.len() != mesh.node_count() {
        return Err(Error::Dimension(format!(
            "field has {} values, mesh has {} nodes",
            psi.len(),
            mesh.node_count()
        )));
    }
    Ok(())
}

/// Locates the magnetic axis as the refined maximum of ψ.
pub fn find_axis(mesh: &Mesh, psi: &PsiField) -> Result<Axis> {
    check_len(mesh, psi)?;
    let v = psi.values();
    let mut best: Option<usize> = None;
    for i in 0..mesh.node_count() {
        if best.is_none_or(|b| v[i] > v[b]) {
            best = Some(i);
        }
    }
    let node = best.unwrap();
    let boundary_max = mesh
        .boundary_nodes()
        .iter()
        .map(|&b| v[b])
        .fold(f64::NEG_INFINITY, f64::max);
    if mesh.is_boundary(node) || boundary_max >= v[node] {
        return Err(Error::NoPlasma("flux maximum lies on the domain boundary".into()));
    }
    let nodal = Axis {
        point: mesh.node(node),
        psi: v[node],
        node,
    };
    let Some(fit) = fit_patch(mesh, v, node) else {
        return Ok(nodal);
    };
    if !fit.is_concave() {
        return Ok(nodal);
    }
    let Some(mut p) = fit.stationary_point() else {
        return Ok(nodal);
    };
    // Clamp into the node star.
    let star = mesh.node_triangles(node);
    let inside = |q: Point| {
        star.iter()
            .any(|&t| mesh.barycentric(t, q).iter().all(|&l| l >= -1e-12))
    };
    let mut tries = 0;
    while !inside(p) && tries < 30 {
        p = nodal.point.lerp(p, 0.5);
        tries += 1;
    }
    if !inside(p) {
        return Ok(nodal);
    }
    let value = fit.value(p).max(v[node]);
    Ok(Axis {
        point: p,
        psi: value,
        node,
    })
}

/// Cyclically ordered 1-ring of an interior node.
fn ordered_ring(mesh: &Mesh, node: usize) -> Vec<usize> {
    let c = mesh.node(node);
    let mut ring = mesh.node_neighbors(node).to_vec();
    ring.sort_by(|&a, &b| {
        let pa = mesh.node(a);
        let pb = mesh.node(b);
        let ta = (pa.z - c.z).atan2(pa.r - c.r);
        let tb = (pb.z - c.z).atan2(pb.r - c.r);
        ta.partial_cmp(&tb).unwrap()
    });
    ring
}

/// Interior nodes where the P1 interpolant has a saddle: the ring values
/// change sign relative to the centre at least four times.
fn discrete_saddles(mesh: &Mesh, v: &[f64]) -> Vec<usize> {
    (0..mesh.node_count())
        .filter(|&i| !mesh.is_boundary(i))
        .filter(|&i| {
            let ring = ordered_ring(mesh, i);
            let signs: Vec<bool> = ring.iter().map(|&w| v[w] >= v[i]).collect();
            let changes = (0..signs.len())
                .filter(|&k| signs[k] != signs[(k + 1) % signs.len()])
                .count();
            changes >= 4
        })
        .collect()
}

/// Saddle point of ψ with the largest flux, if any.
pub fn find_xpoint(mesh: &Mesh, psi: &PsiField) -> Option<XPoint> {
    if psi.len() != mesh.node_count() {
        return None;
    }
    let v = psi.values();
    let mut best: Option<XPoint> = None;
    for node in discrete_saddles(mesh, v) {
        let Some(fit) = fit_patch(mesh, v, node) else {
            continue;
        };
        if fit.hessian_det() >= 0.0 {
            continue;
        }
        let Some(p) = fit.stationary_point() else {
            continue;
        };
        // A small fitted gradient at the node means the stationary point is
        // inside the patch.
        if p.dist(fit.origin) > fit.radius {
            continue;
        }
        let cand = XPoint {
            point: p,
            psi: fit.value(p),
            node,
        };
        if best.is_none_or(|b| cand.psi > b.psi) {
            best = Some(cand);
        }
    }
    best
}

/// Plasma boundary flux: the larger of the limiter maximum and the X-point
/// flux. Equality resolves to the limiter.
pub fn compute_boundary_flux(
    mesh: &Mesh,
    psi: &PsiField,
    axis: &Axis,
    xpoint: Option<&XPoint>,
) -> Result<(f64, BoundaryKind)> {
    check_len(mesh, psi)?;
    let v = psi.values();
    let limiter = mesh
        .limiter_nodes()
        .iter()
        .map(|&l| v[l])
        .fold(f64::NEG_INFINITY, f64::max);
    let (psi_b, kind) = match xpoint {
        Some(x) if x.psi > limiter => (x.psi, BoundaryKind::XPoint),
        _ => (limiter, BoundaryKind::Limiter),
    };
    if !psi_b.is_finite() {
        return Err(Error::NoPlasma("no limiter nodes and no X-point".into()));
    }
    if psi_b >= axis.psi {
        return Err(Error::NoPlasma(format!(
            "boundary flux {psi_b} is not below the axis flux {}",
            axis.psi
        )));
    }
    Ok((psi_b, kind))
}

/// `(ψ − ψ_axis)/(ψ_b − ψ_axis)`, not clamped.
pub fn normalize_flux(psi: f64, psi_axis: f64, psi_b: f64) -> Result<f64> {
    if psi_b == psi_axis {
        return Err(Error::NoPlasma("boundary flux equals axis flux".into()));
    }
    Ok((psi - psi_axis) / (psi_b - psi_axis))
}

/// The plasma region at quadrature-point resolution.
#[derive(Clone, Debug)]
pub struct PlasmaDomain {
    pub psi_axis: f64,
    pub axis_point: Point,
    pub psi_b: f64,
    pub boundary_kind: BoundaryKind,
    pub xpoint: Option<Point>,
    /// Per triangle, per quadrature point plasma indicator.
    pub quad_membership: Vec<[bool; 3]>,
    /// Triangles of the axis-connected component that touch the plasma.
    pub component: Vec<bool>,
    pub axis_triangle: usize,
}

impl PlasmaDomain {
    pub fn psibar(&self, psi: f64) -> f64 {
        (psi - self.psi_axis) / (self.psi_b - self.psi_axis)
    }

    pub fn marked_points(&self) -> usize {
        self.quad_membership
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn plasma_area(&self, quad: &Quadrature) -> f64 {
        self.quad_membership
            .iter()
            .enumerate()
            .map(|(t, m)| quad.weight(t) * m.iter().filter(|&&b| b).count() as f64)
            .sum()
    }

    pub fn in_component(&self, t: usize) -> bool {
        self.component[t]
    }
}

/// Breadth-first flood fill over edge neighbors restricted to `allowed`.
pub(crate) fn flood_fill(mesh: &Mesh, start: usize, allowed: &[bool]) -> Vec<bool> {
    let mut seen = vec![false; mesh.triangle_count()];
    if !allowed[start] {
        return seen;
    }
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(t) = queue.pop_front() {
        for nb in mesh.triangle_neighbors(t).into_iter().flatten() {
            if allowed[nb] && !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    seen
}

/// Marks quadrature points with `ψ ≥ ψ_b` that belong to the edge-connected
/// component of plasma-touching triangles containing the axis.
pub fn plasma_mask(
    mesh: &Mesh,
    quad: &Quadrature,
    psi: &PsiField,
    axis: &Axis,
    psi_b: f64,
    boundary_kind: BoundaryKind,
    xpoint: Option<Point>,
) -> Result<PlasmaDomain> {
    check_len(mesh, psi)?;
    let v = psi.values();
    let nt = mesh.triangle_count();
    let raw: Vec<[bool; 3]> = (0..nt)
        .map(|t| quad.interpolate(mesh, t, v).map(|q| q >= psi_b))
        .collect();
    let touching: Vec<bool> = raw.iter().map(|m| m.iter().any(|&b| b)).collect();
    let mut axis_triangle = mesh.locate(axis.point)?;
    if !touching[axis_triangle] {
        if let Some(&t) = mesh.node_triangles(axis.node).iter().find(|&&t| touching[t]) {
            axis_triangle = t;
        }
    }
    let component = flood_fill(mesh, axis_triangle, &touching);
    let quad_membership: Vec<[bool; 3]> = raw
        .iter()
        .zip(&component)
        .map(|(m, &c)| if c { *m } else { [false; 3] })
        .collect();
    if !quad_membership.iter().any(|m| m.iter().any(|&b| b)) {
        return Err(Error::EmptyPlasma);
    }
    Ok(PlasmaDomain {
        psi_axis: axis.psi,
        axis_point: axis.point,
        psi_b,
        boundary_kind,
        xpoint,
        quad_membership,
        component,
        axis_triangle,
    })
}

/// Axis, X-point, boundary flux and plasma mask in one pass.
pub fn plasma_domain(mesh: &Mesh, quad: &Quadrature, psi: &PsiField) -> Result<PlasmaDomain> {
    let axis = find_axis(mesh, psi)?;
    let xp = find_xpoint(mesh, psi).filter(|x| x.psi < axis.psi);
    let (psi_b, kind) = compute_boundary_flux(mesh, psi, &axis, xp.as_ref())?;
    let xpoint = match kind {
        BoundaryKind::XPoint => xp.map(|x| x.point),
        BoundaryKind::Limiter => None,
    };
    plasma_mask(mesh, quad, psi, &axis, psi_b, kind, xpoint)
}

/// +1 when the field has an interior maximum dominating its boundary values,
/// −1 when instead an interior minimum dominates (reversed current).
pub fn flux_orientation(mesh: &Mesh, psi: &PsiField) -> f64 {
    let v = psi.values();
    let (mut bmax, mut bmin) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut imax, mut imin) = (f64::NEG_INFINITY, f64::INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if mesh.is_boundary(i) {
            bmax = bmax.max(x);
            bmin = bmin.min(x);
        } else {
            imax = imax.max(x);
            imin = imin.min(x);
        }
    }
    if imax - bmax >= bmin - imin {
        1.0
    } else {
        -1.0
    }
}

/// Closed flux-surface polyline. `points.first() == points.last()` and
/// `triangles[k]` holds segment `points[k] → points[k+1]`.
#[derive(Clone, Debug)]
pub struct Contour {
    pub level: f64,
    pub points: Vec<Point>,
    pub triangles: Vec<usize>,
}

impl Contour {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// Shoelace area, positive for counterclockwise loops.
    pub fn signed_area(&self) -> f64 {
        polygon_area(&self.points)
    }
}

fn polygon_area(pts: &[Point]) -> f64 {
    0.5 * pts
        .windows(2)
        .map(|w| w[0].r * w[1].z - w[1].r * w[0].z)
        .sum::<f64>()
}

fn winding_number(pts: &[Point], p: Point) -> i32 {
    let mut wn = 0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let cross = (b.r - a.r) * (p.z - a.z) - (p.r - a.r) * (b.z - a.z);
        if a.z <= p.z {
            if b.z > p.z && cross > 0.0 {
                wn += 1;
            }
        } else if b.z <= p.z && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Marching-triangles contour at normalized level `level ∈ (0, 1]`, taken
/// from the axis-connected region and oriented counterclockwise.
pub fn flux_contour(
    mesh: &Mesh,
    psi: &PsiField,
    domain: &PlasmaDomain,
    level: f64,
) -> Result<Contour> {
    check_len(mesh, psi)?;
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Contour(format!("level {level} outside (0, 1]")));
    }
    let v = psi.values();
    let c = domain.psi_axis + level * (domain.psi_b - domain.psi_axis);
    let above = |i: usize| v[i] >= c;
    let nt = mesh.triangle_count();
    let reaching: Vec<bool> = (0..nt)
        .map(|t| mesh.triangle(t).iter().any(|&i| above(i)))
        .collect();
    let region = flood_fill(mesh, domain.axis_triangle, &reaching);

    let crossing = |a: usize, b: usize| -> Point {
        let (pa, pb) = (mesh.node(a), mesh.node(b));
        let t = (c - v[a]) / (v[b] - v[a]);
        pa.lerp(pb, t.clamp(0.0, 1.0))
    };
    // segment = (edge key, edge key, triangle)
    let mut segments: Vec<((usize, usize), (usize, usize), usize)> = Vec::new();
    let mut at_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut points: HashMap<(usize, usize), Point> = HashMap::new();
    for t in (0..nt).filter(|&t| region[t]) {
        let tri = mesh.triangle(t);
        let mut keys = Vec::with_capacity(2);
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if above(a) != above(b) {
                let key = (a.min(b), a.max(b));
                points.entry(key).or_insert_with(|| crossing(key.0, key.1));
                keys.push(key);
            }
        }
        if keys.len() == 2 {
            let id = segments.len();
            segments.push((keys[0], keys[1], t));
            at_edge.entry(keys[0]).or_default().push(id);
            at_edge.entry(keys[1]).or_default().push(id);
        }
    }
    if segments.is_empty() {
        return Err(Error::Contour(format!("no crossing at level {level}")));
    }

    let mut used = vec![false; segments.len()];
    let mut best: Option<(f64, Contour)> = None;
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first_key, mut key, t0) = segments[start];
        let mut pts = vec![points[&first_key], points[&key]];
        let mut tris = vec![t0];
        let mut closed = false;
        loop {
            if key == first_key {
                closed = true;
                break;
            }
            let next = at_edge[&key].iter().copied().find(|&s| !used[s]);
            let Some(s) = next else { break };
            used[s] = true;
            let (ka, kb, t) = segments[s];
            key = if ka == key { kb } else { ka };
            pts.push(points[&key]);
            tris.push(t);
        }
        if !closed {
            continue;
        }
        if winding_number(&pts, domain.axis_point) == 0 {
            continue;
        }
        let mut contour = Contour {
            level,
            points: pts,
            triangles: tris,
        };
        if contour.signed_area() < 0.0 {
            contour.points.reverse();
            contour.triangles.reverse();
        }
        dedup_contour(&mut contour);
        let len = contour.length();
        if best.as_ref().is_none_or(|(l, _)| len > *l) {
            best = Some((len, contour));
        }
    }
    best.map(|(_, c)| c).ok_or_else(|| {
        Error::Contour(format!("no closed contour around the axis at level {level}"))
    })
}

fn dedup_contour(c: &mut Contour) {
    let mut pts = Vec::with_capacity(c.points.len());
    let mut tris = Vec::with_capacity(c.triangles.len());
    pts.push(c.points[0]);
    for k in 0..c.triangles.len() {
        let p = c.points[k + 1];
        if p.dist(*pts.last().unwrap()) > 0.0 {
            pts.push(p);
            tris.push(c.triangles[k]);
        }
    }
    if pts.len() > 1 && pts[0] != *pts.last().unwrap() {
        // Closing vertex was dropped as a duplicate of its predecessor.
        pts.push(pts[0]);
        tris.push(*c.triangles.last().unwrap());
    }
    c.points = pts;
    c.triangles = tris;
}
