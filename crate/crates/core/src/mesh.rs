//! Triangulated poloidal cross-section and P1 field helpers.
//!
//! Text format (whitespace separated, `#` starts a comment):
//!
//! ```text
//! nodes N triangles T boundary B limiter L
//! r z            (N lines)
//! i j k          (T lines, 0-based, counterclockwise)
//! b              (B lines, boundary loop order)
//! l              (L lines, limiter nodes)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Barycentric slack used by point location.
const BARY_TOL: f64 = 1e-10;

/// A point of the poloidal (r, z) plane, in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub r: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(r: f64, z: f64) -> Self {
        Point { r, z }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.r - other.r).hypot(self.z - other.z)
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.r + t * (other.r - self.r),
            self.z + t * (other.z - self.z),
        )
    }
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.r - a.r) * (c.z - a.z) - (c.r - a.r) * (b.z - a.z))
}

#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_nodes: Vec<usize>,
    limiter_nodes: Vec<usize>,
    // derived topology
    areas: Vec<f64>,
    neighbors: Vec<[Option<usize>; 3]>,
    node_triangles: Vec<Vec<usize>>,
    node_neighbors: Vec<Vec<usize>>,
    on_boundary: Vec<bool>,
    boundary_arclength: Vec<f64>,
    perimeter: f64,
}

impl Mesh {
    /// Builds a mesh and validates every invariant eagerly.
    pub fn new(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_nodes: Vec<usize>,
        limiter_nodes: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n < 3 {
            return Err(Error::InvalidMesh(format!("{n} nodes, need at least 3")));
        }
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        for (i, p) in nodes.iter().enumerate() {
            if !p.r.is_finite() || !p.z.is_finite() {
                return Err(Error::InvalidMesh(format!("node {i} has non-finite coordinates")));
            }
            if p.r <= 0.0 {
                return Err(Error::InvalidMesh(format!("node {i} has r ≤ 0")));
            }
        }

        let mut areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references node {bad} (only {n} nodes)"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a node")));
            }
            let a = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::InvalidMesh(format!("triangle {t} has non-positive area")));
            }
            areas.push(a);
        }

        // Edge map: undirected edge -> (triangle, local edge) uses.
        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                edges.entry((a.min(b), a.max(b))).or_default().push((t, k));
            }
        }
        let mut neighbors = vec![[None; 3]; triangles.len()];
        let mut boundary_edge_count = 0usize;
        let mut edge_list: Vec<_> = edges.iter().collect();
        edge_list.sort_by_key(|(k, _)| **k);
        for (&(a, b), uses) in edge_list {
            match uses.as_slice() {
                [_] => boundary_edge_count += 1,
                [(t1, k1), (t2, k2)] => {
                    // Consistently oriented neighbors traverse a shared edge in opposite directions.
                    let d1 = triangles[*t1][(k1 + 1) % 3];
                    let d2 = triangles[*t2][(k2 + 1) % 3];
                    if d1 == d2 {
                        return Err(Error::InvalidMesh(format!(
                            "triangles {t1} and {t2} overlap across edge ({a}, {b})"
                        )));
                    }
                    neighbors[*t1][*k1] = Some(*t2);
                    neighbors[*t2][*k2] = Some(*t1);
                }
                more => {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) is shared by {} triangles",
                        more.len()
                    )));
                }
            }
        }

        let mut node_triangles = vec![Vec::new(); n];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                node_triangles[v].push(t);
            }
        }
        if let Some(i) = node_triangles.iter().position(|ts| ts.is_empty()) {
            return Err(Error::InvalidMesh(format!("node {i} belongs to no triangle")));
        }
        let mut node_neighbors = vec![Vec::new(); n];
        for (v, ts) in node_triangles.iter().enumerate() {
            let mut nb: Vec<usize> = ts
                .iter()
                .flat_map(|&t| triangles[t])
                .filter(|&w| w != v)
                .collect();
            nb.sort_unstable();
            nb.dedup();
            node_neighbors[v] = nb;
        }

        // Boundary loop.
        let nb = boundary_nodes.len();
        if nb < 3 {
            return Err(Error::InvalidMesh(format!("boundary loop has {nb} nodes, need at least 3")));
        }
        let mut on_boundary = vec![false; n];
        for (pos, &b) in boundary_nodes.iter().enumerate() {
            if b >= n {
                return Err(Error::InvalidMesh(format!("boundary entry {pos} references node {b}")));
            }
            if on_boundary[b] {
                return Err(Error::InvalidMesh(format!("boundary loop visits node {b} twice")));
            }
            on_boundary[b] = true;
        }
        for k in 0..nb {
            let a = boundary_nodes[k];
            let b = boundary_nodes[(k + 1) % nb];
            let ok = edges
                .get(&(a.min(b), a.max(b)))
                .is_some_and(|uses| uses.len() == 1);
            if !ok {
                return Err(Error::InvalidMesh(format!(
                    "boundary nodes {a} and {b} are not joined by a boundary edge"
                )));
            }
        }
        if boundary_edge_count != nb {
            return Err(Error::InvalidMesh(format!(
                "mesh has {boundary_edge_count} boundary edges but the boundary loop has {nb}"
            )));
        }
        let mut boundary_arclength = Vec::with_capacity(nb);
        let mut s = 0.0;
        for k in 0..nb {
            boundary_arclength.push(s);
            s += nodes[boundary_nodes[k]].dist(nodes[boundary_nodes[(k + 1) % nb]]);
        }

        for (pos, &l) in limiter_nodes.iter().enumerate() {
            if l >= n {
                return Err(Error::InvalidMesh(format!("limiter entry {pos} references node {l}")));
            }
        }

        Ok(Mesh {
            nodes,
            triangles,
            boundary_nodes,
            limiter_nodes,
            areas,
            neighbors,
            node_triangles,
            node_neighbors,
            on_boundary,
            boundary_arclength,
            perimeter: s,
        })
    }

    /// Parses the plain-text mesh format.
    pub fn parse(source: &str) -> Result<Self> {
        let mut lines = source
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty mesh file".into(),
        })?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        let expected = ["nodes", "triangles", "boundary", "limiter"];
        if tok.len() != 8 || (0..4).any(|k| tok[2 * k] != expected[k]) {
            return Err(Error::Parse {
                line: hline,
                msg: "expected header `nodes N triangles T boundary B limiter L`".into(),
            });
        }
        let count = |k: usize| -> Result<usize> {
            tok[2 * k + 1].parse().map_err(|_| Error::Parse {
                line: hline,
                msg: format!("bad {} count `{}`", expected[k], tok[2 * k + 1]),
            })
        };
        let (nn, nt, nb, nl) = (count(0)?, count(1)?, count(2)?, count(3)?);

        let mut next_fields = |what: &str, width: usize| -> Result<(usize, Vec<&str>)> {
            let (line, text) = lines.next().ok_or_else(|| Error::Parse {
                line: source.lines().count() + 1,
                msg: format!("unexpected end of file while reading {what}"),
            })?;
            let f: Vec<&str> = text.split_whitespace().collect();
            if f.len() != width {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {width} fields for {what}, found {}", f.len()),
                });
            }
            Ok((line, f))
        };
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse `{s}`"),
            })
        }

        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let (line, f) = next_fields("a node", 2)?;
            nodes.push(Point::new(num(line, f[0])?, num(line, f[1])?));
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, f) = next_fields("a triangle", 3)?;
            triangles.push([num(line, f[0])?, num(line, f[1])?, num(line, f[2])?]);
        }
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (line, f) = next_fields("a boundary node", 1)?;
            boundary.push(num(line, f[0])?);
        }
        let mut limiter = Vec::with_capacity(nl);
        for _ in 0..nl {
            let (line, f) = next_fields("a limiter node", 1)?;
            limiter.push(num(line, f[0])?);
        }
        if let Some((line, _)) = lines.next() {
            return Err(Error::Parse {
                line,
                msg: "trailing content after limiter list".into(),
            });
        }
        Mesh::new(nodes, triangles, boundary, limiter)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mesh::parse(&text)
    }

    /// Serializes to the text format with round-trip exact coordinates.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nodes {} triangles {} boundary {} limiter {}",
            self.nodes.len(),
            self.triangles.len(),
            self.boundary_nodes.len(),
            self.limiter_nodes.len()
        );
        for p in &self.nodes {
            let _ = writeln!(out, "{:?} {:?}", p.r, p.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        for b in &self.boundary_nodes {
            let _ = writeln!(out, "{b}");
        }
        for l in &self.limiter_nodes {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn limiter_nodes(&self) -> &[usize] {
        &self.limiter_nodes
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.on_boundary[node]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Area-weighted centroid of the domain.
    pub fn centroid(&self) -> Point {
        let (mut r, mut z) = (0.0, 0.0);
        for (t, tri) in self.triangles.iter().enumerate() {
            let c = self.triangle_centroid_of(tri);
            r += self.areas[t] * c.r;
            z += self.areas[t] * c.z;
        }
        let a = self.total_area();
        Point::new(r / a, z / a)
    }

    fn triangle_centroid_of(&self, tri: &[usize; 3]) -> Point {
        let [a, b, c] = tri.map(|v| self.nodes[v]);
        Point::new((a.r + b.r + c.r) / 3.0, (a.z + b.z + c.z) / 3.0)
    }

    pub fn triangle_centroid(&self, t: usize) -> Point {
        self.triangle_centroid_of(&self.triangles[t])
    }

    pub fn vertices(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.nodes[v])
    }

    /// Neighbor across the edge opposite local vertex `k`.
    pub fn neighbor(&self, t: usize, k: usize) -> Option<usize> {
        self.neighbors[t][k]
    }

    pub fn triangle_neighbors(&self, t: usize) -> [Option<usize>; 3] {
        self.neighbors[t]
    }

    pub fn node_triangles(&self, v: usize) -> &[usize] {
        &self.node_triangles[v]
    }

    /// Sorted 1-ring of node `v`.
    pub fn node_neighbors(&self, v: usize) -> &[usize] {
        &self.node_neighbors[v]
    }

    /// Arclength of each boundary loop node measured from `boundary_nodes()[0]`.
    pub fn boundary_arclength(&self) -> &[f64] {
        &self.boundary_arclength
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Point on the boundary loop at arclength `s` (taken modulo the perimeter).
    pub fn boundary_point_at(&self, s: f64) -> Point {
        let nb = self.boundary_nodes.len();
        let s = s.rem_euclid(self.perimeter);
        let k = match self
            .boundary_arclength
            .binary_search_by(|x| x.partial_cmp(&s).unwrap())
        {
            Ok(k) => k,
            Err(k) => k - 1,
        };
        let a = self.nodes[self.boundary_nodes[k]];
        let b = self.nodes[self.boundary_nodes[(k + 1) % nb]];
        let len = a.dist(b);
        a.lerp(b, (s - self.boundary_arclength[k]) / len)
    }

    /// Distance from `p` to the boundary polyline.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        let nb = self.boundary_nodes.len();
        (0..nb)
            .map(|k| {
                let a = self.nodes[self.boundary_nodes[k]];
                let b = self.nodes[self.boundary_nodes[(k + 1) % nb]];
                segment_distance(p, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest triangle edge length.
    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|tri| {
                (0..3).map(move |k| (tri[k], tri[(k + 1) % 3]))
            })
            .map(|(a, b)| self.nodes[a].dist(self.nodes[b]))
            .fold(0.0, f64::max)
    }

    /// Gradients of the three P1 hat functions of triangle `t`.
    pub fn hat_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.vertices(t);
        let two_area = 2.0 * self.areas[t];
        [
            [(b.z - c.z) / two_area, (c.r - b.r) / two_area],
            [(c.z - a.z) / two_area, (a.r - c.r) / two_area],
            [(a.z - b.z) / two_area, (b.r - a.r) / two_area],
        ]
    }

    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.vertices(t);
        let inv = 1.0 / (2.0 * self.areas[t]);
        let l0 = ((b.r - p.r) * (c.z - p.z) - (c.r - p.r) * (b.z - p.z)) * inv;
        let l1 = ((c.r - p.r) * (a.z - p.z) - (a.r - p.r) * (c.z - p.z)) * inv;
        [l0, l1, 1.0 - l0 - l1]
    }

    fn contains(&self, t: usize, p: Point) -> bool {
        self.barycentric(t, p).iter().all(|&l| l >= -BARY_TOL)
    }

    /// Index of the triangle containing `p`; on shared edges and vertices the
    /// lowest-index containing triangle wins.
    pub fn locate(&self, p: Point) -> Result<usize> {
        self.locate_from(p, 0)
    }

    /// Like [`Mesh::locate`] but starts the walk at triangle `hint`.
    pub fn locate_from(&self, p: Point, hint: usize) -> Result<usize> {
        let mut t = hint.min(self.triangles.len() - 1);
        let mut found = None;
        for _ in 0..self.triangles.len() {
            let bary = self.barycentric(t, p);
            let (k, &lmin) = bary
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            if lmin >= -BARY_TOL {
                found = Some(t);
                break;
            }
            match self.neighbors[t][k] {
                Some(next) => t = next,
                None => break,
            }
        }
        match found {
            Some(t) => {
                let bary = self.barycentric(t, p);
                if bary.iter().all(|&l| l > BARY_TOL) {
                    return Ok(t);
                }
                // On an edge or vertex: every other container shares a vertex with t.
                let best = self.triangles[t]
                    .iter()
                    .flat_map(|&v| self.node_triangles[v].iter().copied())
                    .filter(|&s| s < t && self.contains(s, p))
                    .min()
                    .unwrap_or(t);
                Ok(best)
            }
            None => (0..self.triangles.len())
                .find(|&s| self.contains(s, p))
                .ok_or(Error::OutsideMesh { r: p.r, z: p.z }),
        }
    }

    /// Piecewise-constant P1 gradient (∂ψ/∂r, ∂ψ/∂z) of triangle `t`.
    pub fn triangle_gradient(&self, t: usize, psi: &[f64]) -> [f64; 2] {
        let g = self.hat_gradients(t);
        let tri = self.triangles[t];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += psi[tri[k]] * g[k][0];
            out[1] += psi[tri[k]] * g[k][1];
        }
        out
    }

    /// Gradient of the P1 interpolant at `p`.
    pub fn gradient_at(&self, psi: &PsiField, p: Point) -> Result<[f64; 2]> {
        self.check_field(psi)?;
        let t = self.locate(p)?;
        Ok(self.triangle_gradient(t, psi.values()))
    }

    /// Value of the P1 interpolant at `p`.
    pub fn interpolate(&self, psi: &PsiField, p: Point) -> Result<f64> {
        self.check_field(psi)?;
        let t = self.locate(p)?;
        let bary = self.barycentric(t, p);
        let tri = self.triangles[t];
        Ok((0..3).map(|k| bary[k] * psi.values()[tri[k]]).sum())
    }

    fn check_field(&self, psi: &PsiField) -> Result<()> {
        if psi.len() != self.node_count() {
            return Err(Error::Dimension(format!(
                "field has {} values, mesh has {} nodes",
                psi.len(),
                self.node_count()
            )));
        }
        Ok(())
    }

    /// True when no triangle has an angle above 90 degrees.
    pub fn is_non_obtuse(&self) -> bool {
        (0..self.triangles.len()).all(|t| {
            let v = self.vertices(t);
            (0..3).all(|k| {
                let a = v[k];
                let b = v[(k + 1) % 3];
                let c = v[(k + 2) % 3];
                (b.r - a.r) * (c.r - a.r) + (b.z - a.z) * (c.z - a.z) >= -1e-14
            })
        })
    }

    /// Uniform rectangle split into `2·nr·nz` right triangles. The boundary loop
    /// runs counterclockwise from the lower-left corner; no limiter nodes.
    pub fn rectangle(
        r_min: f64,
        r_max: f64,
        z_min: f64,
        z_max: f64,
        nr: usize,
        nz: usize,
    ) -> Result<Self> {
        if nr == 0 || nz == 0 {
            return Err(Error::InvalidInput("rectangle needs at least one cell per side".into()));
        }
        let id = |i: usize, j: usize| j * (nr + 1) + i;
        let mut nodes = Vec::with_capacity((nr + 1) * (nz + 1));
        for j in 0..=nz {
            for i in 0..=nr {
                nodes.push(Point::new(
                    r_min + (r_max - r_min) * i as f64 / nr as f64,
                    z_min + (z_max - z_min) * j as f64 / nz as f64,
                ));
            }
        }
        let mut triangles = Vec::with_capacity(2 * nr * nz);
        for j in 0..nz {
            for i in 0..nr {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut boundary = Vec::with_capacity(2 * (nr + nz));
        boundary.extend((0..nr).map(|i| id(i, 0)));
        boundary.extend((0..nz).map(|j| id(nr, j)));
        boundary.extend((1..=nr).rev().map(|i| id(i, nz)));
        boundary.extend((1..=nz).rev().map(|j| id(0, j)));
        Mesh::new(nodes, triangles, boundary, Vec::new())
    }

    /// Disk of concentric node rings around `center`. `rings[k] = (radius, count)`
    /// with strictly increasing radii; the last ring is the boundary and
    /// `limiter_ring` (if any) selects the ring used as limiter.
    pub fn polar_disk(
        center: Point,
        rings: &[(f64, usize)],
        limiter_ring: Option<usize>,
    ) -> Result<Self> {
        if rings.is_empty() || rings.iter().any(|&(_, c)| c < 3) {
            return Err(Error::InvalidInput("polar disk needs rings of at least 3 nodes".into()));
        }
        let mut nodes = vec![center];
        let mut ring_ids: Vec<Vec<usize>> = Vec::with_capacity(rings.len());
        let mut ring_angles: Vec<Vec<f64>> = Vec::with_capacity(rings.len());
        for (k, &(radius, count)) in rings.iter().enumerate() {
            let offset = if k % 2 == 0 { 0.0 } else { 0.5 };
            let angles: Vec<f64> = (0..count)
                .map(|i| std::f64::consts::TAU * (i as f64 + offset) / count as f64)
                .collect();
            let mut ids = Vec::with_capacity(count);
            for &a in &angles {
                ids.push(nodes.len());
                nodes.push(Point::new(center.r + radius * a.cos(), center.z + radius * a.sin()));
            }
            ring_ids.push(ids);
            ring_angles.push(angles);
        }
        let mut triangles = Vec::new();
        let first = &ring_ids[0];
        for i in 0..first.len() {
            triangles.push([0, first[i], first[(i + 1) % first.len()]]);
        }
        for k in 0..rings.len() - 1 {
            let (ia, ib) = (&ring_ids[k], &ring_ids[k + 1]);
            let (aa, ab) = (&ring_angles[k], &ring_angles[k + 1]);
            let (na, nb) = (ia.len(), ib.len());
            let tau = std::f64::consts::TAU;
            // Outer ring walk starts at the node angularly closest to inner node 0.
            let j0 = (0..nb)
                .min_by(|&x, &y| {
                    let dx = (ab[x] - aa[0] + 0.5 * tau).rem_euclid(tau) - 0.5 * tau;
                    let dy = (ab[y] - aa[0] + 0.5 * tau).rem_euclid(tau) - 0.5 * tau;
                    dx.abs().partial_cmp(&dy.abs()).unwrap()
                })
                .unwrap();
            let inner_angle = |i: usize| aa[i % na] + tau * (i / na) as f64;
            let shift = tau * ((ab[j0] - aa[0]) / tau).round();
            let outer_angle = |j: usize| {
                let idx = j0 + j;
                ab[idx % nb] + tau * (idx / nb) as f64 - shift
            };
            let (mut i, mut j) = (0usize, 0usize);
            while i < na || j < nb {
                let a_here = ia[i % na];
                let b_here = ib[(j0 + j) % nb];
                let advance_inner = if i == na {
                    false
                } else if j == nb {
                    true
                } else {
                    inner_angle(i + 1) < outer_angle(j + 1)
                };
                if advance_inner {
                    triangles.push([a_here, ia[(i + 1) % na], b_here]);
                    i += 1;
                } else {
                    triangles.push([a_here, b_here, ib[(j0 + j + 1) % nb]]);
                    j += 1;
                }
            }
        }
        // Normalize orientation.
        for tri in &mut triangles {
            if signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]) < 0.0 {
                tri.swap(1, 2);
            }
        }
        let boundary = ring_ids.last().unwrap().clone();
        let limiter = limiter_ring.map(|k| ring_ids[k].clone()).unwrap_or_default();
        Mesh::new(nodes, triangles, boundary, limiter)
    }
}

pub(crate) fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dr, dz) = (b.r - a.r, b.z - a.z);
    let len2 = dr * dr + dz * dz;
    let t = if len2 > 0.0 {
        (((p.r - a.r) * dr + (p.z - a.z) * dz) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(a.lerp(b, t))
}

/// Nodal values of the poloidal flux (webers).
#[derive(Clone, Debug, PartialEq)]
pub struct PsiField {
    values: Vec<f64>,
}

impl PsiField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("flux value at node {i} is not finite")));
        }
        Ok(PsiField { values })
    }

    pub fn zeros(n: usize) -> Self {
        PsiField { values: vec![0.0; n] }
    }

    /// Samples `f` at every mesh node.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Result<Self> {
        PsiField::new(mesh.nodes().iter().map(|&p| f(p)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// ‖self − other‖₂ / ‖other‖₂.
    pub fn relative_difference(&self, other: &PsiField) -> f64 {
        let diff: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / other.norm()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> Mesh {
        Mesh::parse(
            "nodes 3 triangles 1 boundary 3 limiter 0\n1 0\n2 0\n1.5 1\n0 1 2\n0\n1\n2\n",
        )
        .unwrap()
    }

    #[test]
    fn smallest_valid_mesh() {
        let m = single();
        assert_eq!(m.node_count(), 3);
        assert_eq!(m.triangle_count(), 1);
        assert!((m.area(0) - 0.5).abs() < 1e-15);
        assert!((m.perimeter() - (1.0 + 2.0 * 1.25f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_radius() {
        let err = Mesh::parse("nodes 3 triangles 1 boundary 3 limiter 0\n0 0\n2 0\n1.5 1\n0 1 2\n0\n1\n2\n")
            .unwrap_err();
        assert!(err.to_string().contains("node 0 has r ≤ 0"), "{err}");
    }

    #[test]
    fn rejects_clockwise_triangle() {
        let err = Mesh::parse("nodes 3 triangles 1 boundary 3 limiter 0\n1 0\n2 0\n1.5 1\n0 2 1\n0\n1\n2\n")
            .unwrap_err();
        assert!(err.to_string().contains("triangle 0 has non-positive area"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Mesh::parse("nodes 3 triangles 1 boundary 3 limiter 0\n1 0\n2 x\n1.5 1\n0 1 2\n0\n1\n2\n")
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let err = Mesh::parse("nodes 3 triangles 1 boundary 3 limiter 0\n1 0\n2 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn rejects_broken_boundary_loop() {
        let m = Mesh::rectangle(1.0, 2.0, 0.0, 1.0, 2, 2).unwrap();
        let mut b = m.boundary_nodes().to_vec();
        b.swap(1, 2);
        let err = Mesh::new(m.nodes().to_vec(), m.triangles().to_vec(), b, vec![]).unwrap_err();
        assert!(err.to_string().contains("boundary"), "{err}");
        let b = m.boundary_nodes()[..5].to_vec();
        assert!(Mesh::new(m.nodes().to_vec(), m.triangles().to_vec(), b, vec![]).is_err());
    }

    #[test]
    fn rejects_edge_shared_by_three_triangles() {
        let nodes = vec![
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.5, 1.0),
            Point::new(1.5, -1.0),
            Point::new(1.5, 2.0),
        ];
        let tris = vec![[0, 1, 2], [0, 3, 1], [0, 1, 4]];
        let err = Mesh::new(nodes, tris, vec![0, 3, 1, 2], vec![]).unwrap_err();
        assert!(err.to_string().contains("shared by 3"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let m = Mesh::polar_disk(Point::new(2.0, 0.1), &[(0.3, 6), (0.6, 12)], Some(0)).unwrap();
        let back = Mesh::parse(&m.to_text()).unwrap();
        assert_eq!(back.nodes(), m.nodes());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.limiter_nodes(), m.limiter_nodes());
    }

    #[test]
    fn polar_disk_topology() {
        let m = Mesh::polar_disk(Point::new(3.0, 0.0), &[(0.2, 7), (0.4, 13), (0.6, 19)], None).unwrap();
        let n = m.node_count();
        let b = m.boundary_nodes().len();
        assert_eq!(m.triangle_count(), 2 * n - b - 2);
        let exact = std::f64::consts::PI * 0.36;
        assert!((m.total_area() - exact).abs() < 0.1 * exact);
    }

    #[test]
    fn locate_breaks_ties_by_lowest_index() {
        let m = Mesh::rectangle(1.0, 2.0, 0.0, 1.0, 4, 4).unwrap();
        for t in 0..m.triangle_count() {
            let c = m.triangle_centroid(t);
            assert_eq!(m.locate(c).unwrap(), t);
            assert_eq!(m.locate_from(c, m.triangle_count() - 1).unwrap(), t);
        }
        for v in 0..m.node_count() {
            let p = m.node(v);
            let expect = *m.node_triangles(v).iter().min().unwrap();
            assert_eq!(m.locate_from(p, 17).unwrap(), expect);
        }
        assert!(matches!(m.locate(Point::new(0.5, 0.5)), Err(Error::OutsideMesh { .. })));
    }

    #[test]
    fn gradient_of_linear_and_constant_fields() {
        let m = Mesh::polar_disk(Point::new(2.0, 0.0), &[(0.2, 6), (0.5, 12), (0.8, 18)], None).unwrap();
        let lin = PsiField::from_fn(&m, |p| 3.0 * p.r - 2.0 * p.z + 1.0).unwrap();
        let cst = PsiField::from_fn(&m, |_| 4.2).unwrap();
        for t in 0..m.triangle_count() {
            let c = m.triangle_centroid(t);
            let g = m.gradient_at(&lin, c).unwrap();
            assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12);
            let g0 = m.gradient_at(&cst, c).unwrap();
            assert!(g0[0].abs() < 1e-12 && g0[1].abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_affine_coefficients() {
        // Oracle: solve for the affine function through the three vertices directly.
        let m = Mesh::polar_disk(Point::new(2.0, 0.0), &[(0.2, 6), (0.5, 12)], None).unwrap();
        let vals: Vec<f64> = (0..m.node_count()).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let psi = PsiField::new(vals.clone()).unwrap();
        for t in 0..m.triangle_count() {
            let [a, b, c] = m.vertices(t);
            let tri = m.triangle(t);
            let (fa, fb, fc) = (vals[tri[0]], vals[tri[1]], vals[tri[2]]);
            let det = (b.r - a.r) * (c.z - a.z) - (c.r - a.r) * (b.z - a.z);
            let gr = ((fb - fa) * (c.z - a.z) - (fc - fa) * (b.z - a.z)) / det;
            let gz = ((b.r - a.r) * (fc - fa) - (c.r - a.r) * (fb - fa)) / det;
            let g = m.gradient_at(&psi, m.triangle_centroid(t)).unwrap();
            assert!((g[0] - gr).abs() < 1e-10 * (1.0 + gr.abs()));
            assert!((g[1] - gz).abs() < 1e-10 * (1.0 + gz.abs()));
        }
    }

    #[test]
    fn psi_field_rejects_non_finite() {
        assert!(PsiField::new(vec![1.0, f64::NAN]).is_err());
    }
}
