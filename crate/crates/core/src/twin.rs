//! Twin experiments: manufacture an equilibrium from known profiles, measure
//! it with synthetic sensors, reconstruct, and compare against the truth.

use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::fem::{Quadrature, StiffnessSystem};
use crate::geometry::{plasma_domain, PlasmaDomain};
use crate::mesh::{Mesh, Point, PsiField};
use crate::observations::{
    chord_quadrature, interferometry_matrix, interpolate_dirichlet, polarimetry_rows, probe_rows,
    Chord, ChordRule, FluxLoop, MeasurementSet, Probe, FORMAT_VERSION,
};
use crate::profiles::{eval_profile, uniform_grid, ProfileCoefficients};
use crate::reconstruction::{
    cold_start_flux, current_source_matrix, normalize_lambda, reconstruct, BasisSpec, Problem,
    Reconstruction, ReconstructionConfig,
};

/// Vacuum flux `ψ₀ − (B_v/2)(r² − R₀²)` used as boundary data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalFlux {
    pub psi0: f64,
    /// T
    pub vertical_field: f64,
}

impl ExternalFlux {
    pub fn eval(&self, p: Point, r0: f64) -> f64 {
        self.psi0 - 0.5 * self.vertical_field * (p.r * p.r - r0 * r0)
    }
}

/// Relative noise level per sensor family (0 = exact readings).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    #[serde(default)]
    pub flux_loops: f64,
    #[serde(default)]
    pub probes: f64,
    #[serde(default)]
    pub polarimetry: f64,
    #[serde(default)]
    pub interferometry: f64,
}

/// Probe placement without a reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSite {
    pub r: f64,
    pub z: f64,
    pub normal: [f64; 2],
}

/// True profiles, sensor layout, noise and seed of a synthetic experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// m⁻³
    pub c: Vec<f64>,
    pub basis: BasisSpec,
    pub plasma_current: f64,
    pub r0: f64,
    pub f_b: f64,
    pub external_flux: ExternalFlux,
    /// Arclength positions of the flux loops.
    pub flux_loops: Vec<f64>,
    pub probes: Vec<ProbeSite>,
    /// Chord polylines `[[r, z], …]`.
    pub chords: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub noise: NoiseLevels,
    pub seed: u64,
    /// Quadrature used to synthesize chord readings.
    #[serde(default)]
    pub synthesis_rule: ChordRule,
}

const RING_COUNTS: [usize; 11] = [8, 14, 20, 26, 32, 39, 45, 51, 56, 60, 60];

/// The 412-node, 762-triangle disk around (2.40, 0): nine inner rings, a
/// limiter ring at radius 0.73 and the boundary at 0.80.
pub fn twin_mesh() -> Mesh {
    let mut rings: Vec<(f64, usize)> = (1..=9).map(|k| (0.0733 * k as f64, RING_COUNTS[k - 1])).collect();
    rings.push((0.73, RING_COUNTS[9]));
    rings.push((0.80, RING_COUNTS[10]));
    Mesh::polar_disk(Point::new(2.40, 0.0), &rings, Some(9)).expect("twin mesh is valid")
}

impl TwinSpec {
    /// Reference experiment on [`twin_mesh`]: 32 probes at boundary edge
    /// midpoints, 20 flux loops, 5 vertical chords.
    pub fn standard(mesh: &Mesh) -> Self {
        let nb = mesh.boundary_nodes().len();
        let probes = (0..32)
            .map(|k| {
                let e = (k * nb) / 32;
                let a = mesh.node(mesh.boundary_nodes()[e]);
                let b = mesh.node(mesh.boundary_nodes()[(e + 1) % nb]);
                let mid = a.lerp(b, 0.5);
                let len = a.dist(b);
                // Counterclockwise loop: outward normal is the edge rotated clockwise.
                ProbeSite {
                    r: mid.r,
                    z: mid.z,
                    normal: [(b.z - a.z) / len, -(b.r - a.r) / len],
                }
            })
            .collect();
        let p = mesh.perimeter();
        let flux_loops = (0..20).map(|k| p * (k as f64 + 0.25) / 20.0).collect();
        let chords = [2.0, 2.2, 2.4, 2.6, 2.8]
            .iter()
            .map(|&r| vec![[r, -1.0], [r, 1.0]])
            .collect();
        let family = BasisFamily::uniform(BasisSpec::default().kind, BasisSpec::default().m)
            .expect("default basis is valid");
        // Affine in ψ̄: five chords cannot resolve curvature of a seven-term density.
        let c = family.affine_coefficients(4.0e19, -3.5e19);
        TwinSpec {
            a: vec![1.0, 0.95, 0.8, 0.55, 0.3, 0.1, 0.0],
            b: vec![1.0, 0.9, 0.7, 0.45, 0.2, 0.05, 0.0],
            c,
            basis: BasisSpec::default(),
            plasma_current: 1.0e6,
            r0: 2.40,
            f_b: 3.9 * 2.40,
            external_flux: ExternalFlux {
                psi0: 0.0,
                vertical_field: 0.02,
            },
            flux_loops,
            probes,
            chords,
            noise: NoiseLevels::default(),
            seed: 1,
            synthesis_rule: ChordRule::Gauss2,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("twin spec serializes");
        s.push('\n');
        s
    }

    pub fn family(&self) -> Result<BasisFamily> {
        BasisFamily::uniform(self.basis.kind, self.basis.m)
    }

    pub fn coefficients(&self) -> Result<ProfileCoefficients> {
        ProfileCoefficients::new(self.a.clone(), self.b.clone(), self.c.clone())
    }

    /// Noise-free flux-loop readings of the external field.
    pub fn loop_readings(&self, mesh: &Mesh) -> Vec<FluxLoop> {
        self.flux_loops
            .iter()
            .map(|&s| FluxLoop {
                s,
                psi: self.external_flux.eval(mesh.boundary_point_at(s), self.r0),
                sigma: 1.0,
            })
            .collect()
    }

    /// Configuration matching the spec (basis, R₀, f_b) with default weights.
    pub fn config(&self) -> ReconstructionConfig {
        let mut cfg = ReconstructionConfig::new(self.r0, self.f_b);
        cfg.basis = self.basis;
        cfg
    }
}

/// Converged forward equilibrium for fixed profiles.
#[derive(Clone, Debug)]
pub struct Truth {
    pub psi: PsiField,
    pub domain: PlasmaDomain,
    pub lambda: f64,
    pub coeffs: ProfileCoefficients,
    pub residuals: Vec<f64>,
}

const FORWARD_TOL: f64 = 1e-10;
const FORWARD_MAX_ITER: usize = 500;

/// Iterates the direct problem with fixed `A`, `B`, renormalizing λ each
/// pass, until the relative ψ change is at most 1e-10.
#[allow(clippy::too_many_arguments)]
pub fn manufacture_equilibrium(
    mesh: &Mesh,
    system: &StiffnessSystem,
    family: &BasisFamily,
    coeffs: &ProfileCoefficients,
    ip: f64,
    r0: f64,
    h: &[f64],
    initial: Option<PsiField>,
) -> Result<Truth> {
    let quad = Quadrature::new(mesh);
    let mut psi = match initial {
        Some(p) => p,
        None => cold_start_flux(mesh, &quad, system, h, ip)?,
    };
    let u = DVector::from_vec(coeffs.u());
    let mut residuals = Vec::new();
    for _ in 0..FORWARD_MAX_ITER {
        let domain = plasma_domain(mesh, &quad, &psi)?;
        let lambda = normalize_lambda(coeffs, family, &domain, mesh, &quad, &psi, ip, r0)?;
        let y = current_source_matrix(mesh, &quad, &psi, &domain, family, lambda, r0)?;
        let source = &y * &u;
        let next = system.solve_direct(source.as_slice(), h)?;
        let res = next.relative_difference(&psi);
        residuals.push(res);
        psi = next;
        if res <= FORWARD_TOL {
            let domain = plasma_domain(mesh, &quad, &psi)?;
            let lambda = normalize_lambda(coeffs, family, &domain, mesh, &quad, &psi, ip, r0)?;
            return Ok(Truth {
                psi,
                domain,
                lambda,
                coeffs: coeffs.clone(),
                residuals,
            });
        }
        if !res.is_finite() || res > 1e3 {
            break;
        }
    }
    let tail: Vec<String> = residuals.iter().rev().take(8).rev().map(|r| format!("{r:.3e}")).collect();
    Err(Error::Numerical(format!(
        "forward iteration did not converge after {} passes; last residuals [{}]",
        residuals.len(),
        tail.join(", ")
    )))
}

/// Manufactures the truth of `spec` on `mesh`.
pub fn manufacture(mesh: &Mesh, system: &StiffnessSystem, spec: &TwinSpec) -> Result<Truth> {
    let h = interpolate_dirichlet(&spec.loop_readings(mesh), mesh)?;
    manufacture_equilibrium(
        mesh,
        system,
        &spec.family()?,
        &spec.coefficients()?,
        spec.plasma_current,
        spec.r0,
        &h,
        None,
    )
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Per-family σ and noisy readings: σ = level·RMS when noisy, 1 % of RMS
/// otherwise (used only as a weight).
fn perturb(values: &[f64], level: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let scale = rms(values);
    let sigma = if level > 0.0 { level * scale } else { 0.01 * scale };
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    if level > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite σ");
        (values.iter().map(|v| v + normal.sample(rng)).collect(), sigma)
    } else {
        (values.to_vec(), sigma)
    }
}

/// Evaluates every sensor of `spec` on the truth and adds seeded noise.
pub fn synthesize_measurements(mesh: &Mesh, truth: &Truth, spec: &TwinSpec) -> Result<MeasurementSet> {
    let family = spec.family()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // The truth's boundary values are the spline through these readings.
    let loops_exact: Vec<f64> = spec.loop_readings(mesh).iter().map(|l| l.psi).collect();
    let probes: Vec<Probe> = spec
        .probes
        .iter()
        .map(|p| Probe {
            r: p.r,
            z: p.z,
            normal: p.normal,
            value: 0.0,
            sigma: 1.0,
        })
        .collect();
    let pv = DVector::from_column_slice(truth.psi.values());
    let probe_exact: Vec<f64> = (probe_rows(mesh, &probes)? * &pv).iter().copied().collect();
    let chords: Vec<Chord> = spec
        .chords
        .iter()
        .map(|pts| Chord {
            points: pts.clone(),
            alpha: 0.0,
            beta: 0.0,
            sigma_alpha: 1.0,
            sigma_beta: 1.0,
            polarimetry: true,
            interferometry: true,
        })
        .collect();
    let quads = chords
        .iter()
        .map(|c| chord_quadrature(mesh, c, spec.synthesis_rule))
        .collect::<Result<Vec<_>>>()?;
    let qrefs: Vec<&[_]> = quads.iter().map(|q| q.as_slice()).collect();
    let alpha_exact: Vec<f64> = (polarimetry_rows(mesh, &qrefs, &spec.c, &family, &truth.psi, &truth.domain)? * &pv)
        .iter()
        .copied()
        .collect();
    let beta_exact: Vec<f64> = (interferometry_matrix(mesh, &qrefs, &truth.psi, &truth.domain, &family)
        * DVector::from_column_slice(&spec.c))
    .iter()
    .copied()
    .collect();

    let (loops, s_loop) = perturb(&loops_exact, spec.noise.flux_loops, &mut rng);
    let (probe_vals, s_probe) = perturb(&probe_exact, spec.noise.probes, &mut rng);
    let (alpha, s_alpha) = perturb(&alpha_exact, spec.noise.polarimetry, &mut rng);
    let (beta, s_beta) = perturb(&beta_exact, spec.noise.interferometry, &mut rng);

    Ok(MeasurementSet {
        version: FORMAT_VERSION,
        flux_loops: spec
            .flux_loops
            .iter()
            .zip(loops)
            .map(|(&s, psi)| FluxLoop { s, psi, sigma: s_loop })
            .collect(),
        probes: probes
            .into_iter()
            .zip(probe_vals)
            .map(|(p, value)| Probe { value, sigma: s_probe, ..p })
            .collect(),
        chords: chords
            .into_iter()
            .zip(alpha.into_iter().zip(beta))
            .map(|(c, (alpha, beta))| Chord {
                alpha,
                beta,
                sigma_alpha: s_alpha,
                sigma_beta: s_beta,
                ..c
            })
            .collect(),
        plasma_current: spec.plasma_current,
    })
}

/// Recovered against true profiles on the 101-point grid. `A` and `B` are
/// compared through the gauge-invariant products `λA`, `λB`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileErrors {
    pub a: f64,
    pub b: f64,
    pub ne: f64,
    pub psi: f64,
}

fn relative_l2(f: &[f64], g: &[f64]) -> f64 {
    let num: f64 = f.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = g.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

pub fn profile_errors(
    family: &BasisFamily,
    recovered: &ProfileCoefficients,
    lambda: f64,
    truth: &Truth,
    psi: &PsiField,
) -> Result<ProfileErrors> {
    let grid = uniform_grid(101);
    let sample = |c: &[f64], s: f64| -> Result<Vec<f64>> {
        grid.iter().map(|&x| Ok(s * eval_profile(c, family, x)?)).collect()
    };
    Ok(ProfileErrors {
        a: relative_l2(&sample(&recovered.a, lambda)?, &sample(&truth.coeffs.a, truth.lambda)?),
        b: relative_l2(&sample(&recovered.b, lambda)?, &sample(&truth.coeffs.b, truth.lambda)?),
        ne: relative_l2(&sample(&recovered.c, 1.0)?, &sample(&truth.coeffs.c, 1.0)?),
        psi: psi.relative_difference(&truth.psi),
    })
}

/// Outcome of a complete twin experiment.
#[derive(Debug)]
pub struct TwinRun {
    pub truth: Truth,
    pub measurements: MeasurementSet,
    pub problem: Problem,
    pub reconstruction: Reconstruction,
    pub errors: ProfileErrors,
}

/// Manufacture, synthesize, reconstruct from a cold start, compare.
pub fn run_twin(mesh: &Mesh, spec: &TwinSpec, config: ReconstructionConfig) -> Result<TwinRun> {
    let system = StiffnessSystem::new(mesh)?;
    let truth = manufacture(mesh, &system, spec)?;
    let measurements = synthesize_measurements(mesh, &truth, spec)?;
    let problem = Problem::with_system(mesh.clone(), system, &measurements, config)?;
    let reconstruction = reconstruct(&problem, None)?;
    let st = &reconstruction.state;
    let errors = profile_errors(&problem.family, &st.coeffs, st.lambda, &truth, &st.psi)?;
    Ok(TwinRun {
        truth,
        measurements,
        problem,
        reconstruction,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twin_mesh_sizes() {
        let m = twin_mesh();
        assert_eq!(m.node_count(), 412);
        assert_eq!(m.triangle_count(), 762);
        assert_eq!(m.boundary_nodes().len(), 60);
        assert_eq!(m.limiter_nodes().len(), 60);
    }

    #[test]
    fn standard_probes_lie_on_the_boundary() {
        let m = twin_mesh();
        let spec = TwinSpec::standard(&m);
        for p in &spec.probes {
            assert!(m.distance_to_boundary(Point::new(p.r, p.z)) < 1e-12);
            let outward = (p.r - 2.4) * p.normal[0] + p.z * p.normal[1];
            assert!(outward > 0.0);
        }
    }

    #[test]
    fn zero_profiles_cannot_be_manufactured() {
        let m = twin_mesh();
        let sys = StiffnessSystem::new(&m).unwrap();
        let mut spec = TwinSpec::standard(&m);
        spec.a = vec![0.0; 7];
        spec.b = vec![0.0; 7];
        assert!(manufacture(&m, &sys, &spec).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let m = twin_mesh();
        let spec = TwinSpec::standard(&m);
        assert_eq!(TwinSpec::from_json(&spec.to_json()).unwrap(), spec);
    }
}
