//! Fixed-point reconstruction: profile identification by regularized least
//! squares alternated with linear direct solves.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisKind, RegularizationMatrix};
use crate::error::{Error, Result};
use crate::fem::{Quadrature, StiffnessSystem, QUAD_BARY};
use crate::geometry::{plasma_domain, PlasmaDomain};
use crate::mesh::{Mesh, Point, PsiField};
use crate::observations::{
    interferometry_matrix, interpolate_dirichlet, measurement_vector, weight_matrix, ChordRule,
    MeasurementSet, SensorModel,
};
use crate::profiles::{attach_safety_factor, derived_profiles, uniform_grid, DerivedProfiles, ProfileCoefficients};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FullConvergence,
    /// At most this many iterations (1 or 2).
    RealTime(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub m: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec {
            kind: BasisKind::CubicBSpline,
            m: 7,
        }
    }
}

fn default_k() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    5e-5
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    30
}
fn default_mode() -> Mode {
    Mode::FullConvergence
}
fn default_density_scale() -> f64 {
    1e19
}
fn default_cold_start_eps() -> f64 {
    10.0
}

/// Reconstruction settings. `r0` and `f_b` have no defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    #[serde(default = "default_k")]
    pub k1: f64,
    #[serde(default = "default_k")]
    pub k2: f64,
    #[serde(default = "default_eps")]
    pub eps1: f64,
    #[serde(default = "default_eps")]
    pub eps2: f64,
    #[serde(default = "default_eps")]
    pub eps3: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Major radius (m).
    pub r0: f64,
    /// Vacuum `f = B₀R₀` (T·m).
    pub f_b: f64,
    #[serde(default)]
    pub basis: BasisSpec,
    /// Density unit (m⁻³) in which `ε₃` penalizes the curvature of `n_e`.
    #[serde(default = "default_density_scale")]
    pub density_scale: f64,
    /// Profile regularization of the first iteration after a cold start.
    #[serde(default = "default_cold_start_eps")]
    pub cold_start_eps: f64,
}

impl ReconstructionConfig {
    pub fn new(r0: f64, f_b: f64) -> Self {
        ReconstructionConfig {
            k1: default_k(),
            k2: default_k(),
            eps1: default_eps(),
            eps2: default_eps(),
            eps3: default_eps(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            mode: default_mode(),
            r0,
            f_b,
            basis: BasisSpec::default(),
            density_scale: default_density_scale(),
            cold_start_eps: default_cold_start_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.tol > 0.0) {
            return bad(format!("tol = {} must be positive", self.tol));
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1".into());
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2), ("eps3", self.eps3), ("k1", self.k1), ("k2", self.k2), ("cold_start_eps", self.cold_start_eps)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be finite and ≥ 0"));
            }
        }
        if !(self.r0 > 0.0) {
            return bad(format!("r0 = {} must be positive", self.r0));
        }
        if !self.f_b.is_finite() || self.f_b == 0.0 {
            return bad("f_b must be finite and nonzero".into());
        }
        if !(self.density_scale > 0.0) {
            return bad("density_scale must be positive".into());
        }
        if let Mode::RealTime(k) = self.mode {
            if !(1..=2).contains(&k) {
                return bad(format!("real-time mode allows 1 or 2 iterations, got {k}"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ReconstructionConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn family(&self) -> Result<BasisFamily> {
        BasisFamily::uniform(self.basis.kind, self.basis.m)
    }

    /// Iteration cap implied by the mode.
    pub fn iteration_cap(&self) -> usize {
        match self.mode {
            Mode::FullConvergence => self.max_iter,
            Mode::RealTime(k) => k.min(self.max_iter),
        }
    }
}

/// `(ψ, Ω_p, coefficients, λ)` after some number of iterations.
#[derive(Clone, Debug)]
pub struct EquilibriumState {
    pub psi: PsiField,
    pub domain: PlasmaDomain,
    pub coeffs: ProfileCoefficients,
    pub lambda: f64,
    pub iteration: usize,
}

/// ψ̄ at the quadrature points of every triangle, with the plasma indicator.
fn quad_psibar(mesh: &Mesh, quad: &Quadrature, psi: &PsiField, domain: &PlasmaDomain) -> Vec<[f64; 3]> {
    (0..mesh.triangle_count())
        .map(|t| quad.interpolate(mesh, t, psi.values()).map(|v| domain.psibar(v)))
        .collect()
}

/// `Y` (n × 2m): columns `λ(r/R₀)Φ_j(ψ̄)` then `λ(R₀/r)Φ_j(ψ̄)` tested against
/// the hat functions over the plasma; boundary rows are zero.
pub fn current_source_matrix(
    mesh: &Mesh,
    quad: &Quadrature,
    psi: &PsiField,
    domain: &PlasmaDomain,
    family: &BasisFamily,
    lambda: f64,
    r0: f64,
) -> Result<DMatrix<f64>> {
    if domain.marked_points() == 0 {
        return Err(Error::EmptyPlasma);
    }
    let m = family.dim();
    let mut y = DMatrix::zeros(mesh.node_count(), 2 * m);
    let psibar = quad_psibar(mesh, quad, psi, domain);
    let mut phi = vec![0.0; m];
    for t in 0..mesh.triangle_count() {
        let member = domain.quad_membership[t];
        if !member.iter().any(|&b| b) {
            continue;
        }
        let tri = mesh.triangle(t);
        let w = quad.weight(t);
        for (q, p) in quad.points(t).iter().enumerate() {
            if !member[q] {
                continue;
            }
            family.eval_into(psibar[t][q].clamp(0.0, 1.0), &mut phi);
            let (sa, sb) = (lambda * w * p.r / r0, lambda * w * r0 / p.r);
            for (k, &node) in tri.iter().enumerate() {
                let v = QUAD_BARY[q][k];
                for j in 0..m {
                    y[(node, j)] += sa * phi[j] * v;
                    y[(node, m + j)] += sb * phi[j] * v;
                }
            }
        }
    }
    for &b in mesh.boundary_nodes() {
        y.row_mut(b).fill(0.0);
    }
    Ok(y)
}

/// `∫_{Ω_p} [(r/R₀)A + (R₀/r)B] dΩ`.
pub fn bracket_integral(
    coeffs: &ProfileCoefficients,
    family: &BasisFamily,
    domain: &PlasmaDomain,
    mesh: &Mesh,
    quad: &Quadrature,
    psi: &PsiField,
    r0: f64,
) -> f64 {
    let psibar = quad_psibar(mesh, quad, psi, domain);
    let mut phi = vec![0.0; family.dim()];
    let mut total = 0.0;
    for t in 0..mesh.triangle_count() {
        for (q, p) in quad.points(t).iter().enumerate() {
            if !domain.quad_membership[t][q] {
                continue;
            }
            family.eval_into(psibar[t][q].clamp(0.0, 1.0), &mut phi);
            let a: f64 = coeffs.a.iter().zip(&phi).map(|(c, f)| c * f).sum();
            let b: f64 = coeffs.b.iter().zip(&phi).map(|(c, f)| c * f).sum();
            total += quad.weight(t) * ((p.r / r0) * a + (r0 / p.r) * b);
        }
    }
    total
}

/// `λ = I_p / ∫_{Ω_p}[(r/R₀)A + (R₀/r)B] dΩ`.
#[allow(clippy::too_many_arguments)]
pub fn normalize_lambda(
    coeffs: &ProfileCoefficients,
    family: &BasisFamily,
    domain: &PlasmaDomain,
    mesh: &Mesh,
    quad: &Quadrature,
    psi: &PsiField,
    ip: f64,
    r0: f64,
) -> Result<f64> {
    let integral = bracket_integral(coeffs, family, domain, mesh, quad, psi, r0);
    if integral == 0.0 || !integral.is_finite() {
        return Err(Error::Numerical(format!(
            "plasma current integral {integral} cannot be normalized"
        )));
    }
    Ok(ip / integral)
}

/// Symmetric positive definite solve with an eigenvalue diagnostic on failure.
fn spd_solve(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let norm = a.amax();
    let fail = |a: DMatrix<f64>| {
        let min = a.symmetric_eigen().eigenvalues.min();
        Error::Singular {
            msg: format!("{what} is not positive definite"),
            min_eigenvalue: min,
        }
    };
    match a.clone().cholesky() {
        Some(ch) => {
            // Reject numerically singular systems.
            let diag_min = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if diag_min * diag_min <= 1e-15 * norm {
                return Err(fail(a));
            }
            Ok(ch.solve(&b))
        }
        None => Err(fail(a)),
    }
}

/// `n_e` coefficients (m⁻³) from the interferometry readings:
/// `(MᵀD_βM + ε₃Λ₁/s²)c = MᵀD_β β` with `D_β = K₂/σ_β²` and `s` the density
/// scale.
pub fn estimate_density(
    m_mat: &DMatrix<f64>,
    beta: &[f64],
    sigma_beta: &[f64],
    k2: f64,
    eps3: f64,
    lambda1: &DMatrix<f64>,
    scale: f64,
) -> Result<Vec<f64>> {
    let (rows, m) = m_mat.shape();
    if beta.len() != rows || sigma_beta.len() != rows || lambda1.nrows() != m {
        return Err(Error::Dimension("density system shapes disagree".into()));
    }
    if rows == 0 {
        return Err(Error::InvalidInput("no active interferometry chord".into()));
    }
    // Work with c̃ = c/s.
    let mut wm = m_mat * scale;
    let mut wb = DVector::from_column_slice(beta);
    for i in 0..rows {
        if !(sigma_beta[i] > 0.0) {
            return Err(Error::InvalidInput(format!("chord {i}: σ_β ≤ 0")));
        }
        let d = (k2).sqrt() / sigma_beta[i];
        wm.row_mut(i).scale_mut(d);
        wb[i] *= d;
    }
    let lhs = wm.transpose() * &wm + lambda1 * eps3;
    let rhs = wm.transpose() * wb;
    let c = spd_solve(lhs, rhs, "density normal matrix")?;
    Ok(c.iter().map(|v| v * scale).collect())
}

/// Weighted least-squares system `Ẽu ≈ F̃` with penalty `uᵀRu/2`.
#[derive(Clone, Debug)]
pub struct NormalEquation {
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    pub reg: DMatrix<f64>,
}

impl NormalEquation {
    /// Forms `E = CK⁻¹Y` through `W = K⁻ᵀCᵀ` (one transpose solve per row of
    /// `C`), `F = k − CK⁻¹H`, and applies `D^{1/2}` to both.
    pub fn assemble(
        c: &DMatrix<f64>,
        system: &StiffnessSystem,
        y: &DMatrix<f64>,
        h: &[f64],
        k: &[f64],
        d: &[f64],
        reg: DMatrix<f64>,
    ) -> Result<Self> {
        let (l, n) = c.shape();
        if n != system.dim() || y.nrows() != n || h.len() != n || k.len() != l || d.len() != l {
            return Err(Error::Dimension(format!(
                "normal equation shapes: C {l}×{n}, K {0}×{0}, Y {1}×{2}, H {3}, k {4}, D {5}",
                system.dim(),
                y.nrows(),
                y.ncols(),
                h.len(),
                k.len(),
                d.len()
            )));
        }
        if reg.nrows() != y.ncols() {
            return Err(Error::Dimension("regularization size differs from Y columns".into()));
        }
        let mut w = DMatrix::zeros(n, l);
        for i in 0..l {
            let row: Vec<f64> = c.row(i).iter().copied().collect();
            w.set_column(i, &DVector::from_vec(system.solve_transpose(&row)));
        }
        let wt = w.transpose();
        let mut e = &wt * y;
        let mut f = DVector::from_column_slice(k) - &wt * DVector::from_column_slice(h);
        for i in 0..l {
            if d[i] < 0.0 {
                return Err(Error::InvalidInput(format!("negative weight in row {i}")));
            }
            let s = d[i].sqrt();
            e.row_mut(i).scale_mut(s);
            f[i] *= s;
        }
        Ok(NormalEquation { e, f, reg })
    }

    /// `½‖Ẽu − F̃‖² + ½uᵀRu`.
    pub fn cost(&self, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        let r = &self.e * &u - &self.f;
        0.5 * r.norm_squared() + 0.5 * u.dot(&(&self.reg * &u))
    }

    /// `Ẽᵀ(Ẽu − F̃) + Ru`.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let u = DVector::from_column_slice(u);
        let g = self.e.transpose() * (&self.e * &u - &self.f) + &self.reg * &u;
        g.iter().copied().collect()
    }

    pub fn lhs(&self) -> DMatrix<f64> {
        self.e.transpose() * &self.e + &self.reg
    }

    pub fn rhs(&self) -> DVector<f64> {
        self.e.transpose() * &self.f
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        let u = spd_solve(self.lhs(), self.rhs(), "normal matrix")?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite profile coefficients".into()));
        }
        Ok(u.iter().copied().collect())
    }
}

/// Everything fixed for a given mesh, measurement frame and configuration.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: Mesh,
    pub quad: Quadrature,
    pub system: StiffnessSystem,
    pub family: BasisFamily,
    pub lambda_reg: RegularizationMatrix,
    pub config: ReconstructionConfig,
    /// Readings with the flux sign normalized so that `I_p > 0`.
    pub measurements: MeasurementSet,
    /// −1 when the input plasma current was negative and readings were flipped.
    pub sign: f64,
    pub sensors: SensorModel,
    /// Dirichlet values in boundary-loop order.
    pub h: Vec<f64>,
    /// `H`: `h` on the Dirichlet rows, zero elsewhere.
    pub h_vector: Vec<f64>,
    pub k: Vec<f64>,
    pub d: Vec<f64>,
}

impl Problem {
    pub fn new(mesh: Mesh, measurements: &MeasurementSet, config: ReconstructionConfig) -> Result<Self> {
        let system = StiffnessSystem::new(&mesh)?;
        Self::with_system(mesh, system, measurements, config)
    }

    /// Reuses an existing factorization of the mesh stiffness matrix.
    pub fn with_system(
        mesh: Mesh,
        system: StiffnessSystem,
        measurements: &MeasurementSet,
        config: ReconstructionConfig,
    ) -> Result<Self> {
        config.validate()?;
        measurements.validate(&mesh)?;
        if system.dim() != mesh.node_count() {
            return Err(Error::Dimension("stiffness system does not match the mesh".into()));
        }
        let sign = measurements.plasma_current.signum();
        let measurements = if sign < 0.0 {
            measurements.flipped()
        } else {
            measurements.clone()
        };
        let family = config.family()?;
        let lambda_reg = family.regularization_matrix();
        let quad = Quadrature::new(&mesh);
        let sensors = SensorModel::new(&mesh, &measurements, ChordRule::Gauss2)?;
        let h = interpolate_dirichlet(&measurements.flux_loops, &mesh)?;
        let h_vector = system.dirichlet_vector(&h)?;
        let k = measurement_vector(&measurements);
        let d = weight_matrix(&measurements, config.k1)?;
        Ok(Problem {
            mesh,
            quad,
            system,
            family,
            lambda_reg,
            config,
            measurements,
            sign,
            sensors,
            h,
            h_vector,
            k,
            d,
        })
    }

    pub fn plasma_current(&self) -> f64 {
        self.measurements.plasma_current
    }

    /// `n_e` coefficients from the interferometry chords on the given state.
    pub fn density(&self, psi: &PsiField, domain: &PlasmaDomain) -> Result<Vec<f64>> {
        let quads = self.sensors.interferometry_quadrature();
        let m_mat = interferometry_matrix(&self.mesh, &quads, psi, domain, &self.family);
        let chords: Vec<_> = self.measurements.interferometry_chords().map(|(_, c)| c).collect();
        let beta: Vec<f64> = chords.iter().map(|c| c.beta).collect();
        let sigma: Vec<f64> = chords.iter().map(|c| c.sigma_beta).collect();
        estimate_density(
            &m_mat,
            &beta,
            &sigma,
            self.config.k2,
            self.config.eps3,
            self.lambda_reg.block(),
            self.config.density_scale,
        )
    }

    /// State with λ renormalized on its own domain.
    pub fn state(
        &self,
        psi: PsiField,
        coeffs: ProfileCoefficients,
        iteration: usize,
    ) -> Result<EquilibriumState> {
        let domain = plasma_domain(&self.mesh, &self.quad, &psi)?;
        let lambda = normalize_lambda(
            &coeffs,
            &self.family,
            &domain,
            &self.mesh,
            &self.quad,
            &psi,
            self.plasma_current(),
            self.config.r0,
        )?;
        Ok(EquilibriumState {
            psi,
            domain,
            coeffs,
            lambda,
            iteration,
        })
    }

    /// Starting point without a previous frame: flux of a uniform current
    /// `I_p` in a centered disk of radius ⅓·√(area/π), affine profiles.
    pub fn cold_start(&self) -> Result<EquilibriumState> {
        let psi = cold_start_flux(&self.mesh, &self.quad, &self.system, &self.h, self.plasma_current())?;
        let m = self.family.dim();
        let affine = self.family.affine_coefficients(1.0, -1.0);
        let coeffs = ProfileCoefficients::new(affine.clone(), affine, vec![0.0; m])?;
        self.state(psi, coeffs, 0)
    }

    /// `∫_{Ω_p} j_φ dΩ` for a state.
    pub fn total_current(&self, state: &EquilibriumState) -> f64 {
        state.lambda
            * bracket_integral(
                &state.coeffs,
                &self.family,
                &state.domain,
                &self.mesh,
                &self.quad,
                &state.psi,
                self.config.r0,
            )
    }

    /// One optimisation step followed by one direct solve.
    pub fn step(&self, state: &EquilibriumState) -> Result<EquilibriumState> {
        self.step_with(state, self.config.eps1, self.config.eps2)
    }

    /// [`Problem::step`] with the profile regularization weights overridden.
    pub fn step_with(&self, state: &EquilibriumState, eps1: f64, eps2: f64) -> Result<EquilibriumState> {
        let next = state.iteration + 1;
        self.step_inner(state, eps1, eps2).map_err(|e| e.at_iteration(next))
    }

    fn step_inner(&self, state: &EquilibriumState, eps1: f64, eps2: f64) -> Result<EquilibriumState> {
        let mesh = &self.mesh;
        let cfg = &self.config;
        let mut coeffs = state.coeffs.clone();
        // (i) density first
        if !self.sensors.interferometry.is_empty() {
            coeffs.c = self.density(&state.psi, &state.domain)?;
        }
        // (ii) operators at frozen ψ̄ⁿ
        let c = self
            .sensors
            .observation_matrix(mesh, &coeffs.c, &self.family, &state.psi, &state.domain)?;
        let y = current_source_matrix(mesh, &self.quad, &state.psi, &state.domain, &self.family, state.lambda, cfg.r0)?;
        // (iii) profiles
        let reg = self.lambda_reg.weighted(eps1, eps2);
        let ne = NormalEquation::assemble(&c, &self.system, &y, &self.h_vector, &self.k, &self.d, reg)?;
        let u = ne.solve()?;
        coeffs.set_u(&u);
        // (iv) λ on the current domain
        let lambda = normalize_lambda(
            &coeffs,
            &self.family,
            &state.domain,
            mesh,
            &self.quad,
            &state.psi,
            self.plasma_current(),
            cfg.r0,
        )?;
        // (v) direct problem with the source frozen at ψ̄ⁿ
        let uv = DVector::from_vec(u);
        let source = &y * uv * (lambda / state.lambda);
        let psi = self
            .system
            .solve_direct(source.as_slice(), &self.h)?;
        // (vi) new domain, λ renormalized on it
        self.state(psi, coeffs, state.iteration + 1)
    }
}

/// Predicted against measured readings of one sensor family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyMisfit {
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FamilyMisfit {
    /// `‖predicted − measured‖ / ‖measured‖`.
    pub fn relative(&self) -> f64 {
        let num: f64 = self.predicted.iter().zip(&self.measured).map(|(p, m)| (p - m).powi(2)).sum();
        let den: f64 = self.measured.iter().map(|m| m * m).sum();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// `|predicted_i − measured_i| / |measured_i|` per sensor.
    pub fn per_sensor(&self) -> Vec<f64> {
        self.predicted
            .iter()
            .zip(&self.measured)
            .map(|(p, m)| (p - m).abs() / m.abs())
            .collect()
    }

    /// `Σ ((predicted − measured)/σ)²`.
    pub fn chi_squared(&self) -> f64 {
        self.predicted
            .iter()
            .zip(&self.measured)
            .zip(&self.sigma)
            .map(|((p, m), s)| ((p - m) / s).powi(2))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.measured.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measured.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Misfits {
    pub flux_loops: FamilyMisfit,
    pub probes: FamilyMisfit,
    pub polarimetry: FamilyMisfit,
    pub interferometry: FamilyMisfit,
}

impl Problem {
    /// Readings predicted by a state against the (sign-normalized) data.
    pub fn misfits(&self, state: &EquilibriumState) -> Result<Misfits> {
        let meas = &self.measurements;
        let psi = &state.psi;
        let loops = FamilyMisfit {
            predicted: meas
                .flux_loops
                .iter()
                .map(|l| self.mesh.interpolate(psi, self.mesh.boundary_point_at(l.s)))
                .collect::<Result<_>>()?,
            measured: meas.flux_loops.iter().map(|l| l.psi).collect(),
            sigma: meas.flux_loops.iter().map(|l| l.sigma).collect(),
        };
        let pv = DVector::from_column_slice(psi.values());
        let probes = FamilyMisfit {
            predicted: (&self.sensors.probe_rows * &pv).iter().copied().collect(),
            measured: meas.probes.iter().map(|p| p.value).collect(),
            sigma: meas.probes.iter().map(|p| p.sigma).collect(),
        };
        let pol_rows = crate::observations::polarimetry_rows(
            &self.mesh,
            &self.sensors.polarimetry_quadrature(),
            &state.coeffs.c,
            &self.family,
            psi,
            &state.domain,
        )?;
        let pol_chords: Vec<_> = meas.polarimetry_chords().map(|(_, c)| c).collect();
        let polarimetry = FamilyMisfit {
            predicted: (pol_rows * &pv).iter().copied().collect(),
            measured: pol_chords.iter().map(|c| c.alpha).collect(),
            sigma: pol_chords.iter().map(|c| c.sigma_alpha).collect(),
        };
        let m_mat = interferometry_matrix(
            &self.mesh,
            &self.sensors.interferometry_quadrature(),
            psi,
            &state.domain,
            &self.family,
        );
        let int_chords: Vec<_> = meas.interferometry_chords().map(|(_, c)| c).collect();
        let interferometry = FamilyMisfit {
            predicted: (m_mat * DVector::from_column_slice(&state.coeffs.c)).iter().copied().collect(),
            measured: int_chords.iter().map(|c| c.beta).collect(),
            sigma: int_chords.iter().map(|c| c.sigma_beta).collect(),
        };
        Ok(Misfits {
            flux_loops: loops,
            probes,
            polarimetry,
            interferometry,
        })
    }
}

/// Flux of a uniform current `ip` in a disk around the mesh centroid.
pub fn cold_start_flux(
    mesh: &Mesh,
    quad: &Quadrature,
    system: &StiffnessSystem,
    h: &[f64],
    ip: f64,
) -> Result<PsiField> {
    let center = mesh.centroid();
    let radius = (mesh.total_area() / std::f64::consts::PI).sqrt() / 3.0;
    let inside = |p: Point| p.dist(center) <= radius;
    let mut area = 0.0;
    for t in 0..mesh.triangle_count() {
        area += quad.points(t).iter().filter(|p| inside(**p)).count() as f64 * quad.weight(t);
    }
    if area == 0.0 {
        return Err(Error::InvalidMesh("cold-start disk contains no quadrature point".into()));
    }
    let j = ip / area;
    let y = crate::fem::load_vector(mesh, quad, |p| if inside(p) { j } else { 0.0 });
    system.solve_direct(&y, h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterReached,
}

/// Per-iteration record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub psi_residual: f64,
    pub a_residual: f64,
    pub b_residual: f64,
    pub lambda: f64,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceHistory {
    pub records: Vec<IterationRecord>,
    pub status: Status,
}

impl ConvergenceHistory {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn psi_residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.psi_residual).collect()
    }

    pub fn mean_wall_time(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.wall_time).sum::<f64>() / self.records.len() as f64
    }
}

fn relative_change(new: &[f64], old: &[f64], s_new: f64, s_old: f64) -> f64 {
    let num: f64 = new.iter().zip(old).map(|(a, b)| (s_new * a - s_old * b).powi(2)).sum();
    let den: f64 = new.iter().map(|a| (s_new * a).powi(2)).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub state: EquilibriumState,
    pub history: ConvergenceHistory,
    /// Physical profiles in the sign convention of the input data.
    pub derived: DerivedProfiles,
}

/// Iterates [`Problem::step`] until the relative ψ change drops below `tol`
/// or the iteration cap is reached.
///
/// From a cold start the regularization is relaxed geometrically, from
/// `cold_start_eps` by a decade per iteration down to `eps1`, `eps2`; the
/// run cannot stop before the target weights are reached.
pub fn reconstruct(problem: &Problem, initial: Option<EquilibriumState>) -> Result<Reconstruction> {
    let cfg = &problem.config;
    let cold = initial.is_none();
    let mut state = match initial {
        Some(s) => {
            // Renormalize a carried-over state for this frame's current.
            let coeffs = s.coeffs.clone();
            problem.state(s.psi, coeffs, 0)?
        }
        None => problem.cold_start()?,
    };
    let cap = problem.config.iteration_cap();
    let mut records = Vec::new();
    let mut status = Status::MaxIterReached;
    for _ in 0..cap {
        let (eps1, eps2) = if cold {
            let relax = cfg.cold_start_eps * 0.1f64.powi(state.iteration as i32);
            (cfg.eps1.max(relax), cfg.eps2.max(relax))
        } else {
            (cfg.eps1, cfg.eps2)
        };
        let ramping = eps1 != cfg.eps1 || eps2 != cfg.eps2;
        let start = Instant::now();
        let next = problem.step_with(&state, eps1, eps2)?;
        let wall_time = start.elapsed().as_secs_f64();
        let psi_residual = next.psi.relative_difference(&state.psi);
        if !psi_residual.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite ψ residual at iteration {}",
                next.iteration
            )));
        }
        records.push(IterationRecord {
            iteration: next.iteration,
            psi_residual,
            a_residual: relative_change(&next.coeffs.a, &state.coeffs.a, next.lambda, state.lambda),
            b_residual: relative_change(&next.coeffs.b, &state.coeffs.b, next.lambda, state.lambda),
            lambda: next.lambda,
            wall_time,
        });
        state = next;
        if psi_residual <= cfg.tol && !ramping {
            status = Status::Converged;
            break;
        }
    }
    let derived = physical_profiles(problem, &state)?;
    Ok(Reconstruction {
        state,
        history: ConvergenceHistory { records, status },
        derived,
    })
}

/// Derived profiles on the 101-point grid, in the input sign convention.
pub fn physical_profiles(problem: &Problem, state: &EquilibriumState) -> Result<DerivedProfiles> {
    let cfg = &problem.config;
    let mut d = derived_profiles(
        &state.coeffs,
        &problem.family,
        state.lambda,
        cfg.r0,
        cfg.f_b,
        &uniform_grid(101),
        state.domain.psi_axis,
        state.domain.psi_b,
    )?;
    attach_safety_factor(&mut d, &problem.mesh, &state.psi, &state.domain);
    if problem.sign < 0.0 {
        d.pprime.iter_mut().for_each(|v| *v = -*v);
        d.ffprime.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(d)
}
