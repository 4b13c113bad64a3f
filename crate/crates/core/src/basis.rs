//! Reduced bases on [0, 1] for the profile functions and their curvature penalty.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DIM: usize = 4;
pub const MAX_DIM: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    PiecewiseLinear,
    CubicBSpline,
}

/// A partition-of-unity basis `Φ_1 … Φ_m` on [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct BasisFamily {
    kind: BasisKind,
    m: usize,
    /// Strictly increasing breakpoints from 0 to 1.
    breakpoints: Vec<f64>,
    /// Clamped knot vector (cubic only).
    knots: Vec<f64>,
}

impl BasisFamily {
    /// Basis of dimension `m` on uniform breakpoints.
    pub fn uniform(kind: BasisKind, m: usize) -> Result<Self> {
        if !(MIN_DIM..=MAX_DIM).contains(&m) {
            return Err(Error::InvalidInput(format!(
                "basis dimension {m} outside [{MIN_DIM}, {MAX_DIM}]"
            )));
        }
        let nbreak = match kind {
            BasisKind::PiecewiseLinear => m,
            BasisKind::CubicBSpline => m - 2,
        };
        let breakpoints = (0..nbreak).map(|i| i as f64 / (nbreak - 1) as f64).collect();
        BasisFamily::with_breakpoints(kind, breakpoints)
    }

    pub fn with_breakpoints(kind: BasisKind, breakpoints: Vec<f64>) -> Result<Self> {
        let ok_ends = breakpoints.first() == Some(&0.0) && breakpoints.last() == Some(&1.0);
        let increasing = breakpoints.windows(2).all(|w| w[1] > w[0]);
        if !ok_ends || !increasing {
            return Err(Error::InvalidInput(
                "breakpoints must increase strictly from 0 to 1".into(),
            ));
        }
        let m = match kind {
            BasisKind::PiecewiseLinear => breakpoints.len(),
            BasisKind::CubicBSpline => breakpoints.len() + 2,
        };
        if !(MIN_DIM..=MAX_DIM).contains(&m) {
            return Err(Error::InvalidInput(format!(
                "basis dimension {m} outside [{MIN_DIM}, {MAX_DIM}]"
            )));
        }
        let knots = match kind {
            BasisKind::PiecewiseLinear => Vec::new(),
            BasisKind::CubicBSpline => {
                let mut k = vec![0.0; 3];
                k.extend_from_slice(&breakpoints);
                k.extend_from_slice(&[1.0; 3]);
                k
            }
        };
        Ok(BasisFamily {
            kind,
            m,
            breakpoints,
            knots,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Full clamped knot vector of the cubic family (empty for hats).
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn check(&self, x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("basis argument {x} outside [0, 1]")))
        }
    }

    /// `(Φ_1(x), …, Φ_m(x))`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; self.m];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Writes basis values into `out` (length `m`); `x` is clamped to [0, 1].
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let x = x.clamp(0.0, 1.0);
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.kind {
            BasisKind::PiecewiseLinear => {
                let k = self.interval(x);
                let (a, b) = (self.breakpoints[k], self.breakpoints[k + 1]);
                let t = (x - a) / (b - a);
                out[k] = 1.0 - t;
                out[k + 1] = t;
            }
            BasisKind::CubicBSpline => {
                let span = self.interval(x) + 3;
                let d = self.spline_ders(span, x);
                out[span - 3..=span].copy_from_slice(&d[0]);
            }
        }
    }

    /// `(Φ″_1(x), …, Φ″_m(x))`. Hat functions have zero second derivative
    /// almost everywhere and return zeros.
    pub fn eval_second_derivative(&self, x: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; self.m];
        if self.kind == BasisKind::CubicBSpline {
            let span = self.interval(x) + 3;
            let d = self.spline_ders(span, x);
            out[span - 3..=span].copy_from_slice(&d[2]);
        }
        Ok(out)
    }

    /// Index `k` of the breakpoint interval `[b_k, b_{k+1}]` holding `x`.
    fn interval(&self, x: f64) -> usize {
        let last = self.breakpoints.len() - 2;
        match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&x).unwrap())
        {
            Ok(k) => k.min(last),
            Err(k) => (k - 1).min(last),
        }
    }

    /// Nonzero cubic basis values and first two derivatives on knot span
    /// `span` (`knots[span] ≤ x < knots[span+1]`).
    fn spline_ders(&self, span: usize, x: f64) -> [[f64; 4]; 3] {
        const P: usize = 3;
        let u = &self.knots;
        let mut ndu = [[0.0f64; P + 1]; P + 1];
        let mut left = [0.0f64; P + 1];
        let mut right = [0.0f64; P + 1];
        ndu[0][0] = 1.0;
        for j in 1..=P {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = [[0.0f64; P + 1]; 3];
        for j in 0..=P {
            ders[0][j] = ndu[j][P];
        }
        for r in 0..=P as isize {
            let mut a = [[0.0f64; P + 1]; 2];
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=2isize {
                let mut d = 0.0;
                let rk = r - k;
                let pk = P as isize - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if r - 1 <= pk { k - 1 } else { P as isize - r };
                for j in j1..=j2 {
                    let (ju, rkj) = (j as usize, (rk + j) as usize);
                    a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                    d += a[s2][ju] * ndu[rkj][pk as usize];
                }
                if r <= pk {
                    let ku = k as usize;
                    a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                    d += a[s2][ku] * ndu[r as usize][pk as usize];
                }
                ders[k as usize][r as usize] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = P as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (P - k) as f64;
        }
        ders
    }

    /// Abscissae `ξ_i` such that `Σ_i (α + β ξ_i) Φ_i(x) = α + β x`.
    pub fn greville(&self) -> Vec<f64> {
        match self.kind {
            BasisKind::PiecewiseLinear => self.breakpoints.clone(),
            BasisKind::CubicBSpline => (0..self.m)
                .map(|i| (self.knots[i + 1] + self.knots[i + 2] + self.knots[i + 3]) / 3.0)
                .collect(),
        }
    }

    /// Coefficients reproducing the affine function `x ↦ α + β x`.
    pub fn affine_coefficients(&self, alpha: f64, beta: f64) -> Vec<f64> {
        self.greville().into_iter().map(|xi| alpha + beta * xi).collect()
    }

    /// Curvature penalty Gram matrix.
    ///
    /// Cubic splines: exact `∫₀¹ Φ″_i Φ″_j dx`. Hats: Gram matrix of the
    /// divided second differences of the coefficient sequence at interior
    /// breakpoints, weighted by the local dual cell length.
    pub fn regularization_matrix(&self) -> RegularizationMatrix {
        let m = self.m;
        let mut lam = DMatrix::zeros(m, m);
        match self.kind {
            BasisKind::CubicBSpline => {
                // Φ″ is linear on each span, so 2-point Gauss–Legendre is exact.
                let g = 0.5 / 3f64.sqrt();
                for k in 0..self.breakpoints.len() - 1 {
                    let (a, b) = (self.breakpoints[k], self.breakpoints[k + 1]);
                    let (mid, half) = (0.5 * (a + b), b - a);
                    for x in [mid - g * half, mid + g * half] {
                        let d = self.spline_ders(k + 3, x);
                        for i in 0..4 {
                            for j in 0..4 {
                                lam[(k + i, k + j)] += 0.5 * half * d[2][i] * d[2][j];
                            }
                        }
                    }
                }
            }
            BasisKind::PiecewiseLinear => {
                let b = &self.breakpoints;
                for k in 1..m - 1 {
                    let (h0, h1) = (b[k] - b[k - 1], b[k + 1] - b[k]);
                    let s = 2.0 / (h0 + h1);
                    let row = [s / h0, -s / h0 - s / h1, s / h1];
                    let cell = 0.5 * (h0 + h1);
                    for i in 0..3 {
                        for j in 0..3 {
                            lam[(k - 1 + i, k - 1 + j)] += cell * row[i] * row[j];
                        }
                    }
                }
            }
        }
        // Exact symmetry.
        let sym = (&lam + lam.transpose()) * 0.5;
        RegularizationMatrix { block: sym }
    }
}

/// `Λ₁ = Λ₂` and the block-diagonal `Λ` built from them.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizationMatrix {
    block: DMatrix<f64>,
}

impl RegularizationMatrix {
    /// The m×m block `Λ₁`.
    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    /// `diag(Λ₁, Λ₂)`.
    pub fn block_diagonal(&self) -> DMatrix<f64> {
        self.weighted(1.0, 1.0)
    }

    /// `diag(ε₁Λ₁, ε₂Λ₂)`.
    pub fn weighted(&self, eps1: f64, eps2: f64) -> DMatrix<f64> {
        let m = self.block.nrows();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        out.view_mut((0, 0), (m, m)).copy_from(&(&self.block * eps1));
        out.view_mut((m, m), (m, m)).copy_from(&(&self.block * eps2));
        out
    }
}
