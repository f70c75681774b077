//! Bifurcation values and Lyapunov-Schmidt coefficients of the primary
//! pitchforks, with a quadrature oracle and amplitude predictions.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::grid::ChebyshevGrid;

/// `(k pi)^-2` for each wave number.
pub fn bif_values(ks: &[f64]) -> Result<Vec<f64>> {
    ks.iter()
        .map(|&k| {
            if k > 0.0 && k.is_finite() {
                Ok(1.0 / (k * PI).powi(2))
            } else {
                Err(KsError::Invalid(format!("wave number {k} must be positive")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsCoefficients {
    pub n: usize,
    pub beta: f64,
    pub nu_star: f64,
    pub w_y2_amplitude: f64,
    pub g_y3: f64,
    /// `<e, e''> = -beta^2`.
    pub g_ynu_neg_beta2: f64,
    /// `<e, e''''>` from direct evaluation of the nu-derivative.
    pub g_ynu_oracle: Option<f64>,
}

/// Closed-form coefficients at the `k = n - 1/2` bifurcation.
pub fn ls_coefficients(n: usize) -> Result<LsCoefficients> {
    if n == 0 {
        return Err(KsError::Invalid("n starts at 1".into()));
    }
    let m = (2 * n - 1) as f64;
    let beta = PI / 2.0 * m;
    Ok(LsCoefficients {
        n,
        beta,
        nu_star: 1.0 / (beta * beta),
        w_y2_amplitude: 1.0 / (6.0 * PI * m),
        g_y3: 0.125,
        g_ynu_neg_beta2: -beta * beta,
        g_ynu_oracle: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsCheck {
    pub name: String,
    pub analytic: f64,
    pub quadrature: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsReport {
    pub n: usize,
    pub grid_order: usize,
    pub coefficients: LsCoefficients,
    pub checks: Vec<LsCheck>,
    pub g_ynu_neg_beta2_sign: i8,
    pub g_ynu_oracle_sign: i8,
}

impl LsReport {
    pub fn check(&self, name: &str) -> Option<&LsCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn max_deviation(&self, names: &[&str]) -> f64 {
        self.checks
            .iter()
            .filter(|c| names.contains(&c.name.as_str()))
            .map(|c| c.deviation)
            .fold(0.0, f64::max)
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Re-evaluates every inner product of the reduction with Chebyshev
/// differentiation and Clenshaw-Curtis quadrature on `grid`.
pub fn ls_verify(n: usize, grid: &Arc<ChebyshevGrid>) -> Result<LsReport> {
    if grid.order() < 32 {
        return Err(KsError::Invalid(format!("grid order {} below 32", grid.order())));
    }
    let mut coef = ls_coefficients(n)?;
    let beta = coef.beta;
    let d = grid.differentiation_matrix();
    let diff = |v: &[f64]| -> Vec<f64> { (&d * DVector::from_column_slice(v)).as_slice().to_vec() };
    let ip = |a: &[f64], b: &[f64]| grid.inner_values(a, b);

    let e = grid.sample(|x| (beta * x).cos());
    let s2 = grid.sample(|x| (2.0 * beta * x).sin());
    let e_sq: Vec<f64> = e.iter().map(|v| v * v).collect();
    let de_sq = diff(&e_sq);

    // -(e^2)' projected on sin(2 beta x), divided by the eigenvalue of L0
    let rhs: Vec<f64> = de_sq.iter().map(|v| -v).collect();
    let coeff = ip(&rhs, &s2) / ip(&s2, &s2);
    let lambda = coef.nu_star * (2.0 * beta).powi(4) - (2.0 * beta).powi(2);
    let w_amp = coeff / lambda;
    let w: Vec<f64> = s2.iter().map(|v| w_amp * v).collect();

    let ew: Vec<f64> = e.iter().zip(&w).map(|(a, b)| a * b).collect();
    let d_ew: Vec<f64> = diff(&ew).iter().map(|v| 3.0 * v).collect();
    let g_y3 = ip(&e, &d_ew);

    let de = diff(&e);
    let dde = diff(&de);
    // e = e'' = 0 at both ends, so <e, e''''> = <e'', e''> and <e, e''> = -<e', e'>
    let g_neg_beta2_q = -ip(&de, &de);
    let g_oracle_q = ip(&dde, &dde);
    let g_oracle = beta.powi(4);
    coef.g_ynu_oracle = Some(g_oracle);

    let mk = |name: &str, analytic: f64, quadrature: f64| LsCheck {
        name: name.to_string(),
        analytic,
        quadrature,
        deviation: (analytic - quadrature).abs(),
    };
    let checks = vec![
        mk("e_norm", 1.0, ip(&e, &e)),
        mk("e_dot_de2", 0.0, ip(&e, &de_sq)),
        mk("w_y2_amplitude", coef.w_y2_amplitude, w_amp),
        mk("g_y3", coef.g_y3, g_y3),
        mk("g_ynu_neg_beta2", coef.g_ynu_neg_beta2, g_neg_beta2_q),
        mk("g_ynu_oracle", g_oracle, g_oracle_q),
    ];
    Ok(LsReport {
        n,
        grid_order: grid.order(),
        g_ynu_neg_beta2_sign: sign(coef.g_ynu_neg_beta2),
        g_ynu_oracle_sign: sign(g_oracle),
        coefficients: coef,
        checks,
    })
}

/// Least-squares fit `y = C (nu* - nu)^p` in log-log coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerFit {
    pub prefactor: f64,
    pub exponent: f64,
}

pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<PowerFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(d, y)| *d > 0.0 && *y > 0.0)
        .map(|(d, y)| (d.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(KsError::Invalid("power-law fit needs two positive samples".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(KsError::Invalid("degenerate power-law abscissae".into()));
    }
    let p = sxy / sxx;
    Ok(PowerFit { prefactor: (my - p * mx).exp(), exponent: p })
}

/// Square-root amplitude law with an effective `g_ynu`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AmplitudeModel {
    pub n: usize,
    pub nu_star: f64,
    pub g_y3: f64,
    pub g_ynu_eff: f64,
}

impl AmplitudeModel {
    /// Uses the direct-evaluation value `beta^4` for `g_ynu`.
    pub fn uncalibrated(n: usize) -> Result<Self> {
        let c = ls_coefficients(n)?;
        Ok(Self { n, nu_star: c.nu_star, g_y3: c.g_y3, g_ynu_eff: c.beta.powi(4) })
    }

    /// Calibrates `g_ynu_eff` from `(nu, y)` branch samples by fitting
    /// `y = C sqrt(nu* - nu)`.
    pub fn calibrate(n: usize, samples: &[(f64, f64)]) -> Result<Self> {
        let mut m = Self::uncalibrated(n)?;
        let pts: Vec<(f64, f64)> = samples.iter().map(|&(nu, y)| (m.nu_star - nu, y.abs())).collect();
        if pts.iter().any(|p| p.0 <= 0.0) {
            return Err(KsError::Invalid("calibration samples must lie below nu*".into()));
        }
        // fixed exponent 1/2: C^2 = mean(y^2 / d)
        let c2 = pts.iter().map(|(d, y)| y * y / d).sum::<f64>() / pts.len() as f64;
        m.g_ynu_eff = c2 * m.g_y3 / 6.0;
        Ok(m)
    }

    /// Kernel coordinate `y(nu)` on the branch.
    pub fn predict(&self, nu: f64) -> Result<f64> {
        if nu > self.nu_star {
            return Err(KsError::WrongSide { nu, nu_star: self.nu_star });
        }
        Ok((6.0 * self.g_ynu_eff * (self.nu_star - nu) / self.g_y3).sqrt())
    }
}

/// Prediction with the uncalibrated model.
pub fn amplitude_prediction(n: usize, nu: f64) -> Result<f64> {
    AmplitudeModel::uncalibrated(n)?.predict(nu)
}
