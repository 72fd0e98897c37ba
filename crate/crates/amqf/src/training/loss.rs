//! Total objective assembly: calibrated score regression plus weighted
//! reconstruction and decorrelation terms.

use crate::error::{AmqfError, Result};

/// Loss components; `total = mos_term + lambda_re * recon_term +
/// lambda_decov * decov_term`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mos_term: f64,
    pub recon_term: f64,
    pub decov_term: f64,
}

/// Combine calibrated predictions and auxiliary losses into the scalar
/// objective. `q_cal` must already carry the `a * Q + b` calibration.
pub fn assemble_loss(
    q_cal: &[f64],
    mos: &[f64],
    recon_losses: &[f64],
    decov_losses: &[f64],
    lambda_re: f64,
    lambda_decov: f64,
) -> Result<LossBreakdown> {
    if q_cal.len() != mos.len() || q_cal.is_empty() {
        return Err(AmqfError::validation(format!(
            "batch mismatch: {} predictions vs {} labels",
            q_cal.len(),
            mos.len()
        )));
    }
    let mos_term = q_cal
        .iter()
        .zip(mos)
        .map(|(q, m)| (q - m) * (q - m))
        .sum::<f64>()
        / q_cal.len() as f64;
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let recon_term = mean(recon_losses);
    let decov_term = mean(decov_losses);
    for (name, value) in [
        ("mos", mos_term),
        ("reconstruction", recon_term),
        ("decorrelation", decov_term),
    ] {
        if !value.is_finite() {
            return Err(AmqfError::numeric(format!(
                "{name} term is not finite ({value})"
            )));
        }
    }
    let total = mos_term + lambda_re * recon_term + lambda_decov * decov_term;
    Ok(LossBreakdown {
        total,
        mos_term,
        recon_term,
        decov_term,
    })
}
