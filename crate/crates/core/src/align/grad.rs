use serde::{Deserialize, Serialize};

use super::{margin, sigmoid, softplus, AlignConfig, AlignError, PreferenceSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    SafeAlign,
    Simpo,
    Dpo,
    SafeAlignDpo,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::SafeAlign,
        LossVariant::Simpo,
        LossVariant::Dpo,
        LossVariant::SafeAlignDpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::SafeAlign => "safe_align",
            LossVariant::Simpo => "simpo",
            LossVariant::Dpo => "dpo",
            LossVariant::SafeAlignDpo => "safe_align_dpo",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, LossVariant::Dpo | LossVariant::SafeAlignDpo)
    }
}

/// Every loss is `softplus(-z)` with a margin `z` that is linear in the
/// log-probabilities:
/// `z = w·lp_w + l·lp_l + ref_w·ref_lp_w + ref_l·ref_lp_l + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCoefficients {
    pub w: Vec<f64>,
    pub l: Vec<f64>,
    pub ref_w: Vec<f64>,
    pub ref_l: Vec<f64>,
    pub constant: f64,
}

pub fn margin_coefficients(
    variant: LossVariant,
    len_w: usize,
    len_l: usize,
    k: usize,
    cfg: &AlignConfig,
) -> Result<MarginCoefficients, AlignError> {
    let weights =
        |n: usize, mu: f64| -> Vec<f64> { (0..n).map(|i| if i < k { mu } else { 1.0 }).collect() };
    let scaled = |v: Vec<f64>, c: f64| -> Vec<f64> { v.into_iter().map(|x| x * c).collect() };
    match variant {
        LossVariant::SafeAlign | LossVariant::Simpo => {
            if len_w == 0 || len_l == 0 {
                return Err(AlignError::EmptySequence);
            }
            let mu = if variant == LossVariant::Simpo {
                1.0
            } else {
                cfg.mu
            };
            Ok(MarginCoefficients {
                w: scaled(weights(len_w, mu), cfg.beta / len_w as f64),
                l: scaled(weights(len_l, mu), -cfg.beta / len_l as f64),
                ref_w: vec![0.0; len_w],
                ref_l: vec![0.0; len_l],
                constant: -cfg.gamma,
            })
        }
        LossVariant::Dpo | LossVariant::SafeAlignDpo => {
            let mu = if variant == LossVariant::Dpo {
                1.0
            } else {
                cfg.mu
            };
            let ww = weights(len_w, mu);
            let wl = weights(len_l, mu);
            Ok(MarginCoefficients {
                w: scaled(ww.clone(), cfg.beta),
                l: scaled(wl.clone(), -cfg.beta),
                ref_w: scaled(ww, -cfg.beta),
                ref_l: scaled(wl, cfg.beta),
                constant: 0.0,
            })
        }
    }
}

/// Loss and its gradient with respect to the trained policy's
/// log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbGrad {
    pub loss: f64,
    pub d_lp_w: Vec<f64>,
    pub d_lp_l: Vec<f64>,
}

pub fn loss_and_grad(
    variant: LossVariant,
    s: &PreferenceSample,
    cfg: &AlignConfig,
) -> Result<LogProbGrad, AlignError> {
    let c = margin_coefficients(variant, s.lp_w.len(), s.lp_l.len(), s.k, cfg)?;
    let z = margin(variant, s, cfg)?;
    // d softplus(-z) / dz = -σ(-z)
    let g = -sigmoid(-z);
    Ok(LogProbGrad {
        loss: softplus(-z),
        d_lp_w: c.w.iter().map(|x| g * x).collect(),
        d_lp_l: c.l.iter().map(|x| g * x).collect(),
    })
}

/// Central differences of the loss with respect to each trained
/// log-probability, step [`super::FD_STEP`].
///
/// Each side is a full margin evaluation; the loss difference is then formed
/// in closed form so that a zero coefficient gives exactly zero.
pub fn fd_logprob_gradient(
    variant: LossVariant,
    s: &PreferenceSample,
    cfg: &AlignConfig,
) -> Result<(Vec<f64>, Vec<f64>), AlignError> {
    let h = super::FD_STEP;
    fn slot(p: &mut PreferenceSample, winner: bool, i: usize) -> &mut f64 {
        if winner {
            &mut p.lp_w.per_action[i]
        } else {
            &mut p.lp_l.per_action[i]
        }
    }
    let mut probe = s.clone();
    let mut diff = |winner: bool, i: usize| -> Result<f64, AlignError> {
        let orig = *slot(&mut probe, winner, i);
        *slot(&mut probe, winner, i) = orig + h;
        let up = margin(variant, &probe, cfg)?;
        *slot(&mut probe, winner, i) = orig - h;
        let down = margin(variant, &probe, cfg)?;
        *slot(&mut probe, winner, i) = orig;
        let dz = up - down;
        // softplus(-up) - softplus(-down)
        Ok((sigmoid(-down) * (-dz).exp_m1()).ln_1p() / (2.0 * h))
    };
    let w = (0..s.lp_w.len())
        .map(|i| diff(true, i))
        .collect::<Result<_, _>>()?;
    let l = (0..s.lp_l.len())
        .map(|i| diff(false, i))
        .collect::<Result<_, _>>()?;
    Ok((w, l))
}

/// Largest `|a - fd| / (|a| + 1e-8)` between [`loss_and_grad`] and
/// [`fd_logprob_gradient`].
pub fn logprob_grad_check(
    variant: LossVariant,
    s: &PreferenceSample,
    cfg: &AlignConfig,
) -> Result<f64, AlignError> {
    let a = loss_and_grad(variant, s, cfg)?;
    let (fw, fl) = fd_logprob_gradient(variant, s, cfg)?;
    Ok(a.d_lp_w
        .iter()
        .zip(&fw)
        .chain(a.d_lp_l.iter().zip(&fl))
        .map(|(x, y)| (x - y).abs() / (x.abs() + 1e-8))
        .fold(0.0, f64::max))
}
