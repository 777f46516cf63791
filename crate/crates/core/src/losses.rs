//! Focal, soft-Dice and mixed objectives with analytic gradients.
//!
//! All sums run over the whole batch; `N` is the number of voxels passed in.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Focal loss.
    Fl,
    /// Soft Dice loss.
    Dl,
    /// Voxel-averaged focal loss minus the log soft Dice coefficient.
    Eml,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Fl, LossKind::Dl, LossKind::Eml];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Fl => "fl",
            LossKind::Dl => "dl",
            LossKind::Eml => "eml",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fl" | "focal" => Ok(LossKind::Fl),
            "dl" | "dice" => Ok(LossKind::Dl),
            "eml" | "mixing" => Ok(LossKind::Eml),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}' (fl, dl, eml)"))),
        }
    }
}

fn default_alpha() -> f64 {
    1.1
}
fn default_gamma() -> f64 {
    0.48
}
fn default_delta() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    1e-7
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Probability clamp and log floor.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Use `-ln(DL)` instead of `-ln(1 - DL)` in the mixed loss.
    #[serde(default)]
    pub log_of_dice_loss: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            alpha: default_alpha(),
            gamma: default_gamma(),
            delta: default_delta(),
            eps: default_eps(),
            log_of_dice_loss: false,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLossParams(m));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if !(0.0..=5.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 5]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta {} outside [0, 1]", self.delta));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return bad(format!("eps {} outside (0, 1e-3]", self.eps));
        }
        Ok(())
    }

    /// Non-fatal remarks about the parameter choice.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.alpha > 1.0 {
            out.push(format!(
                "alpha = {} > 1: background focal terms carry weight 1 - alpha = {:.3} and reward confident background errors",
                self.alpha,
                1.0 - self.alpha
            ));
        }
        if self.log_of_dice_loss {
            out.push("literal mixed loss: -ln(DL) grows as predictions improve".into());
        }
        out
    }
}

/// Scalar loss and its gradient with respect to each probability.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check(p: &[f64], g: &[f64], params: &LossParams) -> Result<()> {
    params.validate()?;
    if p.len() != g.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions against {} targets",
            p.len(),
            g.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty prediction".into()));
    }
    if let Some(v) = g.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::NonBinary {
            what: "target".into(),
            value: *v,
        });
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite probability {v}")));
    }
    Ok(())
}

fn focal_parts(p: &[f64], g: &[f64], params: &LossParams) -> LossValue {
    let LossParams { alpha, gamma, eps, .. } = *params;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&raw, &t) in p.iter().zip(g) {
        let q = raw.clamp(eps, 1.0 - eps);
        let inside = raw > eps && raw < 1.0 - eps;
        let (v, d) = if t == 1.0 {
            let m = (1.0 - q).powf(gamma);
            let dm = if gamma == 0.0 { 0.0 } else { -gamma * (1.0 - q).powf(gamma - 1.0) };
            (-alpha * m * q.ln(), -alpha * (dm * q.ln() + m / q))
        } else {
            let m = q.powf(gamma);
            let dm = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            let l = (1.0 - q).ln();
            (-(1.0 - alpha) * m * l, -(1.0 - alpha) * (dm * l - m / (1.0 - q)))
        };
        value += v;
        grad.push(if inside { d } else { 0.0 });
    }
    LossValue { value, grad }
}

/// Soft Dice coefficient `(2Σpg + δ) / (Σp² + Σg² + δ)` and its gradient.
fn dice_parts(p: &[f64], g: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let a = 2.0 * p.iter().zip(g).map(|(x, y)| x * y).sum::<f64>() + delta;
    let b = p.iter().map(|x| x * x).sum::<f64>() + g.iter().map(|y| y * y).sum::<f64>() + delta;
    if b == 0.0 {
        // no foreground anywhere and no smoothing: treat as perfect overlap
        return (1.0, vec![0.0; p.len()]);
    }
    let grad = p
        .iter()
        .zip(g)
        .map(|(x, y)| (2.0 * y * b - 2.0 * x * a) / (b * b))
        .collect();
    (a / b, grad)
}

pub fn focal_loss(p: &[f64], g: &[f64], params: &LossParams) -> Result<f64> {
    check(p, g, params)?;
    Ok(focal_parts(p, g, params).value)
}

pub fn dice_loss(p: &[f64], g: &[f64], params: &LossParams) -> Result<f64> {
    check(p, g, params)?;
    Ok(1.0 - dice_parts(p, g, params.delta).0)
}

pub fn enhanced_mixing_loss(p: &[f64], g: &[f64], params: &LossParams) -> Result<f64> {
    Ok(loss_with_grad(LossKind::Eml, p, g, params)?.value)
}

pub fn loss_with_grad(kind: LossKind, p: &[f64], g: &[f64], params: &LossParams) -> Result<LossValue> {
    check(p, g, params)?;
    match kind {
        LossKind::Fl => Ok(focal_parts(p, g, params)),
        LossKind::Dl => {
            let (d, dd) = dice_parts(p, g, params.delta);
            Ok(LossValue {
                value: 1.0 - d,
                grad: dd.into_iter().map(|v| -v).collect(),
            })
        }
        LossKind::Eml => {
            let n = p.len() as f64;
            let fl = focal_parts(p, g, params);
            let (d, dd) = dice_parts(p, g, params.delta);
            let eps = params.eps;
            // log argument and its gradient
            let (arg, darg): (f64, Vec<f64>) = if params.log_of_dice_loss {
                (1.0 - d, dd.iter().map(|v| -v).collect())
            } else {
                (d, dd)
            };
            let floored = arg <= eps;
            let value = fl.value / n - arg.max(eps).ln();
            let grad = fl
                .grad
                .iter()
                .zip(&darg)
                .map(|(f, a)| f / n - if floored { 0.0 } else { a / arg })
                .collect();
            Ok(LossValue { value, grad })
        }
    }
}

pub fn evaluate(kind: LossKind, p: &[f64], g: &[f64], params: &LossParams) -> Result<f64> {
    Ok(loss_with_grad(kind, p, g, params)?.value)
}
