//! Training objective: binary cross-entropy plus soft Dice plus a
//! weight-decay term `λ·(1/q)·‖θ‖²`.

use crate::error::{Error, Result};
use crate::siren::{self, NetSpec};
use crate::tensor::{Tape, Tensor, Var};
use crate::volume::ObservationSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub dice_eps: f64,
    pub bce_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1e2,
            dice_eps: 1e-6,
            bce_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract("lambda must be nonnegative"));
        }
        if !(self.dice_eps > 0.0) {
            return Err(Error::contract("dice_eps must be positive"));
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return Err(Error::contract("bce_clamp must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

fn check_pair(p: &Var<'_>, z: &Tensor) -> Result<()> {
    if p.shape() != z.shape() {
        return Err(Error::Dimension {
            op: "loss",
            lhs: p.shape(),
            rhs: z.shape(),
        });
    }
    if z.numel() == 0 {
        return Err(Error::contract("loss over zero points"));
    }
    Ok(())
}

/// Mean of `−[z·ln p + (1−z)·ln(1−p)]` with `p` clamped to
/// `[bce_clamp, 1 − bce_clamp]`.
pub fn bce_loss<'t>(p: Var<'t>, z: &Tensor, cfg: &LossConfig) -> Result<Var<'t>> {
    check_pair(&p, z)?;
    let tape = p.tape();
    let c = cfg.bce_clamp;
    let pc = p.clamp(c, 1.0 - c);
    let log_p = pc.ln();
    let log_q = pc.affine(-1.0, 1.0).ln();
    let zc = tape.constant(z.clone());
    let one_minus_z = tape.constant(z.map(|v| 1.0 - v));
    let ll = zc.mul(log_p)?.add(one_minus_z.mul(log_q)?)?;
    Ok(ll.mean()?.scale(-1.0))
}

/// `1 − (2·Σpz + ε) / (Σp + Σz + ε)`.
pub fn soft_dice_loss<'t>(p: Var<'t>, z: &Tensor, cfg: &LossConfig) -> Result<Var<'t>> {
    check_pair(&p, z)?;
    let tape = p.tape();
    let eps = cfg.dice_eps;
    let inter = p.mul(tape.constant(z.clone()))?.sum();
    let num = inter.affine(2.0, eps);
    let den = p.sum().affine(1.0, z.sum_all() + eps);
    Ok(num.div(den)?.affine(-1.0, 1.0))
}

/// `λ·(1/q)·Σθ²` over all parameter tensors.
pub fn weight_decay<'t>(params: &[Var<'t>], lambda: f64) -> Result<Var<'t>> {
    let q: usize = params.iter().map(|v| v.shape().numel()).sum();
    let mut acc: Option<Var<'t>> = None;
    for v in params {
        let s = v.square().sum();
        acc = Some(match acc {
            None => s,
            Some(a) => a.add(s)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::contract("no parameters"))?;
    Ok(acc.scale(lambda / q as f64))
}

/// The individual terms of [`total_loss`].
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<'t> {
    pub bce: Var<'t>,
    pub dice: Var<'t>,
    pub decay: Var<'t>,
    pub total: Var<'t>,
}

/// BCE + soft Dice of the network on `obs`, plus weight decay on `params`.
pub fn total_loss_terms<'t>(
    spec: &NetSpec,
    params: &[Var<'t>],
    obs: &ObservationSet,
    cfg: &LossConfig,
) -> Result<LossTerms<'t>> {
    if obs.is_empty() {
        return Err(Error::contract("empty observation set"));
    }
    let tape: &'t Tape = params
        .first()
        .ok_or_else(|| Error::contract("no parameters"))?
        .tape();
    let coords = tape.constant(obs.coords().clone());
    let p = siren::forward(spec, params, coords)?;
    let bce = bce_loss(p, obs.labels(), cfg)?;
    let dice = soft_dice_loss(p, obs.labels(), cfg)?;
    let decay = weight_decay(params, cfg.lambda)?;
    let total = bce.add(dice)?.add(decay)?;
    Ok(LossTerms {
        bce,
        dice,
        decay,
        total,
    })
}

pub fn total_loss<'t>(
    spec: &NetSpec,
    params: &[Var<'t>],
    obs: &ObservationSet,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    Ok(total_loss_terms(spec, params, obs, cfg)?.total)
}
