use rand::Rng;

use super::{perturb, NoiseSchedule};
use crate::error::{Error, Result};
use crate::score_net::{ConditioningIndices, Forward, ForwardHooks, NormMode, ScoreNet};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug)]
pub struct DsmOutput {
    /// Scalar loss on the tape.
    pub loss: Var,
    /// The perturbed batch fed to the score function.
    pub perturbed: Tensor,
}

/// Weighted denoising score matching on one minibatch.
///
/// Item `b` of `clean` is perturbed at the noise level of `conds[b]`; the
/// loss is the mean over all elements of
/// `(sigma_b * s(x_tilde) - (x - x_tilde) / sigma_b)^2`. Perturbation noise
/// is drawn item by item in row-major order. `score` maps the perturbed
/// batch (a tape constant) to a score tensor of the same shape.
pub fn dsm_loss_with<R, F>(
    tape: &mut Tape,
    clean: &Tensor,
    conds: &[ConditioningIndices],
    schedule: &NoiseSchedule,
    rng: &mut R,
    score: F,
) -> Result<DsmOutput>
where
    R: Rng + ?Sized,
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let batch = *clean.shape().first().unwrap_or(&0);
    if batch == 0 || conds.is_empty() {
        return Err(Error::invalid("minibatch", "batch is empty"));
    }
    if conds.len() != batch {
        return Err(Error::invalid(
            "minibatch",
            format!("{} conditions for {batch} items", conds.len()),
        ));
    }
    let sigmas: Vec<f64> = conds
        .iter()
        .map(|c| {
            (c.level < schedule.len())
                .then(|| schedule.sigma(c.level))
                .ok_or_else(|| Error::invalid("noise level", format!("index {} out of range", c.level)))
        })
        .collect::<Result<_>>()?;

    let per_item = clean.len() / batch;
    let mut perturbed = Vec::with_capacity(clean.len());
    let mut target = Vec::with_capacity(clean.len());
    for (item, &sigma) in clean.data().chunks_exact(per_item).zip(&sigmas) {
        let x = Tensor::new([per_item], item.to_vec())?;
        let xt = perturb(&x, sigma, rng)?;
        target.extend(item.iter().zip(xt.data()).map(|(a, b)| (a - b) / sigma));
        perturbed.extend_from_slice(xt.data());
    }
    let perturbed = Tensor::new(clean.shape().to_vec(), perturbed)?;
    let target = Tensor::new(clean.shape().to_vec(), target)?;

    let xt = tape.constant(perturbed.clone());
    let s = score(tape, xt)?;
    let scaled = tape.scale_items(s, &sigmas)?;
    let target = tape.constant(target);
    let residual = tape.sub(scaled, target)?;
    let loss = tape.square_mean(residual)?;
    Ok(DsmOutput { loss, perturbed })
}

/// [`dsm_loss_with`] using the score network in batch-norm training mode.
pub fn dsm_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    net: &ScoreNet,
    params: &[Var],
    clean: &Tensor,
    conds: &[ConditioningIndices],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(DsmOutput, Forward)> {
    let mut forward = None;
    let out = dsm_loss_with(tape, clean, conds, schedule, rng, |tape, xt| {
        let f = net.forward_on_tape(tape, params, xt, conds, NormMode::Batch, &ForwardHooks::default())?;
        let o = f.output;
        forward = Some(f);
        Ok(o)
    })?;
    Ok((out, forward.expect("score closure ran")))
}
