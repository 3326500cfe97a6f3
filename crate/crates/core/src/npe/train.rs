use web_time::Instant;

use super::model::{NpeArchitecture, NpeModel};
use crate::error::{Error, Result};
use crate::model::{CensorInterval, Design, PriorSpec};
use crate::nn::AdamState;
use crate::train::{minibatches, simulate_batch, EarlyStopping, InputScaling, TrainConfig, TrainingLog};
use crate::{derive_seed, rng_from_seed};

pub const NETWORK_NAME: &str = "npe";

/// Jointly fits the encoder and flow by minimizing the negative log density
/// of freshly simulated parameters, keeping the best validation epoch.
pub fn train_npe(
    config: &TrainConfig,
    arch: &NpeArchitecture,
    prior: &PriorSpec,
    k: usize,
    interval: Option<CensorInterval>,
) -> Result<(NpeModel, TrainingLog)> {
    config.validate()?;
    let start = Instant::now();
    let design = Design::new(k)?;
    let mut log = TrainingLog::default();
    let validation = simulate_batch(prior, &design, interval, config.n_validation, &mut rng_from_seed(derive_seed(config.seed, 0)))?;
    log.rejected_draws += validation.rejected;

    let mut model = NpeModel::init(k, *prior, interval, arch.clone(), config.seed, &mut rng_from_seed(derive_seed(config.seed, 1)))?;
    if arch.scale_inputs {
        model.set_input_scaling(InputScaling::fit(&validation.inputs, validation.input_dim))?;
    }
    let initial = model.mean_nll(&validation.inputs, &validation.thetas, validation.n)?;
    log.push(NETWORK_NAME, 0, None, initial);
    let mut stopping = EarlyStopping::new(config.patience, initial);
    let mut weights = model.params();
    let mut best = weights.clone();
    let mut adam = AdamState::new(weights.len(), config.adam);

    for epoch in 1..=config.max_epochs {
        let mut rng = rng_from_seed(derive_seed(config.seed, 1000 + epoch as u64));
        let batch = simulate_batch(prior, &design, interval, config.n_train, &mut rng)?;
        log.rejected_draws += batch.rejected;
        let (d, p) = (batch.input_dim, batch.n_params);
        let mut total = 0.0;
        for (s, e) in minibatches(batch.n, config.batch_size) {
            let (nll, grad) = model.nll_and_gradient(&batch.inputs[s * d..e * d], &batch.thetas[s * p..e * p], e - s)?;
            total += nll * (e - s) as f64;
            adam.step(&mut weights, &grad);
            model.set_params(&weights)?;
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!("NPE weights became non-finite in epoch {epoch}")));
        }
        let val = model.mean_nll(&validation.inputs, &validation.thetas, validation.n)?;
        log.push(NETWORK_NAME, epoch, Some(total / batch.n as f64), val);
        if stopping.observe(epoch, val) {
            best.copy_from_slice(&weights);
        }
        if stopping.should_stop() {
            break;
        }
    }
    model.set_params(&best)?;
    log.best.push((NETWORK_NAME.to_string(), stopping.best_epoch(), stopping.best()));
    log.seconds = start.elapsed().as_secs_f64();
    Ok((model, log))
}
