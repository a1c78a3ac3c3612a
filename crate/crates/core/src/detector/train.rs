use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::schedule::{PlateauScheduler, SchedulerEvent, TrainSchedule};
use super::DetectorModel;
use crate::augment::{augment_train, AugmentationPolicy};
use crate::corpus::{center_crop, DatasetManifest};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, Adam};
use crate::rng::derived_stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The plateau condition fired at the smallest allowed learning rate.
    LrMin,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub total_epochs: usize,
    pub termination: Termination,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl TrainHistory {
    pub fn learning_rates(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }
}

fn check_train_split(m: &DatasetManifest, what: &str) -> Result<()> {
    if m.records.is_empty() {
        return Err(Error::EmptySplit(format!("{what} set has no records")));
    }
    let fakes = m.records.iter().filter(|r| r.label.is_fake()).count();
    let reals = m.records.len() - fakes;
    if what == "training" && fakes != reals {
        return Err(Error::Validation(format!("training set is imbalanced: {reals} real and {fakes} fake records")));
    }
    Ok(())
}

/// Minimizes binary cross-entropy with Adam under the plateau schedule and
/// returns the weights with the best validation accuracy (earliest on ties).
///
/// Every augmentation draw uses a stream keyed by `(seed, epoch, record id)`
/// and the epoch order by `(seed, epoch)`, so runs are reproducible.
pub fn train<T: Scalar>(
    mut model: DetectorModel<T>,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    policy: &AugmentationPolicy,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(DetectorModel<T>, TrainHistory)> {
    policy.validate()?;
    schedule.validate()?;
    if policy.crop_size != model.spec.input_size {
        return Err(Error::Validation(format!(
            "augmentation crop {} does not match backbone input {}",
            policy.crop_size, model.spec.input_size
        )));
    }
    check_train_split(train_set, "training")?;
    check_train_split(val_set, "validation")?;

    let images = train_set.records.iter().map(|r| train_set.load(r)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<T> = train_set.records.iter().map(|r| if r.label.is_fake() { T::one() } else { T::zero() }).collect();
    let val_inputs = val_set
        .records
        .iter()
        .map(|r| model.input_tensor(&center_crop(&val_set.load(r)?, model.spec.input_size)?))
        .collect::<Result<Vec<Tensor<T>>>>()?;
    let val_labels: Vec<bool> = val_set.records.iter().map(|r| r.label.is_fake()).collect();

    let shapes: Vec<usize> = model.net.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(schedule.beta1, schedule.beta2, &shapes);
    let mut sched = PlateauScheduler::new(schedule);
    let mut best = (model.net.clone(), f64::NEG_INFINITY, 0usize);
    let mut epochs = Vec::new();
    let mut termination = Termination::MaxEpochs;
    let mut order: Vec<usize> = (0..images.len()).collect();

    for epoch in 1..=schedule.max_epochs {
        let lr = sched.lr();
        let tag = epoch.to_string();
        order.sort_unstable();
        order.shuffle(&mut derived_stream(seed, &["shuffle", &tag]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let mut grads = model.net.zero_grads();
            for &i in batch {
                let rec = &train_set.records[i];
                let mut rng = derived_stream(seed, &["augment", &tag, &rec.id]);
                let (crop, _) = augment_train(&images[i], policy, &mut rng)?;
                let x = model.input_tensor(&crop)?;
                let (out, caches) = model.net.forward_train(&x);
                let (loss, g) = bce_with_logit(out.data[0], targets[i]);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss(format!("epoch {epoch}, record `{}`, logit {}", rec.id, out.data[0])));
                }
                loss_sum += loss.as_f64();
                model.net.backward(caches, Tensor::from_vec(1, 1, 1, vec![g])?, &mut grads, false);
            }
            let inv = T::lit(1.0 / batch.len() as f64);
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
            adam.step(model.net.params_mut(), &grads, T::lit(lr));
        }
        let correct = val_inputs
            .iter()
            .zip(&val_labels)
            .filter(|(x, &fake)| (model.net.forward(x).data[0] >= T::zero()) == fake)
            .count();
        let val_acc = correct as f64 / val_inputs.len() as f64;
        let train_loss = loss_sum / images.len() as f64;
        info!("epoch {epoch}: loss {train_loss:.4}, val acc {val_acc:.4}, lr {lr:.1e}");
        epochs.push(EpochRecord { epoch, train_loss, val_acc, lr });
        if val_acc > best.1 {
            best = (model.net.clone(), val_acc, epoch);
        }
        if sched.observe(val_acc) == SchedulerEvent::Terminate {
            termination = Termination::LrMin;
            break;
        }
    }
    model.net = best.0;
    let history = TrainHistory { total_epochs: epochs.len(), epochs, termination, best_epoch: best.2, best_val_acc: best.1 };
    Ok((model, history))
}
