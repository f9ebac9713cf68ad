use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_total_tape;
use super::{DiagnosticConfig, DiagnosticModel};
use crate::error::{Error, Result};
use crate::eval::metrics::balanced_accuracy;
use crate::numerics::{Adam, AdamConfig, Tape};
use crate::probmodel::{discretize, predicted_classes};
use crate::synthstudy::StudyRecord;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean minibatch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation mean bACC (AS and EF, full studies) per epoch.
    pub val_bacc: Vec<f64>,
    pub best_epoch: usize,
}

impl DiagnosticModel {
    /// Full-study mean bACC over `studies`.
    pub fn full_study_bacc(&self, studies: &[&StudyRecord]) -> Result<f64> {
        let emb: Vec<f64> = studies.iter().flat_map(|s| s.embeddings.iter().copied()).collect();
        let masks = vec![true; studies.len() * self.n_views];
        let joints = self.predict_batch(&emb, &masks)?;
        let grid = &self.config.grid;
        let (mut pa, mut pe, mut ta, mut te) = (vec![], vec![], vec![], vec![]);
        for (j, s) in joints.iter().zip(studies) {
            let (a, e) = predicted_classes(&discretize(j, grid));
            pa.push(a);
            pe.push(e);
            ta.push(s.y_as_class);
            te.push(grid.ef_category(s.y_ef));
        }
        let ba = balanced_accuracy(&pa, &ta, grid.n_as())?;
        let be = balanced_accuracy(&pe, &te, grid.n_ef())?;
        Ok(0.5 * (ba + be))
    }
}

/// Minibatch Adam on the weighted NLL. Each epoch presents every training
/// study with all views and, when augmentation is on, once more under a
/// uniformly random view subset (the empty subset included). Returns the
/// frozen model from the epoch with the best validation mean bACC.
pub fn train_diagnostic(
    train: &[&StudyRecord],
    val: &[&StudyRecord],
    cfg: &DiagnosticConfig,
) -> Result<(DiagnosticModel, TrainLog)> {
    let first = train.first().ok_or(Error::Empty("training split"))?;
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let (n, d) = (first.n_views, first.embed_dim);
    if let Some(s) = train.iter().chain(val).find(|s| s.n_views != n || s.embed_dim != d) {
        return Err(Error::Config(format!("study {} has inconsistent dimensions", s.study_id)));
    }
    let grid = cfg.grid.clone();
    for s in train.iter().chain(val) {
        if s.y_as_class >= grid.n_as() {
            return Err(Error::Label(format!("study {}: AS class {} >= {}", s.study_id, s.y_as_class, grid.n_as())));
        }
    }
    let mut model = DiagnosticModel::new(cfg.clone(), n, d)?;
    let mut opt =
        Adam::new(&model.params, AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d1a6);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut tape = Tape::new();

    for epoch in 0..cfg.epochs {
        // (study index, mask)
        let mut items: Vec<(usize, Vec<bool>)> = (0..train.len()).map(|i| (i, vec![true; n])).collect();
        if cfg.mask_augmentation {
            for i in 0..train.len() {
                let m = (0..n).map(|_| rng.gen_bool(0.5)).collect();
                items.push((i, m));
            }
        }
        items.shuffle(&mut rng);

        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in items.chunks(cfg.batch_size) {
            let mut emb = Vec::with_capacity(chunk.len() * n * d);
            let mut masks = Vec::with_capacity(chunk.len() * n);
            let mut classes = Vec::with_capacity(chunk.len());
            let mut efs = Vec::with_capacity(chunk.len());
            for (i, m) in chunk {
                let s = train[*i];
                emb.extend_from_slice(&s.embeddings);
                masks.extend_from_slice(m);
                classes.push(s.y_as_class);
                efs.push(s.y_ef);
            }
            tape.clear();
            let vars = model.params.bind(&mut tape);
            let step = model
                .forward(&mut tape, &vars, &emb, &masks, Some(&mut rng))
                .and_then(|hv| loss_total_tape(&mut tape, &hv, &classes, &efs, cfg.lambda_as, cfg.lambda_ef, &grid));
            let loss = match step {
                Ok(l) => l,
                Err(Error::Numerics(e)) => {
                    return Err(Error::Diverged(format!("epoch {epoch}, batch {batches}: {e}")));
                }
                Err(e) => return Err(e),
            };
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(Error::Diverged(format!("epoch {epoch}, batch {batches}: loss {value}")));
            }
            tape.backward(loss)?;
            model.params.zero_grad();
            model.params.accumulate_grads(&tape, &vars)?;
            opt.step(&mut model.params);
            total += value;
            batches += 1;
        }
        log.epoch_loss.push(total / batches.max(1) as f64);
        let bacc = model.full_study_bacc(val)?;
        log.val_bacc.push(bacc);
        if best.as_ref().map_or(true, |(b, _)| bacc > *b) {
            best = Some((bacc, model.params.flatten()));
            log.best_epoch = epoch;
        }
    }
    if let Some((_, w)) = best {
        model.params.load_flat(&w)?;
    }
    model.params.zero_grad();
    model.freeze();
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthstudy::{generate_dataset, GeneratorConfig};

    #[test]
    fn short_training_learns_and_freezes() {
        let data = generate_dataset(&GeneratorConfig { n_patients: 400, ..Default::default() }).unwrap();
        let refs: Vec<&StudyRecord> = data.iter().collect();
        let (train, val) = refs.split_at(320);
        let cfg = DiagnosticConfig { epochs: 6, ..Default::default() };
        let (model, log) = train_diagnostic(train, val, &cfg).unwrap();
        assert!(model.is_frozen());
        assert_eq!(log.epoch_loss.len(), 6);
        assert!(log.epoch_loss[5] < log.epoch_loss[0], "{:?}", log.epoch_loss);
        let best = log.val_bacc[log.best_epoch];
        assert!(log.val_bacc.iter().all(|b| *b <= best));
        assert_eq!(model.full_study_bacc(val).unwrap(), best);
        assert!(best > 1.0 / 3.0 + 0.05, "{best}");

        // with nothing observed the EF mean falls back towards the cohort mean
        let mean_ef = train.iter().map(|s| s.y_ef).sum::<f64>() / train.len() as f64;
        let j = model.predict(&data[0].embeddings, &[false; 5]).unwrap();
        assert!((j.mu[1] - mean_ef).abs() <= 0.05, "{} vs {mean_ef}", j.mu[1]);

        // one more view moves the prediction for (nearly) every study
        let mut moved = 0;
        for s in val {
            let a = model.predict(&s.embeddings, &[true, false, true, false, false]).unwrap();
            let b = model.predict(&s.embeddings, &[true, false, true, false, true]).unwrap();
            moved += usize::from(a != b);
        }
        assert!(moved as f64 >= 0.99 * val.len() as f64, "{moved} of {}", val.len());
    }

    #[test]
    fn empty_splits_and_bad_labels_are_rejected() {
        let mut data = generate_dataset(&GeneratorConfig { n_patients: 4, ..Default::default() }).unwrap();
        let cfg = DiagnosticConfig { epochs: 1, ..Default::default() };
        let refs: Vec<&StudyRecord> = data.iter().collect();
        assert!(matches!(train_diagnostic(&[], &refs, &cfg), Err(Error::Empty(_))));
        assert!(matches!(train_diagnostic(&refs, &[], &cfg), Err(Error::Empty(_))));
        data[0].y_as_class = 7;
        let refs: Vec<&StudyRecord> = data.iter().collect();
        assert!(matches!(train_diagnostic(&refs, &refs, &cfg), Err(Error::Label(_))));
    }
}
