use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::eval::{evaluate, RunReport};
use super::model::{mask_tensor, target_masks, Model};
use super::optim::{Adam, PlateauScheduler};
use super::ExperimentConfig;
use crate::data::Dataset;
use crate::encoder::balanced_pos_weights;
use crate::error::{Error, Result};
use crate::geometry::{pick_initial_shape, Shape};
use crate::tensor::Tensor;

/// Per-epoch training curves.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    /// Loss on the held-out part of the training split; drives the scheduler.
    pub val_loss: Vec<f64>,
    /// Learning rate used during each epoch.
    pub lr: Vec<f64>,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut write = || -> std::result::Result<(), csv::Error> {
            w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
            for (e, ((t, v), lr)) in self.train_loss.iter().zip(&self.val_loss).zip(&self.lr).enumerate() {
                w.write_record([(e + 1).to_string(), t.to_string(), v.to_string(), lr.to_string()])?;
            }
            w.flush()?;
            Ok(())
        };
        write().map_err(|e| Error::format(path, e.to_string()))
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    pub seconds: f64,
}

struct Sample {
    /// Sample number in the dataset.
    index: usize,
    /// Position within the training split, used to exclude the sample's own shape.
    position: usize,
    image: Tensor,
    masks: Tensor,
}

/// Held-out samples are evaluated with a fixed initial shape and a fixed
/// point-cloud seed so the validation loss only moves with the parameters.
struct ValCase {
    sample: Sample,
    init: usize,
    cloud_seed: u64,
}

fn split_train(cfg: &ExperimentConfig, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.train);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let n_val = (cfg.val_fraction * n as f64).round() as usize;
    if n_val >= n {
        return Err(Error::Config(format!("validation hold-out of {n_val} leaves no training samples")));
    }
    let mut val = order[..n_val].to_vec();
    let mut fit = order[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    Ok((fit, val))
}

/// Trains `cfg` on the dataset's training split. Deterministic in the seeds.
pub fn train(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrainOutcome> {
    let start = Instant::now();
    let size = data.image_size();
    let train_idx = &data.manifest.train;
    let shapes: Vec<Shape> = data.train_shapes();
    let mut model = Model::new(cfg, &shapes, size)?;
    let mut history = History::default();
    if !model.is_trainable() {
        return Ok(TrainOutcome {
            model,
            history,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let (fit_pos, val_pos) = split_train(cfg, train_idx.len())?;
    let make = |pos: usize| -> Result<Sample> {
        let index = train_idx[pos];
        Ok(Sample {
            index,
            position: pos,
            image: data.image_tensor(index),
            masks: mask_tensor(&target_masks(&data.shapes[index], size)?),
        })
    };
    let fit: Vec<Sample> = fit_pos.iter().map(|&p| make(p)).collect::<Result<_>>()?;
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.train);
    val_rng.set_stream(2);
    let val: Vec<ValCase> = val_pos
        .iter()
        .map(|&p| {
            Ok(ValCase {
                sample: make(p)?,
                init: pick_initial_shape(shapes.len(), &mut val_rng, Some(p))?,
                cloud_seed: val_rng.random(),
            })
        })
        .collect::<Result<_>>()?;

    let fit_masks: Vec<Vec<Vec<bool>>> = fit
        .iter()
        .map(|s| Ok(target_masks(&data.shapes[s.index], size)?.into_iter().map(|m| m.data).collect()))
        .collect::<Result<_>>()?;
    let n_struct = shapes[0].structures().len();
    let pos_weight = balanced_pos_weights(fit_masks.iter().map(|m| m.as_slice()), n_struct);

    let mut adam = Adam::new();
    let mut sched = PlateauScheduler::new(cfg.patience, cfg.lr_factor)?;
    let mut lr = cfg.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.train);
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let s = &fit[k];
            let init = &shapes[pick_initial_shape(shapes.len(), &mut rng, Some(s.position))?];
            let p = model.params.bind(true);
            let pred = model.forward(&p, &s.image, init, &mut rng)?;
            let loss = model.loss(&pred, init, &data.shapes[s.index], &s.masks, &pos_weight)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss {value} at epoch {epoch}, sample {}", s.index)));
            }
            total += value;
            let grads = p.collect_grads(&loss.backward()?);
            adam.step(&mut model.params, &grads, lr)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, sample {}: {e}", s.index)))?;
        }
        let train_loss = total / fit.len() as f64;

        let val_loss = if val.is_empty() {
            train_loss
        } else {
            let p = model.params.bind(false);
            let mut sum = 0.0;
            for c in &val {
                let init = &shapes[c.init];
                let mut crng = ChaCha8Rng::seed_from_u64(c.cloud_seed);
                let pred = model.forward(&p, &c.sample.image, init, &mut crng)?;
                sum += model
                    .loss(&pred, init, &data.shapes[c.sample.index], &c.sample.masks, &pos_weight)?
                    .item()?;
            }
            sum / val.len() as f64
        };
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.lr.push(lr);
        lr *= sched.step(val_loss);
    }
    Ok(TrainOutcome {
        model,
        history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct Timing {
    train_seconds: f64,
    eval_seconds: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Trains, evaluates on the test split and writes `weights.bin`,
/// `config.json`, `history.csv`, `report.json` and `timing.json` into `out`.
pub fn train_and_save(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<(Model, RunReport)> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outcome = train(cfg, data)?;
    let t0 = Instant::now();
    let mut report = evaluate(&outcome.model, data, cfg.n_initial_shapes, cfg.seeds.eval)?;
    let eval_seconds = t0.elapsed().as_secs_f64();
    report.attach_history(&outcome.history);
    outcome.model.params.save(&out.join("weights.bin"))?;
    write_json(&out.join("config.json"), cfg)?;
    outcome.history.write_csv(&out.join("history.csv"))?;
    report.save(&out.join("report.json"))?;
    write_json(
        &out.join("timing.json"),
        &Timing {
            train_seconds: outcome.seconds,
            eval_seconds,
        },
    )?;
    Ok((outcome.model, report))
}
