//! Training samples, normalization statistics and the optimization loop.

use ndarray::Array2;
use ndcore::{Adam, AdamConfig, LrSchedule, Real};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DayProvider;
use crate::model::{coord_rows, departures, AssimModel, ModelGrads, Moments, NormStats, PatchInputs, N_VARS};
use crate::obs::{SourceId, SourceSchema};
use crate::partition::PatchSpec;
use crate::{seed, Error, Result};

/// Inclusive day ranges for the chronological split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Splits {
    pub train: (i64, i64),
    pub val: (i64, i64),
    pub test: (i64, i64),
}

impl Default for Splits {
    fn default() -> Self {
        Self { train: (3, 360), val: (361, 420), test: (421, 480) }
    }
}

impl Splits {
    pub fn validate(&self) -> Result<()> {
        let parts = [("train", self.train), ("val", self.val), ("test", self.test)];
        for (name, (a, b)) in parts {
            if a > b {
                return Err(Error::Config(format!("{name} days {a}..={b} are empty")));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let (x, y) = (parts[i].1, parts[j].1);
                if x.0 <= y.1 && y.0 <= x.1 {
                    return Err(Error::Config(format!("{} and {} days overlap", parts[i].0, parts[j].0)));
                }
            }
        }
        Ok(())
    }

    pub fn days(range: (i64, i64)) -> impl Iterator<Item = i64> {
        range.0..=range.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    /// Random (day, patch) samples drawn per epoch; 0 uses all of them.
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    /// Fine query cells drawn per sample; 0 uses every ocean cell.
    pub queries_per_patch: usize,
    pub learning_rate: f64,
    pub lr_gamma: f64,
    /// Per-source drop probability for each sample.
    pub dropout: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: u32,
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            samples_per_epoch: 4000,
            batch_size: 8,
            queries_per_patch: 200,
            learning_rate: 3e-3,
            lr_gamma: 0.5,
            dropout: 0.2,
            patience: 10,
            val_samples: 400,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::Config("learning rate must be positive and gamma in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleKey {
    pub day: i64,
    pub patch: usize,
}

/// One sample per (day, patch) with at least one fine ocean cell, day-major.
pub fn enumerate_samples(days: (i64, i64), patches: &[PatchSpec], provider: &dyn DayProvider) -> Vec<SampleKey> {
    let mask = provider.fine_mask();
    let wet: Vec<usize> = patches.iter().filter(|p| p.cells().any(|(i, j)| mask[[i, j]])).map(|p| p.id).collect();
    Splits::days(days).flat_map(|day| wet.iter().map(move |&patch| SampleKey { day, patch })).collect()
}

/// Model inputs and normalized increment targets for one (day, patch).
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub key: SampleKey,
    pub inputs: PatchInputs<T>,
    pub cells: Vec<(usize, usize)>,
    pub queries: Array2<T>,
    pub target: Array2<T>,
}

/// `dropped[j]` removes source `j`; `n_queries == 0` keeps every cell.
pub fn build_sample<T: Real, R: Rng>(
    model: &AssimModel<T>,
    provider: &dyn DayProvider,
    key: SampleKey,
    patch: &PatchSpec,
    n_queries: usize,
    dropped: &[bool],
    rng: &mut R,
) -> Result<TrainSample<T>> {
    let d = provider.load(key.day)?;
    let obs: Vec<_> = d.obs.iter().zip(dropped).filter(|(_, &x)| !x).map(|(o, _)| o).collect();
    let inputs = model.patch_inputs(&d.background, &obs, patch)?;
    let mask = provider.fine_mask();
    let mut cells: Vec<(usize, usize)> = patch.cells().filter(|&(i, j)| mask[[i, j]]).collect();
    if n_queries > 0 && cells.len() > n_queries {
        let mut idx = sample_indices(rng, cells.len(), n_queries).into_vec();
        idx.sort_unstable();
        cells = idx.into_iter().map(|k| cells[k]).collect();
    }
    let spec = provider.fine();
    let coords: Vec<(f64, f64)> = cells.iter().map(|&(i, j)| (spec.lat_center(i), spec.lon_center(j))).collect();
    let queries = coord_rows::<T>(&coords)?;
    let mut target = Array2::zeros((cells.len(), N_VARS));
    for (r, &(i, j)) in cells.iter().enumerate() {
        for k in 0..N_VARS {
            let inc = d.truth.values[[i, j, k]] - d.interp.values[[i, j, k]];
            target[[r, k]] = T::from_f64(inc / model.norm.increment_scale[k]);
        }
    }
    Ok(TrainSample { key, inputs, cells, queries, target })
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: u64,
    shift: f64,
    sum: f64,
    sumsq: f64,
}

impl Acc {
    fn push(&mut self, x: f64) {
        if self.n == 0 {
            self.shift = x;
        }
        let y = x - self.shift;
        self.n += 1;
        self.sum += y;
        self.sumsq += y * y;
    }

    fn moments(&self, what: &str) -> Result<Moments> {
        if self.n < 2 {
            return Err(Error::Config(format!("{what} has fewer than two training values")));
        }
        let n = self.n as f64;
        let m = self.sum / n;
        let var = (self.sumsq / n - m * m).max(0.0);
        let std = var.sqrt();
        if !(std > 1e-12 * self.shift.abs().max(1.0)) {
            return Err(Error::Config(format!("{what} has zero variance over the training days")));
        }
        Ok(Moments { mean: self.shift + m, std })
    }
}

/// Means and standard deviations over `days`: background ocean cells,
/// observation departures over all points, and the RMS of fine increments.
pub fn fit_norm_stats(provider: &dyn DayProvider, schemas: &[SourceSchema], days: (i64, i64)) -> Result<NormStats> {
    let mut bg = [Acc::default(); N_VARS];
    let mut src: Vec<Vec<Acc>> = schemas.iter().map(|s| vec![Acc::default(); s.channel_count()]).collect();
    let mut inc_sq = [0.0f64; N_VARS];
    let mut inc_n = 0u64;
    let mask = provider.fine_mask();
    for day in Splits::days(days) {
        let d = provider.load(day)?;
        for ((i, j), &ocean) in d.background.mask.indexed_iter() {
            if ocean {
                for (k, a) in bg.iter_mut().enumerate() {
                    a.push(d.background.values[[i, j, k]]);
                }
            }
        }
        for ((acc, o), s) in src.iter_mut().zip(d.obs.iter()).zip(schemas) {
            if o.source != s.id {
                return Err(Error::Schema(format!("day {day}: expected {} observations, got {}", s.id, o.source)));
            }
            for (_, dep) in departures(o, &d.background)? {
                for (a, v) in acc.iter_mut().zip(dep) {
                    a.push(v);
                }
            }
        }
        for ((i, j), &ocean) in mask.indexed_iter() {
            if ocean {
                for (k, s) in inc_sq.iter_mut().enumerate() {
                    *s += (d.truth.values[[i, j, k]] - d.interp.values[[i, j, k]]).powi(2);
                }
                inc_n += 1;
            }
        }
    }
    let vars = crate::geo::ALL_VARS;
    let background = bg.iter().zip(vars).map(|(a, v)| a.moments(&format!("background {v}"))).collect::<Result<Vec<_>>>()?;
    let mut sources = Vec::with_capacity(schemas.len());
    for (acc, s) in src.iter().zip(schemas) {
        let mut ms = Vec::with_capacity(acc.len());
        for (c, (a, name)) in acc.iter().zip(s.id.channels()).enumerate() {
            if s.id == SourceId::Ssw && c == 1 {
                ms.push(Moments::IDENTITY);
            } else if a.n == 0 {
                // source never observed on these days; it will always be absent
                ms.push(Moments::IDENTITY);
            } else {
                ms.push(a.moments(&format!("{} channel {name}", s.id))?);
            }
        }
        sources.push(ms);
    }
    let mut increment_scale = Vec::with_capacity(N_VARS);
    for (k, s) in inc_sq.iter().enumerate() {
        let rms = (s / inc_n.max(1) as f64).sqrt();
        if !(rms > 0.0) {
            return Err(Error::Config(format!("{} increments are identically zero on the training days", vars[k])));
        }
        increment_scale.push(rms);
    }
    Ok(NormStats { background, sources, increment_scale, fit_days: days })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    /// `None` for the initial evaluation.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters.
    pub model: AssimModel<f32>,
    pub best_epoch: u32,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss.
    pub aborted: Option<String>,
}

pub fn write_loss_csv<W: std::io::Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Format(format!("loss CSV: {e}"));
    w.write_record(["epoch", "lr", "train_loss", "val_loss"]).map_err(err)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.lr),
            r.train_loss.map(|x| format!("{x:.9e}")).unwrap_or_default(),
            format!("{:.9e}", r.val_loss),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("loss CSV: {e}")))
}

fn sample_loss_and_grads(model: &AssimModel<f32>, s: &TrainSample<f32>) -> Result<(f64, ModelGrads<f32>)> {
    let trace = model.forward_trace(&s.inputs, s.queries.view())?;
    let keep = vec![true; s.cells.len()];
    let (loss, up) = ndcore::masked_mse_grad(trace.output().view(), s.target.view(), &keep)?;
    Ok((loss, model.backward(&trace, up.view())?))
}

fn mean_val_loss(model: &AssimModel<f32>, val: &[TrainSample<f32>]) -> Result<f64> {
    let losses = val
        .par_iter()
        .map(|s| {
            let pred = model.predict(&s.inputs, s.queries.view())?;
            Ok(ndcore::masked_mse(pred.view(), s.target.view(), &vec![true; s.cells.len()])?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn pick<R: Rng>(keys: &[SampleKey], n: usize, rng: &mut R) -> Vec<SampleKey> {
    if n == 0 || n >= keys.len() {
        return keys.to_vec();
    }
    let mut idx = sample_indices(rng, keys.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| keys[i]).collect()
}

/// Adam on per-sample masked MSE of normalized increments. Per-sample
/// gradients are computed on the rayon pool and summed in sample order.
pub fn train(
    init: AssimModel<f32>,
    provider: &dyn DayProvider,
    splits: &Splits,
    cfg: &TrainConfig,
    master_seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    splits.validate()?;
    let patches = init.patches(provider.fine())?;
    let train_keys = enumerate_samples(splits.train, &patches, provider);
    let val_keys = enumerate_samples(splits.val, &patches, provider);
    if train_keys.is_empty() || val_keys.is_empty() {
        return Err(Error::Config("no training or validation samples".into()));
    }
    let no_drop = vec![false; init.schemas.len()];
    let val_keys = pick(&val_keys, cfg.val_samples, &mut seed::rng(master_seed, "val", &[]));
    let val = val_keys
        .par_iter()
        .enumerate()
        .map(|(n, &k)| {
            let mut rng = seed::rng(master_seed, "val-queries", &[n as i64]);
            build_sample(&init, provider, k, &patches[k.patch], cfg.queries_per_patch, &no_drop, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let schedule = LrSchedule::proportional(cfg.learning_rate, cfg.epochs.max(1), cfg.lr_gamma)?;
    let mut model = init;
    let mut adam = Adam::<f32>::new(AdamConfig::default());
    let init_val = mean_val_loss(&model, &val)?;
    let mut history = vec![EpochRecord { epoch: 0, lr: schedule.lr_at(0), train_loss: None, val_loss: init_val }];
    let mut best = (init_val, 0u32, model.clone());
    let mut stale = 0u32;
    let mut aborted = None;
    log::info!("epoch 0 val {init_val:.5}");

    'epochs: for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut rng = seed::rng(master_seed, "epoch", &[epoch as i64]);
        let mut keys = pick(&train_keys, cfg.samples_per_epoch, &mut rng);
        for i in (1..keys.len()).rev() {
            keys.swap(i, rng.random_range(0..=i));
        }
        let (mut loss_sum, mut loss_n) = (0.0f64, 0usize);
        for (b, batch) in keys.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(i, &k)| {
                    let n = (b * cfg.batch_size + i) as i64;
                    let mut rng = seed::rng(master_seed, "sample", &[epoch as i64, n]);
                    let dropped: Vec<bool> = (0..model.schemas.len()).map(|_| rng.random_bool(cfg.dropout)).collect();
                    let s = build_sample(&model, provider, k, &patches[k.patch], cfg.queries_per_patch, &dropped, &mut rng)?;
                    sample_loss_and_grads(&model, &s)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = ModelGrads::zeros_like(&model);
            for (l, g) in &results {
                loss_sum += l;
                grads.add_assign(g);
            }
            loss_n += results.len();
            let batch_loss: f64 = results.iter().map(|r| r.0).sum();
            if !batch_loss.is_finite() {
                aborted = Some(format!("non-finite training loss at epoch {} batch {b}", epoch + 1));
                break 'epochs;
            }
            grads.scale(1.0 / results.len() as f32);
            let gs = grads.slices();
            if let Err(e) = adam.step(&mut model.param_slices_mut(), &gs, lr) {
                aborted = Some(format!("optimizer step rejected at epoch {} batch {b}: {e}", epoch + 1));
                break 'epochs;
            }
        }
        let val_loss = mean_val_loss(&model, &val)?;
        let train_loss = loss_sum / loss_n.max(1) as f64;
        log::info!("epoch {} lr {lr:.2e} train {train_loss:.5} val {val_loss:.5}", epoch + 1);
        history.push(EpochRecord { epoch: epoch + 1, lr, train_loss: Some(train_loss), val_loss });
        if !val_loss.is_finite() {
            aborted = Some(format!("non-finite validation loss at epoch {}", epoch + 1));
            break;
        }
        if val_loss < best.0 {
            best = (val_loss, epoch + 1, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                log::info!("early stop after epoch {}", epoch + 1);
                break;
            }
        }
    }
    Ok(TrainOutcome { model: best.2, best_epoch: best.1, history, aborted })
}
