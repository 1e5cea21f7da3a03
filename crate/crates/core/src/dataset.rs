//! Lazily loaded per-day inputs and targets, either simulated in memory or
//! read from grid and observation files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;

use crate::geo::{regrid_bilinear, GridField, GridSpec};
use crate::io::{read_grid, read_obs};
use crate::obs::{simulate_source, thin_observations, ObsContext, ObservationSet, SourceSchema};
use crate::world::{ForecastParams, World};
use crate::{Error, Result};

/// Everything one day contributes to training or evaluation.
#[derive(Debug, Clone)]
pub struct DayData {
    pub day: i64,
    /// Fine truth.
    pub truth: Arc<GridField>,
    /// Coarse background.
    pub background: Arc<GridField>,
    /// Background bilinearly interpolated to the fine grid.
    pub interp: Arc<GridField>,
    /// One set per schema, in schema order.
    pub obs: Arc<Vec<ObservationSet>>,
}

impl DayData {
    pub fn obs_refs(&self) -> Vec<&ObservationSet> {
        self.obs.iter().collect()
    }
}

pub trait DayProvider: Send + Sync {
    fn fine(&self) -> &GridSpec;
    fn fine_mask(&self) -> &Array2<bool>;
    fn load(&self, day: i64) -> Result<DayData>;
}

/// Memoizes another provider.
pub struct DayCache<P> {
    inner: P,
    days: Mutex<BTreeMap<i64, DayData>>,
}

impl<P: DayProvider> DayCache<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, days: Mutex::new(BTreeMap::new()) }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: DayProvider> DayProvider for DayCache<P> {
    fn fine(&self) -> &GridSpec {
        self.inner.fine()
    }
    fn fine_mask(&self) -> &Array2<bool> {
        self.inner.fine_mask()
    }
    fn load(&self, day: i64) -> Result<DayData> {
        if let Some(d) = self.days.lock().expect("cache lock").get(&day) {
            return Ok(d.clone());
        }
        let d = self.inner.load(day)?;
        self.days.lock().expect("cache lock").entry(day).or_insert_with(|| d.clone());
        Ok(d)
    }
}

/// Generates days from the synthetic world on demand.
pub struct SimDays {
    pub world: Arc<World>,
    pub schemas: Vec<SourceSchema>,
    pub forecast: ForecastParams,
    pub lead: i64,
    pub seed: u64,
    pub ctx: ObsContext,
}

impl DayProvider for SimDays {
    fn fine(&self) -> &GridSpec {
        &self.world.fine
    }
    fn fine_mask(&self) -> &Array2<bool> {
        &self.world.fine_mask
    }
    fn load(&self, day: i64) -> Result<DayData> {
        let truth = self.world.truth_state(day)?;
        let background = self.world.make_background(day, self.lead, &self.forecast, self.seed)?;
        let interp = self.world.to_fine(&background)?;
        let obs = self
            .schemas
            .iter()
            .map(|s| simulate_source(&truth, s, &self.ctx, day, self.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(DayData {
            day,
            truth: Arc::new(truth),
            background: Arc::new(background),
            interp: Arc::new(interp),
            obs: Arc::new(obs),
        })
    }
}

pub fn truth_path(world_dir: &Path, day: i64) -> PathBuf {
    world_dir.join(format!("truth_{day:04}.grid"))
}

pub fn background_path(world_dir: &Path, day: i64) -> PathBuf {
    world_dir.join(format!("background_{day:04}.grid"))
}

pub fn obs_path(obs_dir: &Path, source: crate::obs::SourceId, day: i64) -> PathBuf {
    obs_dir.join(format!("{}_{day:04}.obs", source.name()))
}

/// Reads days written by the world and observation generators.
pub struct FileDays {
    pub world_dir: PathBuf,
    pub obs_dir: PathBuf,
    pub schemas: Vec<SourceSchema>,
    pub fine: GridSpec,
    pub fine_mask: Array2<bool>,
}

impl DayProvider for FileDays {
    fn fine(&self) -> &GridSpec {
        &self.fine
    }
    fn fine_mask(&self) -> &Array2<bool> {
        &self.fine_mask
    }
    fn load(&self, day: i64) -> Result<DayData> {
        let named = |e: Error| match e {
            Error::Io { path, source } => Error::Io { path: format!("{path} (day {day})"), source },
            other => other,
        };
        let truth = read_grid(&truth_path(&self.world_dir, day)).map_err(named)?;
        let background = read_grid(&background_path(&self.world_dir, day)).map_err(named)?;
        if truth.spec != self.fine || truth.mask != self.fine_mask {
            return Err(Error::Schema(format!("truth for day {day} is not on the fine grid")));
        }
        let interp = regrid_bilinear(&background, &self.fine, &self.fine_mask)?;
        let mut obs = Vec::with_capacity(self.schemas.len());
        for s in &self.schemas {
            let o = read_obs(&obs_path(&self.obs_dir, s.id, day)).map_err(named)?;
            if o.day != day {
                return Err(Error::Schema(format!("{} file for day {day} holds day {}", s.id, o.day)));
            }
            obs.push(o);
        }
        Ok(DayData {
            day,
            truth: Arc::new(truth),
            background: Arc::new(background),
            interp: Arc::new(interp),
            obs: Arc::new(obs),
        })
    }
}

/// Per-source thinning resolutions; `None` keeps a source as is.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinPlan(pub Vec<Option<f64>>);

impl ThinPlan {
    /// Every gridded source thinned to one resolution.
    pub fn uniform(schemas: &[SourceSchema], res: f64) -> Self {
        Self(schemas.iter().map(|s| s.coverage.spacing().map(|_| res)).collect())
    }

    /// Every gridded source thinned to `factor` times its own spacing.
    pub fn native_factor(schemas: &[SourceSchema], factor: f64) -> Self {
        Self(schemas.iter().map(|s| s.coverage.spacing().map(|sp| sp * factor)).collect())
    }

    pub fn apply(&self, obs: &[ObservationSet], grid: &GridSpec, mask: &Array2<bool>) -> Result<Vec<ObservationSet>> {
        if obs.len() != self.0.len() {
            return Err(Error::Schema(format!("thinning plan for {} sources, got {}", self.0.len(), obs.len())));
        }
        obs.iter()
            .zip(&self.0)
            .map(|(o, r)| match r {
                Some(res) => thin_observations(o, *res, grid, mask),
                None => Ok(o.clone()),
            })
            .collect()
    }
}

/// Wraps a provider and thins its observations.
pub struct ThinnedDays<P> {
    pub inner: P,
    pub plan: ThinPlan,
}

impl<P: DayProvider> DayProvider for ThinnedDays<P> {
    fn fine(&self) -> &GridSpec {
        self.inner.fine()
    }
    fn fine_mask(&self) -> &Array2<bool> {
        self.inner.fine_mask()
    }
    fn load(&self, day: i64) -> Result<DayData> {
        let d = self.inner.load(day)?;
        let obs = self.plan.apply(&d.obs, self.inner.fine(), self.inner.fine_mask())?;
        Ok(DayData { obs: Arc::new(obs), ..d })
    }
}

impl<P: DayProvider + ?Sized> DayProvider for &P {
    fn fine(&self) -> &GridSpec {
        (**self).fine()
    }
    fn fine_mask(&self) -> &Array2<bool> {
        (**self).fine_mask()
    }
    fn load(&self, day: i64) -> Result<DayData> {
        (**self).load(day)
    }
}
