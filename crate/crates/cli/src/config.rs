//! Experiment configuration and the hashes that tie artifacts to it.

use std::path::{Path, PathBuf};

use pointassim::analyze::SensitivityConfig;
use pointassim::io::sha256_hex;
use pointassim::model::ModelConfig;
use pointassim::obs::{validate_schemas, SourceId, SourceSchema};
use pointassim::train::{Splits, TrainConfig};
use pointassim::world::{ForecastParams, WorldConfig};
use pointassim::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    /// Forecast days from the truth to the background.
    pub lead: i64,
    pub forecast: ForecastParams,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self { lead: 3, forecast: ForecastParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsConfig {
    pub sources: Vec<SourceSchema>,
    /// Target spacing of the thinned configuration; the coarse grid
    /// resolution when absent.
    pub thin_res: Option<f64>,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self { sources: SourceSchema::defaults(), thin_res: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub patch_deg: (f64, f64),
    pub overlap_deg: (f64, f64),
}

impl Default for PartitionConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { patch_deg: m.patch_deg, overlap_deg: m.overlap_deg }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Half-width of the day-of-year climatology window.
    pub clim_window: i64,
    pub psd_band: (f64, f64),
    /// Fraction of the highest zonal wavenumbers scored.
    pub psd_top_fraction: f64,
    /// Leading test days used for spectra.
    pub psd_days: usize,
    /// Leading test days used as forecast starts.
    pub forecast_starts: usize,
    pub forecast_horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            clim_window: 15,
            psd_band: (30.0, 46.0),
            psd_top_fraction: 1.0 / 3.0,
            psd_days: 10,
            forecast_starts: 10,
            forecast_horizon: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Leading test days scored by the contribution analysis.
    pub contribution_days: usize,
    /// Sources excluded one at a time; every source when empty.
    pub contribution_sources: Vec<SourceId>,
    /// Defaults to the first test day.
    pub sensitivity_day: Option<i64>,
    pub sensitivity_sources: Vec<SourceId>,
    pub sensitivity: SensitivityConfig,
    /// Thinning factors relative to each source's native spacing.
    pub resolution_factors: Vec<f64>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            contribution_days: 10,
            contribution_sources: Vec::new(),
            sensitivity_day: None,
            sensitivity_sources: vec![SourceId::Sst],
            sensitivity: SensitivityConfig::default(),
            resolution_factors: vec![2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub world: WorldConfig,
    pub background: BackgroundConfig,
    pub obs: ObsConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub splits: Splits,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            background: BackgroundConfig::default(),
            obs: ObsConfig::default(),
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
            splits: Splits::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

fn hash_of<T: Serialize>(v: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Wrap<'a, T> {
        v: &'a T,
    }
    let text = toml::to_string(&Wrap { v }).map_err(|e| Error::Format(format!("cannot serialize config: {e}")))?;
    Ok(sha256_hex(text.as_bytes()))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        validate_schemas(&self.obs.sources)?;
        self.model_config().validate()?;
        self.splits.validate()?;
        self.train.validate()?;
        self.background.forecast.validate()?;
        if self.background.lead < 0 {
            return Err(Error::Config("background lead must be nonnegative".into()));
        }
        if self.splits.train.0 < self.background.lead {
            return Err(Error::Config(format!(
                "training starts on day {} but backgrounds exist from day {}",
                self.splits.train.0, self.background.lead
            )));
        }
        if self.splits.test.1 >= self.world.days {
            return Err(Error::Config(format!("test days end at {} but the world has {} days", self.splits.test.1, self.world.days)));
        }
        if self.model.patch_deg != ModelConfig::default().patch_deg && self.model.patch_deg != self.partition.patch_deg
            || self.model.overlap_deg != ModelConfig::default().overlap_deg
                && self.model.overlap_deg != self.partition.overlap_deg
        {
            return Err(Error::Config("set patch geometry in [partition], not [model]".into()));
        }
        let e = &self.eval;
        if !(e.psd_top_fraction > 0.0 && e.psd_top_fraction <= 1.0) || e.psd_band.0 >= e.psd_band.1 {
            return Err(Error::Config("bad spectrum band or wavenumber fraction".into()));
        }
        if self.analyze.resolution_factors.iter().any(|f| !(*f >= 1.0)) {
            return Err(Error::Config("resolution factors must be >= 1".into()));
        }
        Ok(())
    }

    /// Model section with the partition geometry applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { patch_deg: self.partition.patch_deg, overlap_deg: self.partition.overlap_deg, ..self.model.clone() }
    }

    pub fn config_hash(&self) -> Result<String> {
        hash_of(self)
    }

    /// Everything the truth and background files depend on.
    pub fn world_hash(&self) -> Result<String> {
        hash_of(&(self.seed, &self.world, &self.background))
    }

    /// Everything the observation files depend on.
    pub fn obs_hash(&self) -> Result<String> {
        hash_of(&(self.world_hash()?, &self.obs.sources, self.splits.train))
    }

    /// Everything a trained checkpoint depends on, per observation mode.
    pub fn model_hash(&self, mode: &str) -> Result<String> {
        hash_of(&(self.obs_hash()?, format!("{:?}", self.obs.thin_res), self.model_config(), &self.splits, &self.train, mode))
    }

    pub fn test_days(&self) -> Vec<i64> {
        Splits::days(self.splits.test).collect()
    }

    pub fn leading_test_days(&self, n: usize) -> Vec<i64> {
        self.test_days().into_iter().take(n).collect()
    }
}
