//! One function per CLI verb. Each reads its prerequisites through
//! checksummed manifests, refuses artifacts made from other inputs, and
//! writes its outputs with a manifest of its own.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ndcore::checkpoint::Checkpoint;
use pointassim::analyze::{
    contribution_analysis, sensitivity_analysis, ContributionTable, ResolutionTable, SensitivityMap,
};
use pointassim::dataset::{background_path, obs_path, truth_path, DayCache, DayData, DayProvider, FileDays, ThinPlan, ThinnedDays};
use pointassim::eval::{
    forecast_rmse_reduction, psd_zonal, psd_zonal_values, skill_ratios, spectral_log_error, speed, write_forecast_csv,
    write_skill_csv, write_spectrum_csv, Climatology, ForecastCurves, SkillAccumulator, SkillRatios, SkillReport, Spectrum,
};
use pointassim::geo::{regrid_bilinear, GridField, GridSpec, Var, ALL_VARS};
use pointassim::io::{grid_to_bytes, obs_to_bytes, quantize, read_grid, write_atomic};
use pointassim::model::{domain_anchors, AssimModel};
use pointassim::obs::{sla_reference, simulate_source, ObsContext, SourceId};
use pointassim::seed;
use pointassim::train::{fit_norm_stats, train, write_loss_csv, Splits, TrainOutcome};
use pointassim::world::World;
use pointassim::{Error, Result};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{log_run, require_manifest, short, FileEntry, Layout, Lock, Manifest};

/// Observation configuration an analysis is produced with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsMode {
    Full,
    /// Gridded sources thinned to the coarse resolution.
    Thinned,
    /// Bilinear interpolation of the background; no model.
    Interp,
    /// Gridded sources thinned to a multiple of their own spacing.
    Native(f64),
}

impl fmt::Display for ObsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObsMode::Full => f.write_str("full"),
            ObsMode::Thinned => f.write_str("thinned"),
            ObsMode::Interp => f.write_str("interp"),
            ObsMode::Native(x) => write!(f, "native-x{x}"),
        }
    }
}

impl FromStr for ObsMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(ObsMode::Full),
            "thinned" => Ok(ObsMode::Thinned),
            "interp" => Ok(ObsMode::Interp),
            _ => s
                .strip_prefix("native-x")
                .and_then(|f| f.parse::<f64>().ok())
                .filter(|f| *f >= 1.0)
                .map(ObsMode::Native)
                .ok_or_else(|| format!("unknown mode {s}; expected full, thinned, interp or native-x<factor>")),
        }
    }
}

type Provider = DayCache<ThinnedDays<FileDays>>;

/// A validated configuration bound to its locked experiment directory.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    pub config_hash: String,
    pub world: Arc<World>,
    _lock: Lock,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig) -> CliResult<Self> {
        cfg.validate()?;
        let config_hash = cfg.config_hash()?;
        let layout = Layout::new(cfg.out.clone());
        let lock = Lock::acquire(&layout.root)?;
        write_atomic(&layout.configs().join(format!("{config_hash}.toml")), cfg.to_toml()?.as_bytes())?;
        let world = Arc::new(World::new(cfg.world.clone())?);
        Ok(Self { cfg, layout, config_hash, world, _lock: lock })
    }

    fn finish(&self, command: &str, mut manifest: Manifest, path: &Path) -> CliResult<()> {
        manifest.save(path)?;
        log_run(&self.layout.root, &format!("{command} config={}", short(&self.config_hash)))?;
        Ok(())
    }

    fn world_manifest(&self) -> PathBuf {
        self.layout.world().join("manifest.toml")
    }

    fn obs_manifest(&self) -> PathBuf {
        self.layout.obs().join("manifest.toml")
    }

    fn check_world(&self) -> CliResult<()> {
        require_manifest(&self.world_manifest(), &self.cfg.world_hash()?, "world-gen")?.verify(&self.layout.root)?;
        Ok(())
    }

    fn check_obs(&self) -> CliResult<()> {
        self.check_world()?;
        require_manifest(&self.obs_manifest(), &self.cfg.obs_hash()?, "obs-sim")?.verify(&self.layout.root)?;
        Ok(())
    }

    fn plan(&self, mode: ObsMode) -> ThinPlan {
        let schemas = &self.cfg.obs.sources;
        match mode {
            ObsMode::Full | ObsMode::Interp => ThinPlan(vec![None; schemas.len()]),
            ObsMode::Thinned => ThinPlan::uniform(schemas, self.cfg.obs.thin_res.unwrap_or(self.world.coarse.res)),
            ObsMode::Native(f) => ThinPlan::native_factor(schemas, f),
        }
    }

    /// Days from the experiment's files, with observations thinned per `mode`.
    pub fn provider(&self, mode: ObsMode) -> CliResult<Provider> {
        self.check_obs()?;
        let files = FileDays {
            world_dir: self.layout.world(),
            obs_dir: self.layout.obs(),
            schemas: self.cfg.obs.sources.clone(),
            fine: self.world.fine.clone(),
            fine_mask: self.world.fine_mask.clone(),
        };
        Ok(DayCache::new(ThinnedDays { inner: files, plan: self.plan(mode) }))
    }

    pub fn climatology(&self) -> CliResult<Climatology> {
        self.check_world()?;
        let dir = self.layout.world();
        Ok(Climatology::fit(self.cfg.splits.train, self.cfg.eval.clim_window, |d| read_grid(&truth_path(&dir, d)))?)
    }

    /// Loads the checkpoint trained for `mode`, refusing one trained from
    /// other inputs.
    pub fn load_model(&self, mode: ObsMode) -> CliResult<AssimModel> {
        let path = self.layout.checkpoint(&mode.to_string());
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let ck = Checkpoint::from_bytes(&bytes).map_err(Error::from)?;
        let expected = self.cfg.model_hash(&mode.to_string())?;
        if ck.config_hash != expected {
            return Err(CliError::Stale(format!(
                "{} was trained from a different configuration ({} != {}); rerun train --mode {mode}",
                path.display(),
                short(&ck.config_hash),
                short(&expected)
            )));
        }
        Ok(AssimModel::from_checkpoint(&ck, Some(&self.cfg.world_hash()?))?)
    }

    fn entry(&self, path: &Path, bytes: &[u8]) -> FileEntry {
        let mut m = Manifest::new("", "", "");
        m.record(&self.layout.root, path, bytes);
        m.files.remove(0)
    }
}

/// Truth for every day and backgrounds from the lead onwards.
pub fn cmd_world_gen(ctx: &Ctx) -> CliResult<Manifest> {
    let w = &ctx.world;
    let dir = ctx.layout.world();
    let lead = ctx.cfg.background.lead;
    let fp = &ctx.cfg.background.forecast;
    let entries = (0..w.config.days)
        .into_par_iter()
        .map(|day| -> Result<Vec<FileEntry>> {
            let mut out = Vec::with_capacity(2);
            let bytes = grid_to_bytes(&w.truth_state(day)?);
            let p = truth_path(&dir, day);
            write_atomic(&p, &bytes)?;
            out.push(ctx.entry(&p, &bytes));
            if day >= lead {
                let bytes = grid_to_bytes(&w.make_background(day, lead, fp, ctx.cfg.seed)?);
                let p = background_path(&dir, day);
                write_atomic(&p, &bytes)?;
                out.push(ctx.entry(&p, &bytes));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = Manifest::new("world-gen", &ctx.config_hash, &ctx.cfg.world_hash()?);
    m.files = entries.into_iter().flatten().collect();
    ctx.finish("world-gen", m.clone(), &ctx.world_manifest())?;
    log::info!("wrote {} world files", m.files.len());
    Ok(m)
}

/// Every source on every day that has a background.
pub fn cmd_obs_sim(ctx: &Ctx) -> CliResult<Manifest> {
    ctx.check_world()?;
    let wdir = ctx.layout.world();
    let odir = ctx.layout.obs();
    let reference = sla_reference(Splits::days(ctx.cfg.splits.train).map(|d| read_grid(&truth_path(&wdir, d))))?;
    let octx = ObsContext { sla_reference: reference, season_period: ctx.world.config.season_period };
    let entries = (ctx.cfg.background.lead..ctx.world.config.days)
        .into_par_iter()
        .map(|day| -> Result<Vec<FileEntry>> {
            let truth = read_grid(&truth_path(&wdir, day))?;
            let mut out = Vec::new();
            for s in &ctx.cfg.obs.sources {
                let o = simulate_source(&truth, s, &octx, day, ctx.cfg.seed)?;
                let bytes = obs_to_bytes(&o);
                let p = obs_path(&odir, s.id, day);
                write_atomic(&p, &bytes)?;
                out.push(ctx.entry(&p, &bytes));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = Manifest::new("obs-sim", &ctx.config_hash, &ctx.cfg.obs_hash()?);
    m.files = entries.into_iter().flatten().collect();
    ctx.finish("obs-sim", m.clone(), &ctx.obs_manifest())?;
    log::info!("wrote {} observation files", m.files.len());
    Ok(m)
}

pub fn cmd_train(ctx: &Ctx, mode: ObsMode) -> CliResult<TrainOutcome> {
    if mode == ObsMode::Interp {
        return Err(Error::Config("the interp mode has no model to train".into()).into());
    }
    let name = mode.to_string();
    let p = ctx.provider(mode)?;
    let schemas = ctx.cfg.obs.sources.clone();
    let norm = fit_norm_stats(&p, &schemas, ctx.cfg.splits.train)?;
    // every mode starts from the same weights and sees the same sample sequence
    let mut rng = seed::rng(ctx.cfg.seed, "init", &[]);
    let init = AssimModel::init(ctx.cfg.model_config(), schemas, norm, domain_anchors(&ctx.world.coarse, 1)?, &mut rng)?;
    log::info!("training {name} model with {} parameters", init.param_count());
    let out = train(init, &p, &ctx.cfg.splits, &ctx.cfg.train, seed::derive(ctx.cfg.seed, "train", &[]))?;

    let root = &ctx.layout.root;
    let mut m = Manifest::new("train", &ctx.config_hash, &ctx.cfg.model_hash(&name)?);
    let mut loss = Vec::new();
    write_loss_csv(&out.history, &mut loss)?;
    m.write(root, &ctx.layout.report(&format!("loss-{name}.csv")), &loss)?;
    if let Some(msg) = &out.aborted {
        ctx.finish("train", m, &ctx.layout.ckpt().join(format!("manifest-{name}.toml")))?;
        return Err(Error::Numerical(format!("training of the {name} model aborted: {msg}")).into());
    }
    let ck = out.model.to_checkpoint(&ctx.cfg.model_hash(&name)?, &ctx.cfg.world_hash()?)?;
    m.write(root, &ctx.layout.checkpoint(&name), &ck.to_bytes())?;
    ctx.finish("train", m, &ctx.layout.ckpt().join(format!("manifest-{name}.toml")))?;
    Ok(out)
}

fn analyse(model: Option<&AssimModel>, d: &DayData, target: &GridSpec, mask: &ndarray::Array2<bool>) -> Result<GridField> {
    match model {
        Some(m) => m.assimilate(&d.background, &d.obs_refs(), target, mask),
        None => regrid_bilinear(&d.background, target, mask),
    }
}

fn map_field(spec: &GridSpec, mask: &ndarray::Array2<bool>, values: ndarray::Array3<f64>, day: i64) -> Result<GridField> {
    GridField::new(spec.clone(), ALL_VARS.to_vec(), values, mask.clone(), day)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Spectral fidelity of the fine analysis and of the interpolated coarse
/// analysis for one field.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdScore {
    pub field: String,
    pub days: usize,
    pub analysis_error: f64,
    pub coarse_interp_error: f64,
}

#[derive(Debug, Clone)]
pub struct AssimilateSummary {
    pub mode: ObsMode,
    pub analysis: SkillReport,
    pub background: SkillReport,
    pub ratios: SkillRatios,
    pub psd: Vec<PsdScore>,
}

fn spectrum_of(field: &GridField, name: &str, band: (f64, f64)) -> Result<Spectrum> {
    match name {
        "speed" => psd_zonal_values(&field.spec, &field.mask, speed(field)?.view(), band),
        _ => psd_zonal(field, band, Var::Ssh),
    }
}

fn add_spectrum(acc: &mut BTreeMap<(String, String), Spectrum>, key: (String, String), s: Spectrum) {
    match acc.get_mut(&key) {
        Some(t) => t.power.iter_mut().zip(&s.power).for_each(|(a, b)| *a += b),
        None => {
            acc.insert(key, s);
        }
    }
}

/// Analyses for every test day, their skill against truth next to the
/// interpolated background, and zonal spectra on the leading test days.
pub fn cmd_assimilate(ctx: &Ctx, mode: ObsMode) -> CliResult<AssimilateSummary> {
    let name = mode.to_string();
    let model = match mode {
        ObsMode::Interp => None,
        m => Some(ctx.load_model(m)?),
    };
    let p = ctx.provider(mode)?;
    let clim = ctx.climatology()?;
    let (fine, mask) = (&ctx.world.fine, &ctx.world.fine_mask);
    let days = ctx.cfg.test_days();
    let psd_days = ctx.cfg.leading_test_days(ctx.cfg.eval.psd_days);
    let band = ctx.cfg.eval.psd_band;
    let root = &ctx.layout.root;
    let input = match mode {
        ObsMode::Interp => ctx.cfg.obs_hash()?,
        _ => ctx.cfg.model_hash(&name)?,
    };
    let mut m = Manifest::new("assimilate", &ctx.config_hash, &input);
    let mut acc_a = SkillAccumulator::new(Some(&clim));
    let mut acc_b = SkillAccumulator::new(Some(&clim));
    let mut spectra: BTreeMap<(String, String), Spectrum> = BTreeMap::new();
    for &day in &days {
        let d = p.load(day)?;
        let a = quantize(&analyse(model.as_ref(), &d, fine, mask)?);
        m.write(root, &ctx.layout.analysis(&name).join(format!("analysis_{day:04}.grid")), &grid_to_bytes(&a))?;
        acc_a.add(&a, &d.truth)?;
        acc_b.add(&d.interp, &d.truth)?;
        if psd_days.contains(&day) {
            let c = quantize(&analyse(model.as_ref(), &d, &ctx.world.coarse, &ctx.world.coarse_mask)?);
            m.write(root, &ctx.layout.analysis(&format!("{name}-coarse")).join(format!("analysis_{day:04}.grid")), &grid_to_bytes(&c))?;
            let ci = ctx.world.to_fine(&c)?;
            for field in ["ssh", "speed"] {
                for (series, g) in [("truth", &*d.truth), ("analysis", &a), ("coarse_interp", &ci)] {
                    add_spectrum(&mut spectra, (field.to_string(), series.to_string()), spectrum_of(g, field, band)?);
                }
            }
        }
        log::debug!("assimilated day {day} ({name})");
    }
    let analysis = acc_a.finish()?;
    let background = acc_b.finish()?;
    let ratios = skill_ratios(&analysis, &background)?;

    let n_psd = psd_days.len();
    for s in spectra.values_mut() {
        s.power.iter_mut().for_each(|v| *v /= n_psd as f64);
    }
    let mut psd = Vec::new();
    if n_psd > 0 {
        for field in ["ssh", "speed"] {
            let get = |series: &str| &spectra[&(field.to_string(), series.to_string())];
            let frac = ctx.cfg.eval.psd_top_fraction;
            psd.push(PsdScore {
                field: field.into(),
                days: n_psd,
                analysis_error: spectral_log_error(get("analysis"), get("truth"), frac)?,
                coarse_interp_error: spectral_log_error(get("coarse_interp"), get("truth"), frac)?,
            });
        }
        let labelled: Vec<(String, &Spectrum)> = spectra.iter().map(|((f, s), v)| (format!("{f}/{s}"), v)).collect();
        let refs: Vec<(&str, &Spectrum)> = labelled.iter().map(|(l, s)| (l.as_str(), *s)).collect();
        m.write(root, &ctx.layout.report(&format!("psd-{name}.csv")), &csv_bytes(|b| write_spectrum_csv(b, &refs))?)?;
        m.write(root, &ctx.layout.report(&format!("psd-summary-{name}.csv")), &psd_summary_csv(&psd)?)?;
    }
    m.write(
        root,
        &ctx.layout.report(&format!("skill-{name}.csv")),
        &csv_bytes(|b| write_skill_csv(b, &name, &analysis, Some((&background, &ratios))))?,
    )?;
    let first = days[0];
    let maps = [("mae", analysis.mae_map.clone()), ("mae-diff", ratios.mae_diff_map.clone())];
    for (label, values) in maps {
        let f = map_field(fine, mask, values, first)?;
        m.write(root, &ctx.layout.report(&format!("{label}-{name}.grid")), &grid_to_bytes(&f))?;
    }
    ctx.finish("assimilate", m, &ctx.layout.analysis(&name).join("manifest.toml"))?;
    Ok(AssimilateSummary { mode, analysis, background, ratios, psd })
}

fn psd_summary_csv(rows: &[PsdScore]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(["field", "days", "analysis_error", "coarse_interp_error"]).map_err(err)?;
    for r in rows {
        w.write_record([r.field.clone(), r.days.to_string(), r.analysis_error.to_string(), r.coarse_interp_error.to_string()])
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
}

/// `{prefix}_{day}.grid` files in a directory.
fn grid_files(dir: &Path) -> Result<BTreeMap<(String, i64), PathBuf>> {
    let mut out = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in rd {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name().to_string_lossy().to_string();
        let Some(stem) = name.strip_suffix(".grid") else { continue };
        let Some((prefix, day)) = stem.rsplit_once('_') else { continue };
        if let Ok(d) = day.parse::<i64>() {
            out.insert((prefix.to_string(), d), e.path());
        }
    }
    Ok(out)
}

fn by_day(files: BTreeMap<(String, i64), PathBuf>, prefix: Option<&str>, dir: &Path) -> Result<BTreeMap<i64, PathBuf>> {
    let prefixes: std::collections::BTreeSet<&String> = files.keys().map(|(p, _)| p).collect();
    let chosen = match prefix {
        Some(p) => p.to_string(),
        None if prefixes.len() == 1 => prefixes.iter().next().map(|s| s.to_string()).unwrap_or_default(),
        None if prefixes.iter().any(|p| *p == "truth") => "truth".into(),
        None => {
            return Err(Error::Config(format!("{} holds several series {prefixes:?}; pick one with a prefix", dir.display())))
        }
    };
    Ok(files.into_iter().filter(|((p, _), _)| *p == chosen).map(|((_, d), path)| (d, path)).collect())
}

/// Skill of every grid file in `pred` against the same day in `reference`.
pub fn cmd_eval(
    ctx: &Ctx,
    pred: &Path,
    reference: &Path,
    pred_prefix: Option<&str>,
    ref_prefix: Option<&str>,
    label: &str,
) -> CliResult<SkillReport> {
    let preds = by_day(grid_files(pred)?, pred_prefix, pred)?;
    let refs = by_day(grid_files(reference)?, ref_prefix, reference)?;
    if preds.is_empty() {
        return Err(Error::Io {
            path: pred.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no grid files"),
        }
        .into());
    }
    let clim = ctx.climatology().ok();
    let mut acc = None;
    for (day, path) in &preds {
        let r = refs.get(day).ok_or_else(|| Error::Schema(format!("no reference field for day {day} in {}", reference.display())))?;
        let a = read_grid(path)?;
        let b = read_grid(r)?;
        let acc = acc.get_or_insert_with(|| {
            let usable = clim.as_ref().filter(|c| c.spec == a.spec && c.mask == a.mask && c.vars == a.vars);
            SkillAccumulator::new(usable)
        });
        acc.add(&a, &b)?;
    }
    let report = acc.expect("at least one day").finish()?;
    let mut m = Manifest::new("eval", &ctx.config_hash, &ctx.config_hash);
    m.write(&ctx.layout.root, &ctx.layout.report(&format!("eval-{label}.csv")), &csv_bytes(|b| write_skill_csv(b, label, &report, None))?)?;
    ctx.finish("eval", m, &ctx.layout.reports().join(format!("manifest-eval-{label}.toml")))?;
    Ok(report)
}

/// Forecasts from stored analyses against forecasts from the interpolated
/// background, on the leading test days.
pub fn cmd_forecast_verify(ctx: &Ctx, mode: ObsMode) -> CliResult<ForecastCurves> {
    ctx.check_world()?;
    let name = mode.to_string();
    let adir = ctx.layout.analysis(&name);
    let wdir = ctx.layout.world();
    let starts = ctx.cfg.leading_test_days(ctx.cfg.eval.forecast_starts);
    let w = &ctx.world;
    let curves = forecast_rmse_reduction(
        w,
        &starts,
        ctx.cfg.eval.forecast_horizon,
        &ctx.cfg.background.forecast,
        ctx.cfg.seed,
        |d| read_grid(&adir.join(format!("analysis_{d:04}.grid"))),
        |d| w.to_fine(&read_grid(&background_path(&wdir, d))?),
    )?;
    let mut m = Manifest::new("forecast-verify", &ctx.config_hash, &ctx.config_hash);
    m.write(&ctx.layout.root, &ctx.layout.report(&format!("forecast-{name}.csv")), &csv_bytes(|b| write_forecast_csv(b, &curves))?)?;
    ctx.finish("forecast-verify", m, &ctx.layout.reports().join(format!("manifest-forecast-{name}.toml")))?;
    Ok(curves)
}

pub fn cmd_analyze_contribution(ctx: &Ctx) -> CliResult<ContributionTable> {
    let model = ctx.load_model(ObsMode::Full)?;
    let p = ctx.provider(ObsMode::Full)?;
    let days = ctx.cfg.leading_test_days(ctx.cfg.analyze.contribution_days);
    let sources: Vec<SourceId> = if ctx.cfg.analyze.contribution_sources.is_empty() {
        ctx.cfg.obs.sources.iter().map(|s| s.id).collect()
    } else {
        ctx.cfg.analyze.contribution_sources.clone()
    };
    let root = &ctx.layout.root;
    let dir = ctx.layout.analysis("contribution");
    let mut m = Manifest::new("analyze-contribution", &ctx.config_hash, &ctx.cfg.model_hash("full")?);
    let table = contribution_analysis(&model, &p, &days, &sources, ctx.cfg.train.dropout, |label, f| {
        m.write(root, &dir.join(format!("{label}_{:04}.grid", f.day)), &grid_to_bytes(f))
    })?;
    m.write(root, &ctx.layout.report("contribution.csv"), &csv_bytes(|b| table.write_csv(b))?)?;
    ctx.finish("analyze-contribution", m, &dir.join("manifest.toml"))?;
    Ok(table)
}

pub fn cmd_analyze_sensitivity(ctx: &Ctx) -> CliResult<Vec<SensitivityMap>> {
    let model = ctx.load_model(ObsMode::Full)?;
    let p = ctx.provider(ObsMode::Full)?;
    let clim = ctx.climatology()?;
    let day = ctx.cfg.analyze.sensitivity_day.unwrap_or(ctx.cfg.splits.test.0);
    let root = &ctx.layout.root;
    let dir = ctx.layout.analysis("sensitivity");
    let mut m = Manifest::new("analyze-sensitivity", &ctx.config_hash, &ctx.cfg.model_hash("full")?);
    let mut maps = Vec::new();
    for &src in &ctx.cfg.analyze.sensitivity_sources {
        let s = sensitivity_analysis(&model, &p, &clim, day, src, &ctx.cfg.analyze.sensitivity, ctx.cfg.seed)?;
        let f = map_field(&ctx.world.fine, &ctx.world.fine_mask, s.values.clone(), day)?;
        m.write(root, &dir.join(format!("{}_{day:04}.grid", src.name())), &grid_to_bytes(&f))?;
        m.write(root, &ctx.layout.report(&format!("sensitivity-{}.csv", src.name())), &csv_bytes(|b| s.write_csv(b))?)?;
        maps.push(s);
    }
    ctx.finish("analyze-sensitivity", m, &dir.join("manifest.toml"))?;
    Ok(maps)
}

fn score(model: &AssimModel, p: &Provider, days: &[i64], fine: &GridSpec, mask: &ndarray::Array2<bool>, clim: &Climatology) -> Result<(SkillReport, SkillReport)> {
    let mut a = SkillAccumulator::new(Some(clim));
    let mut b = SkillAccumulator::new(Some(clim));
    for &day in days {
        let d = p.load(day)?;
        a.add(&quantize(&analyse(Some(model), &d, fine, mask)?), &d.truth)?;
        b.add(&d.interp, &d.truth)?;
    }
    Ok((a.finish()?, b.finish()?))
}

/// Test-day skill of one model per thinning factor against the full model.
pub fn cmd_analyze_resolution(ctx: &Ctx) -> CliResult<ResolutionTable> {
    let clim = ctx.climatology()?;
    let days = ctx.cfg.test_days();
    let (fine, mask) = (&ctx.world.fine, &ctx.world.fine_mask);
    let root = &ctx.layout.root;
    let mut m = Manifest::new("analyze-resolution", &ctx.config_hash, &ctx.config_hash);
    let origin = score(&ctx.load_model(ObsMode::Full)?, &ctx.provider(ObsMode::Full)?, &days, fine, mask, &clim)?.0;
    let mut tiers = Vec::new();
    for &f in &ctx.cfg.analyze.resolution_factors {
        let mode = ObsMode::Native(f);
        let model = ctx.load_model(mode)?;
        let (a, b) = score(&model, &ctx.provider(mode)?, &days, fine, mask, &clim)?;
        let r = skill_ratios(&a, &b)?;
        let name = mode.to_string();
        m.write(root, &ctx.layout.report(&format!("skill-{name}.csv")), &csv_bytes(|w| write_skill_csv(w, &name, &a, Some((&b, &r))))?)?;
        tiers.push((f, a));
    }
    let refs: Vec<(f64, &SkillReport)> = tiers.iter().map(|(f, r)| (*f, r)).collect();
    let table = ResolutionTable::from_reports(&origin, &refs)?;
    m.write(root, &ctx.layout.report("resolution.csv"), &csv_bytes(|w| table.write_csv(w))?)?;
    ctx.finish("analyze-resolution", m, &ctx.layout.reports().join("manifest-resolution.toml"))?;
    Ok(table)
}

/// Outputs of the twin experiment.
#[derive(Debug, Clone)]
pub struct TwinOutcome {
    pub full: AssimilateSummary,
    pub thinned: AssimilateSummary,
    pub interp: AssimilateSummary,
    pub forecast: ForecastCurves,
    /// Every CSV report written, sorted.
    pub reports: Vec<PathBuf>,
}

/// World, observations, full and thinned models, test-day analyses in all
/// three modes, and forecast verification of the full analyses.
pub fn run_twin(ctx: &Ctx) -> CliResult<TwinOutcome> {
    cmd_world_gen(ctx)?;
    cmd_obs_sim(ctx)?;
    cmd_train(ctx, ObsMode::Full)?;
    cmd_train(ctx, ObsMode::Thinned)?;
    let full = cmd_assimilate(ctx, ObsMode::Full)?;
    let thinned = cmd_assimilate(ctx, ObsMode::Thinned)?;
    let interp = cmd_assimilate(ctx, ObsMode::Interp)?;
    let forecast = cmd_forecast_verify(ctx, ObsMode::Full)?;
    let mut reports: Vec<PathBuf> = std::fs::read_dir(ctx.layout.reports())
        .map_err(|e| Error::io(ctx.layout.reports(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    reports.sort();
    Ok(TwinOutcome { full, thinned, interp, forecast, reports })
}

/// Runs `f` on a dedicated pool; sequential mode uses one thread.
pub fn with_threads<R: Send>(threads: Option<usize>, sequential: bool, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let n = if sequential { 1 } else { threads.unwrap_or(0) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {n}-thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_round_trip_through_their_names() {
        for m in [ObsMode::Full, ObsMode::Thinned, ObsMode::Interp, ObsMode::Native(2.0), ObsMode::Native(4.0)] {
            assert_eq!(m.to_string().parse::<ObsMode>().unwrap(), m);
        }
        assert!("native-x0.5".parse::<ObsMode>().is_err());
        assert!("coarse".parse::<ObsMode>().is_err());
    }
}
