//! Verification metrics, skill ratios, zonal spectra and forecast verification.

use std::io::Write;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::geo::{lat_weights, GridField, GridSpec, Var};
use crate::seed;
use crate::world::{ForecastParams, World, DAYS_PER_YEAR};
use crate::{Error, Result};

fn check_pair(pred: &GridField, truth: &GridField) -> Result<()> {
    if !pred.same_layout(truth) {
        return Err(Error::Schema("metric inputs differ in grid, mask or variables".into()));
    }
    Ok(())
}

/// `sqrt(Σ cosφ e² / Σ cosφ)` over ocean cells, per variable.
pub fn rmse_latweighted(pred: &GridField, truth: &GridField) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    let w = lat_weights(&pred.spec);
    let (h, wd) = pred.spec.shape();
    let mut out = Vec::with_capacity(pred.vars.len());
    for k in 0..pred.vars.len() {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..h {
            for j in 0..wd {
                if pred.mask[[i, j]] {
                    let e = pred.values[[i, j, k]] - truth.values[[i, j, k]];
                    num += w[i] * e * e;
                    den += w[i];
                }
            }
        }
        if den <= 0.0 {
            return Err(Error::Degenerate("no ocean cells to score".into()));
        }
        out.push((num / den).sqrt());
    }
    Ok(out)
}

/// Unweighted mean absolute error per variable and the per-cell `|error|`
/// map (NaN on land).
pub fn mae(pred: &GridField, truth: &GridField) -> Result<(Vec<f64>, Array3<f64>)> {
    check_pair(pred, truth)?;
    let n = pred.ocean_count();
    if n == 0 {
        return Err(Error::Degenerate("no ocean cells to score".into()));
    }
    let mut map = Array3::from_elem(pred.values.raw_dim(), f64::NAN);
    let mut sums = vec![0.0; pred.vars.len()];
    for ((i, j, k), v) in map.indexed_iter_mut() {
        if pred.mask[[i, j]] {
            let e = (pred.values[[i, j, k]] - truth.values[[i, j, k]]).abs();
            *v = e;
            sums[k] += e;
        }
    }
    Ok((sums.into_iter().map(|s| s / n as f64).collect(), map))
}

/// Day-of-year mean state from a window of training days, plus the
/// per-variable standard deviation over all training cells and days.
#[derive(Debug, Clone)]
pub struct Climatology {
    pub spec: GridSpec,
    pub mask: Array2<bool>,
    pub vars: Vec<Var>,
    /// Indexed by day of year.
    pub means: Vec<Array3<f64>>,
    pub std: Vec<f64>,
    pub fit_days: (i64, i64),
    pub window: i64,
}

pub fn day_of_year(day: i64) -> usize {
    day.rem_euclid(DAYS_PER_YEAR) as usize
}

impl Climatology {
    /// `window` is the half-width in days of the circular day-of-year
    /// window. Every day of year must receive at least one training day.
    pub fn fit<F>(days: (i64, i64), window: i64, mut truth: F) -> Result<Self>
    where
        F: FnMut(i64) -> Result<GridField>,
    {
        if days.1 < days.0 || window < 0 {
            return Err(Error::Config(format!("bad climatology days {days:?} or window {window}")));
        }
        let n_doy = DAYS_PER_YEAR as usize;
        let first = truth(days.0)?;
        let (spec, mask, vars) = (first.spec.clone(), first.mask.clone(), first.vars.clone());
        let mut sums = vec![Array3::<f64>::zeros(first.values.raw_dim()); n_doy];
        let mut counts = vec![0usize; n_doy];
        let nv = vars.len();
        let (mut m, mut m2, mut n) = (vec![0.0; nv], vec![0.0; nv], 0usize);
        let mut add = |f: &GridField, sums: &mut Vec<Array3<f64>>, counts: &mut Vec<usize>| -> Result<()> {
            if f.spec != spec || f.mask != mask || f.vars != vars {
                return Err(Error::Schema(format!("climatology input for day {} has a different layout", f.day)));
            }
            let d = day_of_year(f.day);
            sums[d].zip_mut_with(&f.values, |s, &v| {
                if v.is_finite() {
                    *s += v
                }
            });
            counts[d] += 1;
            for ((i, j, k), &v) in f.values.indexed_iter() {
                if mask[[i, j]] {
                    m[k] += v;
                    m2[k] += v * v;
                }
            }
            n += 1;
            Ok(())
        };
        add(&first, &mut sums, &mut counts)?;
        drop(first);
        for day in days.0 + 1..=days.1 {
            let f = truth(day)?;
            add(&f, &mut sums, &mut counts)?;
        }
        let ocean = mask.iter().filter(|&&b| b).count() * n;
        let std: Vec<f64> = (0..nv)
            .map(|k| {
                let mean = m[k] / ocean as f64;
                (m2[k] / ocean as f64 - mean * mean).max(0.0).sqrt()
            })
            .collect();
        let mut means = Vec::with_capacity(n_doy);
        for d in 0..n_doy {
            let mut acc = Array3::<f64>::zeros(sums[0].raw_dim());
            let mut c = 0usize;
            for o in -window..=window {
                let dd = (d as i64 + o).rem_euclid(DAYS_PER_YEAR) as usize;
                acc += &sums[dd];
                c += counts[dd];
            }
            if c == 0 {
                return Err(Error::Coverage(format!("day of year {d} has no training day within {window} days")));
            }
            acc /= c as f64;
            for ((i, j, _), v) in acc.indexed_iter_mut() {
                if !mask[[i, j]] {
                    *v = f64::NAN;
                }
            }
            means.push(acc);
        }
        Ok(Self { spec, mask, vars, means, std, fit_days: days, window })
    }

    pub fn mean_for(&self, day: i64) -> &Array3<f64> {
        &self.means[day_of_year(day)]
    }
}

/// Cos-weighted uncentred correlation of anomalies from the climatology;
/// `None` where either anomaly field has zero energy.
pub fn acc_latweighted(pred: &GridField, truth: &GridField, clim: &Climatology) -> Result<Vec<Option<f64>>> {
    check_pair(pred, truth)?;
    if clim.spec != pred.spec || clim.mask != pred.mask || clim.vars != pred.vars {
        return Err(Error::Schema("climatology does not match the scored fields".into()));
    }
    let c = clim.mean_for(truth.day);
    let w = lat_weights(&pred.spec);
    let (h, wd) = pred.spec.shape();
    let mut out = Vec::with_capacity(pred.vars.len());
    for k in 0..pred.vars.len() {
        let (mut pp, mut tt, mut pt) = (0.0, 0.0, 0.0);
        for i in 0..h {
            for j in 0..wd {
                if pred.mask[[i, j]] {
                    let a = pred.values[[i, j, k]] - c[[i, j, k]];
                    let b = truth.values[[i, j, k]] - c[[i, j, k]];
                    pp += w[i] * a * a;
                    tt += w[i] * b * b;
                    pt += w[i] * a * b;
                }
            }
        }
        out.push(if pp > 0.0 && tt > 0.0 { Some(pt / (pp * tt).sqrt()) } else { None });
    }
    Ok(out)
}

/// Metrics of one prediction series against a common truth, averaged over days.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillReport {
    pub vars: Vec<Var>,
    pub days: Vec<i64>,
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    /// Mean over days on which the correlation is defined.
    pub acc: Vec<Option<f64>>,
    /// Mean per-cell absolute error, NaN on land.
    pub mae_map: Array3<f64>,
}

/// Streaming builder for a [`SkillReport`]; days must be added in a fixed order.
pub struct SkillAccumulator<'a> {
    clim: Option<&'a Climatology>,
    vars: Vec<Var>,
    days: Vec<i64>,
    rmse: Vec<f64>,
    mae: Vec<f64>,
    acc: Vec<(f64, usize)>,
    map: Option<Array3<f64>>,
}

impl<'a> SkillAccumulator<'a> {
    pub fn new(clim: Option<&'a Climatology>) -> Self {
        Self { clim, vars: Vec::new(), days: Vec::new(), rmse: Vec::new(), mae: Vec::new(), acc: Vec::new(), map: None }
    }

    pub fn add(&mut self, pred: &GridField, truth: &GridField) -> Result<()> {
        if pred.day != truth.day {
            return Err(Error::Schema(format!("prediction for day {} scored against day {}", pred.day, truth.day)));
        }
        let r = rmse_latweighted(pred, truth)?;
        let (m, map) = mae(pred, truth)?;
        let a = match self.clim {
            Some(c) => acc_latweighted(pred, truth, c)?,
            None => vec![None; r.len()],
        };
        if self.days.is_empty() {
            self.vars = pred.vars.clone();
            self.rmse = vec![0.0; r.len()];
            self.mae = vec![0.0; r.len()];
            self.acc = vec![(0.0, 0); r.len()];
            self.map = Some(map);
        } else {
            if pred.vars != self.vars {
                return Err(Error::Schema("variables changed between days".into()));
            }
            let acc_map = self.map.as_mut().expect("map set with first day");
            if acc_map.raw_dim() != map.raw_dim() {
                return Err(Error::Schema("grid changed between days".into()));
            }
            *acc_map += &map;
        }
        for k in 0..r.len() {
            self.rmse[k] += r[k];
            self.mae[k] += m[k];
            if let Some(v) = a[k] {
                self.acc[k].0 += v;
                self.acc[k].1 += 1;
            }
        }
        self.days.push(pred.day);
        Ok(())
    }

    pub fn finish(self) -> Result<SkillReport> {
        let n = self.days.len();
        if n == 0 {
            return Err(Error::Degenerate("skill report over zero days".into()));
        }
        let nf = n as f64;
        Ok(SkillReport {
            vars: self.vars,
            days: self.days,
            rmse: self.rmse.iter().map(|s| s / nf).collect(),
            mae: self.mae.iter().map(|s| s / nf).collect(),
            acc: self.acc.iter().map(|&(s, c)| (c > 0).then(|| s / c as f64)).collect(),
            mae_map: self.map.expect("at least one day") / nf,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillRatios {
    pub vars: Vec<Var>,
    /// `(ACC_a - ACC_b) / ACC_b`.
    pub acc_improvement: Vec<Option<f64>>,
    /// `(RMSE_b - RMSE_a) / RMSE_b`; positive means the analysis is closer.
    pub rmse_reduction: Vec<Option<f64>>,
    /// Analysis minus background MAE per cell, NaN on land.
    pub mae_diff_map: Array3<f64>,
    /// Fraction of ocean cells with a strictly negative difference.
    pub mae_reduced_fraction: Vec<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0 && den.is_finite() && num.is_finite()).then(|| num / den)
}

pub fn skill_ratios(analysis: &SkillReport, background: &SkillReport) -> Result<SkillRatios> {
    if analysis.vars != background.vars || analysis.days != background.days {
        return Err(Error::Schema("skill reports cover different variables or days".into()));
    }
    if analysis.mae_map.raw_dim() != background.mae_map.raw_dim() {
        return Err(Error::Schema("skill report maps differ in shape".into()));
    }
    let nv = analysis.vars.len();
    let acc_improvement = (0..nv)
        .map(|k| match (analysis.acc[k], background.acc[k]) {
            (Some(a), Some(b)) => ratio(a - b, b),
            _ => None,
        })
        .collect();
    let rmse_reduction = (0..nv).map(|k| ratio(background.rmse[k] - analysis.rmse[k], background.rmse[k])).collect();
    let diff = &analysis.mae_map - &background.mae_map;
    let mae_reduced_fraction = (0..nv)
        .map(|k| {
            let lane = diff.index_axis(Axis(2), k);
            let ocean = lane.iter().filter(|v| !v.is_nan()).count();
            let reduced = lane.iter().filter(|&&v| v < 0.0).count();
            if ocean == 0 {
                0.0
            } else {
                reduced as f64 / ocean as f64
            }
        })
        .collect();
    Ok(SkillRatios {
        vars: analysis.vars.clone(),
        acc_improvement,
        rmse_reduction,
        mae_diff_map: diff,
        mae_reduced_fraction,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one row per variable; undefined values are empty fields.
pub fn write_skill_csv<W: Write>(
    out: W,
    label: &str,
    analysis: &SkillReport,
    background: Option<(&SkillReport, &SkillRatios)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut header = vec!["label", "variable", "days", "rmse", "mae", "acc"];
    if background.is_some() {
        header.extend(["bg_rmse", "bg_mae", "bg_acc", "rmse_reduction", "acc_improvement", "mae_reduced_fraction"]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for (k, v) in analysis.vars.iter().enumerate() {
        let mut row = vec![
            label.to_string(),
            v.name().to_string(),
            analysis.days.len().to_string(),
            analysis.rmse[k].to_string(),
            analysis.mae[k].to_string(),
            fmt_opt(analysis.acc[k]),
        ];
        if let Some((b, r)) = background {
            row.extend([
                b.rmse[k].to_string(),
                b.mae[k].to_string(),
                fmt_opt(b.acc[k]),
                fmt_opt(r.rmse_reduction[k]),
                fmt_opt(r.acc_improvement[k]),
                r.mae_reduced_fraction[k].to_string(),
            ]);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(label, e))?;
    Ok(())
}

/// Band-averaged zonal power spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Cycles per 360 degrees of longitude.
    pub wavenumber: Vec<f64>,
    pub power: Vec<f64>,
    pub rows_used: usize,
    pub rows_skipped: usize,
}

/// One-sided power of a row: bins `0..=n/2` sum to the row's mean square.
fn row_power(fft: &dyn rustfft::Fft<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let n2 = (n * n) as f64;
    (0..=n / 2)
        .map(|m| {
            let p = buf[m].norm_sqr() / n2;
            if m == 0 || 2 * m == n {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Zonal spectrum of one scalar field over the rows whose centres lie in
/// `lat_band`. Rows containing land are skipped. Non-periodic rows have
/// their mean removed and are Hann-tapered with unit mean-square taper;
/// the mean's power is put back at wavenumber 0.
pub fn psd_zonal_values(
    spec: &GridSpec,
    mask: &Array2<bool>,
    values: ArrayView2<f64>,
    lat_band: (f64, f64),
) -> Result<Spectrum> {
    let (h, w) = spec.shape();
    if values.dim() != (h, w) || mask.dim() != (h, w) {
        return Err(Error::Schema("spectrum input does not match its grid".into()));
    }
    if w < 4 {
        return Err(Error::Degenerate("rows too short for a spectrum".into()));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(w);
    let taper: Vec<f64> = if spec.periodic_lon {
        vec![1.0; w]
    } else {
        let raw: Vec<f64> =
            (0..w).map(|j| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (j as f64 + 0.5) / w as f64).cos()).collect();
        let rms = (raw.iter().map(|v| v * v).sum::<f64>() / w as f64).sqrt();
        raw.into_iter().map(|v| v / rms).collect()
    };
    let mut total = vec![0.0; w / 2 + 1];
    let (mut used, mut skipped) = (0usize, 0usize);
    for i in 0..h {
        let lat = spec.lat_center(i);
        if lat < lat_band.0 || lat > lat_band.1 {
            continue;
        }
        if (0..w).any(|j| !mask[[i, j]] || !values[[i, j]].is_finite()) {
            skipped += 1;
            continue;
        }
        let row: Vec<f64> = (0..w).map(|j| values[[i, j]]).collect();
        let p = if spec.periodic_lon {
            row_power(fft.as_ref(), &row)
        } else {
            let mean = row.iter().sum::<f64>() / w as f64;
            let y: Vec<f64> = row.iter().zip(&taper).map(|(v, t)| (v - mean) * t).collect();
            let mut p = row_power(fft.as_ref(), &y);
            p[0] += mean * mean;
            p
        };
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(format!("no fully ocean rows in band {lat_band:?} ({skipped} skipped)")));
    }
    let cycles_per_row = 360.0 / spec.lon_extent();
    Ok(Spectrum {
        wavenumber: (0..total.len()).map(|m| m as f64 * cycles_per_row).collect(),
        power: total.into_iter().map(|v| v / used as f64).collect(),
        rows_used: used,
        rows_skipped: skipped,
    })
}

pub fn psd_zonal(field: &GridField, lat_band: (f64, f64), var: Var) -> Result<Spectrum> {
    let k = field.var_index(var)?;
    psd_zonal_values(&field.spec, &field.mask, field.values.index_axis(Axis(2), k), lat_band)
}

/// `hypot(U, V)` per cell, NaN on land.
pub fn speed(field: &GridField) -> Result<Array2<f64>> {
    let u = field.channel(Var::U)?;
    let v = field.channel(Var::V)?;
    Ok(Array2::from_shape_fn(u.dim(), |(i, j)| {
        if field.mask[[i, j]] {
            u[[i, j]].hypot(v[[i, j]])
        } else {
            f64::NAN
        }
    }))
}

/// Mean `|ln(P / P_ref)|` over the top `fraction` of non-zero wavenumbers.
pub fn spectral_log_error(spectrum: &Spectrum, reference: &Spectrum, fraction: f64) -> Result<f64> {
    if spectrum.wavenumber != reference.wavenumber {
        return Err(Error::Schema("spectra on different wavenumbers".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("wavenumber fraction must lie in (0, 1], got {fraction}")));
    }
    let n = spectrum.power.len() - 1;
    let take = ((n as f64 * fraction).round() as usize).max(1);
    let lo = n + 1 - take;
    let mut s = 0.0;
    for m in lo..=n {
        let (a, b) = (spectrum.power[m], reference.power[m]);
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Degenerate(format!("zero power at wavenumber index {m}")));
        }
        s += (a / b).ln().abs();
    }
    Ok(s / take as f64)
}

/// Per-lead verification of forecasts from two sets of initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCurves {
    pub vars: Vec<Var>,
    pub starts: Vec<i64>,
    /// `rmse_ic[lead][var]`, averaged over start days; lead 0 is the IC itself.
    pub rmse_ic: Vec<Vec<f64>>,
    pub rmse_base: Vec<Vec<f64>>,
    /// `(RMSE_ic - RMSE_base) / RMSE_base`; negative means the IC helps.
    pub ratio: Vec<Vec<Option<f64>>>,
}

/// Runs the world's toy forecast for `horizon` days from each start with
/// both initial conditions. Both runs share the per-step error seeds.
pub fn forecast_rmse_reduction<A, B>(
    world: &World,
    starts: &[i64],
    horizon: usize,
    fp: &ForecastParams,
    seed: u64,
    mut ic: A,
    mut base: B,
) -> Result<ForecastCurves>
where
    A: FnMut(i64) -> Result<GridField>,
    B: FnMut(i64) -> Result<GridField>,
{
    if starts.is_empty() {
        return Err(Error::Config("forecast verification needs at least one start day".into()));
    }
    let last = world.config.days - 1;
    let nv = crate::geo::ALL_VARS.len();
    let mut rmse_ic = vec![vec![0.0; nv]; horizon + 1];
    let mut rmse_base = vec![vec![0.0; nv]; horizon + 1];
    for &s in starts {
        if s < 0 || s + horizon as i64 > last {
            return Err(Error::Domain(format!("forecast from day {s} for {horizon} days exceeds truth ending at day {last}")));
        }
        let mut a = ic(s)?;
        let mut b = base(s)?;
        if a.day != s || b.day != s {
            return Err(Error::Schema(format!("initial conditions for day {s} carry days {} and {}", a.day, b.day)));
        }
        for lead in 0..=horizon {
            let truth = world.truth_state(s + lead as i64)?;
            for (k, (x, y)) in rmse_latweighted(&a, &truth)?.into_iter().zip(rmse_latweighted(&b, &truth)?).enumerate() {
                rmse_ic[lead][k] += x;
                rmse_base[lead][k] += y;
            }
            if lead < horizon {
                let step_seed = seed::derive(seed, "forecast", &[s, lead as i64]);
                a = world.forecast_step(&a, fp, step_seed)?;
                b = world.forecast_step(&b, fp, step_seed)?;
            }
        }
    }
    let n = starts.len() as f64;
    for row in rmse_ic.iter_mut().chain(rmse_base.iter_mut()) {
        row.iter_mut().for_each(|v| *v /= n);
    }
    let ratio = rmse_ic
        .iter()
        .zip(&rmse_base)
        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| ratio(x - y, y)).collect())
        .collect();
    Ok(ForecastCurves { vars: crate::geo::ALL_VARS.to_vec(), starts: starts.to_vec(), rmse_ic, rmse_base, ratio })
}

pub fn write_forecast_csv<W: Write>(out: W, curves: &ForecastCurves) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(["lead", "variable", "rmse_ic", "rmse_base", "ratio"]).map_err(csv_err)?;
    for lead in 0..curves.rmse_ic.len() {
        for (k, v) in curves.vars.iter().enumerate() {
            w.write_record([
                lead.to_string(),
                v.name().to_string(),
                curves.rmse_ic[lead][k].to_string(),
                curves.rmse_base[lead][k].to_string(),
                fmt_opt(curves.ratio[lead][k]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("forecast csv", e))?;
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(out: W, curves: &[(&str, &Spectrum)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(["label", "wavenumber", "power"]).map_err(csv_err)?;
    for (label, s) in curves {
        for (k, p) in s.wavenumber.iter().zip(&s.power) {
            w.write_record([label.to_string(), k.to_string(), p.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("spectrum csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::ALL_VARS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(periodic: bool) -> GridSpec {
        if periodic {
            GridSpec::new((-30.0, 30.0), (0.0, 360.0), 5.0, true).unwrap()
        } else {
            GridSpec::new((20.0, 60.0), (140.0, 220.0), 2.0, false).unwrap()
        }
    }

    fn random_field(spec: &GridSpec, rng: &mut ChaCha8Rng, land: bool, day: i64) -> GridField {
        let (h, w) = spec.shape();
        let mask = Array2::from_shape_fn((h, w), |(i, j)| !(land && (i + 2 * j) % 7 == 0));
        let values = Array3::from_shape_fn((h, w, 5), |_| rng.random_range(-3.0..3.0));
        GridField::new(spec.clone(), ALL_VARS.to_vec(), values, mask, day).unwrap()
    }

    #[test]
    fn identical_fields_score_zero_and_offsets_score_the_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_field(&grid(false), &mut rng, true, 0);
        assert!(rmse_latweighted(&a, &a).unwrap().iter().all(|&v| v == 0.0));
        assert!(mae(&a, &a).unwrap().0.iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b.values.mapv_inplace(|v| v + 0.25);
        for r in rmse_latweighted(&b, &a).unwrap() {
            assert_eq!(r, 0.25);
        }
    }

    #[test]
    fn two_cell_mae() {
        let spec = GridSpec::new((0.0, 2.0), (0.0, 1.0), 1.0, false).unwrap();
        let mask = Array2::from_elem((2, 1), true);
        let a = GridField::new(spec.clone(), vec![Var::T], Array3::zeros((2, 1, 1)), mask.clone(), 0).unwrap();
        let mut b = a.clone();
        b.values[[0, 0, 0]] = 1.0;
        b.values[[1, 0, 0]] = -1.0;
        assert_eq!(mae(&b, &a).unwrap().0, vec![1.0]);
    }

    #[test]
    fn land_values_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_field(&grid(false), &mut rng, true, 3);
        let b = random_field(&grid(false), &mut rng, true, 3);
        let mut c = b.clone();
        for ((i, j, _), v) in c.values.indexed_iter_mut() {
            if !c.mask[[i, j]] {
                *v = 1e9;
            }
        }
        assert_eq!(rmse_latweighted(&b, &a).unwrap(), rmse_latweighted(&c, &a).unwrap());
        assert_eq!(mae(&b, &a).unwrap().0, mae(&c, &a).unwrap().0);
    }

    fn flat_clim(spec: &GridSpec, mask: &Array2<bool>) -> Climatology {
        let zero = Array3::zeros((spec.nlat(), spec.nlon(), 5));
        Climatology {
            spec: spec.clone(),
            mask: mask.clone(),
            vars: ALL_VARS.to_vec(),
            means: vec![zero; DAYS_PER_YEAR as usize],
            std: vec![1.0; 5],
            fit_days: (0, 0),
            window: 0,
        }
    }

    #[test]
    fn acc_of_identical_and_negated_anomalies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_field(&grid(false), &mut rng, true, 5);
        let clim = flat_clim(&a.spec, &a.mask);
        assert!(acc_latweighted(&a, &a, &clim).unwrap().iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
        let mut n = a.clone();
        n.values.mapv_inplace(|v| -v);
        assert!(acc_latweighted(&n, &a, &clim).unwrap().iter().all(|v| (v.unwrap() + 1.0).abs() < 1e-12));
        let mut z = a.clone();
        z.values.fill(0.0);
        assert!(acc_latweighted(&z, &a, &clim).unwrap().iter().all(Option::is_none));
    }

    #[test]
    fn climatology_windows_wrap_the_year() {
        let spec = GridSpec::new((0.0, 2.0), (0.0, 2.0), 1.0, false).unwrap();
        let mask = Array2::from_elem((2, 2), true);
        let f = |d: i64| {
            GridField::new(spec.clone(), ALL_VARS.to_vec(), Array3::from_elem((2, 2, 5), d as f64), mask.clone(), d)
        };
        let c = Climatology::fit((0, 359), 2, |d| f(d)).unwrap();
        assert_eq!(c.mean_for(0)[[0, 0, 0]], (358.0 + 359.0 + 0.0 + 1.0 + 2.0) / 5.0);
        assert_eq!(c.mean_for(360 + 10)[[1, 1, 4]], 10.0);
        assert!(matches!(Climatology::fit((0, 10), 2, |d| f(d)), Err(Error::Coverage(_))));
    }

    #[test]
    fn ratio_examples() {
        let map = Array3::zeros((1, 1, 1));
        let mk = |rmse: f64, acc: f64| SkillReport {
            vars: vec![Var::T],
            days: vec![0],
            rmse: vec![rmse],
            mae: vec![rmse],
            acc: vec![Some(acc)],
            mae_map: map.clone(),
        };
        let r = skill_ratios(&mk(1.0, 0.88), &mk(2.0, 0.8)).unwrap();
        assert_eq!(r.rmse_reduction, vec![Some(0.5)]);
        assert!((r.acc_improvement[0].unwrap() - 0.1).abs() < 1e-15);
        let same = skill_ratios(&mk(2.0, 0.8), &mk(2.0, 0.8)).unwrap();
        assert_eq!(same.rmse_reduction, vec![Some(0.0)]);
        assert_eq!(same.acc_improvement, vec![Some(0.0)]);
        assert_eq!(same.mae_reduced_fraction, vec![0.0]);
        assert_eq!(skill_ratios(&mk(1.0, 0.5), &mk(0.0, 0.0)).unwrap().rmse_reduction, vec![None]);
    }

    #[test]
    fn constant_row_puts_all_power_at_zero() {
        for periodic in [true, false] {
            let spec = grid(periodic);
            let mask = Array2::from_elem(spec.shape(), true);
            let v = Array2::from_elem(spec.shape(), 1.5);
            let s = psd_zonal_values(&spec, &mask, v.view(), (-90.0, 90.0)).unwrap();
            assert!((s.power[0] - 2.25).abs() < 1e-12);
            assert!(s.power[1..].iter().all(|&p| p.abs() < 1e-20), "{periodic}");
        }
    }

    #[test]
    fn periodic_sinusoid_is_a_single_spike_and_parseval_holds() {
        let spec = grid(true);
        let mask = Array2::from_elem(spec.shape(), true);
        let k = 5.0;
        let v = Array2::from_shape_fn(spec.shape(), |(_, j)| (k * spec.lon_center(j).to_radians()).cos());
        let s = psd_zonal_values(&spec, &mask, v.view(), (-90.0, 90.0)).unwrap();
        let peak = s.power.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert_eq!(s.wavenumber[peak], k);
        assert!(s.power.iter().enumerate().all(|(m, &p)| m == peak || p < 1e-20));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = Array2::from_shape_fn(spec.shape(), |_| rng.random_range(-1.0..1.0));
        let row_ms: f64 = (0..spec.nlat())
            .map(|i| v.row(i).iter().map(|x| x * x).sum::<f64>() / spec.nlon() as f64)
            .sum::<f64>()
            / spec.nlat() as f64;
        let s = psd_zonal_values(&spec, &mask, v.view(), (-90.0, 90.0)).unwrap();
        let total: f64 = s.power.iter().sum();
        assert!((total - row_ms).abs() <= 1e-8 * row_ms);
    }

    #[test]
    fn rows_with_land_are_skipped_and_empty_bands_fail() {
        let spec = grid(false);
        let mut mask = Array2::from_elem(spec.shape(), true);
        mask[[3, 4]] = false;
        let v = Array2::from_elem(spec.shape(), 1.0);
        let s = psd_zonal_values(&spec, &mask, v.view(), (20.0, 30.0)).unwrap();
        assert_eq!((s.rows_used, s.rows_skipped), (4, 1));
        assert!(matches!(psd_zonal_values(&spec, &mask, v.view(), (26.5, 27.5)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn spectral_log_error_is_zero_against_itself() {
        let s = Spectrum { wavenumber: vec![0.0, 1.0, 2.0, 3.0], power: vec![1.0, 2.0, 3.0, 4.0], rows_used: 1, rows_skipped: 0 };
        assert_eq!(spectral_log_error(&s, &s, 1.0 / 3.0).unwrap(), 0.0);
        let mut t = s.clone();
        t.power[3] = 4.0 * std::f64::consts::E;
        assert!((spectral_log_error(&s, &t, 1.0 / 3.0).unwrap() - 1.0).abs() < 1e-12);
    }
}
