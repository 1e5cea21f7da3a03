//! Leave-one-source-out contribution, perturbation sensitivity and
//! observation-resolution impact.

use std::io::Write;

use ndarray::{Array3, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DayProvider;
use crate::eval::{mae, Climatology, SkillReport};
use crate::geo::{GridField, Var};
use crate::io::quantize;
use crate::model::AssimModel;
use crate::obs::{perturb_observations, ObservationSet, SourceId};
use crate::seed;
use crate::{Error, Result};

/// `(a - b) / b`, undefined for a zero or non-finite denominator.
fn rel(a: f64, b: f64) -> Option<f64> {
    (b != 0.0 && b.is_finite() && a.is_finite()).then(|| (a - b) / b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTable {
    pub sources: Vec<SourceId>,
    pub vars: Vec<Var>,
    pub days: Vec<i64>,
    pub mae_all: Vec<f64>,
    /// `mae_without[source][var]`.
    pub mae_without: Vec<Vec<f64>>,
    /// `(MAE_without - MAE_all) / MAE_all`.
    pub ratio: Vec<Vec<Option<f64>>>,
    /// Set when the model never saw absent sources during training.
    pub out_of_distribution: bool,
}

impl ContributionTable {
    pub fn from_components(
        sources: Vec<SourceId>,
        vars: Vec<Var>,
        days: Vec<i64>,
        mae_all: Vec<f64>,
        mae_without: Vec<Vec<f64>>,
        out_of_distribution: bool,
    ) -> Self {
        let ratio = mae_without.iter().map(|row| row.iter().zip(&mae_all).map(|(&w, &a)| rel(w, a)).collect()).collect();
        Self { sources, vars, days, mae_all, mae_without, ratio, out_of_distribution }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["source", "variable", "days", "mae_without", "mae_all", "contribution", "out_of_distribution"])
            .map_err(csv_err)?;
        for (s, src) in self.sources.iter().enumerate() {
            for (k, v) in self.vars.iter().enumerate() {
                w.write_record([
                    src.name().to_string(),
                    v.name().to_string(),
                    self.days.len().to_string(),
                    self.mae_without[s][k].to_string(),
                    self.mae_all[k].to_string(),
                    self.ratio[s][k].map(|x| x.to_string()).unwrap_or_default(),
                    self.out_of_distribution.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io("contribution csv", e))?;
        Ok(())
    }
}

/// Daily analyses are rounded to storage precision before scoring, so the
/// table can be rebuilt exactly from written analysis files. `sink`
/// receives every scored analysis with its scenario label (`ALL` or the
/// excluded source name).
pub fn contribution_analysis(
    model: &AssimModel,
    provider: &dyn DayProvider,
    days: &[i64],
    sources: &[SourceId],
    trained_dropout: f64,
    mut sink: impl FnMut(&str, &GridField) -> Result<()>,
) -> Result<ContributionTable> {
    if days.is_empty() {
        return Err(Error::Config("contribution analysis needs at least one day".into()));
    }
    for &s in sources {
        model.source_index(s)?;
    }
    let ood = trained_dropout <= 0.0;
    if ood {
        log::warn!("model trained without source dropout; excluded sources are out of distribution");
    }
    let fine = provider.fine().clone();
    let mask = provider.fine_mask().clone();
    let nv = crate::model::N_VARS;
    let mut all = vec![0.0; nv];
    let mut without = vec![vec![0.0; nv]; sources.len()];
    for &day in days {
        let d = provider.load(day)?;
        let run = |keep: &dyn Fn(&ObservationSet) -> bool| -> Result<GridField> {
            let obs: Vec<&ObservationSet> = d.obs.iter().filter(|o| keep(o)).collect();
            Ok(quantize(&model.assimilate(&d.background, &obs, &fine, &mask)?))
        };
        let a = run(&|_| true)?;
        sink("ALL", &a)?;
        for (k, m) in mae(&a, &d.truth)?.0.into_iter().enumerate() {
            all[k] += m;
        }
        for (s, &src) in sources.iter().enumerate() {
            let x = run(&|o| o.source != src)?;
            sink(src.name(), &x)?;
            for (k, m) in mae(&x, &d.truth)?.0.into_iter().enumerate() {
                without[s][k] += m;
            }
        }
    }
    let n = days.len() as f64;
    all.iter_mut().for_each(|v| *v /= n);
    without.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(ContributionTable::from_components(
        sources.to_vec(),
        crate::geo::ALL_VARS.to_vec(),
        days.to_vec(),
        all,
        without,
        ood,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// The channel's training-period std for every member.
    #[default]
    Fixed,
    /// Each member scales the channel std by `|z|`, `z ~ N(0, 1)`.
    Redrawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub members: usize,
    /// Multiplies every channel std.
    pub sigma_scale: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { members: 50, sigma_scale: 1.0, sigma_mode: SigmaMode::Fixed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub source: SourceId,
    pub day: i64,
    pub members: usize,
    pub sigma: Vec<f64>,
    pub vars: Vec<Var>,
    /// Per-cell ensemble std divided by the variable's climatological std;
    /// NaN on land.
    pub values: Array3<f64>,
}

impl SensitivityMap {
    pub fn domain_mean(&self) -> Vec<f64> {
        self.values
            .axis_iter(Axis(2))
            .map(|lane| {
                let (s, n) = lane.iter().filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                s / n.max(1) as f64
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["source", "day", "members", "variable", "domain_mean"]).map_err(csv_err)?;
        for (v, m) in self.vars.iter().zip(self.domain_mean()) {
            w.write_record([
                self.source.name().to_string(),
                self.day.to_string(),
                self.members.to_string(),
                v.name().to_string(),
                m.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("sensitivity csv", e))?;
        Ok(())
    }
}

/// Noise std per channel of `source`: the training std of what the model's
/// encoder sees for that channel, times `sigma_scale`.
pub fn sensitivity_sigma(model: &AssimModel, source: SourceId, scale: f64) -> Result<Vec<f64>> {
    let j = model.source_index(source)?;
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!("sigma scale must be nonnegative, got {scale}")));
    }
    Ok(model.norm.sources[j].iter().map(|m| m.std * scale).collect())
}

/// Ensemble of analyses with `source` perturbed by independent Gaussian
/// noise; other sources stay fixed. Members run in parallel and are
/// reduced in member order.
pub fn sensitivity_analysis(
    model: &AssimModel,
    provider: &dyn DayProvider,
    clim: &Climatology,
    day: i64,
    source: SourceId,
    cfg: &SensitivityConfig,
    master_seed: u64,
) -> Result<SensitivityMap> {
    if cfg.members < 2 {
        return Err(Error::Domain(format!("sensitivity needs at least 2 members, got {}", cfg.members)));
    }
    let sigma = sensitivity_sigma(model, source, cfg.sigma_scale)?;
    if clim.std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Degenerate("climatological std must be positive for every variable".into()));
    }
    let d = provider.load(day)?;
    let j = d
        .obs
        .iter()
        .position(|o| o.source == source)
        .ok_or_else(|| Error::Schema(format!("no {source} observations for day {day}")))?;
    let fine = provider.fine();
    let mask = provider.fine_mask();
    let members = (0..cfg.members)
        .into_par_iter()
        .map(|m| -> Result<Array3<f64>> {
            let s = seed::derive(master_seed, "sensitivity", &[source.code() as i64, day, m as i64]);
            let member_sigma = match cfg.sigma_mode {
                SigmaMode::Fixed => sigma.clone(),
                SigmaMode::Redrawn => {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed::derive(s, "sigma", &[]));
                    sigma
                        .iter()
                        .map(|&x| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            x * z.abs()
                        })
                        .collect()
                }
            };
            let perturbed = perturb_observations(&d.obs[j], &member_sigma, s)?;
            let obs: Vec<&ObservationSet> =
                d.obs.iter().enumerate().map(|(i, o)| if i == j { &perturbed } else { o }).collect();
            Ok(model.assimilate(&d.background, &obs, fine, mask)?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = members.len() as f64;
    let mut mean = Array3::<f64>::zeros(members[0].raw_dim());
    for m in &members {
        mean += m;
    }
    mean /= n;
    let mut var = Array3::<f64>::zeros(mean.raw_dim());
    for m in &members {
        var.zip_mut_with(&(m - &mean), |v, &e| *v += e * e);
    }
    let mut values = var.mapv(|v| (v / n).sqrt());
    for ((i, jj, k), v) in values.indexed_iter_mut() {
        *v = if mask[[i, jj]] { *v / clim.std[k] } else { f64::NAN };
    }
    Ok(SensitivityMap { source, day, members: cfg.members, sigma, vars: crate::geo::ALL_VARS.to_vec(), values })
}

/// `(RMSE_lr - RMSE_origin) / RMSE_lr`.
pub fn resolution_reduction(rmse_lr: f64, rmse_origin: f64) -> Option<f64> {
    (rmse_lr != 0.0 && rmse_lr.is_finite() && rmse_origin.is_finite()).then(|| (rmse_lr - rmse_origin) / rmse_lr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionTable {
    pub vars: Vec<Var>,
    pub days: Vec<i64>,
    /// Thinning factor of each tier relative to native spacing.
    pub factors: Vec<f64>,
    pub rmse_origin: Vec<f64>,
    /// `rmse_tier[tier][var]`.
    pub rmse_tier: Vec<Vec<f64>>,
    pub reduction: Vec<Vec<Option<f64>>>,
}

impl ResolutionTable {
    pub fn from_reports(origin: &SkillReport, tiers: &[(f64, &SkillReport)]) -> Result<Self> {
        for (_, r) in tiers {
            if r.vars != origin.vars || r.days != origin.days {
                return Err(Error::Schema("resolution tiers scored on different variables or days".into()));
            }
        }
        let rmse_tier: Vec<Vec<f64>> = tiers.iter().map(|(_, r)| r.rmse.clone()).collect();
        let reduction = rmse_tier
            .iter()
            .map(|row| row.iter().zip(&origin.rmse).map(|(&lr, &o)| resolution_reduction(lr, o)).collect())
            .collect();
        Ok(Self {
            vars: origin.vars.clone(),
            days: origin.days.clone(),
            factors: tiers.iter().map(|(f, _)| *f).collect(),
            rmse_origin: origin.rmse.clone(),
            rmse_tier,
            reduction,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["factor", "variable", "days", "rmse_tier", "rmse_origin", "reduction"]).map_err(csv_err)?;
        for (t, f) in self.factors.iter().enumerate() {
            for (k, v) in self.vars.iter().enumerate() {
                w.write_record([
                    f.to_string(),
                    v.name().to_string(),
                    self.days.len().to_string(),
                    self.rmse_tier[t][k].to_string(),
                    self.rmse_origin[k].to_string(),
                    self.reduction[t][k].map(|x| x.to_string()).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io("resolution csv", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_trivial_cases() {
        assert_eq!(resolution_reduction(1.3, 1.3), Some(0.0));
        assert_eq!(resolution_reduction(2.0, 1.0), Some(0.5));
        assert_eq!(resolution_reduction(0.0, 1.0), None);
    }

    #[test]
    fn contribution_rows_follow_source_order() {
        let vars = crate::geo::ALL_VARS.to_vec();
        let all = vec![1.0, 2.0, 4.0, 1.0, 0.5];
        let a = vec![1.5, 2.0, 5.0, 1.0, 0.5];
        let b = vec![1.0, 3.0, 4.0, 2.0, 1.0];
        let t1 = ContributionTable::from_components(
            vec![SourceId::Sst, SourceId::Sla],
            vars.clone(),
            vec![1],
            all.clone(),
            vec![a.clone(), b.clone()],
            false,
        );
        let t2 = ContributionTable::from_components(vec![SourceId::Sla, SourceId::Sst], vars, vec![1], all, vec![b, a], false);
        assert_eq!(t1.ratio[0], t2.ratio[1]);
        assert_eq!(t1.ratio[1], t2.ratio[0]);
        assert_eq!(t1.ratio[0][0], Some(0.5));
        assert_eq!(t1.ratio[0][1], Some(0.0));
    }
}
