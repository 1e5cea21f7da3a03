//! Observation simulators for six heterogeneous sources, plus the
//! perturbation and thinning operators.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::{stencil, GridField, GridSpec, Var, ALL_VARS};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceId {
    Sst,
    Sss,
    Ssw,
    Sic,
    Sla,
    Insitu,
}

pub const ALL_SOURCES: [SourceId; 6] =
    [SourceId::Sst, SourceId::Sss, SourceId::Ssw, SourceId::Sic, SourceId::Sla, SourceId::Insitu];

impl SourceId {
    pub fn name(self) -> &'static str {
        match self {
            SourceId::Sst => "SST",
            SourceId::Sss => "SSS",
            SourceId::Ssw => "SSW",
            SourceId::Sic => "SIC",
            SourceId::Sla => "SLA",
            SourceId::Insitu => "INSITU",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        ALL_SOURCES.into_iter().find(|id| id.name().eq_ignore_ascii_case(s))
    }

    pub fn code(self) -> u8 {
        ALL_SOURCES.iter().position(|&x| x == self).expect("listed") as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        ALL_SOURCES.get(c as usize).copied()
    }

    /// Public channel names.
    pub fn channels(self) -> &'static [&'static str] {
        match self {
            SourceId::Sst => &["T"],
            SourceId::Sss => &["S"],
            SourceId::Ssw => &["speed", "direction"],
            SourceId::Sic => &["concentration"],
            SourceId::Sla => &["sla"],
            SourceId::Insitu => &["T", "S"],
        }
    }
}

impl std::fmt::Display for SourceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coverage {
    /// Lattice points inside diagonal bands `frac((lon - tilt*lat - shift*day) / period) < width / period`.
    WideSwath { spacing: f64, period: f64, width: f64, tilt: f64, shift_per_day: f64 },
    /// One point per lattice row on each of `n_tracks` sinusoidal ground tracks.
    AlongTrack { spacing: f64, n_tracks: usize, amplitude: f64, wavelength: f64, shift_per_day: f64 },
    /// Lattice points poleward of `min_abs_lat`.
    PolarGrid { spacing: f64, min_abs_lat: f64 },
    /// Uniform random ocean points.
    RandomPoints { count: usize },
}

impl Coverage {
    pub fn tag(&self) -> &'static str {
        match self {
            Coverage::WideSwath { .. } => "wide-swath",
            Coverage::AlongTrack { .. } => "along-track",
            Coverage::PolarGrid { .. } => "polar-grid",
            Coverage::RandomPoints { .. } => "random-points",
        }
    }

    pub fn spacing(&self) -> Option<f64> {
        match *self {
            Coverage::WideSwath { spacing, .. } | Coverage::AlongTrack { spacing, .. } | Coverage::PolarGrid { spacing, .. } => {
                Some(spacing)
            }
            Coverage::RandomPoints { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSchema {
    pub id: SourceId,
    pub noise_std: Vec<f64>,
    pub coverage: Coverage,
}

impl SourceSchema {
    pub fn channel_count(&self) -> usize {
        self.id.channels().len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_std.len() != self.channel_count() {
            return Err(Error::Schema(format!(
                "{} has {} channels but {} noise values",
                self.id,
                self.channel_count(),
                self.noise_std.len()
            )));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Schema(format!("{} noise must be finite and >= 0", self.id)));
        }
        let ok = match self.coverage {
            Coverage::WideSwath { spacing, period, width, .. } => spacing > 0.0 && period > 0.0 && width > 0.0,
            Coverage::AlongTrack { spacing, n_tracks, wavelength, .. } => spacing > 0.0 && n_tracks > 0 && wavelength > 0.0,
            Coverage::PolarGrid { spacing, .. } => spacing > 0.0,
            Coverage::RandomPoints { count } => count > 0,
        };
        if !ok {
            return Err(Error::Schema(format!("{} coverage densities must be positive", self.id)));
        }
        Ok(())
    }

    pub fn default_for(id: SourceId) -> Self {
        let (noise_std, coverage) = match id {
            SourceId::Sst => (
                vec![0.2],
                Coverage::WideSwath { spacing: 0.5, period: 24.0, width: 10.0, tilt: 0.8, shift_per_day: 7.3 },
            ),
            SourceId::Sss => (
                vec![0.05],
                Coverage::WideSwath { spacing: 1.0, period: 30.0, width: 10.0, tilt: -0.6, shift_per_day: 11.1 },
            ),
            SourceId::Ssw => (
                vec![0.03, 0.2],
                Coverage::WideSwath { spacing: 1.0, period: 28.0, width: 9.0, tilt: 0.3, shift_per_day: 5.9 },
            ),
            SourceId::Sic => (vec![0.05], Coverage::PolarGrid { spacing: 2.0, min_abs_lat: 55.0 }),
            SourceId::Sla => (
                vec![0.02],
                Coverage::AlongTrack { spacing: 0.5, n_tracks: 6, amplitude: 4.0, wavelength: 25.0, shift_per_day: 3.7 },
            ),
            SourceId::Insitu => (vec![0.1, 0.02], Coverage::RandomPoints { count: 150 }),
        };
        Self { id, noise_std, coverage }
    }

    pub fn defaults() -> Vec<Self> {
        ALL_SOURCES.iter().map(|&id| Self::default_for(id)).collect()
    }
}

/// Checks a schema list: unique ids, valid entries, and SST denser than
/// every other gridded source.
pub fn validate_schemas(schemas: &[SourceSchema]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for s in schemas {
        s.validate()?;
        if !seen.insert(s.id) {
            return Err(Error::Schema(format!("source {} listed twice", s.id)));
        }
    }
    if let Some(sst) = schemas.iter().find(|s| s.id == SourceId::Sst) {
        let own = sst.coverage.spacing().unwrap_or(f64::INFINITY);
        for s in schemas.iter().filter(|s| s.id != SourceId::Sst) {
            if let Some(sp) = s.coverage.spacing() {
                if sp < own {
                    return Err(Error::Schema(format!("{} is denser than SST", s.id)));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub source: SourceId,
    pub day: i64,
    pub coords: Vec<(f64, f64)>,
    /// `n × C`
    pub values: Array2<f64>,
}

impl ObservationSet {
    pub fn empty(source: SourceId, day: i64) -> Self {
        Self { source, day, coords: Vec::new(), values: Array2::zeros((0, source.channels().len())) }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.source.channels().len();
        if self.values.dim() != (self.coords.len(), c) {
            return Err(Error::Schema(format!(
                "{} observation values {:?} do not match {} points x {c} channels",
                self.source,
                self.values.dim(),
                self.coords.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("{} observation values must be finite", self.source)));
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let c = self.values.ncols();
        let mut values = Array2::zeros((idx.len(), c));
        for (r, &i) in idx.iter().enumerate() {
            values.row_mut(r).assign(&self.values.row(i));
        }
        Self { source: self.source, day: self.day, coords: idx.iter().map(|&i| self.coords[i]).collect(), values }
    }
}

/// Everything besides the truth that the simulators need.
#[derive(Debug, Clone)]
pub struct ObsContext {
    /// Reference SSH surface for sea-level anomalies, on the truth grid.
    pub sla_reference: GridField,
    pub season_period: f64,
}

/// Time-mean SSH over `days` of truth, the SLA reference surface.
pub fn sla_reference(truths: impl IntoIterator<Item = Result<GridField>>) -> Result<GridField> {
    let mut acc: Option<GridField> = None;
    let mut n = 0usize;
    for t in truths {
        let t = t?;
        let k = t.var_index(Var::Ssh)?;
        let ssh = t.values.index_axis(ndarray::Axis(2), k).to_owned();
        match &mut acc {
            None => {
                let vals = ssh.insert_axis(ndarray::Axis(2));
                acc = Some(GridField::new(t.spec.clone(), vec![Var::Ssh], vals, t.mask.clone(), 0)?);
            }
            Some(a) => {
                let mut view = a.values.index_axis_mut(ndarray::Axis(2), 0);
                view += &ssh;
            }
        }
        n += 1;
    }
    let mut a = acc.ok_or_else(|| Error::Degenerate("no days for the SLA reference".into()))?;
    a.values.mapv_inplace(|v| v / n as f64);
    Ok(a)
}

/// Sea-ice concentration as a smooth function of latitude and season.
pub fn sea_ice(lat: f64, day: i64, period: f64) -> f64 {
    let edge = 57.0 + 2.0 * (2.0 * std::f64::consts::PI * day as f64 / period).cos();
    1.0 / (1.0 + (-(lat.abs() - edge) / 1.5).exp())
}

fn lattice(spec: &GridSpec, spacing: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let nl = ((spec.lat_max - spec.lat_min) / spacing).floor() as usize;
    let nw = (spec.lon_extent() / spacing).floor() as usize;
    (0..nl).flat_map(move |i| {
        (0..nw).map(move |j| (spec.lat_min + (i as f64 + 0.5) * spacing, spec.lon_min + (j as f64 + 0.5) * spacing))
    })
}

fn candidate_points<R: Rng>(spec: &GridSpec, cov: &Coverage, day: i64, rng: &mut R) -> Vec<(f64, f64)> {
    match *cov {
        Coverage::WideSwath { spacing, period, width, tilt, shift_per_day } => lattice(spec, spacing)
            .filter(|&(lat, lon)| {
                let phase = (lon - tilt * lat - shift_per_day * day as f64).rem_euclid(period);
                phase < width
            })
            .collect(),
        Coverage::AlongTrack { spacing, n_tracks, amplitude, wavelength, shift_per_day } => {
            let ext = spec.lon_extent();
            let nl = ((spec.lat_max - spec.lat_min) / spacing).floor() as usize;
            let mut pts = Vec::with_capacity(n_tracks * nl);
            for t in 0..n_tracks {
                let base = t as f64 * ext / n_tracks as f64 + shift_per_day * day as f64;
                for i in 0..nl {
                    let lat = spec.lat_min + (i as f64 + 0.5) * spacing;
                    let off = base + amplitude * (2.0 * std::f64::consts::PI * (lat - spec.lat_min) / wavelength).sin();
                    pts.push((lat, spec.lon_min + off.rem_euclid(ext)));
                }
            }
            pts
        }
        Coverage::PolarGrid { spacing, min_abs_lat } => {
            lattice(spec, spacing).filter(|&(lat, _)| lat.abs() >= min_abs_lat).collect()
        }
        Coverage::RandomPoints { count } => (0..count * 4)
            .map(|_| (rng.random_range(spec.lat_min..spec.lat_max), rng.random_range(spec.lon_min..spec.lon_max)))
            .collect(),
    }
}

fn wrap_angle(a: f64) -> f64 {
    let t = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    if t <= -std::f64::consts::PI {
        t + 2.0 * std::f64::consts::PI
    } else {
        t
    }
}

/// One day of one source sampled from the fine truth.
pub fn simulate_source(
    truth: &GridField,
    schema: &SourceSchema,
    ctx: &ObsContext,
    day: i64,
    master_seed: u64,
) -> Result<ObservationSet> {
    schema.validate()?;
    if truth.vars != ALL_VARS {
        return Err(Error::Schema("truth must carry T, S, U, V, SSH".into()));
    }
    if ctx.sla_reference.spec != truth.spec {
        return Err(Error::Schema("SLA reference is on a different grid from the truth".into()));
    }
    let mut rng = seed::rng(master_seed, "obs", &[schema.id.code() as i64, day]);
    let spec = &truth.spec;
    let cands = candidate_points(spec, &schema.coverage, day, &mut rng);
    let limit = match schema.coverage {
        Coverage::RandomPoints { count } => count,
        _ => usize::MAX,
    };
    let c = schema.channel_count();
    let noise: Vec<Normal<f64>> =
        schema.noise_std.iter().map(|&s| Normal::new(0.0, s).expect("validated std")).collect();
    let mut coords = Vec::new();
    let mut vals = Vec::new();
    for (lat, lon) in cands {
        if coords.len() >= limit {
            break;
        }
        let Some((ci, cj)) = spec.cell_of(lat, lon) else { continue };
        if !truth.mask[[ci, cj]] {
            continue;
        }
        let Some(st) = stencil(spec, &truth.mask, lat, lon)? else { continue };
        let at = |k: usize| st.apply(&truth.values, k);
        let clean: Vec<f64> = match schema.id {
            SourceId::Sst => vec![at(0)],
            SourceId::Sss => vec![at(1)],
            SourceId::Ssw => {
                let (u, v) = (at(2), at(3));
                vec![u.hypot(v), v.atan2(u)]
            }
            SourceId::Sic => vec![sea_ice(lat, day, ctx.season_period)],
            SourceId::Sla => vec![at(4) - st.apply(&ctx.sla_reference.values, 0)],
            SourceId::Insitu => vec![at(0), at(1)],
        };
        coords.push((lat, lon));
        for (k, v) in clean.into_iter().enumerate() {
            let mut x = v + if schema.noise_std[k] > 0.0 { noise[k].sample(&mut rng) } else { 0.0 };
            if schema.id == SourceId::Ssw && k == 1 {
                x = wrap_angle(x);
            }
            vals.push(x);
        }
    }
    let n = coords.len();
    let values = Array2::from_shape_vec((n, c), vals).expect("n x c values");
    let set = ObservationSet { source: schema.id, day, coords, values };
    set.validate()?;
    Ok(set)
}

/// Adds i.i.d. `N(0, sigma_c²)` noise to every value of channel `c`.
pub fn perturb_observations(obs: &ObservationSet, sigma: &[f64], seed: u64) -> Result<ObservationSet> {
    if sigma.len() != obs.values.ncols() {
        return Err(Error::Schema(format!("{} sigmas for {} channels", sigma.len(), obs.values.ncols())));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!("perturbation sigma must be >= 0, got {s}")));
    }
    let mut out = obs.clone();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let dists: Vec<Normal<f64>> = sigma.iter().map(|&s| Normal::new(0.0, s).expect("checked")).collect();
    for mut row in out.values.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            if sigma[k] > 0.0 {
                *v += dists[k].sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Bins points into `target_res` cells anchored at the grid origin and keeps
/// one point per non-empty cell: the member centroid (or the nearest member
/// if the centroid is on land) carrying channel means. Directions are
/// averaged on the circle.
pub fn thin_observations(obs: &ObservationSet, target_res: f64, grid: &GridSpec, mask: &Array2<bool>) -> Result<ObservationSet> {
    if !(target_res > 0.0) {
        return Err(Error::Domain(format!("thinning resolution must be positive, got {target_res}")));
    }
    let mut bins: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (n, &(lat, lon)) in obs.coords.iter().enumerate() {
        let i = ((lat - grid.lat_min) / target_res).floor() as i64;
        let j = ((grid.wrap_lon(lon) - grid.lon_min) / target_res).floor() as i64;
        bins.entry((i, j)).or_default().push(n);
    }
    let c = obs.values.ncols();
    let angular = |k: usize| obs.source == SourceId::Ssw && k == 1;
    let mut coords = Vec::with_capacity(bins.len());
    let mut values = Array2::zeros((bins.len(), c));
    for (r, members) in bins.values().enumerate() {
        if members.len() == 1 {
            coords.push(obs.coords[members[0]]);
            values.row_mut(r).assign(&obs.values.row(members[0]));
            continue;
        }
        let m = members.len() as f64;
        let lat = members.iter().map(|&n| obs.coords[n].0).sum::<f64>() / m;
        let lon = members.iter().map(|&n| obs.coords[n].1).sum::<f64>() / m;
        let on_ocean = grid.cell_of(lat, lon).map(|(i, j)| mask[[i, j]]).unwrap_or(false);
        let point = if on_ocean {
            (lat, lon)
        } else {
            let best = members
                .iter()
                .min_by(|&&a, &&b| {
                    let da = (obs.coords[a].0 - lat).powi(2) + (obs.coords[a].1 - lon).powi(2);
                    let db = (obs.coords[b].0 - lat).powi(2) + (obs.coords[b].1 - lon).powi(2);
                    da.total_cmp(&db)
                })
                .expect("non-empty bin");
            obs.coords[*best]
        };
        coords.push(point);
        for k in 0..c {
            values[[r, k]] = if angular(k) {
                let s: f64 = members.iter().map(|&n| obs.values[[n, k]].sin()).sum();
                let co: f64 = members.iter().map(|&n| obs.values[[n, k]].cos()).sum();
                s.atan2(co)
            } else {
                members.iter().map(|&n| obs.values[[n, k]]).sum::<f64>() / m
            };
        }
    }
    Ok(ObservationSet { source: obs.source, day: obs.day, coords, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{World, WorldConfig};
    use proptest::prelude::*;

    fn setup(cfg: WorldConfig) -> (World, GridField, ObsContext) {
        let w = World::new(cfg).unwrap();
        let truth = w.truth_state(10).unwrap();
        let reference = sla_reference((0..5).map(|d| w.truth_state(d))).unwrap();
        let ctx = ObsContext { sla_reference: reference, season_period: 360.0 };
        (w, truth, ctx)
    }

    #[test]
    fn noiseless_insitu_is_bilinear_truth() {
        let (_, truth, ctx) = setup(WorldConfig { days: 20, ..WorldConfig::default() });
        let schema = SourceSchema { noise_std: vec![0.0, 0.0], ..SourceSchema::default_for(SourceId::Insitu) };
        let obs = simulate_source(&truth, &schema, &ctx, 10, 5).unwrap();
        assert_eq!(obs.len(), 150);
        let sampled = crate::geo::bilinear_sample(&truth, &obs.coords).unwrap();
        for (r, s) in sampled.iter().enumerate() {
            let s = s.as_ref().unwrap();
            assert_eq!(obs.values[[r, 0]], s[0]);
            assert_eq!(obs.values[[r, 1]], s[1]);
        }
    }

    #[test]
    fn quiet_world_has_zero_sla() {
        let cfg = WorldConfig { n_eddies: 0, jet_amp: 0.0, seasonal_ssh: 0.0, seasonal_t: 0.0, days: 20, ..WorldConfig::default() };
        let (_, truth, ctx) = setup(cfg);
        let schema = SourceSchema { noise_std: vec![0.0], ..SourceSchema::default_for(SourceId::Sla) };
        let obs = simulate_source(&truth, &schema, &ctx, 10, 5).unwrap();
        assert!(!obs.is_empty());
        assert!(obs.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_source_lands_on_ocean_and_is_deterministic() {
        let (w, truth, ctx) = setup(WorldConfig { days: 20, ..WorldConfig::default() });
        for schema in SourceSchema::defaults() {
            let a = simulate_source(&truth, &schema, &ctx, 10, 77).unwrap();
            let b = simulate_source(&truth, &schema, &ctx, 10, 77).unwrap();
            assert_eq!(a, b);
            assert!(!a.is_empty(), "{} produced nothing", schema.id);
            for &(lat, lon) in &a.coords {
                let (i, j) = w.fine.cell_of(lat, lon).unwrap();
                assert!(w.fine_mask[[i, j]], "{} point on land", schema.id);
            }
        }
    }

    #[test]
    fn schema_list_rules() {
        assert!(validate_schemas(&SourceSchema::defaults()).is_ok());
        let mut bad = SourceSchema::defaults();
        bad[1].coverage = Coverage::WideSwath { spacing: 0.25, period: 10.0, width: 5.0, tilt: 0.0, shift_per_day: 1.0 };
        assert!(validate_schemas(&bad).is_err());
        let mut dup = SourceSchema::defaults();
        dup[1].id = SourceId::Sst;
        assert!(validate_schemas(&dup).is_err());
    }

    fn tiny_set(values: &[f64], coords: &[(f64, f64)]) -> ObservationSet {
        ObservationSet {
            source: SourceId::Sst,
            day: 0,
            coords: coords.to_vec(),
            values: Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap(),
        }
    }

    #[test]
    fn perturbation_zero_sigma_and_errors() {
        let s = tiny_set(&[1.0, 2.0], &[(30.0, 150.0), (31.0, 151.0)]);
        assert_eq!(perturb_observations(&s, &[0.0], 3).unwrap(), s);
        assert!(matches!(perturb_observations(&s, &[-1.0], 3), Err(Error::Domain(_))));
    }

    #[test]
    fn thinning_examples() {
        let grid = GridSpec::new((20.0, 60.0), (140.0, 220.0), 0.5, false).unwrap();
        let mask = Array2::from_elem(grid.shape(), true);
        let s = tiny_set(&[1.0, 3.0], &[(30.2, 150.2), (30.8, 150.9)]);
        let t = thin_observations(&s, 1.0, &grid, &mask).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.values[[0, 0]], 2.0);
        assert!((t.coords[0].0 - 30.5).abs() < 1e-12 && (t.coords[0].1 - 150.55).abs() < 1e-12);
    }

    #[test]
    fn thinning_at_native_spacing_keeps_gridded_points() {
        let (w, truth, ctx) = setup(WorldConfig { days: 20, ..WorldConfig::default() });
        let obs = simulate_source(&truth, &SourceSchema::default_for(SourceId::Sss), &ctx, 10, 1).unwrap();
        let t = thin_observations(&obs, 1.0, &w.fine, &w.fine_mask).unwrap();
        let key = |s: &ObservationSet| {
            let mut v: Vec<(u64, u64, u64)> =
                s.coords.iter().zip(s.values.rows()).map(|(c, r)| (c.0.to_bits(), c.1.to_bits(), r[0].to_bits())).collect();
            v.sort();
            v
        };
        assert_eq!(key(&obs), key(&t));
    }

    #[test]
    fn circular_mean_of_directions() {
        let grid = GridSpec::new((20.0, 60.0), (140.0, 220.0), 0.5, false).unwrap();
        let mask = Array2::from_elem(grid.shape(), true);
        let pi = std::f64::consts::PI;
        let s = ObservationSet {
            source: SourceId::Ssw,
            day: 0,
            coords: vec![(30.1, 150.1), (30.2, 150.2)],
            values: Array2::from_shape_vec((2, 2), vec![1.0, pi - 0.1, 3.0, -pi + 0.1]).unwrap(),
        };
        let t = thin_observations(&s, 2.0, &grid, &mask).unwrap();
        assert_eq!(t.values[[0, 0]], 2.0);
        assert!((t.values[[0, 1]].abs() - pi).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn thinning_bounds_and_idempotence(
            pts in proptest::collection::vec((20.0f64..60.0, 140.0f64..220.0, -5.0f64..5.0), 1..200),
            res in prop::sample::select(vec![0.5, 1.0, 2.0, 4.0]),
        ) {
            let grid = GridSpec::new((20.0, 60.0), (140.0, 220.0), 0.5, false).unwrap();
            let mask = Array2::from_elem(grid.shape(), true);
            let coords: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
            let vals: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let s = tiny_set(&vals, &coords);
            let t = thin_observations(&s, res, &grid, &mask).unwrap();
            let cells = ((40.0 / res) * (80.0 / res)) as usize;
            prop_assert!(t.len() <= s.len() && t.len() <= cells);
            let tt = thin_observations(&t, res, &grid, &mask).unwrap();
            prop_assert_eq!(tt, t);
        }
    }
}
