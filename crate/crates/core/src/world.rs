//! Synthetic ocean truth, a toy forecast operator and coarse backgrounds.
//!
//! Sea surface height is a static meandering jet plus a seasonal tilt plus
//! Gaussian eddies drifting west at a common speed. Temperature and salinity
//! are slaved to SSH through linear coupling, and velocities are geostrophic
//! (analytic derivatives of SSH). The eddy field is periodic in longitude
//! over the domain width so that the drift can be advanced indefinitely.

use ndarray::{Array2, Array3, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::{area_average, make_land_mask, regrid_bilinear, GridField, GridSpec, LandShape, ALL_VARS, M_PER_DEG};
use crate::{seed, Error, Result};

pub const DAYS_PER_YEAR: i64 = 360;

/// Bump amplitudes are negligible beyond this many radii.
const CUTOFF_RADII: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub periodic_lon: bool,
    pub fine_res: f64,
    /// Fine cells per coarse cell along each axis.
    pub ratio: usize,
    /// Number of generated days (`0..days`).
    pub days: i64,
    pub n_eddies: usize,
    /// Absolute amplitude range in metres; signs are random.
    pub eddy_amp: (f64, f64),
    /// Gaussian radius range in degrees.
    pub eddy_radius: (f64, f64),
    /// Zonal drift in degrees per day (negative is westward).
    pub drift: f64,
    pub jet_lat: f64,
    pub jet_width: f64,
    pub jet_amp: f64,
    pub meander_amp: f64,
    pub meander_wavelength: f64,
    /// Temperature change per metre of SSH.
    pub alpha: f64,
    /// Salinity decrease per metre of SSH.
    pub beta: f64,
    /// Gravity over twice the rotation rate, m/s per unit slope.
    pub g_prime: f64,
    /// Regularizes the Coriolis-like factor near the equator.
    pub eps_f: f64,
    pub t_eq: f64,
    pub t_pole: f64,
    pub s0: f64,
    pub seasonal_ssh: f64,
    pub seasonal_t: f64,
    pub season_period: f64,
    pub land: Vec<LandShape>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            lat_min: 20.0,
            lat_max: 60.0,
            lon_min: 140.0,
            lon_max: 220.0,
            periodic_lon: false,
            fine_res: 0.5,
            ratio: 4,
            days: 481,
            n_eddies: 60,
            eddy_amp: (0.1, 0.4),
            eddy_radius: (0.3, 2.0),
            drift: -0.5,
            jet_lat: 38.0,
            jet_width: 1.5,
            jet_amp: 0.4,
            meander_amp: 2.0,
            meander_wavelength: 40.0,
            alpha: 10.0,
            beta: 2.0,
            g_prime: 9.81 / (2.0 * 7.292e-5),
            eps_f: 0.1,
            t_eq: 28.0,
            t_pole: 2.0,
            s0: 35.0,
            seasonal_ssh: 0.05,
            seasonal_t: 2.0,
            season_period: DAYS_PER_YEAR as f64,
            land: vec![
                LandShape::Ellipse { lat: 57.0, lon: 143.0, r_lat: 8.0, r_lon: 9.0 },
                LandShape::Rect { lat_min: 49.0, lat_max: 60.0, lon_min: 206.0, lon_max: 220.0 },
                LandShape::Ellipse { lat: 26.0, lon: 190.0, r_lat: 1.5, r_lon: 2.5 },
            ],
            seed: 20240611,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastParams {
    /// Multiplies the eddy drift speed.
    pub drift_factor: f64,
    /// Per-step multiplier of the eddy anomaly.
    pub decay: f64,
    /// Standard deviation of the added SSH error per step, metres.
    pub error_scale: f64,
    /// Gaussian radius of the error bumps, degrees.
    pub error_corr_len: f64,
}

impl Default for ForecastParams {
    fn default() -> Self {
        Self { drift_factor: 1.3, decay: 0.9, error_scale: 0.04, error_corr_len: 4.0 }
    }
}

impl ForecastParams {
    pub fn identity() -> Self {
        Self { drift_factor: 1.0, decay: 1.0, error_scale: 0.0, error_corr_len: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("forecast decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.drift_factor > 0.0 && self.drift_factor.is_finite()) {
            return Err(Error::Config(format!("drift factor must be positive, got {}", self.drift_factor)));
        }
        if !(self.error_scale >= 0.0 && self.error_corr_len > 0.0) {
            return Err(Error::Config("error scale must be >= 0 and correlation length > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eddy {
    pub lat: f64,
    pub lon0: f64,
    pub amp: f64,
    pub radius: f64,
}

/// SSH and its derivatives in degrees on the fine grid.
struct Height {
    eta: Array2<f64>,
    d_lat: Array2<f64>,
    d_lon: Array2<f64>,
}

impl Height {
    fn zeros(shape: (usize, usize)) -> Self {
        Self { eta: Array2::zeros(shape), d_lat: Array2::zeros(shape), d_lon: Array2::zeros(shape) }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub fine: GridSpec,
    pub coarse: GridSpec,
    pub fine_mask: Array2<bool>,
    pub coarse_mask: Array2<bool>,
    pub eddies: Vec<Eddy>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let c = &config;
        if c.ratio < 2 {
            return Err(Error::Config(format!("fine:coarse ratio must be an integer >= 2, got {}", c.ratio)));
        }
        let finite = [
            c.eddy_amp.0, c.eddy_amp.1, c.eddy_radius.0, c.eddy_radius.1, c.drift, c.jet_amp, c.jet_lat,
            c.meander_amp, c.alpha, c.beta, c.g_prime, c.t_eq, c.t_pole, c.s0, c.seasonal_ssh, c.seasonal_t,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("world amplitudes must be finite".into()));
        }
        if c.eddy_amp.0 > c.eddy_amp.1 || c.eddy_amp.0 < 0.0 {
            return Err(Error::Config("eddy amplitude range must satisfy 0 <= min <= max".into()));
        }
        if c.eddy_radius.0 <= 0.0 || c.eddy_radius.0 > c.eddy_radius.1 {
            return Err(Error::Config("eddy radius range must satisfy 0 < min <= max".into()));
        }
        if c.jet_width <= 0.0 || c.meander_wavelength <= 0.0 || c.season_period <= 0.0 || c.eps_f < 0.0 {
            return Err(Error::Config("jet width, meander wavelength and season period must be positive".into()));
        }
        if c.days < 1 {
            return Err(Error::Config("world needs at least one day".into()));
        }
        let fine = GridSpec::new((c.lat_min, c.lat_max), (c.lon_min, c.lon_max), c.fine_res, c.periodic_lon)?;
        let coarse = fine.coarsen(c.ratio)?;
        let fine_mask = make_land_mask(&fine, &c.land, c.fine_res)?;
        let coarse_mask = make_land_mask(&coarse, &c.land, c.fine_res)?;

        let mut rng = seed::rng(c.seed, "eddies", &[]);
        let eddies = (0..c.n_eddies)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Eddy {
                    lat: rng.random_range(c.lat_min..c.lat_max),
                    lon0: rng.random_range(c.lon_min..c.lon_max),
                    amp: sign * uniform(&mut rng, c.eddy_amp),
                    radius: uniform(&mut rng, c.eddy_radius),
                }
            })
            .collect();
        Ok(Self { config, fine, coarse, fine_mask, coarse_mask, eddies })
    }

    /// Replaces the random eddy population (for constructed cases).
    pub fn with_eddies(mut self, eddies: Vec<Eddy>) -> Self {
        self.eddies = eddies;
        self
    }

    /// Coriolis-like factor turning SSH slope into velocity.
    pub fn geo_gain(&self, lat: f64) -> f64 {
        let s = lat.to_radians().sin();
        self.config.g_prime * s / (s * s + self.config.eps_f * self.config.eps_f)
    }

    pub fn t0(&self, lat: f64) -> f64 {
        let (s, c) = lat.to_radians().sin_cos();
        self.config.t_eq * c * c + self.config.t_pole * s * s
    }

    fn season(&self, day: i64) -> f64 {
        (2.0 * std::f64::consts::PI * day as f64 / self.config.season_period).cos()
    }

    fn base_height(&self, day: i64) -> Height {
        let c = &self.config;
        let spec = &self.fine;
        let mut h = Height::zeros(spec.shape());
        let k = 2.0 * std::f64::consts::PI / c.meander_wavelength;
        let half = (c.lat_max - c.lat_min) / 2.0;
        let mid = (c.lat_max + c.lat_min) / 2.0;
        let seas = c.seasonal_ssh * self.season(day);
        for ((i, j), eta) in h.eta.indexed_iter_mut() {
            let (lat, lon) = (spec.lat_center(i), spec.lon_center(j));
            let yj = c.jet_lat + c.meander_amp * (k * (lon - c.lon_min)).sin();
            let dyj = c.meander_amp * k * (k * (lon - c.lon_min)).cos();
            let xi = (lat - yj) / c.jet_width;
            let sech2 = 1.0 - xi.tanh().powi(2);
            *eta = c.jet_amp * xi.tanh() + seas * (lat - mid) / half;
            h.d_lat[[i, j]] = c.jet_amp * sech2 / c.jet_width + seas / half;
            h.d_lon[[i, j]] = -c.jet_amp * sech2 / c.jet_width * dyj;
        }
        h
    }

    fn eddy_height(&self, day: i64) -> Height {
        let mut h = Height::zeros(self.fine.shape());
        for e in &self.eddies {
            let lon = e.lon0 + self.config.drift * day as f64;
            add_bump(&mut h, &self.fine, e.lat, lon, e.amp, e.radius);
        }
        h
    }

    /// Turns SSH and its slopes into the five variables. `tracers` adds the
    /// T0/S0 background and the seasonal temperature cycle.
    fn assemble(&self, h: &Height, day: i64, tracers: bool) -> Array3<f64> {
        let c = &self.config;
        let spec = &self.fine;
        let (nh, nw) = spec.shape();
        let t_season = if tracers { c.seasonal_t * self.season(day - 30) } else { 0.0 };
        let mut out = Array3::<f64>::zeros((nh, nw, 5));
        for i in 0..nh {
            let lat = spec.lat_center(i);
            let g = self.geo_gain(lat);
            let t0 = if tracers { self.t0(lat) } else { 0.0 };
            let s0 = if tracers { c.s0 } else { 0.0 };
            let coslat = lat.to_radians().cos();
            for j in 0..nw {
                let eta = h.eta[[i, j]];
                out[[i, j, 0]] = t0 + c.alpha * eta + t_season;
                out[[i, j, 1]] = s0 - c.beta * eta;
                out[[i, j, 2]] = -g * h.d_lat[[i, j]] / M_PER_DEG;
                out[[i, j, 3]] = g * h.d_lon[[i, j]] / (M_PER_DEG * coslat);
                out[[i, j, 4]] = eta;
            }
        }
        out
    }

    /// Jet, seasonal and tracer background without eddies.
    pub fn base_values(&self, day: i64) -> Array3<f64> {
        self.assemble(&self.base_height(day), day, true)
    }

    /// The eddy contribution to every variable.
    pub fn eddy_values(&self, day: i64) -> Array3<f64> {
        self.assemble(&self.eddy_height(day), day, false)
    }

    pub fn truth_state(&self, day: i64) -> Result<GridField> {
        let values = self.base_values(day) + self.eddy_values(day);
        GridField::new(self.fine.clone(), ALL_VARS.to_vec(), values, self.fine_mask.clone(), day)
    }

    /// One day of the toy forecast: the eddy anomaly is advected with a
    /// perturbed drift, damped, placed on the next day's base state, and a
    /// smooth SSH error with geostrophically consistent companions is added.
    pub fn forecast_step(&self, state: &GridField, fp: &ForecastParams, seed: u64) -> Result<GridField> {
        fp.validate()?;
        if state.spec != self.fine || state.vars != ALL_VARS || state.mask != self.fine_mask {
            return Err(Error::Schema("forecast_step expects a fine-grid state of this world".into()));
        }
        let day = state.day;
        let (h, w) = self.fine.shape();
        let base_now = self.base_values(day);
        let mut anomaly = Array3::<f64>::zeros((h, w, 5));
        Zip::indexed(&mut anomaly).and(&state.values).and(&base_now).for_each(|(i, j, _), a, &s, &b| {
            if self.fine_mask[[i, j]] {
                *a = s - b;
            }
        });
        let shift = self.config.drift * fp.drift_factor / self.fine.res;
        let mut next = self.base_values(day + 1);
        for j in 0..w {
            let x = j as f64 - shift;
            let x0 = x.floor();
            let f = x - x0;
            let j0 = (x0 as i64).rem_euclid(w as i64) as usize;
            let j1 = (j0 + 1) % w;
            for i in 0..h {
                for k in 0..5 {
                    let moved = (1.0 - f) * anomaly[[i, j0, k]] + f * anomaly[[i, j1, k]];
                    next[[i, j, k]] += fp.decay * moved;
                }
            }
        }
        if fp.error_scale > 0.0 {
            next += &self.error_values(fp, seed);
        }
        GridField::new(self.fine.clone(), ALL_VARS.to_vec(), next, self.fine_mask.clone(), day + 1)
    }

    /// Sum of random Gaussian SSH bumps with unit density per squared
    /// correlation length; amplitudes are scaled so the field's standard
    /// deviation is close to `error_scale`.
    pub fn error_values(&self, fp: &ForecastParams, seed: u64) -> Array3<f64> {
        let c = &self.config;
        let l = fp.error_corr_len;
        let lat_lo = c.lat_min - 2.0 * l;
        let lat_hi = c.lat_max + 2.0 * l;
        let area = (lat_hi - lat_lo) * (c.lon_max - c.lon_min);
        let n = (area / (l * l)).ceil() as usize;
        let amp = Normal::new(0.0, fp.error_scale / std::f64::consts::PI.sqrt()).expect("finite scale");
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut hgt = Height::zeros(self.fine.shape());
        for _ in 0..n {
            let lat = rng.random_range(lat_lo..lat_hi);
            let lon = rng.random_range(c.lon_min..c.lon_max);
            let a = amp.sample(&mut rng);
            add_bump(&mut hgt, &self.fine, lat.clamp(-89.0, 89.0), lon, a, l);
        }
        self.assemble(&hgt, 0, false)
    }

    /// `lead` forecast steps from the truth at `day - lead`, area-averaged to
    /// the coarse grid.
    pub fn make_background(&self, day: i64, lead: i64, fp: &ForecastParams, master_seed: u64) -> Result<GridField> {
        if day < lead || lead < 0 {
            return Err(Error::Domain(format!("background for day {day} needs lead {lead} <= day")));
        }
        let mut state = self.truth_state(day - lead)?;
        for step in 0..lead {
            state = self.forecast_step(&state, fp, seed::derive(master_seed, "background", &[day, step]))?;
        }
        area_average(&state, &self.coarse, &self.coarse_mask)
    }

    /// Bilinear interpolation of a coarse field onto the fine grid.
    pub fn to_fine(&self, coarse: &GridField) -> Result<GridField> {
        regrid_bilinear(coarse, &self.fine, &self.fine_mask)
    }
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Adds `amp * exp(-(dx² + dy²) / (2 r²))` and its analytic degree-space
/// derivatives. `dx` is the longitude offset (minimum image over the domain
/// width) scaled by the cosine of the bump's own latitude.
fn add_bump(h: &mut Height, spec: &GridSpec, lat_c: f64, lon_c: f64, amp: f64, r: f64) {
    let period = spec.lon_extent();
    let coslat = lat_c.to_radians().cos().max(1e-6);
    let reach_lat = CUTOFF_RADII * r;
    let reach_lon = (reach_lat / coslat).min(period / 2.0);
    let inv2r2 = 1.0 / (2.0 * r * r);
    let (nh, nw) = spec.shape();
    let i_lo = (((lat_c - reach_lat - spec.lat_min) / spec.res).floor().max(0.0)) as usize;
    let i_hi = ((((lat_c + reach_lat - spec.lat_min) / spec.res).ceil()).max(0.0) as usize).min(nh);
    let ncols = ((2.0 * reach_lon / spec.res).ceil() as usize + 2).min(nw);
    let j_start = ((lon_c - reach_lon - spec.lon_min) / spec.res).floor() as i64;
    let cols: Vec<(usize, f64, f64)> = (0..ncols)
        .map(|n| {
            let j = (j_start + n as i64).rem_euclid(nw as i64) as usize;
            let raw = spec.lon_center(j) - lon_c;
            let dx = (raw - period * (raw / period).round()) * coslat;
            (j, dx, (-dx * dx * inv2r2).exp())
        })
        .collect();
    let limit = CUTOFF_RADII * CUTOFF_RADII / 2.0;
    for i in i_lo..i_hi {
        let dy = spec.lat_center(i) - lat_c;
        let qy = dy * dy * inv2r2;
        if qy > limit {
            continue;
        }
        let ay = amp * (-qy).exp();
        for &(j, dx, ex) in &cols {
            if qy + dx * dx * inv2r2 > limit {
                continue;
            }
            let g = ay * ex;
            h.eta[[i, j]] += g;
            h.d_lat[[i, j]] += -g * dy * 2.0 * inv2r2;
            h.d_lon[[i, j]] += -g * dx * coslat * 2.0 * inv2r2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quiet() -> WorldConfig {
        WorldConfig {
            n_eddies: 0,
            jet_amp: 0.0,
            seasonal_ssh: 0.0,
            seasonal_t: 0.0,
            days: 10,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn quiet_world_is_the_tracer_background() {
        let w = World::new(quiet()).unwrap();
        let f = w.truth_state(17).unwrap();
        for ((i, j), &ocean) in w.fine_mask.indexed_iter() {
            if !ocean {
                assert!(f.values[[i, j, 0]].is_nan());
                continue;
            }
            let lat = w.fine.lat_center(i);
            assert_eq!(f.values[[i, j, 0]], w.t0(lat));
            assert_eq!(f.values[[i, j, 1]], 35.0);
            for k in 2..5 {
                assert_eq!(f.values[[i, j, k]], 0.0);
            }
        }
    }

    fn lone_eddy(amp: f64, lat: f64) -> World {
        let cfg = WorldConfig { drift: 0.0, ..quiet() };
        World::new(cfg).unwrap().with_eddies(vec![Eddy { lat, lon0: 180.25, amp, radius: 1.5 }])
    }

    #[test]
    fn velocity_vanishes_at_eddy_centre() {
        // centre on a cell centre so the extremum is sampled exactly
        let w = lone_eddy(0.3, 35.25);
        let f = w.truth_state(0).unwrap();
        let (i, j) = w.fine.cell_of(35.25, 180.25).unwrap();
        assert_eq!(f.values[[i, j, 2]], 0.0);
        assert!(f.values[[i, j, 3]].abs() < 1e-15);
        assert!((f.values[[i, j, 4]] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn forecast_identity_reproduces_next_truth() {
        let w = World::new(WorldConfig { days: 10, ..WorldConfig::default() }).unwrap();
        let today = w.truth_state(5).unwrap();
        let next = w.forecast_step(&today, &ForecastParams::identity(), 1).unwrap();
        let truth = w.truth_state(6).unwrap();
        let (h, wd) = w.fine.shape();
        let mut checked = 0;
        for i in 0..h {
            for j in 0..wd {
                // the anomaly arrives from one cell east; it is exact where that cell is ocean
                if w.fine_mask[[i, j]] && w.fine_mask[[i, (j + 1) % wd]] {
                    for k in 0..5 {
                        let (a, b) = (next.values[[i, j, k]], truth.values[[i, j, k]]);
                        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "({i},{j},{k}) {a} vs {b}");
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > h * wd / 2);
    }

    #[test]
    fn decay_scales_eddy_anomaly() {
        let w = World::new(WorldConfig { days: 10, ..WorldConfig::default() }).unwrap();
        let fp = ForecastParams { decay: 0.9, ..ForecastParams::identity() };
        let next = w.forecast_step(&w.truth_state(2).unwrap(), &fp, 9).unwrap();
        let base = w.base_values(3);
        let eddy = w.eddy_values(3);
        let wd = w.fine.nlon();
        for ((i, j, k), &v) in next.values.indexed_iter() {
            if w.fine_mask[[i, j]] && w.fine_mask[[i, (j + 1) % wd]] {
                let want = 0.9 * eddy[[i, j, k]];
                assert!((v - base[[i, j, k]] - want).abs() < 1e-9, "({i},{j},{k})");
            }
        }
    }

    #[test]
    fn background_lead_zero_is_area_average() {
        let w = World::new(WorldConfig { days: 10, ..WorldConfig::default() }).unwrap();
        let bg = w.make_background(4, 0, &ForecastParams::identity(), 3).unwrap();
        let avg = area_average(&w.truth_state(4).unwrap(), &w.coarse, &w.coarse_mask).unwrap();
        assert_eq!(bg.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   avg.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        for ((i, j), &ocean) in w.coarse_mask.indexed_iter() {
            assert_eq!(ocean, bg.values[[i, j, 0]].is_finite());
        }
        assert!(matches!(w.make_background(2, 3, &ForecastParams::default(), 3), Err(Error::Domain(_))));
    }

    #[test]
    fn truth_is_deterministic() {
        let a = World::new(WorldConfig::default()).unwrap();
        let b = World::new(WorldConfig::default()).unwrap();
        let fa = a.truth_state(123).unwrap();
        let fb = b.truth_state(123).unwrap();
        assert!(fa.values.iter().zip(fb.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let fp = ForecastParams::default();
        let ba = a.make_background(50, 3, &fp, 7).unwrap();
        let bb = b.make_background(50, 3, &fp, 7).unwrap();
        assert!(ba.values.iter().zip(bb.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn circulation_sign_follows_amplitude_and_hemisphere() {
        for (amp, lat, expect_negative) in [(0.3, 40.0, true), (-0.3, 40.0, false)] {
            let w = lone_eddy(amp, lat);
            let f = w.truth_state(0).unwrap();
            let (ic, jc) = w.fine.cell_of(lat, 180.25).unwrap();
            // counter-clockwise loop of half-width 3 cells, midpoint rule
            let r = 3usize;
            let mut circ = 0.0;
            for d in 0..2 * r {
                circ += f.values[[ic - r, jc - r + d, 2]]; // south edge, eastward
                circ += f.values[[ic - r + d, jc + r, 3]]; // east edge, northward
                circ -= f.values[[ic + r, jc - r + d, 2]]; // north edge, westward
                circ -= f.values[[ic - r + d, jc - r, 3]]; // west edge, southward
            }
            assert_eq!(circ < 0.0, expect_negative, "amp {amp} lat {lat}: {circ}");
        }
        let land = vec![LandShape::Rect { lat_min: -60.0, lat_max: -50.0, lon_min: 140.0, lon_max: 170.0 }];
        let cfg = WorldConfig { lat_min: -60.0, lat_max: -20.0, land, drift: 0.0, ..quiet() };
        let w = World::new(cfg).unwrap().with_eddies(vec![Eddy { lat: -40.25, lon0: 180.25, amp: 0.3, radius: 1.5 }]);
        let f = w.truth_state(0).unwrap();
        let (ic, jc) = w.fine.cell_of(-40.25, 180.25).unwrap();
        let r = 3usize;
        let mut circ = 0.0;
        for d in 0..2 * r {
            circ += f.values[[ic - r, jc - r + d, 2]];
            circ += f.values[[ic - r + d, jc + r, 3]];
            circ -= f.values[[ic + r, jc - r + d, 2]];
            circ -= f.values[[ic - r + d, jc - r, 3]];
        }
        assert!(circ > 0.0, "southern high circulates counter-clockwise: {circ}");
    }
}
