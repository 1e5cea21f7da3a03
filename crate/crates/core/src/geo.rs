//! Regular lat/lon grids, land masks, latitude weights, coordinate encoding
//! and land-aware bilinear interpolation.
//!
//! Grids are cell-centre registered: row `i` is centred at
//! `lat_min + (i + 0.5) * res`, column `j` at `lon_min + (j + 0.5) * res`.
//! Land cells carry `NaN` in every variable.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Metres per degree of arc on a 6371 km sphere.
pub const M_PER_DEG: f64 = 6_371_000.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    T,
    S,
    U,
    V,
    Ssh,
}

pub const ALL_VARS: [Var; 5] = [Var::T, Var::S, Var::U, Var::V, Var::Ssh];

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::T => "T",
            Var::S => "S",
            Var::U => "U",
            Var::V => "V",
            Var::Ssh => "SSH",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        ALL_VARS.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub res: f64,
    pub periodic_lon: bool,
}

fn exact_count(extent: f64, res: f64) -> Option<usize> {
    let n = extent / res;
    let r = n.round();
    ((n - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

impl GridSpec {
    pub fn new(lat: (f64, f64), lon: (f64, f64), res: f64, periodic_lon: bool) -> Result<Self> {
        let spec = Self { lat_min: lat.0, lat_max: lat.1, lon_min: lon.0, lon_max: lon.1, res, periodic_lon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.res].iter().all(|x| x.is_finite());
        if !finite || self.res <= 0.0 {
            return Err(Error::Config(format!("grid resolution must be positive and finite: {self:?}")));
        }
        if self.lat_min < -90.0 || self.lat_max > 90.0 || self.lat_min >= self.lat_max {
            return Err(Error::Config(format!("bad latitude extent [{}, {}]", self.lat_min, self.lat_max)));
        }
        if self.lon_min >= self.lon_max {
            return Err(Error::Config(format!("bad longitude extent [{}, {})", self.lon_min, self.lon_max)));
        }
        if self.periodic_lon && (self.lon_max - self.lon_min - 360.0).abs() > 1e-9 {
            return Err(Error::Config("a periodic longitude axis must span 360 degrees".into()));
        }
        if exact_count(self.lat_max - self.lat_min, self.res).is_none()
            || exact_count(self.lon_max - self.lon_min, self.res).is_none()
        {
            return Err(Error::Config(format!("resolution {} does not divide the extent exactly", self.res)));
        }
        Ok(())
    }

    pub fn nlat(&self) -> usize {
        exact_count(self.lat_max - self.lat_min, self.res).unwrap_or(0)
    }

    pub fn nlon(&self) -> usize {
        exact_count(self.lon_max - self.lon_min, self.res).unwrap_or(0)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nlat(), self.nlon())
    }

    pub fn lat_center(&self, i: usize) -> f64 {
        self.lat_min + (i as f64 + 0.5) * self.res
    }

    pub fn lon_center(&self, j: usize) -> f64 {
        self.lon_min + (j as f64 + 0.5) * self.res
    }

    pub fn lon_extent(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    /// Maps `lon` into `[lon_min, lon_min + 360)` on a periodic axis; identity otherwise.
    pub fn wrap_lon(&self, lon: f64) -> f64 {
        if self.periodic_lon {
            self.lon_min + (lon - self.lon_min).rem_euclid(360.0)
        } else {
            lon
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let lon = self.wrap_lon(lon);
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    /// Cell containing the point; points on the max edges belong to the last cell.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        if !self.contains(lat, lon) {
            return None;
        }
        let lon = self.wrap_lon(lon);
        let i = (((lat - self.lat_min) / self.res).floor() as usize).min(self.nlat() - 1);
        let j = (((lon - self.lon_min) / self.res).floor() as usize).min(self.nlon() - 1);
        Some((i, j))
    }

    /// A grid over the same extent with `ratio` times larger cells.
    pub fn coarsen(&self, ratio: usize) -> Result<Self> {
        if ratio < 1 || self.nlat() % ratio != 0 || self.nlon() % ratio != 0 {
            return Err(Error::Config(format!("ratio {ratio} does not divide the {:?} grid", self.shape())));
        }
        Self::new(
            (self.lat_min, self.lat_max),
            (self.lon_min, self.lon_max),
            self.res * ratio as f64,
            self.periodic_lon,
        )
    }

    /// Integer ratio `coarse.res / self.res` when `coarse` nests exactly on this grid.
    pub fn nesting_ratio(&self, coarse: &GridSpec) -> Result<usize> {
        let same_extent = (self.lat_min - coarse.lat_min).abs() < 1e-9
            && (self.lat_max - coarse.lat_max).abs() < 1e-9
            && (self.lon_min - coarse.lon_min).abs() < 1e-9
            && (self.lon_max - coarse.lon_max).abs() < 1e-9;
        let r = coarse.res / self.res;
        if !same_extent || (r - r.round()).abs() > 1e-9 || r < 1.0 {
            return Err(Error::Schema("grids do not nest".into()));
        }
        Ok(r.round() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedCoord {
    pub lat_sin: f64,
    pub lat_cos: f64,
    pub lon_sin: f64,
    pub lon_cos: f64,
}

impl EncodedCoord {
    pub fn to_array(self) -> [f64; 4] {
        [self.lat_sin, self.lat_cos, self.lon_sin, self.lon_cos]
    }
}

pub fn encode_coord(lat_deg: f64, lon_deg: f64) -> Result<EncodedCoord> {
    if !(-90.0..=90.0).contains(&lat_deg) || !lon_deg.is_finite() {
        return Err(Error::Domain(format!("coordinate ({lat_deg}, {lon_deg}) is outside the globe")));
    }
    let (lat_sin, lat_cos) = lat_deg.to_radians().sin_cos();
    let (lon_sin, lon_cos) = lon_deg.rem_euclid(360.0).to_radians().sin_cos();
    Ok(EncodedCoord { lat_sin, lat_cos, lon_sin, lon_cos })
}

/// `cos(lat)` at every row centre.
pub fn lat_weights(spec: &GridSpec) -> Vec<f64> {
    (0..spec.nlat()).map(|i| spec.lat_center(i).to_radians().cos()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LandShape {
    Ellipse { lat: f64, lon: f64, r_lat: f64, r_lon: f64 },
    Rect { lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64 },
}

impl LandShape {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        match *self {
            LandShape::Ellipse { lat: c_lat, lon: c_lon, r_lat, r_lon } => {
                let a = (lat - c_lat) / r_lat;
                let b = (lon - c_lon) / r_lon;
                a * a + b * b <= 1.0
            }
            LandShape::Rect { lat_min, lat_max, lon_min, lon_max } => {
                lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max
            }
        }
    }
}

/// Ocean (`true`) where no configured shape covers the cell centre of the
/// `base_res` grid; coarser grids take the majority of their sub-cells.
pub fn make_land_mask(spec: &GridSpec, shapes: &[LandShape], base_res: f64) -> Result<Array2<bool>> {
    if shapes.is_empty() {
        return Err(Error::Config("the land configuration lists no shapes".into()));
    }
    let base = GridSpec { res: base_res, ..spec.clone() };
    base.validate()?;
    let ratio = base.nesting_ratio(spec)?;
    let (h, w) = base.shape();
    let fine = Array2::from_shape_fn((h, w), |(i, j)| {
        let (lat, lon) = (base.lat_center(i), base.lon_center(j));
        !shapes.iter().any(|s| s.contains(lat, lon) || s.contains(lat, lon - 360.0) || s.contains(lat, lon + 360.0))
    });
    let frac = fine.iter().filter(|&&o| o).count() as f64 / (h * w) as f64;
    if !(frac > 0.5 && frac < 0.95) {
        return Err(Error::Config(format!("ocean fraction {frac:.3} is outside (0.5, 0.95)")));
    }
    Ok(if ratio == 1 { fine } else { majority_downsample(fine.view(), ratio) })
}

/// A coarse cell is ocean when strictly more than half its sub-cells are; ties go to land.
pub fn majority_downsample(mask: ArrayView2<bool>, ratio: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h / ratio, w / ratio), |(ci, cj)| {
        let mut ocean = 0;
        for di in 0..ratio {
            for dj in 0..ratio {
                ocean += mask[[ci * ratio + di, cj * ratio + dj]] as usize;
            }
        }
        2 * ocean > ratio * ratio
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub vars: Vec<Var>,
    /// `H × W × vars`
    pub values: Array3<f64>,
    /// `true` on ocean.
    pub mask: Array2<bool>,
    pub day: i64,
}

impl GridField {
    /// Checks shapes and finiteness on ocean, then writes the land sentinel.
    pub fn new(spec: GridSpec, vars: Vec<Var>, mut values: Array3<f64>, mask: Array2<bool>, day: i64) -> Result<Self> {
        let (h, w) = spec.shape();
        if values.dim() != (h, w, vars.len()) || mask.dim() != (h, w) {
            return Err(Error::Schema(format!(
                "field {:?} / mask {:?} do not match grid {h}x{w} with {} variables",
                values.dim(),
                mask.dim(),
                vars.len()
            )));
        }
        for ((i, j, k), v) in values.indexed_iter_mut() {
            if mask[[i, j]] {
                if !v.is_finite() {
                    return Err(Error::Numerical(format!("non-finite {} at ocean cell ({i}, {j})", vars[k])));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self { spec, vars, values, mask, day })
    }

    pub fn from_fn(
        spec: GridSpec,
        vars: Vec<Var>,
        mask: Array2<bool>,
        day: i64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let (h, w) = spec.shape();
        let values = Array3::from_shape_fn((h, w, vars.len()), |(i, j, k)| if mask[[i, j]] { f(i, j, k) } else { f64::NAN });
        Self::new(spec, vars, values, mask, day)
    }

    pub fn var_index(&self, v: Var) -> Result<usize> {
        self.vars
            .iter()
            .position(|&x| x == v)
            .ok_or_else(|| Error::Schema(format!("field has no variable {v}")))
    }

    pub fn channel(&self, v: Var) -> Result<ArrayView2<'_, f64>> {
        let k = self.var_index(v)?;
        Ok(self.values.index_axis(ndarray::Axis(2), k))
    }

    pub fn ocean_count(&self) -> usize {
        self.mask.iter().filter(|&&o| o).count()
    }

    pub fn same_layout(&self, other: &GridField) -> bool {
        self.spec == other.spec && self.vars == other.vars && self.mask == other.mask
    }
}

/// Cos-latitude weighted mean of fine ocean sub-cells for every coarse ocean cell.
pub fn area_average(fine: &GridField, coarse: &GridSpec, coarse_mask: &Array2<bool>) -> Result<GridField> {
    let r = fine.spec.nesting_ratio(coarse)?;
    let w = lat_weights(&fine.spec);
    let nv = fine.vars.len();
    let mut out = Array3::<f64>::from_elem((coarse.nlat(), coarse.nlon(), nv), f64::NAN);
    for ((ci, cj), &ocean) in coarse_mask.indexed_iter() {
        if !ocean {
            continue;
        }
        let mut acc = vec![0.0; nv];
        let mut wsum = 0.0;
        for i in ci * r..(ci + 1) * r {
            for j in cj * r..(cj + 1) * r {
                if fine.mask[[i, j]] {
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a += w[i] * fine.values[[i, j, k]];
                    }
                    wsum += w[i];
                }
            }
        }
        if wsum == 0.0 {
            return Err(Error::Coverage(format!("coarse ocean cell ({ci}, {cj}) has no ocean sub-cells")));
        }
        for (k, a) in acc.into_iter().enumerate() {
            out[[ci, cj, k]] = a / wsum;
        }
    }
    GridField::new(coarse.clone(), fine.vars.clone(), out, coarse_mask.clone(), fine.day)
}

/// Interpolation stencil: up to four grid cells and weights summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub cells: [(usize, usize); 4],
    pub weights: [f64; 4],
    pub len: usize,
}

impl Stencil {
    pub fn apply(&self, values: &Array3<f64>, k: usize) -> f64 {
        (0..self.len).map(|n| self.weights[n] * values[[self.cells[n].0, self.cells[n].1, k]]).sum()
    }
}

/// Bilinear stencil over the four surrounding cell centres. Positions within
/// half a cell of a non-periodic edge are clamped. If any corner is land the
/// ocean corners are inverse-distance weighted; `None` when all are land.
pub fn stencil(spec: &GridSpec, mask: &Array2<bool>, lat: f64, lon: f64) -> Result<Option<Stencil>> {
    if !(lat >= spec.lat_min && lat <= spec.lat_max) {
        return Err(Error::Domain(format!("latitude {lat} outside [{}, {}]", spec.lat_min, spec.lat_max)));
    }
    let lon = spec.wrap_lon(lon);
    if !(lon >= spec.lon_min && lon <= spec.lon_max) {
        return Err(Error::Domain(format!("longitude {lon} outside [{}, {}]", spec.lon_min, spec.lon_max)));
    }
    let (h, w) = spec.shape();
    let y = ((lat - spec.lat_min) / spec.res - 0.5).clamp(0.0, (h - 1) as f64);
    let i0 = (y.floor() as usize).min(h.saturating_sub(2));
    let fy = y - i0 as f64;
    let i1 = (i0 + 1).min(h - 1);

    let x = (lon - spec.lon_min) / spec.res - 0.5;
    let (j0, j1, fx) = if spec.periodic_lon {
        let xf = x.floor();
        let j0 = (xf as i64).rem_euclid(w as i64) as usize;
        (j0, (j0 + 1) % w, x - xf)
    } else {
        let x = x.clamp(0.0, (w - 1) as f64);
        let j0 = (x.floor() as usize).min(w.saturating_sub(2));
        (j0, (j0 + 1).min(w - 1), x - j0 as f64)
    };

    let cells = [(i0, j0), (i0, j1), (i1, j0), (i1, j1)];
    let corners = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
    if cells.iter().all(|&(i, j)| mask[[i, j]]) {
        let weights = [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx];
        return Ok(Some(Stencil { cells, weights, len: 4 }));
    }
    let mut out = Stencil { cells: [(0, 0); 4], weights: [0.0; 4], len: 0 };
    for (n, &(i, j)) in cells.iter().enumerate() {
        if !mask[[i, j]] {
            continue;
        }
        let d = ((fy - corners[n].0).powi(2) + (fx - corners[n].1).powi(2)).sqrt();
        if d < 1e-12 {
            return Ok(Some(Stencil { cells: [(i, j); 4], weights: [1.0, 0.0, 0.0, 0.0], len: 1 }));
        }
        out.cells[out.len] = (i, j);
        out.weights[out.len] = 1.0 / d;
        out.len += 1;
    }
    if out.len == 0 {
        return Ok(None);
    }
    let s: f64 = out.weights[..out.len].iter().sum();
    for wgt in &mut out.weights[..out.len] {
        *wgt /= s;
    }
    Ok(Some(out))
}

/// Interpolated values at each `(lat, lon)`; rows are `None` where the
/// neighbourhood is all land.
pub fn bilinear_sample(field: &GridField, coords: &[(f64, f64)]) -> Result<Vec<Option<Vec<f64>>>> {
    coords
        .iter()
        .map(|&(lat, lon)| {
            Ok(stencil(&field.spec, &field.mask, lat, lon)?
                .map(|s| (0..field.vars.len()).map(|k| s.apply(&field.values, k)).collect()))
        })
        .collect()
}

/// Samples `field` at every cell centre of `target`. Cells whose stencil is
/// all land take the nearest valid value along the same row, then column.
pub fn regrid_bilinear(field: &GridField, target: &GridSpec, target_mask: &Array2<bool>) -> Result<GridField> {
    let (h, w) = target.shape();
    let nv = field.vars.len();
    let mut values = Array3::<f64>::from_elem((h, w, nv), f64::NAN);
    let mut valid = Array2::from_elem((h, w), false);
    for i in 0..h {
        for j in 0..w {
            if !target_mask[[i, j]] {
                continue;
            }
            if let Some(s) = stencil(&field.spec, &field.mask, target.lat_center(i), target.lon_center(j))? {
                for k in 0..nv {
                    values[[i, j, k]] = s.apply(&field.values, k);
                }
                valid[[i, j]] = true;
            }
        }
    }
    fill_nearest(&mut values, &mut valid, target_mask)?;
    GridField::new(target.clone(), field.vars.clone(), values, target_mask.clone(), field.day)
}

fn fill_nearest(values: &mut Array3<f64>, valid: &mut Array2<bool>, mask: &Array2<bool>) -> Result<()> {
    let w = mask.dim().1;
    let missing: Vec<(usize, usize)> =
        mask.indexed_iter().filter(|&((i, j), &o)| o && !valid[[i, j]]).map(|(p, _)| p).collect();
    if missing.is_empty() {
        return Ok(());
    }
    let sources: Vec<(usize, usize)> = valid.indexed_iter().filter(|(_, &v)| v).map(|(p, _)| p).collect();
    if sources.is_empty() {
        return Err(Error::Coverage("no valid interpolated cells to fill from".into()));
    }
    for (i, j) in missing {
        let best = sources
            .iter()
            .min_by_key(|&&(si, sj)| {
                let di = si.abs_diff(i);
                let dj = sj.abs_diff(j).min(w - sj.abs_diff(j));
                (di * di + dj * dj, si * w + sj)
            })
            .copied()
            .expect("non-empty");
        for k in 0..values.dim().2 {
            values[[i, j, k]] = values[[best.0, best.1, k]];
        }
        valid[[i, j]] = true;
    }
    Ok(())
}
