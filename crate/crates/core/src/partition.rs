//! Overlapping patch tiling, point routing and hat-weighted stitching.

use ndarray::{Array2, Array3};

use crate::geo::{GridField, GridSpec, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    pub id: usize,
    pub lat0: f64,
    pub lat1: f64,
    /// May exceed `lon_max` on a periodic axis.
    pub lon0: f64,
    pub lon1: f64,
    pub in_lat0: f64,
    pub in_lat1: f64,
    pub in_lon0: f64,
    pub in_lon1: f64,
    pub overlap: (f64, f64),
    /// Sides lying on a non-periodic domain edge: lat min, lat max, lon min, lon max.
    pub on_edge: [bool; 4],
    pub row0: usize,
    pub col0: usize,
    pub nrows: usize,
    pub ncols: usize,
    pub grid: GridSpec,
}

fn snapped(x: f64, res: f64) -> Option<usize> {
    let n = x / res;
    ((n - n.round()).abs() < 1e-9).then(|| n.round() as usize)
}

fn wrap_into(lon: f64, lon0: f64, periodic: bool) -> f64 {
    if periodic {
        lon0 + (lon - lon0).rem_euclid(360.0)
    } else {
        lon
    }
}

impl PatchSpec {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let lon = wrap_into(lon, self.lon0, self.grid.periodic_lon);
        lat >= self.lat0 && lat < self.lat1 && lon >= self.lon0 && lon < self.lon1
    }

    pub fn interior_contains(&self, lat: f64, lon: f64) -> bool {
        let lon = wrap_into(lon, self.in_lon0, self.grid.periodic_lon);
        lat >= self.in_lat0 && lat < self.in_lat1 && lon >= self.in_lon0 && lon < self.in_lon1
    }

    /// Blend weight: 1 in the interior, falling linearly to 0 at every patch
    /// edge that is not a domain edge.
    pub fn hat_weight(&self, lat: f64, lon: f64) -> f64 {
        let lon = wrap_into(lon, self.lon0, self.grid.periodic_lon);
        let axis = |x: f64, lo: f64, hi: f64, ov: f64, lo_edge: bool, hi_edge: bool| {
            if ov <= 0.0 {
                return 1.0;
            }
            let dlo = if lo_edge { f64::INFINITY } else { x - lo };
            let dhi = if hi_edge { f64::INFINITY } else { hi - x };
            (dlo.min(dhi) / ov).clamp(0.0, 1.0)
        };
        axis(lat, self.lat0, self.lat1, self.overlap.0, self.on_edge[0], self.on_edge[1])
            * axis(lon, self.lon0, self.lon1, self.overlap.1, self.on_edge[2], self.on_edge[3])
    }

    /// Grid cells of the patch as `(row, col)` on the parent grid, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.grid.nlon();
        (0..self.nrows).flat_map(move |r| (0..self.ncols).map(move |c| (self.row0 + r, (self.col0 + c) % w)))
    }
}

/// Start offsets along one axis.
fn walk(extent: f64, patch: f64, stride: f64, periodic: bool, axis: &str) -> Result<Vec<f64>> {
    if periodic {
        let n = extent / stride;
        if (n - n.round()).abs() > 1e-9 || patch > extent {
            return Err(Error::Config(format!("{axis} stride {stride} does not tile the periodic extent {extent}")));
        }
        return Ok((0..n.round() as usize).map(|k| k as f64 * stride).collect());
    }
    if patch > extent + 1e-9 {
        return Err(Error::Config(format!("{axis} patch {patch} exceeds the extent {extent}")));
    }
    let n = (extent - patch) / stride;
    if (n - n.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("{axis} stride {stride} does not tile the extent {extent} with patch {patch}")));
    }
    Ok((0..=n.round() as usize).map(|k| k as f64 * stride).collect())
}

/// Patches at stride `patch - overlap` per axis, lat-major order.
pub fn partition_domain(spec: &GridSpec, patch_deg: (f64, f64), overlap_deg: (f64, f64)) -> Result<Vec<PatchSpec>> {
    let (pl, pn) = patch_deg;
    let (ol, on) = overlap_deg;
    if !(ol >= 0.0 && on >= 0.0 && pl > ol && pn > on) {
        return Err(Error::Config(format!("need patch > overlap >= 0, got patch {patch_deg:?} overlap {overlap_deg:?}")));
    }
    let (sl, sn) = (pl - ol, pn - on);
    for (x, what) in [(pl, "patch height"), (pn, "patch width"), (sl, "lat stride"), (sn, "lon stride")] {
        if snapped(x, spec.res).is_none() {
            return Err(Error::Config(format!("{what} {x} is not a multiple of the grid resolution {}", spec.res)));
        }
    }
    let lat_starts = walk(spec.lat_max - spec.lat_min, pl, sl, false, "latitude")?;
    let lon_starts = walk(spec.lon_extent(), pn, sn, spec.periodic_lon, "longitude")?;
    let (nla, nlo) = (lat_starts.len(), lon_starts.len());
    let nrows = snapped(pl, spec.res).expect("checked");
    let ncols = snapped(pn, spec.res).expect("checked");

    let mut out = Vec::with_capacity(nla * nlo);
    for (a, &sa) in lat_starts.iter().enumerate() {
        for (b, &sb) in lon_starts.iter().enumerate() {
            let lat0 = spec.lat_min + sa;
            let lon0 = spec.lon_min + sb;
            let lat_lo_edge = a == 0;
            let lat_hi_edge = a + 1 == nla;
            let lon_lo_edge = !spec.periodic_lon && b == 0;
            let lon_hi_edge = !spec.periodic_lon && b + 1 == nlo;
            out.push(PatchSpec {
                id: out.len(),
                lat0,
                lat1: lat0 + pl,
                lon0,
                lon1: lon0 + pn,
                in_lat0: if lat_lo_edge { lat0 } else { lat0 + ol / 2.0 },
                in_lat1: if lat_hi_edge { lat0 + pl } else { lat0 + pl - ol / 2.0 },
                in_lon0: if lon_lo_edge { lon0 } else { lon0 + on / 2.0 },
                in_lon1: if lon_hi_edge { lon0 + pn } else { lon0 + pn - on / 2.0 },
                overlap: overlap_deg,
                on_edge: [lat_lo_edge, lat_hi_edge, lon_lo_edge, lon_hi_edge],
                row0: snapped(sa, spec.res).expect("checked"),
                col0: snapped(sb, spec.res).expect("checked"),
                nrows,
                ncols,
                grid: spec.clone(),
            });
        }
    }
    Ok(out)
}

/// Indices of points inside the full patch (min edge inclusive, max exclusive).
pub fn assign_points(coords: &[(f64, f64)], patch: &PatchSpec) -> Vec<usize> {
    coords
        .iter()
        .enumerate()
        .filter(|(_, &(lat, lon))| patch.contains(lat, lon))
        .map(|(i, _)| i)
        .collect()
}

/// Normalized blend weights of every patch at every cell: `weights[p][[r, c]]`
/// on the patch-local grid.
pub fn blend_weights(patches: &[PatchSpec], spec: &GridSpec) -> Result<Vec<Array2<f64>>> {
    let (h, w) = spec.shape();
    let mut total = Array2::<f64>::zeros((h, w));
    let mut raw = Vec::with_capacity(patches.len());
    for p in patches {
        let mut a = Array2::<f64>::zeros((p.nrows, p.ncols));
        for (n, (i, j)) in p.cells().enumerate() {
            let (r, c) = (n / p.ncols, n % p.ncols);
            let lon = p.lon0 + (c as f64 + 0.5) * spec.res;
            let wt = p.hat_weight(spec.lat_center(i), lon);
            a[[r, c]] = wt;
            total[[i, j]] += wt;
        }
        raw.push(a);
    }
    if let Some(((i, j), _)) = total.indexed_iter().find(|(_, &t)| t <= 0.0) {
        return Err(Error::Coverage(format!("cell ({i}, {j}) is covered by no patch")));
    }
    for (p, a) in patches.iter().zip(raw.iter_mut()) {
        for (n, (i, j)) in p.cells().enumerate() {
            a[[n / p.ncols, n % p.ncols]] /= total[[i, j]];
        }
    }
    Ok(raw)
}

/// Hat-weighted blend of per-patch outputs (`nrows × ncols × vars` each).
/// The reduction runs in patch-id order whatever the input order.
pub fn stitch(
    outputs: &[(PatchSpec, Array3<f64>)],
    spec: &GridSpec,
    vars: &[Var],
    mask: &Array2<bool>,
    day: i64,
) -> Result<GridField> {
    let mut order: Vec<&(PatchSpec, Array3<f64>)> = outputs.iter().collect();
    order.sort_by_key(|(p, _)| p.id);
    let patches: Vec<PatchSpec> = order.iter().map(|(p, _)| p.clone()).collect();
    let weights = blend_weights(&patches, spec)?;
    let (h, w) = spec.shape();
    let nv = vars.len();
    let mut acc = Array3::<f64>::zeros((h, w, nv));
    for ((p, vals), wt) in order.iter().zip(&weights) {
        if vals.dim() != (p.nrows, p.ncols, nv) {
            return Err(Error::Schema(format!(
                "patch {} output {:?} does not match its {}x{}x{nv} grid",
                p.id,
                vals.dim(),
                p.nrows,
                p.ncols
            )));
        }
        for (n, (i, j)) in p.cells().enumerate() {
            if !mask[[i, j]] {
                continue;
            }
            let (r, c) = (n / p.ncols, n % p.ncols);
            for k in 0..nv {
                acc[[i, j, k]] += wt[[r, c]] * vals[[r, c, k]];
            }
        }
    }
    GridField::new(spec.clone(), vars.to_vec(), acc, mask.clone(), day)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(lat: f64, lon: f64) -> GridSpec {
        GridSpec::new((0.0, lat), (0.0, lon), 1.0, false).unwrap()
    }

    #[test]
    fn single_patch_covers_domain() {
        let s = GridSpec::new((0.0, 20.0), (0.0, 20.0), 1.0, false).unwrap();
        let p = partition_domain(&s, (20.0, 20.0), (0.0, 0.0)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].nrows, p[0].ncols), (20, 20));
        assert_eq!((p[0].in_lat0, p[0].in_lat1, p[0].in_lon0, p[0].in_lon1), (0.0, 20.0, 0.0, 20.0));
    }

    #[test]
    fn bad_geometries_rejected() {
        let s = grid(20.0, 40.0);
        assert!(partition_domain(&s, (10.0, 10.0), (10.0, 5.0)).is_err());
        assert!(partition_domain(&s, (10.0, 10.0), (3.0, 0.0)).is_err());
        assert!(partition_domain(&s, (10.0, 10.0), (-1.0, 0.0)).is_err());
    }

    #[test]
    fn boundary_rule() {
        let s = grid(20.0, 50.0);
        let p = &partition_domain(&s, (10.0, 20.0), (5.0, 5.0)).unwrap()[0];
        let pts = [(p.lat0, p.lon0), (p.lat1, p.lon1), (p.lat1 - 1e-9, p.lon0)];
        assert_eq!(assign_points(&pts, p), vec![0, 2]);
    }

    #[test]
    fn constant_outputs_stitch_to_constant() {
        let s = grid(28.0, 44.0);
        let patches = partition_domain(&s, (10.0, 20.0), (4.0, 8.0)).unwrap();
        let mask = Array2::from_elem(s.shape(), true);
        let outs: Vec<_> =
            patches.iter().map(|p| (p.clone(), Array3::from_elem((p.nrows, p.ncols, 2), 3.25))).collect();
        let f = stitch(&outs, &s, &[Var::T, Var::S], &mask, 0).unwrap();
        assert!(f.values.iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn half_overlapping_patches_blend_linearly() {
        let s = GridSpec::new((0.0, 10.0), (0.0, 30.0), 1.0, false).unwrap();
        let patches = partition_domain(&s, (10.0, 20.0), (0.0, 10.0)).unwrap();
        assert_eq!(patches.len(), 2);
        let (a, b) = (1.0, 5.0);
        let mask = Array2::from_elem(s.shape(), true);
        let outs = vec![
            (patches[0].clone(), Array3::from_elem((10, 20, 1), a)),
            (patches[1].clone(), Array3::from_elem((10, 20, 1), b)),
        ];
        let f = stitch(&outs, &s, &[Var::T], &mask, 0).unwrap();
        let row: Vec<f64> = (0..30).map(|j| f.values[[4, j, 0]]).collect();
        // closed form over the overlap [10, 20): weight of b is (lon - 10) / 10
        for (j, &v) in row.iter().enumerate() {
            let lon = j as f64 + 0.5;
            let t = ((lon - 10.0) / 10.0).clamp(0.0, 1.0);
            assert!((v - (a + t * (b - a))).abs() < 1e-12, "lon {lon}: {v}");
        }
        assert!(row.windows(2).all(|w| w[1] >= w[0]));
        let mid = (row[14] + row[15]) / 2.0;
        assert!((mid - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_patch_stitch_is_identity() {
        let s = GridSpec::new((0.0, 5.0), (0.0, 5.0), 0.5, false).unwrap();
        let p = partition_domain(&s, (5.0, 5.0), (0.0, 0.0)).unwrap();
        let vals = Array3::from_shape_fn((10, 10, 1), |(i, j, _)| (i * 31 + j) as f64 * 0.1);
        let mask = Array2::from_elem((10, 10), true);
        let f = stitch(&[(p[0].clone(), vals.clone())], &s, &[Var::Ssh], &mask, 0).unwrap();
        assert_eq!(f.values, vals);
    }

    #[test]
    fn stitch_order_independent() {
        let s = grid(28.0, 44.0);
        let patches = partition_domain(&s, (10.0, 20.0), (4.0, 8.0)).unwrap();
        let mask = Array2::from_elem(s.shape(), true);
        let outs: Vec<_> = patches
            .iter()
            .map(|p| (p.clone(), Array3::from_shape_fn((p.nrows, p.ncols, 1), |(r, c, _)| (p.id * 7 + r + c) as f64)))
            .collect();
        let mut rev = outs.clone();
        rev.reverse();
        let a = stitch(&outs, &s, &[Var::T], &mask, 0).unwrap();
        let b = stitch(&rev, &s, &[Var::T], &mask, 0).unwrap();
        assert_eq!(a.values, b.values);
    }

    proptest! {
        #[test]
        fn weights_partition_unity_and_exact_reproduction(
            cfg in prop::sample::select(vec![
                ((28.0, 44.0), (10.0, 20.0), (4.0, 8.0)),
                ((20.0, 50.0), (10.0, 20.0), (5.0, 5.0)),
                ((20.0, 40.0), (4.0, 8.0), (2.0, 4.0)),
                ((20.0, 40.0), (5.0, 10.0), (4.0, 9.0)),
                ((20.0, 40.0), (20.0, 10.0), (0.0, 5.0)),
            ]),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let (extent, patch, ov) = cfg;
            let s = grid(extent.0, extent.1);
            let patches = partition_domain(&s, patch, ov).unwrap();
            let w = blend_weights(&patches, &s).unwrap();
            let mut total = Array2::<f64>::zeros(s.shape());
            for (p, wp) in patches.iter().zip(&w) {
                for (n, (i, j)) in p.cells().enumerate() {
                    total[[i, j]] += wp[[n / p.ncols, n % p.ncols]];
                }
            }
            prop_assert!(total.iter().all(|&t| (t - 1.0).abs() < 1e-12));
            let truth = |i: usize, j: usize| (a * i as f64).sin() + b * j as f64;
            let mask = Array2::from_elem(s.shape(), true);
            let outs: Vec<_> = patches.iter().map(|p| {
                let mut v = Array3::zeros((p.nrows, p.ncols, 1));
                for (n, (i, j)) in p.cells().enumerate() {
                    v[[n / p.ncols, n % p.ncols, 0]] = truth(i, j);
                }
                (p.clone(), v)
            }).collect();
            let f = stitch(&outs, &s, &[Var::T], &mask, 0).unwrap();
            for ((i, j, _), v) in f.values.indexed_iter() {
                prop_assert!((v - truth(i, j)).abs() < 1e-12);
            }
        }
    }
}
