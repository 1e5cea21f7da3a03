//! Finite-difference and Monte-Carlo checks of the synthetic world.

use pointassim::geo::{area_average, GridField, LandShape, M_PER_DEG};
use pointassim::world::{Eddy, ForecastParams, World, WorldConfig};

fn weighted_rmse(a: &GridField, b: &GridField, k: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((i, j), &ocean) in a.mask.indexed_iter() {
        if ocean {
            let w = a.spec.lat_center(i).to_radians().cos();
            num += w * (a.values[[i, j, k]] - b.values[[i, j, k]]).powi(2);
            den += w;
        }
    }
    (num / den).sqrt()
}

#[test]
fn geostrophic_velocity_matches_finite_differences() {
    let cfg = WorldConfig {
        lat_min: 30.0,
        lat_max: 40.0,
        lon_min: 170.0,
        lon_max: 190.0,
        fine_res: 0.05,
        n_eddies: 0,
        jet_amp: 0.0,
        seasonal_ssh: 0.0,
        seasonal_t: 0.0,
        drift: 0.0,
        days: 1,
        land: vec![LandShape::Rect { lat_min: 30.0, lat_max: 33.0, lon_min: 170.0, lon_max: 176.0 }],
        ..WorldConfig::default()
    };
    let w = World::new(cfg).unwrap().with_eddies(vec![Eddy { lat: 35.0, lon0: 180.0, amp: 0.25, radius: 1.5 }]);
    let f = w.truth_state(0).unwrap();
    let h = w.fine.res;
    let (nh, nw) = w.fine.shape();
    let (mut err, mut norm) = (0.0f64, 0.0f64);
    for i in 1..nh - 1 {
        let lat = w.fine.lat_center(i);
        let g = w.geo_gain(lat);
        for j in 1..nw - 1 {
            if !(w.fine_mask[[i - 1, j]] && w.fine_mask[[i + 1, j]] && w.fine_mask[[i, j - 1]] && w.fine_mask[[i, j + 1]]) {
                continue;
            }
            let deta_dy = (f.values[[i + 1, j, 4]] - f.values[[i - 1, j, 4]]) / (2.0 * h * M_PER_DEG);
            let deta_dx =
                (f.values[[i, j + 1, 4]] - f.values[[i, j - 1, 4]]) / (2.0 * h * M_PER_DEG * lat.to_radians().cos());
            let (u_fd, v_fd) = (-g * deta_dy, g * deta_dx);
            let (u, v) = (f.values[[i, j, 2]], f.values[[i, j, 3]]);
            err = err.max((u - u_fd).abs()).max((v - v_fd).abs());
            norm = norm.max(u.abs()).max(v.abs());
        }
    }
    assert!(norm > 0.05, "eddy too weak to test: {norm}");
    assert!(err / norm < 1e-3, "relative error {}", err / norm);
}

#[test]
fn forecast_error_grows_over_five_steps() {
    let w = World::new(WorldConfig::default()).unwrap();
    let fp = ForecastParams::default();
    let start = 40;
    let mut mean = vec![[0.0f64; 5]; 5];
    for s in 0..10u64 {
        let mut state = w.truth_state(start).unwrap();
        for step in 0..5 {
            state = w.forecast_step(&state, &fp, 1000 * s + step as u64).unwrap();
            let truth = w.truth_state(start + step as i64 + 1).unwrap();
            for k in 0..5 {
                mean[step][k] += weighted_rmse(&state, &truth, k) / 10.0;
            }
        }
    }
    for k in 0..5 {
        for step in 1..5 {
            assert!(mean[step][k] > mean[step - 1][k], "variable {k}: {:?}", mean.iter().map(|m| m[k]).collect::<Vec<_>>());
        }
    }
}

#[test]
fn longer_lead_backgrounds_are_worse() {
    let w = World::new(WorldConfig::default()).unwrap();
    let fp = ForecastParams::default();
    let (mut r1, mut r3) = ([0.0f64; 5], [0.0f64; 5]);
    for s in 0..10u64 {
        for day in (30..130).step_by(10) {
            let truth = area_average(&w.truth_state(day).unwrap(), &w.coarse, &w.coarse_mask).unwrap();
            let b1 = w.make_background(day, 1, &fp, s).unwrap();
            let b3 = w.make_background(day, 3, &fp, s).unwrap();
            for k in 0..5 {
                r1[k] += weighted_rmse(&b1, &truth, k);
                r3[k] += weighted_rmse(&b3, &truth, k);
            }
        }
    }
    for k in 0..5 {
        assert!(r3[k] > r1[k], "variable {k}: lead 3 {} vs lead 1 {}", r3[k], r1[k]);
    }
}
