//! Monte-Carlo checks of the observation simulators and perturbation operator.

use ndarray::Array2;
use pointassim::obs::{perturb_observations, simulate_source, sla_reference, ObsContext, ObservationSet, SourceId, SourceSchema};
use pointassim::world::{World, WorldConfig};

#[test]
fn perturbation_noise_has_requested_moments() {
    let n = 100_000;
    let base = ObservationSet {
        source: SourceId::Insitu,
        day: 0,
        coords: vec![(30.0, 150.0); n],
        values: Array2::from_elem((n, 2), 5.0),
    };
    let sigma = [0.3, 1.7];
    let p = perturb_observations(&base, &sigma, 99).unwrap();
    for (k, &s) in sigma.iter().enumerate() {
        let d: Vec<f64> = p.values.column(k).iter().map(|v| v - 5.0).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * s / (n as f64).sqrt(), "channel {k} mean {mean}");
        assert!((sd / s - 1.0).abs() < 0.02, "channel {k} std {sd}");
    }
    assert_eq!(p, perturb_observations(&base, &sigma, 99).unwrap());
}

#[test]
fn simulated_noise_matches_schema() {
    let w = World::new(WorldConfig { days: 12, ..WorldConfig::default() }).unwrap();
    let truth = w.truth_state(5).unwrap();
    let ctx = ObsContext { sla_reference: sla_reference((0..3).map(|d| w.truth_state(d))).unwrap(), season_period: 360.0 };
    let noisy = SourceSchema::default_for(SourceId::Sst);
    let clean = SourceSchema { noise_std: vec![0.0], ..noisy.clone() };
    let a = simulate_source(&truth, &noisy, &ctx, 5, 3).unwrap();
    let b = simulate_source(&truth, &clean, &ctx, 5, 3).unwrap();
    assert_eq!(a.coords, b.coords);
    let d: Vec<f64> = a.values.iter().zip(b.values.iter()).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    assert!(n > 1000.0);
    let sd = (d.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    assert!((sd / 0.2 - 1.0).abs() < 5.0 / n.sqrt(), "std {sd} over {n} points");
}

#[test]
fn sst_swaths_cover_the_ocean_within_a_month() {
    let w = World::new(WorldConfig { days: 31, ..WorldConfig::default() }).unwrap();
    let ctx = ObsContext { sla_reference: sla_reference((0..2).map(|d| w.truth_state(d))).unwrap(), season_period: 360.0 };
    let schema = SourceSchema::default_for(SourceId::Sst);
    let mut hit = Array2::from_elem(w.fine.shape(), false);
    for day in 0..30 {
        let truth = w.truth_state(day).unwrap();
        for &(lat, lon) in &simulate_source(&truth, &schema, &ctx, day, 1).unwrap().coords {
            let (i, j) = w.fine.cell_of(lat, lon).unwrap();
            hit[[i, j]] = true;
        }
    }
    let ocean = w.fine_mask.iter().filter(|&&m| m).count();
    let covered = hit.iter().zip(w.fine_mask.iter()).filter(|(h, m)| **h && **m).count();
    assert!(covered as f64 > 0.9 * ocean as f64, "{covered} of {ocean}");
}
