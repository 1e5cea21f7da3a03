//! Contribution, sensitivity and resolution-impact protocols on a small world.

use std::sync::Arc;

use pointassim::analyze::{contribution_analysis, sensitivity_analysis, SensitivityConfig, SigmaMode};
use pointassim::dataset::{DayCache, DayProvider, SimDays};
use pointassim::eval::{mae, Climatology};
use pointassim::geo::LandShape;
use pointassim::io::{read_grid, write_grid};
use pointassim::model::{domain_anchors, AssimModel, ModelConfig};
use pointassim::obs::{sla_reference, ObsContext, SourceId, SourceSchema};
use pointassim::world::{ForecastParams, World, WorldConfig};
use pointassim::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn provider() -> DayCache<SimDays> {
    let cfg = WorldConfig {
        lat_min: 30.0,
        lat_max: 46.0,
        lon_min: 150.0,
        lon_max: 190.0,
        days: 12,
        land: vec![LandShape::Ellipse { lat: 40.0, lon: 170.0, r_lat: 3.0, r_lon: 5.0 }],
        ..WorldConfig::default()
    };
    let world = Arc::new(World::new(cfg).unwrap());
    let ctx = ObsContext { sla_reference: sla_reference((0..4).map(|d| world.truth_state(d))).unwrap(), season_period: 360.0 };
    DayCache::new(SimDays { world, schemas: SourceSchema::defaults(), forecast: ForecastParams::default(), lead: 3, seed: 3, ctx })
}

fn model(p: &DayCache<SimDays>) -> AssimModel {
    let schemas = SourceSchema::defaults();
    let norm = pointassim::train::fit_norm_stats(p, &schemas, (3, 8)).unwrap();
    let cfg = ModelConfig { latent_dim: 8, encoder_width: 8, decoder_width: 12, ..ModelConfig::default() };
    let coarse = &p.inner().world.coarse;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = AssimModel::init(cfg, schemas, norm, domain_anchors(coarse, 2).unwrap(), &mut rng).unwrap();
    let last = m.decoder.layers_mut().last_mut().unwrap();
    last.weight.mapv_inplace(|_| rng.random_range(-0.3f32..0.3));
    m
}

fn clim(p: &DayCache<SimDays>) -> Climatology {
    Climatology::fit((3, 8), 180, |d| p.inner().world.truth_state(d)).unwrap()
}

#[test]
fn zero_sigma_gives_zero_sensitivity_and_seeds_reproduce() {
    let p = provider();
    let m = model(&p);
    let c = clim(&p);
    let zero = SensitivityConfig { members: 4, sigma_scale: 0.0, ..SensitivityConfig::default() };
    let s0 = sensitivity_analysis(&m, &p, &c, 9, SourceId::Sst, &zero, 5).unwrap();
    assert!(s0.values.iter().all(|v| v.is_nan() || *v == 0.0));

    let cfg = SensitivityConfig { members: 6, ..SensitivityConfig::default() };
    let a = sensitivity_analysis(&m, &p, &c, 9, SourceId::Sst, &cfg, 5).unwrap();
    let b = sensitivity_analysis(&m, &p, &c, 9, SourceId::Sst, &cfg, 5).unwrap();
    assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.values.iter().all(|v| v.is_nan() || *v >= 0.0));
    assert!(a.domain_mean().iter().any(|&v| v > 0.0));

    let redrawn = SensitivityConfig { sigma_mode: SigmaMode::Redrawn, ..cfg.clone() };
    let r = sensitivity_analysis(&m, &p, &c, 9, SourceId::Sst, &redrawn, 5).unwrap();
    assert!(r.values.iter().all(|v| v.is_nan() || *v >= 0.0));

    let one = SensitivityConfig { members: 1, ..cfg };
    assert!(matches!(sensitivity_analysis(&m, &p, &c, 9, SourceId::Sst, &one, 5), Err(Error::Domain(_))));
}

#[test]
fn doubling_sigma_does_not_reduce_mean_sensitivity() {
    let p = provider();
    let m = model(&p);
    let c = clim(&p);
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..5 {
        for (scale, acc) in [(1.0, &mut small), (2.0, &mut large)] {
            let cfg = SensitivityConfig { members: 4, sigma_scale: scale, ..SensitivityConfig::default() };
            let s = sensitivity_analysis(&m, &p, &c, 9, SourceId::Insitu, &cfg, seed).unwrap();
            *acc += s.domain_mean().iter().sum::<f64>();
        }
    }
    assert!(large >= small, "{large} < {small}");
}

#[test]
fn contribution_table_recomputes_from_written_fields() {
    let p = provider();
    let m = model(&p);
    let dir = tempfile::tempdir().unwrap();
    let sources = [SourceId::Sst, SourceId::Sla];
    let table = contribution_analysis(&m, &p, &[9, 10], &sources, 0.2, |label, f| {
        write_grid(&dir.path().join(format!("{label}_{}.grid", f.day)), f)
    })
    .unwrap();
    assert!(!table.out_of_distribution);
    for (s, src) in [None, Some(0usize), Some(1)].into_iter().map(|s| (s, s.map(|i| sources[i].name()).unwrap_or("ALL"))) {
        let mut sums = [0.0; 5];
        for day in [9, 10] {
            let f = read_grid(&dir.path().join(format!("{src}_{day}.grid"))).unwrap();
            let truth = p.load(day).unwrap().truth;
            for (k, v) in mae(&f, &truth).unwrap().0.into_iter().enumerate() {
                sums[k] += v;
            }
        }
        for k in 0..5 {
            let stored = match s {
                None => table.mae_all[k],
                Some(i) => table.mae_without[i][k],
            };
            assert!((sums[k] / 2.0 - stored).abs() < 1e-12);
        }
    }
    for (i, row) in table.ratio.iter().enumerate() {
        for k in 0..5 {
            let r = (table.mae_without[i][k] - table.mae_all[k]) / table.mae_all[k];
            assert!((row[k].unwrap() - r).abs() < 1e-12);
        }
    }
    let ood = contribution_analysis(&m, &p, &[9], &[SourceId::Sic], 0.0, |_, _| Ok(())).unwrap();
    assert!(ood.out_of_distribution);
}

#[test]
fn a_source_the_model_cannot_see_contributes_nothing() {
    let p = provider();
    let mut m = model(&p);
    let j = m.source_index(SourceId::Sss).unwrap();
    m.source_encoders[j].layers_mut().iter_mut().for_each(|l| {
        l.weight.fill(0.0);
        l.bias.fill(0.0);
    });
    // a zero latent with a raised flag still differs from an absent one through
    // the flag input, so also silence the decoder columns fed by this source
    let d = m.config.latent_dim;
    let start = 4 + (d + 1) * (j + 1);
    let first = &mut m.decoder.layers_mut()[0];
    for c in start..start + d + 1 {
        first.weight.column_mut(c).fill(0.0);
    }
    let t = contribution_analysis(&m, &p, &[9], &[SourceId::Sss], 0.2, |_, _| Ok(())).unwrap();
    assert!(t.ratio[0].iter().all(|r| *r == Some(0.0)), "{:?}", t.ratio);
}
