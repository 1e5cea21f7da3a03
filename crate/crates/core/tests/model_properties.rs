//! Set-function, locality and differentiability properties of the assimilation model.

use ndarray::{Array2, Axis};
use pointassim::geo::GridSpec;
use pointassim::model::{coord_rows, domain_anchors, encode_source, AssimModel, ModelConfig, NormStats, PatchInputs};
use pointassim::obs::{ObservationSet, SourceId, SourceSchema};
use pointassim::world::{World, WorldConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model<T: ndcore::Real>(schemas: Vec<SourceSchema>, d: usize, seed: u64) -> AssimModel<T> {
    let cfg = ModelConfig { latent_dim: d, encoder_width: 8, decoder_width: 12, ..ModelConfig::default() };
    let norm = NormStats::identity(&schemas);
    let spec = GridSpec::new((20.0, 60.0), (140.0, 220.0), 2.0, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = AssimModel::init(cfg, schemas, norm, domain_anchors(&spec, 4).unwrap(), &mut rng).unwrap();
    // the decoder starts at zero; give it a generic last layer
    let last = m.decoder.layers_mut().last_mut().unwrap();
    last.weight.mapv_inplace(|_| T::from_f64(rng.random_range(-0.3..0.3)));
    m
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, features: usize) -> Array2<f32> {
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(20.0..60.0), rng.random_range(140.0..220.0))).collect();
    let c = coord_rows::<f32>(&coords).unwrap();
    let v = Array2::from_shape_fn((n, features), |_| rng.random_range(-2.0f32..2.0));
    ndarray::concatenate![Axis(1), c, v]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn encoders_are_permutation_and_duplication_invariant(seed in 0u64..1000, n in 1usize..300, reps in 2usize..4) {
        let m = model::<f32>(SourceSchema::defaults(), 16, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let pts = random_points(&mut rng, n, 1);
        let enc = &m.source_encoders[0];
        let base = encode_source(enc, pts.view()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let perm = pts.select(Axis(0), &order);
        prop_assert_eq!(&encode_source(enc, perm.view()).unwrap(), &base);
        let dup_idx: Vec<usize> = (0..reps).flat_map(|_| order.iter().copied()).collect();
        let dup = pts.select(Axis(0), &dup_idx);
        prop_assert_eq!(&encode_source(enc, dup.view()).unwrap(), &base);
        prop_assert!(base.present);
    }
}

#[test]
fn patch_output_ignores_points_outside_the_patch() {
    let w = World::new(WorldConfig { days: 6, ..WorldConfig::default() }).unwrap();
    let m = model::<f32>(SourceSchema::defaults(), 16, 1);
    let bg = w.make_background(5, 3, &Default::default(), 1).unwrap();
    let patches = m.patches(&w.fine).unwrap();
    let p = &patches[7];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inside: Vec<(f64, f64)> =
        (0..20).map(|_| (rng.random_range(p.lat0..p.lat1), rng.random_range(p.lon0..p.lon1))).collect();
    let outside: Vec<(f64, f64)> = (0..40)
        .map(|_| (rng.random_range(20.0..60.0), rng.random_range(140.0..220.0)))
        .filter(|&(a, b)| !p.contains(a, b))
        .collect();
    let mk = |coords: Vec<(f64, f64)>, v: f64| ObservationSet {
        source: SourceId::Sst,
        day: 5,
        values: Array2::from_elem((coords.len(), 1), v),
        coords,
    };
    let a = mk(inside.clone(), 1.0);
    let mut both = inside.clone();
    both.extend(outside);
    let mut b = mk(both, 1.0);
    for r in inside.len()..b.len() {
        b.values[[r, 0]] = rng.random_range(-9.0..9.0);
    }
    let q = coord_rows::<f32>(&[(p.lat0 + 1.0, p.lon0 + 1.0), (p.lat1 - 0.5, p.lon1 - 0.5)]).unwrap();
    let ya = m.predict(&m.patch_inputs(&bg, &[&a], p).unwrap(), q.view()).unwrap();
    let yb = m.predict(&m.patch_inputs(&bg, &[&b], p).unwrap(), q.view()).unwrap();
    assert_eq!(ya, yb);
}

fn loss(m: &AssimModel<f64>, inputs: &PatchInputs<f64>, q: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let pred = m.predict(inputs, q.view()).unwrap();
    ndcore::masked_mse(pred.view(), target.view(), &vec![true; q.nrows()]).unwrap()
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let schemas = vec![SourceSchema::default_for(SourceId::Sst), SourceSchema::default_for(SourceId::Insitu)];
    let mut m = model::<f64>(schemas, 8, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let to64 = |a: Array2<f32>| a.mapv(|x| x as f64);
    let inputs = PatchInputs {
        background: to64(random_points(&mut rng, 10, 5)),
        sources: vec![to64(random_points(&mut rng, 10, 1)), to64(random_points(&mut rng, 10, 2))],
    };
    let coords: Vec<(f64, f64)> = (0..6).map(|_| (rng.random_range(20.0..60.0), rng.random_range(140.0..220.0))).collect();
    let q = coord_rows::<f64>(&coords).unwrap();
    let target = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));

    let trace = m.forward_trace(&inputs, q.view()).unwrap();
    let (_, up) = ndcore::masked_mse_grad(trace.output().view(), target.view(), &[true; 6]).unwrap();
    let grads = m.backward(&trace, up.view()).unwrap();
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();

    let h = 1e-6;
    let total = analytic.len();
    let mut worst = 0.0f64;
    for k in (0..total).step_by(7) {
        let get = |m: &mut AssimModel<f64>, delta: f64| {
            let mut left = k;
            for s in m.param_slices_mut() {
                if left < s.len() {
                    s[left] += delta;
                    return;
                }
                left -= s.len();
            }
        };
        get(&mut m, h);
        let up = loss(&m, &inputs, &q, &target);
        get(&mut m, -2.0 * h);
        let down = loss(&m, &inputs, &q, &target);
        get(&mut m, h);
        let fd = (up - down) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}
