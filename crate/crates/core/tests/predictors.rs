use lanesafe::baselines::{predict_constant_velocity, ConstantVelocityModel, FeedforwardParams};
use lanesafe::features::{encode_step, FeatureWindow, Neighbor, TrackPoint};
use lanesafe::predictor::TrajectoryPredictor;
use lanesafe::vehicle::LaneGeometry;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn straight_window(x0: f64, y0: f64, vx: f64, vy: f64, len: usize, dt: f64) -> (FeatureWindow, Vec<TrackPoint>) {
    let lanes = LaneGeometry::default();
    let v = vx.hypot(vy);
    let at = |k: usize| TrackPoint { x: x0 + vx * k as f64 * dt, y: y0 + vy * k as f64 * dt, v, a: 0.0 };
    let track: Vec<TrackPoint> = (0..len).map(at).collect();
    let others = [Neighbor { x: x0 + 30.0, y: y0, v: 20.0 }];
    let history = (0..len).map(|k| encode_step(&track[..=k], &others, &lanes, dt)).collect();
    let future = (len..len + 40).map(at).collect();
    (FeatureWindow { history, track, dt, lanes }, future)
}

proptest! {
    #[test]
    fn constant_velocity_exact_on_uniform_motion(
        x0 in -100.0f64..100.0,
        y0 in 0.0f64..7.0,
        vx in 0.0f64..35.0,
        vy in -1.0f64..1.0,
        len in 4usize..25,
        horizon in 1usize..40,
    ) {
        let (w, future) = straight_window(x0, y0, vx, vy, len, 0.1);
        let pred = predict_constant_velocity(&w, horizon).unwrap();
        prop_assert_eq!(pred.len(), horizon);
        for (p, t) in pred.iter().zip(&future) {
            prop_assert!((p.x - t.x).abs() <= 1e-9, "x {} vs {}", p.x, t.x);
            prop_assert!((p.y - t.y).abs() <= 1e-9, "y {} vs {}", p.y, t.y);
            prop_assert!((p.v - t.v).abs() <= 1e-9);
        }
        prop_assert_eq!(ConstantVelocityModel.predict(&w, horizon).unwrap(), pred);
    }

    #[test]
    fn feedforward_matches_matrix_products(seed in any::<u64>(), input in 1usize..12, h1 in 1usize..10, h2 in 1usize..10, out in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = FeedforwardParams::init(input, h1, h2, out, &mut rng);
        for (i, b) in p.b1.iter_mut().chain(p.b2.iter_mut()).chain(p.b3.iter_mut()).enumerate() {
            *b = ((i * 37 % 11) as f64 - 5.0) * 0.07;
        }
        let x: Vec<f64> = (0..input).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = |w: &lanesafe::matrix::Matrix| DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice());
        let a1 = (m(&p.w1) * DVector::from_vec(x.clone()) + DVector::from_vec(p.b1.clone())).map(f64::tanh);
        let a2 = (m(&p.w2) * a1 + DVector::from_vec(p.b2.clone())).map(f64::tanh);
        let y = m(&p.w3) * a2 + DVector::from_vec(p.b3.clone());
        let got = p.forward(&x);
        prop_assert_eq!(got.len(), out);
        for (g, w) in got.iter().zip(y.iter()) {
            prop_assert!((g - w).abs() <= 1e-12);
        }
    }
}

#[test]
fn constant_velocity_rejects_bad_input() {
    let (w, _) = straight_window(0.0, 3.5, 20.0, 0.0, 5, 0.1);
    assert!(predict_constant_velocity(&w, 0).is_err());
    let empty = FeatureWindow { history: vec![], track: vec![], dt: 0.1, lanes: LaneGeometry::default() };
    assert!(predict_constant_velocity(&empty, 5).is_err());
}
