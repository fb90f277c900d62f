use finemotion::datapipe::{align, load_dataset, press_vector_at, save_dataset, Dataset, Task};
use finemotion::kinematics::{angle_between, AnchorTable};
use finemotion::netspec::{build, count_params, Geometry, ModelKind};
use finemotion::synthlab::{
    gen_corpus, gen_motion_script, gen_session, joints_from_script, synth_dataset, CorpusSpec, SessionParams, SynthConfig,
};
use finemotion::tensor::{dropout, Mode};
use finemotion::tensor::{ParamStore, Tensor};
use finemotion::train::{loss_bce, loss_mse, Confusion, BCE_EPS};
use finemotion::netspec::Network;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-10.0..10.0f64).prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn small_corpus(seed: u64) -> CorpusSpec {
    CorpusSpec { subjects: 2, sessions_per_task: 1, duration: 3.0, side: 32, seed, ..CorpusSpec::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn angles_are_symmetric_scale_free_and_bounded(u in vec3(), v in vec3(), a in 0.01..100.0f64, b in 0.01..100.0f64) {
        let uv = angle_between(u, v).unwrap();
        prop_assert!((0.0..=std::f64::consts::PI).contains(&uv));
        prop_assert!((uv - angle_between(v, u).unwrap()).abs() < 1e-12);
        let scaled = angle_between(u.map(|x| x * a), v.map(|x| x * b)).unwrap();
        prop_assert!((uv - scaled).abs() < 1e-9);
    }

    #[test]
    fn losses_are_nonnegative(pred in prop::collection::vec(0.0..=1.0f64, 10), target in prop::collection::vec(0.0..=1.0f64, 10)) {
        let p = Tensor::new(vec![2, 5], pred.clone()).unwrap();
        let t = Tensor::new(vec![2, 5], target).unwrap();
        prop_assert!(loss_bce(&p, &t).unwrap() >= 0.0);
        prop_assert!(loss_mse(&p, &t).unwrap() >= 0.0);
        prop_assert_eq!(loss_mse(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn bce_vanishes_only_on_exact_binary_predictions(bits in prop::collection::vec(any::<bool>(), 10), off in 1e-3..0.5f64, at in 0usize..10) {
        let target: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
        let t = Tensor::new(vec![2, 5], target.clone()).unwrap();
        prop_assert!(loss_bce(&t, &t).unwrap() <= -(1.0 - BCE_EPS).ln() + 1e-12);
        let mut near = target;
        near[at] = (near[at] - off).abs();
        prop_assert!(loss_bce(&Tensor::new(vec![2, 5], near).unwrap(), &t).unwrap() > 1e-5);
    }

    #[test]
    fn rates_are_all_one_iff_no_errors(tp in 0u64..50, fp in 0u64..3, fn_ in 0u64..3, tn in 0u64..50) {
        let r = Confusion { tp, fp, fn_, tn }.rates();
        let perfect = r.as_array().iter().all(|&x| x == 1.0);
        prop_assert_eq!(perfect, fp == 0 && fn_ == 0 && tp > 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dropout_preserves_the_mean(rate in 0.05..0.9f64, seed in any::<u64>()) {
        let x = Tensor::filled(&[100_000], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, _) = dropout(&x, rate, Mode::Train, &mut rng).unwrap();
        let mean = y.sum() / y.len() as f64;
        // four standard errors of the Bernoulli mask mean, capped by the 1% tolerance
        let se = (rate / (1.0 - rate) / 1e5).sqrt();
        prop_assert!((mean - 1.0).abs() < (4.0 * se).max(0.01), "rate {rate}: mean {mean}");
        let (z, _) = dropout(&x, rate, Mode::Infer, &mut rng).unwrap();
        prop_assert_eq!(z.data(), x.data());
    }

    #[test]
    fn parameter_report_matches_allocated_values(kind in prop::sample::select(vec![ModelKind::Sf, ModelKind::Mf, ModelKind::Cbmf]), k in 2usize..6, divisor in prop::sample::select(vec![8usize, 16]), side in prop::sample::select(vec![32usize, 64])) {
        let spec = build(kind, Geometry::new(k, side, divisor)).unwrap();
        let mut store = ParamStore::new();
        Network::new(&spec, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(count_params(&spec).unwrap().total, store.total_values());
    }

    #[test]
    fn frame_features_follow_a_permutation(seed in any::<u64>()) {
        let spec = build(ModelKind::Mf, Geometry::new(4, 32, 16)).unwrap();
        let mut store = ParamStore::new();
        let net = Network::new(&spec, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let n = 5;
        let plane = 32 * 32;
        let frames = Tensor::from_fn(&[n, 32, 32, 1], |_| rng.gen());
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let permuted: Vec<f64> = order.iter().flat_map(|&i| frames.data()[i * plane..(i + 1) * plane].to_vec()).collect();
        let a = net.encode_frames(&store, &frames).unwrap();
        let b = net.encode_frames(&store, &Tensor::new(vec![n, 32, 32, 1], permuted).unwrap()).unwrap();
        let d = a.shape()[1];
        for (row, &i) in order.iter().enumerate() {
            prop_assert_eq!(&b.data()[row * d..(row + 1) * d], &a.data()[i * d..(i + 1) * d]);
        }
    }

    #[test]
    fn forward_passes_are_deterministic(seed in any::<u64>()) {
        let spec = build(ModelKind::Cbmf, Geometry::new(2, 32, 16)).unwrap();
        let mut store = ParamStore::new();
        let net = Network::new(&spec, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let images: Vec<Tensor> = (0..2).map(|_| Tensor::from_fn(&[32, 32], |_| rng.gen())).collect();
        let (x, y) = (net.predict_window(&store, &images).unwrap(), net.predict_window(&store, &images).unwrap());
        prop_assert_eq!(x.press.as_ref().unwrap().data(), y.press.as_ref().unwrap().data());
        prop_assert_eq!(x.configs.as_ref().unwrap().data(), y.configs.as_ref().unwrap().data());
    }

    #[test]
    fn labels_agree_with_recovered_events(seed in any::<u64>(), piano in any::<bool>()) {
        let task = if piano { Task::Piano } else { Task::Typing };
        let cfg = SynthConfig::default();
        let script = gen_motion_script(task, 8.0, seed, &cfg).unwrap();
        let traj = joints_from_script(&script, 20.0, seed ^ 3, &cfg).unwrap();
        for (t, p) in traj.times.iter().zip(&traj.press) {
            prop_assert_eq!(*p, press_vector_at(*t, &traj.events));
        }
    }

    #[test]
    fn alignment_is_monotone_under_marker_loss(seed in any::<u64>(), drop in 0.0..0.5f64) {
        let p = SessionParams { task: Task::Typing, subject: 0, subject_seed: seed, session_index: 0, duration: 3.0, frame_rate: 20.0, side: 32 };
        let mut session = gen_session(&p, &SynthConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = session.markers[0].clone();
        session.markers.retain(|_| rng.gen::<f64>() >= drop);
        if session.markers.is_empty() {
            session.markers.push(first);
        }
        let (aligned, report) = align(&session, 32, &AnchorTable::default()).unwrap();
        prop_assert!(report.marker_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(aligned.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(report.kept + report.dropped_unmatched + report.dropped_degenerate, session.images.len());
    }

    #[test]
    fn windows_stay_inside_one_session(seed in any::<u64>(), k in 1usize..10, stride in 1usize..4) {
        let data = synth_dataset(&small_corpus(seed), k, stride).unwrap();
        prop_assert!(!data.windows.is_empty());
        for &w in &data.windows {
            let s = &data.sessions[w.session];
            prop_assert!(w.start + k <= s.len());
            let sample = data.sample(w);
            prop_assert_eq!(&sample.session_id, &s.id);
            prop_assert_eq!(&sample.times[..], &s.times[w.start..w.start + k]);
            prop_assert_eq!(&sample.press[..], &s.press[w.start..w.start + k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn dataset_files_round_trip(seed in any::<u64>(), k in 1usize..6) {
        let data = synth_dataset(&small_corpus(seed), k, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fmd");
        save_dataset(&path, &data).unwrap();
        let back: Dataset = load_dataset(&path).unwrap();
        prop_assert_eq!(back.k, data.k);
        prop_assert_eq!(&back.windows, &data.windows);
        for (a, b) in data.sessions.iter().zip(&back.sessions) {
            prop_assert_eq!(&a.press, &b.press);
            prop_assert_eq!(&a.images, &b.images);
            for (x, y) in a.configs.iter().zip(&b.configs) {
                for (u, v) in x.iter().zip(y) {
                    prop_assert!((u - v).abs() <= f32::EPSILON as f64 * u.abs().max(1e-30));
                }
            }
        }
    }
}

/// Ridge regression from raw pixels to normalized joint angles, solved in
/// the dual so the system is frames × frames.
#[test]
fn pixels_linearly_predict_the_configuration() {
    use nalgebra::{DMatrix, DVector};

    let spec = CorpusSpec { subjects: 1, sessions_per_task: 2, tasks: vec![Task::Piano, Task::Typing], duration: 32.0, side: 64, seed: 5, ..CorpusSpec::default() };
    let sessions = gen_corpus(&spec).unwrap();
    let aligned: Vec<_> = sessions.iter().map(|s| align(s, 64, &AnchorTable::default()).unwrap().0).collect();
    let mut rows: Vec<(Vec<f64>, [f64; 17])> = Vec::new();
    for s in &aligned {
        for i in 0..s.len() {
            let mut x: Vec<f64> = s.image_f64(i).collect();
            x.push(1.0);
            rows.push((x, s.configs[i]));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.gen_range(0..=i));
    }
    let n_train = 2000;
    assert!(rows.len() >= n_train + 200, "{} frames", rows.len());
    let (train, test) = rows.split_at(n_train);
    let dim = train[0].0.len();
    let x = DMatrix::from_fn(n_train, dim, |i, j| train[i].0[j]);
    let mut gram = &x * x.transpose();
    for i in 0..n_train {
        gram[(i, i)] += 1e-2;
    }
    let chol = gram.cholesky().expect("ridge system is positive definite");
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..17 {
        let y = DVector::from_fn(n_train, |i, _| train[i].1[j]);
        let w = x.transpose() * chol.solve(&y);
        for (img, cfg) in test {
            let pred: f64 = img.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            total += (pred - cfg[j]).abs();
            count += 1;
        }
    }
    let mae = total / count as f64;
    assert!(mae < 0.1, "held-out MAE {mae}");
}
