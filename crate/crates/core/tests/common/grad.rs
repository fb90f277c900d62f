use finemotion::netspec::{build, FrameBatch, Geometry, ModelKind, Network, Scope};
use finemotion::tensor::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout, dropout_backward, finite_diff_check,
    finite_diff_check_coords, gru_backward, gru_forward, maxpool2d_backward, maxpool2d_forward, Activation, Mode,
    ParamStore, Tensor, FD_STEP, GRAPH_FD_STEP,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOL: f64 = 1e-6;
pub const RECURRENT_TOL: f64 = 1e-4;

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn concat(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().to_vec()).collect()
}

fn split(flat: &[f64], like: &[&Tensor]) -> Vec<Tensor> {
    let mut pos = 0;
    like.iter()
        .map(|t| {
            let out = Tensor::new(t.shape().to_vec(), flat[pos..pos + t.len()].to_vec()).unwrap();
            pos += t.len();
            out
        })
        .collect()
}

/// Checks an op `f(tensors) -> output` against its reverse pass on the
/// scalar `Σ w ⊙ output`.
fn check_op(
    tensors: &[&Tensor],
    w: &Tensor,
    analytic: Vec<f64>,
    f: impl Fn(&[Tensor]) -> Tensor,
) -> f64 {
    let point = concat(tensors);
    finite_diff_check(&point, &analytic, FD_STEP, |x| dot(&f(&split(x, tensors)), w))
}

pub fn dense_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = [Activation::Linear, Activation::Tanh, Activation::Sigmoid][seed as usize % 3];
    let (x, wt, b) = (random(&[3, 6], 1.0, &mut rng), random(&[6, 4], 0.5, &mut rng), random(&[4], 0.5, &mut rng));
    let (y, cache) = dense_forward(&x, &wt, &b, act).unwrap();
    let w = random(y.shape(), 1.0, &mut rng);
    let g = dense_backward(&cache, &wt, &w).unwrap();
    let analytic = concat(&[&g.inputs[0], &g.params[0], &g.params[1]]);
    check_op(&[&x, &wt, &b], &w, analytic, |t| dense_forward(&t[0], &t[1], &t[2], act).unwrap().0)
}

pub fn conv_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = [Activation::Linear, Activation::Tanh, Activation::Sigmoid][seed as usize % 3];
    let x = random(&[2, 5, 4, 2], 1.0, &mut rng);
    let (wt, b) = (random(&[3, 3, 2, 3], 0.4, &mut rng), random(&[3], 0.3, &mut rng));
    let (y, cache) = conv2d_forward(&x, &wt, &b, act).unwrap();
    let w = random(y.shape(), 1.0, &mut rng);
    let g = conv2d_backward(&cache, &wt, &w).unwrap();
    let analytic = concat(&[&g.inputs[0], &g.params[0], &g.params[1]]);
    check_op(&[&x, &wt, &b], &w, analytic, |t| conv2d_forward(&t[0], &t[1], &t[2], act).unwrap().0)
}

pub fn pool_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // distinct values spaced well beyond the probe step, so no window ties
    let mut order: Vec<usize> = (0..2 * 6 * 5 * 2).collect();
    order.shuffle(&mut rng);
    let x = Tensor::new(vec![2, 6, 5, 2], order.iter().map(|&i| i as f64 * 0.01).collect()).unwrap();
    let (y, cache) = maxpool2d_forward(&x, 2).unwrap();
    let w = random(y.shape(), 1.0, &mut rng);
    let g = maxpool2d_backward(&cache, &w).unwrap();
    check_op(&[&x], &w, g.inputs[0].data().to_vec(), |t| maxpool2d_forward(&t[0], 2).unwrap().0)
}

pub fn dropout_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[4, 5], 1.0, &mut rng);
    let (y, mask) = dropout(&x, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let w = random(y.shape(), 1.0, &mut rng);
    let g = dropout_backward(&mask, &w).unwrap();
    check_op(&[&x], &w, g.inputs[0].data().to_vec(), |t| {
        dropout(&t[0], 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().0
    })
}

pub fn gru_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = [Activation::Tanh, Activation::Relu, Activation::Linear][seed as usize % 3];
    let (d, h) = (3, 4);
    let x = random(&[2, 3, d], 1.0, &mut rng);
    let wi = random(&[d, 3 * h], 0.5, &mut rng);
    let wr = random(&[h, 3 * h], 0.5, &mut rng);
    let bi = random(&[3 * h], 0.3, &mut rng);
    let br = random(&[3 * h], 0.3, &mut rng);
    let run = |t: &[Tensor]| {
        let weights = finemotion::tensor::GruWeights { w_input: &t[1], w_recurrent: &t[2], b_input: &t[3], b_recurrent: &t[4] };
        gru_forward(&t[0], weights, act).unwrap()
    };
    let all = [x.clone(), wi.clone(), wr.clone(), bi.clone(), br.clone()];
    let (y, cache) = run(&all);
    let w = random(y.shape(), 1.0, &mut rng);
    let weights = finemotion::tensor::GruWeights { w_input: &wi, w_recurrent: &wr, b_input: &bi, b_recurrent: &br };
    let g = gru_backward(&cache, weights, &w).unwrap();
    let mut analytic = g.inputs[0].data().to_vec();
    for p in &g.params {
        analytic.extend_from_slice(p.data());
    }
    check_op(&[&x, &wi, &wr, &bi, &br], &w, analytic, |t| run(t).0)
}

fn flat(store: &ParamStore) -> Vec<f64> {
    store.ids().flat_map(|id| store.get(id).data().to_vec()).collect()
}

fn unflat(store: &mut ParamStore, values: &[f64]) {
    let mut pos = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get(id);
        let (shape, n) = (t.shape().to_vec(), t.len());
        store.set(id, Tensor::new(shape, values[pos..pos + n].to_vec()).unwrap()).unwrap();
        pos += n;
    }
}

/// Whole CBMF graph (k = 2, side 32, width 1/8) on three sampled coordinates
/// of every parameter tensor.
pub fn cbmf_graph_error(seed: u64) -> f64 {
    let spec = build(ModelKind::Cbmf, Geometry::new(2, 32, 8)).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(&spec, &mut store, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get(id).clone();
        if t.rank() == 1 {
            store.set(id, Tensor::from_fn(t.shape(), |_| rng.gen_range(-0.1..0.1))).unwrap();
        }
    }
    let batch = FrameBatch {
        frames: Tensor::from_fn(&[3, 32, 32, 1], |_| rng.gen_range(0.0..1.0)),
        windows: vec![vec![0, 1], vec![1, 2]],
    };
    let dropout_seed = rng.gen::<u64>();
    let run = |s: &ParamStore| {
        net.forward(s, &batch, Mode::Train, Scope::Full, &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap()
    };
    let (out, tape) = run(&store);
    let (p, c) = (out.press.unwrap(), out.configs.unwrap());
    let wp = random(p.shape(), 1.0, &mut rng);
    let wc = random(c.shape(), 1.0, &mut rng);
    let grads = net.backward(&store, &tape, Some(&wp), Some(&wc)).unwrap();
    let analytic: Vec<f64> = grads.0.iter().flat_map(|g| g.data().to_vec()).collect();
    let mut coords = Vec::new();
    let mut pos = 0;
    for id in store.ids() {
        let n = store.get(id).len();
        for _ in 0..3 {
            coords.push(pos + rng.gen_range(0..n));
        }
        pos += n;
    }
    let point = flat(&store);
    let mut probe = store.clone();
    let mut objective = |x: &[f64]| {
        unflat(&mut probe, x);
        let (o, _) = run(&probe);
        dot(o.press.as_ref().unwrap(), &wp) + dot(o.configs.as_ref().unwrap(), &wc)
    };
    // a ReLU or pool kink inside one probe interval spoils that step only
    coords
        .iter()
        .map(|&i| {
            [GRAPH_FD_STEP, GRAPH_FD_STEP / 10.0]
                .iter()
                .map(|&h| finite_diff_check_coords(&point, &analytic, &[i], h, &mut objective))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// `(name, worst error over seeds, tolerance)` for every operator and the
/// whole graph.
pub fn suite(seeds: u64) -> Vec<(&'static str, f64, f64)> {
    let worst = |f: fn(u64) -> f64| (0..seeds).map(f).fold(0.0, f64::max);
    vec![
        ("dense", worst(dense_error), OP_TOL),
        ("conv2d", worst(conv_error), OP_TOL),
        ("maxpool2d", worst(pool_error), OP_TOL),
        ("dropout", worst(dropout_error), OP_TOL),
        ("gru", worst(gru_error), RECURRENT_TOL),
        ("cbmf graph", worst(cbmf_graph_error), RECURRENT_TOL),
    ]
}
