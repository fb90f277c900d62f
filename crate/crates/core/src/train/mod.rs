//! Training loops, evaluation, cross-validation, ablations and replay.

pub mod checkpoint;
pub mod loss;
pub mod metrics;
pub mod replay;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{split_folds, Dataset, FoldPlan, Task, WindowRef};
use crate::error::{Error, Result};
use crate::kinematics::JOINT_COUNT;
use crate::netspec::{build, FrameBatch, Geometry, LayerSpec, ModelKind, ModelSpec, Network, Scope, CONFIG_WIDTH, FINGERS};
use crate::tensor::{adam_step, AdamConfig, Mode, ParamStore, Tensor};

pub use loss::{combined_loss, loss_bce, loss_bce_grad, loss_mse, loss_mse_grad, BCE_EPS};
pub use metrics::{mean_std, median, spearman, Confusion, PressTally, Rates, DECISION_THRESHOLD};

/// Windows per inference call.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub k: usize,
    pub image_side: usize,
    pub width_divisor: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Encoder-only epochs of CBMF training; 0 trains both losses jointly
    /// from the start.
    pub phase1_epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
    pub fold: usize,
    pub folds: usize,
    pub dataset: Option<String>,
    /// Consecutive windows drawn from one session per batch entry group;
    /// they share their frames in the convolutional stage.
    pub windows_per_clip: usize,
    /// Cap on optimizer steps per epoch (0 = one pass over all windows).
    pub batches_per_epoch: usize,
    /// Cap on windows scored for the per-epoch test curve (0 = all).
    pub eval_windows: usize,
    /// Restrict training and evaluation to one task.
    pub task: Option<Task>,
    /// Overrides the rate of every dropout layer of the architecture.
    pub dropout: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Cbmf,
            k: 8,
            image_side: 224,
            width_divisor: 1,
            batch_size: 32,
            epochs: 20,
            phase1_epochs: 10,
            learning_rate: 1e-3,
            lambda: 4.0,
            seed: 0,
            fold: 0,
            folds: 5,
            dataset: None,
            windows_per_clip: 8,
            batches_per_epoch: 0,
            eval_windows: 0,
            task: None,
            dropout: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda = {} must be finite and nonnegative", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.windows_per_clip == 0 || self.folds == 0 {
            return Err(Error::invalid("epochs, batch_size, windows_per_clip and folds must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning_rate = {} must be finite and nonnegative", self.learning_rate)));
        }
        if self.model == ModelKind::Cbmf && self.phase1_epochs >= self.epochs {
            return Err(Error::invalid(format!(
                "phase1_epochs = {} leaves no joint epochs out of {}",
                self.phase1_epochs, self.epochs
            )));
        }
        if let Some(r) = self.dropout {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("dropout = {r} outside [0, 1)")));
            }
        }
        if self.fold >= self.folds {
            return Err(Error::invalid(format!("fold {} out of range for {} folds", self.fold, self.folds)));
        }
        Ok(())
    }

    /// Frames per window the model consumes.
    pub fn window_len(&self) -> usize {
        if self.model == ModelKind::Sf {
            1
        } else {
            self.k
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.k, self.image_side, self.width_divisor)
    }

    /// The architecture this configuration trains, with any dropout override applied.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = build(self.model, self.geometry())?;
        if let Some(rate) = self.dropout {
            for layer in spec.encoder.iter_mut().chain(spec.decoder.iter_mut().flatten()) {
                if let LayerSpec::Dropout { rate: r } = layer {
                    *r = rate;
                }
            }
        }
        Ok(spec)
    }
}

/// Losses after one epoch. `None` where the quantity is not defined for
/// the model or phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub train_bce: Option<f64>,
    pub train_mse: Option<f64>,
    pub test_bce: Option<f64>,
    pub test_mse: Option<f64>,
}

/// Checksums taken around the CBMF phase boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseProbe {
    pub encoder_after_phase1: u64,
    pub encoder_at_phase2: u64,
    pub decoder_after_phase1: u64,
    pub decoder_at_phase2: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub store: ParamStore,
    pub curves: Vec<EpochRecord>,
    pub probe: Option<PhaseProbe>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Objective {
    Press,
    Configs,
    Joint(f64),
}

/// One group of consecutive windows from a single session.
#[derive(Clone, Debug)]
struct Clip {
    session: usize,
    starts: Vec<usize>,
}

fn make_clips(windows: &[WindowRef], per_clip: usize) -> Vec<Clip> {
    let mut by_session: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for w in windows {
        by_session.entry(w.session).or_default().push(w.start);
    }
    let mut clips = Vec::new();
    for (session, mut starts) in by_session {
        starts.sort_unstable();
        for chunk in starts.chunks(per_clip) {
            clips.push(Clip { session, starts: chunk.to_vec() });
        }
    }
    clips
}

struct Batch {
    frames: FrameBatch,
    press: Tensor,
    configs: Tensor,
}

fn assemble(data: &Dataset, clips: &[Clip], k: usize, model: ModelKind) -> Result<Batch> {
    let side = data.side;
    let plane = side * side;
    let mut pixels = Vec::new();
    let mut windows = Vec::new();
    let mut press = Vec::new();
    let mut configs = Vec::new();
    let mut frame_count = 0;
    for clip in clips {
        let s = &data.sessions[clip.session];
        let first = clip.starts[0];
        let last = *clip.starts.last().expect("nonempty clip") + k;
        for i in first..last {
            pixels.extend(s.image_f64(i));
        }
        for &start in &clip.starts {
            windows.push((start..start + k).map(|i| frame_count + i - first).collect::<Vec<_>>());
            for i in start..start + k {
                press.extend(s.press[i].iter().map(|&b| f64::from(b)));
                configs.extend_from_slice(&s.configs[i]);
            }
        }
        frame_count += last - first;
    }
    let b = windows.len();
    debug_assert_eq!(pixels.len(), frame_count * plane);
    let press_shape = if model == ModelKind::Sf { vec![b, FINGERS] } else { vec![b, k, FINGERS] };
    Ok(Batch {
        frames: FrameBatch {
            frames: Tensor::new(vec![frame_count, side, side, 1], pixels)?,
            windows,
        },
        press: Tensor::new(press_shape, press)?,
        configs: Tensor::new(vec![b, k, CONFIG_WIDTH], configs)?,
    })
}

/// Evenly spaced subset of at most `cap` windows (all when `cap` is 0).
fn subsample(windows: &[WindowRef], cap: usize) -> Vec<WindowRef> {
    if cap == 0 || windows.len() <= cap {
        return windows.to_vec();
    }
    (0..cap).map(|i| windows[i * windows.len() / cap]).collect()
}

fn check_dataset(cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    if data.k != cfg.window_len() {
        return Err(Error::invalid(format!(
            "dataset windows have length {}, {} with k={} needs {}",
            data.k,
            cfg.model.label(),
            cfg.k,
            cfg.window_len()
        )));
    }
    if data.side != cfg.image_side {
        return Err(Error::invalid(format!("dataset side {} differs from image_side {}", data.side, cfg.image_side)));
    }
    Ok(())
}

/// Recuts `base` to the window length `cfg` needs (stride 1), or clones it
/// when it already matches.
pub fn prepare_dataset(cfg: &TrainConfig, base: &Dataset) -> Result<Dataset> {
    if base.k == cfg.window_len() {
        Ok(base.clone())
    } else {
        base.rewindow(cfg.window_len(), 1)
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    train: Vec<WindowRef>,
    test: Vec<WindowRef>,
    network: Network,
    store: ParamStore,
    init_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    curves: Vec<EpochRecord>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig, data: &'a Dataset, train_ids: &[String], test_ids: &[String]) -> Result<Self> {
        cfg.validate()?;
        check_dataset(cfg, data)?;
        let train = data.windows_of(train_ids);
        if train.is_empty() {
            return Err(Error::Empty("training windows".into()));
        }
        let test = subsample(&data.windows_of(test_ids), cfg.eval_windows);
        let spec = cfg.model_spec()?;
        let mut store = ParamStore::new();
        let mut init_rng = stream(cfg.seed, 0);
        let network = Network::new(&spec, &mut store, &mut init_rng)?;
        Ok(Self {
            cfg,
            data,
            train,
            test,
            network,
            store,
            init_rng,
            shuffle_rng: stream(cfg.seed, 1),
            dropout_rng: stream(cfg.seed, 2),
            curves: Vec::new(),
        })
    }

    fn step(&mut self, batch: &Batch, objective: Objective, adam: &AdamConfig) -> Result<(Option<f64>, Option<f64>)> {
        let scope = if objective == Objective::Configs { Scope::Encoder } else { Scope::Full };
        let (out, tape) = self.network.forward(&self.store, &batch.frames, Mode::Train, scope, &mut self.dropout_rng)?;
        let mut bce = None;
        let mut mse = None;
        let mut d_press = None;
        let mut d_configs = None;
        if matches!(objective, Objective::Press | Objective::Joint(_)) {
            let p = out.press.as_ref().ok_or_else(|| Error::invalid("model produced no press output"))?;
            bce = Some(loss_bce(p, &batch.press)?);
            d_press = Some(loss_bce_grad(p, &batch.press)?);
        }
        if let Some(c) = out.configs.as_ref() {
            mse = Some(loss_mse(c, &batch.configs)?);
            match objective {
                Objective::Configs => d_configs = Some(loss_mse_grad(c, &batch.configs)?),
                Objective::Joint(lambda) if lambda > 0.0 => {
                    let mut g = loss_mse_grad(c, &batch.configs)?;
                    g.scale(lambda);
                    d_configs = Some(g);
                }
                _ => {}
            }
        }
        let grads = self.network.backward(&self.store, &tape, d_press.as_ref(), d_configs.as_ref())?;
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        adam_step(&mut self.store, &grads, adam)?;
        Ok((bce, mse))
    }

    fn run(&mut self, objective: Objective, epochs: usize, phase: u8) -> Result<()> {
        let adam = AdamConfig::with_learning_rate(self.cfg.learning_rate);
        let k = self.cfg.window_len();
        let per_clip = self.cfg.windows_per_clip.min(self.cfg.batch_size);
        let clips_per_batch = self.cfg.batch_size.div_ceil(per_clip);
        let mut clips = make_clips(&self.train, per_clip);
        for _ in 0..epochs {
            clips.shuffle(&mut self.shuffle_rng);
            let mut batches: Vec<&[Clip]> = clips.chunks(clips_per_batch).collect();
            if self.cfg.batches_per_epoch > 0 {
                batches.truncate(self.cfg.batches_per_epoch);
            }
            let (mut bce_sum, mut mse_sum, mut n) = (0.0, 0.0, 0usize);
            let mut has = (false, false);
            for group in batches {
                let group = group.to_vec();
                let batch = assemble(self.data, &group, k, self.cfg.model)?;
                let (bce, mse) = self.step(&batch, objective, &adam)?;
                if let Some(b) = bce {
                    bce_sum += b;
                    has.0 = true;
                }
                if let Some(m) = mse {
                    mse_sum += m;
                    has.1 = true;
                }
                n += 1;
            }
            let scope = if objective == Objective::Configs { Scope::Encoder } else { Scope::Full };
            let test = if self.test.is_empty() {
                TestLosses::default()
            } else {
                let preds = predict(&self.network, &self.store, self.data, &self.test, scope)?;
                test_losses(self.data, &preds)?
            };
            self.curves.push(EpochRecord {
                epoch: self.curves.len() + 1,
                phase,
                train_bce: has.0.then(|| bce_sum / n as f64),
                train_mse: has.1.then(|| mse_sum / n as f64),
                test_bce: test.bce,
                test_mse: test.mse,
            });
        }
        Ok(())
    }

    fn encoder_checksum(&self) -> u64 {
        self.store.checksum(self.network.encoder_params().iter().copied())
    }

    fn decoder_checksum(&self) -> u64 {
        self.store.checksum(self.network.decoder_params().iter().copied())
    }

    fn finish(self, probe: Option<PhaseProbe>) -> TrainOutcome {
        TrainOutcome {
            network: self.network,
            store: self.store,
            curves: self.curves,
            probe,
        }
    }
}

/// Trains an SF or MF model on the press loss alone.
pub fn train_mf(cfg: &TrainConfig, data: &Dataset, train_ids: &[String], test_ids: &[String]) -> Result<TrainOutcome> {
    if cfg.model == ModelKind::Cbmf {
        return Err(Error::invalid("train_mf expects an SF or MF configuration"));
    }
    let mut t = Trainer::new(cfg, data, train_ids, test_ids)?;
    t.run(Objective::Press, cfg.epochs, 0)?;
    Ok(t.finish(None))
}

/// CBMF training: encoder-only configuration regression, then a fresh
/// decoder trained jointly with the warm encoder on `λ·mse + bce`.
pub fn train_cbmf_two_phase(
    cfg: &TrainConfig,
    data: &Dataset,
    train_ids: &[String],
    test_ids: &[String],
) -> Result<TrainOutcome> {
    let mut t = phase_one(cfg, data, train_ids, test_ids)?;
    let probe = phase_two(&mut t, cfg.lambda)?;
    Ok(t.finish(probe))
}

fn phase_one<'a>(
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    train_ids: &[String],
    test_ids: &[String],
) -> Result<Trainer<'a>> {
    if cfg.model != ModelKind::Cbmf {
        return Err(Error::invalid("two-phase training expects a CBMF configuration"));
    }
    let mut t = Trainer::new(cfg, data, train_ids, test_ids)?;
    t.run(Objective::Configs, cfg.phase1_epochs, 1)?;
    Ok(t)
}

fn phase_two(t: &mut Trainer<'_>, lambda: f64) -> Result<Option<PhaseProbe>> {
    let probe = if t.cfg.phase1_epochs > 0 {
        let encoder_after_phase1 = t.encoder_checksum();
        let decoder_after_phase1 = t.decoder_checksum();
        t.network.reinit_decoder(&mut t.store, &mut t.init_rng)?;
        Some(PhaseProbe {
            encoder_after_phase1,
            encoder_at_phase2: t.encoder_checksum(),
            decoder_after_phase1,
            decoder_at_phase2: t.decoder_checksum(),
        })
    } else {
        None
    };
    let epochs = t.cfg.epochs - t.cfg.phase1_epochs;
    t.run(Objective::Joint(lambda), epochs, 2)?;
    Ok(probe)
}

/// Dispatches on `cfg.model`.
pub fn train(cfg: &TrainConfig, data: &Dataset, train_ids: &[String], test_ids: &[String]) -> Result<TrainOutcome> {
    match cfg.model {
        ModelKind::Cbmf => train_cbmf_two_phase(cfg, data, train_ids, test_ids),
        _ => train_mf(cfg, data, train_ids, test_ids),
    }
}

/// Model output for one window: one row per frame (a single row for SF).
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPrediction {
    pub window: WindowRef,
    pub press: Vec<[f64; FINGERS]>,
    pub configs: Option<Vec<[f64; CONFIG_WIDTH]>>,
}

fn rows<const W: usize>(t: &Tensor) -> Vec<[f64; W]> {
    t.data().chunks_exact(W).map(|c| c.try_into().expect("row width")).collect()
}

fn predict_session(
    network: &Network,
    store: &ParamStore,
    data: &Dataset,
    session: usize,
    windows: &[WindowRef],
    scope: Scope,
) -> Result<Vec<WindowPrediction>> {
    let k = data.k;
    let s = &data.sessions[session];
    let mut needed: Vec<usize> = windows.iter().flat_map(|w| w.start..w.start + k).collect();
    needed.sort_unstable();
    needed.dedup();
    let slot: BTreeMap<usize, usize> = needed.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    let mut pixels = Vec::with_capacity(needed.len() * data.side * data.side);
    for &i in &needed {
        pixels.extend(s.image_f64(i));
    }
    let frames = Tensor::new(vec![needed.len(), data.side, data.side, 1], pixels)?;
    let feats = network.encode_frames(store, &frames)?;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_CHUNK) {
        let idx: Vec<Vec<usize>> = chunk.iter().map(|w| (w.start..w.start + k).map(|i| slot[&i]).collect()).collect();
        let fo = network.infer_features(store, &feats, &idx, scope)?;
        let press = fo.press.as_ref().map(rows::<FINGERS>);
        let configs = fo.configs.as_ref().map(rows::<CONFIG_WIDTH>);
        let per = press.as_ref().map_or(k, |p| p.len() / chunk.len());
        for (j, &w) in chunk.iter().enumerate() {
            out.push(WindowPrediction {
                window: w,
                press: press.as_ref().map_or_else(Vec::new, |p| p[j * per..(j + 1) * per].to_vec()),
                configs: configs.as_ref().map(|c| c[j * k..(j + 1) * k].to_vec()),
            });
        }
    }
    Ok(out)
}

/// Scores `windows` in inference mode. Sessions run in parallel; the result
/// keeps the input order.
pub fn predict(
    network: &Network,
    store: &ParamStore,
    data: &Dataset,
    windows: &[WindowRef],
    scope: Scope,
) -> Result<Vec<WindowPrediction>> {
    let mut by_session: BTreeMap<usize, Vec<WindowRef>> = BTreeMap::new();
    for w in windows {
        by_session.entry(w.session).or_default().push(*w);
    }
    let groups: Vec<(usize, Vec<WindowRef>)> = by_session.into_iter().collect();
    let parts = groups
        .par_iter()
        .map(|(s, ws)| predict_session(network, store, data, *s, ws, scope))
        .collect::<Result<Vec<_>>>()?;
    let mut lookup: BTreeMap<WindowRef, WindowPrediction> = BTreeMap::new();
    for p in parts.into_iter().flatten() {
        lookup.insert(p.window, p);
    }
    Ok(windows.iter().map(|w| lookup[w].clone()).collect())
}

/// One press-probability row per frame of session `session`. Frame `t`
/// takes the last position of the window ending at `t`; the first `k - 1`
/// frames read from the first window.
pub fn session_probabilities(
    network: &Network,
    store: &ParamStore,
    data: &Dataset,
    session: usize,
) -> Result<Vec<[f64; FINGERS]>> {
    let k = data.k;
    let n = data.sessions[session].len();
    if n < k {
        return Ok(Vec::new());
    }
    let windows: Vec<WindowRef> = (0..=n - k).map(|start| WindowRef { session, start }).collect();
    let preds = predict_session(network, store, data, session, &windows, Scope::Full)?;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let row = if t + 1 < k { preds[0].press[t] } else { *preds[t + 1 - k].press.last().expect("nonempty window") };
        out.push(row);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct TestLosses {
    bce: Option<f64>,
    mse: Option<f64>,
}

/// Press targets line up with the last row for SF (window length 1).
fn test_losses(data: &Dataset, preds: &[WindowPrediction]) -> Result<TestLosses> {
    let mut p_hat = Vec::new();
    let mut p = Vec::new();
    let mut x_hat = Vec::new();
    let mut x = Vec::new();
    for wp in preds {
        let s = &data.sessions[wp.window.session];
        for (j, row) in wp.press.iter().enumerate() {
            p_hat.extend_from_slice(row);
            p.extend(s.press[wp.window.start + j].iter().map(|&b| f64::from(b)));
        }
        if let Some(c) = &wp.configs {
            for (j, row) in c.iter().enumerate() {
                x_hat.extend_from_slice(row);
                x.extend_from_slice(&s.configs[wp.window.start + j]);
            }
        }
    }
    let bce = if p_hat.is_empty() {
        None
    } else {
        let n = p_hat.len() / FINGERS;
        Some(loss_bce(&Tensor::new(vec![n, FINGERS], p_hat)?, &Tensor::new(vec![n, FINGERS], p)?)?)
    };
    let mse = if x_hat.is_empty() {
        None
    } else {
        let n = x_hat.len() / CONFIG_WIDTH;
        Some(loss_mse(&Tensor::new(vec![n, CONFIG_WIDTH], x_hat)?, &Tensor::new(vec![n, CONFIG_WIDTH], x)?)?)
    };
    Ok(TestLosses { bce, mse })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pooled: Rates,
    pub confusion: Confusion,
    pub per_finger: Vec<Rates>,
    pub per_subject: BTreeMap<String, Rates>,
    pub per_task: BTreeMap<String, Rates>,
    /// Mean absolute error per joint in radians (CBMF only).
    pub joint_mae: Option<Vec<f64>>,
    pub test_bce: Option<f64>,
    pub test_mse: Option<f64>,
    pub sessions: Vec<String>,
    pub windows: usize,
}

/// Thresholded press metrics micro-averaged over every finger-timestep of
/// `windows`, plus per-joint errors when the model predicts configurations.
pub fn evaluate(network: &Network, store: &ParamStore, data: &Dataset, windows: &[WindowRef]) -> Result<MetricsReport> {
    let preds = predict(network, store, data, windows, Scope::Full)?;
    metrics_from_predictions(data, &preds)
}

pub fn metrics_from_predictions(data: &Dataset, preds: &[WindowPrediction]) -> Result<MetricsReport> {
    let mut tally = PressTally::default();
    let mut per_task: BTreeMap<String, Confusion> = BTreeMap::new();
    let mut mae = [0.0; JOINT_COUNT];
    let mut mae_n = 0usize;
    let mut sessions = Vec::new();
    for wp in preds {
        let s = &data.sessions[wp.window.session];
        if !sessions.contains(&s.id) {
            sessions.push(s.id.clone());
        }
        let task = per_task.entry(s.task.label().to_string()).or_default();
        for (j, row) in wp.press.iter().enumerate() {
            let labels = &s.press[wp.window.start + j];
            tally.record(&s.subject, labels, row);
            for (&l, &q) in labels.iter().zip(row) {
                task.record(l == 1, q);
            }
        }
        if let Some(c) = &wp.configs {
            for (j, row) in c.iter().enumerate() {
                let truth = &s.configs[wp.window.start + j];
                for (m, (a, b)) in mae.iter_mut().zip(row.iter().zip(truth)) {
                    *m += (a - b).abs() * PI;
                }
                mae_n += 1;
            }
        }
    }
    sessions.sort();
    let losses = test_losses(data, preds)?;
    Ok(MetricsReport {
        pooled: tally.pooled.rates(),
        confusion: tally.pooled,
        per_finger: tally.per_finger.iter().map(Confusion::rates).collect(),
        per_subject: tally.per_subject.iter().map(|(k, c)| (k.clone(), c.rates())).collect(),
        per_task: per_task.iter().map(|(k, c)| (k.clone(), c.rates())).collect(),
        joint_mae: (mae_n > 0).then(|| mae.iter().map(|m| m / mae_n as f64).collect()),
        test_bce: losses.bce,
        test_mse: losses.mse,
        sessions,
        windows: preds.len(),
    })
}

/// Session ids of `data` (restricted to `task` when given) with their window
/// counts, in dataset order.
pub fn session_sizes(data: &Dataset, task: Option<Task>) -> Vec<(String, usize)> {
    let counts = data.window_counts();
    data.sessions
        .iter()
        .filter(|s| task.is_none_or(|t| s.task == t))
        .map(|s| (s.id.clone(), counts[&s.id]))
        .collect()
}

/// Fold plan over the sessions `cfg` trains on.
pub fn fold_plan(cfg: &TrainConfig, data: &Dataset) -> Result<FoldPlan> {
    split_folds(&session_sizes(data, cfg.task), cfg.folds, cfg.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_sessions: Vec<String>,
    pub test_sessions: Vec<String>,
    pub report: MetricsReport,
    pub curves: Vec<EpochRecord>,
}

/// Result of checking that no fold was scored on a session it trained on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAudit {
    /// Session ids assigned to more than one fold.
    pub repeated: Vec<String>,
    /// `(fold, session)` pairs scored although trained on.
    pub leaks: Vec<(usize, String)>,
}

impl SessionAudit {
    pub fn passed(&self) -> bool {
        self.repeated.is_empty() && self.leaks.is_empty()
    }
}

pub fn audit_folds(plan: &FoldPlan, results: &[FoldResult]) -> SessionAudit {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for id in plan.folds.iter().flatten() {
        *seen.entry(id).or_default() += 1;
    }
    let repeated = seen.into_iter().filter(|&(_, n)| n > 1).map(|(id, _)| id.to_string()).collect();
    let mut leaks = Vec::new();
    for r in results {
        for id in &r.report.sessions {
            if r.train_sessions.contains(id) {
                leaks.push((r.fold, id.clone()));
            }
        }
    }
    SessionAudit { repeated, leaks }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub model: ModelKind,
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub mean: Rates,
    /// Across-fold standard deviation, clipped to `[0, 1]`.
    pub std: Rates,
    /// Metrics over the test predictions of all folds together.
    pub pooled: Rates,
    pub per_task: BTreeMap<String, Rates>,
    pub audit: SessionAudit,
}

/// Trains one model per fold (folds run in parallel) and aggregates the
/// held-out metrics.
pub fn run_crossval(cfg: &TrainConfig, data: &Dataset) -> Result<CrossvalReport> {
    cfg.validate()?;
    let data = prepare_dataset(cfg, data)?;
    let plan = fold_plan(cfg, &data)?;
    let results = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| -> Result<(FoldResult, Vec<WindowPrediction>)> {
            let train_ids = plan.train_sessions(fold);
            let test_ids = plan.test_sessions(fold).to_vec();
            let fcfg = TrainConfig { fold, ..cfg.clone() };
            let out = train(&fcfg, &data, &train_ids, &test_ids)?;
            let preds = predict(&out.network, &out.store, &data, &data.windows_of(&test_ids), Scope::Full)?;
            let report = metrics_from_predictions(&data, &preds)?;
            Ok((
                FoldResult {
                    fold,
                    train_sessions: train_ids,
                    test_sessions: test_ids,
                    report,
                    curves: out.curves,
                },
                preds,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let all_preds: Vec<WindowPrediction> = results.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
    let overall = metrics_from_predictions(&data, &all_preds)?;
    let folds: Vec<FoldResult> = results.into_iter().map(|(f, _)| f).collect();
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for m in 0..4 {
        let v: Vec<f64> = folds.iter().map(|f| f.report.pooled.as_array()[m]).collect();
        let (mu, sd) = mean_std(&v);
        mean[m] = mu;
        std[m] = sd.clamp(0.0, 1.0);
    }
    let audit = audit_folds(&plan, &folds);
    Ok(CrossvalReport {
        model: cfg.model,
        plan,
        folds,
        mean: Rates::from_array(mean),
        std: Rates::from_array(std),
        pooled: overall.pooled,
        per_task: overall.per_task,
        audit,
    })
}

pub const ABLATION_K: [usize; 5] = [1, 2, 4, 6, 8];
pub const ABLATION_LAMBDA: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationKRow {
    pub k: usize,
    pub model: ModelKind,
    pub curve: Vec<EpochRecord>,
    pub final_test_bce: Option<f64>,
}

/// Trains SF at `k = 1` and MF otherwise on fold `cfg.fold`, with the fold
/// plan computed once from `data` so every row sees the same sessions.
pub fn ablate_k(cfg: &TrainConfig, data: &Dataset, ks: &[usize]) -> Result<Vec<AblationKRow>> {
    let plan = fold_plan(cfg, data)?;
    let train_ids = plan.train_sessions(cfg.fold);
    let test_ids = plan.test_sessions(cfg.fold).to_vec();
    ks.par_iter()
        .map(|&k| {
            let model = if k == 1 { ModelKind::Sf } else { ModelKind::Mf };
            let kcfg = TrainConfig { k, model, ..cfg.clone() };
            let d = prepare_dataset(&kcfg, data)?;
            let out = train_mf(&kcfg, &d, &train_ids, &test_ids)?;
            Ok(AblationKRow {
                k,
                model,
                final_test_bce: out.curves.last().and_then(|r| r.test_bce),
                curve: out.curves,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationLambdaRow {
    pub lambda: f64,
    pub final_train_bce: Option<f64>,
    pub final_train_mse: Option<f64>,
    pub final_test_bce: Option<f64>,
    pub final_test_mse: Option<f64>,
}

/// CBMF with each `λ`; the encoder-only phase is trained once and shared.
pub fn ablate_lambda(cfg: &TrainConfig, data: &Dataset, lambdas: &[f64]) -> Result<Vec<AblationLambdaRow>> {
    let cfg = TrainConfig { model: ModelKind::Cbmf, ..cfg.clone() };
    for &l in lambdas {
        TrainConfig { lambda: l, ..cfg.clone() }.validate()?;
    }
    let data = prepare_dataset(&cfg, data)?;
    let plan = fold_plan(&cfg, &data)?;
    let train_ids = plan.train_sessions(cfg.fold);
    let test_ids = plan.test_sessions(cfg.fold).to_vec();
    let base = phase_one(&cfg, &data, &train_ids, &test_ids)?;
    lambdas
        .par_iter()
        .map(|&lambda| {
            let mut t = Trainer {
                cfg: &cfg,
                data: &data,
                train: base.train.clone(),
                test: base.test.clone(),
                network: base.network.clone(),
                store: base.store.clone(),
                init_rng: base.init_rng.clone(),
                shuffle_rng: base.shuffle_rng.clone(),
                dropout_rng: base.dropout_rng.clone(),
                curves: base.curves.clone(),
            };
            phase_two(&mut t, lambda)?;
            let last = t.curves.last().expect("at least one joint epoch");
            Ok(AblationLambdaRow {
                lambda,
                final_train_bce: last.train_bce,
                final_train_mse: last.train_mse,
                final_test_bce: last.test_bce,
                final_test_mse: last.test_mse,
            })
        })
        .collect()
}
