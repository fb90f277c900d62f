//! Runtime for a [`ModelSpec`]: parameter registration, batched forward
//! passes with a tape, and reverse-mode gradients.
//!
//! Frames pass through the CNN once per batch regardless of how many windows
//! reference them; windows are index lists into the frame batch. This keeps
//! overlapping windows cheap and makes per-frame features independent of the
//! order frames are supplied in.

use rand::Rng;

use super::{LayerSpec, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout, dropout_backward,
    gru_backward, gru_forward, maxpool2d_backward, maxpool2d_forward, Activation, Conv2dCache,
    DenseCache, DropoutMask, Gradients, GruCache, GruWeights, Mode, ParamId, ParamStore,
    PoolCache, Tensor,
};

/// Frames processed per CNN call during inference.
const INFER_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Encoder and decoder.
    Full,
    /// Encoder only (CBMF phase-one training).
    Encoder,
}

/// A set of frames plus the windows (lists of frame indices, in time order)
/// that the sequence stage should see.
#[derive(Clone, Debug)]
pub struct FrameBatch {
    /// `F × side × side × 1`
    pub frames: Tensor,
    pub windows: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
enum Slot {
    Conv { w: ParamId, b: ParamId, act: Activation },
    Pool { window: usize },
    Dropout { rate: f64 },
    Flatten,
    Concat,
    Gru { w: ParamId, u: ParamId, bi: ParamId, bh: ParamId, act: Activation },
    Dense { w: ParamId, b: ParamId, act: Activation },
    Merge { from: usize },
}

#[derive(Debug)]
enum Cache {
    Conv(Conv2dCache),
    Pool(PoolCache),
    Dropout(DropoutMask),
    Flatten(Vec<usize>),
    Concat,
    Gru(GruCache),
    Dense(DenseCache),
    Merge { left: usize, right: usize },
}

/// Everything needed to run the backward pass of one forward call.
#[derive(Debug)]
pub struct Tape {
    frame_count: usize,
    feature_width: usize,
    windows: Vec<Vec<usize>>,
    frame_caches: Vec<Cache>,
    seq_caches: Vec<Cache>,
    dec_caches: Vec<Cache>,
    press: Option<Tensor>,
    configs: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Press probabilities: `B×k×5` (MF, CBMF) or `B×5` (SF).
    pub press: Option<Tensor>,
    /// Predicted normalized configurations `B×k×17` (CBMF only).
    pub configs: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    encoder: Vec<Slot>,
    decoder: Vec<Slot>,
    flatten_at: usize,
    encoder_params: Vec<ParamId>,
    decoder_params: Vec<ParamId>,
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..=limit))
}

impl Network {
    /// Validates `spec`, registers freshly initialized parameters in `store`
    /// and returns the runnable network.
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if spec.encoder.is_empty() {
            return Err(Error::invalid("cannot run an empty model"));
        }
        let (enc_shapes, dec_shapes) = spec.layer_shapes()?;
        let flatten_at = spec
            .encoder
            .iter()
            .position(|l| matches!(l, LayerSpec::Flatten))
            .ok_or_else(|| Error::invalid("model has no flatten layer"))?;
        let mut encoder_params = Vec::new();
        let mut decoder_params = Vec::new();
        let mut encoder = Vec::new();
        for (i, (layer, shape)) in spec.encoder.iter().zip(&enc_shapes).enumerate() {
            encoder.push(Self::slot(layer, &shape.input, &format!("enc.{i:02}"), store, &mut encoder_params, rng)?);
        }
        let mut decoder = Vec::new();
        if let Some(dec) = &spec.decoder {
            for (i, (layer, shape)) in dec.iter().zip(&dec_shapes).enumerate() {
                decoder.push(Self::slot(layer, &shape.input, &format!("dec.{i:02}"), store, &mut decoder_params, rng)?);
            }
        }
        Ok(Self {
            spec: spec.clone(),
            encoder,
            decoder,
            flatten_at,
            encoder_params,
            decoder_params,
        })
    }

    fn slot<R: Rng + ?Sized>(
        layer: &LayerSpec,
        input: &[usize],
        prefix: &str,
        store: &mut ParamStore,
        ids: &mut Vec<ParamId>,
        rng: &mut R,
    ) -> Result<Slot> {
        let mut add = |name: &str, t: Tensor| {
            let id = store.add(format!("{prefix}.{name}"), t);
            ids.push(id);
            id
        };
        Ok(match *layer {
            LayerSpec::Conv2d { channels, activation } => {
                let c_in = input[2];
                let limit = (6.0 / (9 * c_in) as f64).sqrt();
                let w = add("conv.w", uniform(&[3, 3, c_in, channels], limit, rng));
                let b = add("conv.b", Tensor::zeros(&[channels]));
                Slot::Conv { w, b, act: activation }
            }
            LayerSpec::Maxpool2d { window } => Slot::Pool { window },
            LayerSpec::Dropout { rate } => Slot::Dropout { rate },
            LayerSpec::Flatten => Slot::Flatten,
            LayerSpec::ConcatTime => Slot::Concat,
            LayerSpec::Gru { hidden, activation } => {
                let d_in = *input.last().expect("validated");
                let limit = 1.0 / (hidden as f64).sqrt();
                let w = add("gru.w", uniform(&[d_in, 3 * hidden], limit, rng));
                let u = add("gru.u", uniform(&[hidden, 3 * hidden], limit, rng));
                let bi = add("gru.bi", Tensor::zeros(&[3 * hidden]));
                let bh = add("gru.bh", Tensor::zeros(&[3 * hidden]));
                Slot::Gru { w, u, bi, bh, act: activation }
            }
            LayerSpec::Dense { units, activation } => {
                let d_in = *input.last().expect("validated");
                let limit = (6.0 / d_in as f64).sqrt();
                let w = add("dense.w", uniform(&[d_in, units], limit, rng));
                let b = add("dense.b", Tensor::zeros(&[units]));
                Slot::Dense { w, b, act: activation }
            }
            LayerSpec::Merge { residual_from } => Slot::Merge { from: residual_from },
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn encoder_params(&self) -> &[ParamId] {
        &self.encoder_params
    }

    pub fn decoder_params(&self) -> &[ParamId] {
        &self.decoder_params
    }

    /// Re-draws every decoder parameter (CBMF phase two). Their optimizer
    /// state restarts; encoder moments are kept.
    pub fn reinit_decoder<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for slot in &self.decoder {
            match *slot {
                Slot::Gru { w, u, bi, bh, .. } => {
                    let hidden = store.get(u).shape()[0];
                    let limit = 1.0 / (hidden as f64).sqrt();
                    let ws = store.get(w).shape().to_vec();
                    store.set(w, uniform(&ws, limit, rng))?;
                    store.set(u, uniform(&[hidden, 3 * hidden], limit, rng))?;
                    store.set(bi, Tensor::zeros(&[3 * hidden]))?;
                    store.set(bh, Tensor::zeros(&[3 * hidden]))?;
                }
                Slot::Dense { w, b, .. } => {
                    let ws = store.get(w).shape().to_vec();
                    let limit = (6.0 / ws[0] as f64).sqrt();
                    store.set(w, uniform(&ws, limit, rng))?;
                    store.set(b, Tensor::zeros(&[ws[1]]))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn window_len(&self) -> usize {
        if self.spec.kind == ModelKind::Sf {
            1
        } else {
            self.spec.k
        }
    }

    fn check_frames(&self, frames: &Tensor) -> Result<usize> {
        let s = self.spec.image_side;
        match *frames.shape() {
            [f, h, w, 1] if h == s && w == s => Ok(f),
            _ => Err(Error::shape(format!(
                "expected F×{s}×{s}×1 frames, got {:?}",
                frames.shape()
            ))),
        }
    }

    fn run_frames<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        frames: &Tensor,
        mode: Mode,
        rng: &mut R,
        caches: Option<&mut Vec<Cache>>,
    ) -> Result<Tensor> {
        let count = self.check_frames(frames)?;
        let mut x = frames.clone();
        let mut tape = caches;
        for slot in &self.encoder[..=self.flatten_at] {
            let (y, cache) = match *slot {
                Slot::Conv { w, b, act } => {
                    let (y, c) = conv2d_forward(&x, store.get(w), store.get(b), act)?;
                    (y, Cache::Conv(c))
                }
                Slot::Pool { window } => {
                    let (y, c) = maxpool2d_forward(&x, window)?;
                    (y, Cache::Pool(c))
                }
                Slot::Dropout { rate } => {
                    let (y, m) = dropout(&x, rate, mode, rng)?;
                    (y, Cache::Dropout(m))
                }
                Slot::Flatten => {
                    let shape = x.shape().to_vec();
                    let width = shape[1..].iter().product::<usize>();
                    (x.reshape(&[count, width])?, Cache::Flatten(shape))
                }
                _ => unreachable!("frame stage holds only per-frame layers"),
            };
            if let Some(t) = tape.as_deref_mut() {
                t.push(cache);
            }
            x = y;
        }
        Ok(x)
    }

    /// Per-frame CNN features `F × d` in inference mode.
    pub fn encode_frames(&self, store: &ParamStore, frames: &Tensor) -> Result<Tensor> {
        let count = self.check_frames(frames)?;
        let plane = frames.len() / count;
        let mut feats = Vec::new();
        let mut width = 0;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        for start in (0..count).step_by(INFER_CHUNK) {
            let n = INFER_CHUNK.min(count - start);
            let s = self.spec.image_side;
            let chunk = Tensor::new(vec![n, s, s, 1], frames.data()[start * plane..(start + n) * plane].to_vec())?;
            let f = self.run_frames(store, &chunk, Mode::Infer, &mut rng, None)?;
            width = f.shape()[1];
            feats.extend_from_slice(f.data());
        }
        Tensor::new(vec![count, width], feats)
    }

    fn gather(&self, feats: &Tensor, windows: &[Vec<usize>]) -> Result<Tensor> {
        let k = self.window_len();
        let (count, d) = (feats.shape()[0], feats.shape()[1]);
        if windows.is_empty() {
            return Err(Error::invalid("no windows in batch"));
        }
        let mut out = Vec::with_capacity(windows.len() * k * d);
        for w in windows {
            if w.len() != k {
                return Err(Error::shape(format!(
                    "window of length {} but the model expects k = {k}",
                    w.len()
                )));
            }
            for &f in w {
                if f >= count {
                    return Err(Error::invalid(format!("window references frame {f} of {count}")));
                }
                out.extend_from_slice(&feats.data()[f * d..(f + 1) * d]);
            }
        }
        let shape = if self.spec.kind == ModelKind::Sf {
            vec![windows.len(), d]
        } else {
            vec![windows.len(), k, d]
        };
        Tensor::new(shape, out)
    }

    fn gru_view<'a>(store: &'a ParamStore, w: ParamId, u: ParamId, bi: ParamId, bh: ParamId) -> GruWeights<'a> {
        GruWeights {
            w_input: store.get(w),
            w_recurrent: store.get(u),
            b_input: store.get(bi),
            b_recurrent: store.get(bh),
        }
    }

    fn run_sequence(
        &self,
        store: &ParamStore,
        feats: &Tensor,
        windows: &[Vec<usize>],
        scope: Scope,
        mut tape: Option<&mut Tape>,
    ) -> Result<ForwardOutput> {
        let mut x = self.gather(feats, windows)?;
        let mut enc_outputs: Vec<Option<Tensor>> = vec![None; self.encoder.len()];
        for (i, slot) in self.encoder.iter().enumerate().skip(self.flatten_at + 1) {
            let (y, cache) = match *slot {
                Slot::Concat => (x, Cache::Concat),
                Slot::Gru { w, u, bi, bh, act } => {
                    let (y, c) = gru_forward(&x, Self::gru_view(store, w, u, bi, bh), act)?;
                    (y, Cache::Gru(c))
                }
                Slot::Dense { w, b, act } => {
                    let (y, c) = dense_forward(&x, store.get(w), store.get(b), act)?;
                    (y, Cache::Dense(c))
                }
                _ => return Err(Error::invalid("unsupported layer after flatten in encoder")),
            };
            if let Some(t) = tape.as_deref_mut() {
                t.seq_caches.push(cache);
            }
            enc_outputs[i] = Some(y.clone());
            x = y;
        }

        let sigmoid_head = |t: Tensor| if self.spec.output_sigmoid { t.map(crate::tensor::sigmoid) } else { t };
        let out = match self.spec.kind {
            ModelKind::Sf | ModelKind::Mf => ForwardOutput {
                press: Some(sigmoid_head(x)),
                configs: None,
            },
            ModelKind::Cbmf => {
                let configs = x;
                let press = if scope == Scope::Full {
                    let mut y = configs.clone();
                    for slot in &self.decoder {
                        let (next, cache) = match *slot {
                            Slot::Merge { from } => {
                                let residual = enc_outputs[from]
                                    .as_ref()
                                    .ok_or_else(|| Error::invalid("merge source is not a sequence layer"))?;
                                let merged = concat_last(&y, residual)?;
                                let left = *y.shape().last().expect("rank 3");
                                let right = *residual.shape().last().expect("rank 3");
                                (merged, Cache::Merge { left, right })
                            }
                            Slot::Gru { w, u, bi, bh, act } => {
                                let (o, c) = gru_forward(&y, Self::gru_view(store, w, u, bi, bh), act)?;
                                (o, Cache::Gru(c))
                            }
                            Slot::Dense { w, b, act } => {
                                let (o, c) = dense_forward(&y, store.get(w), store.get(b), act)?;
                                (o, Cache::Dense(c))
                            }
                            _ => return Err(Error::invalid("unsupported decoder layer")),
                        };
                        if let Some(t) = tape.as_deref_mut() {
                            t.dec_caches.push(cache);
                        }
                        y = next;
                    }
                    Some(sigmoid_head(y))
                } else {
                    None
                };
                ForwardOutput {
                    press,
                    configs: Some(configs),
                }
            }
        };
        if let Some(t) = tape {
            t.press = out.press.clone();
            t.configs = out.configs.clone();
        }
        Ok(out)
    }

    /// Training-capable forward pass; the returned tape feeds [`Network::backward`].
    pub fn forward<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        batch: &FrameBatch,
        mode: Mode,
        scope: Scope,
        rng: &mut R,
    ) -> Result<(ForwardOutput, Tape)> {
        let mut frame_caches = Vec::new();
        let feats = self.run_frames(store, &batch.frames, mode, rng, Some(&mut frame_caches))?;
        let mut tape = Tape {
            frame_count: feats.shape()[0],
            feature_width: feats.shape()[1],
            windows: batch.windows.clone(),
            frame_caches,
            seq_caches: Vec::new(),
            dec_caches: Vec::new(),
            press: None,
            configs: None,
        };
        let out = self.run_sequence(store, &feats, &batch.windows, scope, Some(&mut tape))?;
        Ok((out, tape))
    }

    /// Inference on precomputed frame features (see [`Network::encode_frames`]).
    pub fn infer_features(
        &self,
        store: &ParamStore,
        feats: &Tensor,
        windows: &[Vec<usize>],
        scope: Scope,
    ) -> Result<ForwardOutput> {
        self.run_sequence(store, feats, windows, scope, None)
    }

    /// Inference on one window of `k` normalized `side×side` images.
    pub fn predict_window(&self, store: &ParamStore, images: &[Tensor]) -> Result<ForwardOutput> {
        let k = self.window_len();
        if images.len() != k {
            return Err(Error::shape(format!(
                "window of {} images, model expects {k}",
                images.len()
            )));
        }
        let s = self.spec.image_side;
        let mut data = Vec::with_capacity(k * s * s);
        for img in images {
            if img.len() != s * s {
                return Err(Error::shape(format!(
                    "image {:?} does not match side {s}",
                    img.shape()
                )));
            }
            data.extend_from_slice(img.data());
        }
        let frames = Tensor::new(vec![k, s, s, 1], data)?;
        let feats = self.encode_frames(store, &frames)?;
        self.infer_features(store, &feats, &[(0..k).collect()], Scope::Full)
    }

    /// Reverse pass. `d_press` is the loss gradient w.r.t. the press
    /// probabilities, `d_configs` w.r.t. the predicted configurations.
    pub fn backward(
        &self,
        store: &ParamStore,
        tape: &Tape,
        d_press: Option<&Tensor>,
        d_configs: Option<&Tensor>,
    ) -> Result<Gradients> {
        let mut grads = store.zero_grads();

        let press_logit_grad = |dp: &Tensor| -> Result<Tensor> {
            let p = tape.press.as_ref().ok_or_else(|| Error::invalid("no press output on tape"))?;
            if p.shape() != dp.shape() {
                return Err(Error::shape(format!("press grad {:?} vs output {:?}", dp.shape(), p.shape())));
            }
            if !self.spec.output_sigmoid {
                return Ok(dp.clone());
            }
            let mut g = dp.clone();
            for (gv, pv) in g.data_mut().iter_mut().zip(p.data()) {
                *gv *= pv * (1.0 - pv);
            }
            Ok(g)
        };

        let mut residual_grad: Option<(usize, Tensor)> = None;
        let mut g = match self.spec.kind {
            ModelKind::Sf | ModelKind::Mf => match d_press {
                Some(dp) => press_logit_grad(dp)?,
                None => return Ok(grads),
            },
            ModelKind::Cbmf => {
                let configs = tape.configs.as_ref().ok_or_else(|| Error::invalid("no configs on tape"))?;
                let mut d_enc = Tensor::zeros(configs.shape());
                if let Some(dc) = d_configs {
                    d_enc.add_assign(dc)?;
                }
                if let Some(dp) = d_press {
                    if tape.dec_caches.is_empty() {
                        return Err(Error::invalid("press gradient given but the decoder did not run"));
                    }
                    let mut gd = press_logit_grad(dp)?;
                    for (slot, cache) in self.decoder.iter().zip(&tape.dec_caches).rev() {
                        gd = match (slot, cache) {
                            (&Slot::Gru { w, u, bi, bh, .. }, Cache::Gru(c)) => {
                                let og = gru_backward(c, Self::gru_view(store, w, u, bi, bh), &gd)?;
                                for (id, pg) in [w, u, bi, bh].into_iter().zip(&og.params) {
                                    grads.accumulate(id, pg)?;
                                }
                                og.inputs.into_iter().next().expect("one input")
                            }
                            (&Slot::Dense { w, b, .. }, Cache::Dense(c)) => {
                                let og = dense_backward(c, store.get(w), &gd)?;
                                grads.accumulate(w, &og.params[0])?;
                                grads.accumulate(b, &og.params[1])?;
                                og.inputs.into_iter().next().expect("one input")
                            }
                            (&Slot::Merge { from }, &Cache::Merge { left, right }) => {
                                let (a, b) = split_last(&gd, left, right)?;
                                residual_grad = Some((from, b));
                                a
                            }
                            _ => return Err(Error::invalid("tape does not match decoder")),
                        };
                    }
                    d_enc.add_assign(&gd)?;
                }
                d_enc
            }
        };

        let seq_slots = &self.encoder[self.flatten_at + 1..];
        for (offset, (slot, cache)) in seq_slots.iter().zip(&tape.seq_caches).enumerate().rev() {
            let index = self.flatten_at + 1 + offset;
            if let Some((from, rg)) = &residual_grad {
                if *from == index {
                    g.add_assign(rg)?;
                }
            }
            g = match (slot, cache) {
                (&Slot::Gru { w, u, bi, bh, .. }, Cache::Gru(c)) => {
                    let og = gru_backward(c, Self::gru_view(store, w, u, bi, bh), &g)?;
                    for (id, pg) in [w, u, bi, bh].into_iter().zip(&og.params) {
                        grads.accumulate(id, pg)?;
                    }
                    og.inputs.into_iter().next().expect("one input")
                }
                (&Slot::Dense { w, b, .. }, Cache::Dense(c)) => {
                    let og = dense_backward(c, store.get(w), &g)?;
                    grads.accumulate(w, &og.params[0])?;
                    grads.accumulate(b, &og.params[1])?;
                    og.inputs.into_iter().next().expect("one input")
                }
                (Slot::Concat, Cache::Concat) => g,
                _ => return Err(Error::invalid("tape does not match encoder")),
            };
        }

        // scatter window gradients back onto frames
        let d = tape.feature_width;
        let mut d_feats = Tensor::zeros(&[tape.frame_count, d]);
        {
            let dst = d_feats.data_mut();
            let src = g.data();
            let mut pos = 0;
            for w in &tape.windows {
                for &f in w {
                    for (a, b) in dst[f * d..(f + 1) * d].iter_mut().zip(&src[pos..pos + d]) {
                        *a += b;
                    }
                    pos += d;
                }
            }
        }

        let mut g = d_feats;
        for (slot, cache) in self.encoder[..=self.flatten_at].iter().zip(&tape.frame_caches).rev() {
            g = match (slot, cache) {
                (&Slot::Conv { w, b, .. }, Cache::Conv(c)) => {
                    let og = conv2d_backward(c, store.get(w), &g)?;
                    grads.accumulate(w, &og.params[0])?;
                    grads.accumulate(b, &og.params[1])?;
                    og.inputs.into_iter().next().expect("one input")
                }
                (Slot::Pool { .. }, Cache::Pool(c)) => maxpool2d_backward(c, &g)?.inputs.remove(0),
                (Slot::Dropout { .. }, Cache::Dropout(m)) => dropout_backward(m, &g)?.inputs.remove(0),
                (Slot::Flatten, Cache::Flatten(shape)) => g.reshape(shape)?,
                _ => return Err(Error::invalid("tape does not match frame stage")),
            };
        }
        Ok(grads)
    }
}

fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = a.rows_cols();
    let (rb, cb) = b.rows_cols();
    if ra != rb || a.shape()[..a.rank() - 1] != b.shape()[..b.rank() - 1] {
        return Err(Error::shape(format!("cannot merge {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut out = Vec::with_capacity(ra * (ca + cb));
    for r in 0..ra {
        out.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
        out.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().expect("rank ≥ 1") = ca + cb;
    Tensor::new(shape, out)
}

fn split_last(t: &Tensor, left: usize, right: usize) -> Result<(Tensor, Tensor)> {
    let (rows, cols) = t.rows_cols();
    if cols != left + right {
        return Err(Error::shape(format!("cannot split width {cols} into {left}+{right}")));
    }
    let mut a = Vec::with_capacity(rows * left);
    let mut b = Vec::with_capacity(rows * right);
    for r in 0..rows {
        a.extend_from_slice(&t.data()[r * cols..r * cols + left]);
        b.extend_from_slice(&t.data()[r * cols + left..(r + 1) * cols]);
    }
    let mut sa = t.shape().to_vec();
    let mut sb = t.shape().to_vec();
    *sa.last_mut().expect("rank ≥ 1") = left;
    *sb.last_mut().expect("rank ≥ 1") = right;
    Ok((Tensor::new(sa, a)?, Tensor::new(sb, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{build, Geometry};
    use crate::tensor::{finite_diff_check_coords, GRAPH_FD_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(kind: ModelKind, k: usize) -> (Network, ParamStore) {
        let spec = build(kind, Geometry::new(k, 32, 8)).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::new(&spec, &mut store, &mut rng).unwrap();
        // nudge biases off zero so every path carries signal
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get(id).clone();
            if t.rank() == 1 {
                store.set(id, Tensor::from_fn(t.shape(), |_| rng.gen_range(-0.1..0.1))).unwrap();
            }
        }
        (net, store)
    }

    fn frames(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, 32, 32, 1], |_| rng.gen_range(0.0..1.0))
    }

    fn flat(store: &ParamStore) -> Vec<f64> {
        store.ids().flat_map(|id| store.get(id).data().to_vec()).collect()
    }

    fn unflat(store: &mut ParamStore, values: &[f64]) {
        let mut pos = 0;
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            let n = store.get(id).len();
            store.set(id, Tensor::new(shape, values[pos..pos + n].to_vec()).unwrap()).unwrap();
            pos += n;
        }
    }

    fn weighted(t: &Tensor, seed: u64) -> (f64, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::from_fn(t.shape(), |_| rng.gen_range(-1.0..1.0));
        let v = t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        (v, w)
    }

    fn objective(net: &Network, store: &ParamStore, batch: &FrameBatch, scope: Scope) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (out, _) = net.forward(store, batch, Mode::Train, scope, &mut rng).unwrap();
        let mut total = 0.0;
        if let Some(p) = &out.press {
            total += weighted(p, 1).0;
        }
        if let Some(c) = &out.configs {
            total += weighted(c, 2).0;
        }
        total
    }

    fn check(kind: ModelKind, k: usize, windows: Vec<Vec<usize>>, frame_count: usize, scope: Scope) -> f64 {
        let (net, store) = tiny(kind, k);
        let batch = FrameBatch { frames: frames(frame_count, 3), windows };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (out, tape) = net.forward(&store, &batch, Mode::Train, scope, &mut rng).unwrap();
        let dp = out.press.as_ref().map(|p| weighted(p, 1).1);
        let dc = out.configs.as_ref().map(|c| weighted(c, 2).1);
        let grads = net.backward(&store, &tape, dp.as_ref(), dc.as_ref()).unwrap();
        let analytic: Vec<f64> = grads.0.iter().flat_map(|g| g.data().to_vec()).collect();
        let point = flat(&store);
        // every tensor contributes a few coordinates, including the first conv
        let mut coords = Vec::new();
        let mut pos = 0;
        let mut pick = ChaCha8Rng::seed_from_u64(9);
        for id in store.ids() {
            let n = store.get(id).len();
            for _ in 0..3 {
                coords.push(pos + pick.gen_range(0..n));
            }
            pos += n;
        }
        let mut probe = store.clone();
        finite_diff_check_coords(&point, &analytic, &coords, GRAPH_FD_STEP, |x| {
            unflat(&mut probe, x);
            objective(&net, &probe, &batch, scope)
        })
    }

    #[test]
    fn cbmf_gradients_match_finite_differences() {
        let err = check(ModelKind::Cbmf, 3, vec![vec![0, 1, 2], vec![1, 2, 3]], 4, Scope::Full);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn cbmf_encoder_scope_gradients() {
        let err = check(ModelKind::Cbmf, 2, vec![vec![0, 1], vec![1, 2]], 3, Scope::Encoder);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn mf_gradients_match_finite_differences() {
        let err = check(ModelKind::Mf, 2, vec![vec![0, 1], vec![2, 1]], 3, Scope::Full);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn sf_gradients_match_finite_differences() {
        let err = check(ModelKind::Sf, 1, vec![vec![0], vec![1], vec![0]], 2, Scope::Full);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn shared_frames_equal_separate_windows() {
        let (net, store) = tiny(ModelKind::Cbmf, 2);
        let f = frames(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shared = FrameBatch { frames: f.clone(), windows: vec![vec![0, 1], vec![1, 2]] };
        let (a, _) = net.forward(&store, &shared, Mode::Infer, Scope::Full, &mut rng).unwrap();
        let plane = 32 * 32;
        let image = |i: usize| Tensor::new(vec![32, 32], f.data()[i * plane..(i + 1) * plane].to_vec()).unwrap();
        let w0 = net.predict_window(&store, &[image(0), image(1)]).unwrap();
        let w1 = net.predict_window(&store, &[image(1), image(2)]).unwrap();
        let p = a.press.unwrap();
        let half = p.len() / 2;
        for (x, y) in p.data()[..half].iter().zip(w0.press.unwrap().data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in p.data()[half..].iter().zip(w1.press.unwrap().data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shapes_and_ranges() {
        let (net, store) = tiny(ModelKind::Cbmf, 3);
        let batch = FrameBatch { frames: frames(5, 1), windows: vec![vec![0, 1, 2], vec![2, 3, 4]] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = net.forward(&store, &batch, Mode::Infer, Scope::Full, &mut rng).unwrap();
        let p = out.press.unwrap();
        assert_eq!(p.shape(), &[2, 3, 5]);
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.configs.unwrap().shape(), &[2, 3, 17]);
        let (enc, _) = net.forward(&store, &batch, Mode::Infer, Scope::Encoder, &mut rng).unwrap();
        assert!(enc.press.is_none());
    }

    #[test]
    fn rejects_bad_windows() {
        let (net, store) = tiny(ModelKind::Mf, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let short = FrameBatch { frames: frames(2, 1), windows: vec![vec![0]] };
        assert!(net.forward(&store, &short, Mode::Infer, Scope::Full, &mut rng).is_err());
        let oob = FrameBatch { frames: frames(2, 1), windows: vec![vec![0, 5]] };
        assert!(net.forward(&store, &oob, Mode::Infer, Scope::Full, &mut rng).is_err());
    }

    #[test]
    fn reinit_decoder_leaves_encoder() {
        let (net, mut store) = tiny(ModelKind::Cbmf, 2);
        let g = store.zero_grads();
        crate::tensor::adam_step(&mut store, &g, &crate::tensor::AdamConfig::default()).unwrap();
        let enc = store.checksum(net.encoder_params().iter().copied());
        let dec = store.checksum(net.decoder_params().iter().copied());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        net.reinit_decoder(&mut store, &mut rng).unwrap();
        assert_eq!(enc, store.checksum(net.encoder_params().iter().copied()));
        assert_ne!(dec, store.checksum(net.decoder_params().iter().copied()));
        assert!(net.encoder_params().iter().all(|&id| store.param_step(id) == 1));
        assert!(net.decoder_params().iter().all(|&id| store.param_step(id) == 0));
    }
}
