//! Dual-attention localization network.
//!
//! Clip features `X` (l x d) are encoded by a stacked bidirectional GRU into a
//! joint representation `O` (l x 2h). Two bottom-up attention stacks turn `O`
//! into per-clip weights in (0, 1), one for the goal-directed head (IA) and
//! one for the unintentional head (UA). Each head scales the rows of `O` by
//! its attention and maps every clip through a time-shared affine layer to a
//! temporal class activation map (TCAM).
//!
//! GRU weights are stored input-major with gate blocks ordered `[z | r | n]`:
//! `w` is `(in, 3h)`, `u` is `(h, 3h)`, biases are `(3h,)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Per-video clip features, one row per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatureSequence {
    pub video_id: String,
    features: Tensor,
}

impl ClipFeatureSequence {
    pub fn new(video_id: impl Into<String>, features: Tensor) -> Result<Self> {
        let video_id = video_id.into();
        if features.ndim() != 2 || features.shape()[0] == 0 || features.shape()[1] == 0 {
            return Err(Error::invalid(
                &video_id,
                format!("features must be a non-empty l x d matrix, got {:?}", features.shape()),
            ));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite(format!("features of video {video_id}")));
        }
        Ok(Self { video_id, features })
    }

    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(video_id, Tensor::from_rows(rows)?)
    }

    pub fn num_clips(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn into_features(self) -> Tensor {
        self.features
    }
}

/// Class-agnostic per-clip weights, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrack(pub Vec<f64>);

impl AttentionTrack {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Temporal class activation map: `(l, N)` per-clip class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Tcam(pub Tensor);

impl Tcam {
    pub fn num_clips(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn column(&self, class: usize) -> Vec<f64> {
        self.0.column(class)
    }
}

/// Affine layer `y = x W + b` with `W: (in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection<T> {
    pub w: T,
    pub u: T,
    pub b_w: T,
    pub b_u: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<T> {
    pub forward: GruDirection<T>,
    pub backward: GruDirection<T>,
}

/// All learnable parameters, generic over storage so the same layout holds
/// values ([`ModelParams`]), tape handles ([`BoundParams`]) or optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub gru: Vec<GruLayer<T>>,
    pub attention_ia: Vec<Dense<T>>,
    pub attention_ua: Vec<Dense<T>>,
    pub head_ia: Dense<T>,
    pub head_ua: Dense<T>,
}

pub type ModelParams = Params<Tensor>;
pub type BoundParams = Params<Var>;

impl<T> Params<T> {
    /// Builds a parameter set of the same layout, visiting entries in
    /// canonical order with their names.
    pub fn try_map<U, E, F>(&self, mut f: F) -> Result<Params<U>, E>
    where
        F: FnMut(&str, &T) -> Result<U, E>,
    {
        fn dense<T, U, E>(
            f: &mut impl FnMut(&str, &T) -> Result<U, E>,
            prefix: &str,
            d: &Dense<T>,
        ) -> Result<Dense<U>, E> {
            Ok(Dense {
                weight: f(&format!("{prefix}.weight"), &d.weight)?,
                bias: f(&format!("{prefix}.bias"), &d.bias)?,
            })
        }
        fn direction<T, U, E>(
            f: &mut impl FnMut(&str, &T) -> Result<U, E>,
            prefix: &str,
            d: &GruDirection<T>,
        ) -> Result<GruDirection<U>, E> {
            Ok(GruDirection {
                w: f(&format!("{prefix}.w"), &d.w)?,
                u: f(&format!("{prefix}.u"), &d.u)?,
                b_w: f(&format!("{prefix}.b_w"), &d.b_w)?,
                b_u: f(&format!("{prefix}.b_u"), &d.b_u)?,
            })
        }

        let mut gru = Vec::with_capacity(self.gru.len());
        for (k, layer) in self.gru.iter().enumerate() {
            let forward = direction(&mut f, &format!("gru.{k}.fwd"), &layer.forward)?;
            let backward = direction(&mut f, &format!("gru.{k}.bwd"), &layer.backward)?;
            gru.push(GruLayer { forward, backward });
        }
        let mut attention_ia = Vec::with_capacity(self.attention_ia.len());
        for (i, d) in self.attention_ia.iter().enumerate() {
            attention_ia.push(dense(&mut f, &format!("attention_ia.{i}"), d)?);
        }
        let mut attention_ua = Vec::with_capacity(self.attention_ua.len());
        for (i, d) in self.attention_ua.iter().enumerate() {
            attention_ua.push(dense(&mut f, &format!("attention_ua.{i}"), d)?);
        }
        let head_ia = dense(&mut f, "head_ia", &self.head_ia)?;
        let head_ua = dense(&mut f, "head_ua", &self.head_ua)?;
        Ok(Params {
            gru,
            attention_ia,
            attention_ua,
            head_ia,
            head_ua,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Params<U> {
        match self.try_map::<U, std::convert::Infallible, _>(|n, t| Ok(f(n, t))) {
            Ok(p) => p,
            Err(never) => match never {},
        }
    }

    /// Entries in canonical order.
    pub fn entries(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for layer in &self.gru {
            for d in [&layer.forward, &layer.backward] {
                out.extend([&d.w, &d.u, &d.b_w, &d.b_u]);
            }
        }
        for d in self.attention_ia.iter().chain(&self.attention_ua) {
            out.extend([&d.weight, &d.bias]);
        }
        out.extend([&self.head_ia.weight, &self.head_ia.bias]);
        out.extend([&self.head_ua.weight, &self.head_ua.bias]);
        out
    }

    pub fn entries_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for layer in &mut self.gru {
            for d in [&mut layer.forward, &mut layer.backward] {
                out.extend([&mut d.w, &mut d.u, &mut d.b_w, &mut d.b_u]);
            }
        }
        for d in self.attention_ia.iter_mut().chain(&mut self.attention_ua) {
            out.extend([&mut d.weight, &mut d.bias]);
        }
        out.extend([&mut self.head_ia.weight, &mut self.head_ia.bias]);
        out.extend([&mut self.head_ua.weight, &mut self.head_ua.bias]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.map(|n, _| names.push(n.to_string()));
        names
    }
}

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub n_ia: usize,
    pub n_ua: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("input_dim", self.input_dim),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("n_ia", self.n_ia),
            ("n_ua", self.n_ua),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::invalid("model dims", format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches generated data")
}

fn dense_init(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Dense<Tensor> {
    Dense {
        weight: uniform(rng, &[inp, out], inp),
        bias: uniform(rng, &[out], inp),
    }
}

impl ModelParams {
    /// Uniform `±1/sqrt(fan_in)` initialization from a seeded generator.
    /// Attention stacks are `2h -> h -> 1`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = dims.hidden_size;
        let mut gru = Vec::with_capacity(dims.num_layers);
        for k in 0..dims.num_layers {
            let inp = if k == 0 { dims.input_dim } else { 2 * h };
            let mut dir = || GruDirection {
                w: uniform(&mut rng, &[inp, 3 * h], inp),
                u: uniform(&mut rng, &[h, 3 * h], h),
                b_w: uniform(&mut rng, &[3 * h], inp),
                b_u: uniform(&mut rng, &[3 * h], h),
            };
            let forward = dir();
            let backward = dir();
            gru.push(GruLayer { forward, backward });
        }
        let attention_ia = vec![dense_init(&mut rng, 2 * h, h), dense_init(&mut rng, h, 1)];
        let attention_ua = vec![dense_init(&mut rng, 2 * h, h), dense_init(&mut rng, h, 1)];
        let head_ia = dense_init(&mut rng, 2 * h, dims.n_ia);
        let head_ua = dense_init(&mut rng, 2 * h, dims.n_ua);
        let params = Params {
            gru,
            attention_ia,
            attention_ua,
            head_ia,
            head_ua,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries().iter().map(|t| t.numel()).sum()
    }

    /// Sizes inferred from the stored shapes.
    pub fn dims(&self) -> Result<ModelDims> {
        self.validate()?;
        let first = &self.gru[0].forward;
        Ok(ModelDims {
            input_dim: first.w.shape()[0],
            hidden_size: first.u.shape()[0],
            num_layers: self.gru.len(),
            n_ia: self.head_ia.weight.shape()[1],
            n_ua: self.head_ua.weight.shape()[1],
        })
    }

    /// Checks that every layer's dimensions chain into the next.
    pub fn validate(&self) -> Result<()> {
        let expect = |layer: String, expected: usize, actual: usize| -> Result<()> {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::Dimension {
                    layer,
                    expected,
                    actual,
                })
            }
        };
        let Some(first) = self.gru.first() else {
            return Err(Error::invalid("model", "at least one GRU layer is required"));
        };
        if first.forward.u.ndim() != 2 || first.forward.w.ndim() != 2 {
            return Err(Error::invalid("gru.0", "weights must be matrices"));
        }
        let h = first.forward.u.shape()[0];
        let mut inp = first.forward.w.shape()[0];
        for (k, layer) in self.gru.iter().enumerate() {
            for (dname, d) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                let name = |p: &str| format!("gru.{k}.{dname}.{p}");
                for (p, t, rows) in [("w", &d.w, inp), ("u", &d.u, h)] {
                    if t.ndim() != 2 {
                        return Err(Error::invalid(name(p), "expected a matrix"));
                    }
                    expect(name(p), rows, t.shape()[0])?;
                    expect(name(p), 3 * h, t.shape()[1])?;
                }
                expect(name("b_w"), 3 * h, d.b_w.numel())?;
                expect(name("b_u"), 3 * h, d.b_u.numel())?;
            }
            inp = 2 * h;
        }
        let check_dense = |name: String, d: &Dense<Tensor>, inp: usize| -> Result<usize> {
            if d.weight.ndim() != 2 {
                return Err(Error::invalid(name, "expected a matrix"));
            }
            expect(format!("{name}.weight"), inp, d.weight.shape()[0])?;
            expect(format!("{name}.bias"), d.weight.shape()[1], d.bias.numel())?;
            Ok(d.weight.shape()[1])
        };
        for (stack, layers) in [("attention_ia", &self.attention_ia), ("attention_ua", &self.attention_ua)] {
            if layers.is_empty() {
                return Err(Error::invalid(stack, "attention needs at least one layer"));
            }
            let mut width = 2 * h;
            for (i, d) in layers.iter().enumerate() {
                width = check_dense(format!("{stack}.{i}"), d, width)?;
            }
            expect(format!("{stack}.output"), 1, width)?;
        }
        check_dense("head_ia".into(), &self.head_ia, 2 * h)?;
        check_dense("head_ua".into(), &self.head_ua, 2 * h)?;
        Ok(())
    }

    /// Registers every parameter on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        self.map(|_, t| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    /// Value-level forward pass for one video.
    pub fn forward(&self, x: &ClipFeatureSequence) -> Result<ModelOutputs> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.features().clone());
        let out = forward(&mut tape, xv, &bound)?;
        out.to_values(&tape)
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct OutputVars {
    pub o_joint: Var,
    pub lambda_ia: Var,
    pub lambda_ua: Var,
    pub o_ia: Var,
    pub o_ua: Var,
    pub tcam_ia: Var,
    pub tcam_ua: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs {
    pub lambda_ia: AttentionTrack,
    pub lambda_ua: AttentionTrack,
    pub o_joint: Tensor,
    pub o_ia: Tensor,
    pub o_ua: Tensor,
    pub tcam_ia: Tcam,
    pub tcam_ua: Tcam,
}

impl OutputVars {
    pub fn to_values(&self, tape: &Tape) -> Result<ModelOutputs> {
        let track = |v: Var| -> Result<AttentionTrack> {
            let w = tape.value(v).data().to_vec();
            if let Some(bad) = w.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
                return Err(Error::NonFinite(format!("attention weight {bad} outside (0, 1)")));
            }
            Ok(AttentionTrack(w))
        };
        Ok(ModelOutputs {
            lambda_ia: track(self.lambda_ia)?,
            lambda_ua: track(self.lambda_ua)?,
            o_joint: tape.value(self.o_joint).clone(),
            o_ia: tape.value(self.o_ia).clone(),
            o_ua: tape.value(self.o_ua).clone(),
            tcam_ia: Tcam(tape.value(self.tcam_ia).clone()),
            tcam_ua: Tcam(tape.value(self.tcam_ua).clone()),
        })
    }
}

fn gru_direction(tape: &mut Tape, x: Var, dir: &GruDirection<Var>, reverse: bool) -> Result<Var> {
    let xw = tape.matmul(x, dir.w)?;
    let xw = tape.add_row(xw, dir.b_w)?;
    tape.gru_sequence(xw, dir.u, dir.b_u, reverse)
}

/// Stacked bidirectional GRU; returns `(l, 2h)` with forward states in the
/// first `h` columns. Layer `k > 0` consumes layer `k - 1`'s concatenated output.
pub fn encode(tape: &mut Tape, x: Var, gru: &[GruLayer<Var>]) -> Result<Var> {
    let mut input = x;
    for (k, layer) in gru.iter().enumerate() {
        let got = tape.value(input).shape().get(1).copied().unwrap_or(0);
        let want = tape.value(layer.forward.w).shape()[0];
        if got != want {
            return Err(Error::Dimension {
                layer: format!("gru.{k}"),
                expected: want,
                actual: got,
            });
        }
        let fwd = gru_direction(tape, input, &layer.forward, false)?;
        let bwd = gru_direction(tape, input, &layer.backward, true)?;
        input = tape.concat(&[fwd, bwd], 1)?;
    }
    Ok(input)
}

/// Kernel-size-1 convolution stack: ReLU between layers, sigmoid at the end.
/// Returns a length-`l` vector.
pub fn attention(tape: &mut Tape, o_joint: Var, layers: &[Dense<Var>]) -> Result<Var> {
    let l = tape.value(o_joint).rows();
    let mut a = o_joint;
    for (i, layer) in layers.iter().enumerate() {
        a = tape.matmul(a, layer.weight)?;
        a = tape.add_row(a, layer.bias)?;
        if i + 1 < layers.len() {
            a = tape.relu(a);
        }
    }
    let s = tape.sigmoid(a);
    tape.reshape(s, vec![l])
}

/// Scales row `t` of `o_joint` by `lambda[t]`.
pub fn attend_features(tape: &mut Tape, o_joint: Var, lambda: Var) -> Result<Var> {
    tape.scale_rows(o_joint, lambda)
}

/// The same affine map applied to every clip.
pub fn tcam_head(tape: &mut Tape, o_seg: Var, head: &Dense<Var>) -> Result<Var> {
    let y = tape.matmul(o_seg, head.weight)?;
    tape.add_row(y, head.bias)
}

pub fn forward(tape: &mut Tape, x: Var, params: &BoundParams) -> Result<OutputVars> {
    let o_joint = encode(tape, x, &params.gru)?;
    let lambda_ia = attention(tape, o_joint, &params.attention_ia)?;
    let lambda_ua = attention(tape, o_joint, &params.attention_ua)?;
    let o_ia = attend_features(tape, o_joint, lambda_ia)?;
    let o_ua = attend_features(tape, o_joint, lambda_ua)?;
    let tcam_ia = tcam_head(tape, o_ia, &params.head_ia)?;
    let tcam_ua = tcam_head(tape, o_ua, &params.head_ua)?;
    Ok(OutputVars {
        o_joint,
        lambda_ia,
        lambda_ua,
        o_ia,
        o_ua,
        tcam_ia,
        tcam_ua,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn dims(d: usize, h: usize, layers: usize) -> ModelDims {
        ModelDims {
            input_dim: d,
            hidden_size: h,
            num_layers: layers,
            n_ia: 3,
            n_ua: 2,
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop GRU following the update/reset/new-memory equations directly.
    fn gru_oracle(x: &Tensor, d: &GruDirection<Tensor>, reverse: bool) -> Vec<Vec<f64>> {
        let (l, inp) = (x.shape()[0], x.shape()[1]);
        let h = d.u.shape()[0];
        let w = |i: usize, j: usize| d.w.get2(i, j);
        let u = |i: usize, j: usize| d.u.get2(i, j);
        let mut hs = vec![vec![0.0; h]; l];
        let mut prev = vec![0.0; h];
        let steps: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
        for t in steps {
            let xt = x.row(t);
            let mut next = vec![0.0; h];
            for j in 0..h {
                let gate = |blk: usize| {
                    let c = blk * h + j;
                    let mut wx = d.b_w.data()[c];
                    for i in 0..inp {
                        wx += w(i, c) * xt[i];
                    }
                    let mut uh = d.b_u.data()[c];
                    for i in 0..h {
                        uh += u(i, c) * prev[i];
                    }
                    (wx, uh)
                };
                let (zx, zu) = gate(0);
                let (rx, ru) = gate(1);
                let (nx, nu) = gate(2);
                let z = sig(zx + zu);
                let r = sig(rx + ru);
                let n = (r * nu + nx).tanh();
                next[j] = (1.0 - z) * n + z * prev[j];
            }
            hs[t] = next.clone();
            prev = next;
        }
        hs
    }

    #[test]
    fn encode_matches_scalar_oracle() {
        let params = ModelParams::init(dims(5, 4, 1), 11).unwrap();
        let x = random_matrix(6, 5, 3);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let o = encode(&mut tape, xv, &bound.gru).unwrap();
        let o = tape.value(o).clone();
        let fwd = gru_oracle(&x, &params.gru[0].forward, false);
        let bwd = gru_oracle(&x, &params.gru[0].backward, true);
        for t in 0..6 {
            let expect: Vec<f64> = fwd[t].iter().chain(&bwd[t]).copied().collect();
            for (a, b) in o.row(t).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn scalar_recurrence_length_two() {
        // h = 1, one layer, input dim 1: hand-unrolled recurrence.
        let mut params = ModelParams::init(dims(1, 1, 1), 0).unwrap();
        let dir = GruDirection {
            w: Tensor::matrix(1, 3, vec![0.5, -0.3, 0.8]).unwrap(),
            u: Tensor::matrix(1, 3, vec![0.2, 0.4, -0.6]).unwrap(),
            b_w: Tensor::vector(vec![0.1, 0.0, -0.1]),
            b_u: Tensor::vector(vec![0.0, 0.05, 0.02]),
        };
        params.gru[0].forward = dir.clone();
        params.gru[0].backward = dir;
        let x = [1.5, -0.7];

        let step = |xt: f64, hp: f64| {
            let z = sig(0.5 * xt + 0.1 + 0.2 * hp);
            let r = sig(-0.3 * xt + 0.4 * hp + 0.05);
            let n = (r * (-0.6 * hp + 0.02) + 0.8 * xt - 0.1).tanh();
            (1.0 - z) * n + z * hp
        };
        let f1 = step(x[0], 0.0);
        let f2 = step(x[1], f1);
        let b2 = step(x[1], 0.0);
        let b1 = step(x[0], b2);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let xv = tape.constant(Tensor::matrix(2, 1, x.to_vec()).unwrap());
        let o = encode(&mut tape, xv, &bound.gru).unwrap();
        let got = tape.value(o).data().to_vec();
        let want = [f1, b1, f2, b2];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn single_clip_sees_same_input_both_ways() {
        let params = ModelParams::init(dims(3, 4, 2), 5).unwrap();
        let x = random_matrix(1, 3, 9);
        let out = params.forward(&ClipFeatureSequence::new("v", x).unwrap()).unwrap();
        assert_eq!(out.o_joint.shape(), &[1, 8]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut params = ModelParams::init(dims(4, 3, 3), 2).unwrap();
        for layer in &mut params.gru {
            for d in [&mut layer.forward, &mut layer.backward] {
                d.b_w = Tensor::zeros(d.b_w.shape());
                d.b_u = Tensor::zeros(d.b_u.shape());
            }
        }
        let x = ClipFeatureSequence::new("z", Tensor::zeros(&[5, 4])).unwrap();
        let out = params.forward(&x).unwrap();
        assert!(out.o_joint.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_reversal_swaps_directions() {
        let params = ModelParams::init(dims(3, 4, 2), 8).unwrap();
        let mut swapped = params.clone();
        for (k, layer) in swapped.gru.iter_mut().enumerate() {
            std::mem::swap(&mut layer.forward, &mut layer.backward);
            if k > 0 {
                // the layer input [fwd | bwd] arrives as [bwd | fwd]
                for d in [&mut layer.forward, &mut layer.backward] {
                    let cols = d.w.cols();
                    let (top, bottom) = d.w.data().split_at(4 * cols);
                    let data = [bottom, top].concat();
                    d.w = Tensor::matrix(8, cols, data).unwrap();
                }
            }
        }
        let x = random_matrix(7, 3, 4);
        let rev_rows: Vec<Vec<f64>> = (0..7).rev().map(|t| x.row(t).to_vec()).collect();
        let xr = Tensor::from_rows(&rev_rows).unwrap();

        let o = params.forward(&ClipFeatureSequence::new("a", x).unwrap()).unwrap().o_joint;
        let o_rev = swapped
            .forward(&ClipFeatureSequence::new("b", xr).unwrap())
            .unwrap()
            .o_joint;
        let h = 4;
        for t in 0..7 {
            let a = o.row(t);
            let b = o_rev.row(6 - t);
            for j in 0..h {
                assert!((a[j] - b[h + j]).abs() < 1e-12);
                assert!((a[h + j] - b[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_attention_weights_give_half() {
        let mut params = ModelParams::init(dims(3, 4, 1), 1).unwrap();
        for d in &mut params.attention_ia {
            d.weight = Tensor::zeros(d.weight.shape());
            d.bias = Tensor::zeros(d.bias.shape());
        }
        let x = ClipFeatureSequence::new("v", random_matrix(5, 3, 2)).unwrap();
        let out = params.forward(&x).unwrap();
        assert!(out.lambda_ia.weights().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn attention_matches_dense_oracle_and_is_equivariant() {
        let params = ModelParams::init(dims(3, 4, 1), 21).unwrap();
        let o = random_matrix(6, 8, 13);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let ov = tape.constant(o.clone());
        let lam = attention(&mut tape, ov, &bound.attention_ia).unwrap();
        let lam = tape.value(lam).data().to_vec();

        let l1 = &params.attention_ia[0];
        let l2 = &params.attention_ia[1];
        for t in 0..6 {
            let hidden: Vec<f64> = (0..4)
                .map(|j| {
                    let s: f64 = (0..8).map(|i| o.get2(t, i) * l1.weight.get2(i, j)).sum();
                    (s + l1.bias.data()[j]).max(0.0)
                })
                .collect();
            let s: f64 = (0..4).map(|j| hidden[j] * l2.weight.get2(j, 0)).sum();
            let want = sig(s + l2.bias.data()[0]);
            assert!((lam[t] - want).abs() < 1e-12);
        }

        let perm = [3, 0, 5, 1, 4, 2];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&t| o.row(t).to_vec()).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let ov = tape.constant(Tensor::from_rows(&rows).unwrap());
        let permuted = attention(&mut tape, ov, &bound.attention_ia).unwrap();
        for (i, &t) in perm.iter().enumerate() {
            assert_eq!(tape.value(permuted).data()[i], lam[t]);
        }
    }

    #[test]
    fn attend_features_scales_rows() {
        let o = random_matrix(3, 4, 1);
        let mut tape = Tape::new();
        let ov = tape.constant(o.clone());
        let ones = tape.constant(Tensor::vector(vec![1.0; 3]));
        let zeros = tape.constant(Tensor::vector(vec![0.0; 3]));
        let onehot = tape.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let a = attend_features(&mut tape, ov, ones).unwrap();
        assert_eq!(tape.value(a), &o);
        let b = attend_features(&mut tape, ov, zeros).unwrap();
        assert!(tape.value(b).data().iter().all(|&v| v == 0.0));
        let c = attend_features(&mut tape, ov, onehot).unwrap();
        let c = tape.value(c);
        assert_eq!(c.row(1), o.row(1));
        assert!(c.row(0).iter().chain(c.row(2)).all(|&v| v == 0.0));
        let short = tape.constant(Tensor::vector(vec![1.0; 2]));
        assert!(attend_features(&mut tape, ov, short).is_err());
    }

    #[test]
    fn tcam_head_is_shared_over_time() {
        let head = Dense {
            weight: random_matrix(4, 3, 7),
            bias: Tensor::vector(vec![0.1, -0.2, 0.3]),
        };
        let mut o = random_matrix(3, 4, 8);
        let dup = o.row(0).to_vec();
        o.data_mut()[8..12].copy_from_slice(&dup);
        let mut tape = Tape::new();
        let hv = Dense {
            weight: tape.constant(head.weight.clone()),
            bias: tape.constant(head.bias.clone()),
        };
        let ov = tape.constant(o.clone());
        let c = tcam_head(&mut tape, ov, &hv).unwrap();
        let c = tape.value(c).clone();
        assert_eq!(c.row(0), c.row(2));
        for t in 0..3 {
            for k in 0..3 {
                let want: f64 = (0..4).map(|i| o.get2(t, i) * head.weight.get2(i, k)).sum::<f64>()
                    + head.bias.data()[k];
                assert!((c.get2(t, k) - want).abs() < 1e-12);
            }
        }

        let zero = Dense {
            weight: tape.constant(Tensor::zeros(&[4, 3])),
            bias: hv.bias,
        };
        let c0 = tcam_head(&mut tape, ov, &zero).unwrap();
        for t in 0..3 {
            assert_eq!(tape.value(c0).row(t), head.bias.data());
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let params = ModelParams::init(dims(5, 4, 3), 3).unwrap();
        let x = ClipFeatureSequence::new("v", random_matrix(9, 5, 1)).unwrap();
        let a = params.forward(&x).unwrap();
        let b = params.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lambda_ia.len(), 9);
        assert_eq!(a.tcam_ia.0.shape(), &[9, 3]);
        assert_eq!(a.tcam_ua.0.shape(), &[9, 2]);
        assert!(a.lambda_ua.weights().iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let params = ModelParams::init(dims(5, 4, 2), 3).unwrap();
        let x = ClipFeatureSequence::new("v", random_matrix(4, 6, 1)).unwrap();
        match params.forward(&x) {
            Err(Error::Dimension { layer, .. }) => assert_eq!(layer, "gru.0"),
            other => panic!("unexpected {other:?}"),
        }
        let mut broken = params.clone();
        broken.head_ua.weight = Tensor::zeros(&[7, 2]);
        assert!(matches!(broken.validate(), Err(Error::Dimension { .. })));
    }

    #[test]
    fn names_follow_entry_order() {
        let params = ModelParams::init(dims(2, 2, 2), 0).unwrap();
        let names = params.names();
        assert_eq!(names.len(), params.entries().len());
        assert_eq!(names[0], "gru.0.fwd.w");
        assert_eq!(names[4], "gru.0.bwd.w");
        assert_eq!(names.last().unwrap(), "head_ua.bias");
    }
}
