use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::subband::{SubbandFeature, SubbandWeights};
use crate::weights::WeightBundle;

/// Shapes of the band-shared recurrent weight estimator.
///
/// For each band and zone the input token at frame `t` is the band's
/// speech and noise covariance embeddings (`E x D_in` each). A GRU runs
/// causally over frames, a dense head maps the state to `E x taps x
/// channels` complex weights, and one self-attention block mixes the zone
/// tokens of the same frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RnnBfConfig {
    pub embedding: usize,
    pub input_depth: usize,
    pub hidden: usize,
    pub zones: usize,
    pub taps: usize,
    pub channels: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl RnnBfConfig {
    pub const GRU_W_IH: &'static str = "bf.gru.w_ih";
    pub const GRU_W_HH: &'static str = "bf.gru.w_hh";
    pub const GRU_B_IH: &'static str = "bf.gru.b_ih";
    pub const GRU_B_HH: &'static str = "bf.gru.b_hh";
    pub const HEAD_W: &'static str = "bf.head.weight";
    pub const HEAD_B: &'static str = "bf.head.bias";
    pub const ATT_Q: &'static str = "bf.mhsa.wq";
    pub const ATT_K: &'static str = "bf.mhsa.wk";
    pub const ATT_V: &'static str = "bf.mhsa.wv";
    pub const ATT_O: &'static str = "bf.mhsa.wo";

    pub fn token_input(&self) -> usize {
        self.embedding * 2 * self.input_depth
    }

    /// Real outputs of one zone token: `E x taps x channels x {re, im}`.
    pub fn token_output(&self) -> usize {
        self.embedding * self.taps * self.channels * 2
    }

    pub fn attention_width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Depth of the produced subband weights: `zones x taps x channels x 2`.
    pub fn weight_depth(&self) -> usize {
        self.zones * self.taps * self.channels * 2
    }

    pub fn tensor_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (i, h, o, a) = (
            self.token_input(),
            self.hidden,
            self.token_output(),
            self.attention_width(),
        );
        vec![
            (Self::GRU_W_IH, vec![3 * h, i]),
            (Self::GRU_W_HH, vec![3 * h, h]),
            (Self::GRU_B_IH, vec![3 * h]),
            (Self::GRU_B_HH, vec![3 * h]),
            (Self::HEAD_W, vec![o, h]),
            (Self::HEAD_B, vec![o]),
            (Self::ATT_Q, vec![a, o]),
            (Self::ATT_K, vec![a, o]),
            (Self::ATT_V, vec![a, o]),
            (Self::ATT_O, vec![o, a]),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Borrowed, shape-checked parameters.
pub(crate) struct RnnBf<'a> {
    cfg: RnnBfConfig,
    w_ih: &'a [f64],
    w_hh: &'a [f64],
    b_ih: &'a [f64],
    b_hh: &'a [f64],
    head_w: &'a [f64],
    head_b: &'a [f64],
    wq: &'a [f64],
    wk: &'a [f64],
    wv: &'a [f64],
    wo: &'a [f64],
}

fn matvec_into(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += w[r * cols..(r + 1) * cols]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> RnnBf<'a> {
    pub(crate) fn new(cfg: RnnBfConfig, b: &'a WeightBundle) -> Result<Self> {
        if cfg.heads == 0 || cfg.head_dim == 0 || cfg.hidden == 0 {
            return Err(Error::Config("estimator dims must be positive".into()));
        }
        let shapes = cfg.tensor_shapes();
        let get = |i: usize| b.expect(shapes[i].0, &shapes[i].1);
        Ok(Self {
            cfg,
            w_ih: get(0)?,
            w_hh: get(1)?,
            b_ih: get(2)?,
            b_hh: get(3)?,
            head_w: get(4)?,
            head_b: get(5)?,
            wq: get(6)?,
            wk: get(7)?,
            wv: get(8)?,
            wo: get(9)?,
        })
    }

    fn gru_step(&self, x: &[f64], h: &mut [f64]) {
        let hn = self.cfg.hidden;
        let mut gi = self.b_ih.to_vec();
        matvec_into(self.w_ih, x, &mut gi);
        let mut gh = self.b_hh.to_vec();
        matvec_into(self.w_hh, h, &mut gh);
        for j in 0..hn {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hn + j] + gh[hn + j]);
            let n = (gi[2 * hn + j] + r * gh[2 * hn + j]).tanh();
            h[j] = (1.0 - z) * n + z * h[j];
        }
    }

    /// Self-attention over the zone tokens of one frame, with a residual.
    fn attend(&self, tokens: &mut [Vec<f64>]) {
        let (a, hd, heads) = (
            self.cfg.attention_width(),
            self.cfg.head_dim,
            self.cfg.heads,
        );
        let project = |w: &[f64]| -> Vec<Vec<f64>> {
            tokens
                .iter()
                .map(|tok| {
                    let mut o = vec![0.0; a];
                    matvec_into(w, tok, &mut o);
                    o
                })
                .collect()
        };
        let (q, k, v) = (project(self.wq), project(self.wk), project(self.wv));
        let n = tokens.len();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut ctx = vec![vec![0.0; a]; n];
        for h in 0..heads {
            let sl = h * hd..(h + 1) * hd;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        q[i][sl.clone()]
                            .iter()
                            .zip(&k[j][sl.clone()])
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            * scale
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let total: f64 = e.iter().sum();
                for (j, ej) in e.iter().enumerate() {
                    for (c, vv) in ctx[i][sl.clone()].iter_mut().zip(&v[j][sl.clone()]) {
                        *c += ej / total * vv;
                    }
                }
            }
        }
        for (tok, c) in tokens.iter_mut().zip(&ctx) {
            matvec_into(self.wo, c, tok);
        }
    }

    /// Forward pass for one band. `speech[z]` and `noise[z]` are `(t, e, d)`
    /// slices; the result is `(t, e, weight_depth)`.
    pub(crate) fn forward_band(
        &self,
        speech: &[&[f64]],
        noise: &[&[f64]],
        frames: usize,
    ) -> Vec<f64> {
        let cfg = &self.cfg;
        let zones = cfg.zones;
        let half = cfg.embedding * cfg.input_depth;
        let per_e = cfg.taps * cfg.channels * 2;
        let depth = cfg.weight_depth();
        let mut state = vec![vec![0.0; cfg.hidden]; zones];
        let mut out = vec![0.0; frames * cfg.embedding * depth];
        let mut x = vec![0.0; cfg.token_input()];
        for t in 0..frames {
            let mut tokens: Vec<Vec<f64>> = (0..zones)
                .map(|z| {
                    x[..half].copy_from_slice(&speech[z][t * half..(t + 1) * half]);
                    x[half..].copy_from_slice(&noise[z][t * half..(t + 1) * half]);
                    self.gru_step(&x, &mut state[z]);
                    let mut tok = self.head_b.to_vec();
                    matvec_into(self.head_w, &state[z], &mut tok);
                    tok
                })
                .collect();
            self.attend(&mut tokens);
            for (z, tok) in tokens.iter().enumerate() {
                for e in 0..cfg.embedding {
                    let dst = (t * cfg.embedding + e) * depth + z * per_e;
                    out[dst..dst + per_e].copy_from_slice(&tok[e * per_e..(e + 1) * per_e]);
                }
            }
        }
        out
    }
}

/// Run the shared estimator on every band. `sub_speech[z]` and
/// `sub_noise[z]` hold zone `z`'s band-projected covariance features.
pub fn rnn_bf_stub(
    sub_speech: &[SubbandFeature],
    sub_noise: &[SubbandFeature],
    weights: &WeightBundle,
    cfg: &RnnBfConfig,
) -> Result<SubbandWeights> {
    if sub_speech.len() != cfg.zones || sub_noise.len() != cfg.zones {
        return Err(Error::Shape(format!(
            "expected {} zones of speech and noise features, got {} and {}",
            cfg.zones,
            sub_speech.len(),
            sub_noise.len()
        )));
    }
    let first = &sub_speech[0];
    for f in sub_speech.iter().chain(sub_noise) {
        if (f.bands, f.frames, f.embedding, f.depth)
            != (first.bands, first.frames, cfg.embedding, cfg.input_depth)
        {
            return Err(Error::Shape(format!(
                "subband features are {}x{}x{}x{}, expected {}x{}x{}x{}",
                f.bands,
                f.frames,
                f.embedding,
                f.depth,
                first.bands,
                first.frames,
                cfg.embedding,
                cfg.input_depth
            )));
        }
    }
    let net = RnnBf::new(*cfg, weights)?;
    let (bands, frames) = (first.bands, first.frames);
    let per_band: Vec<Vec<f64>> = (0..bands)
        .into_par_iter()
        .map(|k| {
            let s: Vec<&[f64]> = sub_speech.iter().map(|f| f.band(k)).collect();
            let n: Vec<&[f64]> = sub_noise.iter().map(|f| f.band(k)).collect();
            net.forward_band(&s, &n, frames)
        })
        .collect();
    Ok(SubbandWeights {
        data: per_band.concat(),
        bands,
        frames,
        embedding: cfg.embedding,
        depth: cfg.weight_depth(),
    })
}
