//! Lyrics encoder and the autoregressive top-level code decoder.

use numkit::nn::{BiGru, Conv1d, Embedding, GroupNorm, Gru, Linear};
use numkit::{ConvSpec, Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use super::attention::{AttentionState, LocationAttention};
use super::LmConfig;
use crate::error::{Error, Result};

/// Encoder output for one phoneme sequence.
#[derive(Clone, Debug)]
pub struct LyricsMemory {
    /// `[N×D_enc]`
    pub rows: Var,
    pub mask: Vec<bool>,
}

/// Phoneme embedding, a stack of convolutions and a bidirectional GRU.
#[derive(Clone, Debug)]
pub struct LyricsEncoder {
    embed: Embedding,
    convs: Vec<(Conv1d, GroupNorm)>,
    rnn: BiGru,
}

impl LyricsEncoder {
    pub fn new<R: Real>(s: &mut ParamStore<R>, cfg: &LmConfig, rng: &mut impl Rng) -> Self {
        let e = cfg.phone_dim;
        LyricsEncoder {
            embed: Embedding::new(s, "enc.embed", cfg.n_phonemes + 1, e, 0.3, rng),
            convs: (0..cfg.enc_convs)
                .map(|i| {
                    (
                        Conv1d::new(
                            s,
                            &format!("enc.conv{i}"),
                            e,
                            e,
                            cfg.enc_kernel,
                            ConvSpec::default(),
                            rng,
                        ),
                        GroupNorm::new(s, &format!("enc.norm{i}"), e, cfg.norm_groups),
                    )
                })
                .collect(),
            rnn: BiGru::new(s, "enc.rnn", e, cfg.memory_dim() / 2, rng),
        }
    }

    pub fn encode<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, phonemes: &[usize]) -> Result<LyricsMemory> {
        if phonemes.is_empty() {
            return Err(Error::EmptyLyric);
        }
        let x = self.embed.forward(g, s, phonemes)?;
        let mut h = g.transpose(x)?;
        for (conv, norm) in &self.convs {
            let c = conv.forward(g, s, h)?;
            let n = norm.forward(g, s, c)?;
            h = g.relu(n);
        }
        let h = g.transpose(h)?;
        let rows = self.rnn.forward(g, s, h)?;
        Ok(LyricsMemory {
            rows,
            mask: vec![true; phonemes.len()],
        })
    }
}

/// Recurrent state of the top decoder.
#[derive(Clone, Copy, Debug)]
pub struct TopState {
    pub h_att: Var,
    pub h_dec: Var,
    pub context: Var,
    pub align: AttentionState,
}

#[derive(Clone, Debug)]
pub struct TopDecoder {
    embed: Embedding,
    prenet: [Linear; 2],
    att_rnn: Gru,
    attention: LocationAttention,
    dec_rnn: Gru,
    out: Linear,
    m: usize,
    dropout: f64,
}

/// Per-sequence tensors that do not change across decoder steps.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub memory: Var,
    pub keys: Var,
    pub mask: Vec<bool>,
}

impl TopDecoder {
    pub fn new<R: Real>(s: &mut ParamStore<R>, cfg: &LmConfig, rng: &mut impl Rng) -> Self {
        let dm = cfg.memory_dim();
        TopDecoder {
            embed: Embedding::new(s, "top.embed", cfg.codebook_size + 1, cfg.code_dim, 0.3, rng),
            prenet: [
                Linear::new(s, "top.prenet0", cfg.code_dim, cfg.prenet_dim, rng),
                Linear::new(s, "top.prenet1", cfg.prenet_dim, cfg.prenet_dim, rng),
            ],
            att_rnn: Gru::new(s, "top.att_rnn", cfg.prenet_dim + dm, cfg.att_rnn, rng),
            attention: LocationAttention::new(
                s,
                "top.attention",
                cfg.att_rnn,
                dm,
                cfg.attn_dim,
                cfg.loc_filters,
                cfg.loc_kernel,
                rng,
            ),
            dec_rnn: Gru::new(s, "top.dec_rnn", cfg.att_rnn + dm, cfg.dec_rnn, rng),
            out: Linear::new(s, "top.out", cfg.dec_rnn + dm, cfg.codebook_size + 1, rng),
            m: cfg.codebook_size,
            dropout: cfg.prenet_dropout,
        }
    }

    /// Index of the START input and of the STOP output.
    pub fn start(&self) -> usize {
        self.m
    }

    pub fn stop(&self) -> usize {
        self.m
    }

    pub fn prepare<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, mem: &LyricsMemory) -> Result<Prepared> {
        Ok(Prepared {
            memory: mem.rows,
            keys: self.attention.keys(g, s, mem.rows)?,
            mask: mem.mask.clone(),
        })
    }

    pub fn initial_state<R: Real>(&self, g: &mut Graph<R>, p: &Prepared) -> TopState {
        let n = g.shape(p.memory)[0];
        let dm = g.shape(p.memory)[1];
        TopState {
            h_att: g.constant(Tensor::zeros(&[1, self.att_rnn.hidden])),
            h_dec: g.constant(Tensor::zeros(&[1, self.dec_rnn.hidden])),
            context: g.constant(Tensor::zeros(&[1, dm])),
            align: AttentionState::initial(g, n),
        }
    }

    /// Prenet over the embedded inputs `[n×prenet]`; dropout is applied only
    /// when an RNG is given.
    pub fn prenet<R: Real>(
        &self,
        g: &mut Graph<R>,
        s: &ParamStore<R>,
        inputs: &[usize],
        mut rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Var> {
        if let Some(&bad) = inputs.iter().find(|&&c| c > self.m) {
            return Err(Error::Input(format!("top code {bad} outside 0..={}", self.m)));
        }
        let mut x = self.embed.forward(g, s, inputs)?;
        for layer in &self.prenet {
            let y = layer.forward(g, s, x)?;
            x = g.relu(y);
            if let Some(r) = rng.as_deref_mut() {
                let keep = 1.0 - self.dropout;
                let shape = g.shape(x).to_vec();
                let n: usize = shape.iter().product();
                let mask: Vec<R> = (0..n)
                    .map(|_| {
                        if r.gen::<f64>() < keep {
                            R::lit(1.0 / keep)
                        } else {
                            R::zero()
                        }
                    })
                    .collect();
                let mv = g.constant(Tensor::new(&shape, mask)?);
                x = g.mul(x, mv)?;
            }
        }
        Ok(x)
    }

    /// One recurrence step from a prenet row `[1×prenet]`. Returns the
    /// output features `[1×(dec_rnn+D_enc)]` and the new state.
    pub fn step<R: Real>(
        &self,
        g: &mut Graph<R>,
        s: &ParamStore<R>,
        pre: Var,
        st: &TopState,
        p: &Prepared,
    ) -> Result<(Var, TopState)> {
        let n = g.shape(p.memory)[0];
        if g.shape(st.align.prev) != [1, n] {
            return Err(Error::Input(format!(
                "decoder state built for memory length {}, got {n}",
                g.shape(st.align.prev)[1]
            )));
        }
        let x = g.concat_cols(&[pre, st.context])?;
        let av = self.att_rnn.vars(g, s);
        let h_att = g.gru_cell(x, st.h_att, av)?;
        let (context, align) = self
            .attention
            .attend(g, s, h_att, p.memory, p.keys, &p.mask, &st.align)?;
        let x = g.concat_cols(&[h_att, context])?;
        let dv = self.dec_rnn.vars(g, s);
        let h_dec = g.gru_cell(x, st.h_dec, dv)?;
        let feat = g.concat_cols(&[h_dec, context])?;
        Ok((
            feat,
            TopState {
                h_att,
                h_dec,
                context,
                align,
            },
        ))
    }

    /// Logits over `M` codes plus STOP for feature rows.
    pub fn logits<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, feats: Var) -> Result<Var> {
        Ok(self.out.forward(g, s, feats)?)
    }

    /// Teacher-forced unrolling over `codes` followed by STOP. Returns logits
    /// `[(L+1)×(M+1)]`, the targets and one alignment row per step.
    pub fn teacher_forced<R: Real>(
        &self,
        g: &mut Graph<R>,
        s: &ParamStore<R>,
        mem: &LyricsMemory,
        codes: &[usize],
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Var, Vec<usize>, Vec<Var>)> {
        if let Some(&bad) = codes.iter().find(|&&c| c >= self.m) {
            return Err(Error::Input(format!(
                "top code {bad} outside codebook of size {}",
                self.m
            )));
        }
        let mut inputs = Vec::with_capacity(codes.len() + 1);
        inputs.push(self.start());
        inputs.extend_from_slice(codes);
        let mut targets = codes.to_vec();
        targets.push(self.stop());
        let p = self.prepare(g, s, mem)?;
        let pre = self.prenet(g, s, &inputs, rng)?;
        let mut st = self.initial_state(g, &p);
        let mut feats = Vec::with_capacity(inputs.len());
        let mut align = Vec::with_capacity(inputs.len());
        for i in 0..inputs.len() {
            let row = g.slice_rows(pre, i, 1)?;
            let (f, next) = self.step(g, s, row, &st, &p)?;
            feats.push(f);
            align.push(next.align.prev);
            st = next;
        }
        let all = g.concat_rows(&feats)?;
        let logits = self.logits(g, s, all)?;
        Ok((logits, targets, align))
    }
}
