//! Conditioning upsampler and the causal linear-attention decoder over the
//! interleaved middle/bottom sequence.

use numkit::kernels::{self, LinearAttnState};
use numkit::nn::{uniform, Conv1d, Embedding, LayerNorm, Linear};
use numkit::{ConvSpec, Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;

use super::interleave::{level_at, tick, Level, MixedSequence, GROUP};
use super::LmConfig;
use crate::error::{Error, Result};

/// Top codes to one conditioning row per mixed position.
#[derive(Clone, Debug)]
pub struct Upsampler {
    embed: Embedding,
    blocks: Vec<(Conv1d, Conv1d)>,
}

impl Upsampler {
    pub fn new<R: Real>(s: &mut ParamStore<R>, cfg: &LmConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        Upsampler {
            embed: Embedding::new(s, "up.embed", cfg.codebook_size, d, 0.3, rng),
            blocks: cfg
                .up_dilations
                .iter()
                .enumerate()
                .map(|(i, &dil)| {
                    (
                        Conv1d::new(s, &format!("up.block{i}.dil"), d, d, 3, ConvSpec::dilated(dil, 1), rng),
                        Conv1d::new(s, &format!("up.block{i}.mix"), d, d, 1, ConvSpec::default(), rng),
                    )
                })
                .collect(),
        }
    }

    /// `[6L×d_model]` for `L` top codes.
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, top: &[usize]) -> Result<Var> {
        if top.is_empty() {
            return Err(Error::Input("cannot condition on an empty top sequence".into()));
        }
        let e = self.embed.forward(g, s, top)?;
        let e = g.transpose(e)?;
        let mut x = g.repeat_time(e, GROUP)?;
        for (dil, mix) in &self.blocks {
            let a = g.relu(x);
            let a = dil.forward(g, s, a)?;
            let a = g.relu(a);
            let a = mix.forward(g, s, a)?;
            x = g.add(x, a)?;
        }
        Ok(g.transpose(x)?)
    }
}

#[derive(Clone, Debug)]
struct Layer {
    norm1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Running state of incremental decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedState<R> {
    /// Per layer, per head.
    pub attn: Vec<Vec<LinearAttnState<R>>>,
    /// Number of positions consumed so far.
    pub pos: usize,
    /// Token emitted at the last position.
    pub last: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct MixedDecoder {
    mid_embed: ParamId,
    bot_embed: ParamId,
    start: ParamId,
    ticks: ParamId,
    layers: Vec<Layer>,
    norm: LayerNorm,
    mid_head: Linear,
    bot_head: Linear,
    heads: usize,
    d: usize,
    m: usize,
}

impl MixedDecoder {
    pub fn new<R: Real>(s: &mut ParamStore<R>, cfg: &LmConfig, rng: &mut impl Rng) -> Self {
        let (d, m) = (cfg.d_model, cfg.codebook_size);
        let emb = 0.3 * 3f64.sqrt();
        MixedDecoder {
            mid_embed: s.add("mix.mid_embed", uniform(&[m, d], emb, rng), true),
            bot_embed: s.add("mix.bot_embed", uniform(&[m, d], emb, rng), true),
            start: s.add("mix.start", uniform(&[1, d], emb, rng), true),
            ticks: s.add("mix.ticks", uniform(&[GROUP, d], emb, rng), true),
            layers: (0..cfg.n_layers)
                .map(|i| {
                    let n = format!("mix.layer{i}");
                    Layer {
                        norm1: LayerNorm::new(s, &format!("{n}.norm1"), d),
                        q: Linear::new(s, &format!("{n}.q"), d, d, rng),
                        k: Linear::new(s, &format!("{n}.k"), d, d, rng),
                        v: Linear::new(s, &format!("{n}.v"), d, d, rng),
                        o: Linear::new(s, &format!("{n}.o"), d, d, rng),
                        norm2: LayerNorm::new(s, &format!("{n}.norm2"), d),
                        ff1: Linear::new(s, &format!("{n}.ff1"), d, cfg.ffn_dim, rng),
                        ff2: Linear::new(s, &format!("{n}.ff2"), cfg.ffn_dim, d, rng),
                    }
                })
                .collect(),
            norm: LayerNorm::new(s, "mix.norm", d),
            mid_head: Linear::new(s, "mix.mid_head", d, m, rng),
            bot_head: Linear::new(s, "mix.bot_head", d, m, rng),
            heads: cfg.n_heads,
            d,
            m,
        }
    }

    /// Row in the joint input table `[mid; bot; start]` of the token fed at
    /// 1-based position `pos`, i.e. the token emitted at `pos − 1`.
    fn input_id(&self, pos: usize, prev: Option<usize>) -> usize {
        match prev {
            None => 2 * self.m,
            Some(t) => match level_at(pos - 1) {
                Level::Mid => t,
                Level::Bot => self.m + t,
            },
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.m) {
            Some(&bad) => Err(Error::Input(format!("code {bad} outside codebook of size {}", self.m))),
            None => Ok(()),
        }
    }

    /// Final hidden rows `[n×d]` for teacher-forced `tokens` with
    /// conditioning `cond[6L×d]`; row `i` sees tokens `< i` only.
    pub fn hidden<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, tokens: &[usize], cond: Var) -> Result<Var> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let (rows, d) = g.value(cond).dims2("mixed conditioning")?;
        if rows != n || d != self.d {
            return Err(Error::Input(format!(
                "conditioning has {rows}×{d} rows, sequence needs {n}×{}",
                self.d
            )));
        }
        let ids: Vec<usize> = (1..=n)
            .map(|p| self.input_id(p, (p > 1).then(|| tokens[p - 2])))
            .collect();
        let mid = g.param(s, self.mid_embed);
        let bot = g.param(s, self.bot_embed);
        let start = g.param(s, self.start);
        let table = g.concat_rows(&[mid, bot, start])?;
        let emb = g.embedding(table, &ids)?;
        let tick_tab = g.param(s, self.ticks);
        let tick_ids: Vec<usize> = (1..=n).map(|p| tick(p) - 1).collect();
        let tk = g.embedding(tick_tab, &tick_ids)?;
        let x = g.add(emb, tk)?;
        let mut x = g.add(x, cond)?;
        let dh = self.d / self.heads;
        for l in &self.layers {
            let h = l.norm1.forward(g, s, x)?;
            let q = l.q.forward(g, s, h)?;
            let k = l.k.forward(g, s, h)?;
            let v = l.v.forward(g, s, h)?;
            let pq = g.elu_plus_one(q);
            let pk = g.elu_plus_one(k);
            let mut outs = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let qh = g.slice_cols(pq, hd * dh, dh)?;
                let kh = g.slice_cols(pk, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                outs.push(g.causal_linear_attention(qh, kh, vh)?);
            }
            let a = g.concat_cols(&outs)?;
            let a = l.o.forward(g, s, a)?;
            x = g.add(x, a)?;
            let h = l.norm2.forward(g, s, x)?;
            let f = l.ff1.forward(g, s, h)?;
            let f = g.relu(f);
            let f = l.ff2.forward(g, s, f)?;
            x = g.add(x, f)?;
        }
        Ok(self.norm.forward(g, s, x)?)
    }

    /// Teacher-forced logits: `(mid_logits, mid_targets, bot_logits, bot_targets)`.
    pub fn teacher_forced<R: Real>(
        &self,
        g: &mut Graph<R>,
        s: &ParamStore<R>,
        mix: &MixedSequence,
        cond: Var,
    ) -> Result<(Var, Vec<usize>, Var, Vec<usize>)> {
        let h = self.hidden(g, s, &mix.tokens, cond)?;
        let (mut mid_rows, mut bot_rows) = (Vec::new(), Vec::new());
        for (i, lvl) in mix.levels().enumerate() {
            match lvl {
                Level::Mid => mid_rows.push(i),
                Level::Bot => bot_rows.push(i),
            }
        }
        let hm = g.embedding(h, &mid_rows)?;
        let hb = g.embedding(h, &bot_rows)?;
        let lm = self.mid_head.forward(g, s, hm)?;
        let lb = self.bot_head.forward(g, s, hb)?;
        let tm = mid_rows.iter().map(|&i| mix.tokens[i]).collect();
        let tb = bot_rows.iter().map(|&i| mix.tokens[i]).collect();
        Ok((lm, tm, lb, tb))
    }

    /// Logits of every position from the graph path, for checks against the
    /// incremental path.
    pub fn all_logits<R: Real>(
        &self,
        g: &mut Graph<R>,
        s: &ParamStore<R>,
        tokens: &[usize],
        cond: Var,
    ) -> Result<Vec<Vec<R>>> {
        let h = self.hidden(g, s, tokens, cond)?;
        let lm = self.mid_head.forward(g, s, h)?;
        let lb = self.bot_head.forward(g, s, h)?;
        Ok((0..tokens.len())
            .map(|i| match level_at(i + 1) {
                Level::Mid => g.value(lm).row(i).to_vec(),
                Level::Bot => g.value(lb).row(i).to_vec(),
            })
            .collect())
    }

    pub fn initial_state<R: Real>(&self) -> MixedState<R> {
        let dh = self.d / self.heads;
        MixedState {
            attn: vec![vec![LinearAttnState::new(dh, dh); self.heads]; self.layers.len()],
            pos: 0,
            last: None,
        }
    }

    /// Logits for the next position given its conditioning row. Call
    /// `advance` with the chosen token before the following step.
    pub fn step<R: Real>(&self, s: &ParamStore<R>, st: &mut MixedState<R>, cond_row: &[R]) -> Result<Vec<R>> {
        let pos = st.pos + 1;
        if cond_row.len() != self.d {
            return Err(Error::Input(format!(
                "conditioning row has {} values, expected {}",
                cond_row.len(),
                self.d
            )));
        }
        if (pos > 1) != st.last.is_some() {
            return Err(Error::Input(format!(
                "position {pos} stepped without its previous token"
            )));
        }
        let d = self.d;
        let id = self.input_id(pos, st.last);
        let emb = if id < self.m {
            s.value(self.mid_embed).row(id).to_vec()
        } else if id < 2 * self.m {
            s.value(self.bot_embed).row(id - self.m).to_vec()
        } else {
            s.value(self.start).row(0).to_vec()
        };
        let tk = s.value(self.ticks).row(tick(pos) - 1);
        let mut x: Vec<R> = emb.iter().zip(tk).map(|(&a, &b)| a + b).collect();
        x.iter_mut().zip(cond_row).for_each(|(a, &b)| *a += b);
        let dh = d / self.heads;
        for (l, heads) in self.layers.iter().zip(st.attn.iter_mut()) {
            let h = layer_norm(s, &l.norm1, &x);
            let q: Vec<R> = linear(s, &l.q, &h).into_iter().map(kernels::elu_plus_one).collect();
            let k: Vec<R> = linear(s, &l.k, &h).into_iter().map(kernels::elu_plus_one).collect();
            let v = linear(s, &l.v, &h);
            let mut a = vec![R::zero(); d];
            for (hd, state) in heads.iter_mut().enumerate() {
                let r = hd * dh..(hd + 1) * dh;
                state.step(&q[r.clone()], &k[r.clone()], &v[r.clone()], &mut a[r]);
            }
            let a = linear(s, &l.o, &a);
            x.iter_mut().zip(&a).for_each(|(x, &y)| *x += y);
            let h = layer_norm(s, &l.norm2, &x);
            let f: Vec<R> = linear(s, &l.ff1, &h).into_iter().map(|v| v.max(R::zero())).collect();
            let f = linear(s, &l.ff2, &f);
            x.iter_mut().zip(&f).for_each(|(x, &y)| *x += y);
        }
        let h = layer_norm(s, &self.norm, &x);
        Ok(match level_at(pos) {
            Level::Mid => linear(s, &self.mid_head, &h),
            Level::Bot => linear(s, &self.bot_head, &h),
        })
    }

    pub fn advance<R>(&self, st: &mut MixedState<R>, token: usize) -> Result<()> {
        self.check_tokens(&[token])?;
        st.pos += 1;
        st.last = Some(token);
        Ok(())
    }
}

fn linear<R: Real>(s: &ParamStore<R>, l: &Linear, x: &[R]) -> Vec<R> {
    let mut y = kernels::matmul(x, s.value(l.w).data(), 1, l.d_in, l.d_out);
    y.iter_mut().zip(s.value(l.b).data()).for_each(|(a, &b)| *a += b);
    y
}

fn layer_norm<R: Real>(s: &ParamStore<R>, n: &LayerNorm, x: &[R]) -> Vec<R> {
    let (xhat, _) = kernels::normalize_blocks(x, x.len());
    xhat.iter()
        .zip(s.value(n.gamma).data())
        .zip(s.value(n.beta).data())
        .map(|((&v, &g), &b)| v * g + b)
        .collect()
}

/// Conditioning as plain rows, for the incremental path.
pub fn rows_of<R: Real>(t: &Tensor<R>) -> Vec<Vec<R>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}
