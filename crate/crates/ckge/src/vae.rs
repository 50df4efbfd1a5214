//! GRU sequence VAE over triples, used as the replay generator.
//!
//! A triple is a 3-token sequence: head entity, relation, tail entity.
//! Entities occupy token ids [0, E), relations [E, E+R), and one extra
//! BOS token feeds the decoder's first step (it is never an output class).
//! The encoder GRU reads the three token embeddings and projects its final
//! state to a Gaussian posterior; the decoder GRU receives the latent
//! concatenated with the previous token's embedding and emits logits that
//! are masked to the entity range at steps 1 and 3 and the relation range
//! at step 2, so every decode is a structurally valid triple.

use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::Triple;
use crate::error::{Error, Result};
use crate::rng;

/// Weights of one GRU layer: update gate z, reset gate r, candidate c.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wc: Tensor,
    pub uc: Tensor,
    pub bc: Tensor,
}

impl GruWeights {
    fn init(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let mut mat = |rows, cols| glorot(rows, cols, rng);
        GruWeights {
            wz: mat(d_in, d_h),
            uz: mat(d_h, d_h),
            bz: Tensor::zeros(1, d_h),
            wr: mat(d_in, d_h),
            ur: mat(d_h, d_h),
            br: Tensor::zeros(1, d_h),
            wc: mat(d_in, d_h),
            uc: mat(d_h, d_h),
            bc: Tensor::zeros(1, d_h),
        }
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [&self.wz, &self.uz, &self.bz, &self.wr, &self.ur, &self.br, &self.wc, &self.uc, &self.bc]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.wz,
            &mut self.uz,
            &mut self.bz,
            &mut self.wr,
            &mut self.ur,
            &mut self.br,
            &mut self.wc,
            &mut self.uc,
            &mut self.bc,
        ]
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// All generator parameters. Tensor order in `tensors()` is the canonical
/// order used by the optimizer and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    n_entities: usize,
    n_relations: usize,
    d_v: usize,
    d_z: usize,
    d_h: usize,
    /// (E + R + 1) x d_v; the last row is BOS.
    pub token_emb: Tensor,
    pub encoder: GruWeights,
    pub w_mu: Tensor,
    pub b_mu: Tensor,
    pub w_lv: Tensor,
    pub b_lv: Tensor,
    pub decoder: GruWeights,
    /// d_h x (E + R) output projection; BOS has no output column.
    pub w_out: Tensor,
    pub b_out: Tensor,
}

pub const PARAM_NAMES: [&str; 25] = [
    "token_emb",
    "enc_wz",
    "enc_uz",
    "enc_bz",
    "enc_wr",
    "enc_ur",
    "enc_br",
    "enc_wc",
    "enc_uc",
    "enc_bc",
    "w_mu",
    "b_mu",
    "w_lv",
    "b_lv",
    "dec_wz",
    "dec_uz",
    "dec_bz",
    "dec_wr",
    "dec_ur",
    "dec_br",
    "dec_wc",
    "dec_uc",
    "dec_bc",
    "w_out",
    "b_out",
];

impl GeneratorParams {
    pub fn init(
        n_entities: usize,
        n_relations: usize,
        d_v: usize,
        d_z: usize,
        d_h: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_entities == 0 || n_relations == 0 {
            return Err(Error::Config("generator vocab must be nonempty".into()));
        }
        if d_v == 0 || d_z == 0 || d_h == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        let vocab = n_entities + n_relations;
        let mut r = rng::stream(seed, &["gen-init".into()]);
        Ok(GeneratorParams {
            n_entities,
            n_relations,
            d_v,
            d_z,
            d_h,
            token_emb: glorot(vocab + 1, d_v, &mut r),
            encoder: GruWeights::init(d_v, d_h, &mut r),
            w_mu: glorot(d_h, d_z, &mut r),
            b_mu: Tensor::zeros(1, d_z),
            w_lv: glorot(d_h, d_z, &mut r),
            b_lv: Tensor::zeros(1, d_z),
            decoder: GruWeights::init(d_z + d_v, d_h, &mut r),
            w_out: glorot(d_h, vocab, &mut r),
            b_out: Tensor::zeros(1, vocab),
        })
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d_v, self.d_z, self.d_h)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.token_emb];
        v.extend(self.encoder.tensors());
        v.extend([&self.w_mu, &self.b_mu, &self.w_lv, &self.b_lv]);
        v.extend(self.decoder.tensors());
        v.extend([&self.w_out, &self.b_out]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.token_emb];
        v.extend(self.encoder.tensors_mut());
        v.push(&mut self.w_mu);
        v.push(&mut self.b_mu);
        v.push(&mut self.w_lv);
        v.push(&mut self.b_lv);
        v.extend(self.decoder.tensors_mut());
        v.push(&mut self.w_out);
        v.push(&mut self.b_out);
        v
    }

    /// Rebuild from explicit tensors in canonical order (checkpoint load).
    pub fn from_tensors(
        n_entities: usize,
        n_relations: usize,
        d_v: usize,
        d_z: usize,
        d_h: usize,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Data(format!(
                "generator checkpoint has {} tensors, expected {}",
                tensors.len(),
                PARAM_NAMES.len()
            )));
        }
        let mut template = GeneratorParams::init(n_entities, n_relations, d_v, d_z, d_h, 0)?;
        for (slot, t) in template.tensors_mut().into_iter().zip(tensors) {
            if slot.rows != t.rows || slot.cols != t.cols {
                return Err(Error::Data(format!(
                    "generator tensor shape {}x{} does not match expected {}x{}",
                    t.rows, t.cols, slot.rows, slot.cols
                )));
            }
            *slot = t;
        }
        Ok(template)
    }

    fn entity_token(&self, e: u32) -> Result<usize> {
        if (e as usize) < self.n_entities {
            Ok(e as usize)
        } else {
            Err(Error::Data(format!(
                "entity {e} outside generator vocab of {}",
                self.n_entities
            )))
        }
    }

    fn relation_token(&self, r: u32) -> Result<usize> {
        if (r as usize) < self.n_relations {
            Ok(self.n_entities + r as usize)
        } else {
            Err(Error::Data(format!(
                "relation {r} outside generator vocab of {}",
                self.n_relations
            )))
        }
    }

    fn bos_token(&self) -> usize {
        self.n_entities + self.n_relations
    }

    fn tokens(&self, t: Triple) -> Result<[usize; 3]> {
        Ok([
            self.entity_token(t.head)?,
            self.relation_token(t.relation)?,
            self.entity_token(t.tail)?,
        ])
    }

    /// Grow the vocabulary to a larger entity/relation count, keeping every
    /// learned row and column. Relation tokens sit above the entity range,
    /// so their rows (and output columns) shift to their new positions; the
    /// slots for never-seen tokens are freshly initialized.
    pub fn expand(&mut self, n_entities: usize, n_relations: usize, seed: u64) -> Result<()> {
        if n_entities < self.n_entities || n_relations < self.n_relations {
            return Err(Error::Config(format!(
                "generator cannot shrink vocab from {}+{} to {}+{}",
                self.n_entities, self.n_relations, n_entities, n_relations
            )));
        }
        if n_entities == self.n_entities && n_relations == self.n_relations {
            return Ok(());
        }
        let mut r = rng::stream(seed, &["gen-expand".into(), n_entities.into(), n_relations.into()]);
        let vocab = n_entities + n_relations;

        let mut emb = glorot(vocab + 1, self.d_v, &mut r);
        let copy_row = |dst: &mut Tensor, to: usize, src: &Tensor, from: usize| {
            let cols = src.cols;
            dst.data[to * cols..(to + 1) * cols]
                .copy_from_slice(&src.data[from * cols..(from + 1) * cols]);
        };
        for e in 0..self.n_entities {
            copy_row(&mut emb, e, &self.token_emb, e);
        }
        for rel in 0..self.n_relations {
            copy_row(&mut emb, n_entities + rel, &self.token_emb, self.n_entities + rel);
        }
        copy_row(&mut emb, vocab, &self.token_emb, self.bos_token());

        let mut w_out = glorot(self.d_h, vocab, &mut r);
        let mut b_out = Tensor::zeros(1, vocab);
        for row in 0..self.d_h {
            for e in 0..self.n_entities {
                w_out.data[row * vocab + e] = self.w_out.get(row, e);
            }
            for rel in 0..self.n_relations {
                w_out.data[row * vocab + n_entities + rel] =
                    self.w_out.get(row, self.n_entities + rel);
            }
        }
        for e in 0..self.n_entities {
            b_out.data[e] = self.b_out.data[e];
        }
        for rel in 0..self.n_relations {
            b_out.data[n_entities + rel] = self.b_out.data[self.n_entities + rel];
        }

        self.token_emb = emb;
        self.w_out = w_out;
        self.b_out = b_out;
        self.n_entities = n_entities;
        self.n_relations = n_relations;
        Ok(())
    }
}

// Plain (tape-free) forward helpers, used by encode/decode/sampling. The
// tape in vae_loss rebuilds the same computation; tests cross-check the two.

fn t_sigmoid(t: &Tensor) -> Tensor {
    let data = t
        .data
        .iter()
        .map(|&x| if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) })
        .collect();
    Tensor::from_vec(t.rows, t.cols, data)
}

fn t_tanh(t: &Tensor) -> Tensor {
    Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|x| x.tanh()).collect())
}

fn t_add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

fn t_add_row(a: &Tensor, row: &Tensor) -> Tensor {
    let mut out = a.clone();
    for i in 0..out.rows {
        for j in 0..out.cols {
            out.data[i * out.cols + j] += row.data[j];
        }
    }
    out
}

fn t_hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect())
}

fn gru_cell_plain(w: &GruWeights, x: &Tensor, h: &Tensor) -> Tensor {
    let z = t_sigmoid(&t_add_row(&t_add(&x.matmul(&w.wz), &h.matmul(&w.uz)), &w.bz));
    let r = t_sigmoid(&t_add_row(&t_add(&x.matmul(&w.wr), &h.matmul(&w.ur)), &w.br));
    let rh = t_hadamard(&r, h);
    let c = t_tanh(&t_add_row(&t_add(&x.matmul(&w.wc), &rh.matmul(&w.uc)), &w.bc));
    // h' = (1 - z) * h + z * c
    let mut out = Tensor::zeros(h.rows, h.cols);
    for k in 0..out.data.len() {
        out.data[k] = (1.0 - z.data[k]) * h.data[k] + z.data[k] * c.data[k];
    }
    out
}

fn embed_row(p: &GeneratorParams, token: usize) -> Tensor {
    let d = p.d_v;
    Tensor::from_vec(1, d, p.token_emb.data[token * d..(token + 1) * d].to_vec())
}

/// Posterior parameters for one triple.
pub fn encode(p: &GeneratorParams, t: Triple) -> Result<(Vec<f64>, Vec<f64>)> {
    let tokens = p.tokens(t)?;
    let mut h = Tensor::zeros(1, p.d_h);
    for token in tokens {
        let x = embed_row(p, token);
        h = gru_cell_plain(&p.encoder, &x, &h);
    }
    let mu = t_add_row(&h.matmul(&p.w_mu), &p.b_mu);
    let lv = t_add_row(&h.matmul(&p.w_lv), &p.b_lv);
    Ok((mu.data, lv.data))
}

/// Position mask: steps 0 and 2 admit entities, step 1 admits relations.
fn step_range(p: &GeneratorParams, step: usize) -> (usize, usize) {
    if step == 1 {
        (p.n_entities, p.n_entities + p.n_relations)
    } else {
        (0, p.n_entities)
    }
}

fn decoder_step(p: &GeneratorParams, z: &[f64], prev_token: usize, h: &Tensor) -> (Tensor, Tensor) {
    let emb = embed_row(p, prev_token);
    let mut x = Tensor::zeros(1, p.d_z + p.d_v);
    x.data[..p.d_z].copy_from_slice(z);
    x.data[p.d_z..].copy_from_slice(&emb.data);
    let h_new = gru_cell_plain(&p.decoder, &x, h);
    let logits = t_add_row(&h_new.matmul(&p.w_out), &p.b_out);
    (h_new, logits)
}

fn mask_logits(p: &GeneratorParams, logits: &mut Tensor, step: usize) {
    let (lo, hi) = step_range(p, step);
    for j in 0..logits.cols {
        if j < lo || j >= hi {
            logits.data[j] = f64::NEG_INFINITY;
        }
    }
}

fn argmax_in(logits: &Tensor, lo: usize, hi: usize) -> usize {
    let mut best = lo;
    for j in lo..hi {
        if logits.data[j] > logits.data[best] {
            best = j;
        }
    }
    best
}

/// Greedy decode of a latent: three masked logit rows (disallowed positions
/// are -inf) with the argmax token of each step fed to the next.
pub fn decode(p: &GeneratorParams, z: &[f64]) -> Result<[Vec<f64>; 3]> {
    if z.len() != p.d_z {
        return Err(Error::Data(format!("latent has {} dims, expected {}", z.len(), p.d_z)));
    }
    let mut h = Tensor::zeros(1, p.d_h);
    let mut prev = p.bos_token();
    let mut out: [Vec<f64>; 3] = Default::default();
    for (step, slot) in out.iter_mut().enumerate() {
        let (h_new, mut logits) = decoder_step(p, z, prev, &h);
        mask_logits(p, &mut logits, step);
        let (lo, hi) = step_range(p, step);
        prev = argmax_in(&logits, lo, hi);
        h = h_new;
        *slot = logits.data;
    }
    Ok(out)
}

/// Encode with the posterior mean and decode greedily.
pub fn reconstruct_greedy(p: &GeneratorParams, t: Triple) -> Result<Triple> {
    let (mu, _) = encode(p, t)?;
    let logits = decode(p, &mu)?;
    let head = argmax_in(&Tensor::from_vec(1, logits[0].len(), logits[0].clone()), 0, p.n_entities);
    let rel = argmax_in(
        &Tensor::from_vec(1, logits[1].len(), logits[1].clone()),
        p.n_entities,
        p.n_entities + p.n_relations,
    );
    let tail = argmax_in(&Tensor::from_vec(1, logits[2].len(), logits[2].clone()), 0, p.n_entities);
    Ok(Triple::new(head as u32, (rel - p.n_entities) as u32, tail as u32))
}

/// Draw `count` triples: z ~ N(0, I), then multinomial sampling at
/// temperature 1 within each step's allowed token range.
pub fn sample_triples(p: &GeneratorParams, count: usize, rng: &mut impl Rng) -> Vec<Triple> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z: Vec<f64> = (0..p.d_z).map(|_| rng::normal(rng)).collect();
        let mut h = Tensor::zeros(1, p.d_h);
        let mut prev = p.bos_token();
        let mut picks = [0usize; 3];
        for (step, pick) in picks.iter_mut().enumerate() {
            let (h_new, logits) = decoder_step(p, &z, prev, &h);
            let (lo, hi) = step_range(p, step);
            let max = logits.data[lo..hi].iter().copied().fold(f64::MIN, f64::max);
            let weights: Vec<f64> = logits.data[lo..hi].iter().map(|&l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.gen_range(0.0..total);
            let mut chosen = hi - lo - 1;
            for (k, w) in weights.iter().enumerate() {
                if draw < *w {
                    chosen = k;
                    break;
                }
                draw -= w;
            }
            *pick = lo + chosen;
            prev = lo + chosen;
            h = h_new;
        }
        out.push(Triple::new(
            picks[0] as u32,
            (picks[1] - p.n_entities) as u32,
            picks[2] as u32,
        ));
    }
    out
}

/// KL annealing weight: a sigmoid in the epoch with maximum `lambda_am`,
/// slope `lambda_as`, and midpoint `lambda_ap`.
pub fn anneal_alpha(epoch: usize, lambda_am: f64, lambda_as: f64, lambda_ap: f64) -> f64 {
    lambda_am / (1.0 + (-lambda_as * (epoch as f64 - lambda_ap)).exp())
}

/// Loss pieces of one batch, plus gradients in canonical tensor order.
pub struct VaeLossOut {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub grads: Vec<Tensor>,
}

/// Annealed ELBO (negated, so lower is better): the sum of the three
/// position-masked cross-entropies plus `alpha` times the Gaussian KL, both
/// averaged over the batch. Reconstruction uses a single reparameterized
/// sample whose noise comes from `eps_seed`, making the loss a
/// deterministic function of (params, batch, alpha, eps_seed).
pub fn vae_loss(
    p: &GeneratorParams,
    batch: &[Triple],
    alpha: f64,
    eps_seed: u64,
) -> Result<VaeLossOut> {
    if batch.is_empty() {
        return Err(Error::Data("vae loss needs a nonempty batch".into()));
    }
    let b = batch.len();
    let vocab = p.n_entities + p.n_relations;
    let mut tokens = Vec::with_capacity(b);
    for t in batch {
        tokens.push(p.tokens(*t)?);
    }

    let mut tape = Tape::new();
    let param_ids: Vec<usize> = p.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
    let emb_id = param_ids[0];
    let enc: Vec<usize> = param_ids[1..10].to_vec();
    let (w_mu, b_mu, w_lv, b_lv) = (param_ids[10], param_ids[11], param_ids[12], param_ids[13]);
    let dec: Vec<usize> = param_ids[14..23].to_vec();
    let (w_out, b_out) = (param_ids[23], param_ids[24]);

    let gru = |tape: &mut Tape, w: &[usize], x: usize, h: usize| -> usize {
        let zx = tape.matmul(x, w[0]);
        let zh = tape.matmul(h, w[1]);
        let zs = tape.add(zx, zh);
        let z_pre = tape.add_row_broadcast(zs, w[2]);
        let z = tape.sigmoid(z_pre);
        let rx = tape.matmul(x, w[3]);
        let rh = tape.matmul(h, w[4]);
        let rs = tape.add(rx, rh);
        let r_pre = tape.add_row_broadcast(rs, w[5]);
        let r = tape.sigmoid(r_pre);
        let rh_state = tape.hadamard(r, h);
        let cx = tape.matmul(x, w[6]);
        let ch = tape.matmul(rh_state, w[7]);
        let cs = tape.add(cx, ch);
        let c_pre = tape.add_row_broadcast(cs, w[8]);
        let c = tape.tanh(c_pre);
        let neg_z = tape.scale_const(z, -1.0);
        let one_minus_z = tape.add_const(neg_z, 1.0);
        let keep = tape.hadamard(one_minus_z, h);
        let update = tape.hadamard(z, c);
        tape.add(keep, update)
    };

    // Encoder over the three input tokens.
    let mut h = tape.leaf(Tensor::zeros(b, p.d_h));
    for step in 0..3 {
        let idx: Vec<usize> = tokens.iter().map(|t| t[step]).collect();
        let x = tape.gather(emb_id, idx);
        h = gru(&mut tape, &enc, x, h);
    }
    let mu_lin = tape.matmul(h, w_mu);
    let mu = tape.add_row_broadcast(mu_lin, b_mu);
    let lv_lin = tape.matmul(h, w_lv);
    let lv = tape.add_row_broadcast(lv_lin, b_lv);

    let mut eps_rng = rng::stream(eps_seed, &["gen-eps".into()]);
    let eps_data: Vec<f64> = (0..b * p.d_z).map(|_| rng::normal(&mut eps_rng)).collect();
    let z = tape.reparam(mu, lv, Tensor::from_vec(b, p.d_z, eps_data));

    // Teacher-forced decoder: previous tokens are BOS, head, relation.
    let mut dh = tape.leaf(Tensor::zeros(b, p.d_h));
    let mut ce_ids = Vec::with_capacity(3);
    for step in 0..3 {
        let prev: Vec<usize> = tokens
            .iter()
            .map(|t| if step == 0 { p.bos_token() } else { t[step - 1] })
            .collect();
        let prev_emb = tape.gather(emb_id, prev);
        let x = tape.concat_cols(z, prev_emb);
        dh = gru(&mut tape, &dec, x, dh);
        let logits_lin = tape.matmul(dh, w_out);
        let logits = tape.add_row_broadcast(logits_lin, b_out);
        let targets: Vec<usize> = tokens.iter().map(|t| t[step]).collect();
        let (lo, hi) = step_range(p, step);
        debug_assert!(hi <= vocab);
        ce_ids.push(tape.masked_cross_entropy(logits, targets, lo, hi));
    }
    let ce12 = tape.add(ce_ids[0], ce_ids[1]);
    let recon = tape.add(ce12, ce_ids[2]);
    let kl = tape.gauss_kl(mu, lv);
    let kl_scaled = tape.scale_const(kl, alpha);
    let loss = tape.add(recon, kl_scaled);

    let loss_v = tape.value(loss).scalar();
    if !loss_v.is_finite() {
        return Err(Error::Numerical(format!("generator loss diverged to {loss_v}")));
    }
    let recon_v = tape.value(recon).scalar();
    let kl_v = tape.value(kl).scalar();
    let all = tape.backward(loss);
    let grads: Vec<Tensor> = param_ids.iter().map(|&id| all[id].clone()).collect();
    Ok(VaeLossOut { loss: loss_v, recon: recon_v, kl: kl_v, grads })
}

/// Generator training hyper-parameters.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lambda_am: f64,
    pub lambda_as: f64,
    /// Annealing midpoint epoch; by default a quarter of the epoch budget.
    pub lambda_ap: f64,
}

impl GenConfig {
    pub fn with_epochs(epochs: usize) -> Self {
        GenConfig {
            epochs,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            lambda_am: 1.0,
            lambda_as: 0.05,
            lambda_ap: epochs as f64 / 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("generator epochs and batch size must be positive".into()));
        }
        if self.lr <= 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(
                "generator needs lr > 0 and momentum in [0, 1)".into(),
            ));
        }
        if self.lambda_as <= 0.0 {
            return Err(Error::Config("annealing slope must be positive".into()));
        }
        Ok(())
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::with_epochs(500)
    }
}

/// Mean loss components of one training epoch.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenEpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Train the generator in place with momentum SGD under the KL annealing
/// schedule. If the loss ever turns non-finite, training stops and the
/// parameters roll back to the end of the last finite epoch.
pub fn train_generator(
    p: &mut GeneratorParams,
    triples: &[Triple],
    cfg: &GenConfig,
    seed: u64,
) -> Result<Vec<GenEpochStats>> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::Data("generator training set is empty".into()));
    }
    let mut velocity: Vec<Tensor> =
        p.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut last_good = p.clone();

    'epochs: for epoch in 0..cfg.epochs {
        let alpha = anneal_alpha(epoch, cfg.lambda_am, cfg.lambda_as, cfg.lambda_ap);
        let mut order: Vec<usize> = (0..triples.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::stream(seed, &["gen-shuffle".into(), epoch.into()]));
        }
        let mut sums = (0.0, 0.0, 0.0);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Triple> = chunk.iter().map(|&i| triples[i]).collect();
            let eps_seed =
                rng::derive_seed(seed, &["gen-batch".into(), epoch.into(), batch_idx.into()]);
            let out = match vae_loss(p, &batch, alpha, eps_seed) {
                Ok(out) if out.grads.iter().all(|g| g.all_finite()) => out,
                _ => {
                    log::warn!(
                        "generator diverged at epoch {epoch}; rolling back to last finite epoch"
                    );
                    *p = last_good;
                    break 'epochs;
                }
            };
            sums.0 += out.loss * batch.len() as f64;
            sums.1 += out.recon * batch.len() as f64;
            sums.2 += out.kl * batch.len() as f64;
            for ((theta, v), g) in p.tensors_mut().into_iter().zip(&mut velocity).zip(&out.grads) {
                for k in 0..theta.data.len() {
                    v.data[k] = cfg.momentum * v.data[k] + g.data[k];
                    theta.data[k] -= cfg.lr * v.data[k];
                }
            }
        }
        if !p.all_finite() {
            log::warn!("generator parameters diverged at epoch {epoch}; rolling back");
            *p = last_good;
            break;
        }
        let n = triples.len() as f64;
        trace.push(GenEpochStats {
            epoch: epoch + 1,
            loss: sums.0 / n,
            recon: sums.1 / n,
            kl: sums.2 / n,
        });
        last_good = p.clone();
    }
    Ok(trace)
}
