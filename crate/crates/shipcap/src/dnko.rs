//! Time-varying Koopman surrogate: history encoding, observable lifting,
//! per-step matrix heads, linear rollout, cost/output reconstruction, and
//! the training loop.
//!
//! Model structure: a constant lifted-dynamics matrix A plus, at each
//! control step k, matrices (B_k, D_k, C_k, F_k, Q_k, P_k, b_k) generated
//! once from the current measurement and an LSTM summary of the previous
//! tau steps, then frozen over the prediction horizon:
//!
//!   g_{k+j+1|k} = A g_{k+j|k} + B_k u_{k+j} + D_k d_{k+j}
//!   chat_{k+j|k} = g' Q_k g + P_k' g + b_k      (Q_k diagonal, >= 0)
//!   yhat_{k+j|k} = C_k g_{k+j|k} + F_k d_{k+j}
//!
//! Everything operates in normalized units; the controller de-normalizes
//! at its boundary.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::dataset::{Dataset, Episode, Normalizer, WindowRef};
use crate::error::{Error, Result};
use crate::nn::{Adam, HasParams, Lstm, Mlp, MlpCache, ParamVisitor};

/// Architecture hyperparameters. Defaults follow the reference setup;
/// smaller instances are used by gradient-validation tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnkoSpec {
    /// Measured partial-state width.
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// Hidden widths of every DNN trunk.
    pub hidden: Vec<usize>,
    /// Pre-encoding output width (LSTM input).
    pub pre_out: usize,
    pub lstm_width: usize,
    /// Observable dimension h.
    pub n_obs: usize,
    /// History horizon.
    pub tau: usize,
    /// Prediction horizon.
    pub t_f: usize,
}

impl Default for DnkoSpec {
    fn default() -> Self {
        Self {
            n_x: crate::plant::N_MEAS,
            n_u: 3,
            n_y: 4,
            hidden: vec![128, 128],
            pre_out: 32,
            lstm_width: 16,
            n_obs: 40,
            tau: 4,
            t_f: 16,
        }
    }
}

impl DnkoSpec {
    /// A small instance with the full structure, for finite-difference
    /// validation at reasonable cost.
    pub fn tiny() -> Self {
        Self {
            n_x: 5,
            n_u: 3,
            n_y: 4,
            hidden: vec![8, 8],
            pre_out: 6,
            lstm_width: 4,
            n_obs: 7,
            tau: 4,
            t_f: 5,
        }
    }

    fn widths(&self, n_in: usize, n_out: usize) -> Vec<usize> {
        let mut w = vec![n_in];
        w.extend_from_slice(&self.hidden);
        w.push(n_out);
        w
    }
}

/// All trainable arrays. Mirror instances (`zeros_like`) hold gradients.
#[derive(Debug, Clone)]
pub struct DnkoParams {
    /// Constant Koopman matrix, n_obs x n_obs.
    pub a: DMatrix<f64>,
    /// History-step encoder: (x, u, d) -> LSTM input.
    pub pre: Mlp,
    pub lstm: Lstm,
    /// Observable network g_theta on (x_k, h_k).
    pub post: Mlp,
    pub head_b: Mlp,
    pub head_d: Mlp,
    pub head_c: Mlp,
    pub head_f: Mlp,
    /// ReLU output keeps the diagonal of Q_k nonnegative.
    pub head_q: Mlp,
    pub head_p: Mlp,
    pub head_bias: Mlp,
}

impl DnkoParams {
    pub fn init(spec: &DnkoSpec, rng: &mut impl Rng) -> Self {
        let n_hist_in = spec.n_x + spec.n_u + 1;
        let n_ctx = spec.n_x + spec.lstm_width;
        let h = spec.n_obs;
        // Start the lifted dynamics as a mild contraction so early
        // 16-step rollouts stay bounded.
        let mut a = DMatrix::identity(h, h) * 0.95;
        for v in a.iter_mut() {
            *v += rng.random_range(-0.01..0.01);
        }
        Self {
            a,
            pre: Mlp::init(&spec.widths(n_hist_in, spec.pre_out), false, rng),
            lstm: Lstm::init(spec.pre_out, spec.lstm_width, rng),
            post: Mlp::init(&spec.widths(n_ctx, h), false, rng),
            head_b: Mlp::init(&spec.widths(n_ctx, h * spec.n_u), false, rng),
            head_d: Mlp::init(&spec.widths(n_ctx, h), false, rng),
            head_c: Mlp::init(&spec.widths(n_ctx, spec.n_y * h), false, rng),
            head_f: Mlp::init(&spec.widths(n_ctx, spec.n_y), false, rng),
            head_q: Mlp::init(&spec.widths(n_ctx, h), true, rng),
            head_p: Mlp::init(&spec.widths(n_ctx, h), false, rng),
            head_bias: Mlp::init(&spec.widths(n_ctx, 1), false, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            a: DMatrix::zeros(self.a.nrows(), self.a.ncols()),
            pre: self.pre.zeros_like(),
            lstm: self.lstm.zeros_like(),
            post: self.post.zeros_like(),
            head_b: self.head_b.zeros_like(),
            head_d: self.head_d.zeros_like(),
            head_c: self.head_c.zeros_like(),
            head_f: self.head_f.zeros_like(),
            head_q: self.head_q.zeros_like(),
            head_p: self.head_p.zeros_like(),
            head_bias: self.head_bias.zeros_like(),
        }
    }
}

impl HasParams for DnkoParams {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor) {
        v.visit(
            &format!("{prefix}a"),
            &[self.a.ncols(), self.a.nrows()],
            self.a.as_mut_slice(),
        );
        self.pre.visit_params(&format!("{prefix}pre."), v);
        self.lstm.visit_params(&format!("{prefix}lstm."), v);
        self.post.visit_params(&format!("{prefix}post."), v);
        self.head_b.visit_params(&format!("{prefix}head_b."), v);
        self.head_d.visit_params(&format!("{prefix}head_d."), v);
        self.head_c.visit_params(&format!("{prefix}head_c."), v);
        self.head_f.visit_params(&format!("{prefix}head_f."), v);
        self.head_q.visit_params(&format!("{prefix}head_q."), v);
        self.head_p.visit_params(&format!("{prefix}head_p."), v);
        self.head_bias.visit_params(&format!("{prefix}head_bias."), v);
    }
}

/// The trained surrogate: parameters plus the normalizer it was fit in.
#[derive(Debug, Clone)]
pub struct DnkoModel {
    pub spec: DnkoSpec,
    pub params: DnkoParams,
    pub norm: Normalizer,
}

/// Frozen per-step context: the current observable and the matrices held
/// constant over the prediction horizon.
#[derive(Debug, Clone)]
pub struct EncodedContext {
    pub g0: DVector<f64>,
    /// n_obs x n_u.
    pub b: DMatrix<f64>,
    pub d: DVector<f64>,
    /// n_y x n_obs.
    pub c: DMatrix<f64>,
    pub f: DVector<f64>,
    /// Diagonal of Q_k (nonnegative).
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub bias: f64,
}

/// Observable trajectory with reconstructed costs and outputs
/// (j = 1..=t_f entries for chat/yhat, j = 0..=t_f for g).
#[derive(Debug, Clone)]
pub struct LiftedTrajectory {
    pub g: Vec<DVector<f64>>,
    pub chat: Vec<f64>,
    pub yhat: Vec<DVector<f64>>,
}

/// A batch of episodes rearranged into per-time-step matrices
/// (rows = samples, all in normalized units).
#[derive(Debug, Clone)]
pub struct Batch {
    /// tau history steps of concatenated (x, u, d).
    pub hist: Vec<DMatrix<f64>>,
    /// Measurement at step k.
    pub x_k: DMatrix<f64>,
    /// Inputs u_{k+j}, j = 0..t_f-1.
    pub u: Vec<DMatrix<f64>>,
    /// Loads d_{k+j}, j = 0..t_f-1 (drives the rollout).
    pub d_roll: Vec<DVector<f64>>,
    /// Loads d_{k+j}, j = 1..=t_f (enters the output map).
    pub d_out: Vec<DVector<f64>>,
    /// Target outputs y_{k+j}, j = 1..=t_f.
    pub y: Vec<DMatrix<f64>>,
    /// Target stage costs c_{k+j}, j = 1..=t_f.
    pub c: Vec<DVector<f64>>,
}

impl Batch {
    pub fn from_episodes(eps: &[&Episode], spec: &DnkoSpec) -> Batch {
        let m = eps.len();
        let (tau, t_f) = (spec.tau, spec.t_f);
        for e in eps {
            assert_eq!(e.x.len(), tau + t_f + 1, "episode length mismatch");
        }
        let n_hist = spec.n_x + spec.n_u + 1;
        let hist = (0..tau)
            .map(|t| {
                DMatrix::from_fn(m, n_hist, |r, c| {
                    let e = eps[r];
                    if c < spec.n_x {
                        e.x[t][c]
                    } else if c < spec.n_x + spec.n_u {
                        e.u[t][c - spec.n_x]
                    } else {
                        e.d[t]
                    }
                })
            })
            .collect();
        Batch {
            hist,
            x_k: DMatrix::from_fn(m, spec.n_x, |r, c| eps[r].x[tau][c]),
            u: (0..t_f)
                .map(|j| DMatrix::from_fn(m, spec.n_u, |r, c| eps[r].u[tau + j][c]))
                .collect(),
            d_roll: (0..t_f)
                .map(|j| DVector::from_fn(m, |r, _| eps[r].d[tau + j]))
                .collect(),
            d_out: (1..=t_f)
                .map(|j| DVector::from_fn(m, |r, _| eps[r].d[tau + j]))
                .collect(),
            y: (1..=t_f)
                .map(|j| DMatrix::from_fn(m, spec.n_y, |r, c| eps[r].y[tau + j][c]))
                .collect(),
            c: (1..=t_f)
                .map(|j| DVector::from_fn(m, |r, _| eps[r].c[tau + j]))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x_k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Forward-pass intermediates kept for the backward pass.
pub struct ForwardCache {
    pre_caches: Vec<MlpCache>,
    lstm_caches: Vec<crate::nn::LstmStepCache>,
    post_cache: MlpCache,
    cf: DMatrix<f64>,
    qf: DMatrix<f64>,
    pf: DMatrix<f64>,
    cache_b: MlpCache,
    cache_d: MlpCache,
    cache_c: MlpCache,
    cache_f: MlpCache,
    cache_q: MlpCache,
    cache_p: MlpCache,
    cache_bias: MlpCache,
    /// g_{k+j|k} for j = 0..=t_f.
    pub g: Vec<DMatrix<f64>>,
    /// Predicted outputs, j = 1..=t_f.
    pub yhat: Vec<DMatrix<f64>>,
    /// Predicted costs, j = 1..=t_f.
    pub chat: Vec<DVector<f64>>,
}

impl DnkoModel {
    pub fn init(spec: DnkoSpec, norm: Normalizer, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            params: DnkoParams::init(&spec, &mut rng),
            spec,
            norm,
        }
    }

    /// Run the encoder + heads + rollout over a batch.
    pub fn forward(&self, b: &Batch) -> ForwardCache {
        let spec = &self.spec;
        let p = &self.params;
        let m = b.len();
        let h = spec.n_obs;

        let mut pre_caches = Vec::with_capacity(spec.tau);
        let mut zs = Vec::with_capacity(spec.tau);
        for t in 0..spec.tau {
            let (z, cache) = p.pre.forward(&b.hist[t]);
            zs.push(z);
            pre_caches.push(cache);
        }
        let (hk, lstm_caches) = p.lstm.forward_seq(&zs);

        let mut xh = DMatrix::zeros(m, spec.n_x + spec.lstm_width);
        xh.columns_mut(0, spec.n_x).copy_from(&b.x_k);
        xh.columns_mut(spec.n_x, spec.lstm_width).copy_from(&hk);

        let (g0, post_cache) = p.post.forward(&xh);
        let (bf, cache_b) = p.head_b.forward(&xh);
        let (df, cache_d) = p.head_d.forward(&xh);
        let (cf, cache_c) = p.head_c.forward(&xh);
        let (ff, cache_f) = p.head_f.forward(&xh);
        let (qf, cache_q) = p.head_q.forward(&xh);
        let (pf, cache_p) = p.head_p.forward(&xh);
        let (biasf, cache_bias) = p.head_bias.forward(&xh);

        // Linear rollout with per-sample B_k, D_k.
        let mut g = Vec::with_capacity(spec.t_f + 1);
        g.push(g0);
        for j in 0..spec.t_f {
            let mut next = &g[j] * p.a.transpose();
            for r in 0..m {
                for gi in 0..h {
                    let mut add = df[(r, gi)] * b.d_roll[j][r];
                    for ui in 0..spec.n_u {
                        add += bf[(r, gi * spec.n_u + ui)] * b.u[j][(r, ui)];
                    }
                    next[(r, gi)] += add;
                }
            }
            g.push(next);
        }

        // Reconstructions for j = 1..=t_f.
        let mut yhat = Vec::with_capacity(spec.t_f);
        let mut chat = Vec::with_capacity(spec.t_f);
        for j in 1..=spec.t_f {
            let gj = &g[j];
            let mut yj = DMatrix::zeros(m, spec.n_y);
            let mut cj = DVector::zeros(m);
            for r in 0..m {
                for yi in 0..spec.n_y {
                    let mut v = ff[(r, yi)] * b.d_out[j - 1][r];
                    for gi in 0..h {
                        v += cf[(r, yi * h + gi)] * gj[(r, gi)];
                    }
                    yj[(r, yi)] = v;
                }
                let mut cv = biasf[(r, 0)];
                for gi in 0..h {
                    let gv = gj[(r, gi)];
                    cv += qf[(r, gi)] * gv * gv + pf[(r, gi)] * gv;
                }
                cj[r] = cv;
            }
            yhat.push(yj);
            chat.push(cj);
        }

        ForwardCache {
            pre_caches,
            lstm_caches,
            post_cache,
            cf,
            qf,
            pf,
            cache_b,
            cache_d,
            cache_c,
            cache_f,
            cache_q,
            cache_p,
            cache_bias,
            g,
            yhat,
            chat,
        }
    }

    /// Mean-per-sample data loss of a completed forward pass.
    pub fn data_loss(&self, fc: &ForwardCache, b: &Batch) -> f64 {
        let m = b.len() as f64;
        let mut loss = 0.0;
        for j in 0..self.spec.t_f {
            let ey = &fc.yhat[j] - &b.y[j];
            loss += ey.iter().map(|v| v * v).sum::<f64>();
            let ec = &fc.chat[j] - &b.c[j];
            loss += ec.iter().map(|v| v * v).sum::<f64>();
        }
        loss / m
    }

    /// L2 penalty: coefficient times the mean squared parameter value
    /// (mean rather than sum so the strength is independent of model size).
    pub fn reg_loss(&self, l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        let mut p = self.params.clone();
        let flat = p.flatten();
        l2 * flat.iter().map(|v| v * v).sum::<f64>() / flat.len() as f64
    }

    /// Total training loss of a batch.
    pub fn loss(&self, b: &Batch, l2: f64) -> f64 {
        let fc = self.forward(b);
        self.data_loss(&fc, b) + self.reg_loss(l2)
    }

    /// Accumulate gradients of the total loss into `grads`;
    /// returns the loss value.
    pub fn backward(&self, b: &Batch, l2: f64, grads: &mut DnkoParams) -> f64 {
        let fc = self.forward(b);
        let loss = self.data_loss(&fc, b) + self.reg_loss(l2);
        let spec = &self.spec;
        let p = &self.params;
        let m = b.len();
        let h = spec.n_obs;
        let scale = 2.0 / m as f64;

        let mut d_g: Vec<DMatrix<f64>> = (0..=spec.t_f)
            .map(|_| DMatrix::zeros(m, h))
            .collect();
        let mut d_bf = DMatrix::zeros(m, h * spec.n_u);
        let mut d_df = DMatrix::zeros(m, h);
        let mut d_cf = DMatrix::zeros(m, spec.n_y * h);
        let mut d_ff = DMatrix::zeros(m, spec.n_y);
        let mut d_qf = DMatrix::zeros(m, h);
        let mut d_pf = DMatrix::zeros(m, h);
        let mut d_biasf = DMatrix::zeros(m, 1);

        // Reconstruction errors feed g, C, F, Q, P, b.
        for j in 1..=spec.t_f {
            let gj = &fc.g[j];
            let dy = (&fc.yhat[j - 1] - &b.y[j - 1]) * scale;
            let dc = (&fc.chat[j - 1] - &b.c[j - 1]) * scale;
            for r in 0..m {
                for yi in 0..spec.n_y {
                    let dv = dy[(r, yi)];
                    if dv != 0.0 {
                        for gi in 0..h {
                            d_cf[(r, yi * h + gi)] += dv * gj[(r, gi)];
                            d_g[j][(r, gi)] += dv * fc.cf[(r, yi * h + gi)];
                        }
                        d_ff[(r, yi)] += dv * b.d_out[j - 1][r];
                    }
                }
                let dcv = dc[r];
                if dcv != 0.0 {
                    d_biasf[(r, 0)] += dcv;
                    for gi in 0..h {
                        let gv = gj[(r, gi)];
                        d_qf[(r, gi)] += dcv * gv * gv;
                        d_pf[(r, gi)] += dcv * gv;
                        d_g[j][(r, gi)] += dcv * (2.0 * fc.qf[(r, gi)] * gv + fc.pf[(r, gi)]);
                    }
                }
            }
        }

        // Back through the rollout recursion.
        for j in (1..=spec.t_f).rev() {
            let (head, tail) = d_g.split_at_mut(j);
            let dgj = &tail[0];
            grads.a += dgj.transpose() * &fc.g[j - 1];
            for r in 0..m {
                for gi in 0..h {
                    let dv = dgj[(r, gi)];
                    if dv != 0.0 {
                        for ui in 0..spec.n_u {
                            d_bf[(r, gi * spec.n_u + ui)] += dv * b.u[j - 1][(r, ui)];
                        }
                        d_df[(r, gi)] += dv * b.d_roll[j - 1][r];
                    }
                }
            }
            head[j - 1] += dgj * &p.a;
        }

        // Back through the heads and the observable network into xh.
        let mut d_xh = p.post.backward(&fc.post_cache, &d_g[0], &mut grads.post);
        d_xh += p.head_b.backward(&fc.cache_b, &d_bf, &mut grads.head_b);
        d_xh += p.head_d.backward(&fc.cache_d, &d_df, &mut grads.head_d);
        d_xh += p.head_c.backward(&fc.cache_c, &d_cf, &mut grads.head_c);
        d_xh += p.head_f.backward(&fc.cache_f, &d_ff, &mut grads.head_f);
        d_xh += p.head_q.backward(&fc.cache_q, &d_qf, &mut grads.head_q);
        d_xh += p.head_p.backward(&fc.cache_p, &d_pf, &mut grads.head_p);
        d_xh += p
            .head_bias
            .backward(&fc.cache_bias, &d_biasf, &mut grads.head_bias);

        // Hidden-state part of xh flows back through the LSTM and the
        // per-step pre-encoder (x_k part is an input, not a parameter).
        let dh = d_xh.columns(spec.n_x, spec.lstm_width).into_owned();
        let dzs = p.lstm.backward_seq(&fc.lstm_caches, &dh, &mut grads.lstm);
        for (t, dz) in dzs.iter().enumerate() {
            p.pre.backward(&fc.pre_caches[t], dz, &mut grads.pre);
        }

        // L2 term: d/dtheta [ l2 * mean(theta^2) ] = 2 l2 theta / N.
        if l2 != 0.0 {
            let mut params = self.params.clone();
            let flat = params.flatten();
            let mut gflat = grads.flatten();
            let k = 2.0 * l2 / flat.len() as f64;
            gflat += k * &flat;
            grads.unflatten(&gflat).expect("matching layout");
        }
        loss
    }

    /// Encode one control step from physical-unit history.
    /// Histories are ordered oldest first and must have length tau.
    pub fn encode(
        &self,
        x_hist: &[DVector<f64>],
        u_hist: &[[f64; 3]],
        d_hist: &[f64],
        x_k: &DVector<f64>,
    ) -> Result<EncodedContext> {
        let spec = &self.spec;
        if x_hist.len() != spec.tau || u_hist.len() != spec.tau || d_hist.len() != spec.tau {
            return Err(Error::Shape(format!(
                "need exactly tau = {} history steps, got {}/{}/{}",
                spec.tau,
                x_hist.len(),
                u_hist.len(),
                d_hist.len()
            )));
        }
        let p = &self.params;
        let n_hist = spec.n_x + spec.n_u + 1;
        let zs: Vec<DMatrix<f64>> = (0..spec.tau)
            .map(|t| {
                let xn = self.norm.norm_x(&x_hist[t]);
                let un = self.norm.norm_u(&u_hist[t]);
                let dn = self.norm.norm_d(d_hist[t]);
                let mut row = DMatrix::zeros(1, n_hist);
                for i in 0..spec.n_x {
                    row[(0, i)] = xn[i];
                }
                for i in 0..spec.n_u {
                    row[(0, spec.n_x + i)] = un[i];
                }
                row[(0, n_hist - 1)] = dn;
                p.pre.infer(&row)
            })
            .collect();
        let (hk, _) = p.lstm.forward_seq(&zs);

        let xn = self.norm.norm_x(x_k);
        let mut xh = DMatrix::zeros(1, spec.n_x + spec.lstm_width);
        for i in 0..spec.n_x {
            xh[(0, i)] = xn[i];
        }
        for i in 0..spec.lstm_width {
            xh[(0, spec.n_x + i)] = hk[(0, i)];
        }
        Ok(self.context_from_xh(&xh))
    }

    fn context_from_xh(&self, xh: &DMatrix<f64>) -> EncodedContext {
        let spec = &self.spec;
        let p = &self.params;
        let h = spec.n_obs;
        let g0 = p.post.infer(xh);
        let bf = p.head_b.infer(xh);
        let df = p.head_d.infer(xh);
        let cf = p.head_c.infer(xh);
        let ff = p.head_f.infer(xh);
        let qf = p.head_q.infer(xh);
        let pf = p.head_p.infer(xh);
        let biasf = p.head_bias.infer(xh);
        EncodedContext {
            g0: DVector::from_fn(h, |i, _| g0[(0, i)]),
            b: DMatrix::from_fn(h, spec.n_u, |gi, ui| bf[(0, gi * spec.n_u + ui)]),
            d: DVector::from_fn(h, |i, _| df[(0, i)]),
            c: DMatrix::from_fn(spec.n_y, h, |yi, gi| cf[(0, yi * h + gi)]),
            f: DVector::from_fn(spec.n_y, |i, _| ff[(0, i)]),
            q: DVector::from_fn(h, |i, _| qf[(0, i)]),
            p: DVector::from_fn(h, |i, _| pf[(0, i)]),
            bias: biasf[(0, 0)],
        }
    }

    /// Persist parameters + spec + normalizer.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        let mut params = self.params.clone();
        params.store(&mut c);
        self.norm.store(&mut c, "norm/");
        c.meta = serde_json::json!({
            "kind": "dnko-checkpoint",
            "spec": self.spec,
        });
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let spec: DnkoSpec = serde_json::from_value(c.meta["spec"].clone())?;
        let norm = Normalizer::restore(&c, "norm/")?;
        let mut model = DnkoModel::init(spec, norm, 0);
        model.params.restore(&c)?;
        Ok(model)
    }
}

/// Exact linear rollout of the frozen context (normalized units).
/// `us` and `ds` must have horizon length; g gets horizon+1 entries.
pub fn rollout(
    ctx: &EncodedContext,
    a: &DMatrix<f64>,
    us: &[DVector<f64>],
    ds: &[f64],
) -> Result<Vec<DVector<f64>>> {
    if us.len() != ds.len() {
        return Err(Error::Shape(format!(
            "rollout input lengths differ: {} vs {}",
            us.len(),
            ds.len()
        )));
    }
    let mut g = Vec::with_capacity(us.len() + 1);
    g.push(ctx.g0.clone());
    for j in 0..us.len() {
        let next = a * &g[j] + &ctx.b * &us[j] + &ctx.d * ds[j];
        g.push(next);
    }
    Ok(g)
}

/// Reconstructed stage cost chat = g' Q g + P' g + b.
pub fn predict_cost(ctx: &EncodedContext, g: &DVector<f64>) -> f64 {
    let mut c = ctx.bias;
    for i in 0..g.len() {
        c += ctx.q[i] * g[i] * g[i] + ctx.p[i] * g[i];
    }
    c
}

/// Reconstructed output yhat = C g + F d.
pub fn predict_output(ctx: &EncodedContext, g: &DVector<f64>, d: f64) -> DVector<f64> {
    &ctx.c * g + &ctx.f * d
}

/// Full prediction over a horizon from a frozen context.
pub fn predict_trajectory(
    model: &DnkoModel,
    ctx: &EncodedContext,
    us: &[DVector<f64>],
    ds: &[f64],
) -> Result<LiftedTrajectory> {
    let g = rollout(ctx, &model.params.a, us, ds)?;
    let mut chat = Vec::with_capacity(us.len());
    let mut yhat = Vec::with_capacity(us.len());
    for j in 1..g.len() {
        chat.push(predict_cost(ctx, &g[j]));
        yhat.push(predict_output(ctx, &g[j], ds[j - 1]));
    }
    Ok(LiftedTrajectory { g, chat, yhat })
}

/// Training schedule. Defaults follow the reference hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate decay factor.
    pub gamma: f64,
    /// Epoch interval between decays.
    pub decay_every: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            lr: 5e-3,
            gamma: 0.5,
            decay_every: 200,
            l2: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_val(&self) -> f64 {
        self.curve.last().map(|e| e.val_loss).unwrap_or(f64::NAN)
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "epoch,train_loss,val_loss,lr")?;
        for e in &self.curve {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr)?;
        }
        Ok(())
    }
}

fn mean_loss_over(model: &DnkoModel, ds: &Dataset, windows: &[WindowRef], bs: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in windows.chunks(bs) {
        let eps: Vec<Episode> = chunk.iter().map(|w| ds.window(w)).collect();
        let refs: Vec<&Episode> = eps.iter().collect();
        let b = Batch::from_episodes(&refs, &model.spec);
        let fc = model.forward(&b);
        total += model.data_loss(&fc, &b) * chunk.len() as f64;
        n += chunk.len();
    }
    total / n as f64
}

/// Mean squared prediction error per channel-step over the 16-step
/// horizon (outputs + cost, normalized units) on the given split.
pub fn horizon_mse(model: &DnkoModel, ds: &Dataset, windows: &[WindowRef]) -> f64 {
    let per_window = mean_loss_over(model, ds, windows, 256);
    per_window / (model.spec.t_f * (model.spec.n_y + 1)) as f64
}

/// Minibatch Adam training per the reference algorithm: shuffled batches,
/// per-epoch validation, learning-rate decay every `decay_every` epochs.
pub fn train(
    model: &mut DnkoModel,
    ds: &Dataset,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let n_params = model.params.n_params();
    let mut adam = Adam::new(n_params, tc.lr);
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 1..=tc.epochs {
        // Fisher-Yates shuffle from the dedicated stream.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut n_seen = 0usize;
        for (bi, chunk) in order.chunks(tc.batch_size).enumerate() {
            let eps: Vec<Episode> = chunk.iter().map(|&i| ds.window(&ds.train[i])).collect();
            let refs: Vec<&Episode> = eps.iter().collect();
            let batch = Batch::from_episodes(&refs, &model.spec);
            let mut grads = model.params.zeros_like();
            let loss = model.backward(&batch, tc.l2, &mut grads);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            n_seen += chunk.len();
            let mut flat = model.params.flatten();
            let gflat = grads.flatten();
            adam.step(&mut flat, &gflat)?;
            model.params.unflatten(&flat)?;
        }
        if epoch % tc.decay_every == 0 {
            adam.decay_lr(tc.gamma);
        }
        let val_loss = if ds.val.is_empty() {
            f64::NAN
        } else {
            mean_loss_over(model, ds, &ds.val, 256)
        };
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / n_seen.max(1) as f64,
            val_loss,
            lr: adam.lr,
        };
        log::info!(
            "epoch {}: train {:.5e} val {:.5e} lr {:.2e}",
            stats.epoch,
            stats.train_loss,
            stats.val_loss,
            stats.lr
        );
        report.curve.push(stats);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, max_rel_error};
    use approx::assert_relative_eq;

    fn unit_norm(n_x: usize) -> Normalizer {
        Normalizer {
            x_mean: DVector::zeros(n_x),
            x_std: DVector::from_element(n_x, 1.0),
            u_mean: [0.0; 3],
            u_std: [1.0; 3],
            d_mean: 0.0,
            d_std: 1.0,
            y_mean: [0.0; 4],
            y_std: [1.0; 4],
            c_mean: 0.0,
            c_std: 1.0,
        }
    }

    fn synth_episode(spec: &DnkoSpec, seed: u64) -> Episode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = spec.tau + spec.t_f + 1;
        let mut r = || -> f64 { rng.random_range(-1.0..1.0) };
        Episode {
            x: (0..len)
                .map(|_| DVector::from_fn(spec.n_x, |_, _| r()))
                .collect(),
            u: (0..len).map(|_| [r(), r(), r()]).collect(),
            d: (0..len).map(|_| r()).collect(),
            y: (0..len).map(|_| [r(), r(), r(), r()]).collect(),
            c: (0..len).map(|_| r()).collect(),
        }
    }

    fn tiny_model(seed: u64) -> DnkoModel {
        let spec = DnkoSpec::tiny();
        let norm = unit_norm(spec.n_x);
        DnkoModel::init(spec, norm, seed)
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut model = tiny_model(21);
        let eps: Vec<Episode> = (0..4).map(|i| synth_episode(&model.spec, 100 + i)).collect();
        let refs: Vec<&Episode> = eps.iter().collect();
        let batch = Batch::from_episodes(&refs, &model.spec);

        let mut grads = model.params.zeros_like();
        model.backward(&batch, 0.1, &mut grads);
        let analytic = grads.flatten();

        let theta = model.params.flatten();
        let spec = model.spec.clone();
        let norm = model.norm.clone();
        let mut f = |p: &DVector<f64>| {
            let mut m2 = DnkoModel::init(spec.clone(), norm.clone(), 0);
            m2.params.unflatten(p).unwrap();
            m2.loss(&batch, 0.1)
        };
        let numeric = finite_difference(&mut f, &theta);
        let err = max_rel_error(&analytic, &numeric);
        assert!(err < 1e-5, "max relative gradient error {err}");
    }

    #[test]
    fn zero_history_zero_bias_gives_zero_hidden_and_observables() {
        let mut model = tiny_model(3);
        // Zero all parameters except A: encoders become the zero map.
        let n = model.params.n_params();
        model.params.unflatten(&DVector::zeros(n)).unwrap();
        let x0 = DVector::zeros(model.spec.n_x);
        let hist_x = vec![x0.clone(); model.spec.tau];
        let hist_u = vec![[0.0; 3]; model.spec.tau];
        let hist_d = vec![0.0; model.spec.tau];
        let ctx = model.encode(&hist_x, &hist_u, &hist_d, &x0).unwrap();
        assert!(ctx.g0.iter().all(|v| *v == 0.0));
        assert!(ctx.q.iter().all(|v| *v == 0.0));
        assert_eq!(ctx.bias, 0.0);
    }

    #[test]
    fn history_order_matters() {
        let model = tiny_model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xs: Vec<DVector<f64>> = (0..model.spec.tau)
            .map(|_| DVector::from_fn(model.spec.n_x, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let us = vec![[0.1, -0.2, 0.3]; model.spec.tau];
        let ds = vec![0.5; model.spec.tau];
        let x_k = DVector::zeros(model.spec.n_x);
        let fwd = model.encode(&xs, &us, &ds, &x_k).unwrap();
        let mut rev_xs = xs.clone();
        rev_xs.reverse();
        let rev = model.encode(&rev_xs, &us, &ds, &x_k).unwrap();
        assert_ne!(fwd.g0, rev.g0);

        // Determinism: identical inputs, identical context.
        let again = model.encode(&xs, &us, &ds, &x_k).unwrap();
        assert_eq!(fwd.g0, again.g0);
        assert_eq!(fwd.b, again.b);
    }

    #[test]
    fn wrong_history_length_is_an_error() {
        let model = tiny_model(5);
        let x0 = DVector::zeros(model.spec.n_x);
        let r = model.encode(&[x0.clone()], &[[0.0; 3]], &[0.0], &x0);
        assert!(r.is_err());
    }

    #[test]
    fn default_spec_shapes() {
        let spec = DnkoSpec::default();
        let model = DnkoModel::init(spec, unit_norm(crate::plant::N_MEAS), 1);
        let x0 = DVector::zeros(model.spec.n_x);
        let hist = vec![x0.clone(); 4];
        let ctx = model
            .encode(&hist, &[[0.0; 3]; 4], &[0.0; 4], &x0)
            .unwrap();
        assert_eq!(ctx.g0.len(), 40);
        assert_eq!(ctx.b.shape(), (40, 3));
        assert_eq!(ctx.d.len(), 40);
        assert_eq!(ctx.c.shape(), (4, 40));
        assert_eq!(ctx.f.len(), 4);
        assert_eq!(ctx.q.len(), 40);
    }

    #[test]
    fn q_head_is_nonnegative_on_random_inputs() {
        let model = tiny_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let x_k = DVector::from_fn(model.spec.n_x, |_, _| rng.random_range(-3.0..3.0));
            let hist: Vec<DVector<f64>> = (0..model.spec.tau)
                .map(|_| DVector::from_fn(model.spec.n_x, |_, _| rng.random_range(-3.0..3.0)))
                .collect();
            let ctx = model
                .encode(&hist, &[[0.2, 0.1, -0.4]; 4], &[0.3; 4], &x_k)
                .unwrap();
            assert!(ctx.q.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn rollout_identities() {
        let h = 2;
        let ctx = EncodedContext {
            g0: DVector::from_vec(vec![1.0, -2.0]),
            b: DMatrix::zeros(h, 3),
            d: DVector::zeros(h),
            c: DMatrix::zeros(4, h),
            f: DVector::zeros(4),
            q: DVector::zeros(h),
            p: DVector::zeros(h),
            bias: 0.0,
        };
        // A = I, B = 0, D = 0: constant observables.
        let a = DMatrix::identity(h, h);
        let us = vec![DVector::from_vec(vec![1.0, 1.0, 1.0]); 5];
        let ds = vec![1.0; 5];
        let g = rollout(&ctx, &a, &us, &ds).unwrap();
        for gj in &g {
            assert_eq!(gj, &ctx.g0);
        }

        // g0 = 0, A = 0: one step gives exactly B u + D d.
        let mut ctx2 = ctx.clone();
        ctx2.g0 = DVector::zeros(h);
        ctx2.b = DMatrix::from_row_slice(h, 3, &[1.0, 0.0, 2.0, 0.0, -1.0, 0.0]);
        ctx2.d = DVector::from_vec(vec![0.5, 0.0]);
        let a0 = DMatrix::zeros(h, h);
        let u = DVector::from_vec(vec![2.0, 3.0, -1.0]);
        let g = rollout(&ctx2, &a0, &[u], &[2.0]).unwrap();
        assert_eq!(g[1][0], 2.0 - 2.0 + 1.0);
        assert_eq!(g[1][1], -3.0);
    }

    #[test]
    fn rollout_hand_case_nilpotent() {
        // A = [[0,1],[0,0]], B = [[0],[1]] (single input), u = (1, 0).
        let ctx = EncodedContext {
            g0: DVector::zeros(2),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            d: DVector::zeros(2),
            c: DMatrix::zeros(4, 2),
            f: DVector::zeros(4),
            q: DVector::zeros(2),
            p: DVector::zeros(2),
            bias: 0.0,
        };
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let us = vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.0]),
        ];
        let g = rollout(&ctx, &a, &us, &[0.0, 0.0]).unwrap();
        assert_eq!(g[1].as_slice(), &[0.0, 1.0]);
        assert_eq!(g[2].as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn rollout_is_affine_in_inputs() {
        let model = tiny_model(8);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x_k = DVector::from_fn(model.spec.n_x, |_, _| rng.random_range(-1.0..1.0));
        let hist: Vec<DVector<f64>> = (0..model.spec.tau)
            .map(|_| DVector::from_fn(model.spec.n_x, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let ctx = model
            .encode(&hist, &[[0.0; 3]; 4], &[0.1; 4], &x_k)
            .unwrap();
        let t = model.spec.t_f;
        let mut mk_us = |scale: f64| -> Vec<DVector<f64>> {
            (0..t)
                .map(|_| DVector::from_fn(3, |_, _| scale * rng.random_range(-1.0..1.0)))
                .collect()
        };
        let u1 = mk_us(1.0);
        let u2 = mk_us(1.0);
        let ds = vec![0.2; t];
        let zero_u = vec![DVector::zeros(3); t];
        let a = &model.params.a;
        let g1 = rollout(&ctx, a, &u1, &ds).unwrap();
        let g2 = rollout(&ctx, a, &u2, &ds).unwrap();
        let gsum: Vec<DVector<f64>> = (0..t)
            .map(|j| DVector::from_fn(3, |i, _| u1[j][i] + u2[j][i]))
            .collect();
        let gs = rollout(&ctx, a, &gsum, &ds).unwrap();
        let g0r = rollout(&ctx, a, &zero_u, &ds).unwrap();
        for j in 0..=t {
            let lhs = &gs[j];
            let rhs = &g1[j] + &g2[j] - &g0r[j];
            for i in 0..model.spec.n_obs {
                assert_relative_eq!(lhs[i], rhs[i], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn predict_cost_and_output_basics() {
        let h = 3;
        let mut ctx = EncodedContext {
            g0: DVector::zeros(h),
            b: DMatrix::zeros(h, 3),
            d: DVector::zeros(h),
            c: DMatrix::zeros(4, h),
            f: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            q: DVector::zeros(h),
            p: DVector::zeros(h),
            bias: 7.5,
        };
        let g = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        // Q = 0, P = 0 gives the bias.
        assert_eq!(predict_cost(&ctx, &g), 7.5);
        // Unit diagonal with ||g||^2 = 4.
        ctx.q = DVector::from_element(h, 1.0);
        ctx.bias = 0.0;
        assert_eq!(predict_cost(&ctx, &g), 4.0);

        // C = 0: output is F d.
        let y = predict_output(&ctx, &g, 2.0);
        assert_eq!(y.as_slice(), &[2.0, 4.0, 6.0, 8.0]);
        // Selector C picks entries of g.
        ctx.c = DMatrix::from_fn(4, h, |r, c| if r < h && r == c { 1.0 } else { 0.0 });
        ctx.f = DVector::zeros(4);
        let y = predict_output(&ctx, &g, 9.0);
        assert_eq!(y.as_slice(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn predict_cost_midpoint_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let h = 5;
            let ctx = EncodedContext {
                g0: DVector::zeros(h),
                b: DMatrix::zeros(h, 3),
                d: DVector::zeros(h),
                c: DMatrix::zeros(4, h),
                f: DVector::zeros(4),
                q: DVector::from_fn(h, |_, _| rng.random_range(0.0..2.0)),
                p: DVector::from_fn(h, |_, _| rng.random_range(-1.0..1.0)),
                bias: rng.random_range(-1.0..1.0),
            };
            let g1 = DVector::from_fn(h, |_, _| rng.random_range(-2.0..2.0));
            let g2 = DVector::from_fn(h, |_, _| rng.random_range(-2.0..2.0));
            let mid = (&g1 + &g2) * 0.5;
            let lhs = predict_cost(&ctx, &mid);
            let rhs = 0.5 * (predict_cost(&ctx, &g1) + predict_cost(&ctx, &g2));
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn predict_output_superposition() {
        let model = tiny_model(12);
        let x0 = DVector::zeros(model.spec.n_x);
        let hist = vec![x0.clone(); model.spec.tau];
        let ctx = model
            .encode(&hist, &[[0.0; 3]; 4], &[0.0; 4], &x0)
            .unwrap();
        let h = model.spec.n_obs;
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let g1 = DVector::from_fn(h, |_, _| rng.random_range(-1.0..1.0));
        let g2 = DVector::from_fn(h, |_, _| rng.random_range(-1.0..1.0));
        let (d1, d2) = (0.3, -0.8);
        let lhs = predict_output(&ctx, &(&g1 + &g2), d1 + d2);
        let rhs = predict_output(&ctx, &g1, d1) + predict_output(&ctx, &g2, d2)
            - predict_output(&ctx, &DVector::zeros(h), 0.0);
        for i in 0..4 {
            assert_relative_eq!(lhs[i], rhs[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_scales_quadratically() {
        let model = tiny_model(14);
        let eps: Vec<Episode> = (0..3).map(|i| synth_episode(&model.spec, 200 + i)).collect();
        let refs: Vec<&Episode> = eps.iter().collect();
        let batch = Batch::from_episodes(&refs, &model.spec);
        let fc = model.forward(&batch);
        let l = model.data_loss(&fc, &batch);
        assert!(l >= 0.0);

        // Perfect predictions give zero data loss: use the model's own
        // forward outputs as targets.
        let mut perfect = batch.clone();
        for j in 0..model.spec.t_f {
            perfect.y[j] = fc.yhat[j].clone();
            perfect.c[j] = fc.chat[j].clone();
        }
        let fc2 = model.forward(&perfect);
        assert_relative_eq!(model.data_loss(&fc2, &perfect), 0.0, epsilon = 1e-20);

        // Doubling every error quadruples the loss: targets moved twice
        // as far from the predictions.
        let mut doubled = batch.clone();
        for j in 0..model.spec.t_f {
            doubled.y[j] = 2.0 * &batch.y[j] - &fc.yhat[j];
            doubled.c[j] = 2.0 * &batch.c[j] - &fc.chat[j];
        }
        let fc3 = model.forward(&doubled);
        assert_relative_eq!(model.data_loss(&fc3, &doubled), 4.0 * l, max_relative = 1e-10);
    }

    #[test]
    fn overfitting_a_small_batch_drives_loss_below_tolerance() {
        // Realizable targets: a frozen teacher of the same architecture
        // labels 8 synthetic windows, then a fresh model fits them.
        let teacher = tiny_model(400);
        let eps_raw: Vec<Episode> = (0..8).map(|i| synth_episode(&teacher.spec, 300 + i)).collect();
        let refs: Vec<&Episode> = eps_raw.iter().collect();
        let mut batch = Batch::from_episodes(&refs, &teacher.spec);
        let fc = teacher.forward(&batch);
        for j in 0..teacher.spec.t_f {
            batch.y[j] = fc.yhat[j].clone();
            batch.c[j] = fc.chat[j].clone();
        }

        let mut model = tiny_model(401);
        let mut adam = Adam::new(model.params.n_params(), 5e-3);
        let mut last = f64::INFINITY;
        for it in 0..2000 {
            let mut grads = model.params.zeros_like();
            last = model.backward(&batch, 0.0, &mut grads);
            if last < 1e-3 {
                break;
            }
            if it > 0 && it % 700 == 0 {
                adam.decay_lr(0.5);
            }
            let mut flat = model.params.flatten();
            adam.step(&mut flat, &grads.flatten()).unwrap();
            model.params.unflatten(&flat).unwrap();
        }
        assert!(last < 1e-3, "overfit loss stalled at {last:.3e}");
    }

    fn synth_dataset(n_rollouts: usize, len: usize, seed: u64) -> Dataset {
        use crate::dataset::{Rollout, StepRecord};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_x = crate::plant::N_MEAS;
        let rollouts: Vec<Rollout> = (0..n_rollouts)
            .map(|_| Rollout {
                steps: (0..len)
                    .map(|_| StepRecord {
                        x: DVector::from_fn(n_x, |_, _| rng.random_range(-1.0..1.0)),
                        u: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                        d: rng.random_range(0.2..1.0),
                        y: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                        c: rng.random_range(0.0..1.0),
                    })
                    .collect(),
            })
            .collect();
        let window = crate::dataset::WINDOW;
        let mut windows = Vec::new();
        for r in 0..n_rollouts {
            for s in 0..=(len - window) {
                windows.push(WindowRef { rollout: r, start: s });
            }
        }
        let norm = Normalizer::fit(&rollouts, &windows);
        let n_train = windows.len() * 3 / 4;
        let train = windows[..n_train].to_vec();
        let val = windows[n_train..].to_vec();
        Dataset {
            rollouts,
            train,
            val,
            test: Vec::new(),
            norm,
        }
    }

    #[test]
    fn train_loop_reports_per_epoch_stats_and_is_deterministic() {
        let ds = synth_dataset(2, 26, 9);
        let spec = DnkoSpec {
            n_x: crate::plant::N_MEAS,
            hidden: vec![8],
            pre_out: 4,
            lstm_width: 4,
            n_obs: 6,
            ..DnkoSpec::default()
        };
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 4,
            l2: 0.01,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut m1 = DnkoModel::init(spec.clone(), ds.norm.clone(), 7);
        let r1 = train(&mut m1, &ds, &tc).unwrap();
        assert_eq!(r1.curve.len(), 3);
        assert!(r1.curve.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));

        let mut m2 = DnkoModel::init(spec, ds.norm.clone(), 7);
        let r2 = train(&mut m2, &ds, &tc).unwrap();
        assert_eq!(r1.curve, r2.curve);
        let mut a = m1.params.clone();
        let mut b = m2.params.clone();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn horizon_mse_is_loss_per_channel_step() {
        let ds = synth_dataset(2, 26, 11);
        let spec = DnkoSpec {
            n_x: crate::plant::N_MEAS,
            hidden: vec![8],
            pre_out: 4,
            lstm_width: 4,
            n_obs: 6,
            ..DnkoSpec::default()
        };
        let model = DnkoModel::init(spec, ds.norm.clone(), 13);
        let mse = horizon_mse(&model, &ds, &ds.val);
        assert!(mse.is_finite() && mse >= 0.0);
        let per_window = mean_loss_over(&model, &ds, &ds.val, 256);
        assert_relative_eq!(mse * (16.0 * 5.0), per_window, max_relative = 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = tiny_model(44);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        model.save(&p).unwrap();
        let back = DnkoModel::load(&p).unwrap();
        assert_eq!(back.spec, model.spec);
        assert_eq!(back.norm, model.norm);
        let mut a = model.params.clone();
        let mut b = back.params.clone();
        assert_eq!(a.flatten(), b.flatten());
    }
}
