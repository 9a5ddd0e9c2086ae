//! Minimal differentiable kernel: dense layers, an LSTM cell, reverse-mode
//! gradients, and Adam, sized for the fixed surrogate architecture.
//!
//! All math is float64 and batched: activations are matrices with one row
//! per sample. Forward passes return caches that suffice for exact
//! reverse-mode gradients; gradients are accumulated into mirror structs
//! of the same type as the parameters (`zeros_like`). Parameters are
//! enumerated in a fixed order through [`ParamVisitor`], which provides the
//! flat view used by the optimizer, checkpointing, and finite-difference
//! validation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::container::{Container, NamedArray};
use crate::error::{Error, Result};

/// Visitor over named parameter arrays in a fixed traversal order.
pub trait ParamVisitor {
    fn visit(&mut self, name: &str, shape: &[usize], data: &mut [f64]);
}

/// Anything holding trainable parameters.
pub trait HasParams {
    /// Visit every parameter array, names prefixed with `prefix`.
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor);

    fn n_params(&mut self) -> usize {
        struct Count(usize);
        impl ParamVisitor for Count {
            fn visit(&mut self, _: &str, _: &[usize], data: &mut [f64]) {
                self.0 += data.len();
            }
        }
        let mut c = Count(0);
        self.visit_params("", &mut c);
        c.0
    }

    /// Copy all parameters into one flat vector (traversal order).
    fn flatten(&mut self) -> DVector<f64> {
        struct Flat(Vec<f64>);
        impl ParamVisitor for Flat {
            fn visit(&mut self, _: &str, _: &[usize], data: &mut [f64]) {
                self.0.extend_from_slice(data);
            }
        }
        let mut f = Flat(Vec::new());
        self.visit_params("", &mut f);
        DVector::from_vec(f.0)
    }

    /// Overwrite all parameters from a flat vector (traversal order).
    fn unflatten(&mut self, flat: &DVector<f64>) -> Result<()> {
        struct Scatter<'a> {
            src: &'a [f64],
            pos: usize,
            overflow: bool,
        }
        impl ParamVisitor for Scatter<'_> {
            fn visit(&mut self, _: &str, _: &[usize], data: &mut [f64]) {
                if self.pos + data.len() > self.src.len() {
                    self.overflow = true;
                    return;
                }
                data.copy_from_slice(&self.src[self.pos..self.pos + data.len()]);
                self.pos += data.len();
            }
        }
        let mut s = Scatter {
            src: flat.as_slice(),
            pos: 0,
            overflow: false,
        };
        self.visit_params("", &mut s);
        if s.overflow || s.pos != flat.len() {
            return Err(Error::Shape(format!(
                "flat parameter vector length {} does not match model ({} consumed)",
                flat.len(),
                s.pos
            )));
        }
        Ok(())
    }

    /// Scale every parameter in place (used for gradient zeroing/averaging).
    fn scale_params(&mut self, factor: f64) {
        struct Scale(f64);
        impl ParamVisitor for Scale {
            fn visit(&mut self, _: &str, _: &[usize], data: &mut [f64]) {
                for v in data.iter_mut() {
                    *v *= self.0;
                }
            }
        }
        self.visit_params("", &mut Scale(factor));
    }

    /// Store every parameter array into a container under its visited name.
    fn store(&mut self, c: &mut Container) {
        struct Store<'a>(&'a mut Container);
        impl ParamVisitor for Store<'_> {
            fn visit(&mut self, name: &str, shape: &[usize], data: &mut [f64]) {
                self.0.insert(
                    name,
                    NamedArray::new(shape.to_vec(), data.to_vec()).expect("visited shape"),
                );
            }
        }
        self.visit_params("", &mut Store(c));
    }

    /// Load every parameter array from a container by its visited name.
    fn restore(&mut self, c: &Container) -> Result<()> {
        struct Restore<'a> {
            c: &'a Container,
            err: Option<Error>,
        }
        impl ParamVisitor for Restore<'_> {
            fn visit(&mut self, name: &str, shape: &[usize], data: &mut [f64]) {
                if self.err.is_some() {
                    return;
                }
                match self.c.get(name) {
                    Ok(arr) if arr.shape == shape => data.copy_from_slice(&arr.data),
                    Ok(arr) => {
                        self.err = Some(Error::Shape(format!(
                            "checkpoint array `{name}` has shape {:?}, expected {:?}",
                            arr.shape, shape
                        )))
                    }
                    Err(e) => self.err = Some(e),
                }
            }
        }
        let mut r = Restore { c, err: None };
        self.visit_params("", &mut r);
        match r.err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Dense layer y = x Wᵀ + b with x holding one sample per row.
#[derive(Debug, Clone)]
pub struct Linear {
    /// out × in weight matrix.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    /// Uniform fan-in initialization: U(−1/√in, 1/√in).
    pub fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = 1.0 / (n_in as f64).sqrt();
        Self {
            w: DMatrix::from_fn(n_out, n_in, |_, _| rng.random_range(-a..a)),
            b: DVector::from_fn(n_out, |_, _| rng.random_range(-a..a)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.w.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y
    }

    /// Accumulate parameter gradients for upstream dy; returns dx.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        dy: &DMatrix<f64>,
        grad: &mut Linear,
    ) -> DMatrix<f64> {
        grad.w += dy.transpose() * x;
        for row in dy.row_iter() {
            grad.b += row.transpose();
        }
        dy * &self.w
    }
}

impl HasParams for Linear {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor) {
        let shape = [self.w.nrows(), self.w.ncols()];
        // nalgebra is column-major; expose the raw slice with its true shape.
        v.visit(
            &format!("{prefix}w"),
            &[shape[1], shape[0]],
            self.w.as_mut_slice(),
        );
        v.visit(&format!("{prefix}b"), &[self.b.len()], self.b.as_mut_slice());
    }
}

/// Multi-layer perceptron with ReLU hidden activations.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ReLU to the final layer too (used by the Q head).
    pub relu_output: bool,
}

/// Stored activations from a forward pass, consumed by `backward`.
#[derive(Debug)]
pub struct MlpCache {
    /// Input to each layer (layer count entries).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// `widths` lists input, hidden..., output sizes, e.g. [27, 128, 128, 32].
    pub fn init<R: Rng>(widths: &[usize], relu_output: bool, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            relu_output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            relu_output: self.relu_output,
        }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        assert_eq!(x.ncols(), self.in_width(), "MLP input width mismatch");
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(h.clone());
            let pre = layer.forward(&h);
            let activate = i + 1 < self.layers.len() || self.relu_output;
            h = if activate { pre.map(relu) } else { pre.clone() };
            cache.pre.push(pre);
        }
        (h, cache)
    }

    /// Forward pass without building a cache.
    pub fn infer(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h);
            let activate = i + 1 < self.layers.len() || self.relu_output;
            h = if activate { pre.map(relu) } else { pre };
        }
        h
    }

    pub fn backward(
        &self,
        cache: &MlpCache,
        dy: &DMatrix<f64>,
        grad: &mut Mlp,
    ) -> DMatrix<f64> {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let activate = i + 1 < self.layers.len() || self.relu_output;
            if activate {
                d.zip_apply(&cache.pre[i], |g, p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            d = self.layers[i].backward(&cache.inputs[i], &d, &mut grad.layers[i]);
        }
        d
    }
}

impl HasParams for Mlp {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&format!("{prefix}l{i}."), v);
        }
    }
}

/// Single-layer LSTM. Gate pre-activations are stacked [i; f; g; o].
#[derive(Debug, Clone)]
pub struct Lstm {
    /// 4l × in input weights.
    pub w_ih: DMatrix<f64>,
    /// 4l × l recurrent weights.
    pub w_hh: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Per-step cache for backpropagation through time.
#[derive(Debug)]
pub struct LstmStepCache {
    x: DMatrix<f64>,
    h_prev: DMatrix<f64>,
    c_prev: DMatrix<f64>,
    i: DMatrix<f64>,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    o: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    /// Uniform fan-in initialization with the forget-gate bias set to 1.
    pub fn init<R: Rng>(n_in: usize, width: usize, rng: &mut R) -> Self {
        let a = 1.0 / ((n_in + width) as f64).sqrt();
        let mut b = DVector::from_fn(4 * width, |_, _| rng.random_range(-a..a));
        for j in width..2 * width {
            b[j] = 1.0;
        }
        Self {
            w_ih: DMatrix::from_fn(4 * width, n_in, |_, _| rng.random_range(-a..a)),
            w_hh: DMatrix::from_fn(4 * width, width, |_, _| rng.random_range(-a..a)),
            b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_ih: DMatrix::zeros(self.w_ih.nrows(), self.w_ih.ncols()),
            w_hh: DMatrix::zeros(self.w_hh.nrows(), self.w_hh.ncols()),
            b: DVector::zeros(self.b.len()),
        }
    }

    pub fn width(&self) -> usize {
        self.w_hh.ncols()
    }

    /// One gated update; rows of `x`/`h`/`c` are batch samples.
    pub fn step(
        &self,
        x: &DMatrix<f64>,
        h_prev: &DMatrix<f64>,
        c_prev: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, LstmStepCache) {
        let l = self.width();
        let m = x.nrows();
        let mut pre = x * self.w_ih.transpose() + h_prev * self.w_hh.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.b.transpose();
        }
        let i = pre.columns(0, l).map(sigmoid);
        let f = pre.columns(l, l).map(sigmoid);
        let g = pre.columns(2 * l, l).map(f64::tanh);
        let o = pre.columns(3 * l, l).map(sigmoid);
        let mut c = DMatrix::zeros(m, l);
        for r in 0..m {
            for j in 0..l {
                c[(r, j)] = f[(r, j)] * c_prev[(r, j)] + i[(r, j)] * g[(r, j)];
            }
        }
        let h = o.zip_map(&c, |ov: f64, cv: f64| ov * cv.tanh());
        let cache = LstmStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            c: c.clone(),
        };
        (h, c, cache)
    }

    /// Run the cell over a sequence from zero initial state; returns the
    /// final hidden state and the caches needed for BPTT.
    pub fn forward_seq(&self, xs: &[DMatrix<f64>]) -> (DMatrix<f64>, Vec<LstmStepCache>) {
        assert!(!xs.is_empty());
        let m = xs[0].nrows();
        let l = self.width();
        let mut h = DMatrix::zeros(m, l);
        let mut c = DMatrix::zeros(m, l);
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (h2, c2, cache) = self.step(x, &h, &c);
            h = h2;
            c = c2;
            caches.push(cache);
        }
        (h, caches)
    }

    /// Backpropagation through time given the gradient of the loss with
    /// respect to the final hidden state; returns per-step input gradients.
    pub fn backward_seq(
        &self,
        caches: &[LstmStepCache],
        dh_last: &DMatrix<f64>,
        grad: &mut Lstm,
    ) -> Vec<DMatrix<f64>> {
        let l = self.width();
        let m = dh_last.nrows();
        let mut dh = dh_last.clone();
        let mut dc = DMatrix::zeros(m, l);
        let mut dxs = vec![DMatrix::zeros(0, 0); caches.len()];
        for (t, cache) in caches.iter().enumerate().rev() {
            // h = o ⊙ tanh(c)
            let tanh_c = cache.c.map(f64::tanh);
            let d_o = dh.zip_map(&tanh_c, |dhv: f64, tc: f64| dhv * tc);
            for r in 0..m {
                for j in 0..l {
                    dc[(r, j)] +=
                        dh[(r, j)] * cache.o[(r, j)] * (1.0 - tanh_c[(r, j)].powi(2));
                }
            }
            let d_i = dc.zip_map(&cache.g, |dcv: f64, gv: f64| dcv * gv);
            let d_g = dc.zip_map(&cache.i, |dcv: f64, iv: f64| dcv * iv);
            let d_f = dc.zip_map(&cache.c_prev, |dcv: f64, cp: f64| dcv * cp);
            let dc_prev = dc.zip_map(&cache.f, |dcv: f64, fv: f64| dcv * fv);

            // Through the gate nonlinearities to pre-activations.
            let mut dpre = DMatrix::zeros(m, 4 * l);
            for r in 0..m {
                for j in 0..l {
                    dpre[(r, j)] = d_i[(r, j)] * cache.i[(r, j)] * (1.0 - cache.i[(r, j)]);
                    dpre[(r, l + j)] = d_f[(r, j)] * cache.f[(r, j)] * (1.0 - cache.f[(r, j)]);
                    dpre[(r, 2 * l + j)] = d_g[(r, j)] * (1.0 - cache.g[(r, j)].powi(2));
                    dpre[(r, 3 * l + j)] = d_o[(r, j)] * cache.o[(r, j)] * (1.0 - cache.o[(r, j)]);
                }
            }

            grad.w_ih += dpre.transpose() * &cache.x;
            grad.w_hh += dpre.transpose() * &cache.h_prev;
            for row in dpre.row_iter() {
                grad.b += row.transpose();
            }
            dxs[t] = &dpre * &self.w_ih;
            dh = &dpre * &self.w_hh;
            dc = dc_prev;
        }
        dxs
    }
}

impl HasParams for Lstm {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor) {
        v.visit(
            &format!("{prefix}w_ih"),
            &[self.w_ih.ncols(), self.w_ih.nrows()],
            self.w_ih.as_mut_slice(),
        );
        v.visit(
            &format!("{prefix}w_hh"),
            &[self.w_hh.ncols(), self.w_hh.nrows()],
            self.w_hh.as_mut_slice(),
        );
        v.visit(&format!("{prefix}b"), &[self.b.len()], self.b.as_mut_slice());
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: DVector<f64>,
    v: DVector<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: DVector::zeros(n),
            v: DVector::zeros(n),
        }
    }

    /// Multiply the learning rate by `gamma` (scheduler hook).
    pub fn decay_lr(&mut self, gamma: f64) {
        self.lr *= gamma;
    }

    /// One bias-corrected update of `params` given `grads`.
    pub fn step(&mut self, params: &mut DVector<f64>, grads: &DVector<f64>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state sized {} given params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Central finite-difference gradient of a scalar function, h = 1e-5.
/// Intended for validating analytic gradients on small instances.
pub fn finite_difference<F>(f: &mut F, x: &DVector<f64>) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let h = 1e-5;
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Largest relative error between two gradient vectors, guarding tiny
/// denominators with an absolute floor.
pub fn max_rel_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
        .fold(0.0, f64::max)
}
