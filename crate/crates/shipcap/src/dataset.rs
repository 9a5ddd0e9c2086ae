//! Excitation-data generation: input/load signals, simulation rollouts,
//! windowing into fixed-length episodes, z-score normalization, and
//! container persistence.
//!
//! The raw unit of data is a 600-step rollout of the plant under a
//! piecewise-constant excitation input and a piecewise-linear engine-load
//! path. Rollouts are windowed with stride 1 into [`Episode`]s of length
//! `TAU + T_F + 1` = 21. The train/validation split shuffles the pooled
//! windows; the test windows come from separate rollouts so the splits
//! share no simulation step.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::container::{Container, NamedArray};
use crate::error::{Error, Result};
use crate::plant::{
    measure_partial, solve_steady_state, ControlInput, Disturbance, PlantConfig, Simulator,
    N_MEAS,
};

/// History horizon fed to the encoder.
pub const TAU: usize = 4;
/// Prediction horizon of the surrogate and the controller.
pub const T_F: usize = 16;
/// Window length of one training episode: a tau-step history, the
/// current sample, and T_F future samples (inclusive range).
pub const WINDOW: usize = TAU + T_F + 1;
/// Steps per raw excitation rollout before windowing.
pub const ROLLOUT_STEPS: usize = 600;

pub const N_U: usize = 3;
pub const N_Y: usize = 4;

/// One recorded simulation step (physical units).
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Measured partial state (23 temperatures).
    pub x: DVector<f64>,
    pub u: [f64; N_U],
    pub d: f64,
    pub y: [f64; N_Y],
    /// Carbon-tax stage cost, $/s.
    pub c: f64,
}

/// A full excitation rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub steps: Vec<StepRecord>,
}

/// Index of one window: (rollout, first step).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub rollout: usize,
    pub start: usize,
}

/// A normalized window of length [`WINDOW`] as consumed by training.
#[derive(Debug, Clone)]
pub struct Episode {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<[f64; N_U]>,
    pub d: Vec<f64>,
    pub y: Vec<[f64; N_Y]>,
    pub c: Vec<f64>,
}

/// Per-channel z-scoring statistics. Degenerate channels keep std 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub x_mean: DVector<f64>,
    pub x_std: DVector<f64>,
    pub u_mean: [f64; N_U],
    pub u_std: [f64; N_U],
    pub d_mean: f64,
    pub d_std: f64,
    pub y_mean: [f64; N_Y],
    pub y_std: [f64; N_Y],
    pub c_mean: f64,
    pub c_std: f64,
}

fn guard_std(s: f64) -> f64 {
    if s > 1e-12 {
        s
    } else {
        1.0
    }
}

impl Normalizer {
    /// Fit over every step of the referenced windows.
    pub fn fit(rollouts: &[Rollout], windows: &[WindowRef]) -> Self {
        let mut xs: Vec<&StepRecord> = Vec::new();
        for w in windows {
            for k in 0..WINDOW {
                xs.push(&rollouts[w.rollout].steps[w.start + k]);
            }
        }
        let n = xs.len() as f64;
        let mut x_mean = DVector::zeros(N_MEAS);
        let mut u_mean = [0.0; N_U];
        let mut d_mean = 0.0;
        let mut y_mean = [0.0; N_Y];
        let mut c_mean = 0.0;
        for s in &xs {
            x_mean += &s.x;
            for i in 0..N_U {
                u_mean[i] += s.u[i];
            }
            d_mean += s.d;
            for i in 0..N_Y {
                y_mean[i] += s.y[i];
            }
            c_mean += s.c;
        }
        x_mean /= n;
        u_mean.iter_mut().for_each(|v| *v /= n);
        d_mean /= n;
        y_mean.iter_mut().for_each(|v| *v /= n);
        c_mean /= n;

        let mut x_var = DVector::zeros(N_MEAS);
        let mut u_var = [0.0; N_U];
        let mut d_var = 0.0;
        let mut y_var = [0.0; N_Y];
        let mut c_var = 0.0;
        for s in &xs {
            let dx = &s.x - &x_mean;
            x_var += dx.component_mul(&dx);
            for i in 0..N_U {
                u_var[i] += (s.u[i] - u_mean[i]).powi(2);
            }
            d_var += (s.d - d_mean).powi(2);
            for i in 0..N_Y {
                y_var[i] += (s.y[i] - y_mean[i]).powi(2);
            }
            c_var += (s.c - c_mean).powi(2);
        }
        let std_of = |v: f64| guard_std((v / n).sqrt());
        Self {
            x_std: x_var.map(|v| std_of(v)),
            x_mean,
            u_mean,
            u_std: [std_of(u_var[0]), std_of(u_var[1]), std_of(u_var[2])],
            d_mean,
            d_std: std_of(d_var),
            y_mean,
            y_std: [
                std_of(y_var[0]),
                std_of(y_var[1]),
                std_of(y_var[2]),
                std_of(y_var[3]),
            ],
            c_mean,
            c_std: std_of(c_var),
        }
    }

    pub fn norm_x(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.x_mean.len(), |i, _| {
            (x[i] - self.x_mean[i]) / self.x_std[i]
        })
    }

    pub fn denorm_x(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.x_mean.len(), |i, _| {
            x[i] * self.x_std[i] + self.x_mean[i]
        })
    }

    pub fn norm_u(&self, u: &[f64; N_U]) -> [f64; N_U] {
        std::array::from_fn(|i| (u[i] - self.u_mean[i]) / self.u_std[i])
    }

    pub fn denorm_u(&self, u: &[f64; N_U]) -> [f64; N_U] {
        std::array::from_fn(|i| u[i] * self.u_std[i] + self.u_mean[i])
    }

    pub fn norm_d(&self, d: f64) -> f64 {
        (d - self.d_mean) / self.d_std
    }

    pub fn norm_y(&self, y: &[f64; N_Y]) -> [f64; N_Y] {
        std::array::from_fn(|i| (y[i] - self.y_mean[i]) / self.y_std[i])
    }

    pub fn denorm_y(&self, y: &[f64; N_Y]) -> [f64; N_Y] {
        std::array::from_fn(|i| y[i] * self.y_std[i] + self.y_mean[i])
    }

    pub fn norm_c(&self, c: f64) -> f64 {
        (c - self.c_mean) / self.c_std
    }

    pub fn denorm_c(&self, c: f64) -> f64 {
        c * self.c_std + self.c_mean
    }

    pub(crate) fn store(&self, c: &mut Container, prefix: &str) {
        c.insert_vec(&format!("{prefix}x_mean"), self.x_mean.as_slice().to_vec());
        c.insert_vec(&format!("{prefix}x_std"), self.x_std.as_slice().to_vec());
        c.insert_vec(&format!("{prefix}u_mean"), self.u_mean.to_vec());
        c.insert_vec(&format!("{prefix}u_std"), self.u_std.to_vec());
        c.insert_vec(&format!("{prefix}d"), vec![self.d_mean, self.d_std]);
        c.insert_vec(&format!("{prefix}y_mean"), self.y_mean.to_vec());
        c.insert_vec(&format!("{prefix}y_std"), self.y_std.to_vec());
        c.insert_vec(&format!("{prefix}c"), vec![self.c_mean, self.c_std]);
    }

    pub(crate) fn restore(c: &Container, prefix: &str) -> Result<Self> {
        let vecn = |name: &str, n: usize| -> Result<Vec<f64>> {
            let arr = c.get(&format!("{prefix}{name}"))?;
            if arr.data.len() != n {
                return Err(Error::Format(format!(
                    "normalizer array {name} has {} entries, expected {n}",
                    arr.data.len()
                )));
            }
            Ok(arr.data.clone())
        };
        let to3 = |v: Vec<f64>| -> [f64; 3] { [v[0], v[1], v[2]] };
        let to4 = |v: Vec<f64>| -> [f64; 4] { [v[0], v[1], v[2], v[3]] };
        let d = vecn("d", 2)?;
        let cc = vecn("c", 2)?;
        let x_mean = c.get(&format!("{prefix}x_mean"))?.data.clone();
        let n_x = x_mean.len();
        Ok(Self {
            x_mean: DVector::from_vec(x_mean),
            x_std: DVector::from_vec(vecn("x_std", n_x)?),
            u_mean: to3(vecn("u_mean", N_U)?),
            u_std: to3(vecn("u_std", N_U)?),
            d_mean: d[0],
            d_std: d[1],
            y_mean: to4(vecn("y_mean", N_Y)?),
            y_std: to4(vecn("y_std", N_Y)?),
            c_mean: cc[0],
            c_std: cc[1],
        })
    }

    /// Persist the normalizer alone (sidecar file).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        c.meta = serde_json::json!({"kind": "normalizer"});
        self.store(&mut c, "norm/");
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::restore(&Container::load(path)?, "norm/")
    }
}

/// Piecewise-constant excitation inputs: hold levels drawn uniformly in
/// the input box for uniform [10, 30]-step durations, plus per-step
/// Gaussian noise of `noise_frac` times the box width, clipped to the box.
pub fn gen_input_signal(
    length: usize,
    cfg: &PlantConfig,
    noise_frac: f64,
    rng: &mut impl Rng,
) -> Vec<ControlInput> {
    let (lo, hi) = cfg.input_box();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(length);
    let mut level = [0.0; 3];
    let mut remaining = 0usize;
    while out.len() < length {
        if remaining == 0 {
            remaining = rng.random_range(10..=30);
            for i in 0..3 {
                level[i] = rng.random_range(lo[i]..hi[i]);
            }
        }
        let mut u = level;
        if noise_frac > 0.0 {
            for i in 0..3 {
                u[i] += noise_frac * (hi[i] - lo[i]) * normal.sample(rng);
            }
        }
        for i in 0..3 {
            u[i] = u[i].clamp(lo[i], hi[i]);
        }
        out.push(ControlInput::from_array(u));
        remaining -= 1;
    }
    out
}

/// Piecewise-linear engine-load path between uniform targets inside
/// [lo, hi] percent, with Gaussian noise, clipped to the range.
pub fn gen_engine_load(
    length: usize,
    lo_pct: f64,
    hi_pct: f64,
    noise_pct: f64,
    rng: &mut impl Rng,
) -> Vec<Disturbance> {
    assert!((20.0..=100.0).contains(&lo_pct) && lo_pct <= hi_pct && hi_pct <= 100.0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sample_target = |rng: &mut dyn rand::RngCore| {
        if hi_pct > lo_pct {
            rand::Rng::random_range(&mut &mut *rng, lo_pct..hi_pct)
        } else {
            lo_pct
        }
    };
    let mut out = Vec::with_capacity(length);
    let mut current = sample_target(rng);
    while out.len() < length {
        let target = sample_target(rng);
        let ramp = rng.random_range(20..=60usize);
        for k in 0..ramp {
            if out.len() == length {
                break;
            }
            let mut v = current + (target - current) * (k as f64 + 1.0) / ramp as f64;
            if noise_pct > 0.0 {
                v += noise_pct * normal.sample(rng);
            }
            out.push(Disturbance::new(v.clamp(lo_pct, hi_pct) / 100.0));
        }
        current = target;
    }
    out
}

/// Run one excitation rollout from the given initial condition.
/// Returns Err if the integrator diverges mid-rollout.
pub fn run_rollout(
    cfg: &PlantConfig,
    x0: &crate::plant::PlantState,
    z0: &crate::plant::AlgebraicState,
    us: &[ControlInput],
    ds: &[Disturbance],
) -> Result<Rollout> {
    assert_eq!(us.len(), ds.len());
    let mut sim = Simulator::new(cfg.clone(), x0.clone(), z0.clone());
    let mut steps = Vec::with_capacity(us.len());
    for (u, d) in us.iter().zip(ds.iter()) {
        // Record the pre-step measurement with the input about to act.
        let out = sim.output(u, d)?;
        steps.push(StepRecord {
            x: measure_partial(sim.state()),
            u: u.as_array(),
            d: d.phi_e,
            y: out.y(),
            c: out.stage_cost,
        });
        sim.step(u, d)?;
    }
    Ok(Rollout { steps })
}

/// The assembled dataset: raw rollouts plus split window indices and the
/// normalizer fitted on the training windows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub rollouts: Vec<Rollout>,
    pub train: Vec<WindowRef>,
    pub val: Vec<WindowRef>,
    pub test: Vec<WindowRef>,
    pub norm: Normalizer,
}

/// Data-generation knobs; defaults follow the experimental protocol.
#[derive(Debug, Clone)]
pub struct CollectConfig {
    /// Pooled train+validation window count.
    pub n_samples: usize,
    /// Fraction of the pool used for training.
    pub train_frac: f64,
    pub n_test: usize,
    /// Excitation noise std as a fraction of the input-box width.
    pub input_noise_frac: f64,
    /// Load noise std in percentage points.
    pub load_noise_pct: f64,
    pub load_lo_pct: f64,
    pub load_hi_pct: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            train_frac: 0.9,
            n_test: 800,
            input_noise_frac: 0.02,
            load_noise_pct: 1.0,
            load_lo_pct: 20.0,
            load_hi_pct: 100.0,
        }
    }
}

/// Generate the full dataset: excitation rollouts from the steady state at
/// 60% load and mid-box inputs, windowed and split 90/10 plus a disjoint
/// test set from separate rollouts.
pub fn collect(cfg: &PlantConfig, cc: &CollectConfig, seed: u64) -> Result<Dataset> {
    let u_ss = ControlInput::mid_box(cfg);
    let d_ss = Disturbance::new(0.6);
    let (x0, z0) = solve_steady_state(cfg, &u_ss, &d_ss)?;

    let windows_per_rollout = ROLLOUT_STEPS - WINDOW + 1;
    let n_pool_rollouts = cc.n_samples.div_ceil(windows_per_rollout);
    let n_test_rollouts = cc.n_test.div_ceil(windows_per_rollout);

    let mut rollouts = Vec::new();
    let mut attempt = 0u64;
    while rollouts.len() < n_pool_rollouts + n_test_rollouts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(attempt));
        attempt += 1;
        let us = gen_input_signal(ROLLOUT_STEPS, cfg, cc.input_noise_frac, &mut rng);
        let ds = gen_engine_load(
            ROLLOUT_STEPS,
            cc.load_lo_pct,
            cc.load_hi_pct,
            cc.load_noise_pct,
            &mut rng,
        );
        match run_rollout(cfg, &x0, &z0, &us, &ds) {
            Ok(r) => rollouts.push(r),
            Err(e) => {
                log::warn!("discarding diverged rollout (attempt {attempt}): {e}");
                if attempt > 4 * (n_pool_rollouts + n_test_rollouts) as u64 {
                    return Err(e);
                }
            }
        }
    }

    // Pool windows from the first block of rollouts, shuffle, split.
    let mut pool: Vec<WindowRef> = (0..n_pool_rollouts)
        .flat_map(|r| (0..windows_per_rollout).map(move |s| WindowRef { rollout: r, start: s }))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    // Fisher-Yates with the dedicated shuffle stream.
    for i in (1..pool.len()).rev() {
        let j = rng.random_range(0..=i);
        pool.swap(i, j);
    }
    if pool.len() < cc.n_samples {
        return Err(Error::Config(format!(
            "window pool {} smaller than requested {}",
            pool.len(),
            cc.n_samples
        )));
    }
    let n_train = (cc.n_samples as f64 * cc.train_frac).round() as usize;
    let train: Vec<_> = pool[..n_train].to_vec();
    let val: Vec<_> = pool[n_train..cc.n_samples].to_vec();

    let test: Vec<WindowRef> = (n_pool_rollouts..n_pool_rollouts + n_test_rollouts)
        .flat_map(|r| (0..windows_per_rollout).map(move |s| WindowRef { rollout: r, start: s }))
        .take(cc.n_test)
        .collect();

    let norm = Normalizer::fit(&rollouts, &train);
    Ok(Dataset {
        rollouts,
        train,
        val,
        test,
        norm,
    })
}

impl Dataset {
    /// Materialize one normalized window.
    pub fn window(&self, w: &WindowRef) -> Episode {
        let steps = &self.rollouts[w.rollout].steps[w.start..w.start + WINDOW];
        Episode {
            x: steps.iter().map(|s| self.norm.norm_x(&s.x)).collect(),
            u: steps.iter().map(|s| self.norm.norm_u(&s.u)).collect(),
            d: steps.iter().map(|s| self.norm.norm_d(s.d)).collect(),
            y: steps.iter().map(|s| self.norm.norm_y(&s.y)).collect(),
            c: steps.iter().map(|s| self.norm.norm_c(s.c)).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        let n_r = self.rollouts.len();
        let t = ROLLOUT_STEPS;
        let pack = |f: &dyn Fn(&StepRecord) -> Vec<f64>, width: usize| -> NamedArray {
            let mut data = Vec::with_capacity(n_r * t * width);
            for r in &self.rollouts {
                for s in &r.steps {
                    data.extend_from_slice(&f(s));
                }
            }
            NamedArray::new(vec![n_r, t, width], data).expect("packed shape")
        };
        c.insert("rollouts/x", pack(&|s| s.x.as_slice().to_vec(), N_MEAS));
        c.insert("rollouts/u", pack(&|s| s.u.to_vec(), N_U));
        c.insert("rollouts/d", pack(&|s| vec![s.d], 1));
        c.insert("rollouts/y", pack(&|s| s.y.to_vec(), N_Y));
        c.insert("rollouts/c", pack(&|s| vec![s.c], 1));
        let refs = |ws: &[WindowRef]| -> Vec<f64> {
            ws.iter()
                .flat_map(|w| [w.rollout as f64, w.start as f64])
                .collect()
        };
        c.insert(
            "split/train",
            NamedArray::new(vec![self.train.len(), 2], refs(&self.train))?,
        );
        c.insert(
            "split/val",
            NamedArray::new(vec![self.val.len(), 2], refs(&self.val))?,
        );
        c.insert(
            "split/test",
            NamedArray::new(vec![self.test.len(), 2], refs(&self.test))?,
        );
        self.norm.store(&mut c, "norm/");
        c.meta = serde_json::json!({
            "kind": "dataset",
            "rollout_steps": t,
            "window": WINDOW,
            "tau": TAU,
            "t_f": T_F,
        });
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let x = c.get("rollouts/x")?;
        let u = c.get("rollouts/u")?;
        let d = c.get("rollouts/d")?;
        let y = c.get("rollouts/y")?;
        let cost = c.get("rollouts/c")?;
        if x.shape.len() != 3 || x.shape[2] != N_MEAS {
            return Err(Error::Format("dataset rollouts/x has bad shape".into()));
        }
        let (n_r, t) = (x.shape[0], x.shape[1]);
        let mut rollouts = Vec::with_capacity(n_r);
        for r in 0..n_r {
            let mut steps = Vec::with_capacity(t);
            for k in 0..t {
                let base = r * t + k;
                steps.push(StepRecord {
                    x: DVector::from_column_slice(&x.data[base * N_MEAS..(base + 1) * N_MEAS]),
                    u: [
                        u.data[base * N_U],
                        u.data[base * N_U + 1],
                        u.data[base * N_U + 2],
                    ],
                    d: d.data[base],
                    y: [
                        y.data[base * N_Y],
                        y.data[base * N_Y + 1],
                        y.data[base * N_Y + 2],
                        y.data[base * N_Y + 3],
                    ],
                    c: cost.data[base],
                });
            }
            rollouts.push(Rollout { steps });
        }
        let refs = |name: &str| -> Result<Vec<WindowRef>> {
            let arr = c.get(name)?;
            Ok(arr
                .data
                .chunks_exact(2)
                .map(|p| WindowRef {
                    rollout: p[0] as usize,
                    start: p[1] as usize,
                })
                .collect())
        };
        Ok(Self {
            rollouts,
            train: refs("split/train")?,
            val: refs("split/val")?,
            test: refs("split/test")?,
            norm: Normalizer::restore(&c, "norm/")?,
        })
    }

    /// Dump every rollout step as CSV (physical units).
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "rollout,step,phi_E,F_L,F_fuel,F_sw,T_reb,p_CO2,T1_LA,T1_LD,c")?;
        for i in 0..N_MEAS {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for (r, ro) in self.rollouts.iter().enumerate() {
            for (k, s) in ro.steps.iter().enumerate() {
                write!(
                    w,
                    "{r},{k},{},{},{},{},{},{},{},{},{}",
                    s.d, s.u[0], s.u[1], s.u[2], s.y[0], s.y[1], s.y[2], s.y[3], s.c
                )?;
                for v in s.x.iter() {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}
