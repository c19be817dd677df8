//! Alternating optimization of detector weights `θ` and augmentation
//! hyperparameters `a`.
//!
//! Each iteration takes `θ' = θ - α∇_θ L_trn(θ, a)`, embeds the training,
//! augmented and test sets under `θ'`, evaluates the validation loss, and
//! moves `a` against its gradient. In second-order mode the gradient
//! includes the path through `θ'`; in first-order mode `θ'` is frozen.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_batch, AugDomain, AugDraw, AugKind, AugParams};
use crate::detector::{
    bce_train_loss, descend, encode_pixels, fit_gde, score_variance, EncoderParams,
};
use crate::error::{Error, Result};
use crate::tensor::{NdArray, Tape, Tensor};
use crate::valloss::{validation_loss, EmbeddingBatch, ValLossKind};

/// Relative improvement the summed loss must make to reset patience.
pub const STOP_REL_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SecondOrder,
    FirstOrder,
    RandomStatic,
    RandomDynamic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SecondOrder => "second_order",
            Mode::FirstOrder => "first_order",
            Mode::RandomStatic => "random_static",
            Mode::RandomDynamic => "random_dynamic",
        }
    }

    fn order(self) -> Order {
        match self {
            Mode::SecondOrder => Order::Second,
            Mode::FirstOrder => Order::First,
            Mode::RandomStatic | Mode::RandomDynamic => Order::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub gamma: f64,
    pub warm_epochs: usize,
    pub theta_updates_per_iter: usize,
    pub mode: Mode,
    pub val_loss: ValLossKind,
    pub aug: AugKind,
    pub init_list: Vec<AugParams>,
    pub patience: usize,
    pub seed: u64,
    /// Also record `L_val(a^(t), θ)` and `L_val(a^(t+1), θ')` per iteration.
    #[serde(default)]
    pub track_descent: bool,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            beta: 1e-2,
            max_iters: 300,
            gamma: 1.0,
            warm_epochs: 20,
            theta_updates_per_iter: 1,
            mode: Mode::SecondOrder,
            val_loss: ValLossKind::MeanDistance,
            aug: AugKind::CutDiff,
            init_list: cutdiff_init_grid(),
            patience: 20,
            seed: 0,
            track_descent: false,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.theta_updates_per_iter == 0 {
            return bad("theta_updates_per_iter must be at least 1".into());
        }
        if self.init_list.is_empty() {
            return bad("init_list is empty".into());
        }
        let domain = AugDomain::new(self.aug);
        for a in &self.init_list {
            if a.kind != self.aug {
                return bad(format!(
                    "initial value {:?} does not match augmentation {}",
                    a.values,
                    self.aug.name()
                ));
            }
            let mut p = a.clone();
            domain.project(&mut p);
            if p != *a && self.aug != AugKind::Rotation {
                return bad(format!("initial value {:?} lies outside the domain", a.values));
            }
        }
        if matches!(self.mode, Mode::SecondOrder | Mode::FirstOrder) && !self.aug.is_differentiable()
        {
            return bad(format!(
                "{} cannot be tuned by gradient; use a random mode",
                self.aug.name()
            ));
        }
        Ok(())
    }

    /// Iterations a full run performs if it never stops early.
    pub fn iteration_budget(&self) -> usize {
        self.init_list.len() * (self.warm_epochs + self.max_iters)
    }
}

/// Isotropic CutDiff starts `L = diag(s, s)` for `s ∈ {1e-4, 1e-3, 1e-2, 1e-1}`.
pub fn cutdiff_init_grid() -> Vec<AugParams> {
    [1e-4, 1e-3, 1e-2, 1e-1]
        .into_iter()
        .map(AugParams::cutdiff_isotropic)
        .collect()
}

/// Rotation starts at 45°, 135°, 225° and 315°.
pub fn rotation_init_grid() -> Vec<AugParams> {
    [1.0, 3.0, 5.0, 7.0]
        .into_iter()
        .map(|k| AugParams::rotation(k * PI / 4.0))
        .collect()
}

/// Deterministic seed derivation (splitmix64 of the root mixed with a
/// stream id), so each consumer gets an independent stream.
pub fn split_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_THETA: u64 = 1;
const STREAM_RUN: u64 = 1000;

/// Unlabeled view of a dataset: the only data the tuner can see.
#[derive(Clone, Debug)]
pub struct TuneView {
    pub train: NdArray,
    pub test: NdArray,
    pub side: usize,
    pub channels: usize,
}

impl TuneView {
    pub fn new(train: NdArray, test: NdArray, side: usize, channels: usize) -> Result<Self> {
        let d = side * side * channels;
        for (name, a) in [("train", &train), ("test", &test)] {
            if a.shape().len() != 2 || a.row_len() != d {
                return Err(Error::shape(
                    if name == "train" { "train view" } else { "test view" },
                    a.shape(),
                    &[0, d],
                ));
            }
        }
        if train.rows() < 2 || test.rows() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 train and 2 test images, got {} and {}",
                train.rows(),
                test.rows()
            )));
        }
        Ok(Self {
            train,
            test,
            side,
            channels,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.side * self.side * self.channels
    }

    /// Source rows for the augmented set: `round(γ·N)` training rows taken
    /// cyclically.
    pub fn aug_source(&self, gamma: f64) -> NdArray {
        let n = self.train.rows();
        let n_aug = ((gamma * n as f64).round() as usize).max(1);
        let d = self.input_dim();
        let mut data = Vec::with_capacity(n_aug * d);
        for i in 0..n_aug {
            data.extend_from_slice(self.train.row(i % n));
        }
        NdArray::matrix(n_aug, d, data).expect("aug source shape")
    }
}

/// How `a` enters one bilevel step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Differentiate through `θ' = θ - α∇_θ L_trn`.
    Second,
    /// Treat `θ'` as a constant.
    First,
    /// No hypergradient.
    None,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub theta: Vec<NdArray>,
    pub grad_a: Option<NdArray>,
    /// Training loss at the first inner update.
    pub l_trn: f64,
    /// Validation loss at `θ'`.
    pub l_val: f64,
}

/// One generic bilevel step.
///
/// `share(a)` is evaluated once (e.g. the augmented batch) and passed to
/// both the inner loss `inner(θ, s)` and the outer loss `outer(θ', s)`.
/// The inner loop takes `updates` gradient steps of size `alpha`.
pub fn bilevel_step<S, F, G>(
    theta: &[NdArray],
    a: &NdArray,
    alpha: f64,
    updates: usize,
    order: Order,
    share: S,
    mut inner: F,
    mut outer: G,
) -> Result<StepOutcome>
where
    S: FnOnce(&Tensor) -> Result<Tensor>,
    F: FnMut(&[Tensor], &Tensor) -> Result<Tensor>,
    G: FnMut(&[Tensor], &Tensor) -> Result<Tensor>,
{
    let tape = Tape::new();
    let th: Vec<Tensor> = theta.iter().map(|t| tape.leaf(t.clone())).collect();
    let a_t = if order == Order::None {
        Tensor::constant(a.clone())
    } else {
        tape.leaf(a.clone())
    };
    let shared = share(&a_t)?;
    let mut cur = th;
    let mut l_trn = None;
    for _ in 0..updates.max(1) {
        let loss = inner(&cur, &shared)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFinite(format!("training loss {}", loss.item())));
        }
        l_trn.get_or_insert(loss.item());
        if alpha == 0.0 || !loss.requires_grad() {
            continue;
        }
        let g = tape.grad(&loss, &cur, order == Order::Second)?;
        cur = descend(&cur, &g, alpha)?;
    }
    if order != Order::Second {
        cur = cur.iter().map(Tensor::detach).collect();
    }
    let lv = outer(&cur, &shared)?;
    if !lv.item().is_finite() {
        return Err(Error::NonFinite(format!("validation loss {}", lv.item())));
    }
    let grad_a = match order {
        Order::None => None,
        _ if !lv.requires_grad() => Some(NdArray::zeros(a.shape())),
        _ => {
            let g = tape.grad(&lv, &[a_t], false)?.remove(0).to_array();
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "hypergradient {:?} at L_trn = {}, L_val = {}",
                    g.data(),
                    l_trn.unwrap_or(f64::NAN),
                    lv.item()
                )));
            }
            Some(g)
        }
    };
    Ok(StepOutcome {
        theta: cur.iter().map(Tensor::to_array).collect(),
        grad_a,
        l_trn: l_trn.expect("at least one inner update"),
        l_val: lv.item(),
    })
}

/// The detector-specific inputs of one step.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub view: &'a TuneView,
    pub aug_source: &'a NdArray,
    pub aug: AugKind,
    pub val_loss: ValLossKind,
}

impl Problem<'_> {
    fn augment(&self, a: &Tensor, draw: &AugDraw) -> Result<Tensor> {
        apply_batch(
            self.aug,
            &Tensor::constant(self.aug_source.clone()),
            a,
            self.view.side,
            self.view.channels,
            draw,
        )
    }

    fn val(&self, theta: &[Tensor], x_aug: &Tensor) -> Result<Tensor> {
        let x = Tensor::concat_rows(&[
            Tensor::constant(self.view.train.clone()),
            x_aug.clone(),
            Tensor::constant(self.view.test.clone()),
        ])?;
        let z = encode_pixels(theta, &x)?;
        let batch = EmbeddingBatch::new(
            z,
            self.view.train.rows(),
            self.aug_source.rows(),
            self.view.test.rows(),
        )?;
        validation_loss(self.val_loss, &batch)
    }

    /// Bilevel step of the detector at hyperparameters `a` with a fixed draw.
    pub fn step(
        &self,
        params: &EncoderParams,
        a: &AugParams,
        draw: &AugDraw,
        alpha: f64,
        updates: usize,
        order: Order,
    ) -> Result<StepOutcome> {
        let x_trn = Tensor::constant(self.view.train.clone());
        bilevel_step(
            params.tensors(),
            &NdArray::vector(a.values.clone()),
            alpha,
            updates,
            order,
            |a| self.augment(a, draw),
            |th, x_aug| bce_train_loss(th, &x_trn, x_aug),
            |th, x_aug| self.val(th, x_aug),
        )
    }

    /// `L_val(a, θ)` without any training step.
    pub fn val_loss_at(&self, params: &EncoderParams, a: &AugParams, draw: &AugDraw) -> Result<f64> {
        let x_aug = self.augment(&Tensor::constant(NdArray::vector(a.values.clone())), draw)?;
        Ok(self.val(&params.constants(), &x_aug)?.item())
    }
}

/// One row of a run trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    /// Hyperparameters used during this iteration.
    pub a: Vec<f64>,
    pub l_trn: f64,
    pub l_val: f64,
    pub l_sum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_val_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_val_next: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TunerRun {
    pub index: usize,
    pub init: AugParams,
    pub trajectory: Vec<IterRecord>,
    pub final_a: AugParams,
    pub theta: EncoderParams,
    /// Reason the run stopped abnormally, if it did.
    pub aborted: Option<String>,
    pub stopped_early: bool,
    pub score_variance: Option<f64>,
    pub selected: bool,
}

impl TunerRun {
    pub fn final_loss(&self) -> f64 {
        self.trajectory.last().map_or(f64::INFINITY, |r| r.l_sum)
    }
}

/// True once the summed loss has failed to improve by at least
/// [`STOP_REL_TOL`] (relative to the best so far) for `patience`
/// consecutive iterations.
pub fn stopping_check(history: &[f64], patience: usize) -> bool {
    let Some((&first, rest)) = history.split_first() else {
        return false;
    };
    let mut best = first;
    let mut stale = 0;
    for &h in rest {
        if h < best - STOP_REL_TOL * best.abs() {
            best = h;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    patience > 0 && stale >= patience
}

/// Initial detector weights shared by every run of a configuration.
pub fn initial_params(config: &TunerConfig, input_dim: usize) -> Result<EncoderParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, STREAM_THETA));
    EncoderParams::desk(input_dim, &mut rng)
}

/// Warm start: `epochs` plain training steps at fixed `a`.
pub fn warm_start(
    problem: &Problem,
    params: &EncoderParams,
    a: &AugParams,
    epochs: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EncoderParams> {
    let mut p = params.clone();
    for _ in 0..epochs {
        let draw = AugDraw::sample(problem.aug_source.rows(), rng);
        let x_aug = problem
            .augment(&Tensor::constant(NdArray::vector(a.values.clone())), &draw)?
            .to_array();
        p = crate::detector::train_step(&p, &problem.view.train, &x_aug, alpha)?.0;
    }
    Ok(p)
}

/// Runs Algorithm 1 from one initialization.
pub fn tune_single(
    config: &TunerConfig,
    view: &TuneView,
    index: usize,
    theta0: &EncoderParams,
) -> Result<TunerRun> {
    config.validate()?;
    let init = config
        .init_list
        .get(index)
        .cloned()
        .ok_or_else(|| Error::Invalid(format!("no initialization {index}")))?;
    let aug_source = view.aug_source(config.gamma);
    let problem = Problem {
        view,
        aug_source: &aug_source,
        aug: config.aug,
        val_loss: config.val_loss,
    };
    let domain = AugDomain::new(config.aug);
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, STREAM_RUN + index as u64));
    let mut a = match config.mode {
        Mode::RandomStatic | Mode::RandomDynamic => domain.sample(&mut rng),
        _ => {
            let mut a = init.clone();
            domain.project(&mut a);
            a
        }
    };

    let mut run = TunerRun {
        index,
        init,
        trajectory: Vec::new(),
        final_a: a.clone(),
        theta: theta0.clone(),
        aborted: None,
        stopped_early: false,
        score_variance: None,
        selected: false,
    };
    match warm_start(&problem, theta0, &a, config.warm_epochs, config.alpha, &mut rng) {
        Ok(p) => run.theta = p,
        Err(e) => {
            run.aborted = Some(format!("warm start: {e}"));
            return Ok(run);
        }
    }

    let order = config.mode.order();
    let mut sums = Vec::with_capacity(config.max_iters);
    for t in 0..config.max_iters {
        if config.mode == Mode::RandomDynamic {
            a = domain.sample(&mut rng);
        }
        let draw = AugDraw::sample(aug_source.rows(), &mut rng);
        let before = if config.track_descent {
            match problem.val_loss_at(&run.theta, &a, &draw) {
                Ok(v) => Some(v),
                Err(e) => {
                    run.aborted = Some(format!("iteration {t}: {e}"));
                    break;
                }
            }
        } else {
            None
        };
        let out = match problem.step(
            &run.theta,
            &a,
            &draw,
            config.alpha,
            config.theta_updates_per_iter,
            order,
        ) {
            Ok(o) => o,
            Err(e) => {
                run.aborted = Some(format!("iteration {t}: {e}"));
                break;
            }
        };
        let used = a.values.clone();
        if let Some(g) = &out.grad_a {
            for (v, gi) in a.values.iter_mut().zip(g.data()) {
                *v -= config.beta * gi;
            }
            domain.project(&mut a);
            debug_assert!(domain.contains(&a));
        }
        let theta_next = run.theta.with_values(
            &out.theta.iter().cloned().map(Tensor::constant).collect::<Vec<_>>(),
        )?;
        let next = if config.track_descent {
            problem.val_loss_at(&theta_next, &a, &draw).ok()
        } else {
            None
        };
        run.theta = theta_next;
        let l_sum = out.l_trn + out.l_val;
        run.trajectory.push(IterRecord {
            t,
            a: used,
            l_trn: out.l_trn,
            l_val: out.l_val,
            l_sum,
            l_val_before: before,
            l_val_next: next,
        });
        sums.push(l_sum);
        if stopping_check(&sums, config.patience) {
            run.stopped_early = t + 1 < config.max_iters;
            break;
        }
    }
    run.final_a = a;
    Ok(run)
}

/// How independent runs are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Data-parallel over runs (sequential when the `parallel` feature is off).
    #[default]
    Parallel,
}

/// Maps `f` over `0..n` under the chosen execution, preserving order.
pub fn map_indices<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub runs: Vec<TunerRun>,
    pub selected: usize,
}

impl TuneOutcome {
    pub fn best(&self) -> &TunerRun {
        &self.runs[self.selected]
    }
}

/// `S(θ)` of a run: fit a Gaussian on its training embeddings and take the
/// sample variance of the test scores.
pub fn run_score_variance(run: &TunerRun, view: &TuneView) -> Result<f64> {
    let gde = fit_gde(&run.theta.embed(&view.train)?)?;
    let scores = gde.score_rows(&run.theta.embed(&view.test)?)?;
    score_variance(&scores)
}

/// Index of the run with the largest `S(θ)`; ties go to the lower final
/// summed loss, then the lower index. Runs without a score are skipped.
pub fn select_init(runs: &[TunerRun]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in runs.iter().enumerate() {
        let Some(s) = r.score_variance.filter(|s| s.is_finite()) else {
            continue;
        };
        best = match best {
            None => Some(i),
            Some(b) => {
                let sb = runs[b].score_variance.expect("scored");
                let better = s > sb || (s == sb && r.final_loss() < runs[b].final_loss());
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or_else(|| Error::InsufficientData("no completed run to select".into()))
}

/// Runs every initialization and scores the runs that completed, without
/// selecting one. Aborted runs keep their partial trajectories.
pub fn tune_all(config: &TunerConfig, view: &TuneView, exec: Execution) -> Result<Vec<TunerRun>> {
    config.validate()?;
    let theta0 = initial_params(config, view.input_dim())?;
    map_indices(config.init_list.len(), exec, |i| {
        let mut run = tune_single(config, view, i, &theta0)?;
        if run.aborted.is_none() {
            match run_score_variance(&run, view) {
                Ok(s) => run.score_variance = Some(s),
                Err(e) => run.aborted = Some(format!("scoring: {e}")),
            }
        }
        Ok(run)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()
}

/// Runs every initialization and selects one by score variance.
pub fn tune(config: &TunerConfig, view: &TuneView, exec: Execution) -> Result<TuneOutcome> {
    TuneOutcome::select(tune_all(config, view, exec)?)
}

impl TuneOutcome {
    /// Marks the run chosen by [`select_init`].
    pub fn select(mut runs: Vec<TunerRun>) -> Result<Self> {
        let selected = select_init(&runs)?;
        runs[selected].selected = true;
        Ok(Self { runs, selected })
    }
}

/// Trajectory as CSV with header `t,a0,a1,a2,l_trn,l_val,l_sum`; unused
/// hyperparameter columns are left empty.
pub fn trajectory_csv(run: &TunerRun) -> String {
    let mut out = String::from("t,a0,a1,a2,l_trn,l_val,l_sum\n");
    for r in &run.trajectory {
        let a: Vec<String> = (0..3)
            .map(|k| r.a.get(k).map(|v| format!("{v:?}")).unwrap_or_default())
            .collect();
        out.push_str(&format!(
            "{},{},{:?},{:?},{:?}\n",
            r.t,
            a.join(","),
            r.l_trn,
            r.l_val,
            r.l_sum
        ));
    }
    out
}
