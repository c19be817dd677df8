//! Finite-difference and invariant suites shared by the test harness and the
//! `gradcheck` command.
//!
//! Every check compares an analytic quantity with an independent numeric
//! one and records the relative error against its tolerance.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{cutdiff_batch, cutdiff_mask, rotate_batch, AugDraw, AugParams, PatchShape};
use crate::datagen::gen_texture;
use crate::detector::EncoderParams;
use crate::error::{Error, Result};
use crate::image::batch;
use crate::tensor::{finite_diff_check, NdArray, OpKind, Tensor};
use crate::tuner::{bilevel_step, Order, Problem, TuneView};
use crate::valloss::{
    appendix_configuration, appendix_oracle, mean_distance_loss, normalize_tpsd, tpsd,
    EmbeddingBatch, ValLossKind,
};

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;
pub const HYPERGRAD_TOL: f64 = 1e-2;
const FD_STEP: f64 = 1e-5;
const HYPER_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Tensor,
    Augment,
    Valloss,
    Tuner,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Tensor, Suite::Augment, Suite::Valloss, Suite::Tuner];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Tensor => "tensor",
            Suite::Augment => "augment",
            Suite::Valloss => "valloss",
            Suite::Tuner => "tuner",
        }
    }

    pub fn from_name(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    /// Worst relative (or absolute, for exact identities) error observed.
    pub error: f64,
    pub tol: f64,
    /// Set when the check could not be evaluated at all.
    pub failure: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.error <= self.tol
    }

    fn from(name: impl Into<String>, tol: f64, r: Result<f64>) -> Self {
        let name = name.into();
        match r {
            Ok(error) if error.is_finite() => Self { name, error, tol, failure: None },
            Ok(error) => Self { name, error, tol, failure: Some(format!("error is {error}")) },
            Err(e) => Self { name, error: f64::INFINITY, tol, failure: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    /// The check with the largest error relative to its tolerance.
    pub fn worst(&self) -> Option<&Check> {
        self.checks
            .iter()
            .max_by(|a, b| (a.error / a.tol).total_cmp(&(b.error / b.tol)))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

/// Runs one suite. `seed` fixes every random input.
pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = match suite {
        Suite::Tensor => tensor_checks(&mut rng),
        Suite::Augment => augment_checks(&mut rng),
        Suite::Valloss => valloss_checks(&mut rng),
        Suite::Tuner => tuner_checks(&mut rng),
    };
    SuiteReport { suite, checks }
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, 1e-12)`.
pub fn vector_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Central differences of a scalar function of a vector.
pub fn central_diff(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut p = x.to_vec();
        p[i] += h;
        let fp = f(&p)?;
        p[i] -= 2.0 * h;
        let fm = f(&p)?;
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

fn tensor_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    primitive_cases()
        .into_iter()
        .map(|(kind, case)| {
            let r = (0..20).try_fold(0.0f64, |worst, _| {
                let (x, f) = case(rng);
                Ok::<_, Error>(worst.max(finite_diff_check(f, &x, FD_STEP)?.max_rel_err))
            });
            Check::from(kind.name(), PRIMITIVE_TOL, r)
        })
        .collect()
}

fn augment_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let side = 8;
    let mut checks = Vec::new();

    let r = (0..10).try_fold(0.0f64, |worst, _| {
        let a = NdArray::vector(vec![rng.gen_range(0.1..0.4), rng.gen_range(-0.2..0.2), rng.gen_range(0.1..0.4)]);
        let centers: Vec<[f64; 2]> = (0..3).map(|_| [rng.gen(), rng.gen()]).collect();
        let w = Tensor::constant(NdArray::matrix(3, side * side, (0..3 * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect())?);
        let f = |a: &Tensor| cutdiff_mask(a, side, &centers)?.mul(&w).map(|t| t.sum());
        Ok::<_, Error>(worst.max(finite_diff_check(f, &a, FD_STEP)?.max_rel_err))
    });
    checks.push(Check::from("cutdiff mask wrt a", COMPOSITE_TOL, r));

    // a constant image keeps x - p inside (0, 1], away from the clamp kink at 0
    let r = (0..10).try_fold(0.0f64, |worst, _| {
        let a = NdArray::vector(vec![rng.gen_range(0.1..0.4), rng.gen_range(-0.2..0.2), rng.gen_range(0.1..0.4)]);
        let centers: Vec<[f64; 2]> = (0..2).map(|_| [rng.gen(), rng.gen()]).collect();
        let x = Tensor::constant(NdArray::full(&[2, side * side], 1.0));
        let w = Tensor::constant(NdArray::matrix(2, side * side, (0..2 * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect())?);
        let f = |a: &Tensor| cutdiff_batch(&x, a, side, 1, &centers)?.mul(&w).map(|t| t.sum());
        Ok::<_, Error>(worst.max(finite_diff_check(f, &a, FD_STEP)?.max_rel_err))
    });
    checks.push(Check::from("cutdiff image wrt a", COMPOSITE_TOL, r));

    let r = (0..10).try_fold(0.0f64, |worst, _| {
        let angle = NdArray::vector(vec![rng.gen_range(0.0..std::f64::consts::TAU)]);
        let x = Tensor::constant(NdArray::matrix(2, side * side, (0..2 * side * side).map(|_| rng.gen()).collect())?);
        let w = Tensor::constant(NdArray::matrix(2, side * side, (0..2 * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect())?);
        let f = |t: &Tensor| rotate_batch(&x, t, side, 1)?.mul(&w).map(|t| t.sum());
        Ok::<_, Error>(worst.max(finite_diff_check(f, &angle, FD_STEP)?.max_rel_err))
    });
    checks.push(Check::from("rotation wrt angle", COMPOSITE_TOL, r));
    checks
}

fn random_batch(rng: &mut ChaCha8Rng, counts: [usize; 3], h: usize) -> Result<EmbeddingBatch> {
    let n: usize = counts.iter().sum();
    let z = NdArray::matrix(n, h, (0..n * h).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
    EmbeddingBatch::new(Tensor::constant(z), counts[0], counts[1], counts[2])
}

fn valloss_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut checks = Vec::new();

    let zero = Tensor::scalar(0.0);
    let r = appendix_configuration(&zero, &zero).map(|l| (l.item() - 1.0).abs());
    checks.push(Check::from("perfect alignment equals 1", 1e-6, r));

    let r = (0..100).try_fold(0.0f64, |worst, _| {
        let (u1, u2) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        let l = appendix_configuration(&Tensor::scalar(u1), &Tensor::scalar(u2))?.item();
        Ok::<_, Error>(worst.max((l - appendix_oracle(u1, u2)).abs()))
    });
    checks.push(Check::from("four-point closed form", 1e-8, r));

    let r = (0..100).try_fold(0.0f64, |worst, _| {
        let counts = [rng.gen_range(2..6), rng.gen_range(2..6), rng.gen_range(2..6)];
        let h = rng.gen_range(1..5);
        let batch = random_batch(rng, counts, h)?;
        let norm = normalize_tpsd(&batch)?;
        let z = norm.batch.rows().array();
        let n = z.rows() as f64;
        let mean = Tensor::constant(z.clone()).mean_rows()?;
        let mean_err = mean.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fro_err = (z.data().iter().map(|v| v * v).sum::<f64>() - n).abs();
        let tpsd_err = (tpsd(z) - 2.0 * n * n).abs() / (2.0 * n * n);
        Ok::<_, Error>(worst.max(mean_err / 1e-10).max(fro_err / 1e-8).max(tpsd_err / 1e-6))
    });
    checks.push(Check::from("normalization invariants (error / tolerance)", 1.0, r));

    let r = (0..100).try_fold(0.0f64, |worst, _| {
        let counts = [rng.gen_range(2..6), rng.gen_range(2..6), rng.gen_range(2..6)];
        let batch = random_batch(rng, counts, 3)?;
        let base = mean_distance_loss(&normalize_tpsd(&batch)?.batch)?.item();
        let c = rng.gen_range(0.1..10.0) * if rng.gen() { 1.0 } else { -1.0 };
        let shift = Tensor::constant(NdArray::vector((0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()));
        let moved = batch.rows().scale(c).add(&shift)?;
        let moved = EmbeddingBatch::new(moved, counts[0], counts[1], counts[2])?;
        let l = mean_distance_loss(&normalize_tpsd(&moved)?.batch)?.item();
        Ok::<_, Error>(worst.max((l - base).abs()))
    });
    checks.push(Check::from("loss affine invariance", 1e-8, r));

    let r = (0..10).try_fold(0.0f64, |worst, _| {
        let counts = [3, 3, 4];
        let z = random_batch(rng, counts, 4)?.rows().to_array();
        let f = |z: &Tensor| {
            let b = EmbeddingBatch::new(z.clone(), counts[0], counts[1], counts[2])?;
            mean_distance_loss(&normalize_tpsd(&b)?.batch)
        };
        Ok::<_, Error>(worst.max(finite_diff_check(f, &z, FD_STEP)?.max_rel_err))
    });
    checks.push(Check::from("mean distance loss wrt rows", COMPOSITE_TOL, r));
    checks
}

/// The scalar toy: `L_trn = (θ - a)²`, `L_val = θ'²`. Returns `(θ', dL_val/da)`.
pub fn scalar_toy(theta: f64, a: f64, alpha: f64, order: Order) -> Result<(f64, f64)> {
    let out = bilevel_step(
        &[NdArray::scalar(theta)],
        &NdArray::scalar(a),
        alpha,
        1,
        order,
        |a| Ok(a.clone()),
        |th, a| Ok(th[0].sub(a)?.square()),
        |th, _| Ok(th[0].square()),
    )?;
    let g = out.grad_a.map_or(0.0, |g| g.item());
    Ok((out.theta[0].item(), g))
}

/// Four training and four test textures of side 16, plus a fixed encoder.
pub fn micro_problem(seed: u64) -> Result<(TuneView, EncoderParams)> {
    let side = 16;
    let imgs = |base: u64| -> Result<NdArray> {
        let v = (0..4).map(|i| gen_texture(base + i, side, 3)).collect::<Result<Vec<_>>>()?;
        batch(&v)
    };
    let view = TuneView::new(imgs(seed * 100)?, imgs(seed * 100 + 50)?, side, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = EncoderParams::desk(side * side, &mut rng)?;
    Ok((view, params))
}

/// Analytic and finite-difference gradients of `a ↦ L_val(a, θ')` on the
/// micro problem. With `Order::Second`, `θ'` is recomputed at every
/// perturbed `a`; with `Order::First` it is frozen at the base point.
pub fn micro_hypergradient(seed: u64, a: &AugParams, alpha: f64, order: Order) -> Result<(Vec<f64>, Vec<f64>)> {
    micro_hypergradient_with_step(seed, a, alpha, order, HYPER_STEP)
}

/// [`micro_hypergradient`] with a chosen finite-difference step.
pub fn micro_hypergradient_with_step(
    seed: u64,
    a: &AugParams,
    alpha: f64,
    order: Order,
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (view, params) = micro_problem(seed)?;
    let source = view.aug_source(1.0);
    let problem = Problem { view: &view, aug_source: &source, aug: a.kind, val_loss: ValLossKind::MeanDistance };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let draw = AugDraw::sample(source.rows(), &mut rng);
    let base = problem.step(&params, a, &draw, alpha, 1, order)?;
    let analytic = base.grad_a.expect("gradient mode").into_data();
    let frozen = params.with_values(&base.theta.iter().cloned().map(Tensor::constant).collect::<Vec<_>>())?;
    let numeric = central_diff(
        |v| {
            let p = AugParams::new(a.kind, v.to_vec())?;
            match order {
                Order::Second => Ok(problem.step(&params, &p, &draw, alpha, 1, Order::None)?.l_val),
                _ => problem.val_loss_at(&frozen, &p, &draw),
            }
        },
        &a.values,
        h,
    )?;
    Ok((analytic, numeric))
}

/// True if the finite-difference oracle is trustworthy on this draw: the
/// central differences at the standard step and at half of it agree.
///
/// The inner gradient contains relu indicators, so `θ'` and with it
/// `L_val` jump wherever a unit flips. A flip inside the stencil ruins the
/// difference quotient while the analytic gradient stays correct.
pub fn micro_fd_is_smooth(seed: u64, a: &AugParams, alpha: f64, order: Order) -> Result<bool> {
    let (_, n1) = micro_hypergradient_with_step(seed, a, alpha, order, HYPER_STEP)?;
    let (_, n2) = micro_hypergradient_with_step(seed, a, alpha, order, HYPER_STEP / 2.0)?;
    Ok(vector_rel_err(&n1, &n2) < 1e-3)
}

/// First micro-problem draw from `rng` on which the oracle is smooth for
/// every order in `orders`.
fn smooth_draw(rng: &mut ChaCha8Rng, a: &AugParams, alpha: f64, orders: &[Order]) -> Result<u64> {
    for _ in 0..50 {
        let seed = rng.gen_range(1..1000);
        let mut ok = true;
        for &o in orders {
            ok &= micro_fd_is_smooth(seed, a, alpha, o)?;
        }
        if ok {
            return Ok(seed);
        }
    }
    Err(Error::InsufficientData("no micro-problem draw without a kink inside the step".into()))
}

fn tuner_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut checks = Vec::new();
    let r = scalar_toy(1.0, 0.0, 0.1, Order::Second).map(|(tp, g)| (g - 4.0 * 0.1 * tp).abs().max((g - 0.32).abs()));
    checks.push(Check::from("scalar toy second order", 1e-10, r));
    let r = scalar_toy(1.0, 0.0, 0.1, Order::First).map(|(_, g)| g.abs());
    checks.push(Check::from("scalar toy first order", 1e-10, r));

    let both = [Order::Second, Order::First];
    let a = AugParams::cutdiff_shape(PatchShape { angle: 0.3, size: 0.25, ratio: 1.5 });
    for (order, name) in [(Order::Second, "second order"), (Order::First, "first order")] {
        let r = a
            .as_ref()
            .map_err(|e| Error::Invalid(e.to_string()))
            .and_then(|a| micro_hypergradient(smooth_draw(rng, a, 0.5, &both)?, a, 0.5, order))
            .map(|(g, n)| vector_rel_err(&g, &n));
        checks.push(Check::from(format!("cutdiff hypergradient, {name}"), HYPERGRAD_TOL, r));
    }
    let rot = AugParams::rotation(0.7);
    let r = smooth_draw(rng, &rot, 0.5, &[Order::Second])
        .and_then(|seed| micro_hypergradient(seed, &rot, 0.5, Order::Second))
        .map(|(g, n)| vector_rel_err(&g, &n));
    checks.push(Check::from("rotation hypergradient, second order", HYPERGRAD_TOL, r));
    checks
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> (NdArray, Box<dyn Fn(&Tensor) -> Result<Tensor>>)>;

/// One randomized finite-difference case per primitive, with inputs kept
/// away from kinks and domain edges.
pub fn primitive_cases() -> Vec<(OpKind, Case)> {
    let rand_vec = |rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64| {
        NdArray::vector((0..n).map(|_| rng.gen_range(lo..hi)).collect())
    };
    let away_from = |rng: &mut ChaCha8Rng, n: usize, kinks: &[f64]| {
        let mut v = Vec::with_capacity(n);
        while v.len() < n {
            let x: f64 = rng.gen_range(-1.5..2.5);
            if kinks.iter().all(|k| (x - k).abs() > 1e-2) {
                v.push(x);
            }
        }
        NdArray::vector(v)
    };
    let weights = |rng: &mut ChaCha8Rng, n: usize| {
        Tensor::constant(NdArray::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
    };
    let mut cases: Vec<(OpKind, Case)> = Vec::new();
    macro_rules! unary {
        ($kind:expr, $lo:expr, $hi:expr, $f:expr) => {
            cases.push((
                $kind,
                Box::new(move |rng: &mut ChaCha8Rng| {
                    let w = weights(rng, 4);
                    let x = rand_vec(rng, 4, $lo, $hi);
                    let f: Box<dyn Fn(&Tensor) -> Result<Tensor>> =
                        Box::new(move |x: &Tensor| Ok(($f)(x)?.mul(&w)?.sum()));
                    (x, f)
                }),
            ));
        };
    }
    unary!(OpKind::Neg, -2.0, 2.0, |x: &Tensor| Ok::<_, Error>(x.neg()));
    unary!(OpKind::Scale, -2.0, 2.0, |x: &Tensor| Ok::<_, Error>(x.scale(-1.7)));
    unary!(OpKind::AddScalar, -2.0, 2.0, |x: &Tensor| Ok::<_, Error>(x.add_scalar(0.3).square()));
    unary!(OpKind::Exp, -2.0, 2.0, |x: &Tensor| Ok::<_, Error>(x.exp()));
    unary!(OpKind::Log, 0.2, 3.0, |x: &Tensor| x.log());
    unary!(OpKind::Sqrt, 0.2, 3.0, |x: &Tensor| x.sqrt());
    unary!(OpKind::Square, -2.0, 2.0, |x: &Tensor| Ok::<_, Error>(x.square()));
    unary!(OpKind::Sin, -3.0, 3.0, |x: &Tensor| Ok::<_, Error>(x.sin()));
    unary!(OpKind::Cos, -3.0, 3.0, |x: &Tensor| Ok::<_, Error>(x.cos()));
    unary!(OpKind::Sigmoid, -4.0, 4.0, |x: &Tensor| Ok::<_, Error>(x.sigmoid()));
    unary!(OpKind::Softplus, -4.0, 4.0, |x: &Tensor| Ok::<_, Error>(x.softplus()));
    unary!(OpKind::Sum, -2.0, 2.0, |x: &Tensor| Ok::<_, Error>(x.square().sum().broadcast_to(&[4])?));
    unary!(OpKind::Mean, -2.0, 2.0, |x: &Tensor| Ok::<_, Error>(x.square().mean().broadcast_to(&[4])?));
    cases.push((
        OpKind::Relu,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let w = weights(rng, 4);
            let x = away_from(rng, 4, &[0.0]);
            (x, Box::new(move |x: &Tensor| x.relu().mul(&w)).map_sum())
        }),
    ));
    cases.push((
        OpKind::Clamp01,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let w = weights(rng, 4);
            let x = away_from(rng, 4, &[0.0, 1.0]);
            (x, Box::new(move |x: &Tensor| x.clamp01().mul(&w)).map_sum())
        }),
    ));
    let binary = |kind: OpKind, lo: f64, op: fn(&Tensor, &Tensor) -> Result<Tensor>| -> (OpKind, Case) {
        (
            kind,
            Box::new(move |rng: &mut ChaCha8Rng| {
                let other = Tensor::constant(rand_vec(rng, 4, lo, 2.0));
                let x = rand_vec(rng, 4, lo, 2.0);
                let f: Box<dyn Fn(&Tensor) -> Result<Tensor>> = Box::new(move |x: &Tensor| {
                    // exercise both operand positions
                    Ok(op(x, &other)?.add(&op(&other, x)?)?.sum())
                });
                (x, f)
            }),
        )
    };
    cases.push(binary(OpKind::Add, -2.0, |a, b| a.add(b)));
    cases.push(binary(OpKind::Sub, -2.0, |a, b| Ok(a.sub(b)?.square())));
    cases.push(binary(OpKind::Mul, -2.0, |a, b| a.mul(b)));
    // operands in disjoint ranges keep d/dx (x/o + o/x) = 1/o - o/x² away from 0
    cases.push((
        OpKind::Div,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let other = Tensor::constant(rand_vec(rng, 4, 1.0, 2.0));
            let x = rand_vec(rng, 4, 0.3, 0.9);
            let f: Box<dyn Fn(&Tensor) -> Result<Tensor>> =
                Box::new(move |x: &Tensor| Ok(x.div(&other)?.add(&other.div(x)?)?.sum()));
            (x, f)
        }),
    ));
    cases.push((
        OpKind::MatMul,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let b = Tensor::constant(NdArray::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
            let x = NdArray::new(vec![2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let f: Box<dyn Fn(&Tensor) -> Result<Tensor>> = Box::new(move |x: &Tensor| {
                let p = x.matmul(&b)?;
                let q = x.matmul_t(x, true, false)?;
                let r = b.matmul_t(x, true, true)?;
                Ok(p.square().sum().add(&q.square().sum())?.add(&r.sin().sum())?)
            });
            (x, f)
        }),
    ));
    cases.push((
        OpKind::Transpose,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let w = Tensor::constant(NdArray::new(vec![3, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
            let x = NdArray::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (x, Box::new(move |x: &Tensor| Ok(x.transpose()?.mul(&w)?.exp().sum())) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases.push((
        OpKind::Broadcast,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let w = Tensor::constant(NdArray::new(vec![3, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
            let x = NdArray::new(vec![1, 2], (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (x, Box::new(move |x: &Tensor| Ok(x.broadcast_to(&[3, 2])?.mul(&w)?.square().sum())) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases.push((
        OpKind::SumTo,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let x = NdArray::new(vec![3, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (x, Box::new(move |x: &Tensor| Ok(x.sum_to(&[3, 1])?.exp().sum())) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases.push((
        OpKind::Reshape,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let w = Tensor::constant(NdArray::new(vec![3, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
            let x = NdArray::vector((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
            (x, Box::new(move |x: &Tensor| Ok(x.reshape(&[3, 2])?.mul(&w)?.sin().sum())) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases.push((
        OpKind::ConcatRows,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let c = Tensor::constant(NdArray::new(vec![1, 2], vec![rng.gen_range(-1.0..1.0), 0.5]).unwrap());
            let x = NdArray::new(vec![2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (x, Box::new(move |x: &Tensor| {
                let z = Tensor::concat_rows(&[c.clone(), x.clone(), x.scale(2.0)])?;
                Ok(z.mean_rows()?.square().sum())
            }) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases.push((
        OpKind::SliceRows,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let x = NdArray::new(vec![4, 2], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (x, Box::new(move |x: &Tensor| Ok(x.slice_rows(1, 3)?.exp().sum())) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases.push((
        OpKind::GatherCols,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let x = NdArray::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (x, Box::new(move |x: &Tensor| {
                Ok(x.gather_cols(vec![Some(2), None, Some(0), Some(2)])?.exp().sum())
            }) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases.push((
        OpKind::ScatterCols,
        Box::new(move |rng: &mut ChaCha8Rng| {
            let x = NdArray::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (x, Box::new(move |x: &Tensor| {
                Ok(x.scatter_cols(vec![Some(1), None, Some(1)], 4)?.square().sum())
            }) as Box<dyn Fn(&Tensor) -> Result<Tensor>>)
        }),
    ));
    cases
}

trait MapSum {
    fn map_sum(self) -> Box<dyn Fn(&Tensor) -> Result<Tensor>>;
}

impl<F: Fn(&Tensor) -> Result<Tensor> + 'static> MapSum for Box<F> {
    fn map_sum(self) -> Box<dyn Fn(&Tensor) -> Result<Tensor>> {
        Box::new(move |x: &Tensor| Ok((self)(x)?.sum()))
    }
}

