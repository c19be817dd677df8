//! End-to-end acceptance checks, run without the libtest harness so every
//! criterion prints one status line. Exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;

use experiments::{cutdiff_spec, median, mode_of, task_name, METHODS, RATIOS, SIZES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stssad::augment::{AugKind, AugParams};
use stssad::datagen::{build_testbed, AnomalyKind, SynthSpec};
use stssad::eval::{auc, build_table, evaluate_run, wilcoxon_one_sided, ComparisonTable, Label, ResultRow};
use stssad::gradcheck::{run_suite, scalar_toy, Suite};
use stssad::tensor::{NdArray, Tape, Tensor};
use stssad::tuner::{map_indices, rotation_init_grid, trajectory_csv, tune, Execution, Order, TunerConfig};
use stssad::valloss::{mean_distance_loss, normalize_tpsd, tpsd, validation_loss, EmbeddingBatch, ValLossKind};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("[{id:>2}] {status} {name}: {detail}");
}

fn matrix(n: usize, h: usize, v: Vec<f64>) -> Tensor {
    Tensor::constant(NdArray::matrix(n, h, v).unwrap())
}

/// Loss of `Z_trn = {0}`, `Z_aug = {2}`, test `{u1, u2 + 2}` in one dimension.
fn four_point(u1: &Tensor, u2: &Tensor) -> Tensor {
    let c = |v: f64| matrix(1, 1, vec![v]);
    let z = Tensor::concat_rows(&[c(0.0), c(2.0), u1.reshape(&[1, 1]).unwrap(), u2.reshape(&[1, 1]).unwrap().add_scalar(2.0)]).unwrap();
    let b = EmbeddingBatch::new(z, 1, 1, 2).unwrap();
    mean_distance_loss(&normalize_tpsd(&b).unwrap().batch).unwrap()
}

fn closed_form(u1: f64, u2: f64) -> f64 {
    (u1.abs() + (u1 - 2.0).abs() + u2.abs() + (u2 + 2.0).abs())
        / (3.0 * u1 * u1 + 3.0 * u2 * u2 - 8.0 * u1 + 8.0 * u2 - 2.0 * u1 * u2 + 16.0).sqrt()
}

fn c01_perfect_alignment() -> bool {
    let z = matrix(4, 1, vec![0.0, 2.0, 0.0, 2.0]);
    let l = validation_loss(ValLossKind::MeanDistance, &EmbeddingBatch::new(z, 1, 1, 2).unwrap()).unwrap().item();
    let err = (l - 1.0).abs();
    report(1, "perfect alignment", err <= 1e-6, format!("L_val = {l:.9}, |err| = {err:.1e} (tol 1e-6)"));
    err <= 1e-6
}

fn c02_four_point_oracle_and_landscape() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (u1, u2) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        let l = four_point(&Tensor::scalar(u1), &Tensor::scalar(u2)).item();
        worst = worst.max((l - closed_form(u1, u2)).abs());
    }
    let n = 41;
    let at = |k: usize| -1.0 + 2.0 * k as f64 / (n - 1) as f64;
    let (mut best, mut argmin) = (f64::INFINITY, (0, 0));
    let (mut good, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let tape = Tape::new();
            let (a, b) = (tape.leaf(NdArray::scalar(at(i))), tape.leaf(NdArray::scalar(at(j))));
            let l = four_point(&a, &b);
            if l.item() < best {
                best = l.item();
                argmin = (i, j);
            }
            if (i, j) == (n / 2, n / 2) {
                continue;
            }
            let g = tape.grad(&l, &[a, b], false).unwrap();
            total += 1;
            // -∇L · (0 - u) > 0
            if g[0].item() * at(i) + g[1].item() * at(j) > 0.0 {
                good += 1;
            }
        }
    }
    let frac = good as f64 / total as f64;
    let pass = worst <= 1e-8 && argmin == (n / 2, n / 2) && frac >= 0.95;
    report(2, "four-point oracle", pass, format!("max |err| = {worst:.1e} (tol 1e-8), argmin {argmin:?}, descent toward origin {:.1}%", 100.0 * frac));
    pass
}

fn c03_normalization_invariants() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mean_err, mut fro_err, mut tpsd_err, mut affine_err) = (0f64, 0f64, 0f64, 0f64);
    for _ in 0..100 {
        let (nt, na, ne, h) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
        let n = nt + na + ne;
        let v: Vec<f64> = (0..n * h).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b = EmbeddingBatch::new(matrix(n, h, v.clone()), nt, na, ne).unwrap();
        let z = normalize_tpsd(&b).unwrap().batch.rows().to_array();
        for c in 0..h {
            let m: f64 = (0..n).map(|i| z.row(i)[c]).sum::<f64>() / n as f64;
            mean_err = mean_err.max(m.abs());
        }
        let fro: f64 = z.data().iter().map(|x| x * x).sum();
        fro_err = fro_err.max((fro - n as f64).abs());
        let target = 2.0 * (n * n) as f64;
        tpsd_err = tpsd_err.max((tpsd(&z) - target).abs() / target);

        let base = mean_distance_loss(&normalize_tpsd(&b).unwrap().batch).unwrap().item();
        let scale = rng.gen_range(0.1..10.0);
        let shift: Vec<f64> = (0..h).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let moved: Vec<f64> = v.iter().enumerate().map(|(k, x)| scale * x + shift[k % h]).collect();
        let b2 = EmbeddingBatch::new(matrix(n, h, moved), nt, na, ne).unwrap();
        let l2 = mean_distance_loss(&normalize_tpsd(&b2).unwrap().batch).unwrap().item();
        affine_err = affine_err.max((l2 - base).abs());
    }
    let pass = mean_err <= 1e-10 && fro_err <= 1e-8 && tpsd_err <= 1e-6 && affine_err <= 1e-8;
    report(3, "normalization invariants", pass, format!("mean {mean_err:.1e}, frobenius {fro_err:.1e}, tpsd rel {tpsd_err:.1e}, affine {affine_err:.1e}"));
    pass
}

fn c04_gradient_suites() -> bool {
    let mut lines = Vec::new();
    let mut pass = true;
    for suite in Suite::ALL {
        let r = run_suite(suite, 0);
        pass &= r.passed();
        let w = r.worst().map(|c| format!("{} {:.1e}/{:.0e}", c.name, c.error, c.tol)).unwrap_or_default();
        lines.push(format!("{suite}: {} ({w})", if r.passed() { "ok" } else { "failed" }));
    }
    // L_trn = (θ - a)², L_val = θ'²: second order gives 4αθ', first order 0
    let (theta, a, alpha) = (1.3, 0.4, 0.1);
    let (tp, g2) = scalar_toy(theta, a, alpha, Order::Second).unwrap();
    let (_, g1) = scalar_toy(theta, a, alpha, Order::First).unwrap();
    let tp_ref = theta - 2.0 * alpha * (theta - a);
    let toy = (tp - tp_ref).abs() <= 1e-12 && (g2 - 4.0 * alpha * tp_ref).abs() <= 1e-10 && g1 == 0.0;
    pass &= toy;
    lines.push(format!("scalar toy: second {g2:.12} vs {:.12}, first {g1}", 4.0 * alpha * tp_ref));
    report(4, "gradient suites", pass, lines.join("; "));
    pass
}

/// Seeds per task on the CutDiff grid; recovery uses the first three.
const GRID_SEEDS: u64 = 5;

#[derive(Clone, Debug)]
struct Cell {
    task: String,
    method: &'static str,
    seed: u64,
    auc: f64,
    learned_size: f64,
}

/// Tunes and evaluates every (task, seed, method) of the CutDiff grid.
fn cutdiff_grid() -> &'static [Cell] {
    static GRID: OnceLock<Vec<Cell>> = OnceLock::new();
    GRID.get_or_init(|| {
        let mut jobs = Vec::new();
        for &size in &SIZES {
            for &ratio in &RATIOS {
                for seed in 0..GRID_SEEDS {
                    for &method in &METHODS {
                        jobs.push((size, ratio, seed, method));
                    }
                }
            }
        }
        map_indices(jobs.len(), Execution::Parallel, |k| {
            let (size, ratio, seed, method) = jobs[k];
            let ds = build_testbed(&cutdiff_spec(size, ratio, seed)).unwrap();
            let cfg = TunerConfig { seed, mode: mode_of(method).unwrap(), ..Default::default() };
            let out = tune(&cfg, &ds.tune_view().unwrap(), Execution::Sequential).unwrap();
            let best = out.best();
            Cell {
                task: task_name(size, ratio),
                method,
                seed,
                auc: evaluate_run(&best.theta, &ds).unwrap().auc,
                learned_size: best.final_a.patch_shape().unwrap().size,
            }
        })
    })
}

fn c05_cutdiff_recovery() -> bool {
    let cells: Vec<&Cell> = cutdiff_grid().iter().filter(|c| c.method == "st_ssad" && c.seed < 3).collect();
    let mut per_task = Vec::new();
    let mut all_sizes_ok = true;
    let mut task_aucs = Vec::new();
    for &size in &SIZES {
        for &ratio in &RATIOS {
            let name = task_name(size, ratio);
            let mine: Vec<&&Cell> = cells.iter().filter(|c| c.task == name).collect();
            let learned = median(&mut mine.iter().map(|c| c.learned_size).collect::<Vec<_>>());
            let a = median(&mut mine.iter().map(|c| c.auc).collect::<Vec<_>>());
            let ok = learned >= size / 2.0 && learned <= size * 2.0;
            all_sizes_ok &= ok;
            task_aucs.push(a);
            per_task.push(format!("{name}: size {learned:.3} ({}) auc {a:.3}", if ok { "ok" } else { "off" }));
        }
    }
    let auc_med = median(&mut task_aucs);
    let pass = all_sizes_ok && auc_med >= 0.90;
    report(5, "cutdiff recovery", pass, format!("median auc {auc_med:.3} (need 0.90); {}", per_task.join("; ")));
    pass
}

fn c06_rotation_recovery() -> bool {
    let runs = map_indices(3, Execution::Parallel, |seed| {
        let seed = seed as u64;
        let spec = SynthSpec { seed, anomaly: AnomalyKind::Rotation { angle: PI }, ..Default::default() };
        let ds = build_testbed(&spec).unwrap();
        let cfg = TunerConfig { seed, aug: AugKind::Rotation, init_list: rotation_init_grid(), ..Default::default() };
        let out = tune(&cfg, &ds.tune_view().unwrap(), Execution::Sequential).unwrap();
        let best = out.best();
        (best.final_a.values[0].rem_euclid(2.0 * PI).to_degrees(), evaluate_run(&best.theta, &ds).unwrap().auc)
    });
    let angles: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let angle_ok = angles.iter().all(|a| (a - 180.0).abs() <= 15.0);
    let auc_med = median(&mut runs.iter().map(|r| r.1).collect::<Vec<_>>());
    let pass = angle_ok && auc_med >= 0.90;
    let shown: Vec<String> = angles.iter().map(|a| format!("{a:.1}°")).collect();
    report(6, "rotation recovery", pass, format!("selected angles [{}] (need 180° ± 15°), median auc {auc_med:.3}", shown.join(", ")));
    pass
}

fn grid_table() -> ComparisonTable {
    let rows: Vec<ResultRow> = cutdiff_grid()
        .iter()
        .map(|c| ResultRow { task: c.task.clone(), method: c.method.into(), seed: c.seed, auc: c.auc })
        .collect();
    build_table(&rows, "st_ssad").unwrap()
}

fn c07_baseline_ordering() -> bool {
    let table = grid_table();
    let p = |m: &str| table.comparisons.iter().find(|c| c.method == m).and_then(|c| c.p_value);
    let shown: Vec<String> = table
        .comparisons
        .iter()
        .map(|c| match c.p_value {
            Some(p) => format!("{} p={p:.4} ({} pairs)", c.method, c.pairs),
            None => format!("{} p=n/a ({})", c.method, c.note.clone().unwrap_or_default()),
        })
        .collect();
    let pass = p("rs_cutdiff").is_some_and(|p| p < 0.05) && p("rd_cutdiff").is_some_and(|p| p < 0.05);
    report(7, "baseline ordering", pass, shown.join("; "));
    pass
}

fn c08_mmd_ablations_run() -> bool {
    let mut jobs = Vec::new();
    for &size in &SIZES {
        for &ratio in &RATIOS {
            for kind in [ValLossKind::MmdNormalized, ValLossKind::MmdRaw] {
                jobs.push((size, ratio, kind));
            }
        }
    }
    let out = map_indices(jobs.len(), Execution::Parallel, |k| {
        let (size, ratio, kind) = jobs[k];
        let ds = build_testbed(&cutdiff_spec(size, ratio, 0)).unwrap();
        let cfg = TunerConfig { val_loss: kind, ..Default::default() };
        let run = tune(&cfg, &ds.tune_view().unwrap(), Execution::Sequential).map_err(|e| e.to_string())?;
        let finite = run.runs.iter().all(|r| r.aborted.is_none() && r.trajectory.iter().all(|t| t.l_sum.is_finite()));
        let a = evaluate_run(&run.best().theta, &ds).map_err(|e| e.to_string())?.auc;
        Ok::<_, String>((finite, a))
    });
    let ok = out.iter().filter(|r| matches!(r, Ok((true, a)) if (0.0..=1.0).contains(a))).count();
    let aucs: Vec<String> = out.iter().map(|r| r.as_ref().map_or("err".into(), |r| format!("{:.2}", r.1))).collect();
    let pass = ok == jobs.len();
    report(8, "mmd ablations", pass, format!("{ok}/{} runs finite with auc [{}]", jobs.len(), aucs.join(", ")));
    pass
}

fn pair_auc(s: &[f64], l: &[Label]) -> f64 {
    let (mut w, mut p) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] == Label::Anomaly && l[j] == Label::Normal {
                p += 1.0;
                w += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    w / p
}

fn enumerated_p(d: &[f64]) -> f64 {
    let n = d.len();
    let rank = |x: f64| {
        let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
        let eq = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
        below + (eq + 1.0) / 2.0
    };
    let r: Vec<f64> = d.iter().map(|&x| rank(x)).collect();
    let w: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| r[i]).sum();
    let hits = (0u32..1 << n).filter(|m| (0..n).filter(|&i| m >> i & 1 == 1).map(|i| r[i]).sum::<f64>() >= w - 1e-9).count();
    hits as f64 / (1u64 << n) as f64
}

fn c09_eval_oracles() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut auc_err: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..30);
        let mut l: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.4) { Label::Anomaly } else { Label::Normal }).collect();
        l[0] = Label::Anomaly;
        l[1] = Label::Normal;
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        auc_err = auc_err.max((auc(&s, &l).unwrap() - pair_auc(&s, &l)).abs());
    }
    let mut wil_err: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..500 {
        let n = rng.gen_range(5..=10);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=6) as f64 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        wil_err = wil_err.max((wilcoxon_one_sided(&d).unwrap() - enumerated_p(&d)).abs());
        cases += 1;
    }
    let five = wilcoxon_one_sided(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let pass = auc_err <= 1e-12 && wil_err <= 1e-12 && five == 0.03125;
    report(9, "eval oracles", pass, format!("auc max |err| {auc_err:.1e} over 1000, wilcoxon max |err| {wil_err:.1e} over {cases}, n=5 all positive p = {five}"));
    pass
}

fn c10_determinism() -> bool {
    let ds = build_testbed(&cutdiff_spec(0.08, 2.0, 7)).unwrap();
    let view = ds.tune_view().unwrap();
    let cfg = TunerConfig { seed: 7, max_iters: 40, ..Default::default() };
    let csvs = |exec| -> Vec<String> { tune(&cfg, &view, exec).unwrap().runs.iter().map(trajectory_csv).collect() };
    let first = csvs(Execution::Parallel);
    let same = first == csvs(Execution::Parallel) && first == csvs(Execution::Sequential);

    let reports = || -> Vec<Vec<u8>> {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<ResultRow> = (0..5u64)
            .flat_map(|seed| {
                let ds = build_testbed(&SynthSpec { seed, side: 16, n_train: 16, n_test_normal: 12, n_test_anomaly: 4, ..Default::default() }).unwrap();
                let view = ds.tune_view().unwrap();
                ["st_ssad", "fo"].map(|m| {
                    let cfg = TunerConfig { seed, mode: mode_of(m).unwrap(), max_iters: 5, warm_epochs: 2, init_list: vec![AugParams::cutdiff_isotropic(0.1)], ..Default::default() };
                    let out = tune(&cfg, &view, Execution::Parallel).unwrap();
                    ResultRow { task: "t".into(), method: m.into(), seed, auc: evaluate_run(&out.best().theta, &ds).unwrap().auc }
                })
            })
            .collect();
        build_table(&rows, "st_ssad").unwrap().write_reports(dir.path()).unwrap();
        ["results.json", "results.csv", "table.md"].iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect()
    };
    let reports_same = reports() == reports();
    let pass = same && reports_same;
    report(10, "determinism", pass, format!("trajectory csvs identical: {same}, reports identical: {reports_same}"));
    pass
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> bool); 10] = [
        (1, c01_perfect_alignment),
        (2, c02_four_point_oracle_and_landscape),
        (3, c03_normalization_invariants),
        (4, c04_gradient_suites),
        (5, c05_cutdiff_recovery),
        (6, c06_rotation_recovery),
        (7, c07_baseline_ordering),
        (8, c08_mmd_ablations_run),
        (9, c09_eval_oracles),
        (10, c10_determinism),
    ];
    let mut failed = Vec::new();
    for (id, f) in criteria {
        let ok = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
            println!("[{id:>2}] FAIL: panicked");
            false
        });
        if !ok {
            failed.push(id);
        }
    }
    println!("acceptance: {}/10 passed{}", 10 - failed.len(), if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") });
    if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
