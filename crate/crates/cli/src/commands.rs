use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stssad::augment::{apply_batch, AugDraw, AugParams};
use stssad::datagen::{build_testbed, load_dataset, save_dataset, save_png, Dataset, SynthSpec};
use stssad::detector::{load_checkpoint, save_checkpoint};
use stssad::eval::{build_table, evaluate_run, ResultRow};
use stssad::gradcheck::{run_suite, Suite};
use stssad::image::{batch, unbatch};
use stssad::tensor::{fault, NdArray, Tensor, ALL_KINDS};
use stssad::tuner::{map_indices, trajectory_csv, tune_all, Execution, Mode, TuneOutcome, TunerRun};

use crate::config::{DatasetSource, ExperimentConfig, Job};
use crate::CliError;

const RECORD: &str = "result.json";
const ABORTED: &str = "ABORTED";
const DUMPS: usize = 4;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn warn_if_unscorable(spec: &SynthSpec) {
    if spec.n_test_anomaly == 0 {
        eprintln!("warning: n_test_anomaly = 0, AUC will be undefined for this dataset");
    }
}

pub fn synth(spec: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    let mut spec: SynthSpec = match spec {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Usage(format!("spec: {e}")))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let out = out.unwrap_or(Path::new("data"));
    warn_if_unscorable(&spec);
    let ds = build_testbed(&spec)?;
    save_dataset(&ds, out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    println!(
        "wrote {}: {} train, {} test, side {}, anomaly {}",
        out.display(),
        ds.train.len(),
        ds.test.len(),
        ds.meta.side,
        serde_json::to_string(&spec.anomaly).map_err(runtime)?
    );
    Ok(())
}

/// What `tune` leaves in each run directory for `eval` to pick up.
#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    task: String,
    method: String,
    seed: u64,
    dataset: PathBuf,
    selected: usize,
    final_a: AugParams,
    runs: Vec<RunSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    index: usize,
    init: AugParams,
    final_a: AugParams,
    iterations: usize,
    stopped_early: bool,
    score_variance: Option<f64>,
    aborted: Option<String>,
}

pub fn tune(
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    dry_run: bool,
    mode: Option<Mode>,
) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::parse(&read_text(config)?)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let jobs = cfg.jobs(mode)?;
    if dry_run {
        let budget: usize = jobs.iter().map(|j| j.tuner.iteration_budget()).sum();
        println!("{}", serde_json::to_string_pretty(&cfg).map_err(runtime)?);
        for j in &jobs {
            println!("{} seed {}: {} runs, mode {}", j.method, j.seed, j.tuner.init_list.len(), j.tuner.mode.name());
        }
        println!("{} jobs, at most {budget} iterations", jobs.len());
        return Ok(());
    }
    let root = out.unwrap_or(Path::new("runs")).join(&cfg.task);

    // datasets first, one per seed, written from this thread only
    let mut datasets: Vec<(u64, PathBuf, Dataset)> = Vec::new();
    for &s in &cfg.seeds {
        let (dir, ds) = match &cfg.dataset {
            DatasetSource::Synth(spec) => {
                let spec = SynthSpec { seed: s, ..spec.clone() };
                warn_if_unscorable(&spec);
                let dir = root.join("data").join(format!("seed_{s}"));
                let ds = build_testbed(&spec)?;
                save_dataset(&ds, &dir)?;
                (dir, load_dataset(&root.join("data").join(format!("seed_{s}")))?)
            }
            DatasetSource::Path(p) => (p.clone(), load_dataset(p)?),
        };
        let dir = fs::canonicalize(&dir)?;
        datasets.push((s, dir, ds));
    }
    let dataset_of = |s: u64| datasets.iter().find(|d| d.0 == s).expect("dataset per seed");

    let results: Vec<Result<Vec<TunerRun>, stssad::Error>> = map_indices(jobs.len(), Execution::Parallel, |k| {
        let job = &jobs[k];
        let view = dataset_of(job.seed).2.tune_view()?;
        tune_all(&job.tuner, &view, Execution::Parallel)
    });

    let mut failures = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let dir = root.join(&job.method).join(format!("seed_{}", job.seed));
        fs::create_dir_all(&dir)?;
        let _ = fs::remove_file(dir.join(ABORTED));
        match res {
            Ok(runs) => {
                let (_, ds_dir, ds) = dataset_of(job.seed);
                if let Some(reason) = write_run(&dir, &cfg.task, job, ds_dir, ds, runs)? {
                    failures.push(format!("{} seed {}: {reason}", job.method, job.seed));
                }
            }
            Err(e) => {
                fs::write(dir.join(ABORTED), format!("{e}\n"))?;
                failures.push(format!("{} seed {}: {e}", job.method, job.seed));
            }
        }
    }
    println!("wrote {} runs under {}", jobs.len(), root.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("aborted runs:\n  {}", failures.join("\n  "))))
    }
}

/// Writes trajectories, the record, the checkpoint and image dumps of one
/// job. Returns the abort reason if any run aborted, in which case only the
/// trajectories and an ABORTED marker are written.
fn write_run(
    dir: &Path,
    task: &str,
    job: &Job,
    dataset: &Path,
    ds: &Dataset,
    runs: Vec<TunerRun>,
) -> Result<Option<String>, CliError> {
    for r in &runs {
        fs::write(dir.join(format!("run_{}.csv", r.index)), trajectory_csv(r))?;
    }
    let aborted: Vec<String> = runs
        .iter()
        .filter_map(|r| r.aborted.as_ref().map(|a| format!("run {}: {a}", r.index)))
        .collect();
    if !aborted.is_empty() {
        fs::write(dir.join(ABORTED), aborted.join("\n") + "\n")?;
        return Ok(Some(aborted.join("; ")));
    }
    let outcome = TuneOutcome::select(runs)?;
    let best = outcome.best();
    let record = RunRecord {
        task: task.into(),
        method: job.method.clone(),
        seed: job.seed,
        dataset: dataset.to_path_buf(),
        selected: outcome.selected,
        final_a: best.final_a.clone(),
        runs: outcome
            .runs
            .iter()
            .map(|r| RunSummary {
                index: r.index,
                init: r.init.clone(),
                final_a: r.final_a.clone(),
                iterations: r.trajectory.len(),
                stopped_early: r.stopped_early,
                score_variance: r.score_variance,
                aborted: r.aborted.clone(),
            })
            .collect(),
    };
    save_checkpoint(&best.theta, &dir.join("detector.ckpt"))?;
    write_dumps(dir, ds, &best.final_a)?;
    // the record goes last: its presence marks a finished job
    fs::write(dir.join(RECORD), serde_json::to_string_pretty(&record).map_err(runtime)? + "\n")?;
    Ok(None)
}

/// `before_k.png` is a training image, `after_k.png` the same image under
/// the learned augmentation.
fn write_dumps(dir: &Path, ds: &Dataset, a: &AugParams) -> Result<(), CliError> {
    let n = DUMPS.min(ds.train.len());
    let x = batch(&ds.train[..n])?;
    let draw = AugDraw::sample(n, &mut ChaCha8Rng::seed_from_u64(0));
    let (side, channels) = (ds.meta.side, ds.meta.channels);
    let aug = apply_batch(
        a.kind,
        &Tensor::constant(x),
        &Tensor::constant(NdArray::vector(a.values.clone())),
        side,
        channels,
        &draw,
    )?;
    let after = unbatch(&aug.to_array(), side, channels)?;
    for (k, (b, a)) in ds.train[..n].iter().zip(&after).enumerate() {
        save_png(b, &dir.join(format!("before_{k}.png")))?;
        save_png(&a.quantized(), &dir.join(format!("after_{k}.png")))?;
    }
    Ok(())
}

fn find_records(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_records(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == RECORD) {
            out.push(p);
        }
    }
    Ok(())
}

pub fn eval(runs: &Path, out: Option<&Path>, reference: &str) -> Result<(), CliError> {
    if !runs.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", runs.display())));
    }
    let mut paths = Vec::new();
    find_records(runs, &mut paths)?;
    if paths.is_empty() {
        return Err(CliError::Runtime(format!("no completed runs under {}", runs.display())));
    }
    let mut rows = Vec::new();
    for p in &paths {
        let rec: RunRecord = serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let dir = p.parent().expect("record has a parent");
        let theta = load_checkpoint(&dir.join("detector.ckpt"))?;
        let ds = load_dataset(&rec.dataset)?;
        let auc = evaluate_run(&theta, &ds)?.auc;
        rows.push(ResultRow { task: rec.task, method: rec.method, seed: rec.seed, auc });
    }
    let reference = if rows.iter().any(|r| r.method == reference) {
        reference.to_string()
    } else {
        let mut names: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        names.sort();
        names[0].to_string()
    };
    let table = build_table(&rows, &reference).map_err(runtime)?;
    let out = out.unwrap_or(runs);
    fs::create_dir_all(out)?;
    table.write_reports(out)?;
    print!("{}", table.to_markdown());
    Ok(())
}

pub fn gradcheck(suites: &[String], seed: u64, fault_op: Option<&str>) -> Result<(), CliError> {
    let selected: Vec<Suite> = if suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        suites
            .iter()
            .map(|s| Suite::from_name(s).ok_or_else(|| CliError::Usage(format!("unknown suite {s:?}"))))
            .collect::<Result<_, _>>()?
    };
    if let Some(op) = fault_op {
        let kind = ALL_KINDS
            .iter()
            .copied()
            .find(|k| k.name() == op)
            .ok_or_else(|| CliError::Usage(format!("unknown primitive {op:?}")))?;
        fault::inject(Some(kind));
    }
    let mut failed = Vec::new();
    for suite in selected {
        let r = run_suite(suite, seed);
        let worst = r
            .worst()
            .map(|c| format!("worst {} rel err {:.2e} (tol {:.0e})", c.name, c.error, c.tol))
            .unwrap_or_default();
        println!("{:<8} {} {worst}", suite, if r.passed() { "PASS" } else { "FAIL" });
        for c in r.failures() {
            println!("  failed: {} ({})", c.name, c.failure.clone().unwrap_or_else(|| format!("{:.2e}", c.error)));
        }
        if !r.passed() {
            failed.push(suite.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("failing suites: {}", failed.join(", "))))
    }
}
