use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stssad::datagen::{build_testbed, SynthSpec};
use stssad::detector::EncoderParams;
use stssad::eval::{auc, build_table, evaluate_run, wilcoxon_one_sided, Label, ResultRow};
use stssad::Error;

fn labels(v: &[u8]) -> Vec<Label> {
    v.iter().map(|&b| if b == 1 { Label::Anomaly } else { Label::Normal }).collect()
}

/// Brute-force pair counting.
fn auc_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if *li == Label::Anomaly && *lj == Label::Normal {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// `P(W+ ≥ w)` by enumerating all sign assignments over the given ranks.
fn wilcoxon_oracle(diffs: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let below = d.iter().filter(|x| x.abs() < d[i].abs()).count() as f64;
        let equal = d.iter().filter(|x| x.abs() == d[i].abs()).count() as f64;
        ranks[i] = below + (equal + 1.0) / 2.0;
    }
    let w: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut ge, mut eq) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s >= w - 1e-9 {
            ge += 1;
        }
        if (s - w).abs() < 1e-9 {
            eq += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (ge as f64 / total, eq as f64 / total)
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &labels(&[1, 1, 0, 0])).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 6], &labels(&[1, 0, 1, 0, 0, 0])).unwrap(), 0.5);
    assert_eq!(auc(&[0.1, 0.4, 0.3, 0.5], &labels(&[0, 0, 1, 1])).unwrap(), 0.75);
    assert!(matches!(auc(&[0.1, 0.2], &labels(&[0, 0])), Err(Error::InsufficientData(_))));
    assert!(auc(&[0.1], &labels(&[0, 1])).is_err());
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let n = rng.gen_range(2..40);
        let mut l: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.3) { Label::Anomaly } else { Label::Normal }).collect();
        l[0] = Label::Anomaly;
        l[1] = Label::Normal;
        // coarse scores so ties are common
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.25).collect();
        let fast = auc(&s, &l).unwrap();
        assert!((fast - auc_oracle(&s, &l)).abs() <= 1e-12);
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let aff: Vec<f64> = s.iter().map(|v| 3.0 * v - 1.0).collect();
        assert_eq!(auc(&exp, &l).unwrap(), fast);
        assert_eq!(auc(&aff, &l).unwrap(), fast);
    }
}

#[test]
fn wilcoxon_examples() {
    assert_eq!(wilcoxon_one_sided(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap(), 0.03125);
    // positive ranks {3, 5}: W+ = 8, just above the median 7.5
    assert_eq!(wilcoxon_one_sided(&[-1.0, -2.0, 3.0, -4.0, 5.0]).unwrap(), 0.5);
    assert!(matches!(wilcoxon_one_sided(&[0.0; 6]), Err(Error::Degenerate(_))));
    assert!(matches!(wilcoxon_one_sided(&[1.0, 2.0, 0.0, 0.0]), Err(Error::InsufficientData(_))));
}

#[test]
fn wilcoxon_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let n = rng.gen_range(5..=10);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=4) as f64 * 0.5).collect();
        if d.iter().filter(|&&x| x != 0.0).count() < 5 {
            continue;
        }
        let (p, atom) = wilcoxon_oracle(&d);
        assert!((wilcoxon_one_sided(&d).unwrap() - p).abs() < 1e-12, "{d:?}");
        // swapping the roles covers the distribution once, plus the atom
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let q = wilcoxon_one_sided(&neg).unwrap();
        assert!((p + q - 1.0 - atom).abs() < 1e-12, "{d:?}");
    }
}

#[test]
fn wilcoxon_large_samples_use_the_normal_tail() {
    let d: Vec<f64> = (1..=30).map(|k| if k % 4 == 0 { -(k as f64) } else { k as f64 }).collect();
    let p = wilcoxon_one_sided(&d).unwrap();
    assert!(p > 0.0 && p < 0.01, "{p}");
    let flipped: Vec<f64> = d.iter().map(|x| -x).collect();
    assert!(wilcoxon_one_sided(&flipped).unwrap() > 0.99);
}

#[test]
fn untrained_detector_is_at_chance() {
    let ds = build_testbed(&SynthSpec::default()).unwrap();
    let theta = EncoderParams::zeros(&[32 * 32, 64, 64, 16]).unwrap();
    let r = evaluate_run(&theta, &ds).unwrap();
    assert!((r.auc - 0.5).abs() <= 0.1, "{}", r.auc);
    assert_eq!(r.scored.scores.len(), ds.test.len());
}

#[test]
fn test_order_does_not_change_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let l = labels(&[1, 0, 0, 1, 0, 0, 1, 0]);
    let s: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
    let base = auc(&s, &l).unwrap();
    let perm = [3, 7, 0, 5, 1, 6, 2, 4];
    let s2: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
    let l2: Vec<Label> = perm.iter().map(|&i| l[i]).collect();
    assert_eq!(auc(&s2, &l2).unwrap(), base);
}

fn rows(tasks: usize, methods: &[&str], seeds: u64, f: impl Fn(usize, usize, u64) -> f64) -> Vec<ResultRow> {
    let mut out = Vec::new();
    for t in 0..tasks {
        for (mi, m) in methods.iter().enumerate() {
            for s in 0..seeds {
                out.push(ResultRow { task: format!("task{t}"), method: m.to_string(), seed: s, auc: f(t, mi, s) });
            }
        }
    }
    out
}

#[test]
fn table_examples() {
    let one = build_table(&rows(1, &["st_ssad"], 1, |_, _, _| 0.8), "st_ssad").unwrap();
    assert!(one.comparisons.is_empty());
    assert_eq!(one.cells["task0"]["st_ssad"].n, 1);

    let same = build_table(&rows(2, &["st_ssad", "fo"], 5, |t, _, s| 0.5 + 0.01 * (t as f64 + s as f64)), "st_ssad").unwrap();
    assert_eq!(same.comparisons.len(), 1);
    assert!(same.comparisons[0].p_value.is_none());
    assert!(same.comparisons[0].note.as_deref().unwrap().contains("zero"));

    let t = build_table(&rows(3, &["st_ssad", "rs_cutdiff"], 5, |t, m, s| 0.9 - 0.1 * m as f64 + 0.001 * (t as f64 * 5.0 + s as f64)), "st_ssad").unwrap();
    assert_eq!(t.comparisons[0].pairs, 15);
    assert!(t.comparisons[0].p_value.unwrap() < 1e-3);
    let md = t.to_markdown();
    assert!(md.contains("**0.902 ± 0.002**"), "{md}");
    assert!(md.contains("rs_cutdiff | 15 |"));
    let csv = t.to_csv();
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with("task,method,seed,auc\n"));
}

#[test]
fn incomplete_grids_list_their_holes() {
    let mut r = rows(2, &["st_ssad", "fo"], 3, |_, _, _| 0.7);
    r.retain(|x| !(x.task == "task1" && x.method == "fo" && x.seed == 2));
    match build_table(&r, "st_ssad") {
        Err(Error::MissingCells(m)) => assert_eq!(m, vec!["task1/fo/seed 2".to_string()]),
        other => panic!("{other:?}"),
    }
    let mut dup = rows(1, &["st_ssad"], 2, |_, _, _| 0.7);
    dup.push(dup[0].clone());
    assert!(build_table(&dup, "st_ssad").is_err());
    assert!(build_table(&rows(1, &["fo"], 2, |_, _, _| 0.7), "st_ssad").is_err());
}

#[test]
fn reports_are_written_and_stable() {
    let t = build_table(&rows(2, &["st_ssad", "rd_cutdiff"], 5, |t, m, s| 0.6 + 0.05 * m as f64 + 0.01 * (t as f64 + s as f64)), "st_ssad").unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.write_reports(dir.path()).unwrap();
    let first: Vec<Vec<u8>> = ["results.json", "results.csv", "table.md"].iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
    t.write_reports(dir.path()).unwrap();
    let second: Vec<Vec<u8>> = ["results.json", "results.csv", "table.md"].iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
    assert_eq!(first, second);
    let parsed: serde_json::Value = serde_json::from_slice(&first[0]).unwrap();
    assert_eq!(parsed["reference"], "st_ssad");
}
