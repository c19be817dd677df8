use stssad::gradcheck::{run_suite, scalar_toy, Suite};
use stssad::tensor::{fault, OpKind};
use stssad::tuner::Order;

#[test]
fn every_suite_passes_on_a_clean_build() {
    for suite in Suite::ALL {
        let report = run_suite(suite, 11);
        for c in &report.checks {
            println!("{suite:8} {:48} err {:.3e} tol {:.0e}", c.name, c.error, c.tol);
        }
        let bad: Vec<_> = report.failures().map(|c| (&c.name, c.error, &c.failure)).collect();
        assert!(bad.is_empty(), "{suite}: {bad:?}");
    }
}

#[test]
fn scalar_toy_matches_closed_form() {
    // θ' = θ - 2α(θ - a); d(θ'²)/da = 2θ'·2α
    let (tp, g) = scalar_toy(1.0, 0.0, 0.1, Order::Second).unwrap();
    assert!((tp - 0.8).abs() < 1e-15);
    assert!((g - 0.32).abs() < 1e-10);
    let (_, g1) = scalar_toy(1.0, 0.0, 0.1, Order::First).unwrap();
    assert_eq!(g1, 0.0);
    for order in [Order::Second, Order::First] {
        assert_eq!(scalar_toy(1.0, 0.0, 0.0, order).unwrap().1, 0.0);
    }
    for (th, a, al) in [(0.3, -1.2, 0.05), (2.0, 0.5, 0.2), (-1.0, 1.0, 0.4)] {
        let (tp, g) = scalar_toy(th, a, al, Order::Second).unwrap();
        let tp_ref = th - 2.0 * al * (th - a);
        assert!((tp - tp_ref).abs() < 1e-12);
        assert!((g - 4.0 * al * tp_ref).abs() < 1e-10);
    }
}

#[test]
fn flipped_backward_rule_is_named() {
    for kind in [OpKind::Exp, OpKind::MatMul, OpKind::Div] {
        fault::inject(Some(kind));
        let report = run_suite(Suite::Tensor, 3);
        fault::inject(None);
        let failed: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
        assert!(failed.contains(&kind.name().to_string()), "{kind}: {failed:?}");
    }
}
