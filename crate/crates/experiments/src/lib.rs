//! Task grids for the synthetic recovery experiments. The experiments
//! themselves live in `tests/acceptance.rs`; they take minutes, so they sit
//! in their own package and run after the library tests.

use stssad::datagen::{AnomalyKind, SynthSpec};
use stssad::tuner::Mode;

/// True CutDiff patch sizes of the recovery tasks.
pub const SIZES: [f64; 3] = [0.02, 0.08, 0.16];
/// True patch ratios of the recovery tasks.
pub const RATIOS: [f64; 2] = [0.5, 2.0];
/// Methods compared on the CutDiff grid; the first is the reference.
pub const METHODS: [&str; 4] = ["st_ssad", "rs_cutdiff", "rd_cutdiff", "fo"];

pub fn task_name(size: f64, ratio: f64) -> String {
    format!("cutdiff_s{size}_r{ratio}")
}

/// Default 32×32 testbed with a CutDiff anomaly of the given shape.
pub fn cutdiff_spec(size: f64, ratio: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        anomaly: AnomalyKind::CutdiffPatch { size, ratio },
        ..Default::default()
    }
}

/// Tuning mode behind each method name in [`METHODS`].
pub fn mode_of(method: &str) -> Option<Mode> {
    match method {
        "st_ssad" => Some(Mode::SecondOrder),
        "fo" => Some(Mode::FirstOrder),
        "rs_cutdiff" => Some(Mode::RandomStatic),
        "rd_cutdiff" => Some(Mode::RandomDynamic),
        _ => None,
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        assert_eq!(SIZES.len() * RATIOS.len(), 6);
        assert!(METHODS.iter().all(|m| mode_of(m).is_some()));
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(task_name(0.08, 2.0), "cutdiff_s0.08_r2");
    }
}
