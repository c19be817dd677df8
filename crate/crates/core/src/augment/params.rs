use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Augmentation family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    CutDiff,
    Rotation,
    CutOut,
    CutPaste,
}

impl AugKind {
    pub fn name(self) -> &'static str {
        match self {
            AugKind::CutDiff => "cutdiff",
            AugKind::Rotation => "rotation",
            AugKind::CutOut => "cutout",
            AugKind::CutPaste => "cutpaste",
        }
    }

    pub fn is_differentiable(self) -> bool {
        matches!(self, AugKind::CutDiff | AugKind::Rotation)
    }

    /// Number of hyperparameter values.
    pub fn arity(self) -> usize {
        match self {
            AugKind::CutDiff => 3,
            AugKind::Rotation => 1,
            AugKind::CutOut | AugKind::CutPaste => 2,
        }
    }
}

/// Smallest admissible diagonal entry of the CutDiff factor `L`.
pub const CUTDIFF_MIN_DIAG: f64 = 1e-5;
/// Largest admissible absolute entry of the CutDiff factor `L`.
pub const CUTDIFF_MAX_ENTRY: f64 = 1.0;

/// Hyperparameter vector `a` of one augmentation family.
///
/// * CutDiff: `[l00, l10, l11]`, the lower-triangular factor `L` row by row.
/// * Rotation: `[angle]` in radians.
/// * CutOut / CutPaste: `[area fraction, aspect ratio]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    pub kind: AugKind,
    pub values: Vec<f64>,
}

impl AugParams {
    pub fn new(kind: AugKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != kind.arity() {
            return Err(Error::Invalid(format!(
                "{} takes {} values, got {}",
                kind.name(),
                kind.arity(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} params {values:?}", kind.name())));
        }
        Ok(Self { kind, values })
    }

    /// CutDiff with `L = diag(s, s)`.
    pub fn cutdiff_isotropic(size: f64) -> Self {
        Self {
            kind: AugKind::CutDiff,
            values: vec![size, 0.0, size],
        }
    }

    /// CutDiff whose patch covariance equals that of `R(angle)·S(size, ratio)`.
    pub fn cutdiff_shape(shape: PatchShape) -> Result<Self> {
        Ok(Self {
            kind: AugKind::CutDiff,
            values: recompose_lower(shape)?.to_vec(),
        })
    }

    pub fn rotation(angle: f64) -> Self {
        Self {
            kind: AugKind::Rotation,
            values: vec![angle],
        }
    }

    pub fn cutout(area: f64) -> Self {
        Self {
            kind: AugKind::CutOut,
            values: vec![area, 1.0],
        }
    }

    pub fn cutpaste(area: f64, aspect: f64) -> Self {
        Self {
            kind: AugKind::CutPaste,
            values: vec![area, aspect],
        }
    }

    /// The CutDiff factor `L` as a 2×2 matrix.
    pub fn lower(&self) -> Option<[[f64; 2]; 2]> {
        (self.kind == AugKind::CutDiff).then(|| {
            let v = &self.values;
            [[v[0], 0.0], [v[1], v[2]]]
        })
    }

    /// Angle, size and ratio of a CutDiff patch.
    pub fn patch_shape(&self) -> Result<PatchShape> {
        let l = self
            .lower()
            .ok_or_else(|| Error::Invalid(format!("{} has no patch shape", self.kind.name())))?;
        decompose_l(l)
    }
}

/// Box `A` of admissible values for one family, plus the sampling range
/// used by the random baselines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugDomain {
    pub kind: AugKind,
}

impl AugDomain {
    pub fn new(kind: AugKind) -> Self {
        Self { kind }
    }

    pub fn contains(&self, a: &AugParams) -> bool {
        if a.kind != self.kind || a.values.len() != self.kind.arity() {
            return false;
        }
        let v = &a.values;
        match self.kind {
            AugKind::CutDiff => {
                let diag = CUTDIFF_MIN_DIAG..=CUTDIFF_MAX_ENTRY;
                diag.contains(&v[0])
                    && diag.contains(&v[2])
                    && (-CUTDIFF_MAX_ENTRY..=CUTDIFF_MAX_ENTRY).contains(&v[1])
            }
            AugKind::Rotation => (0.0..TAU).contains(&v[0]),
            AugKind::CutOut | AugKind::CutPaste => {
                v[0] > 0.0 && v[0] <= 1.0 && v[1] > 0.0 && v[1].is_finite()
            }
        }
    }

    /// Clips (CutDiff, patch baselines) or wraps (rotation) `a` into the box.
    pub fn project(&self, a: &mut AugParams) {
        let v = &mut a.values;
        match self.kind {
            AugKind::CutDiff => {
                v[0] = v[0].clamp(CUTDIFF_MIN_DIAG, CUTDIFF_MAX_ENTRY);
                v[1] = v[1].clamp(-CUTDIFF_MAX_ENTRY, CUTDIFF_MAX_ENTRY);
                v[2] = v[2].clamp(CUTDIFF_MIN_DIAG, CUTDIFF_MAX_ENTRY);
            }
            AugKind::Rotation => {
                let w = v[0].rem_euclid(TAU);
                // rem_euclid can round up to exactly TAU
                v[0] = if w >= TAU { 0.0 } else { w };
            }
            AugKind::CutOut | AugKind::CutPaste => {
                v[0] = v[0].clamp(1e-4, 1.0);
                v[1] = v[1].clamp(0.1, 10.0);
            }
        }
    }

    /// Uniform draw used by the random static/dynamic baselines.
    ///
    /// CutDiff: log-uniform size in `[0.01, 0.25]`, log-uniform ratio in
    /// `[0.25, 4]`, uniform angle in `[0, π)`. Rotation: uniform in `[0, 2π)`.
    /// CutOut/CutPaste: log-uniform area in `[0.0025, 0.15]`, CutPaste aspect
    /// log-uniform in `[0.3, 3.3]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugParams {
        let log_uniform = |rng: &mut R, lo: f64, hi: f64| (rng.gen_range(lo.ln()..hi.ln())).exp();
        let mut a = match self.kind {
            AugKind::CutDiff => {
                let size = log_uniform(rng, 0.01, 0.25);
                let ratio = log_uniform(rng, 0.25, 4.0);
                let angle = rng.gen_range(0.0..PI);
                AugParams::cutdiff_shape(PatchShape { angle, size, ratio })
                    .expect("sampled shape is nonsingular")
            }
            AugKind::Rotation => AugParams::rotation(rng.gen_range(0.0..TAU)),
            AugKind::CutOut => AugParams::cutout(log_uniform(rng, 0.0025, 0.15)),
            AugKind::CutPaste => {
                let area = log_uniform(rng, 0.0025, 0.15);
                AugParams::cutpaste(area, log_uniform(rng, 0.3, 3.3))
            }
        };
        self.project(&mut a);
        a
    }
}

/// Rotation angle `g`, size `s` and ratio `r` of a patch with
/// `L = R(g)·S(s, r)`, `S = diag(s/r, s·r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchShape {
    pub angle: f64,
    pub size: f64,
    pub ratio: f64,
}

pub fn rotation_matrix(g: f64) -> [[f64; 2]; 2] {
    let (s, c) = g.sin_cos();
    [[c, -s], [s, c]]
}

/// `R(g)·S(s, r)`.
pub fn compose_rs(shape: PatchShape) -> [[f64; 2]; 2] {
    let r = rotation_matrix(shape.angle);
    let (sx, sy) = (shape.size / shape.ratio, shape.size * shape.ratio);
    [[r[0][0] * sx, r[0][1] * sy], [r[1][0] * sx, r[1][1] * sy]]
}

/// Lower-triangular factor with positive diagonal whose `L·Lᵀ` equals that
/// of `R(g)·S(s, r)`, i.e. the Cholesky factor of `R·S²·Rᵀ`.
pub fn recompose_lower(shape: PatchShape) -> Result<[f64; 3]> {
    if !(shape.size > 0.0 && shape.ratio > 0.0) {
        return Err(Error::Invalid(format!(
            "size and ratio must be positive, got {shape:?}"
        )));
    }
    let l = compose_rs(shape);
    let m00 = l[0][0] * l[0][0] + l[0][1] * l[0][1];
    let m01 = l[0][0] * l[1][0] + l[0][1] * l[1][1];
    let m11 = l[1][0] * l[1][0] + l[1][1] * l[1][1];
    let c00 = m00.sqrt();
    let c10 = m01 / c00;
    let c11 = (m11 - c10 * c10).max(0.0).sqrt();
    Ok([c00, c10, c11])
}

/// Recovers `(g, s, r)` from a nonsingular 2×2 factor `L`.
///
/// The patch depends on `L` only through `M = L·Lᵀ = R·S²·Rᵀ`, so the shape
/// is read off the eigendecomposition of `M`. The first axis is the
/// eigenvector closest to the first column of `L`, which makes the result
/// exact whenever `L = R·S` and gives `g = 0` for diagonal `L`.
pub fn decompose_l(l: [[f64; 2]; 2]) -> Result<PatchShape> {
    let col0 = [l[0][0], l[1][0]];
    let col1 = [l[0][1], l[1][1]];
    let norm = |v: [f64; 2]| v[0].hypot(v[1]);
    let det = l[0][0] * l[1][1] - l[0][1] * l[1][0];
    if norm(col0) == 0.0 || norm(col1) == 0.0 || det == 0.0 || !det.is_finite() {
        return Err(Error::Singular(format!("degenerate patch factor L = {l:?}")));
    }
    let m00 = col0[0] * col0[0] + col1[0] * col1[0];
    let m01 = col0[0] * col0[1] + col1[0] * col1[1];
    let m11 = col0[1] * col0[1] + col1[1] * col1[1];
    let half_tr = 0.5 * (m00 + m11);
    let disc = (0.25 * (m00 - m11).powi(2) + m01 * m01).sqrt();
    let (hi, lo) = (half_tr + disc, (det * det) / (half_tr + disc));

    let eigvec = |lambda: f64| -> Option<[f64; 2]> {
        let a = [lambda - m11, m01];
        let b = [m01, lambda - m00];
        let v = if norm(a) >= norm(b) { a } else { b };
        let n = norm(v);
        (n > 1e-12 * half_tr).then(|| [v[0] / n, v[1] / n])
    };
    let c0n = norm(col0);
    let dir = [col0[0] / c0n, col0[1] / c0n];
    let (mut v1, lambda1, lambda2) = match (eigvec(hi), eigvec(lo)) {
        (Some(vh), Some(vl)) => {
            let dh = (vh[0] * dir[0] + vh[1] * dir[1]).abs();
            let dl = (vl[0] * dir[0] + vl[1] * dir[1]).abs();
            if dh > dl {
                (vh, hi, lo)
            } else {
                (vl, lo, hi)
            }
        }
        // isotropic: every direction is an eigenvector
        _ => (dir, half_tr, half_tr),
    };
    if v1[0] * dir[0] + v1[1] * dir[1] < 0.0 {
        v1 = [-v1[0], -v1[1]];
    }
    let angle = v1[1].atan2(v1[0]);
    let size = (lambda1 * lambda2).sqrt().sqrt();
    let ratio = (lambda2 / lambda1).sqrt().sqrt();
    Ok(PatchShape { angle, size, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn isotropic_diagonal() {
        let s = decompose_l([[0.1, 0.0], [0.0, 0.1]]).unwrap();
        assert!(close(s.angle, 0.0, 1e-15) && close(s.size, 0.1, 1e-15) && close(s.ratio, 1.0, 1e-12));
    }

    #[test]
    fn anisotropic_diagonal() {
        // s/r = 0.4, s·r = 0.1
        let s = decompose_l([[0.4, 0.0], [0.0, 0.1]]).unwrap();
        assert!(close(s.angle, 0.0, 1e-12), "{s:?}");
        assert!(close(s.size, 0.2, 1e-12) && close(s.ratio, 0.5, 1e-12), "{s:?}");
    }

    #[test]
    fn rotated_roundtrip() {
        let shape = PatchShape {
            angle: PI / 4.0,
            size: 0.2,
            ratio: 2.0,
        };
        let s = decompose_l(compose_rs(shape)).unwrap();
        assert!(close(s.angle, PI / 4.0, 1e-8), "{s:?}");
        assert!(close(s.size, 0.2, 1e-8) && close(s.ratio, 2.0, 1e-8), "{s:?}");
    }

    #[test]
    fn degenerate_factor_fails() {
        assert!(decompose_l([[0.0, 0.0], [0.0, 0.1]]).is_err());
        assert!(decompose_l([[0.1, 0.0], [0.2, 0.0]]).is_err());
    }

    #[test]
    fn lower_factor_roundtrip_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = [
                rng.gen_range(0.01..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.01..1.0),
            ];
            let shape = decompose_l([[a[0], 0.0], [a[1], a[2]]]).unwrap();
            let back = recompose_lower(shape).unwrap();
            for k in 0..3 {
                assert!(close(back[k], a[k], 1e-8), "{a:?} -> {shape:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn projection_keeps_params_in_domain() {
        let d = AugDomain::new(AugKind::CutDiff);
        let mut a = AugParams::new(AugKind::CutDiff, vec![-0.3, 5.0, 1e-9]).unwrap();
        d.project(&mut a);
        assert!(d.contains(&a));
        let r = AugDomain::new(AugKind::Rotation);
        let mut b = AugParams::rotation(-0.5);
        r.project(&mut b);
        assert!(r.contains(&b) && close(b.values[0], TAU - 0.5, 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [AugKind::CutDiff, AugKind::Rotation, AugKind::CutOut, AugKind::CutPaste] {
            let d = AugDomain::new(kind);
            for _ in 0..100 {
                assert!(d.contains(&d.sample(&mut rng)));
            }
        }
    }
}
