use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Axis-aligned rectangle `[top, top + height) × [left, left + width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Patch extents with area `size_fraction · m²` and height/width ratio
/// `aspect_ratio`.
pub fn patch_extent(side: usize, size_fraction: f64, aspect_ratio: f64) -> Result<(usize, usize)> {
    if !(size_fraction > 0.0 && size_fraction <= 1.0) || !(aspect_ratio > 0.0) {
        return Err(Error::Invalid(format!(
            "patch needs size fraction in (0, 1] and positive aspect, got {size_fraction}, {aspect_ratio}"
        )));
    }
    let area = size_fraction * (side * side) as f64;
    let h = ((area * aspect_ratio).sqrt().round() as usize).max(1);
    let w = ((area / aspect_ratio).sqrt().round() as usize).max(1);
    if h > side || w > side {
        return Err(Error::Invalid(format!(
            "patch {h}x{w} does not fit in a {side}x{side} image"
        )));
    }
    Ok((h, w))
}

fn random_rect<R: Rng + ?Sized>(rng: &mut R, side: usize, h: usize, w: usize) -> Rect {
    Rect {
        top: rng.gen_range(0..=side - h),
        left: rng.gen_range(0..=side - w),
        height: h,
        width: w,
    }
}

/// Zeroes the pixels of `rect` in every channel.
pub fn cutout_at(x: &Image, rect: Rect) -> Result<Image> {
    if rect.top + rect.height > x.side() || rect.left + rect.width > x.side() {
        return Err(Error::Invalid(format!("{rect:?} exceeds a {0}x{0} image", x.side())));
    }
    let mut out = x.clone();
    for i in rect.top..rect.top + rect.height {
        for j in rect.left..rect.left + rect.width {
            for k in 0..x.channels() {
                out.set(i, j, k, 0.0);
            }
        }
    }
    Ok(out)
}

/// CutOut with a square patch at a uniformly random position.
pub fn cutout<R: Rng + ?Sized>(x: &Image, size_fraction: f64, rng: &mut R) -> Result<Image> {
    let (h, w) = patch_extent(x.side(), size_fraction, 1.0)?;
    cutout_at(x, random_rect(rng, x.side(), h, w))
}

/// Copies `src` onto the same-sized rectangle at `dst_top`, `dst_left`.
pub fn paste_at(x: &Image, src: Rect, dst_top: usize, dst_left: usize) -> Result<Image> {
    let side = x.side();
    if src.top + src.height > side
        || src.left + src.width > side
        || dst_top + src.height > side
        || dst_left + src.width > side
    {
        return Err(Error::Invalid(format!("paste of {src:?} exceeds a {side}x{side} image")));
    }
    let mut out = x.clone();
    for di in 0..src.height {
        for dj in 0..src.width {
            for k in 0..x.channels() {
                let v = x.get(src.top + di, src.left + dj, k);
                out.set(dst_top + di, dst_left + dj, k, v);
            }
        }
    }
    Ok(out)
}

/// CutPaste: copies a random rectangle to a different random location.
pub fn cutpaste<R: Rng + ?Sized>(
    x: &Image,
    size_fraction: f64,
    aspect_ratio: f64,
    rng: &mut R,
) -> Result<Image> {
    let side = x.side();
    let (h, w) = patch_extent(side, size_fraction, aspect_ratio)?;
    if h == side && w == side {
        return Err(Error::Invalid(
            "cutpaste patch covers the image, so no distinct destination exists".into(),
        ));
    }
    let src = random_rect(rng, side, h, w);
    let dst = loop {
        let d = random_rect(rng, side, h, w);
        if (d.top, d.left) != (src.top, src.left) {
            break d;
        }
    };
    paste_at(x, src, dst.top, dst.left)
}
