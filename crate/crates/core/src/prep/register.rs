//! Integer translation registration by normalized cross-correlation.

use std::fmt;

use super::slice::{check_2d, dims};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MAX_SHIFT: usize = 16;

/// Scores closer than this count as tied (rounding differs between windows).
const TIE_EPS: f64 = 1e-12;

/// Integer translation. Positive `rows` moves content down, positive `cols`
/// moves it right. Written `(rows, cols)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Shift {
    pub rows: i32,
    pub cols: i32,
}

impl Shift {
    pub const ZERO: Shift = Shift { rows: 0, cols: 0 };

    pub fn new(rows: i32, cols: i32) -> Self {
        Shift { rows, cols }
    }

    pub fn inverse(self) -> Self {
        Shift::new(-self.rows, -self.cols)
    }

    pub fn l1(self) -> u32 {
        self.rows.unsigned_abs() + self.cols.unsigned_abs()
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.rows, self.cols)
    }
}

/// `out[y][x] = pixels[y - rows][x - cols]`, with `fill` where that falls outside.
pub fn apply_translation(pixels: &Tensor<f32>, shift: Shift, fill: f32) -> Result<Tensor<f32>> {
    check_2d(pixels, "apply_translation")?;
    let (h, w) = dims(pixels);
    let mut out = vec![fill; h * w];
    let src = pixels.data();
    let (r, c) = (shift.rows as i64, shift.cols as i64);
    let x0 = c.clamp(0, w as i64) as usize;
    let x1 = (w as i64 + c).clamp(0, w as i64) as usize;
    if x0 < x1 {
        for y in 0..h as i64 {
            let sy = y - r;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            let (y, sy) = (y as usize, sy as usize);
            let sx0 = (x0 as i64 - c) as usize;
            out[y * w + x0..y * w + x1].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
        }
    }
    Tensor::from_vec(&[h, w], out)
}

/// Translation with the image's own minimum as border fill.
pub fn translate_min_fill(pixels: &Tensor<f32>, shift: Shift) -> Result<Tensor<f32>> {
    apply_translation(pixels, shift, pixels.min_value())
}

/// Summed-area tables of `v` and `v^2`, `(h + 1) x (w + 1)`.
struct Integral {
    w1: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(v: &[f64], h: usize, w: usize) -> Self {
        let w1 = w + 1;
        let mut sum = vec![0.0; (h + 1) * w1];
        let mut sq = vec![0.0; (h + 1) * w1];
        for y in 0..h {
            let (mut rs, mut rq) = (0.0, 0.0);
            for x in 0..w {
                let p = v[y * w + x];
                rs += p;
                rq += p * p;
                sum[(y + 1) * w1 + x + 1] = sum[y * w1 + x + 1] + rs;
                sq[(y + 1) * w1 + x + 1] = sq[y * w1 + x + 1] + rq;
            }
        }
        Integral { w1, sum, sq }
    }

    /// Sums over rows `y0..y1`, columns `x0..x1`.
    fn rect(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> (f64, f64) {
        let at = |t: &[f64], y: usize, x: usize| t[y * self.w1 + x];
        let f = |t: &[f64]| at(t, y1, x1) - at(t, y0, x1) - at(t, y1, x0) + at(t, y0, x0);
        (f(&self.sum), f(&self.sq))
    }
}

fn variance_is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// The shift `s` maximizing the normalized cross-correlation between
/// `translate(reference, s)` and `moving` over their overlap, searched
/// exhaustively over `|rows|, |cols| <= max_shift`.
///
/// Ties go to the smallest `|rows| + |cols|`, then to row-major order.
/// Zero-variance images have no defined correlation and are rejected.
pub fn register_translation(reference: &Tensor<f32>, moving: &Tensor<f32>, max_shift: usize) -> Result<Shift> {
    check_2d(reference, "register_translation")?;
    check_2d(moving, "register_translation")?;
    if reference.shape() != moving.shape() {
        return Err(Error::ShapeMismatch {
            op: "register_translation",
            left: reference.shape().to_vec(),
            right: moving.shape().to_vec(),
        });
    }
    let (h, w) = dims(reference);
    let a: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = moving.data().iter().map(|&v| v as f64).collect();
    if variance_is_zero(&a) {
        return Err(Error::DegenerateImage("reference image has zero variance"));
    }
    if variance_is_zero(&b) {
        return Err(Error::DegenerateImage("moving image has zero variance"));
    }
    let ia = Integral::new(&a, h, w);
    let ib = Integral::new(&b, h, w);

    let max_r = max_shift.min(h - 1) as i32;
    let max_c = max_shift.min(w - 1) as i32;
    let mut candidates: Vec<Shift> = (-max_r..=max_r)
        .flat_map(|r| (-max_c..=max_c).map(move |c| Shift::new(r, c)))
        .collect();
    candidates.sort_by_key(|s| (s.l1(), s.rows, s.cols));

    let mut best: Option<(f64, Shift)> = None;
    for s in candidates {
        let (r, c) = (s.rows as i64, s.cols as i64);
        // overlap in moving coordinates; the reference pixel is (y - r, x - c)
        let y0 = r.max(0) as usize;
        let y1 = (h as i64 + r.min(0)) as usize;
        let x0 = c.max(0) as usize;
        let x1 = (w as i64 + c.min(0)) as usize;
        let n = ((y1 - y0) * (x1 - x0)) as f64;
        if n < 2.0 {
            continue;
        }
        let (sb, qb) = ib.rect(y0, y1, x0, x1);
        let ay0 = (y0 as i64 - r) as usize;
        let ax0 = (x0 as i64 - c) as usize;
        let (sa, qa) = ia.rect(ay0, ay0 + (y1 - y0), ax0, ax0 + (x1 - x0));
        let va = qa - sa * sa / n;
        let vb = qb - sb * sb / n;
        if va <= 1e-12 * qa.abs().max(1.0) || vb <= 1e-12 * qb.abs().max(1.0) {
            continue;
        }
        let mut sab = 0.0;
        for y in y0..y1 {
            let row_b = &b[y * w + x0..y * w + x1];
            let ay = y - y0 + ay0;
            let row_a = &a[ay * w + ax0..ay * w + ax0 + (x1 - x0)];
            sab += row_a.iter().zip(row_b).map(|(p, q)| p * q).sum::<f64>();
        }
        let score = (sab - sa * sb / n) / (va * vb).sqrt();
        if best.is_none_or(|(b, _)| score > b + TIE_EPS) {
            best = Some((score, s));
        }
    }
    best.map(|(_, s)| s)
        .ok_or(Error::DegenerateImage("no overlap with nonzero variance"))
}
