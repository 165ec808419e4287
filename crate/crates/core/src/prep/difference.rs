use super::register::{register_translation, translate_min_fill, Shift};
use super::slice::ImageSlice;
use crate::error::{Error, Result};
use crate::model::DiffMode;
use crate::tensor::Tensor;

/// `D = I(t) - I(t0)` after aligning the reference to the comparison image.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceImage {
    pub pixels: Tensor<f32>,
    pub comparison_week: u32,
    /// Equal to `comparison_week` for the first-week sentinel.
    pub reference_week: u32,
    pub mode: DiffMode,
    /// Translation applied to the reference image.
    pub shift: Shift,
}

impl DifferenceImage {
    pub fn is_sentinel(&self) -> bool {
        self.reference_week == self.comparison_week
    }
}

/// Reference chosen for a comparison week.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Week(u32),
    /// No earlier week exists: the difference image is uniform.
    FirstWeek,
}

/// Absolute mode uses the earliest recorded week, relative mode the most
/// recent recorded week before `t`. The earliest week itself has no reference.
pub fn select_reference(weeks: &[u32], t: u32, mode: DiffMode) -> Result<Reference> {
    if !weeks.contains(&t) {
        return Err(Error::invalid(format!("week {t} not in series {weeks:?}")));
    }
    let earlier = weeks.iter().copied().filter(|&w| w < t);
    let pick = match mode {
        DiffMode::Absolute => earlier.min(),
        DiffMode::Relative => earlier.max(),
    };
    Ok(pick.map_or(Reference::FirstWeek, Reference::Week))
}

/// Registers `reference` onto `comparison`, translates it (border filled with
/// its own minimum) and subtracts. A zero-variance pair is not registered.
pub fn difference_image(
    comparison: &ImageSlice,
    reference: &ImageSlice,
    mode: DiffMode,
    max_shift: usize,
) -> Result<DifferenceImage> {
    if comparison.mouse_id != reference.mouse_id {
        return Err(Error::invalid(format!(
            "cannot difference mouse {} against mouse {}",
            comparison.mouse_id, reference.mouse_id
        )));
    }
    if comparison.pixels.shape() != reference.pixels.shape() {
        return Err(Error::ShapeMismatch {
            op: "difference_image",
            left: comparison.pixels.shape().to_vec(),
            right: reference.pixels.shape().to_vec(),
        });
    }
    if comparison.week < reference.week {
        return Err(Error::invalid(format!(
            "comparison week {} precedes reference week {}",
            comparison.week, reference.week
        )));
    }
    let shift = match register_translation(&reference.pixels, &comparison.pixels, max_shift) {
        Ok(s) => s,
        Err(Error::DegenerateImage(_)) => Shift::ZERO,
        Err(e) => return Err(e),
    };
    let aligned = translate_min_fill(&reference.pixels, shift)?;
    Ok(DifferenceImage {
        pixels: comparison.pixels.sub(&aligned)?,
        comparison_week: comparison.week,
        reference_week: reference.week,
        mode,
        shift,
    })
}

/// Uniform image at the comparison image's minimum intensity.
pub fn first_week_difference(comparison: &ImageSlice, mode: DiffMode) -> Result<DifferenceImage> {
    Ok(DifferenceImage {
        pixels: Tensor::full(comparison.pixels.shape(), comparison.pixels.min_value())?,
        comparison_week: comparison.week,
        reference_week: comparison.week,
        mode,
        shift: Shift::ZERO,
    })
}

/// Index-aligned pairs `(a[k], b[k])` up to the shorter list, plus the
/// number of items left unpaired.
pub fn pair_slices<'a, A, B>(a: &'a [A], b: &'a [B]) -> (Vec<(&'a A, &'a B)>, usize) {
    let pairs: Vec<_> = a.iter().zip(b).collect();
    let unused = a.len().max(b.len()) - pairs.len();
    (pairs, unused)
}
