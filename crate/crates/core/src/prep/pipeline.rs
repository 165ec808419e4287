use std::collections::BTreeMap;

use rayon::prelude::*;

use super::difference::{difference_image, first_week_difference, pair_slices, select_reference, Reference};
use super::partition::Sample;
use super::register::DEFAULT_MAX_SHIFT;
use super::slice::{expand_image, max_dims, Group, ImageSlice};
use crate::error::{Error, Result};
use crate::model::DiffMode;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrepOptions {
    /// `None` produces image-only samples.
    pub mode: Option<DiffMode>,
    pub timestamps: bool,
    pub max_shift: usize,
    /// Defaults to the dataset maximum.
    pub target_dims: Option<(usize, usize)>,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            mode: None,
            timestamps: false,
            max_shift: DEFAULT_MAX_SHIFT,
            target_dims: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrepSummary {
    pub mode: Option<DiffMode>,
    pub timestamps: bool,
    pub max_shift: usize,
    pub dims: (usize, usize),
    /// Slices read.
    pub slices: usize,
    /// Slices that found no partner in their reference week.
    pub unused: usize,
}

impl PrepSummary {
    pub fn unused_fraction(&self) -> f64 {
        if self.slices == 0 {
            0.0
        } else {
            self.unused as f64 / self.slices as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub summary: PrepSummary,
    /// Sorted by `(mouse_id, week, slice_index)`.
    pub samples: Vec<Sample>,
}

/// Scales `pixels` by `1 / scale`; a nonpositive scale leaves them unchanged.
fn scaled(pixels: &Tensor<f32>, scale: f32) -> Result<Tensor<f32>> {
    if scale > 0.0 {
        pixels.map(|v| v / scale)
    } else {
        Ok(pixels.clone())
    }
}

struct WeekTask<'a> {
    comparison: Vec<&'a ImageSlice>,
    reference: Option<Vec<&'a ImageSlice>>,
}

fn build_sample(
    comparison: &ImageSlice,
    reference: Option<&ImageSlice>,
    opts: &PrepOptions,
    dims: (usize, usize),
) -> Result<Sample> {
    let comp = expand_image(comparison, dims.0, dims.1)?;
    let max = comp.pixels.max_value();
    let difference = match opts.mode {
        None => None,
        Some(mode) => {
            let d = match reference {
                Some(r) => difference_image(&comp, &expand_image(r, dims.0, dims.1)?, mode, opts.max_shift)?,
                None => first_week_difference(&comp, mode)?,
            };
            Some(scaled(&d.pixels, max)?)
        }
    };
    Ok(Sample {
        mouse_id: comp.mouse_id.clone(),
        group: comp.group,
        week: comp.week,
        slice_index: comp.slice_index,
        image: scaled(&comp.pixels, max)?,
        difference,
        timestamp: opts.timestamps.then_some(comp.week as f32),
    })
}

/// Expands every slice to common dimensions and builds network samples.
///
/// With a difference mode, the k-th slice of week `t` is paired with the k-th
/// slice of the reference week; slices beyond the shorter list are dropped
/// and counted as unused. Slices of a mouse's first week get the uniform
/// sentinel difference. Images are divided by their maximum, difference
/// images by the maximum of their comparison image.
pub fn prepare(slices: &[ImageSlice], opts: &PrepOptions) -> Result<Prepared> {
    let found = max_dims(slices)?;
    let dims = opts.target_dims.unwrap_or(found);
    if dims.0 < found.0 || dims.1 < found.1 {
        return Err(Error::invalid(format!(
            "target dims {}x{} smaller than dataset maximum {}x{}",
            dims.0, dims.1, found.0, found.1
        )));
    }

    let mut groups: BTreeMap<&str, Group> = BTreeMap::new();
    let mut series: BTreeMap<&str, BTreeMap<u32, Vec<&ImageSlice>>> = BTreeMap::new();
    for s in slices {
        if let Some(g) = groups.insert(&s.mouse_id, s.group) {
            if g != s.group {
                return Err(Error::invalid(format!("mouse {} appears in groups {g} and {}", s.mouse_id, s.group)));
            }
        }
        series.entry(&s.mouse_id).or_default().entry(s.week).or_default().push(s);
    }

    let mut tasks = Vec::new();
    let mut unused = 0;
    for (mouse, by_week) in &mut series {
        for list in by_week.values_mut() {
            list.sort_by_key(|s| s.slice_index);
            if let Some(w) = list.windows(2).find(|w| w[0].slice_index == w[1].slice_index) {
                return Err(Error::invalid(format!(
                    "mouse {mouse} week {} has slice {} twice",
                    w[0].week, w[0].slice_index
                )));
            }
        }
        let weeks: Vec<u32> = by_week.keys().copied().collect();
        for (&t, list) in by_week.iter() {
            let reference = match opts.mode {
                None => None,
                Some(mode) => match select_reference(&weeks, t, mode)? {
                    Reference::FirstWeek => None,
                    Reference::Week(t0) => Some(by_week[&t0].clone()),
                },
            };
            let comparison = match &reference {
                Some(r) => {
                    let (pairs, _) = pair_slices(list, r);
                    unused += list.len() - pairs.len();
                    list[..pairs.len()].to_vec()
                }
                None => list.clone(),
            };
            tasks.push(WeekTask { comparison, reference });
        }
    }

    let per_week: Vec<Vec<Sample>> = tasks
        .par_iter()
        .map(|task| {
            task.comparison
                .iter()
                .enumerate()
                .map(|(k, c)| build_sample(c, task.reference.as_ref().map(|r| r[k]), opts, dims))
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok(Prepared {
        summary: PrepSummary {
            mode: opts.mode,
            timestamps: opts.timestamps,
            max_shift: opts.max_shift,
            dims,
            slices: slices.len(),
            unused,
        },
        samples: per_week.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn slice(mouse: &str, group: Group, week: u32, k: u32, h: usize, w: usize, rng: &mut SeededRng) -> ImageSlice {
        let px = rng.uniform(&[h, w], 1.0, 100.0).unwrap().map(|v: f32| v.round()).unwrap();
        ImageSlice::new(px, mouse, group, week, k).unwrap()
    }

    fn dataset(rng: &mut SeededRng) -> Vec<ImageSlice> {
        let mut out = Vec::new();
        for (mouse, group) in [("b", Group::Pth), ("a", Group::Wild)] {
            for week in [3, 0, 1] {
                let n = if week == 3 { 4 } else { 3 };
                for k in (0..n).rev() {
                    out.push(slice(mouse, group, week, k, 8 + k as usize, 10, rng));
                }
            }
        }
        out
    }

    #[test]
    fn image_only_samples_are_sorted_and_normalized() {
        let data = dataset(&mut SeededRng::new(1));
        let p = prepare(&data, &PrepOptions::default()).unwrap();
        assert_eq!(p.summary.dims, (11, 10));
        assert_eq!(p.samples.len(), data.len());
        assert_eq!(p.summary.unused, 0);
        let keys: Vec<_> = p.samples.iter().map(|s| (s.mouse_id.clone(), s.week, s.slice_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for s in &p.samples {
            assert_eq!(s.image.shape(), &[11, 10]);
            assert_eq!(s.image.max_value(), 1.0);
            assert!(s.difference.is_none() && s.timestamp.is_none());
        }
    }

    #[test]
    fn difference_modes_pair_and_count_unused() {
        let data = dataset(&mut SeededRng::new(2));
        for mode in [DiffMode::Absolute, DiffMode::Relative] {
            let opts = PrepOptions {
                mode: Some(mode),
                timestamps: true,
                max_shift: 2,
                target_dims: None,
            };
            let p = prepare(&data, &opts).unwrap();
            // week 3 has 4 slices against 3 in its reference week
            assert_eq!(p.summary.unused, 2);
            assert_eq!(p.samples.len(), data.len() - 2);
            for s in &p.samples {
                let d = s.difference.as_ref().unwrap();
                assert_eq!(s.timestamp, Some(s.week as f32));
                if s.week == 0 {
                    let v = d.data()[0];
                    assert!(d.data().iter().all(|&x| x == v));
                    assert_eq!(v, s.image.min_value());
                }
            }
        }
    }

    #[test]
    fn output_is_independent_of_input_order() {
        let data = dataset(&mut SeededRng::new(3));
        let mut reversed = data.clone();
        reversed.reverse();
        let opts = PrepOptions {
            mode: Some(DiffMode::Relative),
            ..PrepOptions::default()
        };
        let a = prepare(&data, &opts).unwrap().samples;
        let b = prepare(&reversed, &opts).unwrap().samples;
        assert_eq!(a, b);
    }

    #[test]
    fn identical_weeks_give_zero_differences() {
        let mut rng = SeededRng::new(4);
        let base = slice("m", Group::Wild, 0, 0, 9, 9, &mut rng);
        let later = ImageSlice { week: 2, ..base.clone() };
        let opts = PrepOptions {
            mode: Some(DiffMode::Absolute),
            ..PrepOptions::default()
        };
        let p = prepare(&[base, later], &opts).unwrap();
        assert!(p.samples[1].difference.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_inputs() {
        let mut rng = SeededRng::new(5);
        let a = slice("m", Group::Wild, 0, 0, 4, 4, &mut rng);
        let dup = a.clone();
        assert!(prepare(&[a.clone(), dup], &PrepOptions::default()).is_err());
        let other_group = ImageSlice { group: Group::Pth, slice_index: 1, ..a.clone() };
        assert!(prepare(&[a.clone(), other_group], &PrepOptions::default()).is_err());
        let small = PrepOptions {
            target_dims: Some((3, 4)),
            ..PrepOptions::default()
        };
        assert!(prepare(&[a], &small).is_err());
        assert!(prepare(&[], &PrepOptions::default()).is_err());
    }
}
