use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Treatment group, which is also the class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Wild,
    Pth,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Wild, Group::Pth];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Result<Self> {
        Group::ALL
            .get(label)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no group for label {label}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Wild => "wild",
            Group::Pth => "pth",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wild" => Ok(Group::Wild),
            "pth" => Ok(Group::Pth),
            _ => Err(Error::invalid(format!("unknown group {s:?}"))),
        }
    }
}

/// One grayscale cross-section with its acquisition metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSlice {
    /// `[height, width]` nonnegative intensities.
    pub pixels: Tensor<f32>,
    pub mouse_id: String,
    pub group: Group,
    pub week: u32,
    pub slice_index: u32,
}

impl ImageSlice {
    pub fn new(pixels: Tensor<f32>, mouse_id: impl Into<String>, group: Group, week: u32, slice_index: u32) -> Result<Self> {
        if pixels.rank() != 2 {
            return Err(Error::invalid(format!("slice pixels must be rank 2, got {:?}", pixels.shape())));
        }
        if pixels.data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("slice intensities must be nonnegative"));
        }
        Ok(ImageSlice {
            pixels,
            mouse_id: mouse_id.into(),
            group,
            week,
            slice_index,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        dims(&self.pixels)
    }

    pub fn with_pixels(&self, pixels: Tensor<f32>) -> Self {
        ImageSlice {
            pixels,
            ..self.clone()
        }
    }
}

pub(crate) fn dims(pixels: &Tensor<f32>) -> (usize, usize) {
    let s = pixels.shape();
    (s[0], s[1])
}

pub(crate) fn check_2d(pixels: &Tensor<f32>, op: &'static str) -> Result<()> {
    if pixels.rank() != 2 {
        return Err(Error::invalid(format!("{op} expects a 2-D image, got {:?}", pixels.shape())));
    }
    Ok(())
}

/// Centers `pixels` in an `h x w` canvas filled with the image's minimum.
/// Offsets are `floor((target - dim) / 2)`.
pub fn expand_pixels(pixels: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    check_2d(pixels, "expand_image")?;
    let (ih, iw) = dims(pixels);
    if h < ih || w < iw {
        return Err(Error::invalid(format!("cannot expand {ih}x{iw} into smaller {h}x{w}")));
    }
    if (h, w) == (ih, iw) {
        return Ok(pixels.clone());
    }
    let (oy, ox) = ((h - ih) / 2, (w - iw) / 2);
    let mut out = Tensor::full(&[h, w], pixels.min_value())?;
    let src = pixels.data();
    let dst = out.data_mut();
    for y in 0..ih {
        dst[(y + oy) * w + ox..(y + oy) * w + ox + iw].copy_from_slice(&src[y * iw..(y + 1) * iw]);
    }
    Ok(out)
}

pub fn expand_image(slice: &ImageSlice, h: usize, w: usize) -> Result<ImageSlice> {
    Ok(slice.with_pixels(expand_pixels(&slice.pixels, h, w)?))
}

/// Inverse of [`expand_pixels`]: the centered `h x w` window.
pub fn crop_center(pixels: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    check_2d(pixels, "crop_center")?;
    let (ih, iw) = dims(pixels);
    if h > ih || w > iw || h == 0 || w == 0 {
        return Err(Error::invalid(format!("cannot crop {h}x{w} out of {ih}x{iw}")));
    }
    let (oy, ox) = ((ih - h) / 2, (iw - w) / 2);
    let src = pixels.data();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend_from_slice(&src[(y + oy) * iw + ox..(y + oy) * iw + ox + w]);
    }
    Tensor::from_vec(&[h, w], out)
}

/// Elementwise maximum height and width over all slices.
pub fn max_dims<'a>(slices: impl IntoIterator<Item = &'a ImageSlice>) -> Result<(usize, usize)> {
    slices
        .into_iter()
        .map(|s| s.dims())
        .reduce(|(h, w), (a, b)| (h.max(a), w.max(b)))
        .ok_or_else(|| Error::invalid("max_dims of an empty dataset"))
}
