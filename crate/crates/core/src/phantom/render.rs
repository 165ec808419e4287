use super::config::{MouseId, PhantomConfig};
use crate::error::{Error, Result};
use crate::prep::{Group, ImageSlice, Shift};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

/// Spread of the per-mouse radius scale.
const RADIUS_SPREAD: f64 = 0.05;
/// Maximum per-mouse offset of the ring centre, pixels.
const CENTER_SPREAD: f64 = 1.0;
/// Width of the logistic ring edges, pixels.
const EDGE: f64 = 0.5;

const STREAM_MOUSE: u64 = 1;
const STREAM_SCAN: u64 = 2;
const STREAM_SLICE: u64 = 3;

/// Fixed anatomy of one mouse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MouseProfile {
    pub radius_scale: f64,
    pub thickness: f64,
    pub brightness: f64,
    pub aspect: f64,
    /// Ring centre offset `(rows, cols)` from the canvas centre.
    pub offset: (f64, f64),
    pub axial_phase: f64,
}

/// Acquisition of one mouse in one week.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanParams {
    pub dims: (usize, usize),
    pub shift: Shift,
    pub slices: u32,
}

fn spread(rng: &mut SeededRng, width: f64) -> f64 {
    1.0 + width * (2.0 * rng.unit() - 1.0)
}

fn mouse_key(mouse: MouseId) -> [u64; 2] {
    [mouse.group.label() as u64, mouse.index as u64]
}

pub fn mouse_profile(config: &PhantomConfig, mouse: MouseId) -> MouseProfile {
    let [g, i] = mouse_key(mouse);
    let mut rng = SeededRng::new(derive_seed(config.seed, &[STREAM_MOUSE, g, i]));
    let (a0, a1) = config.ring.aspect;
    MouseProfile {
        radius_scale: spread(&mut rng, RADIUS_SPREAD),
        thickness: spread(&mut rng, config.mouse_variation),
        brightness: spread(&mut rng, config.mouse_variation),
        aspect: a0 + (a1 - a0) * rng.unit(),
        offset: (
            CENTER_SPREAD * (2.0 * rng.unit() - 1.0),
            CENTER_SPREAD * (2.0 * rng.unit() - 1.0),
        ),
        axial_phase: std::f64::consts::TAU * rng.unit(),
    }
}

pub fn scan_params(config: &PhantomConfig, mouse: MouseId, week: u32) -> ScanParams {
    let [g, i] = mouse_key(mouse);
    let mut rng = SeededRng::new(derive_seed(config.seed, &[STREAM_SCAN, g, i, week as u64]));
    let (jh, jw) = config.dim_jitter;
    let h = config.base_dims.0 - rng.int_inclusive(0, jh as i64) as usize;
    let w = config.base_dims.1 - rng.int_inclusive(0, jw as i64) as usize;
    let j = config.shift_jitter as i64;
    let shift = Shift::new(rng.int_inclusive(-j, j) as i32, rng.int_inclusive(-j, j) as i32);
    let (lo, hi) = config.slices_per_week;
    let slices = rng.int_inclusive(lo as i64, hi as i64) as u32;
    ScanParams {
        dims: (h, w),
        shift,
        slices,
    }
}

/// Per mouse-week `(thickness, brightness)` factors, drawn from their own
/// stream so they do not disturb the scan parameters.
fn week_factors(config: &PhantomConfig, mouse: MouseId, week: u32) -> (f64, f64) {
    let [g, i] = mouse_key(mouse);
    let mut rng = SeededRng::new(derive_seed(config.seed, &[STREAM_SCAN, g, i, week as u64, 1]));
    (spread(&mut rng, config.week_variation), spread(&mut rng, config.week_variation))
}

/// Relative ring thickening of a mouse at `week`: zero for wild mice and
/// before onset, then linear in the weeks since onset.
pub fn pth_growth(config: &PhantomConfig, group: Group, week: u32) -> f64 {
    match group {
        Group::Wild => 0.0,
        Group::Pth => config.pth_rate * week.saturating_sub(config.pth_onset_week) as f64,
    }
}

/// Vertical radii `(inner, outer)` of the ring before the horizontal aspect.
fn radii(config: &PhantomConfig, profile: &MouseProfile, axial: f64, thickness: f64) -> (f64, f64) {
    let h = config.base_dims.0 as f64;
    let scale = h * profile.radius_scale * axial;
    let inner = config.ring.inner_radius * scale;
    let base_thickness = (config.ring.outer_radius - config.ring.inner_radius) * scale;
    (inner, inner + base_thickness * thickness)
}

/// Largest `(vertical, horizontal)` outer radius any slice can reach.
fn worst_extent(config: &PhantomConfig) -> (f64, f64) {
    let profile = MouseProfile {
        radius_scale: 1.0 + RADIUS_SPREAD,
        thickness: 1.0 + config.mouse_variation,
        brightness: 1.0,
        aspect: config.ring.aspect.1,
        offset: (0.0, 0.0),
        axial_phase: 0.0,
    };
    let last = config.weeks.iter().copied().max().unwrap_or(0);
    let growth = 1.0 + pth_growth(config, Group::Pth, last);
    let thickness = profile.thickness * (1.0 + config.week_variation) * growth;
    let (_, outer) = radii(config, &profile, 1.0 + config.ring.axial_amplitude, thickness);
    (outer, outer * profile.aspect)
}

/// Errors if some slice could extend past its image border.
pub fn check_geometry(config: &PhantomConfig) -> Result<()> {
    let (ry, rx) = worst_extent(config);
    // the centre sits at (base - 1) / 2 in canvas coordinates; cropping
    // `jitter` pixels removes floor(jitter / 2) on one side and the rest on the other
    let reach = |base: usize, jitter: usize, spread_px: f64| (base as f64 - 1.0) / 2.0 - spread_px - jitter.div_ceil(2) as f64;
    let spread_px = CENTER_SPREAD + config.shift_jitter as f64;
    let room_y = reach(config.base_dims.0, config.dim_jitter.0, spread_px);
    let room_x = reach(config.base_dims.1, config.dim_jitter.1, spread_px);
    if ry + 1.0 > room_y || rx + 1.0 > room_x {
        return Err(Error::invalid(format!(
            "ring geometry exceeds image bounds: radii {ry:.1}x{rx:.1} px, room {room_y:.1}x{room_x:.1} px"
        )));
    }
    Ok(())
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z / EDGE).exp())
}

/// Noise-free intensity field of one slice, before rounding.
fn render_field(config: &PhantomConfig, mouse: MouseId, week: u32, slice_index: u32) -> (ScanParams, Vec<f64>) {
    let profile = mouse_profile(config, mouse);
    let scan = scan_params(config, mouse, week);
    let (week_thickness, week_brightness) = week_factors(config, mouse, week);
    let growth = pth_growth(config, mouse.group, week);

    let axial = 1.0
        + config.ring.axial_amplitude
            * (std::f64::consts::TAU * slice_index as f64 / config.ring.axial_period + profile.axial_phase).sin();
    let thickness = profile.thickness * week_thickness * (1.0 + growth);
    let (inner, outer) = radii(config, &profile, axial, thickness);
    let lv = &config.intensities;
    let ring = lv.marrow + (lv.ring - lv.marrow) * profile.brightness * week_brightness * (1.0 + 0.5 * growth);

    let (bh, bw) = config.base_dims;
    let (h, w) = scan.dims;
    let crop = (((bh - h) / 2) as f64, ((bw - w) / 2) as f64);
    let cy = (bh as f64 - 1.0) / 2.0 + profile.offset.0 + scan.shift.rows as f64 - crop.0;
    let cx = (bw as f64 - 1.0) / 2.0 + profile.offset.1 + scan.shift.cols as f64 - crop.1;

    let mut field = Vec::with_capacity(h * w);
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = (x as f64 - cx) / profile.aspect;
            let rho = (dy * dy + dx * dx).sqrt();
            let inside = logistic(outer - rho);
            let band = logistic(rho - inner) * inside;
            field.push(lv.background + (lv.marrow - lv.background) * inside + (ring - lv.marrow) * band);
        }
    }
    (scan, field)
}

/// Renders one slice: a bright elliptical ring (cortical bone) around a
/// darker marrow region on a dark background, with Gaussian pixel noise.
///
/// PTH rings thicken and brighten after onset; wild rings are stationary.
/// The whole pattern moves by the mouse-week shift and the image size is
/// jittered per mouse-week. Noise comes from a stream keyed by
/// `(seed, mouse, week, slice_index)`, so slices can be rendered in any order.
pub fn render_slice(config: &PhantomConfig, mouse: MouseId, week: u32, slice_index: u32) -> Result<ImageSlice> {
    check_geometry(config)?;
    let (scan, field) = render_field(config, mouse, week, slice_index);
    let [g, i] = mouse_key(mouse);
    let mut rng = SeededRng::new(derive_seed(
        config.seed,
        &[STREAM_SLICE, g, i, week as u64, slice_index as u64],
    ));
    let pixels: Vec<f32> = field
        .into_iter()
        .map(|v| {
            let noisy = if config.noise_sigma > 0.0 { rng.gaussian(v, config.noise_sigma) } else { v };
            noisy.round().clamp(0.0, 65535.0) as f32
        })
        .collect();
    ImageSlice::new(
        Tensor::from_vec(&[scan.dims.0, scan.dims.1], pixels)?,
        mouse.to_string(),
        mouse.group,
        week,
        slice_index,
    )
}

/// Maximum image dimensions over the dataset, from the scan parameters alone.
pub fn expected_max_dims(config: &PhantomConfig) -> (usize, usize) {
    config
        .mice()
        .into_iter()
        .flat_map(|m| config.weeks_of(m).into_iter().map(move |w| (m, w)))
        .map(|(m, w)| scan_params(config, m, w).dims)
        .fold((0, 0), |(h, w), (a, b)| (h.max(a), w.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(seed: u64) -> PhantomConfig {
        PhantomConfig {
            noise_sigma: 0.0,
            week_variation: 0.0,
            dim_jitter: (0, 0),
            ..PhantomConfig::tiny(seed)
        }
    }

    #[test]
    fn default_geometry_fits() {
        check_geometry(&PhantomConfig::default()).unwrap();
        let too_big = PhantomConfig {
            pth_rate: 1.0,
            ..PhantomConfig::default()
        };
        assert!(check_geometry(&too_big).is_err());
        assert!(render_slice(&too_big, MouseId::new(Group::Pth, 1), 8, 0).is_err());
    }

    #[test]
    fn static_config_repeats_across_weeks_up_to_shift() {
        let c = PhantomConfig {
            pth_rate: 0.0,
            ..quiet(3)
        };
        for mouse in [MouseId::new(Group::Wild, 1), MouseId::new(Group::Pth, 2)] {
            let a = render_slice(&c, mouse, 0, 2).unwrap();
            let sa = scan_params(&c, mouse, 0).shift;
            for week in [1, 3, 5] {
                let b = render_slice(&c, mouse, week, 2).unwrap();
                let sb = scan_params(&c, mouse, week).shift;
                let rel = Shift::new(sb.rows - sa.rows, sb.cols - sa.cols);
                let moved = crate::prep::apply_translation(&a.pixels, rel, c.intensities.background as f32).unwrap();
                let (h, w) = a.dims();
                let j = c.shift_jitter as usize * 2;
                for y in j..h - j {
                    for x in j..w - j {
                        let d = (moved.at(&[y, x]) - b.pixels.at(&[y, x])).abs();
                        assert!(d <= 1.0, "week {week} at {y},{x}");
                    }
                }
            }
        }
    }

    #[test]
    fn pth_brightens_after_onset() {
        let c = quiet(4);
        let mouse = MouseId::new(Group::Pth, 1);
        let mean = |week| render_slice(&c, mouse, week, 1).unwrap().pixels.mean();
        assert!(mean(5) > mean(4));
        assert!(mean(4) == mean(3) || (mean(4) - mean(3)).abs() < 1.0);
    }

    #[test]
    fn same_seed_same_pixels() {
        let c = PhantomConfig::tiny(5);
        let m = MouseId::new(Group::Wild, 2);
        assert_eq!(render_slice(&c, m, 1, 0).unwrap(), render_slice(&c, m, 1, 0).unwrap());
        let other = PhantomConfig::tiny(6);
        assert_ne!(render_slice(&c, m, 1, 0).unwrap(), render_slice(&other, m, 1, 0).unwrap());
    }

    #[test]
    fn pixels_are_valid_16_bit_values() {
        let c = PhantomConfig::tiny(7);
        let s = render_slice(&c, MouseId::new(Group::Pth, 1), 5, 3).unwrap();
        assert!(s.pixels.data().iter().all(|&v| (0.0..=65535.0).contains(&v) && v.fract() == 0.0));
        let dims = scan_params(&c, MouseId::new(Group::Pth, 1), 5).dims;
        assert_eq!(s.dims(), dims);
    }
}
