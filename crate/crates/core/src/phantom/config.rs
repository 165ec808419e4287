use std::fmt;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::prep::Group;

/// Ring geometry as fractions of the base image height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingGeometry {
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Horizontal over vertical radius, drawn per mouse from this range.
    pub aspect: (f64, f64),
    /// Relative radius modulation along the slice index.
    pub axial_amplitude: f64,
    /// Slices per full modulation period.
    pub axial_period: f64,
}

impl Default for RingGeometry {
    fn default() -> Self {
        RingGeometry {
            inner_radius: 0.16,
            outer_radius: 0.25,
            aspect: (1.2, 1.45),
            axial_amplitude: 0.08,
            axial_period: 48.0,
        }
    }
}

/// Intensity levels on the 16-bit scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intensities {
    pub background: f64,
    pub marrow: f64,
    pub ring: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities {
            background: 1500.0,
            marrow: 9000.0,
            ring: 36000.0,
        }
    }
}

/// Parameters of the synthetic dataset. Everything drawn at random derives
/// from `seed` and the identity of the mouse, week and slice.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub mice_per_group: usize,
    pub weeks: Vec<u32>,
    /// Week with no scans for any mouse.
    pub missing_week: Option<u32>,
    /// The last PTH mouse lacks the final week.
    pub missing_final_week: bool,
    /// Inclusive range of slices per mouse-week.
    pub slices_per_week: (u32, u32),
    pub base_dims: (usize, usize),
    /// Per mouse-week height and width are `base - U{0..=jitter}`.
    pub dim_jitter: (usize, usize),
    pub ring: RingGeometry,
    pub intensities: Intensities,
    /// Per-mouse relative spread of ring thickness and brightness.
    pub mouse_variation: f64,
    /// Per mouse-week relative spread of ring thickness and brightness.
    pub week_variation: f64,
    pub pth_onset_week: u32,
    /// Relative ring thickening per week after onset; brightness grows at half this rate.
    pub pth_rate: f64,
    /// Gaussian pixel noise, 16-bit units.
    pub noise_sigma: f64,
    /// Maximum per mouse-week translation in pixels, each axis.
    pub shift_jitter: u32,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            mice_per_group: 5,
            weeks: (0..=8).collect(),
            missing_week: Some(2),
            missing_final_week: false,
            slices_per_week: (30, 50),
            base_dims: (64, 96),
            dim_jitter: (4, 6),
            ring: RingGeometry::default(),
            intensities: Intensities::default(),
            mouse_variation: 0.15,
            week_variation: 0.0,
            pth_onset_week: 4,
            pth_rate: 0.10,
            noise_sigma: 1200.0,
            shift_jitter: 3,
            seed: 0,
        }
    }
}

/// A mouse of the phantom cohort, numbered from 1 within its group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MouseId {
    pub group: Group,
    pub index: usize,
}

impl MouseId {
    pub fn new(group: Group, index: usize) -> Self {
        MouseId { group, index }
    }
}

impl fmt::Display for MouseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{:02}", self.group, self.index)
    }
}

fn weeks_text(weeks: &[u32]) -> String {
    weeks.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_weeks(s: &str) -> Result<Vec<u32>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(|w| w.parse().map_err(|_| Error::invalid(format!("bad week {w:?}"))))
        .collect()
}

fn parse_pair<T: std::str::FromStr>(key: &str, s: &str) -> Result<(T, T)> {
    let bad = || Error::invalid(format!("{key}: expected two values like \"a..b\" or \"a x b\", got {s:?}"));
    let (a, b) = s.split_once("..").or_else(|| s.split_once('x')).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

impl PhantomConfig {
    /// Small cohort for tests.
    pub fn tiny(seed: u64) -> Self {
        PhantomConfig {
            mice_per_group: 2,
            weeks: vec![0, 1, 2, 3, 4, 5],
            slices_per_week: (3, 4),
            base_dims: (48, 64),
            dim_jitter: (2, 3),
            seed,
            ..PhantomConfig::default()
        }
    }

    /// Weeks with scans, ascending, before per-mouse exclusions.
    pub fn recorded_weeks(&self) -> Vec<u32> {
        let mut w: Vec<u32> = self.weeks.iter().copied().filter(|&w| Some(w) != self.missing_week).collect();
        w.sort_unstable();
        w.dedup();
        w
    }

    pub fn mice(&self) -> Vec<MouseId> {
        Group::ALL
            .iter()
            .flat_map(|&g| (1..=self.mice_per_group).map(move |i| MouseId::new(g, i)))
            .collect()
    }

    /// Recorded weeks of one mouse.
    pub fn weeks_of(&self, mouse: MouseId) -> Vec<u32> {
        let mut weeks = self.recorded_weeks();
        if self.missing_final_week && mouse == MouseId::new(Group::Pth, self.mice_per_group) {
            weeks.pop();
        }
        weeks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.mice_per_group == 0 {
            return bad("mice_per_group must be positive".into());
        }
        let weeks = self.recorded_weeks();
        if weeks.is_empty() {
            return bad("no recorded weeks".into());
        }
        let (first, last) = (self.weeks.iter().min().unwrap(), self.weeks.iter().max().unwrap());
        if self.pth_onset_week < *first || self.pth_onset_week > *last {
            return bad(format!("pth_onset_week {} outside weeks {first}..={last}", self.pth_onset_week));
        }
        let (lo, hi) = self.slices_per_week;
        if lo == 0 || lo > hi {
            return bad(format!("slices_per_week range {lo}..{hi} is empty"));
        }
        let (h, w) = self.base_dims;
        if self.dim_jitter.0 >= h || self.dim_jitter.1 >= w {
            return bad("dim_jitter must be smaller than base_dims".into());
        }
        let r = &self.ring;
        if !(0.0 < r.inner_radius && r.inner_radius < r.outer_radius) {
            return bad("ring radii must satisfy 0 < inner < outer".into());
        }
        if !(r.aspect.0 > 0.0 && r.aspect.0 <= r.aspect.1) || !(0.0..1.0).contains(&r.axial_amplitude) || r.axial_period <= 0.0 {
            return bad("invalid ring aspect or axial profile".into());
        }
        for (name, v) in [
            ("mouse_variation", self.mouse_variation),
            ("week_variation", self.week_variation),
        ] {
            if !(0.0..0.5).contains(&v) {
                return bad(format!("{name} must lie in [0, 0.5)"));
            }
        }
        if !(self.pth_rate >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("pth_rate and noise_sigma must be nonnegative".into());
        }
        let i = &self.intensities;
        if !(0.0 <= i.background && i.background <= i.marrow && i.marrow <= i.ring && i.ring <= 65535.0) {
            return bad("intensities must satisfy 0 <= background <= marrow <= ring <= 65535".into());
        }
        super::render::check_geometry(self)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("mice_per_group", self.mice_per_group);
        kv.set("weeks", weeks_text(&self.weeks));
        kv.set("missing_week", self.missing_week.map_or("none".to_string(), |w| w.to_string()));
        kv.set("missing_final_week", self.missing_final_week);
        kv.set("slices_per_week", format!("{}..{}", self.slices_per_week.0, self.slices_per_week.1));
        kv.set("base_dims", format!("{}x{}", self.base_dims.0, self.base_dims.1));
        kv.set("dim_jitter", format!("{}x{}", self.dim_jitter.0, self.dim_jitter.1));
        kv.set("inner_radius", self.ring.inner_radius);
        kv.set("outer_radius", self.ring.outer_radius);
        kv.set("aspect", format!("{}..{}", self.ring.aspect.0, self.ring.aspect.1));
        kv.set("axial_amplitude", self.ring.axial_amplitude);
        kv.set("axial_period", self.ring.axial_period);
        kv.set("background", self.intensities.background);
        kv.set("marrow", self.intensities.marrow);
        kv.set("ring", self.intensities.ring);
        kv.set("mouse_variation", self.mouse_variation);
        kv.set("week_variation", self.week_variation);
        kv.set("pth_onset_week", self.pth_onset_week);
        kv.set("pth_rate", self.pth_rate);
        kv.set("noise_sigma", self.noise_sigma);
        kv.set("shift_jitter", self.shift_jitter);
        kv.set("seed", self.seed);
        kv
    }

    /// Overrides fields named in `kv`; unknown keys are an error.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in kv.iter() {
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::invalid(format!("{k}: bad number {v:?}")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| Error::invalid(format!("{k}: bad integer {v:?}")));
            match k {
                "mice_per_group" => self.mice_per_group = int(v)? as usize,
                "weeks" => self.weeks = parse_weeks(v)?,
                "missing_week" => self.missing_week = if v == "none" { None } else { Some(int(v)? as u32) },
                "missing_final_week" => {
                    self.missing_final_week = v.parse().map_err(|_| Error::invalid(format!("{k}: expected true/false")))?
                }
                "slices_per_week" => self.slices_per_week = parse_pair(k, v)?,
                "base_dims" => self.base_dims = parse_pair(k, v)?,
                "dim_jitter" => self.dim_jitter = parse_pair(k, v)?,
                "inner_radius" => self.ring.inner_radius = num(v)?,
                "outer_radius" => self.ring.outer_radius = num(v)?,
                "aspect" => self.ring.aspect = parse_pair(k, v)?,
                "axial_amplitude" => self.ring.axial_amplitude = num(v)?,
                "axial_period" => self.ring.axial_period = num(v)?,
                "background" => self.intensities.background = num(v)?,
                "marrow" => self.intensities.marrow = num(v)?,
                "ring" => self.intensities.ring = num(v)?,
                "mouse_variation" => self.mouse_variation = num(v)?,
                "week_variation" => self.week_variation = num(v)?,
                "pth_onset_week" => self.pth_onset_week = int(v)? as u32,
                "pth_rate" => self.pth_rate = num(v)?,
                "noise_sigma" => self.noise_sigma = num(v)?,
                "shift_jitter" => self.shift_jitter = int(v)? as u32,
                "seed" => self.seed = int(v)?,
                _ => return Err(Error::invalid(format!("unknown phantom setting {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = PhantomConfig::default();
        c.apply(kv)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weeks_skip_week_two() {
        let c = PhantomConfig::default();
        assert_eq!(c.recorded_weeks(), vec![0, 1, 3, 4, 5, 6, 7, 8]);
        assert_eq!(c.mice().len(), 10);
        c.validate().unwrap();
    }

    #[test]
    fn missing_final_week_hits_one_pth_mouse() {
        let c = PhantomConfig {
            missing_final_week: true,
            ..PhantomConfig::default()
        };
        let short: Vec<_> = c.mice().into_iter().filter(|&m| c.weeks_of(m).len() == 7).collect();
        assert_eq!(short, vec![MouseId::new(Group::Pth, 5)]);
    }

    #[test]
    fn key_value_round_trip() {
        let c = PhantomConfig {
            seed: 99,
            missing_week: None,
            slices_per_week: (40, 40),
            ..PhantomConfig::default()
        };
        let back = PhantomConfig::from_key_values(&c.to_key_values()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs() {
        let mut c = PhantomConfig {
            pth_onset_week: 20,
            ..PhantomConfig::default()
        };
        assert!(c.validate().is_err());
        c.pth_onset_week = 4;
        c.slices_per_week = (5, 4);
        assert!(c.validate().is_err());
        let kv = KeyValues::parse("bogus=1").unwrap();
        assert!(PhantomConfig::default().apply(&kv).is_err());
    }

    #[test]
    fn mouse_ids_sort_within_group() {
        assert_eq!(MouseId::new(Group::Pth, 3).to_string(), "pth_03");
    }
}
