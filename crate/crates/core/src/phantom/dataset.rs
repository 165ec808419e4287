//! On-disk slice datasets.
//!
//! ```text
//! <root>/manifest.txt                              format version and generator settings
//! <root>/SHA256SUMS                                checksum of every file below
//! <root>/<group>/<mouse_id>/week_<t>/slice_<k>.pgm 16-bit binary PGM
//! <root>/<group>/<mouse_id>/week_<t>/slice_<k>.meta
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::PhantomConfig;
use super::render::{render_slice, scan_params};
use crate::error::{Error, Result};
use crate::imageio::{decode_pgm, encode_pgm16};
use crate::kv::KeyValues;
use crate::prep::{Group, ImageSlice};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKSUM_FILE: &str = "SHA256SUMS";

/// Path of a slice relative to the dataset root.
pub fn slice_path(group: Group, mouse_id: &str, week: u32, slice_index: u32) -> PathBuf {
    PathBuf::from(group.name())
        .join(mouse_id)
        .join(format!("week_{week}"))
        .join(format!("slice_{slice_index:04}.pgm"))
}

fn meta_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("meta")
}

fn slice_meta(slice: &ImageSlice) -> KeyValues {
    let mut kv = KeyValues::new();
    let (h, w) = slice.dims();
    kv.set("mouse_id", &slice.mouse_id);
    kv.set("group", slice.group);
    kv.set("week", slice.week);
    kv.set("slice_index", slice.slice_index);
    kv.set("height", h);
    kv.set("width", w);
    kv
}

fn encode_slice(slice: &ImageSlice) -> Result<(Vec<u8>, String)> {
    Ok((encode_pgm16(&slice.pixels)?, slice_meta(slice).render()))
}

pub fn write_slice(slice: &ImageSlice, path: &Path) -> Result<()> {
    let (pgm, meta) = encode_slice(slice)?;
    fs::write(path, pgm).map_err(|e| Error::io(path, e))?;
    let mp = meta_path(path);
    fs::write(&mp, meta).map_err(|e| Error::io(&mp, e))
}

/// Reads a PGM and its sidecar, checking that they agree.
pub fn read_slice(path: &Path) -> Result<ImageSlice> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let pixels = decode_pgm(&bytes).map_err(|r| Error::format(path, r))?;
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let bad = |e: Error| Error::format(&mp, e.to_string());
    let kv = KeyValues::parse(&text).map_err(bad)?;
    let (h, w): (usize, usize) = (kv.required("height").map_err(bad)?, kv.required("width").map_err(bad)?);
    if pixels.shape() != [h, w] {
        return Err(Error::format(
            path,
            format!("metadata says {h}x{w}, pixels are {:?}", pixels.shape()),
        ));
    }
    ImageSlice::new(
        pixels,
        kv.require("mouse_id").map_err(bad)?,
        kv.required("group").map_err(bad)?,
        kv.required("week").map_err(bad)?,
        kv.required("slice_index").map_err(bad)?,
    )
}

/// One generated slice file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceRecord {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub mouse_id: String,
    pub group: Group,
    pub week: u32,
    pub slice_index: u32,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: PhantomConfig,
    pub records: Vec<SliceRecord>,
}

impl DatasetManifest {
    pub fn image_count(&self) -> usize {
        self.records.len()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders the whole cohort into `root`, which must be absent or empty.
/// Output bytes depend only on the configuration.
pub fn generate_dataset(config: &PhantomConfig, root: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        if entries.next().is_some() {
            return Err(Error::invalid(format!("{} is not empty", root.display())));
        }
    }

    let mut jobs = Vec::new();
    for mouse in config.mice() {
        for week in config.weeks_of(mouse) {
            let dir = root.join(mouse.group.name()).join(mouse.to_string()).join(format!("week_{week}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for k in 0..scan_params(config, mouse, week).slices {
                jobs.push((mouse, week, k));
            }
        }
    }

    let mut records: Vec<(SliceRecord, String)> = jobs
        .par_iter()
        .map(|&(mouse, week, k)| {
            let slice = render_slice(config, mouse, week, k)?;
            let rel = slice_path(mouse.group, &slice.mouse_id, week, k);
            let (pgm, meta) = encode_slice(&slice)?;
            let path = root.join(&rel);
            write_bytes(&path, &pgm)?;
            write_bytes(&meta_path(&path), meta.as_bytes())?;
            let meta_sum = sha256_hex(meta.as_bytes());
            Ok((
                SliceRecord {
                    path: rel,
                    mouse_id: slice.mouse_id,
                    group: mouse.group,
                    week,
                    slice_index: k,
                    sha256: sha256_hex(&pgm),
                },
                meta_sum,
            ))
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.0.path.cmp(&b.0.path));

    let mut sums = String::new();
    for (r, meta_sum) in &records {
        let p = r.path.to_string_lossy().replace('\\', "/");
        sums.push_str(&format!("{}  {p}\n", r.sha256));
        sums.push_str(&format!("{meta_sum}  {}\n", p.replace(".pgm", ".meta")));
    }
    write_bytes(&root.join(CHECKSUM_FILE), sums.as_bytes())?;

    let mut manifest = config.to_key_values();
    manifest.set("format_version", FORMAT_VERSION);
    manifest.set("images", records.len());
    write_bytes(&root.join(MANIFEST_FILE), manifest.render().as_bytes())?;

    Ok(DatasetManifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        records: records.into_iter().map(|(r, _)| r).collect(),
    })
}

/// Reads the generator settings echoed in `manifest.txt`.
pub fn read_manifest_config(root: &Path) -> Result<PhantomConfig> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv = KeyValues::parse(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let version: u32 = kv.required("format_version").map_err(|e| Error::format(&path, e.to_string()))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported format version {version}")));
    }
    let mut settings = KeyValues::new();
    for (k, v) in kv.iter() {
        if k != "format_version" && k != "images" {
            settings.set(k, v);
        }
    }
    PhantomConfig::from_key_values(&settings).map_err(|e| Error::format(&path, e.to_string()))
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every slice under `root`, checking metadata against the path.
/// The result is sorted by `(group, mouse_id, week, slice_index)`.
pub fn load_dataset(root: &Path) -> Result<Vec<ImageSlice>> {
    let mut files = Vec::new();
    for group in Group::ALL {
        let gdir = root.join(group.name());
        if !gdir.is_dir() {
            continue;
        }
        for mdir in sorted_dirs(&gdir)? {
            for wdir in sorted_dirs(&mdir)? {
                for entry in fs::read_dir(&wdir).map_err(|e| Error::io(&wdir, e))? {
                    let p = entry.map_err(|e| Error::io(&wdir, e))?.path();
                    if p.extension().is_some_and(|e| e == "pgm") {
                        files.push((group, mdir.clone(), wdir.clone(), p));
                    }
                }
            }
        }
    }
    if files.is_empty() {
        return Err(Error::invalid(format!("no slices found under {}", root.display())));
    }
    let mut slices: Vec<ImageSlice> = files
        .par_iter()
        .map(|(group, mdir, wdir, p)| {
            let s = read_slice(p)?;
            let dir_name = |d: &Path| d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let consistent = s.group == *group
                && s.mouse_id == dir_name(mdir)
                && dir_name(wdir) == format!("week_{}", s.week);
            if !consistent {
                return Err(Error::format(p, "metadata does not match the file location"));
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    slices.sort_by(|a, b| (a.group, &a.mouse_id, a.week, a.slice_index).cmp(&(b.group, &b.mouse_id, b.week, b.slice_index)));
    Ok(slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn slice_round_trip_keeps_boundary_values() {
        let dir = tempfile::tempdir().unwrap();
        let px = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 65534.0, 65535.0]).unwrap();
        let s = ImageSlice::new(px, "wild_01", Group::Wild, 3, 7).unwrap();
        let path = dir.path().join("s.pgm");
        write_slice(&s, &path).unwrap();
        assert_eq!(read_slice(&path).unwrap(), s);
    }

    #[test]
    fn malformed_slices_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let px = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        let s = ImageSlice::new(px, "pth_01", Group::Pth, 0, 0).unwrap();
        let path = dir.path().join("s.pgm");
        write_slice(&s, &path).unwrap();

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_slice(&path), Err(Error::Format { .. })));

        fs::write(&path, &bytes).unwrap();
        let meta = fs::read_to_string(meta_path(&path)).unwrap().replace("height=2", "height=3");
        fs::write(meta_path(&path), meta).unwrap();
        assert!(matches!(read_slice(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn generate_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let config = PhantomConfig {
            missing_final_week: true,
            ..PhantomConfig::tiny(11)
        };
        let manifest = generate_dataset(&config, &root).unwrap();
        let slices = load_dataset(&root).unwrap();
        assert_eq!(slices.len(), manifest.image_count());
        assert!(slices.iter().all(|s| s.week != 2));
        let last_pth = format!("pth_{:02}", config.mice_per_group);
        assert!(slices.iter().filter(|s| s.mouse_id == last_pth).all(|s| s.week != 5));
        assert!(slices.iter().any(|s| s.week == 5));
        assert_eq!(read_manifest_config(&root).unwrap(), config);
        assert!(generate_dataset(&config, &root).is_err());
    }
}
