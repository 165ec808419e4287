//! On-disk prepared datasets.
//!
//! ```text
//! <dir>/prep.meta            key=value summary
//! <dir>/samples.csv          one row per sample, with its split
//! <dir>/images/<row>.pfm     normalized image
//! <dir>/diffs/<row>.pfm      normalized difference image, if any
//! <dir>/class_balance.txt    aligned table
//! <dir>/class_balance.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::partition::{class_balance_report, DatasetSplit, Sample, TestSet};
use super::pipeline::PrepSummary;
use super::slice::Group;
use crate::error::{Error, Result};
use crate::imageio::{read_pfm, write_pfm};
use crate::kv::KeyValues;
use crate::model::DiffMode;

pub const FORMAT_VERSION: u32 = 1;
const CSV_HEADER: &str = "row,split,mouse_id,group,week,slice_index,timestamp,image,difference";
const SPLITS: [&str; 3] = ["train", "validation", "test"];

/// A partitioned dataset together with how it was made.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub summary: PrepSummary,
    /// Seed of the partition.
    pub seed: u64,
    pub split: DatasetSplit,
}

fn mode_name(mode: Option<DiffMode>) -> String {
    mode.map_or_else(|| "none".to_string(), |m| m.to_string())
}

fn parse_mode(s: &str) -> Result<Option<DiffMode>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_prepared(dir: &Path, prepared: &PreparedSplit) -> Result<()> {
    let s = &prepared.summary;
    let split = &prepared.split;
    create_dir(&dir.join("images"))?;
    if s.mode.is_some() {
        create_dir(&dir.join("diffs"))?;
    }

    let mut meta = KeyValues::new();
    meta.set("format_version", FORMAT_VERSION);
    meta.set("mode", mode_name(s.mode));
    meta.set("timestamps", if s.timestamps { "on" } else { "off" });
    meta.set("max_shift", s.max_shift);
    meta.set("height", s.dims.0);
    meta.set("width", s.dims.1);
    meta.set("slices", s.slices);
    meta.set("unused", s.unused);
    meta.set("seed", prepared.seed);
    meta.set("held_out", split.held_out.join(" "));
    write_text(&dir.join("prep.meta"), &meta.render())?;

    let mut csv = format!("{CSV_HEADER}\n");
    let parts: [&[Sample]; 3] = [&split.train, &split.validation, split.test.peek()];
    let mut row = 0;
    for (name, samples) in SPLITS.iter().zip(parts) {
        for sample in samples {
            if sample.mouse_id.contains([',', '\n', ' ']) {
                return Err(Error::invalid(format!("mouse id {:?} cannot be stored", sample.mouse_id)));
            }
            if sample.difference.is_some() != s.mode.is_some() || sample.timestamp.is_some() != s.timestamps {
                return Err(Error::invalid(format!("sample {:?} does not match the summary", sample.key())));
            }
            let image = format!("images/{row:05}.pfm");
            write_pfm(&dir.join(&image), &sample.image)?;
            let diff = match &sample.difference {
                Some(d) => {
                    let name = format!("diffs/{row:05}.pfm");
                    write_pfm(&dir.join(&name), d)?;
                    name
                }
                None => String::new(),
            };
            let ts = sample.timestamp.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{row},{name},{},{},{},{},{ts},{image},{diff}",
                sample.mouse_id, sample.group, sample.week, sample.slice_index
            );
            row += 1;
        }
    }
    write_text(&dir.join("samples.csv"), &csv)?;

    let balance = class_balance_report(split);
    write_text(&dir.join("class_balance.txt"), &balance.to_string())?;
    write_text(&dir.join("class_balance.csv"), &balance.to_csv())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::format(path, format!("line {line}: bad {name} {v:?}")))
}

pub fn load_prepared(dir: &Path) -> Result<PreparedSplit> {
    let meta_path = dir.join("prep.meta");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = KeyValues::parse(&meta_text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let bad_meta = |e: Error| Error::format(&meta_path, e.to_string());
    let version: u32 = meta.required("format_version").map_err(bad_meta)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(&meta_path, format!("unsupported format version {version}")));
    }
    let summary = PrepSummary {
        mode: parse_mode(meta.require("mode").map_err(bad_meta)?).map_err(bad_meta)?,
        timestamps: match meta.require("timestamps").map_err(bad_meta)? {
            "on" => true,
            "off" => false,
            other => return Err(Error::format(&meta_path, format!("timestamps={other}"))),
        },
        max_shift: meta.required("max_shift").map_err(bad_meta)?,
        dims: (
            meta.required("height").map_err(bad_meta)?,
            meta.required("width").map_err(bad_meta)?,
        ),
        slices: meta.required("slices").map_err(bad_meta)?,
        unused: meta.required("unused").map_err(bad_meta)?,
    };
    let seed: u64 = meta.required("seed").map_err(bad_meta)?;
    let held_out: Vec<String> = meta.require("held_out").map_err(bad_meta)?.split_whitespace().map(String::from).collect();

    let csv_path = dir.join("samples.csv");
    let csv = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut lines = csv.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(CSV_HEADER) {
        return Err(Error::format(&csv_path, "missing or unexpected header"));
    }
    let mut parts: [Vec<Sample>; 3] = Default::default();
    for (i, line) in lines {
        let n = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::format(&csv_path, format!("line {n}: expected 9 fields, got {}", cols.len())));
        }
        let which = SPLITS
            .iter()
            .position(|s| *s == cols[1])
            .ok_or_else(|| Error::format(&csv_path, format!("line {n}: unknown split {:?}", cols[1])))?;
        let image = read_pfm(&dir.join(cols[7]))?;
        if image.shape() != [summary.dims.0, summary.dims.1] {
            return Err(Error::format(&csv_path, format!("line {n}: image shape {:?}", image.shape())));
        }
        let difference = match cols[8] {
            "" => None,
            p => Some(read_pfm(&dir.join(p))?),
        };
        let timestamp = match cols[6] {
            "" => None,
            t => Some(field(&csv_path, n, "timestamp", t)?),
        };
        if difference.is_some() != summary.mode.is_some() || timestamp.is_some() != summary.timestamps {
            return Err(Error::format(&csv_path, format!("line {n}: channels disagree with prep.meta")));
        }
        let group: Group = field(&csv_path, n, "group", cols[3])?;
        parts[which].push(Sample {
            mouse_id: cols[2].to_string(),
            group,
            week: field(&csv_path, n, "week", cols[4])?,
            slice_index: field(&csv_path, n, "slice_index", cols[5])?,
            image,
            difference,
            timestamp,
        });
    }
    let [train, validation, test] = parts;
    Ok(PreparedSplit {
        summary,
        seed,
        split: DatasetSplit {
            train,
            validation,
            test: TestSet::new(test),
            held_out,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::{partition, prepare, ImageSlice, PrepOptions};
    use crate::rng::SeededRng;

    #[test]
    fn save_load_round_trip() {
        let mut rng = SeededRng::new(7);
        let mut slices = Vec::new();
        for g in Group::ALL {
            for m in 0..3 {
                for week in 0..3 {
                    for k in 0..2 {
                        let px = rng.uniform(&[6, 7], 0.0, 50.0).unwrap();
                        slices.push(ImageSlice::new(px, format!("{g}_{m}"), g, week, k).unwrap());
                    }
                }
            }
        }
        let opts = PrepOptions {
            mode: Some(DiffMode::Relative),
            timestamps: true,
            max_shift: 2,
            target_dims: None,
        };
        let prepared = prepare(&slices, &opts).unwrap();
        let split = partition(prepared.samples, &mut SeededRng::new(3)).unwrap();
        let original = PreparedSplit {
            summary: prepared.summary,
            seed: 3,
            split,
        };
        let dir = tempfile::tempdir().unwrap();
        save_prepared(dir.path(), &original).unwrap();
        let back = load_prepared(dir.path()).unwrap();
        assert_eq!(back.summary, original.summary);
        assert_eq!(back.seed, 3);
        assert_eq!(back.split.train, original.split.train);
        assert_eq!(back.split.validation, original.split.validation);
        assert_eq!(back.split.test.peek(), original.split.test.peek());
        assert_eq!(back.split.held_out, original.split.held_out);
        assert_eq!(original.split.test.accesses(), 0);
        let table = fs::read_to_string(dir.path().join("class_balance.csv")).unwrap();
        assert!(table.starts_with("split,wild_pct"));

        fs::write(dir.path().join("samples.csv"), "row,oops\n").unwrap();
        assert!(load_prepared(dir.path()).is_err());
    }
}
