//! On-disk dataset layout:
//!
//! ```text
//! root/manifest.json
//! root/annotations.csv          id,split,x1,y1,...,xM,yM
//! root/train/<id>.png
//! root/test/<id>.png
//! root/clips/<name>/00000.png   (optional, unannotated video frames)
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_annotations, AnnotatedSample, ImageTensor, Point, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATION_FILE: &str = "annotations.csv";
const CLIP_DIR: &str = "clips";
const FORMAT: &str = "landmark-adapt/dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    /// Points per annotated sample.
    pub points: usize,
    /// Indices of the two points whose distance normalises errors.
    pub anchors: [usize; 2],
    pub train: usize,
    pub test: usize,
    #[serde(default)]
    pub clips: Vec<String>,
    /// Object family tag, e.g. `A` or `B` for the toy corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Free-form provenance, e.g. toy family and seed.
    #[serde(default)]
    pub source: String,
}

impl DatasetManifest {
    pub fn new(points: usize, anchors: [usize; 2], source: impl Into<String>) -> Self {
        Self {
            format: FORMAT.into(),
            version: 1,
            points,
            anchors,
            train: 0,
            test: 0,
            clips: Vec::new(),
            family: None,
            source: source.into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub train: Vec<AnnotatedSample>,
    pub test: Vec<AnnotatedSample>,
}

/// Parses one `id,split,x1,y1,...` row.
pub fn parse_annotation_line(line: &str) -> Result<(String, Split, Vec<Point>)> {
    let mut fields = line.trim().split(',');
    let id = fields
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Data(format!("annotation row without id: `{line}`")))?
        .to_string();
    let split: Split = fields
        .next()
        .ok_or_else(|| Error::Data(format!("annotation row `{id}` has no split")))?
        .parse()?;
    let coords = fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("bad coordinate `{f}` in row `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if coords.len() % 2 != 0 {
        return Err(Error::Data(format!("row `{id}` has an odd number of coordinates")));
    }
    let points = coords.chunks(2).map(|c| [c[0], c[1]]).collect();
    Ok((id, split, points))
}

pub fn read_annotations(path: &Path) -> Result<Vec<(String, Split, Vec<Point>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 && line.starts_with("id,") || line.trim().is_empty() {
            continue;
        }
        rows.push(parse_annotation_line(&line)?);
    }
    Ok(rows)
}

pub fn write_annotations(path: &Path, samples: &[&AnnotatedSample]) -> Result<()> {
    let m = samples.first().map_or(0, |s| s.points.len());
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("id,split");
    for k in 1..=m {
        header.push_str(&format!(",x{k},y{k}"));
    }
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for s in samples {
        let coords: String = s
            .points
            .iter()
            .map(|p| format!(",{:.4},{:.4}", p[0], p[1]))
            .collect();
        writeln!(w, "{},{}{coords}", s.id, s.split.as_str()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn save_png(path: &Path, image: &ImageTensor) -> Result<()> {
    image
        .to_rgb8()
        .save(path)
        .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?
        .to_rgb8();
    ImageTensor::from_rgb8(&img)
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes samples (and optional clips) under `root`. Refuses a non-empty root
/// unless `force`.
pub fn write_dataset(
    root: &Path,
    manifest: &DatasetManifest,
    samples: &[AnnotatedSample],
    clips: &[(String, Vec<ImageTensor>)],
    force: bool,
) -> Result<DatasetManifest> {
    if root.exists() && !force {
        let non_empty = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .next()
            .is_some();
        if non_empty {
            return Err(Error::Argument(format!(
                "{} is not empty; pass --force to overwrite",
                root.display()
            )));
        }
    }
    let m = check_annotations(samples)?;
    if m != manifest.points {
        return Err(Error::Data(format!(
            "manifest declares {} points, samples carry {m}",
            manifest.points
        )));
    }
    let mut manifest = manifest.clone();
    manifest.train = 0;
    manifest.test = 0;
    for s in samples {
        let dir = root.join(s.split.as_str());
        make_dir(&dir)?;
        save_png(&dir.join(format!("{}.png", s.id)), &s.image)?;
        match s.split {
            Split::Train => manifest.train += 1,
            Split::Test => manifest.test += 1,
        }
    }
    manifest.clips.clear();
    for (name, frames) in clips {
        let dir = root.join(CLIP_DIR).join(name);
        make_dir(&dir)?;
        for (i, f) in frames.iter().enumerate() {
            save_png(&dir.join(format!("{i:05}.png")), f)?;
        }
        manifest.clips.push(name.clone());
    }
    write_annotations(&root.join(ANNOTATION_FILE), &samples.iter().collect::<Vec<_>>())?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("serialising manifest: {e}")))?;
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::Data(format!(
            "{} has format `{}`, expected `{FORMAT}`",
            path.display(),
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Loads a dataset written by [`write_dataset`] (clips are loaded separately).
pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let manifest = read_manifest(root)?;
    let rows = read_annotations(&root.join(ANNOTATION_FILE))?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (id, split, points) in rows {
        if points.len() != manifest.points {
            return Err(Error::Data(format!(
                "row `{id}` has {} points, manifest declares {}",
                points.len(),
                manifest.points
            )));
        }
        let image = load_png(&root.join(split.as_str()).join(format!("{id}.png")))?;
        let sample = AnnotatedSample {
            id,
            split,
            image,
            points,
        };
        match split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    if train.len() != manifest.train || test.len() != manifest.test {
        return Err(Error::Data(format!(
            "manifest lists {}/{} train/test samples, annotations have {}/{}",
            manifest.train,
            manifest.test,
            train.len(),
            test.len()
        )));
    }
    Ok(LoadedDataset {
        manifest,
        train,
        test,
    })
}

/// Loads every clip listed in the manifest, frames in file-name order.
pub fn load_clips(root: &Path) -> Result<Vec<(String, Vec<ImageTensor>)>> {
    let manifest = read_manifest(root)?;
    manifest
        .clips
        .iter()
        .map(|name| {
            let dir = root.join(CLIP_DIR).join(name);
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "png"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Data(format!("clip `{name}` has no frames")));
            }
            let frames = files.iter().map(|p| load_png(p)).collect::<Result<_>>()?;
            Ok((name.clone(), frames))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_clip, toy_corpus, Family};

    #[test]
    fn annotation_rows_parse() {
        let (id, split, pts) = parse_annotation_line("a-1,test,1.5,2.25,3,4").unwrap();
        assert_eq!(id, "a-1");
        assert_eq!(split, Split::Test);
        assert_eq!(pts, vec![[1.5, 2.25], [3.0, 4.0]]);
        assert!(parse_annotation_line("a,train,1,2,3").is_err());
        assert!(parse_annotation_line("a,valid,1,2").is_err());
        assert!(parse_annotation_line("a,train,1,nan").is_err());
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = toy_corpus(2, 3, Family::B, Split::Train).unwrap();
        samples.extend(toy_corpus(2, 2, Family::B, Split::Test).unwrap());
        let (frames, _) = toy_clip(2, 4, Family::B).unwrap();
        let manifest = DatasetManifest::new(5, [0, 1], "toy B seed 2");
        let clips = vec![("c0".to_string(), frames.clone())];
        write_dataset(dir.path(), &manifest, &samples, &clips, false).unwrap();
        assert!(write_dataset(dir.path(), &manifest, &samples, &clips, false).is_err());

        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.train.len(), 3);
        assert_eq!(loaded.test.len(), 2);
        for (a, b) in samples.iter().zip(loaded.train.iter().chain(&loaded.test)) {
            assert_eq!(a.id, b.id);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p[0] - q[0]).abs() < 1e-4 && (p[1] - q[1]).abs() < 1e-4);
            }
            // 8-bit quantisation.
            let err = a
                .image
                .pixels()
                .iter()
                .zip(b.image.pixels())
                .fold(0f32, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
        let clips = load_clips(dir.path()).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].1.len(), 4);
    }
}
