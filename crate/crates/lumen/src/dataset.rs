//! Dataset ingestion into manifests.
//!
//! Supported layouts:
//!
//! - `folder_labels`: `<root>/<class name>/<image>.png`; classes are the
//!   sorted directory names.
//! - `coco_json`: `<root>/annotations.json` in COCO detection form, images
//!   under `<root>/images/` (or `<root>/` directly). Category ids map to
//!   class indices in ascending id order.
//! - `mask_pngs`: `<root>/images/<stem>.png` with label maps at
//!   `<root>/masks/<stem>.png` and optional class names in `<root>/labels.txt`.
//!
//! An expert reference text for an image lives next to it as `<stem>.ref.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lumen_core::{BoundingBox, GroundTruth, GroundTruthBox, GroundTruthPayload, TaskKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image_io;

pub const COCO_ANNOTATIONS: &str = "annotations.json";
pub const REFERENCE_SUFFIX: &str = ".ref.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    MalformedAnnotation {
        file: String,
        line: Option<usize>,
        message: String,
    },
    #[error("missing image {0}")]
    MissingImage(String),
    #[error("dataset root {0} does not exist")]
    MissingRoot(String),
    #[error("unknown dataset format {0} (expected folder_labels, coco_json or mask_pngs)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset {0} not found")]
    NotFound(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(file: &Path, line: Option<usize>, message: impl Into<String>) -> DatasetError {
    DatasetError::MalformedAnnotation {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    FolderLabels,
    CocoJson,
    MaskPngs,
}

impl DatasetFormat {
    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        match s {
            "folder_labels" => Ok(Self::FolderLabels),
            "coco_json" => Ok(Self::CocoJson),
            "mask_pngs" => Ok(Self::MaskPngs),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }

    pub fn task(self) -> TaskKind {
        match self {
            Self::FolderLabels => TaskKind::Classification,
            Self::CocoJson => TaskKind::Detection,
            Self::MaskPngs => TaskKind::Segmentation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub sample_id: String,
    /// Relative to the manifest root.
    pub image_path: String,
    pub ground_truth: GroundTruth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub task: TaskKind,
    pub format: DatasetFormat,
    pub root: String,
    /// Class names indexed by the ground-truth class ids.
    pub label_set: Vec<String>,
    pub items: Vec<DatasetItem>,
}

impl DatasetManifest {
    pub fn image_path(&self, item: &DatasetItem) -> PathBuf {
        Path::new(&self.root).join(&item.image_path)
    }

    /// Checks every image exists and every ground truth matches the task.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for item in &self.items {
            let p = self.image_path(item);
            if !p.is_file() {
                return Err(DatasetError::MissingImage(p.display().to_string()));
            }
            if item.ground_truth.task() != self.task {
                return Err(malformed(
                    Path::new(&self.root),
                    None,
                    format!("{}: ground truth is not {}", item.sample_id, self.task),
                ));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(format!("{}.json", self.dataset_id));
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Loads a manifest file and validates it.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| malformed(path, Some(e.line()), e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Loads `<dir>/<dataset_id>.json`.
    pub fn load_by_id(dir: &Path, dataset_id: &str) -> Result<Self, DatasetError> {
        let path = dir.join(format!("{dataset_id}.json"));
        if !path.is_file() {
            return Err(DatasetError::NotFound(dataset_id.to_string()));
        }
        Self::load(&path)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    out.sort();
    Ok(out)
}

fn is_png(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn reference_for(image: &Path) -> Result<Option<String>, DatasetError> {
    let path = image.with_file_name(format!("{}{REFERENCE_SUFFIX}", stem(image)));
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(Some(text.trim().to_string()))
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Reads `root` in the given layout. `dataset_id` defaults to the root's directory name.
pub fn ingest_dataset(
    root: &Path,
    format: DatasetFormat,
    dataset_id: Option<&str>,
) -> Result<DatasetManifest, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.display().to_string()));
    }
    let root = root.canonicalize().map_err(io_err(root))?;
    let (label_set, items) = match format {
        DatasetFormat::FolderLabels => folder_labels(&root)?,
        DatasetFormat::CocoJson => coco_json(&root)?,
        DatasetFormat::MaskPngs => mask_pngs(&root)?,
    };
    let dataset_id = dataset_id.map(str::to_string).unwrap_or_else(|| {
        root.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let manifest = DatasetManifest {
        dataset_id,
        task: format.task(),
        format,
        root: root.display().to_string(),
        label_set,
        items,
    };
    manifest.validate()?;
    Ok(manifest)
}

type Ingested = (Vec<String>, Vec<DatasetItem>);

fn folder_labels(root: &Path) -> Result<Ingested, DatasetError> {
    let classes: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(malformed(root, None, "no class directories"));
    }
    let mut label_set = Vec::new();
    let mut items = Vec::new();
    for (class_id, dir) in classes.iter().enumerate() {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for img in sorted_entries(dir)?.into_iter().filter(|p| is_png(p)) {
            items.push(DatasetItem {
                sample_id: format!("{name}/{}", stem(&img)),
                image_path: relative(root, &img),
                ground_truth: GroundTruth::label(class_id),
                reference: reference_for(&img)?,
            });
        }
        label_set.push(name);
    }
    Ok((label_set, items))
}

fn read_labels_txt(path: &Path) -> Result<Option<Vec<String>>, DatasetError> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() {
            return Err(malformed(path, Some(i + 1), "empty class name"));
        }
        names.push(name.to_string());
    }
    Ok(Some(names))
}

fn mask_pngs(root: &Path) -> Result<Ingested, DatasetError> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    for d in [&images_dir, &masks_dir] {
        if !d.is_dir() {
            return Err(malformed(root, None, format!("missing directory {}", d.display())));
        }
    }
    let names = read_labels_txt(&root.join("labels.txt"))?;
    let mut max_label = 0u32;
    let mut items = Vec::new();
    let masks: Vec<PathBuf> = sorted_entries(&masks_dir)?.into_iter().filter(|p| is_png(p)).collect();
    for mask_path in &masks {
        let img = images_dir.join(mask_path.file_name().expect("entry has a name"));
        if !img.is_file() {
            return Err(DatasetError::MissingImage(img.display().to_string()));
        }
        let bytes = fs::read(mask_path).map_err(io_err(mask_path))?;
        let map = image_io::decode_label_png(&bytes)
            .map_err(|e| malformed(mask_path, None, e.to_string()))?;
        let image = image_io::read_image(&img).map_err(|e| malformed(&img, None, e.to_string()))?;
        if (map.height(), map.width()) != (image.height(), image.width()) {
            return Err(malformed(
                mask_path,
                None,
                format!(
                    "mask is {}x{} but image is {}x{}",
                    map.height(),
                    map.width(),
                    image.height(),
                    image.width()
                ),
            ));
        }
        let top = map.labels().iter().copied().max().unwrap_or(0);
        if let Some(names) = &names {
            if top as usize >= names.len() {
                return Err(malformed(
                    mask_path,
                    None,
                    format!("label {top} has no entry in labels.txt"),
                ));
            }
        }
        max_label = max_label.max(top);
        items.push(DatasetItem {
            sample_id: stem(&img),
            image_path: relative(root, &img),
            ground_truth: GroundTruth::label_map(map),
            reference: reference_for(&img)?,
        });
    }
    for img in sorted_entries(&images_dir)?.into_iter().filter(|p| is_png(p)) {
        if !masks_dir.join(img.file_name().expect("entry has a name")).is_file() {
            return Err(malformed(&img, None, "image has no mask"));
        }
    }
    let label_set =
        names.unwrap_or_else(|| (0..=max_label).map(|i| format!("class_{i}")).collect());
    Ok((label_set, items))
}

/// COCO `[x, y, width, height]`, validated while parsing so errors carry a line.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(try_from = "[f64; 4]")]
struct CocoBox(BoundingBox);

impl TryFrom<[f64; 4]> for CocoBox {
    type Error = String;

    fn try_from([x, y, w, h]: [f64; 4]) -> Result<Self, Self::Error> {
        if !(w > 0.0 && h > 0.0) {
            return Err(format!("bbox [{x}, {y}, {w}, {h}] has non-positive size"));
        }
        BoundingBox::new(x, y, x + w, y + h)
            .map(CocoBox)
            .map_err(|e| e.to_string())
    }
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    bbox: CocoBox,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

/// Line of the `k`-th `"category_id"` key, which only annotations carry.
fn annotation_line(text: &str, k: usize) -> Option<usize> {
    let (pos, _) = text.match_indices("\"category_id\"").nth(k)?;
    Some(text[..pos].matches('\n').count() + 1)
}

fn coco_json(root: &Path) -> Result<Ingested, DatasetError> {
    let path = root.join(COCO_ANNOTATIONS);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let coco: CocoFile =
        serde_json::from_str(&text).map_err(|e| malformed(&path, Some(e.line()), e.to_string()))?;
    let mut cats: Vec<&CocoCategory> = coco.categories.iter().collect();
    cats.sort_by_key(|c| c.id);
    let class_of: BTreeMap<u64, usize> = cats.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    if class_of.len() != cats.len() {
        return Err(malformed(&path, None, "duplicate category id"));
    }
    let label_set = cats.iter().map(|c| c.name.clone()).collect();
    let mut boxes: BTreeMap<u64, Vec<GroundTruthBox>> =
        coco.images.iter().map(|im| (im.id, Vec::new())).collect();
    if boxes.len() != coco.images.len() {
        return Err(malformed(&path, None, "duplicate image id"));
    }
    for (k, ann) in coco.annotations.iter().enumerate() {
        let line = annotation_line(&text, k);
        let class_id = *class_of.get(&ann.category_id).ok_or_else(|| {
            malformed(&path, line, format!("unknown category_id {}", ann.category_id))
        })?;
        boxes
            .get_mut(&ann.image_id)
            .ok_or_else(|| malformed(&path, line, format!("unknown image_id {}", ann.image_id)))?
            .push(GroundTruthBox {
                bbox: ann.bbox.0,
                class_id,
            });
    }
    let mut images: Vec<&CocoImage> = coco.images.iter().collect();
    images.sort_by_key(|im| im.id);
    let mut items = Vec::new();
    for im in images {
        let img = [root.join("images").join(&im.file_name), root.join(&im.file_name)]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| {
                DatasetError::MissingImage(root.join("images").join(&im.file_name).display().to_string())
            })?;
        items.push(DatasetItem {
            sample_id: stem(&img),
            image_path: relative(root, &img),
            ground_truth: GroundTruth::boxes(boxes.remove(&im.id).unwrap_or_default()),
            reference: reference_for(&img)?,
        });
    }
    Ok((label_set, items))
}

/// Re-indexes class ids from a dataset label set into a model label set by name.
pub fn remap_ground_truth(
    gt: &GroundTruth,
    from: &[String],
    to: &[String],
) -> Result<GroundTruth, String> {
    if from == to {
        return Ok(gt.clone());
    }
    let map = |id: usize| -> Result<usize, String> {
        let name = from.get(id).ok_or_else(|| format!("class id {id} outside dataset label set"))?;
        to.iter()
            .position(|n| n == name)
            .ok_or_else(|| format!("class {name:?} is not in the model label set"))
    };
    let payload = match gt.payload() {
        GroundTruthPayload::Label { class_id } => GroundTruthPayload::Label {
            class_id: map(*class_id)?,
        },
        GroundTruthPayload::Boxes { boxes } => GroundTruthPayload::Boxes {
            boxes: boxes
                .iter()
                .map(|b| {
                    Ok(GroundTruthBox {
                        bbox: b.bbox,
                        class_id: map(b.class_id)?,
                    })
                })
                .collect::<Result<_, String>>()?,
        },
        GroundTruthPayload::LabelMap { label_map } => {
            let labels = label_map
                .labels()
                .iter()
                .map(|&l| map(l as usize).map(|v| v as u32))
                .collect::<Result<Vec<_>, String>>()?;
            GroundTruthPayload::LabelMap {
                label_map: lumen_core::LabelMap::new(label_map.height(), label_map.width(), labels)
                    .map_err(|e| e.to_string())?,
            }
        }
    };
    GroundTruth::new(gt.task(), payload).map_err(|e| e.to_string())
}
