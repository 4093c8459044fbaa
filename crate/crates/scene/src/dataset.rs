use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::{LidarConfig, PriorNoiseConfig, SceneConfig};
use crate::lidar::{simulate_lidar, LidarScan, PointSource};
use crate::noise::corrupt_priors;
use crate::render::{render_view, LabeledBox, DEPTH_MAX, SEMANTIC_CHANNELS, SEMANTIC_NAMES};
use crate::scene::{generate_scene, Scene};
use crate::SceneError;

pub const DATASET_FORMAT: &str = "prior3d-dataset-v1";
pub const DATASET_FILE: &str = "dataset.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const SCENE_MANIFEST: &str = "manifest.json";
const IMAGE_BLOB: &str = "image.bin";
const SEMANTIC_BLOB: &str = "semantic.bin";
const DEPTH_BLOB: &str = "depth.bin";
const LIDAR_BLOB: &str = "lidar.bin";

/// One camera of a stored scene: the image, the degraded priors, and both
/// box lists.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub width: usize,
    pub height: usize,
    pub image: Vec<f32>,
    pub semantic: Vec<f32>,
    pub depth: Vec<f32>,
    pub gt_boxes: Vec<LabeledBox>,
    pub prior_boxes: Vec<LabeledBox>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub scene: Scene,
    pub views: Vec<ViewRecord>,
    pub lidar: LidarScan,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct GenerationConfig {
    pub scene: SceneConfig,
    pub noise: PriorNoiseConfig,
    pub lidar: LidarConfig,
}


/// Builds a full record (render, degrade, scan) from a seed.
pub fn build_record(id: &str, config: &GenerationConfig, seed: u64) -> Result<SceneRecord, SceneError> {
    let scene = generate_scene(&config.scene, seed)?;
    let mut views = Vec::with_capacity(scene.cameras.len());
    for (k, cam) in scene.cameras.iter().enumerate() {
        let gt = render_view(&scene, cam);
        let prior = corrupt_priors(&gt, &config.noise, view_seed(seed, k))?;
        views.push(ViewRecord {
            width: gt.width,
            height: gt.height,
            image: gt.image,
            semantic: prior.semantic,
            depth: prior.depth,
            gt_boxes: gt.boxes,
            prior_boxes: prior.boxes,
        });
    }
    let lidar = simulate_lidar(&scene, &config.lidar)?.quantized();
    Ok(SceneRecord { id: id.to_string(), scene, views, lidar })
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn view_seed(scene_seed: u64, camera: usize) -> u64 {
    mix(scene_seed ^ mix(0x5eed_0000 + camera as u64))
}

/// Seed of the `index`-th scene of a dataset generated from `base`.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    mix(base.wrapping_add(mix(index as u64 + 1)))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format: String,
    pub seed: u64,
    pub scene_count: usize,
    pub semantic_channels: Vec<String>,
    pub depth_max: f64,
    pub generation: GenerationConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobRef {
    file: String,
    /// Byte offset.
    offset: usize,
    shape: Vec<usize>,
}

impl BlobRef {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewManifest {
    width: usize,
    height: usize,
    gt_boxes: Vec<LabeledBox>,
    prior_boxes: Vec<LabeledBox>,
    image: BlobRef,
    semantic: BlobRef,
    depth: BlobRef,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneManifest {
    format: String,
    id: String,
    semantic_channels: Vec<String>,
    scene: Scene,
    views: Vec<ViewManifest>,
    /// Rows of (x, y, z, tag); tag is -1 for ground, else the object index.
    lidar: BlobRef,
}

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io { path: path.to_path_buf(), source }
}

struct BlobWriter {
    name: &'static str,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn new(name: &'static str) -> Self {
        Self { name, bytes: Vec::new() }
    }

    fn push(&mut self, data: &[f32], shape: Vec<usize>) -> BlobRef {
        let offset = self.bytes.len();
        for x in data {
            self.bytes.extend_from_slice(&x.to_le_bytes());
        }
        BlobRef { file: self.name.to_string(), offset, shape }
    }

    fn finish(self, dir: &Path) -> Result<(), SceneError> {
        let path = dir.join(self.name);
        fs::write(&path, &self.bytes).map_err(|e| io_err(&path, e))
    }
}

pub fn write_scene(dir: &Path, record: &SceneRecord) -> Result<(), SceneError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (mut img, mut sem, mut dep, mut lid) = (
        BlobWriter::new(IMAGE_BLOB),
        BlobWriter::new(SEMANTIC_BLOB),
        BlobWriter::new(DEPTH_BLOB),
        BlobWriter::new(LIDAR_BLOB),
    );
    let views = record
        .views
        .iter()
        .map(|v| ViewManifest {
            width: v.width,
            height: v.height,
            gt_boxes: v.gt_boxes.clone(),
            prior_boxes: v.prior_boxes.clone(),
            image: img.push(&v.image, vec![v.height, v.width, 3]),
            semantic: sem.push(&v.semantic, vec![v.height, v.width, SEMANTIC_CHANNELS]),
            depth: dep.push(&v.depth, vec![v.height, v.width]),
        })
        .collect();
    let rows: Vec<f32> = record
        .lidar
        .points
        .iter()
        .zip(&record.lidar.sources)
        .flat_map(|(p, s)| {
            let tag = match s {
                PointSource::Ground => -1.0,
                PointSource::Object(i) => *i as f32,
            };
            [p[0] as f32, p[1] as f32, p[2] as f32, tag]
        })
        .collect();
    let lidar = lid.push(&rows, vec![record.lidar.len(), 4]);
    let manifest = SceneManifest {
        format: DATASET_FORMAT.to_string(),
        id: record.id.clone(),
        semantic_channels: SEMANTIC_NAMES.iter().map(|s| s.to_string()).collect(),
        scene: record.scene.clone(),
        views,
        lidar,
    };
    for blob in [img, sem, dep, lid] {
        blob.finish(dir)?;
    }
    write_json(&dir.join(SCENE_MANIFEST), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SceneError::Corrupt(format!("{}: {e}", path.display())))?;
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| SceneError::Corrupt(format!("{}: {e}", path.display())))
}

struct BlobCache {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl BlobCache {
    fn read(&mut self, r: &BlobRef) -> Result<Vec<f32>, SceneError> {
        if r.file.contains(['/', '\\']) || r.file == ".." {
            return Err(SceneError::Corrupt(format!("blob name {:?} escapes the scene directory", r.file)));
        }
        if !self.files.iter().any(|(n, _)| n == &r.file) {
            let path = self.dir.join(&r.file);
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            self.files.push((r.file.clone(), bytes));
        }
        let bytes = &self.files.iter().find(|(n, _)| n == &r.file).expect("just inserted").1;
        let end = r.offset + 4 * r.numel();
        if end > bytes.len() {
            return Err(SceneError::Corrupt(format!(
                "{}: blob {} needs bytes {}..{} but file has {}",
                self.dir.display(),
                r.file,
                r.offset,
                end,
                bytes.len()
            )));
        }
        Ok(bytes[r.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn read_scene(dir: &Path) -> Result<SceneRecord, SceneError> {
    let manifest: SceneManifest = read_json(&dir.join(SCENE_MANIFEST))?;
    if manifest.format != DATASET_FORMAT {
        return Err(SceneError::Corrupt(format!("{}: unknown format {:?}", dir.display(), manifest.format)));
    }
    let mut blobs = BlobCache { dir: dir.to_path_buf(), files: Vec::new() };
    let mut views = Vec::with_capacity(manifest.views.len());
    for v in manifest.views {
        let expect = |r: &BlobRef, shape: &[usize]| {
            if r.shape != shape {
                return Err(SceneError::Corrupt(format!("{}: blob shape {:?}, expected {shape:?}", dir.display(), r.shape)));
            }
            Ok(())
        };
        expect(&v.image, &[v.height, v.width, 3])?;
        expect(&v.semantic, &[v.height, v.width, SEMANTIC_CHANNELS])?;
        expect(&v.depth, &[v.height, v.width])?;
        views.push(ViewRecord {
            width: v.width,
            height: v.height,
            image: blobs.read(&v.image)?,
            semantic: blobs.read(&v.semantic)?,
            depth: blobs.read(&v.depth)?,
            gt_boxes: v.gt_boxes,
            prior_boxes: v.prior_boxes,
        });
    }
    if manifest.lidar.shape.len() != 2 || manifest.lidar.shape[1] != 4 {
        return Err(SceneError::Corrupt(format!("{}: lidar blob must be N×4", dir.display())));
    }
    let rows = blobs.read(&manifest.lidar)?;
    let n_objects = manifest.scene.objects.len();
    let mut lidar = LidarScan { points: Vec::new(), sources: Vec::new() };
    for r in rows.chunks_exact(4) {
        lidar.points.push([r[0] as f64, r[1] as f64, r[2] as f64]);
        let src = if r[3] < 0.0 {
            PointSource::Ground
        } else {
            let i = r[3] as usize;
            if i >= n_objects || i as f32 != r[3] {
                return Err(SceneError::Corrupt(format!("{}: bad lidar source tag {}", dir.display(), r[3])));
            }
            PointSource::Object(i)
        };
        lidar.sources.push(src);
    }
    Ok(SceneRecord { id: manifest.id, scene: manifest.scene, views, lidar })
}

/// An opened dataset; scenes are read on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub splits: Splits,
}

impl Dataset {
    pub fn scene_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn load(&self, id: &str) -> Result<SceneRecord, SceneError> {
        read_scene(&self.scene_dir(id))
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<SceneRecord>, SceneError> {
        let ids = self.splits.get(split).ok_or_else(|| SceneError::Config(format!("unknown split {split:?}")))?;
        ids.iter().map(|id| self.load(id)).collect()
    }
}

fn meta_for(config: &GenerationConfig, seed: u64, scene_count: usize) -> DatasetMeta {
    DatasetMeta {
        format: DATASET_FORMAT.to_string(),
        seed,
        scene_count,
        semantic_channels: SEMANTIC_NAMES.iter().map(|s| s.to_string()).collect(),
        depth_max: DEPTH_MAX,
        generation: *config,
    }
}

/// Writes already-built records plus the top-level metadata and splits.
/// Every split id must name one of the records.
pub fn write_dataset(
    root: &Path,
    records: &[SceneRecord],
    splits: &Splits,
    config: &GenerationConfig,
    seed: u64,
) -> Result<(), SceneError> {
    let mut listed: Vec<&String> = splits.all().collect();
    listed.sort();
    let mut have: Vec<&String> = records.iter().map(|r| &r.id).collect();
    have.sort();
    if listed != have {
        return Err(SceneError::Config("splits must list every record exactly once".into()));
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    for r in records {
        write_scene(&root.join(&r.id), r)?;
    }
    write_json(&root.join(SPLITS_FILE), splits)?;
    write_json(&root.join(DATASET_FILE), &meta_for(config, seed, records.len()))
}

pub fn read_dataset(root: &Path) -> Result<Dataset, SceneError> {
    let meta: DatasetMeta = read_json(&root.join(DATASET_FILE))?;
    if meta.format != DATASET_FORMAT {
        return Err(SceneError::Corrupt(format!("{}: unknown format {:?}", root.display(), meta.format)));
    }
    let splits: Splits = read_json(&root.join(SPLITS_FILE))?;
    let mut seen = std::collections::HashSet::new();
    for id in splits.all() {
        if !seen.insert(id) {
            return Err(SceneError::Corrupt(format!("scene {id} appears in more than one split")));
        }
        if !root.join(id).join(SCENE_MANIFEST).is_file() {
            return Err(SceneError::Corrupt(format!("scene {id} listed in splits but missing on disk")));
        }
    }
    let on_disk = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join(SCENE_MANIFEST).is_file())
        .count();
    if on_disk != meta.scene_count || splits.len() != meta.scene_count {
        return Err(SceneError::Corrupt(format!(
            "{}: metadata says {} scenes, splits list {}, directory holds {}",
            root.display(),
            meta.scene_count,
            splits.len(),
            on_disk
        )));
    }
    Ok(Dataset { root: root.to_path_buf(), meta, splits })
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:06}")
}

/// Generates `counts = [train, val, test]` scenes into `root` with up to
/// `jobs` worker threads. Scene `i` always gets the same seed, so output does
/// not depend on `jobs`.
pub fn generate_dataset(
    root: &Path,
    config: &GenerationConfig,
    counts: [usize; 3],
    seed: u64,
    jobs: usize,
) -> Result<Dataset, SceneError> {
    config.scene.validate()?;
    config.noise.validate()?;
    config.lidar.validate()?;
    let total: usize = counts.iter().sum();
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<SceneError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(total.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total || failure.lock().expect("poisoned").is_some() {
                    break;
                }
                let id = scene_id(i);
                let result = build_record(&id, config, scene_seed(seed, i)).and_then(|r| write_scene(&root.join(&id), &r));
                if let Err(e) = result {
                    *failure.lock().expect("poisoned") = Some(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    let ids: Vec<String> = (0..total).map(scene_id).collect();
    let splits = Splits {
        train: ids[..counts[0]].to_vec(),
        val: ids[counts[0]..counts[0] + counts[1]].to_vec(),
        test: ids[counts[0] + counts[1]..].to_vec(),
    };
    write_json(&root.join(SPLITS_FILE), &splits)?;
    write_json(&root.join(DATASET_FILE), &meta_for(config, seed, total))?;
    read_dataset(root)
}
