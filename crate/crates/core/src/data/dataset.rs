//! On-disk dataset layout, pools of selected channels, and tile sampling.
//!
//! ```text
//! <root>/images/<id>.<band>.msr
//! <root>/masks/<id>.pgm
//! <root>/split.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use ssgan_tensor::{Prng, Tensor};

use super::codec::{decode_mask, load_raster, save_pgm, save_raster};
use super::image::{select_channels, Band, ChannelSelection, LabelMask, MultispectralImage};
use super::split::{make_split, DatasetSplit};
use super::synth::{synth_field, SyntheticFieldConfig};
use crate::error::{Error, Result};

pub fn images_dir(root: &Path) -> PathBuf {
    root.join("images")
}

pub fn masks_dir(root: &Path) -> PathBuf {
    root.join("masks")
}

pub fn split_path(root: &Path) -> PathBuf {
    root.join("split.json")
}

pub fn band_path(root: &Path, id: &str, band: Band) -> PathBuf {
    images_dir(root).join(format!("{id}.{}.msr", band.file_name()))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    masks_dir(root).join(format!("{id}.pgm"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes every band of an un-normalized image.
pub fn write_image(root: &Path, image: &MultispectralImage) -> Result<()> {
    if image.is_normalized() {
        return Err(Error::Contract(format!("{}: datasets store raw reflectance", image.id)));
    }
    create_dir(&images_dir(root))?;
    for (band, raster) in image.bands() {
        save_raster(&band_path(root, &image.id, band), raster)?;
    }
    Ok(())
}

pub fn write_mask(root: &Path, mask: &LabelMask) -> Result<()> {
    create_dir(&masks_dir(root))?;
    save_pgm(&mask_path(root, &mask.id), &mask.to_gray())
}

pub fn write_split(root: &Path, split: &DatasetSplit) -> Result<()> {
    let path = split_path(root);
    let text = serde_json::to_string_pretty(split).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_split(root: &Path) -> Result<DatasetSplit> {
    let path = split_path(root);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, 0, e.to_string()))
}

/// Loads every raw image under `<root>/images`, grouped by id.
pub fn read_images(root: &Path) -> Result<BTreeMap<String, MultispectralImage>> {
    let dir = images_dir(root);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        files.push(entry.map_err(|e| Error::io(&dir, e))?.path());
    }
    files.sort();
    let mut out: BTreeMap<String, MultispectralImage> = BTreeMap::new();
    for path in files {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_suffix(".msr") else { continue };
        let (id, band) = stem
            .rsplit_once('.')
            .and_then(|(id, b)| Band::from_file_name(b).map(|b| (id, b)))
            .ok_or_else(|| Error::Data(format!("{}: expected <id>.<band>.msr", path.display())))?;
        let raster = load_raster(&path)?;
        let image = out
            .entry(id.to_string())
            .or_insert_with(|| MultispectralImage::new(id, raster.height, raster.width));
        image.insert(band, raster)?;
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no .msr rasters in {}", dir.display())));
    }
    Ok(out)
}

pub fn read_mask(root: &Path, id: &str) -> Result<LabelMask> {
    let path = mask_path(root, id);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(LabelMask::from_gray(id, decode_mask(&bytes, &path)?))
}

/// Writes a synthetic dataset: every band and mask for `cfg.num_images`
/// plots, and a split at `labeled_fraction` seeded by `cfg.seed`.
pub fn synthesize(root: &Path, cfg: &SyntheticFieldConfig, labeled_fraction: f64) -> Result<DatasetSplit> {
    cfg.validate()?;
    let mut rng = Prng::new(cfg.seed);
    let mut ids = Vec::with_capacity(cfg.num_images);
    for i in 0..cfg.num_images {
        let id = format!("plot_{i:03}");
        let (image, mask) = synth_field(&id, cfg, &mut rng.split())?;
        write_image(root, &image)?;
        write_mask(root, &mask)?;
        ids.push(id);
    }
    let split = make_split(&ids, labeled_fraction, cfg.test_fraction, cfg.seed)?;
    write_split(root, &split)?;
    Ok(split)
}

/// Adds missing NDVI rasters and makes a fresh split over every image.
/// Returns the split and the number of NDVI files written.
pub fn prepare(root: &Path, labeled_fraction: f64, test_fraction: f64, seed: u64) -> Result<(DatasetSplit, usize)> {
    let images = read_images(root)?;
    let mut written = 0;
    for image in images.values() {
        if image.band(Band::Ndvi).is_none() {
            let mut image = image.clone();
            image.ensure_ndvi()?;
            save_raster(&band_path(root, &image.id, Band::Ndvi), image.band(Band::Ndvi).expect("just added"))?;
            written += 1;
        }
    }
    let ids: Vec<String> = images.into_keys().collect();
    let split = make_split(&ids, labeled_fraction, test_fraction, seed)?;
    for id in split.labeled_train.iter().chain(&split.test) {
        read_mask(root, id)?;
    }
    write_split(root, &split)?;
    Ok((split, written))
}

/// A dataset ready for sampling: normalized images with NDVI, masks for
/// every labeled and test image, and the split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub images: BTreeMap<String, MultispectralImage>,
    pub masks: BTreeMap<String, LabelMask>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let split = read_split(root)?;
        Self::load_with_split(root, split)
    }

    pub fn load_with_split(root: &Path, split: DatasetSplit) -> Result<Self> {
        let mut images = read_images(root)?;
        let known: BTreeSet<String> = images.keys().cloned().collect();
        split.validate(&known)?;
        for image in images.values_mut() {
            image.ensure_ndvi()?;
            image.normalize()?;
        }
        let mut masks = BTreeMap::new();
        for id in split.labeled_train.iter().chain(&split.test) {
            let mask = read_mask(root, id)?;
            let image = &images[id];
            if (mask.height, mask.width) != (image.height, image.width) {
                return Err(Error::Data(format!(
                    "{id}: mask is {}x{}, image is {}x{}",
                    mask.height, mask.width, image.height, image.width
                )));
            }
            masks.insert(id.clone(), mask);
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            images,
            masks,
            split,
        })
    }

    /// Stacks `selection` for every image in the split.
    pub fn pools(&self, selection: ChannelSelection) -> Result<Pools> {
        let item = |id: &String, with_mask: bool| -> Result<Item> {
            let pixels = select_channels(&self.images[id], selection)?;
            let [_, c, h, w] = pixels.nchw();
            Ok(Item {
                id: id.clone(),
                pixels: pixels.reshape(&[c, h, w])?,
                mask: if with_mask { Some(self.masks[id].data.clone()) } else { None },
            })
        };
        let collect = |ids: &[String], with_mask: bool| ids.iter().map(|id| item(id, with_mask)).collect::<Result<Vec<_>>>();
        Ok(Pools {
            selection,
            labeled: collect(&self.split.labeled_train, true)?,
            unlabeled: collect(&self.split.unlabeled_train, false)?,
            test: collect(&self.split.test, true)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Labeled,
    Unlabeled,
    Test,
}

/// One image's selected channels `[C, H, W]` and, for labeled and test
/// pools, its mask.
#[derive(Debug, Clone)]
pub struct Item {
    pub id: String,
    pub pixels: Tensor<f32>,
    pub mask: Option<Vec<u8>>,
}

impl Item {
    pub fn extents(&self) -> (usize, usize) {
        let d = self.pixels.dims();
        (d[1], d[2])
    }
}

#[derive(Debug, Clone)]
pub struct Pools {
    pub selection: ChannelSelection,
    pub labeled: Vec<Item>,
    pub unlabeled: Vec<Item>,
    pub test: Vec<Item>,
}

impl Pools {
    pub fn get(&self, pool: Pool) -> &[Item] {
        match pool {
            Pool::Labeled => &self.labeled,
            Pool::Unlabeled => &self.unlabeled,
            Pool::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, C, tile_h, tile_w]`.
    pub images: Tensor<f32>,
    /// `[B, tile_h, tile_w]` flattened; absent for unlabeled batches.
    pub masks: Option<Vec<u8>>,
}

/// Random image and random top-left corner per batch element.
pub fn sample_batch(pools: &Pools, pool: Pool, batch_size: usize, tile_h: usize, tile_w: usize, rng: &mut Prng) -> Result<Batch> {
    let items = pools.get(pool);
    if items.is_empty() {
        return Err(Error::Data(format!("{pool:?} pool is empty")));
    }
    if batch_size == 0 || tile_h == 0 || tile_w == 0 {
        return Err(Error::Config("batch size and tile extents must be positive".into()));
    }
    let c = pools.selection.channels();
    let mut pixels = Vec::with_capacity(batch_size * c * tile_h * tile_w);
    let mut masks = (pool != Pool::Unlabeled).then(|| Vec::with_capacity(batch_size * tile_h * tile_w));
    for _ in 0..batch_size {
        let item = &items[rng.below(items.len())];
        let (h, w) = item.extents();
        if tile_h > h || tile_w > w {
            return Err(Error::Extent(format!("tile {tile_h}x{tile_w} exceeds image {} ({h}x{w})", item.id)));
        }
        let y0 = rng.below(h - tile_h + 1);
        let x0 = rng.below(w - tile_w + 1);
        let src = item.pixels.data();
        for ch in 0..c {
            for y in y0..y0 + tile_h {
                let row = (ch * h + y) * w;
                pixels.extend_from_slice(&src[row + x0..row + x0 + tile_w]);
            }
        }
        if let Some(out) = masks.as_mut() {
            let m = item
                .mask
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("{} has no mask", item.id)))?;
            for y in y0..y0 + tile_h {
                out.extend_from_slice(&m[y * w + x0..y * w + x0 + tile_w]);
            }
        }
    }
    Ok(Batch {
        images: Tensor::from_vec(&[batch_size, c, tile_h, tile_w], pixels)?,
        masks,
    })
}

/// Samples batches on a producer thread. The producer blocks once
/// [`BatchQueue::CAPACITY`] batches are waiting.
pub struct BatchQueue {
    rx: Option<Receiver<Result<Batch>>>,
    handle: Option<JoinHandle<()>>,
}

impl BatchQueue {
    pub const CAPACITY: usize = 4;

    pub fn spawn(pools: Arc<Pools>, pool: Pool, batch_size: usize, tile_h: usize, tile_w: usize, mut rng: Prng) -> Self {
        let (tx, rx) = sync_channel(Self::CAPACITY);
        let handle = std::thread::spawn(move || loop {
            let batch = sample_batch(&pools, pool, batch_size, tile_h, tile_w, &mut rng);
            let failed = batch.is_err();
            if tx.send(batch).is_err() || failed {
                break;
            }
        });
        BatchQueue {
            rx: Some(rx),
            handle: Some(handle),
        }
    }

    pub fn next_batch(&self) -> Result<Batch> {
        self.rx
            .as_ref()
            .expect("receiver lives until drop")
            .recv()
            .map_err(|_| Error::Contract("batch producer stopped".into()))?
    }
}

impl Drop for BatchQueue {
    fn drop(&mut self) {
        // Closing the channel unblocks a waiting producer.
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
