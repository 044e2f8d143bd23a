//! Dataset layout on disk, in-memory crop sets and the prefetch queue.
//!
//! Layout: `root/{train,validation,test}/*.{tif,tiff,f32}`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::image::{self, Image};
use crate::pipeline::normalize;
use crate::synth::{synth_micrograph, SyntheticSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub split: Split,
}

/// Files per split in stable (sorted) order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<Entry>,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

fn is_image_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("tif" | "tiff" | "f32"))
}

/// Indexes `root/{train,validation,test}`. File names must be unique across
/// splits and every split must be non-empty.
pub fn ingest(root: &Path) -> Result<DatasetIndex> {
    let mut entries = Vec::new();
    let mut seen: HashMap<String, Split> = HashMap::new();
    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file() && is_image_file(p)).collect(),
            Err(_) => Vec::new(),
        };
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("split `{split}` at {} has no images", dir.display())));
        }
        for path in files {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if let Some(other) = seen.insert(name.clone(), split) {
                if other != split {
                    return Err(Error::Data(format!("`{name}` appears in both `{other}` and `{split}`")));
                }
            }
            entries.push(Entry { path, split });
        }
    }
    Ok(DatasetIndex { entries })
}

/// Normalized `side×side` crops for each split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Image>,
    pub validation: Vec<Image>,
    pub test: Vec<Image>,
}

impl Dataset {
    pub fn get(&self, split: Split) -> &[Image] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<Image> {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }

    /// Reads every indexed file, tiles it into non-overlapping `side×side`
    /// crops and normalizes each. Unreadable files are skipped with a warning.
    pub fn load(index: &DatasetIndex, side: usize) -> Result<Self> {
        let mut ds = Dataset::default();
        for e in &index.entries {
            match image::read_any(&e.path) {
                Ok(img) => {
                    let crops = img.crops(side);
                    if crops.is_empty() {
                        log::warn!("{}: smaller than {side}x{side}, skipped", e.path.display());
                    }
                    ds.get_mut(e.split).extend(crops.iter().map(normalize));
                }
                Err(err) => log::warn!("skipping unreadable {}: {err}", e.path.display()),
            }
        }
        for split in Split::ALL {
            if ds.get(split).is_empty() {
                return Err(Error::Data(format!("split `{split}` yielded no {side}x{side} crops")));
            }
        }
        Ok(ds)
    }

    /// In-memory synthetic lattice crops; crop `i` of every split has its
    /// own derived source seed.
    pub fn synthetic(counts: [usize; 3], side: usize, seed: u64) -> Result<Self> {
        let mut ds = Dataset::default();
        for (k, split) in Split::ALL.into_iter().enumerate() {
            for i in 0..counts[k] {
                let src = SyntheticSource::random(side, synthetic_seed(seed, split, i));
                ds.get_mut(split).push(normalize(&synth_micrograph(&src, side)?));
            }
        }
        Ok(ds)
    }
}

/// Seed for synthetic crop `index` of `split` under a master seed.
pub fn synthetic_seed(master: u64, split: Split, index: usize) -> u64 {
    crate::rng::derive(master, &[0x5157_4e54, split as u64, index as u64])
}

/// Writes `count` synthetic micrographs as raw `.f32` files, assigning
/// splits by `ratios` (train, validation, test) with every split getting at
/// least one file when `count >= 3`.
pub fn write_synthetic(root: &Path, count: usize, ratios: [f64; 3], side: usize, seed: u64) -> Result<[usize; 3]> {
    let counts = split_counts(count, ratios);
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let dir = root.join(split.dir_name());
        std::fs::create_dir_all(&dir)?;
        for i in 0..counts[k] {
            let src = SyntheticSource::random(side, synthetic_seed(seed, split, i));
            let img = synth_micrograph(&src, side)?;
            image::write_raw(&dir.join(format!("{split}_{i:05}.f32")), &img)?;
        }
    }
    Ok(counts)
}

/// Integer split sizes proportional to `ratios`, summing to `count`.
pub fn split_counts(count: usize, ratios: [f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let mut out = [0usize; 3];
    if count == 0 || total <= 0.0 {
        return out;
    }
    out[1] = ((count as f64) * ratios[1] / total).round() as usize;
    out[2] = ((count as f64) * ratios[2] / total).round() as usize;
    if count >= 3 {
        out[1] = out[1].max(1);
        out[2] = out[2].max(1);
    }
    while out[1] + out[2] > count {
        if out[1] >= out[2] {
            out[1] -= 1;
        } else {
            out[2] -= 1;
        }
    }
    out[0] = count - out[1] - out[2];
    out
}

/// Bounded queue fed by one producer thread. Items arrive in production
/// order, so output is deterministic when the producer is.
pub struct Prefetcher<T> {
    rx: Option<Receiver<Result<T>>>,
    handle: Option<JoinHandle<()>>,
}

pub const PREFETCH_CAPACITY: usize = 8;

impl<T: Send + 'static> Prefetcher<T> {
    /// Produces `make(i)` for `i` in `range`, blocking when `capacity`
    /// items are waiting.
    pub fn spawn<F>(capacity: usize, range: std::ops::Range<u64>, mut make: F) -> Self
    where
        F: FnMut(u64) -> Result<T> + Send + 'static,
    {
        let (tx, rx) = sync_channel(capacity.max(1));
        let handle = std::thread::spawn(move || {
            for i in range {
                let item = make(i);
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });
        Self { rx: Some(rx), handle: Some(handle) }
    }

    pub fn next(&mut self) -> Option<Result<T>> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl<T> Drop for Prefetcher<T> {
    fn drop(&mut self) {
        // closing the receiver unblocks a producer waiting on a full queue
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
