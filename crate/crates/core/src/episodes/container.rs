//! Versioned binary dataset container, little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "FSDS"
//! version      u8       1
//! mode         u8       0 = feature, 1 = image
//! layout       feature: d u32 | image: height u32, width u32, channels u32
//! classes      u32
//! per class    split u8 (0 train, 1 val, 2 test), has_center u8,
//!              [center: d f64 when has_center = 1]
//! instances    u64
//! per instance class u32, payload (feature: d f64 | image: h*w*c u8, HWC)
//! ```
//!
//! Instance records are grouped by class in ascending class order.

use std::io::{Read, Write};
use std::path::Path;

use super::{ClassData, Dataset, Layout, Payload, Split};
use crate::augment::RasterImage;
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"FSDS";

pub fn write_dataset(ds: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[DATASET_FORMAT_VERSION])?;
    let dim = match ds.layout {
        Layout::Feature { dim } => {
            w.write_all(&[0])?;
            w.write_all(&(dim as u32).to_le_bytes())?;
            dim
        }
        Layout::Image { height, width, channels } => {
            w.write_all(&[1])?;
            for v in [height, width, channels] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
            0
        }
    };
    w.write_all(&(ds.classes.len() as u32).to_le_bytes())?;
    for class in &ds.classes {
        w.write_all(&[class.split.code(), u8::from(class.center.is_some())])?;
        if let Some(center) = &class.center {
            debug_assert_eq!(center.len(), dim);
            for v in center {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    let total: usize = ds.classes.iter().map(|c| c.instances.len()).sum();
    w.write_all(&(total as u64).to_le_bytes())?;
    for (id, class) in ds.classes.iter().enumerate() {
        for inst in &class.instances {
            w.write_all(&(id as u32).to_le_bytes())?;
            match inst {
                Payload::Feature(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Payload::Image(img) => w.write_all(img.pixels())?,
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> std::io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> std::io::Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> std::io::Result<usize> {
        Ok(u64::from_le_bytes(self.bytes()?) as usize)
    }
    fn f64s(&mut self, n: usize) -> std::io::Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
}

/// Reads a container; `origin` names the source in error messages.
pub fn read_dataset(r: impl Read, origin: &Path) -> Result<Dataset> {
    let bad = |detail: String| Error::format(origin, detail);
    let io = |e: std::io::Error| Error::format(origin, format!("truncated or unreadable: {e}"));
    let mut r = Reader { inner: r };
    if &r.bytes::<4>().map_err(io)? != MAGIC {
        return Err(bad("not a dataset container (bad magic)".into()));
    }
    let version = r.u8().map_err(io)?;
    if version != DATASET_FORMAT_VERSION {
        return Err(bad(format!("unsupported dataset version {version}")));
    }
    let layout = match r.u8().map_err(io)? {
        0 => Layout::Feature { dim: r.u32().map_err(io)? },
        1 => Layout::Image {
            height: r.u32().map_err(io)?,
            width: r.u32().map_err(io)?,
            channels: r.u32().map_err(io)?,
        },
        m => return Err(bad(format!("unknown mode byte {m}"))),
    };
    let dim = match layout {
        Layout::Feature { dim } => dim,
        _ => 0,
    };
    let n_classes = r.u32().map_err(io)?;
    let mut classes = Vec::with_capacity(n_classes);
    for i in 0..n_classes {
        let split = Split::from_code(r.u8().map_err(io)?).ok_or_else(|| bad(format!("class {i}: bad split code")))?;
        let center = match r.u8().map_err(io)? {
            0 => None,
            1 => Some(r.f64s(dim).map_err(io)?),
            f => return Err(bad(format!("class {i}: bad centre flag {f}"))),
        };
        classes.push(ClassData { split, center, instances: Vec::new() });
    }
    let total = r.u64().map_err(io)?;
    for _ in 0..total {
        let class = r.u32().map_err(io)?;
        let payload = match layout {
            Layout::Feature { dim } => {
                let v = r.f64s(dim).map_err(io)?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(bad("non-finite feature value".into()));
                }
                Payload::Feature(v)
            }
            Layout::Image { height, width, channels } => {
                let mut px = vec![0u8; height * width * channels];
                r.inner.read_exact(&mut px).map_err(io)?;
                Payload::Image(RasterImage::new(height, width, channels, px).map_err(|e| bad(e.to_string()))?)
            }
        };
        classes
            .get_mut(class)
            .ok_or_else(|| bad(format!("instance refers to class {class} of {n_classes}")))?
            .instances
            .push(payload);
    }
    Dataset::new(layout, classes).map_err(|e| bad(e.to_string()))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(ds, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), path)
}
