//! Binary PPM (P6, maxval 255) ingestion and folder datasets.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::episodes::dataset::{Dataset, Modality};
use crate::error::{Error, Result};

/// Parses one P6 image into a `[3, H, W]` tensor scaled to `[0, 1]`.
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut p = Parser { bytes, offset: 0 };
    let magic = p.token("magic")?;
    if magic != b"P6" {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("expected P6 magic, got {:?}", String::from_utf8_lossy(&magic)),
        });
    }
    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: p.offset,
            msg: format!("unsupported maxval {maxval}, only 255"),
        });
    }
    // exactly one whitespace byte separates the header from pixel data
    p.single_whitespace()?;
    let need = width * height * 3;
    if p.bytes.len() - p.offset < need {
        return Err(Error::Parse {
            offset: p.bytes.len(),
            msg: format!(
                "truncated pixel data: need {need} bytes, have {}",
                p.bytes.len() - p.offset
            ),
        });
    }
    let pixels = &p.bytes[p.offset..p.offset + need];
    // interleaved RGB rows -> planar [3, H, W]
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = pixels[i * 3 + c] as f64 / 255.0;
        }
    }
    Tensor::from_vec(vec![3, height, width], data)
}

struct Parser<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Parser<'a> {
    /// Skips whitespace and `#` comments, then reads one token.
    fn token(&mut self, what: &str) -> Result<Vec<u8>> {
        loop {
            while self.offset < self.bytes.len() && self.bytes[self.offset].is_ascii_whitespace() {
                self.offset += 1;
            }
            if self.offset < self.bytes.len() && self.bytes[self.offset] == b'#' {
                while self.offset < self.bytes.len() && self.bytes[self.offset] != b'\n' {
                    self.offset += 1;
                }
                continue;
            }
            break;
        }
        let start = self.offset;
        while self.offset < self.bytes.len() && !self.bytes[self.offset].is_ascii_whitespace() {
            self.offset += 1;
        }
        if start == self.offset {
            return Err(Error::Parse {
                offset: start,
                msg: format!("missing {what}"),
            });
        }
        Ok(self.bytes[start..self.offset].to_vec())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start_hint = self.offset;
        let tok = self.token(what)?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                offset: start_hint,
                msg: format!("{what} is not a number: {:?}", String::from_utf8_lossy(&tok)),
            })
    }

    fn single_whitespace(&mut self) -> Result<()> {
        if self.offset >= self.bytes.len() || !self.bytes[self.offset].is_ascii_whitespace() {
            return Err(Error::Parse {
                offset: self.offset,
                msg: "expected whitespace before pixel data".into(),
            });
        }
        self.offset += 1;
        Ok(())
    }
}

/// Loads a folder of class subdirectories of P6 images. Class index follows
/// lexicographic directory order; file order within a class is lexicographic
/// too, so loading is deterministic. All images must share one extent.
pub fn load_image_folder(root: &Path) -> Result<Dataset> {
    let mut class_dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Capacity(format!("no class directories under {}", root.display())));
    }

    let mut classes = Vec::new();
    let mut paths = Vec::new();
    let mut extents: Option<(usize, usize)> = None;
    for dir in &class_dirs {
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Capacity(format!("class directory {} is empty", dir.display())));
        }
        let mut samples = Vec::new();
        let mut sample_paths = Vec::new();
        for file in files {
            let bytes = fs::read(&file)?;
            let img = parse_ppm(&bytes).map_err(|e| match e {
                Error::Parse { offset, msg } => Error::Parse {
                    offset,
                    msg: format!("{}: {msg}", file.display()),
                },
                other => other,
            })?;
            let (h, w) = (img.shape()[1], img.shape()[2]);
            match extents {
                None => extents = Some((h, w)),
                Some((eh, ew)) if (eh, ew) != (h, w) => {
                    return Err(Error::invalid_shape("load_image_folder", &[3, h, w], &[3, eh, ew]));
                }
                _ => {}
            }
            samples.push(img.data().to_vec());
            sample_paths.push(file.display().to_string());
        }
        classes.push(samples);
        paths.push(sample_paths);
    }

    let (h, w) = extents.unwrap();
    Ok(Dataset {
        modality: Modality::Image { channels: 3, height: h, width: w },
        classes,
        synthetic: None,
        paths: Some(paths),
    })
}

/// Serializes a `[3, H, W]` tensor back to P6 bytes (used by tests and
/// fixture tooling).
pub fn write_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [3, h, w] => (*h, *w),
        other => return Err(Error::invalid_shape("write_ppm", other, &[3, 0, 0])),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = img.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push((data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}
