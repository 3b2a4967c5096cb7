use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};

use crate::descriptor::{GrayImage, Region};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PositiveEntry {
    pub image: PathBuf,
    /// Crop rectangle in image pixels.
    pub crop: Region,
    /// 1-based line in the manifest.
    pub line: usize,
}

/// A dataset description: positive crops, person-free images and the
/// detection window size.
///
/// ```text
/// WINDOW 18 36
/// MARGIN 2
/// P pos/0001.pgm 0 0 18 36
/// N neg/street.pgm
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
    pub window_w: usize,
    pub window_h: usize,
    /// Border around the object inside each crop. Informational only.
    pub margin: usize,
    pub positives: Vec<PositiveEntry>,
    pub negatives: Vec<PathBuf>,
}

fn parse_usize(tok: &str, what: &str, err: &dyn Fn(String) -> Error) -> Result<usize> {
    tok.parse().map_err(|_| err(format!("bad {what} '{tok}'")))
}

/// Reads and validates a manifest: every image must exist and every crop
/// must lie inside its image.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_owned()));
    }
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut window = None;
    let mut margin = 0;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match (toks[0], toks.len()) {
            ("WINDOW", 3) => {
                let w = parse_usize(toks[1], "window width", &err)?;
                let h = parse_usize(toks[2], "window height", &err)?;
                window = Some((w, h));
            }
            ("MARGIN", 2) => margin = parse_usize(toks[1], "margin", &err)?,
            ("P", 6) => {
                let n: Vec<usize> = toks[2..]
                    .iter()
                    .map(|t| parse_usize(t, "crop coordinate", &err))
                    .collect::<Result<_>>()?;
                let crop = Region::new(n[0], n[1], n[2], n[3]).map_err(|e| err(e.to_string()))?;
                positives.push(PositiveEntry {
                    image: root.join(toks[1]),
                    crop,
                    line: line_no,
                });
            }
            ("N", 2) => negatives.push(root.join(toks[1])),
            ("WINDOW" | "MARGIN" | "P" | "N", _) => {
                return Err(err(format!("wrong number of fields for {}", toks[0])));
            }
            (other, _) => return Err(err(format!("unknown entry type '{other}'"))),
        }
    }

    let parse_err = |message: &str| Error::Parse {
        path: path.to_owned(),
        line: last_line,
        message: message.to_owned(),
    };
    let (window_w, window_h) = window.ok_or_else(|| parse_err("missing WINDOW header"))?;
    if positives.is_empty() {
        return Err(parse_err("no positive samples"));
    }
    for (n, p) in positives.iter().enumerate() {
        if !p.image.is_file() {
            return Err(Error::MissingFile(p.image.clone()));
        }
        let (w, h) = image::image_dimensions(&p.image)?;
        if p.crop.check_within(w as usize, h as usize).is_err() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: p.line,
                message: format!(
                    "positive entry {} ({}): crop {} exceeds image bounds {w}x{h}",
                    n + 1,
                    p.image.display(),
                    p.crop
                ),
            });
        }
    }
    if let Some(missing) = negatives.iter().find(|n| !n.is_file()) {
        return Err(Error::MissingFile(missing.clone()));
    }
    Ok(DatasetManifest {
        root,
        window_w,
        window_h,
        margin,
        positives,
        negatives,
    })
}

impl DatasetManifest {
    /// Positive crops, resampled to the window size where they differ.
    pub fn load_positive_windows(&self) -> Result<Vec<GrayImage>> {
        self.positives
            .iter()
            .map(|p| {
                let img = image::open(&p.image)?.into_luma8();
                let c = p.crop;
                let crop =
                    imageops::crop_imm(&img, c.x0 as u32, c.y0 as u32, c.w as u32, c.h as u32)
                        .to_image();
                let (w, h) = (self.window_w as u32, self.window_h as u32);
                if crop.dimensions() == (w, h) {
                    GrayImage::from_luma8(&crop)
                } else {
                    GrayImage::from_luma8(&imageops::resize(&crop, w, h, FilterType::Triangle))
                }
            })
            .collect()
    }

    pub fn load_negative_images(&self) -> Result<Vec<GrayImage>> {
        self.negatives
            .iter()
            .map(|p| GrayImage::load_pgm(p))
            .collect()
    }
}
