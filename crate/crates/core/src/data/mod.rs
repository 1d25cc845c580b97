//! Dataset layout, index loading and clip sampling.
//!
//! On-disk layout mirrors the case/Frame/GT convention of the colonoscopy
//! video benchmarks:
//!
//! ```text
//! root/
//!   splits.json                   difficulty/visibility/role per case
//!   train/<case_id>/Frame/00000.png
//!   train/<case_id>/GT/00000.png
//!   train/<case_id>/annotations.jsonl   {"frame":0,"class_id":3,"box":[..]}
//!   test/...
//! ```
//!
//! Frames are 8-bit RGB PNGs, masks 8-bit single-channel PNGs holding 0/255.

pub mod synth;

use crate::error::{Error, Result};
use indexmap::IndexMap;
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

/// Polyp categories; synthetic cases map class ids onto blob geometry
/// families so the label is recoverable from appearance.
pub const NUM_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "low_grade_adenoma",
    "high_grade_adenoma",
    "hyperplastic_polyp",
    "traditional_serrated_adenoma",
    "sessile_serrated_lesion",
    "invasive_carcinoma",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Seen,
    Unseen,
}

impl Visibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Visibility::Seen => "seen",
            Visibility::Unseen => "unseen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// One line of a per-case `annotations.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame: usize,
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// Per-case entry of the root `splits.json` manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseManifest {
    pub id: String,
    pub role: Role,
    pub difficulty: Difficulty,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Visibility>,
    pub class_id: usize,
    /// Source video identity; a seen test case shares it with a train case.
    pub lineage: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitsManifest {
    pub height: usize,
    pub width: usize,
    pub cases: Vec<CaseManifest>,
}

/// Fully resolved frame record.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: usize,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub class_id: usize,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct CaseEntry {
    pub case_id: String,
    pub role: Role,
    pub difficulty: Difficulty,
    pub visibility: Option<Visibility>,
    pub lineage: String,
    pub frames: Vec<FrameRecord>,
}

/// Validated view of a dataset root.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub cases: Vec<CaseEntry>,
}

impl DatasetIndex {
    pub fn case(&self, case_id: &str) -> Result<&CaseEntry> {
        self.cases
            .iter()
            .find(|c| c.case_id == case_id)
            .ok_or_else(|| Error::Data(format!("unknown case `{case_id}`")))
    }

    pub fn cases_with_role(&self, role: Role) -> impl Iterator<Item = &CaseEntry> {
        self.cases.iter().filter(move |c| c.role == role)
    }

    /// (difficulty, visibility) tags of the test cases, in manifest order.
    pub fn test_tags(&self) -> IndexMap<String, (Difficulty, Visibility)> {
        self.cases
            .iter()
            .filter_map(|c| {
                c.visibility
                    .map(|v| (c.case_id.clone(), (c.difficulty, v)))
            })
            .collect()
    }

    pub fn total_frames(&self, role: Role) -> usize {
        self.cases_with_role(role).map(|c| c.frames.len()).sum()
    }
}

/// One training/inference sample: a target frame, its `delta` predecessors,
/// and the target's ground truth.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub case_id: String,
    pub frame_index: usize,
    /// Target frame, `3 x H x W`, values in [-1, 1].
    pub target: ArrayD<f64>,
    /// The `delta` preceding frames, oldest first, edge-replicated at the
    /// start of a video.
    pub prev: Vec<ArrayD<f64>>,
    pub mask: Array2<f64>,
    pub class_id: usize,
    pub bbox: [f64; 4],
}

/// Reads and validates a dataset root.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    let manifest_path = root.join("splits.json");
    let manifest: SplitsManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", manifest_path.display())))?,
    )
    .map_err(|e| Error::Data(format!("malformed {}: {e}", manifest_path.display())))?;

    let mut cases = Vec::with_capacity(manifest.cases.len());
    for case in &manifest.cases {
        if case.role == Role::Test && case.visibility.is_none() {
            return Err(Error::Data(format!(
                "test case `{}` lacks a visibility tag",
                case.id
            )));
        }
        if case.class_id >= NUM_CLASSES {
            return Err(Error::Data(format!(
                "case `{}` has class {} out of range",
                case.id, case.class_id
            )));
        }
        let dir = root.join(case.role.as_str()).join(&case.id);
        let ann_path = dir.join("annotations.jsonl");
        let ann_file = fs::File::open(&ann_path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", ann_path.display())))?;
        let mut annotations: IndexMap<usize, FrameAnnotation> = IndexMap::new();
        for (lineno, line) in std::io::BufReader::new(ann_file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ann: FrameAnnotation = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!(
                    "{}:{}: malformed annotation: {e}",
                    ann_path.display(),
                    lineno + 1
                ))
            })?;
            annotations.insert(ann.frame, ann);
        }

        let frame_dir = dir.join("Frame");
        let mut indices: Vec<usize> = Vec::new();
        for entry in fs::read_dir(&frame_dir)
            .map_err(|e| Error::Data(format!("cannot list {}: {e}", frame_dir.display())))?
        {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".png") {
                let idx = stem.parse::<usize>().map_err(|_| {
                    Error::Data(format!("unexpected frame file `{name}` in {}", frame_dir.display()))
                })?;
                indices.push(idx);
            }
        }
        indices.sort_unstable();

        let mut frames = Vec::with_capacity(indices.len());
        for idx in indices {
            let image = frame_dir.join(format!("{idx:05}.png"));
            let mask = dir.join("GT").join(format!("{idx:05}.png"));
            if !mask.exists() {
                return Err(Error::Data(format!(
                    "frame {} of case `{}` has no mask at {}",
                    idx,
                    case.id,
                    mask.display()
                )));
            }
            let ann = annotations.get(&idx).ok_or_else(|| {
                Error::Data(format!(
                    "frame {} of case `{}` has no annotation line",
                    idx, case.id
                ))
            })?;
            frames.push(FrameRecord {
                index: idx,
                image,
                mask,
                class_id: ann.class_id,
                bbox: ann.bbox,
            });
        }
        if frames.is_empty() {
            return Err(Error::Data(format!("case `{}` has no frames", case.id)));
        }
        cases.push(CaseEntry {
            case_id: case.id.clone(),
            role: case.role,
            difficulty: case.difficulty,
            visibility: case.visibility,
            lineage: case.lineage.clone(),
            frames,
        });
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        height: manifest.height,
        width: manifest.width,
        cases,
    })
}

/// Loads an RGB frame as `3 x H x W` in [-1, 1].
pub fn load_frame(path: &Path) -> Result<ArrayD<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[3, h as usize, w as usize]));
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = pixel.0[c] as f64 / 255.0 * 2.0 - 1.0;
        }
    }
    Ok(out)
}

/// Loads a binary mask; any intensity at or above 128 counts as foreground.
pub fn load_mask(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn(
        (h as usize, w as usize),
        |(y, x)| f64::from(img.get_pixel(x as u32, y as u32).0[0] >= 128),
    ))
}

/// Tight bounding box of a mask, normalized to the unit square as
/// `(x_center, y_center, width, height)`; `None` for an empty mask.
pub fn tight_bbox(mask: &Array2<f64>) -> Option<[f64; 4]> {
    let (h, w) = mask.dim();
    let mut y0 = h;
    let mut y1 = 0;
    let mut x0 = w;
    let mut x1 = 0;
    let mut any = false;
    for ((y, x), &v) in mask.indexed_iter() {
        if v == 1.0 {
            any = true;
            y0 = y0.min(y);
            y1 = y1.max(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
    }
    if !any {
        return None;
    }
    let (wf, hf) = (w as f64, h as f64);
    Some([
        (x0 + x1 + 1) as f64 / 2.0 / wf,
        (y0 + y1 + 1) as f64 / 2.0 / hf,
        (x1 - x0 + 1) as f64 / wf,
        (y1 - y0 + 1) as f64 / hf,
    ])
}

/// Assembles the clip ending at frame `i` of a case: `delta` preceding frames
/// plus the target. Indices before the video start replicate frame 0.
pub fn sample_clip(
    index: &DatasetIndex,
    case_id: &str,
    i: usize,
    delta: usize,
) -> Result<VideoClip> {
    let case = index.case(case_id)?;
    let pos = case
        .frames
        .iter()
        .position(|f| f.index == i)
        .ok_or_else(|| Error::Data(format!("case `{case_id}` has no frame {i}")))?;
    let record = &case.frames[pos];
    let target = load_frame(&record.image)?;
    let mask = load_mask(&record.mask)?;
    let mut prev = Vec::with_capacity(delta);
    for k in (1..=delta).rev() {
        let p = pos.saturating_sub(k);
        prev.push(load_frame(&case.frames[p].image)?);
    }
    Ok(VideoClip {
        case_id: case_id.to_string(),
        frame_index: i,
        target,
        prev,
        mask,
        class_id: record.class_id,
        bbox: record.bbox,
    })
}

/// Resamples a clip to the configured patch size: frames bilinearly, the mask
/// by thresholded bilinear coverage (keeping it binary), with the box
/// recomputed from the resized mask.
pub fn resize_clip(clip: &VideoClip, h: usize, w: usize) -> VideoClip {
    let resize_frame = |f: &ArrayD<f64>| -> ArrayD<f64> {
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[3, h, w]));
        for c in 0..3 {
            let plane = f
                .index_axis(ndarray::Axis(0), c)
                .into_dimensionality::<ndarray::Ix2>()
                .expect("frame planes are 2-D")
                .to_owned();
            let scaled = crate::codec::bilinear_resize(&plane, h, w);
            out.index_axis_mut(ndarray::Axis(0), c).assign(&scaled);
        }
        out
    };
    let mask =
        crate::codec::bilinear_resize(&clip.mask, h, w).mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let bbox = tight_bbox(&mask).unwrap_or(clip.bbox);
    VideoClip {
        case_id: clip.case_id.clone(),
        frame_index: clip.frame_index,
        target: resize_frame(&clip.target),
        prev: clip.prev.iter().map(resize_frame).collect(),
        mask,
        class_id: clip.class_id,
        bbox,
    }
}

/// Writes an RGB frame from `3 x H x W` values in [-1, 1].
pub fn save_frame(path: &Path, frame: &ArrayD<f64>) -> Result<()> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (x, y, pixel) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = (frame[[c, y as usize, x as usize]] + 1.0) / 2.0;
            pixel.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes a binary mask as 0/255 grayscale.
pub fn save_mask(path: &Path, mask: &Array2<f64>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for (x, y, pixel) in img.enumerate_pixels_mut() {
        pixel.0[0] = if mask[(y as usize, x as usize)] == 1.0 { 255 } else { 0 };
    }
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}
