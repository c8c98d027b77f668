//! Image pairs: loading, on-disk layouts, degradation and synthetic misalignment.

mod homography;
mod io;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{contract_err, Error, Result};
use crate::model::{parse_pairs, Modality, RobSelfConfig};
use crate::scalar::Scalar;
use crate::tensor::{avg_pool, center_crop, Tensor};

pub use homography::{random_homography, warp_homography, Homography, MisalignSpec};
pub use io::{load_image, read_float_map, save_image, save_visualization, write_float_map, BitDepth, LoadedImage, FLOAT_MAP_MAGIC};

/// A low-resolution source with its high-resolution guide.
#[derive(Clone, Debug)]
pub struct ImagePair<T: Scalar> {
    pub source_lr: Tensor<T>,
    pub guide_hr: Tensor<T>,
    pub gt_hr: Option<Tensor<T>>,
    /// Physical units per stored unit of the source (e.g. depth centimeters).
    pub value_scale: f64,
    /// Storage precision of the source, which fixes its peak value.
    pub source_depth: BitDepth,
    pub modality: Option<Modality>,
    /// Misalignment applied to the guide, when synthesized.
    pub homography: Option<Homography>,
    pub name: String,
}

impl<T: Scalar> ImagePair<T> {
    /// Pair with the `sr_factor` ratio and finiteness invariants checked.
    pub fn new(
        source_lr: Tensor<T>,
        guide_hr: Tensor<T>,
        gt_hr: Option<Tensor<T>>,
        sr_factor: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let pair = Self {
            source_lr,
            guide_hr,
            gt_hr,
            value_scale: 1.0,
            source_depth: BitDepth::Float,
            modality: None,
            homography: None,
            name: name.into(),
        };
        pair.check(sr_factor)?;
        Ok(pair)
    }

    pub fn check(&self, sr_factor: usize) -> Result<()> {
        let (c, h, w) = self.source_lr.dims3()?;
        let (_, gh, gw) = self.guide_hr.dims3()?;
        if gh != h * sr_factor || gw != w * sr_factor {
            return contract_err(format!(
                "{}: guide {gh}x{gw} is not {sr_factor}x the source {h}x{w}",
                self.name
            ));
        }
        if let Some(gt) = &self.gt_hr {
            if gt.dims3()? != (c, gh, gw) {
                return contract_err(format!("{}: ground truth {:?} does not match the guide grid", self.name, gt.shape()));
            }
        }
        let finite = self.source_lr.all_finite() && self.guide_hr.all_finite() && self.gt_hr.as_ref().is_none_or(|t| t.all_finite());
        if !finite {
            return contract_err(format!("{}: non-finite pixel values", self.name));
        }
        if self.modality == Some(Modality::Depth) && self.source_lr.min() < T::zero() {
            return contract_err(format!("{}: negative depth values", self.name));
        }
        Ok(())
    }

    /// Peak value of the source in its stored units.
    pub fn peak(&self) -> f64 {
        self.source_depth.peak()
    }

    /// Crops centrally so the guide extents are multiples of `multiple`
    /// (which must itself be a multiple of `sr_factor`). Returns `None` when
    /// no crop is needed.
    pub fn crop_to_multiple(&self, multiple: usize, sr_factor: usize) -> Result<Option<Self>> {
        let (_, h, w) = self.source_lr.dims3()?;
        let (_, gh, gw) = self.guide_hr.dims3()?;
        if gh % multiple == 0 && gw % multiple == 0 {
            return Ok(None);
        }
        if !multiple.is_multiple_of(sr_factor) {
            return contract_err(format!("crop multiple {multiple} is not a multiple of the factor {sr_factor}"));
        }
        let lr_multiple = multiple / sr_factor;
        let (nh, nw) = ((h / lr_multiple) * lr_multiple, (w / lr_multiple) * lr_multiple);
        if nh == 0 || nw == 0 {
            return contract_err(format!("{}: too small to crop to a multiple of {multiple}", self.name));
        }
        let (sy, sx) = ((h - nh) / 2, (w - nw) / 2);
        let crop_lr = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let (c, _, _) = t.dims3()?;
            Ok(Tensor::from_fn3(c, nh, nw, |ci, y, x| t.at3(ci, y + sy, x + sx)))
        };
        let crop_hr = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let (c, _, _) = t.dims3()?;
            let (oy, ox) = (sy * sr_factor, sx * sr_factor);
            Ok(Tensor::from_fn3(c, nh * sr_factor, nw * sr_factor, |ci, y, x| t.at3(ci, y + oy, x + ox)))
        };
        Ok(Some(Self {
            source_lr: crop_lr(&self.source_lr)?,
            guide_hr: crop_hr(&self.guide_hr)?,
            gt_hr: self.gt_hr.as_ref().map(crop_hr).transpose()?,
            ..self.clone()
        }))
    }
}

/// Low-resolution generation by block averaging; the same operator as the
/// loss's downsampling.
pub fn degrade<T: Scalar>(hr: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    avg_pool(hr, factor)
}

/// ITU-R BT.601 luma of a 3-channel image, as a 1-channel image.
pub fn luminance<T: Scalar>(rgb: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = rgb.dims3()?;
    if c != 3 {
        return contract_err(format!("luminance needs 3 channels, got {c}"));
    }
    let (kr, kg, kb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
    Ok(Tensor::from_fn3(1, h, w, |_, y, x| kr * rgb.at3(0, y, x) + kg * rgb.at3(1, y, x) + kb * rgb.at3(2, y, x)))
}

/// Misaligns the guide by a random homography and degrades the source.
pub fn make_synthetic_pair<T: Scalar>(
    hr_source: &Tensor<T>,
    hr_guide: &Tensor<T>,
    spec: &MisalignSpec,
    factor: usize,
) -> Result<ImagePair<T>> {
    let (_, h, w) = hr_source.dims3()?;
    let (_, gh, gw) = hr_guide.dims3()?;
    if (h, w) != (gh, gw) {
        return contract_err(format!("source {h}x{w} and guide {gh}x{gw} must share extents"));
    }
    let hmat = random_homography(spec, h, w)?;
    let guide = warp_homography(hr_guide, &hmat)?;
    let lr = degrade(hr_source, factor)?;
    let mut pair = ImagePair::new(lr, guide, Some(hr_source.clone()), factor, format!("synthetic-{}", spec.seed))?;
    pair.homography = Some(hmat);
    Ok(pair)
}

/// On-disk arrangement of a pair.
#[derive(Clone, Debug, PartialEq)]
pub enum PairSource {
    /// Group directory with `source_lr.*`, `guide_x{f}.*`, optional
    /// `gt_x{f}.*` and a `meta.txt` sidecar.
    RealMis(PathBuf),
    /// Explicit file paths.
    Flat { source: PathBuf, guide: PathBuf, gt: Option<PathBuf> },
}

const EXTENSIONS: [&str; 2] = ["png", "tfm"];

/// First existing `<dir>/<stem>.<ext>` over the supported extensions.
pub fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    EXTENSIONS.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.exists())
}

/// Sidecar metadata of a group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupMeta {
    pub value_scale: Option<f64>,
    pub modality: Option<Modality>,
}

impl GroupMeta {
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Self::default();
        for (k, v) in parse_pairs(text)? {
            match k.as_str() {
                "value_scale" => {
                    meta.value_scale = Some(v.parse().map_err(|_| Error::Parse {
                        what: "meta.txt".into(),
                        detail: format!("bad value_scale `{v}`"),
                    })?)
                }
                "modality" => meta.modality = Some(v.parse()?),
                _ => {}
            }
        }
        Ok(meta)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(v) = self.value_scale {
            s.push_str(&format!("value_scale = {v}\n"));
        }
        if let Some(m) = self.modality {
            s.push_str(&format!("modality = {m}\n"));
        }
        s
    }
}

/// Loads a pair and checks it against the configuration's channel counts,
/// modality and scale factor.
pub fn load_pair<T: Scalar>(source: &PairSource, config: &RobSelfConfig) -> Result<ImagePair<T>> {
    let f = config.sr_factor;
    let (src_path, guide_path, gt_path, meta, name) = match source {
        PairSource::RealMis(dir) => {
            let need = |stem: &str| find_image(dir, stem).ok_or_else(|| Error::MissingFile(dir.join(format!("{stem}.png"))));
            let meta_path = dir.join("meta.txt");
            let meta = if meta_path.exists() { GroupMeta::parse(&fs::read_to_string(&meta_path)?)? } else { GroupMeta::default() };
            let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
            (need("source_lr")?, need(&format!("guide_x{f}"))?, find_image(dir, &format!("gt_x{f}")), meta, name)
        }
        PairSource::Flat { source, guide, gt } => {
            let name = source.file_stem().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            (source.clone(), guide.clone(), gt.clone(), GroupMeta::default(), name)
        }
    };
    let src = load_image::<T>(&src_path)?;
    let guide = load_image::<T>(&guide_path)?;
    let gt = gt_path.map(|p| load_image::<T>(&p)).transpose()?;

    if let Some(m) = meta.modality {
        if m != config.modality {
            return contract_err(format!("{name}: pair modality is {m}, configuration expects {}", config.modality));
        }
    }
    let (phi, _, _) = src.tensor.dims3()?;
    let (psi, _, _) = guide.tensor.dims3()?;
    if phi != config.phi || psi != config.psi {
        return contract_err(format!(
            "{name}: source/guide have {phi}/{psi} channels, configuration expects {}/{}",
            config.phi, config.psi
        ));
    }
    let mut pair = ImagePair {
        source_lr: src.tensor,
        guide_hr: guide.tensor,
        gt_hr: gt.map(|g| g.tensor),
        value_scale: meta.value_scale.unwrap_or(1.0),
        source_depth: src.depth,
        modality: meta.modality,
        homography: None,
        name,
    };
    if let PairSource::RealMis(dir) = source {
        let hp = dir.join("homography.txt");
        if hp.exists() {
            pair.homography = Some(Homography::parse(&fs::read_to_string(hp)?)?);
        }
    }
    pair.check(f)?;
    Ok(pair)
}

/// Writes `pair` as a group directory readable by [`load_pair`].
pub fn write_group<T: Scalar>(dir: &Path, pair: &ImagePair<T>, sr_factor: usize, ext: &str, guide_depth: BitDepth) -> Result<()> {
    fs::create_dir_all(dir)?;
    let depth = pair.source_depth;
    save_image(&dir.join(format!("source_lr.{ext}")), &pair.source_lr, depth)?;
    save_image(&dir.join(format!("guide_x{sr_factor}.{ext}")), &pair.guide_hr, guide_depth)?;
    if let Some(gt) = &pair.gt_hr {
        save_image(&dir.join(format!("gt_x{sr_factor}.{ext}")), gt, depth)?;
    }
    let meta = GroupMeta { value_scale: Some(pair.value_scale), modality: pair.modality };
    fs::write(dir.join("meta.txt"), meta.to_text())?;
    if let Some(h) = &pair.homography {
        fs::write(dir.join("homography.txt"), h.to_text())?;
    }
    Ok(())
}

/// Center crop helper re-exported for callers preparing fixtures.
pub fn crop<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    center_crop(t, h, w)
}
