//! Hyperparameter record, task presets and the key=value config format.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Alignment layer variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Spatial resampling by a 2-channel offset field.
    Re,
    /// 3x3 deformable convolution driven by an 18-channel offset field.
    De,
}

/// Component switches used for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    /// Full model.
    #[default]
    None,
    /// No translator: no alignment and no translation branch; the filter
    /// takes the unaligned guide feature as reference.
    NoTranslator,
    /// No filter: source and aligned guide features are fused by a 1x1 conv.
    NoFilter,
    /// Neither component: source and guide features fused by a 1x1 conv.
    NoBoth,
    /// Translation branch kept, but the alignment layer is an identity.
    NoAlignment,
}

impl Ablation {
    pub fn has_translator(self) -> bool {
        !matches!(self, Ablation::NoTranslator | Ablation::NoBoth)
    }

    pub fn has_filter(self) -> bool {
        !matches!(self, Ablation::NoFilter | Ablation::NoBoth)
    }

    pub fn has_alignment(self) -> bool {
        matches!(self, Ablation::None | Ablation::NoFilter)
    }

    /// The four settings of the translator/filter ablation table.
    pub const TABLE: [Ablation; 4] = [Ablation::NoBoth, Ablation::NoFilter, Ablation::NoTranslator, Ablation::None];
}

/// Source modality, used to validate inputs against a preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Depth,
    Nir,
    Gray,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($variant),)+
                    other => Err(Error::Parse { what: $what.into(), detail: format!("unknown value `{other}`") }),
                }
            }
        }
    };
}

text_enum!(Variant, "variant", { Variant::Re => "re", Variant::De => "de" });
text_enum!(Ablation, "ablation", {
    Ablation::None => "none",
    Ablation::NoTranslator => "no-translator",
    Ablation::NoFilter => "no-filter",
    Ablation::NoBoth => "no-both",
    Ablation::NoAlignment => "no-alignment",
});
text_enum!(Modality, "modality", { Modality::Depth => "depth", Modality::Nir => "nir", Modality::Gray => "gray" });

/// Full hyperparameter record of one optimization run.
#[derive(Clone, Debug, PartialEq)]
pub struct RobSelfConfig {
    pub variant: Variant,
    /// Depth of the deformation estimator; the encoder downsamples by `2^level_i`.
    pub level_i: usize,
    /// Threshold scale; `None` sends every pixel to the large kernel.
    pub eta: Option<f64>,
    pub kernel_m: usize,
    pub kernel_n: usize,
    pub sr_factor: usize,
    pub channels: usize,
    /// Source channels.
    pub phi: usize,
    /// Guide channels.
    pub psi: usize,
    pub separate_heads: bool,
    pub lambda: f64,
    pub iterations: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    pub modality: Modality,
    pub ablation: Ablation,
}

/// Preset names accepted by [`RobSelfConfig::preset`].
pub const PRESETS: [&str; 6] = ["syn-depth-x4", "syn-depth-x8", "real-depth-x2", "real-depth-x4", "real-nir-x2", "real-nir-x4"];

impl Default for RobSelfConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Re,
            level_i: 4,
            eta: Some(0.7),
            kernel_m: 7,
            kernel_n: 5,
            sr_factor: 4,
            channels: 32,
            phi: 1,
            psi: 3,
            separate_heads: false,
            lambda: 1.0,
            iterations: 1000,
            lr_init: 0.002,
            lr_decay: 0.9998,
            lr_decay_every: 5,
            seed: 0,
            modality: Modality::Depth,
            ablation: Ablation::None,
        }
    }
}

impl RobSelfConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let cfg = match name {
            "syn-depth-x4" => Self { level_i: 4, kernel_m: 7, kernel_n: 5, sr_factor: 4, ..base },
            "syn-depth-x8" => Self { level_i: 5, kernel_m: 13, kernel_n: 7, sr_factor: 8, ..base },
            "real-depth-x2" => Self { level_i: 3, kernel_m: 7, kernel_n: 5, sr_factor: 2, ..base },
            "real-depth-x4" => Self { level_i: 4, kernel_m: 7, kernel_n: 5, sr_factor: 4, ..base },
            "real-nir-x2" => Self {
                level_i: 4,
                kernel_m: 3,
                kernel_n: 3,
                eta: None,
                sr_factor: 2,
                separate_heads: true,
                modality: Modality::Nir,
                ..base
            },
            "real-nir-x4" => Self {
                level_i: 5,
                kernel_m: 3,
                kernel_n: 3,
                eta: None,
                sr_factor: 4,
                separate_heads: true,
                modality: Modality::Nir,
                ..base
            },
            other => {
                return Err(Error::Parse {
                    what: "preset".into(),
                    detail: format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")),
                })
            }
        };
        Ok(cfg)
    }

    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        if self.kernel_m.is_multiple_of(2) || self.kernel_n.is_multiple_of(2) {
            return fail(format!("kernel sizes must be odd, got m={} n={}", self.kernel_m, self.kernel_n));
        }
        if self.kernel_n < 1 || self.kernel_m < self.kernel_n {
            return fail(format!("need kernel_m >= kernel_n >= 1, got m={} n={}", self.kernel_m, self.kernel_n));
        }
        if self.level_i < 1 {
            return fail("level_i must be at least 1".into());
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) {
                return fail(format!("eta must be positive, got {eta}"));
            }
        }
        if ![2, 4, 8].contains(&self.sr_factor) {
            return fail(format!("sr_factor must be 2, 4 or 8, got {}", self.sr_factor));
        }
        if self.channels == 0 || self.phi == 0 || self.psi == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.lr_decay_every == 0 {
            return fail("lr_decay_every must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(self.lr_init > 0.0) || !(self.lr_decay > 0.0) {
            return fail("lambda must be non-negative; lr_init and lr_decay positive".into());
        }
        Ok(())
    }

    /// Offset-field dimension N of the configured alignment layer.
    pub fn field_dim(&self) -> usize {
        match self.variant {
            Variant::Re => 2,
            Variant::De => 2 * crate::diffengine::DEFORM_TAPS,
        }
    }

    /// Spatial multiple required of the guide extents.
    pub fn required_multiple(&self) -> usize {
        if self.ablation.has_alignment() {
            1 << self.level_i
        } else {
            1
        }
    }

    /// Serializes to `key = value` lines readable by [`RobSelfConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let eta = self.eta.map_or_else(|| "none".to_string(), |e| e.to_string());
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "level_i = {}", self.level_i);
        let _ = writeln!(s, "eta = {eta}");
        let _ = writeln!(s, "kernel_m = {}", self.kernel_m);
        let _ = writeln!(s, "kernel_n = {}", self.kernel_n);
        let _ = writeln!(s, "sr_factor = {}", self.sr_factor);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "phi = {}", self.phi);
        let _ = writeln!(s, "psi = {}", self.psi);
        let _ = writeln!(s, "separate_heads = {}", self.separate_heads);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "lr_init = {}", self.lr_init);
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        let _ = writeln!(s, "lr_decay_every = {}", self.lr_decay_every);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "modality = {}", self.modality);
        let _ = writeln!(s, "ablation = {}", self.ablation);
        s
    }

    /// Parses `key = value` lines with `#` comments. A `preset` key selects
    /// the starting point; keys with a `run.` prefix are run metadata and
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, name)) => Self::preset(name)?,
            None => Self::default(),
        };
        for (key, value) in &pairs {
            if key == "preset" || key.starts_with("run.") {
                continue;
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<N: FromStr>(key: &str, v: &str) -> Result<N> {
            v.trim().parse().map_err(|_| Error::Parse { what: key.into(), detail: format!("invalid value `{v}`") })
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "level_i" => self.level_i = num(key, value)?,
            "eta" => {
                self.eta = if value.trim().eq_ignore_ascii_case("none") { None } else { Some(num(key, value)?) }
            }
            "kernel_m" => self.kernel_m = num(key, value)?,
            "kernel_n" => self.kernel_n = num(key, value)?,
            "sr_factor" => self.sr_factor = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "phi" => self.phi = num(key, value)?,
            "psi" => self.psi = num(key, value)?,
            "separate_heads" => self.separate_heads = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "lr_init" => self.lr_init = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "lr_decay_every" => self.lr_decay_every = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "modality" => self.modality = value.parse()?,
            "ablation" => self.ablation = value.parse()?,
            other => return Err(Error::Parse { what: "config".into(), detail: format!("unknown key `{other}`") }),
        }
        Ok(())
    }
}

/// Splits `key = value` lines, dropping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            what: "key=value text".into(),
            detail: format!("line {}: missing `=`", lineno + 1),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
