//! Ordered transform chains and their canonical string form.
//!
//! Canonical form: specs joined by `|`, each `kind:key=value[,key=value…]`
//! with keys in alphabetical order and floats in shortest round-trip decimal
//! form, e.g. `blur:sigma=2|jpeg:q=50` or `random_crop:h=224,seed=7,w=224`.
//! The empty chain is written `identity`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{center_crop, gaussian_blur, jpeg_recompress, random_crop, resize, Image, ImagingError};

pub const IDENTITY_CHAIN_ID: &str = "identity";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformSpec {
    Blur { sigma: f64 },
    Jpeg { quality: u8 },
    CenterCrop { width: u32, height: u32 },
    RandomCrop { width: u32, height: u32, seed: u64 },
    Resize { width: u32, height: u32 },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid transform `{input}`: {reason}")]
pub struct ChainParseError {
    pub input: String,
    pub reason: String,
}

impl TransformSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TransformSpec::Blur { .. } => "blur",
            TransformSpec::Jpeg { .. } => "jpeg",
            TransformSpec::CenterCrop { .. } => "center_crop",
            TransformSpec::RandomCrop { .. } => "random_crop",
            TransformSpec::Resize { .. } => "resize",
        }
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        let bad = |msg: String| Err(ImagingError::InvalidParameter(msg));
        match *self {
            TransformSpec::Blur { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                bad(format!("blur sigma {sigma} must be finite and >= 0"))
            }
            TransformSpec::Jpeg { quality } if !(1..=100).contains(&quality) => {
                bad(format!("jpeg quality {quality} outside 1..=100"))
            }
            TransformSpec::CenterCrop { width, height }
            | TransformSpec::RandomCrop { width, height, .. }
            | TransformSpec::Resize { width, height }
                if width == 0 || height == 0 =>
            {
                bad(format!("{} size {width}x{height} must be positive", self.kind()))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image, ImagingError> {
        match *self {
            TransformSpec::Blur { sigma } => {
                self.validate()?;
                Ok(gaussian_blur(img, sigma))
            }
            TransformSpec::Jpeg { quality } => jpeg_recompress(img, quality),
            TransformSpec::CenterCrop { width, height } => center_crop(img, width, height),
            TransformSpec::RandomCrop { width, height, seed } => random_crop(img, width, height, seed),
            TransformSpec::Resize { width, height } => resize(img, width, height),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TransformSpec::Blur { sigma } => write!(f, "blur:sigma={sigma}"),
            TransformSpec::Jpeg { quality } => write!(f, "jpeg:q={quality}"),
            TransformSpec::CenterCrop { width, height } => write!(f, "center_crop:h={height},w={width}"),
            TransformSpec::RandomCrop { width, height, seed } => {
                write!(f, "random_crop:h={height},seed={seed},w={width}")
            }
            TransformSpec::Resize { width, height } => write!(f, "resize:h={height},w={width}"),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = ChainParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| ChainParseError {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = BTreeMap::new();
        for pair in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| err("expected key=value"))?;
            if params.insert(k.trim(), v.trim()).is_some() {
                return Err(err("duplicate key"));
            }
        }
        let mut take = |key: &str| params.remove(key).ok_or_else(|| err(&format!("missing `{key}`")));
        let int = |v: &str| v.parse::<u32>().map_err(|_| err("expected an unsigned integer"));

        let spec = match kind.trim() {
            "blur" => TransformSpec::Blur {
                sigma: take("sigma")?.parse().map_err(|_| err("expected a number"))?,
            },
            "jpeg" => TransformSpec::Jpeg {
                quality: take("q")?.parse().map_err(|_| err("expected quality 1..=100"))?,
            },
            "center_crop" => TransformSpec::CenterCrop {
                width: int(take("w")?)?,
                height: int(take("h")?)?,
            },
            "random_crop" => TransformSpec::RandomCrop {
                width: int(take("w")?)?,
                height: int(take("h")?)?,
                seed: take("seed")?.parse().map_err(|_| err("expected a u64 seed"))?,
            },
            "resize" => TransformSpec::Resize {
                width: int(take("w")?)?,
                height: int(take("h")?)?,
            },
            _ => return Err(err("unknown transform kind")),
        };
        if let Some(extra) = params.keys().next() {
            return Err(err(&format!("unknown key `{extra}`")));
        }
        spec.validate().map_err(|e| err(&e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformChain {
    specs: Vec<TransformSpec>,
}

impl TransformChain {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(specs: Vec<TransformSpec>) -> Result<Self, ImagingError> {
        for spec in &specs {
            spec.validate()?;
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[TransformSpec] {
        &self.specs
    }

    pub fn is_identity(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn then(mut self, spec: TransformSpec) -> Result<Self, ImagingError> {
        spec.validate()?;
        self.specs.push(spec);
        Ok(self)
    }

    /// Canonical id; see the module docs.
    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TransformChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.specs.is_empty() {
            return f.write_str(IDENTITY_CHAIN_ID);
        }
        for (i, spec) in self.specs.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{spec}")?;
        }
        Ok(())
    }
}

impl FromStr for TransformChain {
    type Err = ChainParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == IDENTITY_CHAIN_ID {
            return Ok(Self::identity());
        }
        let specs = s.split('|').map(str::parse).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { specs })
    }
}

impl Serialize for TransformChain {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for TransformChain {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Applies the chain left to right. The empty chain returns a copy.
pub fn apply_chain(img: &Image, chain: &TransformChain) -> Result<Image, ImagingError> {
    let mut current = img.clone();
    for spec in chain.specs() {
        current = spec.apply(&current)?;
    }
    Ok(current)
}
