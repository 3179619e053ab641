use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use ssgan_tensor::Tensor;

use super::codec::{Gray, Raster};
use crate::error::{Error, Result};

pub const NDVI_EPS: f32 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Red,
    Nir,
    Ndvi,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Red, Band::Nir, Band::Ndvi];

    /// Name used in dataset file names.
    pub fn file_name(self) -> &'static str {
        match self {
            Band::Red => "red_660nm",
            Band::Nir => "nir_790nm",
            Band::Ndvi => "ndvi",
        }
    }

    pub fn from_file_name(s: &str) -> Option<Band> {
        Band::ALL.into_iter().find(|b| b.file_name() == s)
    }
}

/// Reflectance rasters of one scene, keyed by band.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralImage {
    pub id: String,
    pub height: usize,
    pub width: usize,
    bands: BTreeMap<Band, Raster>,
    normalized: bool,
}

impl MultispectralImage {
    pub fn new(id: impl Into<String>, height: usize, width: usize) -> Self {
        MultispectralImage {
            id: id.into(),
            height,
            width,
            bands: BTreeMap::new(),
            normalized: false,
        }
    }

    pub fn insert(&mut self, band: Band, raster: Raster) -> Result<()> {
        if raster.extents() != (self.height, self.width) {
            return Err(Error::Extent(format!(
                "{}: band {} is {}x{}, image is {}x{}",
                self.id,
                band.file_name(),
                raster.height,
                raster.width,
                self.height,
                self.width
            )));
        }
        self.bands.insert(band, raster);
        Ok(())
    }

    pub fn band(&self, band: Band) -> Option<&Raster> {
        self.bands.get(&band)
    }

    pub fn bands(&self) -> impl Iterator<Item = (Band, &Raster)> {
        self.bands.iter().map(|(b, r)| (*b, r))
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Derives the NDVI band from raw red and NIR if it is missing.
    pub fn ensure_ndvi(&mut self) -> Result<()> {
        if self.bands.contains_key(&Band::Ndvi) {
            return Ok(());
        }
        if self.normalized {
            return Err(Error::Contract(format!("{}: NDVI needs un-normalized reflectance", self.id)));
        }
        let missing = |b: Band| Error::Data(format!("{}: missing band {}", self.id, b.file_name()));
        let red = self.band(Band::Red).ok_or_else(|| missing(Band::Red))?;
        let nir = self.band(Band::Nir).ok_or_else(|| missing(Band::Nir))?;
        let ndvi = compute_ndvi(nir, red)?;
        self.bands.insert(Band::Ndvi, ndvi);
        Ok(())
    }

    /// Maps red and NIR from [0, 1] to [-1, 1]; NDVI is left as is.
    pub fn normalize(&mut self) -> Result<()> {
        if self.normalized {
            return Err(Error::Contract(format!("{}: already normalized", self.id)));
        }
        for (band, r) in self.bands.iter_mut() {
            if *band != Band::Ndvi {
                for v in &mut r.data {
                    *v = 2.0 * *v - 1.0;
                }
            }
        }
        self.normalized = true;
        Ok(())
    }
}

/// `(nir - red) / (nir + red + 1e-8)` per pixel.
pub fn compute_ndvi(nir: &Raster, red: &Raster) -> Result<Raster> {
    if nir.extents() != red.extents() {
        return Err(Error::Extent(format!(
            "nir is {}x{}, red is {}x{}",
            nir.height, nir.width, red.height, red.width
        )));
    }
    let data = nir
        .data
        .iter()
        .zip(&red.data)
        .map(|(&n, &r)| ((n - r) / (n + r + NDVI_EPS)).clamp(-1.0, 1.0))
        .collect();
    Raster::new(nir.height, nir.width, data)
}

/// Per-pixel classes: 0 background, 1 crop, 2 weed, 255 unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn from_gray(id: impl Into<String>, g: Gray) -> Self {
        LabelMask {
            id: id.into(),
            height: g.height,
            width: g.width,
            data: g.data,
        }
    }

    pub fn to_gray(&self) -> Gray {
        Gray {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

/// Input channel sets compared in the sweep, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelSelection {
    #[serde(rename = "Red")]
    Red,
    #[serde(rename = "NIR")]
    Nir,
    #[serde(rename = "NDVI")]
    Ndvi,
    #[serde(rename = "Red+NIR")]
    RedNir,
    #[serde(rename = "Red+NIR+NDVI")]
    RedNirNdvi,
}

impl ChannelSelection {
    pub const ALL: [ChannelSelection; 5] = [
        ChannelSelection::Red,
        ChannelSelection::Nir,
        ChannelSelection::Ndvi,
        ChannelSelection::RedNir,
        ChannelSelection::RedNirNdvi,
    ];

    pub fn bands(self) -> &'static [Band] {
        match self {
            ChannelSelection::Red => &[Band::Red],
            ChannelSelection::Nir => &[Band::Nir],
            ChannelSelection::Ndvi => &[Band::Ndvi],
            ChannelSelection::RedNir => &[Band::Red, Band::Nir],
            ChannelSelection::RedNirNdvi => &[Band::Red, Band::Nir, Band::Ndvi],
        }
    }

    pub fn channels(self) -> usize {
        self.bands().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelSelection::Red => "Red",
            ChannelSelection::Nir => "NIR",
            ChannelSelection::Ndvi => "NDVI",
            ChannelSelection::RedNir => "Red+NIR",
            ChannelSelection::RedNirNdvi => "Red+NIR+NDVI",
        }
    }

    /// Position in [`ChannelSelection::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).unwrap()
    }
}

impl fmt::Display for ChannelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelSelection::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<&str> = ChannelSelection::ALL.iter().map(|c| c.name()).collect();
                Error::Config(format!("unknown channel selection `{s}`; valid: {}", valid.join(", ")))
            })
    }
}

/// Stacks the selected bands of a normalized image into `[1, C, H, W]`.
pub fn select_channels(image: &MultispectralImage, selection: ChannelSelection) -> Result<Tensor<f32>> {
    if !image.is_normalized() {
        return Err(Error::Contract(format!("{}: select_channels needs a normalized image", image.id)));
    }
    let mut data = Vec::with_capacity(selection.channels() * image.height * image.width);
    for &band in selection.bands() {
        let r = image
            .band(band)
            .ok_or_else(|| Error::Data(format!("{}: missing band {}", image.id, band.file_name())))?;
        data.extend_from_slice(&r.data);
    }
    Ok(Tensor::from_vec(&[1, selection.channels(), image.height, image.width], data)?)
}
