//! Synthetic multispectral field plots: soil, vertical crop rows, and weed
//! patches, with per-class reflectance in the red and NIR bands.

use serde::{Deserialize, Serialize};
use ssgan_tensor::Prng;

use super::codec::Raster;
use super::image::{Band, LabelMask, MultispectralImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflectance {
    pub red_mean: f64,
    pub red_std: f64,
    pub nir_mean: f64,
    pub nir_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticFieldConfig {
    pub width: usize,
    pub height: usize,
    pub crop_row_spacing: usize,
    pub crop_row_width: usize,
    pub weed_blob_count: usize,
    pub weed_radius_min: usize,
    pub weed_radius_max: usize,
    pub soil: Reflectance,
    pub crop: Reflectance,
    pub weed: Reflectance,
    pub sensor_noise: f64,
    /// Images written by a dataset synthesis run.
    pub num_images: usize,
    /// Share of images held out for evaluation.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticFieldConfig {
    fn default() -> Self {
        let class = |red_mean, nir_mean| Reflectance {
            red_mean,
            red_std: 0.03,
            nir_mean,
            nir_std: 0.03,
        };
        SyntheticFieldConfig {
            width: 128,
            height: 128,
            crop_row_spacing: 24,
            crop_row_width: 8,
            weed_blob_count: 14,
            weed_radius_min: 5,
            weed_radius_max: 9,
            soil: class(0.30, 0.25),
            crop: class(0.08, 0.50),
            weed: class(0.12, 0.42),
            sensor_noise: 0.01,
            num_images: 60,
            test_fraction: 1.0 / 6.0,
            seed: 0,
        }
    }
}

impl SyntheticFieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("field extents must be positive".into());
        }
        if self.crop_row_spacing == 0 || self.crop_row_width >= self.crop_row_spacing {
            return bad(format!(
                "crop_row_width {} must be below crop_row_spacing {}",
                self.crop_row_width, self.crop_row_spacing
            ));
        }
        if self.weed_radius_min > self.weed_radius_max {
            return bad("weed_radius_min exceeds weed_radius_max".into());
        }
        for (name, c) in [("soil", &self.soil), ("crop", &self.crop), ("weed", &self.weed)] {
            if !(c.red_std >= 0.0 && c.nir_std >= 0.0) {
                return bad(format!("{name} stddev must be >= 0"));
            }
        }
        if !(self.sensor_noise >= 0.0) {
            return bad("sensor_noise must be >= 0".into());
        }
        for (name, c) in [("crop", &self.crop), ("weed", &self.weed)] {
            if c.nir_mean <= self.soil.nir_mean || c.red_mean >= self.soil.red_mean {
                return bad(format!("{name} must be brighter than soil in NIR and darker in red"));
            }
        }
        if self.num_images < 3 {
            return bad("num_images must be at least 3".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        Ok(())
    }
}

/// Paints one field plot. The returned image is un-normalized and carries
/// all three bands.
pub fn synth_field(id: &str, cfg: &SyntheticFieldConfig, rng: &mut Prng) -> Result<(MultispectralImage, LabelMask)> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let phase = rng.below(cfg.crop_row_spacing);
    let mut mask: Vec<u8> = (0..h * w)
        .map(|i| {
            let x = i % w;
            if (x + phase) % cfg.crop_row_spacing < cfg.crop_row_width {
                1
            } else {
                0
            }
        })
        .collect();
    for _ in 0..cfg.weed_blob_count {
        let cy = rng.below(h) as isize;
        let cx = rng.below(w) as isize;
        let r = (cfg.weed_radius_min + rng.below(cfg.weed_radius_max - cfg.weed_radius_min + 1)) as isize;
        for y in (cy - r).max(0)..=(cy + r).min(h as isize - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w as isize - 1) {
                if (y - cy).pow(2) + (x - cx).pow(2) <= r * r {
                    mask[y as usize * w + x as usize] = 2;
                }
            }
        }
    }
    let mut red = Vec::with_capacity(h * w);
    let mut nir = Vec::with_capacity(h * w);
    for &m in &mask {
        let c = match m {
            0 => &cfg.soil,
            1 => &cfg.crop,
            _ => &cfg.weed,
        };
        let mut draw = |mean: f64, std: f64| {
            let v = mean + std * rng.normal() + cfg.sensor_noise * rng.normal();
            v.clamp(0.0, 1.0) as f32
        };
        red.push(draw(c.red_mean, c.red_std));
        nir.push(draw(c.nir_mean, c.nir_std));
    }
    let mut image = MultispectralImage::new(id, h, w);
    image.insert(Band::Red, Raster::new(h, w, red)?)?;
    image.insert(Band::Nir, Raster::new(h, w, nir)?)?;
    image.ensure_ndvi()?;
    let mask = LabelMask {
        id: id.to_string(),
        height: h,
        width: w,
        data: mask,
    };
    Ok((image, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_weeds_means_no_weed_pixels() {
        let cfg = SyntheticFieldConfig {
            weed_blob_count: 0,
            ..Default::default()
        };
        let (_, m) = synth_field("a", &cfg, &mut Prng::new(1)).unwrap();
        assert!(!m.data.contains(&2));
    }

    #[test]
    fn crop_fraction_tracks_row_geometry() {
        // Weed patches paint over rows, so count rows alone.
        let cfg = SyntheticFieldConfig {
            weed_blob_count: 0,
            ..Default::default()
        };
        let target = cfg.crop_row_width as f64 / cfg.crop_row_spacing as f64;
        for seed in 0..24 {
            let (_, m) = synth_field("a", &cfg, &mut Prng::new(seed)).unwrap();
            let frac = m.data.iter().filter(|&&v| v == 1).count() as f64 / m.data.len() as f64;
            assert!((frac - target).abs() <= 0.2 * target, "seed {seed}: {frac}");
        }
    }

    #[test]
    fn vegetation_ndvi_exceeds_soil() {
        let (im, m) = synth_field("a", &SyntheticFieldConfig::default(), &mut Prng::new(3)).unwrap();
        let ndvi = &im.band(Band::Ndvi).unwrap().data;
        let mean_of = |class: u8| {
            let v: Vec<f64> = m.data.iter().zip(ndvi).filter(|(&c, _)| c == class).map(|(_, &x)| x as f64).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_of(1) > mean_of(0));
        assert!(mean_of(2) > mean_of(0));
    }

    #[test]
    fn mask_matches_painted_geometry() {
        // Recount rows and disks with an independent painter using the same draws.
        let cfg = SyntheticFieldConfig::default();
        let (_, m) = synth_field("a", &cfg, &mut Prng::new(8)).unwrap();
        let mut rng = Prng::new(8);
        let phase = rng.below(cfg.crop_row_spacing);
        let disks: Vec<(i64, i64, i64)> = (0..cfg.weed_blob_count)
            .map(|_| {
                let cy = rng.below(cfg.height) as i64;
                let cx = rng.below(cfg.width) as i64;
                let r = (cfg.weed_radius_min + rng.below(cfg.weed_radius_max - cfg.weed_radius_min + 1)) as i64;
                (cy, cx, r)
            })
            .collect();
        for y in 0..cfg.height as i64 {
            for x in 0..cfg.width as i64 {
                let weed = disks.iter().any(|&(cy, cx, r)| (y - cy).pow(2) + (x - cx).pow(2) <= r * r);
                let crop = (x as usize + phase) % cfg.crop_row_spacing < cfg.crop_row_width;
                let want = if weed { 2 } else if crop { 1 } else { 0 };
                assert_eq!(m.data[(y * cfg.width as i64 + x) as usize], want, "({y}, {x})");
            }
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let cfg = SyntheticFieldConfig::default();
        let a = synth_field("a", &cfg, &mut Prng::new(5)).unwrap();
        let b = synth_field("a", &cfg, &mut Prng::new(5)).unwrap();
        assert_eq!(a, b);
        for band in [Band::Red, Band::Nir] {
            assert!(a.0.band(band).unwrap().data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn invalid_geometry_rejected() {
        let cfg = SyntheticFieldConfig {
            crop_row_width: 24,
            ..Default::default()
        };
        assert!(matches!(synth_field("a", &cfg, &mut Prng::new(1)), Err(Error::Config(_))));
    }
}
