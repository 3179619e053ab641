//! Confidence maps: one 8-bit PGM per output class plus an argmax map.

use std::fs;
use std::path::{Path, PathBuf};

use ssgan_tensor::{ops::softmax_channels, Tensor};

use super::eval::predict_logits;
use crate::data::codec::{save_pgm, Gray};
use crate::error::{Error, Result};
use crate::models::{Discriminator, CLASS_NAMES, NUM_LOGITS};

/// Gray level of each class in the argmax map.
pub const ARGMAX_LEVELS: [u8; NUM_LOGITS] = [0, 85, 170, 255];

/// Softmax confidences `[K, H, W]` quantized to 0..=255, and the argmax
/// over all K outputs, fake included.
pub fn confidence_maps(disc: &Discriminator, pixels: &Tensor<f32>, tile_h: usize, tile_w: usize) -> Result<(Vec<Gray>, Gray)> {
    let logits = predict_logits(disc, pixels, tile_h, tile_w)?;
    let [k, h, w] = [logits.dims()[0], logits.dims()[1], logits.dims()[2]];
    let probs = softmax_channels(&logits.reshape(&[1, k, h, w])?)?;
    let p = probs.data();
    let plane = h * w;
    let maps = (0..k)
        .map(|c| Gray {
            height: h,
            width: w,
            data: p[c * plane..(c + 1) * plane].iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect(),
        })
        .collect();
    let argmax = (0..plane)
        .map(|i| {
            let best = (1..k).fold(0, |b, c| if p[c * plane + i] > p[b * plane + i] { c } else { b });
            ARGMAX_LEVELS[best]
        })
        .collect();
    Ok((
        maps,
        Gray {
            height: h,
            width: w,
            data: argmax,
        },
    ))
}

/// Writes `<id>.conf_<class>.pgm` for every class and `<id>.argmax.pgm`.
pub fn render_maps(disc: &Discriminator, id: &str, pixels: &Tensor<f32>, tile_h: usize, tile_w: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (maps, argmax) = confidence_maps(disc, pixels, tile_h, tile_w)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, g) in CLASS_NAMES.iter().zip(&maps) {
        let p = out_dir.join(format!("{id}.conf_{name}.pgm"));
        save_pgm(&p, g)?;
        written.push(p);
    }
    let p = out_dir.join(format!("{id}.argmax.pgm"));
    save_pgm(&p, &argmax)?;
    written.push(p);
    Ok(written)
}
