//! Focal and global attention maps from the last gated block's activations,
//! plus heatmap overlay rendering.
//!
//! FFP (the focal map) is the most-activated channel, upsampled to the input
//! resolution and min-max normalized. AIR (the global map) is the channel
//! sum treated the same way.

use crate::error::{Error, Result};
use crate::model::ForwardArtifacts;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::str::FromStr;

/// How "most activated" ranks channels. The mean is the default; the
/// alternatives exist because the choice is a judgment call, and the one
/// used is recorded next to every extracted map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelSelector {
    #[default]
    Mean,
    Sum,
    Max,
}

impl ChannelSelector {
    pub fn name(self) -> &'static str {
        match self {
            ChannelSelector::Mean => "mean",
            ChannelSelector::Sum => "sum",
            ChannelSelector::Max => "max",
        }
    }
}

impl FromStr for ChannelSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ChannelSelector::Mean),
            "sum" => Ok(ChannelSelector::Sum),
            "max" => Ok(ChannelSelector::Max),
            other => Err(Error::Config(format!("unknown channel selector {other:?} (expected mean, sum, or max)"))),
        }
    }
}

/// A single-plane real-valued map, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("attention map must have positive extent".into()));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(AttentionMap { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Min-max rescale to [0, 1]. A constant map becomes all zeros: any
    /// constant carries no contrast, and zero renders as "no attention".
    pub fn normalized(&self) -> AttentionMap {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = if max == min {
            vec![0.0; self.values.len()]
        } else {
            let span = max - min;
            self.values.iter().map(|v| (v - min) / span).collect()
        };
        AttentionMap { height: self.height, width: self.width, values }
    }

    /// Bilinear resampling with corner alignment, so the four source corners
    /// map onto the four destination corners. Lerp form keeps constant maps
    /// exactly constant.
    pub fn upsample_bilinear(&self, height: usize, width: usize) -> Result<AttentionMap> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("upsample target must have positive extent".into()));
        }
        let scale = |dst: usize, dst_n: usize, src_n: usize| -> f64 {
            if dst_n <= 1 {
                0.0
            } else {
                dst as f64 * (src_n - 1) as f64 / (dst_n - 1) as f64
            }
        };
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = scale(y, height, self.height);
            let y0 = (sy.floor() as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = sy - y0 as f64;
            for x in 0..width {
                let sx = scale(x, width, self.width);
                let x0 = (sx.floor() as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = sx - x0 as f64;
                let top = self.at(y0, x0) + fx * (self.at(y0, x1) - self.at(y0, x0));
                let bottom = self.at(y1, x0) + fx * (self.at(y1, x1) - self.at(y1, x0));
                values.push(top + fy * (bottom - top));
            }
        }
        AttentionMap::new(height, width, values)
    }

    /// Plain-text grid: one row per line, values space separated with exact
    /// decimal rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if x > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", self.at(y, x));
            }
            out.push('\n');
        }
        out
    }
}

/// The two extracted maps plus the provenance needed to interpret them.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    /// Focal map at the target resolution, values in [0, 1].
    pub ffp: AttentionMap,
    /// Global map at the target resolution, values in [0, 1].
    pub air: AttentionMap,
    pub selected_channel: usize,
    /// Spatial side of the conv maps the attention came from.
    pub source_resolution: usize,
    pub selector: ChannelSelector,
}

/// Index of the most-activated channel under the chosen statistic; ties
/// resolve to the lowest index. Expects a single-sample activation tensor.
pub fn select_channel<T: Scalar>(maps: &Tensor<T>, selector: ChannelSelector) -> Result<usize> {
    let [b, c, h, w] = maps.dims();
    if b != 1 {
        return Err(Error::Shape(format!("channel selection needs a single sample, got batch {b}")));
    }
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Shape("activation tensor must be non-empty".into()));
    }
    let plane = h * w;
    let mut best = 0usize;
    let mut best_stat = f64::NEG_INFINITY;
    for ch in 0..c {
        let values = &maps.values()[ch * plane..(ch + 1) * plane];
        let stat = match selector {
            ChannelSelector::Mean => values.iter().map(|v| v.widen()).sum::<f64>() / plane as f64,
            ChannelSelector::Sum => values.iter().map(|v| v.widen()).sum::<f64>(),
            ChannelSelector::Max => values.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max),
        };
        if stat > best_stat {
            best_stat = stat;
            best = ch;
        }
    }
    Ok(best)
}

/// One channel plane of a single-sample activation tensor, widened to f64.
pub fn channel_plane<T: Scalar>(maps: &Tensor<T>, channel: usize) -> Result<AttentionMap> {
    let [b, c, h, w] = maps.dims();
    if b != 1 {
        return Err(Error::Shape(format!("expected a single sample, got batch {b}")));
    }
    if channel >= c {
        return Err(Error::Shape(format!("channel {channel} out of range for {c} channels")));
    }
    let plane = h * w;
    let values = maps.values()[channel * plane..(channel + 1) * plane]
        .iter()
        .map(|v| v.widen())
        .collect();
    AttentionMap::new(h, w, values)
}

/// Elementwise sum over channels of a single-sample activation tensor,
/// accumulated in f64.
pub fn channel_sum<T: Scalar>(maps: &Tensor<T>) -> Result<AttentionMap> {
    let [b, c, h, w] = maps.dims();
    if b != 1 {
        return Err(Error::Shape(format!("expected a single sample, got batch {b}")));
    }
    if c == 0 {
        return Err(Error::Shape("activation tensor has no channels".into()));
    }
    let plane = h * w;
    let mut sums = vec![0.0f64; plane];
    for ch in 0..c {
        let values = &maps.values()[ch * plane..(ch + 1) * plane];
        for (acc, v) in sums.iter_mut().zip(values) {
            *acc += v.widen();
        }
    }
    AttentionMap::new(h, w, sums)
}

/// Extracts both attention maps from a forward pass over a single image.
pub fn extract<T: Scalar>(
    artifacts: &ForwardArtifacts<T>,
    target_resolution: usize,
    selector: ChannelSelector,
) -> Result<AttentionMaps> {
    let maps = &artifacts.last_conv_maps;
    let [_, _, h, w] = maps.dims();
    if h != w {
        return Err(Error::Shape(format!("expected square conv maps, got {h}x{w}")));
    }
    let selected_channel = select_channel(maps, selector)?;
    let ffp = channel_plane(maps, selected_channel)?
        .upsample_bilinear(target_resolution, target_resolution)?
        .normalized();
    let air = channel_sum(maps)?
        .upsample_bilinear(target_resolution, target_resolution)?
        .normalized();
    Ok(AttentionMaps { ffp, air, selected_channel, source_resolution: h, selector })
}

/// Heat color for a normalized value: linear blend from pure blue (v = 0)
/// to pure red (v = 1), green fixed at zero. Returned in [0, 1] per channel.
pub fn heat_color(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [v, 0.0, 1.0 - v]
}

/// Alpha-blends the heat colormap over an RGB image:
/// out = (1 - alpha) * source + alpha * 255 * heat_color(map), rounded to
/// the nearest integer per channel.
pub fn render_overlay(image: &image::RgbImage, map: &AttentionMap, alpha: f64) -> Result<image::RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let (w, h) = image.dimensions();
    if map.width() != w as usize || map.height() != h as usize {
        return Err(Error::Shape(format!(
            "map {}x{} does not match image {w}x{h}",
            map.width(),
            map.height()
        )));
    }
    let mut out = image::RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let src = image.get_pixel(x, y);
            let color = heat_color(map.at(y as usize, x as usize));
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let v = (1.0 - alpha) * src.0[ch] as f64 + alpha * 255.0 * color[ch];
                px[ch] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
    Ok(out)
}
