//! Per-keypoint heatmap targets and arg-max decoding.
//!
//! Targets are peak-normalized gaussians (peak = amplitude, default 1) so
//! they double as per-pixel BCE targets. The gaussian for keypoint `i` has
//! standard deviation `c * kappa_i * sqrt(area(bbox))`, measured in the
//! same units as the skeleton coordinates, then mapped onto the grid with
//! `cells_per_unit`. Decoding smooths each channel and takes the arg-max
//! cell; there is no sub-cell refinement.
//!
//! Cell `(col, row)` is centered on the coordinate `(col, row)`.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::skeleton::{BoundingBox, Keypoint, KeypointSigmas, Skeleton, Visibility, NUM_KEYPOINTS};

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "heatmap must be non-empty");
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Heatmap(format!("empty grid {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Heatmap(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f32) {
        self.values[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// Arg-max cell `(col, row)`; ties go to the smallest row-major index.
    pub fn argmax(&self) -> (usize, usize, f32) {
        let (best, peak) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        (best % self.width, best / self.width, peak)
    }
}

/// One heatmap per keypoint, all the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    maps: Vec<Heatmap>,
}

impl HeatmapStack {
    pub fn new(maps: Vec<Heatmap>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(Error::Heatmap("stack has no channels".into()));
        };
        let dims = (first.width, first.height);
        if maps.iter().any(|m| (m.width, m.height) != dims) {
            return Err(Error::Heatmap("channels differ in size".into()));
        }
        Ok(Self { maps })
    }

    pub fn channels(&self) -> &[Heatmap] {
        &self.maps
    }

    pub fn width(&self) -> usize {
        self.maps[0].width
    }

    pub fn height(&self) -> usize {
        self.maps[0].height
    }

    const MAGIC: &'static [u8; 4] = b"PKHM";

    /// `PKHM`, u32 channels, u32 width, u32 height, then f32 LE row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        for n in [self.maps.len(), self.width(), self.height()] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.width() * self.height() * 4);
        for m in &self.maps {
            buf.clear();
            buf.extend(m.values.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Heatmap("bad magic".into()));
        }
        let mut header = [0u32; 3];
        for h in &mut header {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *h = u32::from_le_bytes(b);
        }
        let [channels, width, height] = header.map(|v| v as usize);
        let mut maps = Vec::with_capacity(channels);
        let mut buf = vec![0u8; width * height * 4];
        for _ in 0..channels {
            r.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            maps.push(Heatmap::from_values(width, height, values)?);
        }
        Self::new(maps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeConfig {
    /// Proportionality constant between the OKS sigma scale and the target
    /// standard deviation.
    pub sigma_scale: f64,
    /// Peak value of every labeled channel.
    pub amplitude: f64,
    /// Grid cells per skeleton coordinate unit.
    pub cells_per_unit: f64,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            sigma_scale: 1.0,
            amplitude: 1.0,
            cells_per_unit: 1.0,
        }
    }
}

impl EncodeConfig {
    /// Target standard deviation of keypoint channel `i`, in cells.
    pub fn sigma_cells(&self, kappa: f64, b: &BoundingBox) -> f64 {
        self.sigma_scale * kappa * b.area().sqrt() * self.cells_per_unit
    }
}

/// Grid cell nearest to a keypoint, clamped into the grid.
pub fn nearest_cell(k: &Keypoint, cells_per_unit: f64, width: usize, height: usize) -> (usize, usize) {
    let snap = |v: f64, n: usize| (v * cells_per_unit).round().clamp(0.0, (n - 1) as f64) as usize;
    (snap(k.x, width), snap(k.y, height))
}

/// Gaussian target centered on the keypoint's nearest cell, so the peak is
/// exactly `amplitude` there.
pub fn encode_channel(
    k: &Keypoint,
    sigma_cells: f64,
    cfg: &EncodeConfig,
    width: usize,
    height: usize,
) -> Heatmap {
    let mut map = Heatmap::zeros(width, height);
    if !k.is_labeled() {
        return map;
    }
    let (pc, pr) = nearest_cell(k, cfg.cells_per_unit, width, height);
    let amp = cfg.amplitude.clamp(0.0, 1.0);
    if sigma_cells.is_nan() || sigma_cells <= 0.0 {
        map.set(pc, pr, amp as f32);
        return map;
    }
    let inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
    // separable: exp(-(dx^2 + dy^2) inv) = gx(dx) * gy(dy)
    let gx: Vec<f64> = (0..width)
        .map(|c| (-((c as f64 - pc as f64).powi(2)) * inv).exp())
        .collect();
    for row in 0..height {
        let gy = (-((row as f64 - pr as f64).powi(2)) * inv).exp();
        let line = &mut map.values[row * width..(row + 1) * width];
        for (v, g) in line.iter_mut().zip(&gx) {
            *v = (amp * gy * g) as f32;
        }
    }
    map
}

pub fn encode_target(
    s: &Skeleton,
    b: &BoundingBox,
    sigmas: &KeypointSigmas,
    width: usize,
    height: usize,
    cfg: &EncodeConfig,
) -> HeatmapStack {
    let maps = (0..NUM_KEYPOINTS)
        .into_par_iter()
        .map(|i| {
            let sigma = cfg.sigma_cells(sigmas.as_array()[i], b);
            encode_channel(&s.keypoints[i], sigma, cfg, width, height)
        })
        .collect();
    HeatmapStack::new(maps).expect("uniform channels")
}

/// Normalized gaussian kernel truncated at radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub const DEFAULT_SMOOTH_SIGMA: f64 = 1.0;

/// Separable gaussian blur with edge replication.
pub fn gaussian_smooth(h: &Heatmap, sigma: f64) -> Heatmap {
    assert!(sigma > 0.0, "smoothing sigma must be positive");
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, ht) = (h.width as isize, h.height as isize);
    let src: Vec<f64> = h.values.iter().map(|&v| v as f64).collect();

    let mut horiz = vec![0.0f64; src.len()];
    for row in 0..ht {
        let line = &src[(row * w) as usize..((row + 1) * w) as usize];
        for col in 0..w {
            horiz[(row * w + col) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * line[(col + k as isize - radius).clamp(0, w - 1) as usize])
                .sum();
        }
    }
    let mut values = vec![0.0f32; src.len()];
    for row in 0..ht {
        for col in 0..w {
            let acc: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| {
                    let r = (row + k as isize - radius).clamp(0, ht - 1);
                    wt * horiz[(r * w + col) as usize]
                })
                .sum();
            values[(row * w + col) as usize] = acc.clamp(0.0, 1.0) as f32;
        }
    }
    Heatmap {
        width: h.width,
        height: h.height,
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub smooth_sigma: f64,
    /// Channels whose smoothed peak falls below this are decoded as
    /// unlabeled. `None` keeps every channel.
    pub min_peak: Option<f32>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            smooth_sigma: DEFAULT_SMOOTH_SIGMA,
            min_peak: None,
        }
    }
}

pub fn decode_channel(h: &Heatmap, cfg: &DecodeConfig) -> Keypoint {
    let smoothed = gaussian_smooth(h, cfg.smooth_sigma);
    let (col, row, peak) = smoothed.argmax();
    match cfg.min_peak {
        Some(min) if peak < min => Keypoint::UNLABELED,
        _ => Keypoint::new(col as f64, row as f64, Visibility::Visible),
    }
}

/// Decode a 25-channel stack into grid-cell keypoints.
pub fn decode_keypoints(hs: &HeatmapStack, cfg: &DecodeConfig) -> Result<Skeleton> {
    if hs.maps.len() != NUM_KEYPOINTS {
        return Err(Error::LengthMismatch {
            expected: NUM_KEYPOINTS,
            actual: hs.maps.len(),
        });
    }
    let decoded: Vec<Keypoint> = hs.maps.par_iter().map(|m| decode_channel(m, cfg)).collect();
    Ok(Skeleton::new(decoded.try_into().expect("25 channels")))
}
