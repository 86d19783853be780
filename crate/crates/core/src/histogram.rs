//! Color histograms and the Hellinger distance used to compare them.

use serde::{Deserialize, Serialize};

use crate::error::HistogramError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binning {
    pub space: ColorSpace,
    pub bins_per_channel: u16,
}

impl Default for Binning {
    fn default() -> Self {
        Self {
            space: ColorSpace::Rgb,
            bins_per_channel: 8,
        }
    }
}

impl Binning {
    pub fn rgb(bins_per_channel: u16) -> Self {
        assert!(
            (1..=256).contains(&bins_per_channel),
            "bins per channel must be in 1..=256"
        );
        Self {
            space: ColorSpace::Rgb,
            bins_per_channel,
        }
    }

    pub fn bin_count(&self) -> usize {
        (self.bins_per_channel as usize).pow(3)
    }

    pub fn bin_of(&self, rgb: [u8; 3]) -> usize {
        let n = self.bins_per_channel as usize;
        let q = |c: u8| c as usize * n / 256;
        (q(rgb[0]) * n + q(rgb[1])) * n + q(rgb[2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    binning: Binning,
    bins: Vec<f64>,
}

impl Histogram {
    pub fn new(binning: Binning) -> Self {
        Self {
            binning,
            bins: vec![0.0; binning.bin_count()],
        }
    }

    /// Builds a histogram from raw bin values. Negative or non-finite bins are rejected.
    pub fn from_bins(binning: Binning, bins: Vec<f64>) -> Option<Self> {
        if bins.len() != binning.bin_count() || bins.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return None;
        }
        Some(Self { binning, bins })
    }

    pub fn from_pixels<'a>(binning: Binning, pixels: impl IntoIterator<Item = &'a [u8; 3]>) -> Self {
        let mut h = Self::new(binning);
        for p in pixels {
            h.add(*p);
        }
        h
    }

    pub fn add(&mut self, rgb: [u8; 3]) {
        let i = self.binning.bin_of(rgb);
        self.bins[i] += 1.0;
    }

    /// Adds `weight` to bin `index`; negative weights are ignored so bins stay non-negative.
    pub fn accumulate(&mut self, index: usize, weight: f64) {
        if weight > 0.0 && weight.is_finite() {
            self.bins[index] += weight;
        }
    }

    pub fn binning(&self) -> Binning {
        self.binning
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Ĥ: mean bin value.
    pub fn mean(&self) -> f64 {
        self.total() / self.bins.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.bins.iter().all(|&b| b == 0.0)
    }

    /// Bins scaled to unit L1 mass.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        if t > 0.0 {
            self.bins.iter().map(|b| b / t).collect()
        } else {
            self.bins.clone()
        }
    }

    pub fn scaled(&self, c: f64) -> Histogram {
        Histogram {
            binning: self.binning,
            bins: self.bins.iter().map(|b| b * c).collect(),
        }
    }
}

/// Hellinger distance in [0, 1]:
///
/// `d = sqrt(1 - Σ_I sqrt(H1(I)·H2(I)) / sqrt(Ĥ1·Ĥ2·N²))`
///
/// with Ĥ the mean bin value and N the bin count. Near zero the same value
/// is taken from the equal form `½ Σ_I (sqrt(p1(I)) - sqrt(p2(I)))²` over the
/// normalized histograms, which does not lose the small distances to
/// cancellation; identical histograms and power-of-two scalings give exactly 0.
pub fn hellinger(h1: &Histogram, h2: &Histogram) -> Result<f64, HistogramError> {
    if h1.binning != h2.binning {
        return Err(HistogramError::BinningMismatch);
    }
    let n = h1.bins.len() as f64;
    let (m1, m2) = (h1.mean(), h2.mean());
    if m1 <= 0.0 || m2 <= 0.0 {
        return Err(HistogramError::Empty);
    }
    let overlap: f64 = h1
        .bins
        .iter()
        .zip(&h2.bins)
        .map(|(a, b)| (a * b).sqrt())
        .sum();
    let mut radicand = 1.0 - overlap / (m1 * m2 * n * n).sqrt();
    if radicand < 0.5 {
        let (t1, t2) = (m1 * n, m2 * n);
        radicand = 0.5
            * h1.bins
                .iter()
                .zip(&h2.bins)
                .map(|(a, b)| ((a / t1).sqrt() - (b / t2).sqrt()).powi(2))
                .sum::<f64>();
    }
    Ok(radicand.clamp(0.0, 1.0).sqrt())
}
