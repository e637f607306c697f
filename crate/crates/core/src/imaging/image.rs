use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated image data: {0}")]
    Truncated(String),
    #[error("malformed image: {0}")]
    Malformed(String),
    #[error("invalid image dimensions: {0}")]
    Dimensions(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// An 8-bit raster, row-major with interleaved channels (1 = gray, 3 = RGB).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::Dimensions(format!("{height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Dimensions(format!("{channels} channels (expected 1 or 3)")));
        }
        if pixels.len() != height * width * channels {
            return Err(ImageError::Dimensions(format!(
                "buffer of {} bytes for {height}x{width}x{channels}",
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.pixels[i..i + self.channels]
    }

    /// Luma plane: the sole channel for grayscale, otherwise
    /// `round(0.299 R + 0.587 G + 0.114 B)`.
    pub fn luma(&self) -> Vec<u8> {
        match self.channels {
            1 => self.pixels.clone(),
            _ => self.pixels.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect(),
        }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            pixels,
        }
    }
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{}x{})", self.height, self.width, self.channels)
    }
}

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// 256-bin intensity histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    bins: [u64; 256],
    total: u64,
}

impl Histogram {
    pub fn from_values(values: &[u8]) -> Self {
        let mut bins = [0u64; 256];
        for &v in values {
            bins[v as usize] += 1;
        }
        Histogram {
            bins,
            total: values.len() as u64,
        }
    }

    pub fn bins(&self) -> &[u64; 256] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Pearson chi-square distance to the flat histogram with the same mass.
    pub fn chi_square_to_uniform(&self) -> f64 {
        let expected = self.total as f64 / 256.0;
        if expected == 0.0 {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|&b| {
                let d = b as f64 - expected;
                d * d / expected
            })
            .sum()
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += b;
        }
        self.total += other.total;
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram {
            bins: [0; 256],
            total: 0,
        }
    }
}

/// Histogram of the luma channel (color) or sole channel (grayscale).
pub fn intensity_histogram(img: &Image) -> Histogram {
    Histogram::from_values(&img.luma())
}
