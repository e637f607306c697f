//! Raster images, preprocessing transforms, CLAHE and intensity histograms.

pub mod clahe;
mod image;
pub mod io;
pub mod transform;

pub use clahe::{clahe, ClaheParams};
pub use image::{intensity_histogram, luma, Histogram, Image, ImageError};
pub use io::{read_image, write_image, ImageFormat};
pub use transform::{flip, normalize, resize_bilinear, FlipAxis, Normalization};
