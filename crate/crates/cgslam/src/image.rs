//! Row-major image buffers. Pixel (x, y) lives at index `y * width + x`;
//! the sample point of pixel (x, y) is the center (x + 0.5, y + 0.5).

use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf<T> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<T>,
}

impl<T: Clone> ImageBuf<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        ImageBuf {
            width,
            height,
            data: vec![value; (width * height) as usize],
        }
    }
}

impl<T> ImageBuf<T> {
    pub fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) as usize
    }

    pub fn get(&self, x: u32, y: u32) -> &T {
        &self.data[self.idx(x, y)]
    }

    pub fn get_mut(&mut self, x: u32, y: u32) -> &mut T {
        let i = self.idx(x, y);
        &mut self.data[i]
    }

    pub fn same_dims<U>(&self, other: &ImageBuf<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }
}

pub type ColorImage = ImageBuf<Vector3<f64>>;
pub type ScalarImage = ImageBuf<f64>;
/// Depth in meters; 0.0 marks an invalid measurement.
pub type DepthImage = ImageBuf<f64>;

impl ColorImage {
    pub fn black(width: u32, height: u32) -> Self {
        ImageBuf::filled(width, height, Vector3::zeros())
    }

    /// Channel-mean grayscale, used by the corner detector.
    pub fn to_gray(&self) -> ScalarImage {
        ImageBuf {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|c| (c.x + c.y + c.z) / 3.0).collect(),
        }
    }
}

impl ScalarImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        ImageBuf::filled(width, height, 0.0)
    }
}
