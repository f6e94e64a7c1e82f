use crate::channel::VImage;
use crate::error::{invalid, Result};

/// Feature map of shape height × width × channels, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 || data.len() != h * w * c {
            return Err(invalid(format!(
                "tensor {h}x{w}x{c} cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("tensor has non-finite entries"));
        }
        Ok(Self { h, w, c, data })
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.h, self.w, self.c) == (other.h, other.w, other.c)
    }

    /// Image planes become the two channels.
    pub fn from_image(img: &VImage) -> Self {
        let (h, w) = (img.rows(), img.n_vs());
        let mut t = Self::zeros(h, w, 2);
        for plane in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let i = t.idx(y, x, plane);
                    t.data[i] = f64::from(img.get(plane, y, x));
                }
            }
        }
        t
    }

    pub fn to_image(&self, scale: f64) -> Result<VImage> {
        if self.c != 2 {
            return Err(invalid(format!("image tensor needs 2 channels, has {}", self.c)));
        }
        let mut planar = vec![0f32; 2 * self.h * self.w];
        for plane in 0..2 {
            for y in 0..self.h {
                for x in 0..self.w {
                    planar[(plane * self.h + y) * self.w + x] = self.data[self.idx(y, x, plane)] as f32;
                }
            }
        }
        VImage::from_planar(self.h, self.w, planar, scale)
    }
}
