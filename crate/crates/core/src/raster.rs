//! Minimal owned RGB8 raster with bilinear sampling.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

pub type Rgb = [u8; 3];

impl Raster {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Raster {
            width,
            height,
            data,
        }
    }

    /// Wraps an interleaved RGB buffer. Returns `None` when the length does
    /// not match `width * height * 3`.
    pub fn from_rgb(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Raster {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn as_rgb(&self) -> &[u8] {
        &self.data
    }

    pub fn into_rgb(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, px: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Bilinear sample at continuous coordinates where pixel `(i, j)` has its
    /// center at `(i + 0.5, j + 0.5)`. Coordinates outside the raster are
    /// clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Rgb {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
            let bottom = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
            let v = top * (1.0 - ty) + bottom * ty;
            out[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    /// Bilinear resize to an arbitrary size (aspect ratio not preserved).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Raster::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
        })
    }

    /// Copies the `width × height` window whose top-left corner is `(x0, y0)`.
    /// Pixels of the window that fall outside the raster take `fill`.
    pub fn crop_padded(&self, x0: i64, y0: i64, width: usize, height: usize, fill: Rgb) -> Raster {
        Raster::from_fn(width, height, |x, y| {
            let sx = x0 + x as i64;
            let sy = y0 + y as i64;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(sx as usize, sy as usize)
            } else {
                fill
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_at_pixel_centers_is_exact() {
        let r = Raster::from_fn(4, 3, |x, y| [x as u8 * 10, y as u8 * 20, 7]);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(r.sample_bilinear(x as f64 + 0.5, y as f64 + 0.5), r.get(x, y));
            }
        }
    }

    #[test]
    fn crop_padded_fills_outside() {
        let r = Raster::new(2, 2, [1, 2, 3]);
        let c = r.crop_padded(-1, -1, 3, 3, [9, 9, 9]);
        assert_eq!(c.get(0, 0), [9, 9, 9]);
        assert_eq!(c.get(1, 1), [1, 2, 3]);
        assert_eq!(c.get(2, 2), [1, 2, 3]);
    }

    #[test]
    fn from_rgb_checks_length() {
        assert!(Raster::from_rgb(2, 2, vec![0; 11]).is_none());
        assert!(Raster::from_rgb(2, 2, vec![0; 12]).is_some());
    }
}
