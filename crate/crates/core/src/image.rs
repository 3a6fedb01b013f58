use crate::{Error, Real, Result};

/// Dense interleaved image: `height x width x channels`, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} image needs {} values, got {}",
                height,
                width,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [T]),
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for r in 0..height {
            for c in 0..width {
                f(r, c, img.pixel_mut(r, c));
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: T) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> Vec<T> {
        let mut acc = vec![T::zero(); self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        let n = T::from_usize_lossy(self.pixel_count().max(1));
        acc.into_iter().map(|a| a / n).collect()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers at
    /// integers), clamping to the border.
    pub fn sample_bilinear(&self, row: T, col: T, out: &mut [T]) {
        let max_r = T::from_usize_lossy(self.height - 1);
        let max_c = T::from_usize_lossy(self.width - 1);
        let r = row.max(T::zero()).min(max_r);
        let c = col.max(T::zero()).min(max_c);
        let r0 = r.floor();
        let c0 = c.floor();
        let fr = r - r0;
        let fc = c - c0;
        let r0 = r0.to_usize().unwrap_or(0);
        let c0 = c0.to_usize().unwrap_or(0);
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let one = T::one();
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            let v00 = self.get(r0, c0, ch);
            let v01 = self.get(r0, c1, ch);
            let v10 = self.get(r1, c0, ch);
            let v11 = self.get(r1, c1, ch);
            *o = (v00 * (one - fc) + v01 * fc) * (one - fr) + (v10 * (one - fc) + v11 * fc) * fr;
        }
    }

    /// Image rotated by 90 degrees counter-clockwise (as seen on screen).
    pub fn rotate90_ccw(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = Self::new(h, w, self.channels);
        for r in 0..h {
            for c in 0..w {
                // top-right corner becomes top-left
                let (nr, nc) = (w - 1 - c, r);
                out.pixel_mut(nr, nc).copy_from_slice(self.pixel(r, c));
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.pixel_mut(r, self.width - 1 - c)
                    .copy_from_slice(self.pixel(r, c));
            }
        }
        out
    }

    pub fn rotate180(&self) -> Self {
        let mut out = self.clone();
        let (w, h) = (self.width, self.height);
        for r in 0..h {
            for c in 0..w {
                out.pixel_mut(h - 1 - r, w - 1 - c)
                    .copy_from_slice(self.pixel(r, c));
            }
        }
        out
    }

    /// Channel-major copy (`C x H x W`), the layout the network consumes.
    pub fn to_planar(&self) -> Vec<T> {
        let n = self.pixel_count();
        let mut out = vec![T::zero(); n * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * n + p] = v;
            }
        }
        out
    }

    pub fn from_planar(width: usize, height: usize, channels: usize, planar: &[T]) -> Result<Self> {
        let n = width * height;
        if planar.len() != n * channels {
            return Err(Error::Shape(format!(
                "planar buffer of {} values for {}x{}x{}",
                planar.len(),
                height,
                width,
                channels
            )));
        }
        let mut img = Self::new(width, height, channels);
        for p in 0..n {
            for ch in 0..channels {
                img.data[p * channels + ch] = planar[ch * n + p];
            }
        }
        Ok(img)
    }

    /// Concatenates images along the channel axis.
    pub fn stack_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
        let (w, h) = (first.width, first.height);
        if parts.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::Shape("stacked images differ in resolution".into()));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut out = Self::new(w, h, channels);
        for p in 0..w * h {
            let mut off = 0;
            for part in parts {
                let src = &part.data[p * part.channels..(p + 1) * part.channels];
                out.data[p * channels + off..p * channels + off + part.channels]
                    .copy_from_slice(src);
                off += part.channels;
            }
        }
        Ok(out)
    }

    /// Channels `[start, start + count)` as a new image.
    pub fn slice_channels(&self, start: usize, count: usize) -> Self {
        let mut out = Self::new(self.width, self.height, count);
        for p in 0..self.pixel_count() {
            let src = &self.data[p * self.channels + start..p * self.channels + start + count];
            out.data[p * count..(p + 1) * count].copy_from_slice(src);
        }
        out
    }

    /// Root mean squared difference over all values.
    pub fn rmse(&self, other: &Self) -> Result<T> {
        if !self.same_shape(other) {
            return Err(Error::Shape("rmse of differently shaped images".into()));
        }
        if self.data.is_empty() {
            return Ok(T::zero());
        }
        let sum: T = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok((sum / T::from_usize_lossy(self.data.len())).sqrt())
    }

    /// Bilinear resize to `width x height`, sampling at pixel centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let sx = T::from_usize_lossy(self.width) / T::from_usize_lossy(width);
        let sy = T::from_usize_lossy(self.height) / T::from_usize_lossy(height);
        let half = T::lit(0.5);
        let mut px = vec![T::zero(); self.channels];
        Self::from_fn(width, height, self.channels, |r, c, out| {
            let sr = (T::from_usize_lossy(r) + half) * sy - half;
            let sc = (T::from_usize_lossy(c) + half) * sx - half;
            self.sample_bilinear(sr, sc, &mut px);
            out.copy_from_slice(&px);
        })
    }

    /// 2x2 box-filter downsample. Dimensions must be even.
    pub fn downsample2_average(&self) -> Result<Self> {
        if self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(Error::Shape("downsample of odd-sized image".into()));
        }
        let quarter = T::lit(0.25);
        let ch = self.channels;
        Ok(Self::from_fn(self.width / 2, self.height / 2, ch, |r, c, out| {
            for k in 0..ch {
                out[k] = (self.get(2 * r, 2 * c, k)
                    + self.get(2 * r, 2 * c + 1, k)
                    + self.get(2 * r + 1, 2 * c, k)
                    + self.get(2 * r + 1, 2 * c + 1, k))
                    * quarter;
            }
        }))
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
