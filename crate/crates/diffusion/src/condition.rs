//! Condition photographs and view vectors as extra network input channels.

use svbrdf_core::{Image, Real};

use crate::error::{Error, Result};

/// `N` linear RGB photographs plus an optional per-pixel view-vector map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStack<T> {
    pub photos: Vec<Image<T>>,
    pub view: Option<Image<T>>,
}

impl<T: Real> ConditionStack<T> {
    pub fn new(photos: Vec<Image<T>>, view: Option<Image<T>>) -> Result<Self> {
        let first = photos
            .first()
            .ok_or_else(|| Error::Config("a condition stack needs at least one photograph".into()))?;
        let (w, h) = (first.width(), first.height());
        if w != h {
            return Err(Error::Shape(format!("condition photographs must be square, got {w}x{h}")));
        }
        for img in photos.iter().chain(view.iter()) {
            if img.width() != w || img.height() != h || img.channels() != 3 {
                return Err(Error::Shape(format!(
                    "condition image {}x{}x{} does not match {w}x{h}x3",
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
        }
        Ok(Self { photos, view })
    }

    pub fn cast<U: Real>(&self) -> ConditionStack<U> {
        ConditionStack {
            photos: self.photos.iter().map(Image::cast).collect(),
            view: self.view.as_ref().map(Image::cast),
        }
    }

    /// `k = 3N`, plus 3 with a view-vector map.
    pub fn channels(&self) -> usize {
        3 * self.photos.len() + if self.view.is_some() { 3 } else { 0 }
    }

    pub fn resolution(&self) -> usize {
        self.photos[0].width()
    }

    /// Channel-major network input. Photographs are compressed from linear
    /// HDR into `[-1, 1)` with `2c / (1 + c) - 1`; view vectors pass through.
    pub fn to_planar(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.channels() * self.resolution().pow(2));
        let (one, two) = (T::one(), T::lit(2.0));
        for photo in &self.photos {
            let tone = photo.map(|c| {
                let c = c.max(T::zero());
                two * c / (one + c) - one
            });
            out.extend(tone.to_planar());
        }
        if let Some(view) = &self.view {
            out.extend(view.to_planar());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_count_and_encoding() {
        let photo = Image::<f64>::filled(4, 4, 3, 1.0);
        let view = Image::<f64>::filled(4, 4, 3, 0.5);
        let c = ConditionStack::new(vec![photo.clone(), photo], Some(view)).unwrap();
        assert_eq!(c.channels(), 9);
        let p = c.to_planar();
        assert_eq!(p.len(), 9 * 16);
        assert!(p[..96].iter().all(|&v| v == 0.0));
        assert!(p[96..].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let a = Image::<f32>::filled(4, 4, 3, 0.0);
        let b = Image::<f32>::filled(8, 8, 3, 0.0);
        assert!(ConditionStack::new(vec![a, b], None).is_err());
        assert!(ConditionStack::<f32>::new(vec![], None).is_err());
    }
}
