use super::glyphs::{glyph_sdf, style_covers, MAX_STYLE_DILATION, N_SHAPES, N_STYLES};
use crate::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

pub const ROTATION_RANGE: (f64, f64) = (-25.0, 25.0);
pub const SCALE_RANGE: (f64, f64) = (0.6, 1.0);
pub const OFFSET_RANGE: (f64, f64) = (-3.0, 3.0);

/// Sub-samples per pixel edge for anti-aliasing.
const SUPERSAMPLE: usize = 4;

/// Generative factors of one synthetic image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorVector {
    pub shape_id: u8,
    pub style_id: u8,
    /// Degrees.
    pub rotation: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl FactorVector {
    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        let problem = if usize::from(self.shape_id) >= N_SHAPES {
            Some(format!("shape_id {} out of [0, {}]", self.shape_id, N_SHAPES - 1))
        } else if usize::from(self.style_id) >= N_STYLES {
            Some(format!("style_id {} out of [0, {}]", self.style_id, N_STYLES - 1))
        } else if !within(self.rotation, ROTATION_RANGE) {
            Some(format!("rotation {} out of range", self.rotation))
        } else if !within(self.scale, SCALE_RANGE) {
            Some(format!("scale {} out of range", self.scale))
        } else if !within(self.dx, OFFSET_RANGE) || !within(self.dy, OFFSET_RANGE) {
            Some(format!("offset ({}, {}) out of range", self.dx, self.dy))
        } else {
            None
        };
        match problem {
            Some(p) => Err(Error::Invalid(format!("invalid factors: {p}"))),
            None => Ok(()),
        }
    }

    /// Binary label: the first half of the glyph set is the positive class.
    pub fn label(&self) -> u8 {
        u8::from(usize::from(self.shape_id) < N_SHAPES / 2)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            f64::from(self.shape_id),
            f64::from(self.style_id),
            self.rotation,
            self.scale,
            self.dx,
            self.dy,
        ]
    }
}

/// Rasterize factors into a 32×32 image with values in `[-1, 1]`
/// (background -1). Values are rounded through f32 so that stored datasets
/// reload bit-identically.
pub fn render(f: &FactorVector) -> Result<Vec<f64>> {
    f.validate()?;
    let shape = usize::from(f.shape_id);
    let style = usize::from(f.style_id);
    let cx = IMAGE_SIDE as f64 / 2.0 + f.dx;
    let cy = IMAGE_SIDE as f64 / 2.0 + f.dy;
    let (s, c) = (-f.rotation).to_radians().sin_cos();
    let to_glyph = |x: f64, y: f64| {
        let (px, py) = (x - cx, y - cy);
        ((c * px - s * py) / f.scale, (s * px + c * py) / f.scale)
    };
    // beyond this pixel-space distance no sub-sample can be inked
    let far = MAX_STYLE_DILATION + std::f64::consts::SQRT_2;

    let mut img = vec![-1.0; IMAGE_PIXELS];
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let q = to_glyph(col as f64 + 0.5, row as f64 + 0.5);
            if glyph_sdf(shape, q) * f.scale > far {
                continue;
            }
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = col as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let y = row as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let q = to_glyph(x, y);
                    let d = glyph_sdf(shape, q) * f.scale;
                    if style_covers(style, d, q) {
                        hits += 1;
                    }
                }
            }
            let coverage = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            img[row * IMAGE_SIDE + col] = f64::from((2.0 * coverage - 1.0) as f32);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(style: u8, scale: f64) -> FactorVector {
        FactorVector {
            shape_id: 0,
            style_id: style,
            rotation: 0.0,
            scale,
            dx: 0.0,
            dy: 0.0,
        }
    }

    #[test]
    fn centred_disc_is_mirror_symmetric() {
        for style in 0..N_STYLES as u8 {
            let img = render(&disc(style, 0.8)).unwrap();
            for y in 0..IMAGE_SIDE {
                for x in 0..IMAGE_SIDE {
                    let a = img[y * IMAGE_SIDE + x];
                    let b = img[y * IMAGE_SIDE + (IMAGE_SIDE - 1 - x)];
                    assert!((a - b).abs() < 1e-9, "style {style} at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let f = FactorVector {
            shape_id: 7,
            style_id: 6,
            rotation: 13.5,
            scale: 0.77,
            dx: -2.0,
            dy: 1.0,
        };
        assert_eq!(render(&f).unwrap(), render(&f).unwrap());
    }

    #[test]
    fn solid_disc_area_matches_circle() {
        for scale in [0.6, 0.7, 0.8, 0.9, 1.0] {
            let img = render(&disc(0, scale)).unwrap();
            let count = img.iter().filter(|&&v| v > 0.0).count() as f64;
            let r = scale * super::super::glyphs::BASE_RADIUS;
            let expected = std::f64::consts::PI * r * r;
            assert!(
                (count - expected).abs() / expected < 0.10,
                "scale {scale}: {count} vs {expected}"
            );
        }
    }

    #[test]
    fn values_in_range_and_every_glyph_visible() {
        for shape in 0..N_SHAPES as u8 {
            for style in 0..N_STYLES as u8 {
                let f = FactorVector {
                    shape_id: shape,
                    style_id: style,
                    rotation: 25.0,
                    scale: 0.6,
                    dx: 3.0,
                    dy: -3.0,
                };
                let img = render(&f).unwrap();
                assert!(img.iter().all(|v| (-1.0..=1.0).contains(v)));
                let inked = img.iter().filter(|&&v| v > -1.0).count();
                assert!(inked > 10, "shape {shape} style {style} nearly empty");
                // nothing touches the border
                for i in 0..IMAGE_SIDE {
                    assert_eq!(img[i], -1.0);
                    assert_eq!(img[(IMAGE_SIDE - 1) * IMAGE_SIDE + i], -1.0);
                }
            }
        }
    }

    #[test]
    fn out_of_range_factors_rejected() {
        let mut f = disc(0, 0.8);
        f.rotation = 40.0;
        assert!(render(&f).is_err());
        let mut f = disc(0, 0.8);
        f.shape_id = 16;
        assert!(render(&f).is_err());
        let mut f = disc(0, 0.8);
        f.scale = 1.2;
        assert!(render(&f).is_err());
    }
}
