//! Procedural garment renderer used as a synthetic stand-in for product photo groups.
//!
//! Each [`SceneSpec`] describes one garment. Its three views share geometry:
//!
//! * `front`: the base silhouette with front-only details (placket line, chest patch).
//! * `side`: the front silhouette squeezed horizontally by [`SIDE_SQUEEZE`]
//!   (a point `(x, y)` is inside iff `(x / SIDE_SQUEEZE, y)` is inside the front
//!   silhouette), with a side seam instead of the front details.
//! * `back`: the front silhouette with a shallower neckline, the front details
//!   removed, a yoke band added and the pattern phase mirrored.
//!
//! Coordinates are normalized to `[-1, 1]` with `y` pointing down; pixels are
//! sampled at their centers, so renders are exact and bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use super::view::ViewLabel;
use crate::error::{Error, Result};

/// Number of garment silhouette classes.
pub const NUM_SHAPE_CLASSES: usize = 8;
/// Number of surface textures.
pub const NUM_TEXTURES: u32 = 5;
/// Horizontal compression of the side view relative to the front.
pub const SIDE_SQUEEZE: f32 = 0.45;
pub const SUPPORTED_SIZES: [usize; 2] = [64, 128];

const BACKGROUND: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    TShirt,
    LongSleeve,
    TankTop,
    Dress,
    Skirt,
    Pants,
    Shorts,
    Coat,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; NUM_SHAPE_CLASSES] = [
        ShapeClass::TShirt,
        ShapeClass::LongSleeve,
        ShapeClass::TankTop,
        ShapeClass::Dress,
        ShapeClass::Skirt,
        ShapeClass::Pants,
        ShapeClass::Shorts,
        ShapeClass::Coat,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("shape class {index} out of range")))
    }

    fn is_top(self) -> bool {
        matches!(
            self,
            ShapeClass::TShirt
                | ShapeClass::LongSleeve
                | ShapeClass::TankTop
                | ShapeClass::Dress
                | ShapeClass::Coat
        )
    }
}

/// Parameters of one synthetic garment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub shape_class: ShapeClass,
    /// RGB in `[0, 1]`.
    pub base_color: [f32; 3],
    pub texture_id: u32,
    /// Garment scale in `[0.7, 1.0]`.
    pub scale: f32,
}

impl SceneSpec {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let seed = rng.random::<u64>();
        let shape_class = ShapeClass::ALL[rng.random_range(0..NUM_SHAPE_CLASSES)];
        let base_color = [
            rng.random_range(0.05f32..0.95),
            rng.random_range(0.05f32..0.95),
            rng.random_range(0.05f32..0.95),
        ];
        let texture_id = rng.random_range(0..NUM_TEXTURES);
        let scale = rng.random_range(0.7f32..=1.0);
        Self {
            seed,
            shape_class,
            base_color,
            texture_id,
            scale,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.7..=1.0).contains(&self.scale) {
            return Err(Error::InvalidArgument(format!(
                "scale {} outside [0.7, 1.0]",
                self.scale
            )));
        }
        if self.base_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(
                "base_color components must be in [0, 1]".into(),
            ));
        }
        if self.texture_id >= NUM_TEXTURES {
            return Err(Error::InvalidArgument(format!(
                "texture_id {} out of range",
                self.texture_id
            )));
        }
        Ok(())
    }
}

/// Seed-derived pattern parameters.
struct Pattern {
    period: f32,
    phase: f32,
    patch_x: f32,
}

impl Pattern {
    fn from_seed(seed: u64) -> Self {
        let a = splitmix(seed);
        let b = splitmix(a);
        let c = splitmix(b);
        Self {
            period: 0.12 + 0.12 * unit(a),
            phase: unit(b),
            patch_x: 0.08 + 0.12 * unit(c),
        }
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(x: u64) -> f32 {
    (x >> 40) as f32 / (1u64 << 24) as f32
}

fn check_size(size: usize) -> Result<()> {
    if SUPPORTED_SIZES.contains(&size) {
        Ok(())
    } else {
        Err(Error::InvalidRenderSize(size))
    }
}

fn pixel_center(i: usize, size: usize) -> f32 {
    2.0 * (i as f32 + 0.5) / size as f32 - 1.0
}

/// Front silhouette membership in garment-local coordinates (scale already removed).
fn inside_front(class: ShapeClass, x: f32, y: f32, neck_depth: f32) -> bool {
    let ax = x.abs();
    let body = match class {
        ShapeClass::TShirt => {
            let torso = ax < 0.34 && (-0.58..0.62).contains(&y);
            let sleeve_top = -0.58 + 0.45 * (ax - 0.34);
            let sleeve = (0.34..0.66).contains(&ax) && y > sleeve_top && y < sleeve_top + 0.32;
            torso || sleeve
        }
        ShapeClass::LongSleeve => {
            let torso = ax < 0.33 && (-0.58..0.62).contains(&y);
            let sleeve = (0.33..0.52).contains(&ax) && y > -0.58 + 0.2 * (ax - 0.33) && y < 0.5;
            torso || sleeve
        }
        ShapeClass::TankTop => {
            let hw = if y < -0.35 {
                0.18 + 0.35 * (y + 0.6).max(0.0)
            } else {
                0.3
            };
            ax < hw && (-0.6..0.6).contains(&y) && !(ax < 0.1 && y < -0.35)
        }
        ShapeClass::Dress => {
            let hw = 0.2 + 0.3 * ((y + 0.62) / 1.4).clamp(0.0, 1.0);
            ax < hw && (-0.62..0.78).contains(&y)
        }
        ShapeClass::Skirt => {
            let hw = 0.24 + 0.26 * ((y + 0.3) / 0.85).clamp(0.0, 1.0);
            ax < hw && (-0.3..0.55).contains(&y)
        }
        ShapeClass::Pants => {
            let waist = ax < 0.33 && (-0.62..-0.3).contains(&y);
            let leg = (0.04..0.33).contains(&ax) && (-0.3..0.8).contains(&y);
            waist || leg
        }
        ShapeClass::Shorts => {
            let waist = ax < 0.34 && (-0.4..-0.1).contains(&y);
            let leg = (0.05..0.37).contains(&ax) && (-0.1..0.28).contains(&y);
            waist || leg
        }
        ShapeClass::Coat => {
            let torso = ax < 0.4 && (-0.62..0.82).contains(&y);
            let sleeve = (0.4..0.6).contains(&ax) && y > -0.62 + 0.25 * (ax - 0.4) && y < 0.55;
            torso || sleeve
        }
    };
    if !body {
        return false;
    }
    if class.is_top() {
        // Elliptical neckline cut into the top edge.
        let top = match class {
            ShapeClass::TankTop => -0.6,
            ShapeClass::Dress => -0.62,
            ShapeClass::Coat => -0.62,
            _ => -0.58,
        };
        let nx = x / 0.14;
        let ny = (y - top) / neck_depth;
        if nx * nx + ny * ny < 1.0 {
            return false;
        }
    }
    true
}

fn neck_depth(view: ViewLabel) -> f32 {
    match view {
        ViewLabel::Back => 0.05,
        _ => 0.14,
    }
}

fn local_coords(spec: &SceneSpec, view: ViewLabel, px: f32, py: f32) -> (f32, f32) {
    let (x, y) = (px / spec.scale, py / spec.scale);
    match view {
        ViewLabel::Side => (x / SIDE_SQUEEZE, y),
        _ => (x, y),
    }
}

/// Silhouette mask of `spec` seen from `view`, row-major.
pub fn silhouette_mask(spec: &SceneSpec, view: ViewLabel, size: usize) -> Result<Vec<bool>> {
    check_size(size)?;
    spec.validate()?;
    let depth = neck_depth(view);
    let mut mask = Vec::with_capacity(size * size);
    for iy in 0..size {
        for ix in 0..size {
            let (x, y) = local_coords(spec, view, pixel_center(ix, size), pixel_center(iy, size));
            mask.push(inside_front(spec.shape_class, x, y, depth));
        }
    }
    Ok(mask)
}

/// Multiplicative shading in `[0.55, 1.0]` from texture, view details and a soft vertical falloff.
fn shade(spec: &SceneSpec, pattern: &Pattern, view: ViewLabel, x: f32, y: f32) -> (f32, bool) {
    let phase = match view {
        ViewLabel::Back => 1.0 - pattern.phase,
        _ => pattern.phase,
    };
    let p = pattern.period;
    let band = |v: f32| ((v / p + phase).rem_euclid(1.0)) < 0.5;
    let mut s: f32 = match spec.texture_id {
        0 => 1.0,
        1 => {
            if band(y) {
                1.0
            } else {
                0.72
            }
        }
        2 => {
            if band(x) {
                1.0
            } else {
                0.72
            }
        }
        3 => {
            if band(x) ^ band(y) {
                1.0
            } else {
                0.75
            }
        }
        _ => {
            let cx = (x / p + phase).rem_euclid(1.0) - 0.5;
            let cy = (y / p + phase).rem_euclid(1.0) - 0.5;
            if cx * cx + cy * cy < 0.06 {
                0.7
            } else {
                1.0
            }
        }
    };
    let mut tint = false;
    match view {
        ViewLabel::Front => {
            if x.abs() < 0.025 && spec.shape_class.is_top() {
                s *= 0.6;
            }
            let (px, py) = (pattern.patch_x, -0.3);
            if (x - px).abs() < 0.08 && (y - py).abs() < 0.08 {
                tint = true;
            }
        }
        ViewLabel::Side => {
            if x.abs() < 0.04 {
                s *= 0.8;
            }
        }
        ViewLabel::Back => {
            if (-0.5..-0.38).contains(&y) {
                s *= 0.78;
            }
        }
    }
    s *= 1.0 - 0.12 * ((y + 1.0) / 2.0).clamp(0.0, 1.0);
    (s.clamp(0.55, 1.0), tint)
}

/// Renders one view of a scene as a `size` x `size` image.
pub fn render_scene(spec: &SceneSpec, view: ViewLabel, size: usize) -> Result<ImageTensor> {
    let mask = silhouette_mask(spec, view, size)?;
    let pattern = Pattern::from_seed(spec.seed);
    let mut data = Vec::with_capacity(size * size * 3);
    for iy in 0..size {
        for ix in 0..size {
            if !mask[iy * size + ix] {
                data.extend_from_slice(&[BACKGROUND; 3]);
                continue;
            }
            let (x, y) = local_coords(spec, view, pixel_center(ix, size), pixel_center(iy, size));
            let (s, tint) = shade(spec, &pattern, view, x, y);
            for &c in &spec.base_color {
                let c = if tint { 0.5 * c + 0.5 } else { c };
                data.push((2.0 * c * s - 1.0).clamp(-1.0, 1.0));
            }
        }
    }
    ImageTensor::new(size, size, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn red_spec() -> SceneSpec {
        SceneSpec {
            seed: 7,
            shape_class: ShapeClass::TShirt,
            base_color: [1.0, 0.0, 0.0],
            texture_id: 1,
            scale: 0.9,
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = red_spec();
        let a = render_scene(&spec, ViewLabel::Front, 128).unwrap();
        let b = render_scene(&spec, ViewLabel::Front, 128).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!((a.height(), a.width(), a.channels()), (128, 128, 3));
    }

    #[test]
    fn rejects_unsupported_sizes() {
        let err = render_scene(&red_spec(), ViewLabel::Front, 100).unwrap_err();
        assert!(err.to_string().contains("invalid render size"));
    }

    #[test]
    fn red_garment_is_red_inside_its_silhouette() {
        let spec = red_spec();
        let img = render_scene(&spec, ViewLabel::Front, 64).unwrap();
        let mask = silhouette_mask(&spec, ViewLabel::Front, 64).unwrap();
        let (mut r, mut g, mut n) = (0f64, 0f64, 0usize);
        for (i, &inside) in mask.iter().enumerate() {
            if inside {
                let p = img.pixel(i / 64, i % 64);
                r += p[0] as f64;
                g += p[1] as f64;
                n += 1;
            }
        }
        assert!(n > 100);
        assert!(r / n as f64 > g / n as f64);
    }

    #[test]
    fn side_view_is_narrower_and_back_differs_from_front() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..16 {
            let spec = SceneSpec::random(&mut rng);
            let area = |v| {
                silhouette_mask(&spec, v, 64)
                    .unwrap()
                    .iter()
                    .filter(|&&m| m)
                    .count()
            };
            let front = area(ViewLabel::Front);
            assert!(front > 0);
            assert!(area(ViewLabel::Side) < front);
            let f = render_scene(&spec, ViewLabel::Front, 64).unwrap();
            let b = render_scene(&spec, ViewLabel::Back, 64).unwrap();
            assert_ne!(f.data(), b.data());
        }
    }
}
