//! Procedural shape images with exact foreground masks.
//!
//! Each class is one shape family drawn at a random position and size in a
//! random colour over a noisy background of a contrasting colour.

use alloc::format;
use rand::Rng;

use super::episode::{Sample, SampleSource};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
    Ring,
    Cross,
    DiagonalStripes,
    Diamond,
    Checker,
    HBar,
    LBar,
    DotGrid,
    Frame,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 12] = [
        ShapeKind::Disc,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Ring,
        ShapeKind::Cross,
        ShapeKind::DiagonalStripes,
        ShapeKind::Diamond,
        ShapeKind::Checker,
        ShapeKind::HBar,
        ShapeKind::LBar,
        ShapeKind::DotGrid,
        ShapeKind::Frame,
    ];

    /// Shape family of a 1-based class id.
    pub fn for_class(class_id: usize) -> Result<Self> {
        class_id
            .checked_sub(1)
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or(Error::ClassOutOfRange(class_id))
    }

    /// Whether offset `(dx, dy)` from the centre lies inside the shape of radius `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (libm::fabs(dx), libm::fabs(dy));
        let inside_square = ax <= r && ay <= r;
        let cell = |v: f64, size: f64| libm::floor((v + r) / size) as i64;
        match self {
            ShapeKind::Disc => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => inside_square,
            ShapeKind::Triangle => ay <= r && ax <= (dy + r) / 2.0,
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.3 * r * r
            }
            ShapeKind::Cross => (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r),
            ShapeKind::DiagonalStripes => {
                inside_square && libm::floor((dx + dy + 2.0 * r) / (r / 2.0)) as i64 % 2 == 0
            }
            ShapeKind::Diamond => ax + ay <= r,
            ShapeKind::Checker => inside_square && (cell(dx, r / 2.0) + cell(dy, r / 2.0)) % 2 == 0,
            ShapeKind::HBar => inside_square && (ax >= 0.55 * r || ay <= 0.25 * r),
            ShapeKind::LBar => inside_square && (dx <= -0.3 * r || dy >= 0.3 * r),
            ShapeKind::DotGrid => {
                let spacing = r / 2.0;
                let near = |v: f64| v - spacing * libm::round(v / spacing);
                let (ox, oy) = (near(dx), near(dy));
                inside_square && ox * ox + oy * oy <= (0.3 * spacing) * (0.3 * spacing)
            }
            ShapeKind::Frame => inside_square && ax.max(ay) >= 0.6 * r,
        }
    }
}

/// Parameters of the synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub image_extent: usize,
    /// Multiple of 4, at most 12.
    pub class_count: usize,
    pub samples_per_class: usize,
    /// Amplitude of uniform per-pixel background noise.
    pub noise: f64,
    /// Amplitude of the class-specific brightness texture on the foreground.
    pub texture: f64,
    /// Minimum L1 distance between foreground and background colours.
    pub min_contrast: f64,
    /// Shape radius range as a fraction of the image extent.
    pub radius_range: (f64, f64),
    /// Accepted foreground fraction of the image.
    pub fraction_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_extent: 64,
            class_count: 12,
            samples_per_class: 1000,
            noise: 0.08,
            texture: 0.15,
            min_contrast: 0.9,
            radius_range: (0.18, 0.4),
            fraction_range: (0.05, 0.6),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0
            || self.class_count % 4 != 0
            || self.class_count > ShapeKind::ALL.len()
        {
            return Err(Error::ClassCount(self.class_count));
        }
        let (r0, r1) = self.radius_range;
        let (f0, f1) = self.fraction_range;
        let ok = self.image_extent >= 8
            && self.samples_per_class > 0
            && (0.0..=0.5).contains(&self.noise)
            && (0.0..=0.5).contains(&self.texture)
            && (0.0..=2.0).contains(&self.min_contrast)
            && 0.0 < r0
            && r0 <= r1
            && r1 <= 0.5
            && 0.0 <= f0
            && f0 < f1
            && f1 <= 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "invalid synthetic dataset parameters: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Centre and radius of a drawn shape, in pixel units (pixel `(x, y)` has centre `(x + 0.5, y + 0.5)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeGeometry {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl ShapeGeometry {
    pub fn covers_pixel(&self, x: usize, y: usize) -> bool {
        self.kind.contains(
            x as f64 + 0.5 - self.cx,
            y as f64 + 0.5 - self.cy,
            self.radius,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: Tensor,
    pub mask: Tensor,
    pub geometry: ShapeGeometry,
}

const MAX_GEOMETRY_TRIES: usize = 256;

/// Sample `index` of class `class_id` (1-based); a pure function of
/// `(spec, class_id, index)`.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    class_id: usize,
    index: usize,
) -> Result<SyntheticSample> {
    spec.validate()?;
    if class_id == 0 || class_id > spec.class_count {
        return Err(Error::ClassOutOfRange(class_id));
    }
    let kind = ShapeKind::for_class(class_id)?;
    let mut rng = stream(
        spec.seed,
        Purpose::Sample,
        ((class_id as u64) << 32) | index as u64,
    );
    let e = spec.image_extent;
    let ef = e as f64;
    let area = (e * e) as f64;

    let mut found = None;
    for _ in 0..MAX_GEOMETRY_TRIES {
        let radius = ef * rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
        let cx = rng.gen_range(radius..=ef - radius);
        let cy = rng.gen_range(radius..=ef - radius);
        let geometry = ShapeGeometry {
            kind,
            cx,
            cy,
            radius,
        };
        let mask = Tensor::from_fn(&[e, e], |k| {
            f64::from(u8::from(geometry.covers_pixel(k % e, k / e)))
        });
        let frac = mask.sum() / area;
        if (spec.fraction_range.0..=spec.fraction_range.1).contains(&frac) {
            found = Some((geometry, mask));
            break;
        }
    }
    let (geometry, mask) = found.ok_or_else(|| {
        Error::Sampling(format!(
            "class {class_id} sample {index}: no shape within the foreground fraction bounds"
        ))
    })?;

    let bg: [f64; 3] = core::array::from_fn(|_| rng.gen::<f64>());
    let mut fg: [f64; 3] = core::array::from_fn(|_| rng.gen::<f64>());
    for _ in 0..MAX_GEOMETRY_TRIES {
        if fg
            .iter()
            .zip(&bg)
            .map(|(a, b)| libm::fabs(a - b))
            .sum::<f64>()
            >= spec.min_contrast
        {
            break;
        }
        fg = core::array::from_fn(|_| rng.gen::<f64>());
    }
    let freq = 0.35 + 0.08 * class_id as f64;
    let mut image = Tensor::zeros(&[3, e, e]);
    let data = image.data_mut();
    for y in 0..e {
        for x in 0..e {
            let inside = mask.at2(y, x) == 1.0;
            let shade = 1.0 + spec.texture * libm::sin(freq * (x as f64 + 0.5 * y as f64));
            for c in 0..3 {
                let noise = spec.noise * (2.0 * rng.gen::<f64>() - 1.0);
                let v = if inside { fg[c] * shade } else { bg[c] + noise };
                data[(c * e + y) * e + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(SyntheticSample {
        image,
        mask,
        geometry,
    })
}

/// [`SampleSource`] that generates samples on demand.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    pub spec: SyntheticSpec,
}

impl SyntheticSource {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl SampleSource for SyntheticSource {
    fn class_count(&self) -> usize {
        self.spec.class_count
    }

    fn samples_in_class(&self, class_id: usize) -> usize {
        if (1..=self.spec.class_count).contains(&class_id) {
            self.spec.samples_per_class
        } else {
            0
        }
    }

    fn sample(&self, class_id: usize, index: usize) -> Result<Sample> {
        let s = generate_synthetic(&self.spec, class_id, index)?;
        Ok(Sample {
            image: s.image,
            mask: s.mask,
        })
    }
}
