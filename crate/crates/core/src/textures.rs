//! Procedural piecewise-smooth scenes used as a stand-in for natural images.

use rand::Rng;

use crate::Image;

#[derive(Clone, Copy)]
enum Fill {
    Flat(f32),
    Gradient { base: f32, dr: f32, dc: f32 },
    Stripes { base: f32, amp: f32, fr: f32, fc: f32, phase: f32 },
}

impl Fill {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let base = rng.random_range(0.1f32..0.9);
        match rng.random_range(0..4) {
            0 | 1 => Fill::Flat(base),
            2 => Fill::Gradient {
                base,
                dr: rng.random_range(-0.01f32..0.01),
                dc: rng.random_range(-0.01f32..0.01),
            },
            _ => {
                let period = rng.random_range(6.0f32..20.0);
                let angle = rng.random_range(0.0f32..std::f32::consts::PI);
                let f = std::f32::consts::TAU / period;
                Fill::Stripes {
                    base,
                    amp: rng.random_range(0.05f32..0.2),
                    fr: f * angle.sin(),
                    fc: f * angle.cos(),
                    phase: rng.random_range(0.0f32..std::f32::consts::TAU),
                }
            }
        }
    }

    fn at(&self, r: f32, c: f32) -> f32 {
        match *self {
            Fill::Flat(v) => v,
            Fill::Gradient { base, dr, dc } => base + dr * r + dc * c,
            Fill::Stripes { base, amp, fr, fc, phase } => base + amp * (fr * r + fc * c + phase).sin(),
        }
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Rect { r0: f32, c0: f32, r1: f32, c1: f32 },
    Disk { r: f32, c: f32, radius: f32 },
    Ellipse { r: f32, c: f32, a: f32, b: f32, cos: f32, sin: f32 },
}

impl Shape {
    fn random<R: Rng + ?Sized>(h: f32, w: f32, rng: &mut R) -> Self {
        let scale = h.min(w);
        match rng.random_range(0..3) {
            0 => {
                let (r, c) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
                let (hh, hw) = (
                    rng.random_range(0.08..0.4) * scale,
                    rng.random_range(0.08..0.4) * scale,
                );
                Shape::Rect { r0: r - hh, c0: c - hw, r1: r + hh, c1: c + hw }
            }
            1 => Shape::Disk {
                r: rng.random_range(0.0..h),
                c: rng.random_range(0.0..w),
                radius: rng.random_range(0.05..0.3) * scale,
            },
            _ => {
                let t = rng.random_range(0.0f32..std::f32::consts::PI);
                Shape::Ellipse {
                    r: rng.random_range(0.0..h),
                    c: rng.random_range(0.0..w),
                    a: rng.random_range(0.08..0.35) * scale,
                    b: rng.random_range(0.04..0.15) * scale,
                    cos: t.cos(),
                    sin: t.sin(),
                }
            }
        }
    }

    fn contains(&self, r: f32, c: f32) -> bool {
        match *self {
            Shape::Rect { r0, c0, r1, c1 } => r >= r0 && r < r1 && c >= c0 && c < c1,
            Shape::Disk { r: cr, c: cc, radius } => (r - cr).powi(2) + (c - cc).powi(2) <= radius * radius,
            Shape::Ellipse { r: cr, c: cc, a, b, cos, sin } => {
                let (dr, dc) = (r - cr, c - cc);
                let u = dc * cos + dr * sin;
                let v = -dc * sin + dr * cos;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
        }
    }
}

/// Draws a scene of overlapping flat, gradient and striped shapes over a
/// smooth background. Values stay inside `[0, 1]`; color images use an
/// independent tint per shape.
pub fn scene<R: Rng + ?Sized>(height: usize, width: usize, channels: usize, rng: &mut R) -> Image {
    let (h, w) = (height as f32, width as f32);
    let background: Vec<Fill> = (0..channels)
        .map(|_| Fill::Gradient {
            base: rng.random_range(0.2f32..0.8),
            dr: rng.random_range(-0.3f32..0.3) / h.max(1.0),
            dc: rng.random_range(-0.3f32..0.3) / w.max(1.0),
        })
        .collect();
    let count = rng.random_range(4..=12);
    let layers: Vec<(Shape, Vec<Fill>)> = (0..count)
        .map(|_| {
            let shape = Shape::random(h, w, rng);
            let fill = Fill::random(rng);
            let fills = (0..channels)
                .map(|ch| {
                    if ch == 0 {
                        fill
                    } else {
                        let shift = rng.random_range(-0.2f32..0.2);
                        match fill {
                            Fill::Flat(v) => Fill::Flat(v + shift),
                            Fill::Gradient { base, dr, dc } => Fill::Gradient { base: base + shift, dr, dc },
                            Fill::Stripes { base, amp, fr, fc, phase } => Fill::Stripes {
                                base: base + shift,
                                amp,
                                fr,
                                fc,
                                phase,
                            },
                        }
                    }
                })
                .collect();
            (shape, fills)
        })
        .collect();

    Image::from_fn(height, width, channels, |r, c, ch| {
        let (rf, cf) = (r as f32 + 0.5, c as f32 + 0.5);
        let mut v = background[ch].at(rf, cf);
        for (shape, fills) in &layers {
            if shape.contains(rf, cf) {
                v = fills[ch].at(rf, cf);
            }
        }
        v.clamp(0.0, 1.0)
    })
    .expect("channels validated by caller")
}

/// `count` scenes from consecutive draws of one generator.
pub fn scenes<R: Rng + ?Sized>(count: usize, height: usize, width: usize, channels: usize, rng: &mut R) -> Vec<Image> {
    (0..count).map(|_| scene(height, width, channels, rng)).collect()
}
