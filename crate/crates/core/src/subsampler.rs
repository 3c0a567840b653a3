//! Pair sub-samplers `G = (g1, g2)`.
//!
//! An image is divided into `floor(H/k) x floor(W/k)` cells. For each cell
//! the sampler holds two distinct in-cell coordinates; `g1` gathers the
//! first of them from every cell into a half-resolution image and `g2` the
//! second. Rows and columns beyond `k * floor(./k)` are ignored.
//!
//! The neighbor sampler draws, independently per cell, an ordered pair of
//! 4-connected pixels. The fix-location sampler draws one ordered pair of
//! distinct locations and replicates it into every cell.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::{Error, Image, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Neighbor,
    FixLocation,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Neighbor => "neighbor",
            SamplerKind::FixLocation => "fix-location",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neighbor" | "random" => Ok(SamplerKind::Neighbor),
            "fix-location" | "fix" => Ok(SamplerKind::FixLocation),
            _ => Err(Error::InvalidConfig(format!("unknown sampler kind {s:?}"))),
        }
    }
}

/// Two in-cell coordinates `(r1, c1)` and `(r2, c2)`, each in `[0, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellPair {
    pub r1: u8,
    pub c1: u8,
    pub r2: u8,
    pub c2: u8,
}

impl CellPair {
    pub fn manhattan(&self) -> usize {
        self.r1.abs_diff(self.r2) as usize + self.c1.abs_diff(self.c2) as usize
    }
}

/// Which half of the pair to gather.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Half {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubSampler {
    k: usize,
    cells_h: usize,
    cells_w: usize,
    pairs: Vec<CellPair>,
}

/// All ordered pairs of 4-connected locations inside a `k x k` cell.
/// There are `4k(k-1)` of them; eight for `k = 2`.
pub fn neighbor_pairs(k: usize) -> Vec<CellPair> {
    let mut out = Vec::with_capacity(4 * k * (k - 1));
    for r1 in 0..k {
        for c1 in 0..k {
            for r2 in 0..k {
                for c2 in 0..k {
                    if r1.abs_diff(r2) + c1.abs_diff(c2) == 1 {
                        out.push(CellPair {
                            r1: r1 as u8,
                            c1: c1 as u8,
                            r2: r2 as u8,
                            c2: c2 as u8,
                        });
                    }
                }
            }
        }
    }
    out
}

fn check_geometry(h: usize, w: usize, k: usize) -> Result<()> {
    if !(2..=u8::MAX as usize).contains(&k) {
        return Err(Error::InvalidCellSize(k));
    }
    if h < k || w < k {
        return Err(Error::ImageSmallerThanCell { height: h, width: w, k });
    }
    Ok(())
}

impl SubSampler {
    pub fn generate<R: Rng + ?Sized>(
        kind: SamplerKind,
        h: usize,
        w: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        match kind {
            SamplerKind::Neighbor => Self::neighbor(h, w, k, rng),
            SamplerKind::FixLocation => Self::fix_location(h, w, k, rng),
        }
    }

    /// Random neighbor sub-sampler: one uniformly drawn ordered 4-connected
    /// pair per cell.
    pub fn neighbor<R: Rng + ?Sized>(h: usize, w: usize, k: usize, rng: &mut R) -> Result<Self> {
        check_geometry(h, w, k)?;
        let choices = neighbor_pairs(k);
        let (cells_h, cells_w) = (h / k, w / k);
        let pairs = (0..cells_h * cells_w)
            .map(|_| choices[rng.random_range(0..choices.len())])
            .collect();
        Ok(Self {
            k,
            cells_h,
            cells_w,
            pairs,
        })
    }

    /// Fix-location sub-sampler: two distinct locations out of the `k^2`
    /// drawn without replacement, shared by every cell.
    pub fn fix_location<R: Rng + ?Sized>(h: usize, w: usize, k: usize, rng: &mut R) -> Result<Self> {
        check_geometry(h, w, k)?;
        let n = k * k;
        let first = rng.random_range(0..n);
        let mut second = rng.random_range(0..n - 1);
        if second >= first {
            second += 1;
        }
        let pair = CellPair {
            r1: (first / k) as u8,
            c1: (first % k) as u8,
            r2: (second / k) as u8,
            c2: (second % k) as u8,
        };
        let (cells_h, cells_w) = (h / k, w / k);
        Ok(Self {
            k,
            cells_h,
            cells_w,
            pairs: vec![pair; cells_h * cells_w],
        })
    }

    /// Builds a sampler from explicit per-cell pairs (row-major over cells).
    pub fn from_pairs(k: usize, cells_h: usize, cells_w: usize, pairs: Vec<CellPair>) -> Result<Self> {
        check_geometry(cells_h * k, cells_w * k, k)?;
        if pairs.len() != cells_h * cells_w {
            return Err(Error::ShapeMismatch(format!(
                "{} pairs for {cells_h}x{cells_w} cells",
                pairs.len()
            )));
        }
        let k8 = k as u8;
        if let Some(bad) = pairs
            .iter()
            .find(|p| p.r1 >= k8 || p.c1 >= k8 || p.r2 >= k8 || p.c2 >= k8 || p.manhattan() == 0)
        {
            return Err(Error::ShapeMismatch(format!("invalid cell pair {bad:?} for k={k}")));
        }
        Ok(Self {
            k,
            cells_h,
            cells_w,
            pairs,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cells_h(&self) -> usize {
        self.cells_h
    }

    pub fn cells_w(&self) -> usize {
        self.cells_w
    }

    pub fn pairs(&self) -> &[CellPair] {
        &self.pairs
    }

    pub fn pair(&self, i: usize, j: usize) -> CellPair {
        self.pairs[i * self.cells_w + j]
    }

    fn check_source(&self, h: usize, w: usize) -> Result<()> {
        if h / self.k != self.cells_h || w / self.k != self.cells_w {
            return Err(Error::ShapeMismatch(format!(
                "sampler for {}x{} cells of size {} applied to {h}x{w} image",
                self.cells_h, self.cells_w, self.k
            )));
        }
        Ok(())
    }

    /// Gathers one half from planar `channels x h x w` data into planar
    /// `channels x cells_h x cells_w` output.
    pub fn gather_planes<T: Copy>(
        &self,
        src: &[T],
        channels: usize,
        h: usize,
        w: usize,
        half: Half,
        out: &mut Vec<T>,
    ) -> Result<()> {
        self.check_source(h, w)?;
        if src.len() != channels * h * w {
            return Err(Error::ShapeMismatch(format!(
                "planar buffer of {} values for {channels}x{h}x{w}",
                src.len()
            )));
        }
        let k = self.k;
        for ch in 0..channels {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for i in 0..self.cells_h {
                for j in 0..self.cells_w {
                    let p = self.pairs[i * self.cells_w + j];
                    let (r, c) = match half {
                        Half::First => (p.r1, p.c1),
                        Half::Second => (p.r2, p.c2),
                    };
                    out.push(plane[(k * i + r as usize) * w + k * j + c as usize]);
                }
            }
        }
        Ok(())
    }

    /// `(g1(img), g2(img))`: a pure gather, no interpolation.
    pub fn apply(&self, img: &Image) -> Result<(Image, Image)> {
        self.check_source(img.height(), img.width())?;
        let k = self.k;
        let ch = img.channels();
        let mut first = Vec::with_capacity(self.pairs.len() * ch);
        let mut second = Vec::with_capacity(self.pairs.len() * ch);
        for i in 0..self.cells_h {
            for j in 0..self.cells_w {
                let p = self.pairs[i * self.cells_w + j];
                for c in 0..ch {
                    first.push(img.get(k * i + p.r1 as usize, k * j + p.c1 as usize, c));
                    second.push(img.get(k * i + p.r2 as usize, k * j + p.c2 as usize, c));
                }
            }
        }
        Ok((
            Image::new(self.cells_h, self.cells_w, ch, first)?,
            Image::new(self.cells_h, self.cells_w, ch, second)?,
        ))
    }

    /// Text dump: one line per cell, `i j r1 c1 r2 c2`.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(self.pairs.len() * 16);
        for i in 0..self.cells_h {
            for j in 0..self.cells_w {
                let p = self.pair(i, j);
                out.push_str(&format!("{i} {j} {} {} {} {}\n", p.r1, p.c1, p.r2, p.c2));
            }
        }
        out
    }
}

/// Mean absolute difference between `g1(x)` and `g2(x)` per gathered value,
/// averaged over `draws` fresh samplers: the size of the ground-truth gap
/// between the two sub-images of a clean image.
pub fn mean_ground_truth_gap<R: Rng + ?Sized>(
    x: &Image,
    kind: SamplerKind,
    k: usize,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..draws {
        let g = SubSampler::generate(kind, x.height(), x.width(), k, rng)?;
        let (a, b) = g.apply(x)?;
        total += a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| f64::from((p - q).abs()))
            .sum::<f64>();
        count += a.data().len();
    }
    Ok(total / count.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn eight_ordered_pairs_for_k2() {
        let pairs = neighbor_pairs(2);
        assert_eq!(pairs.len(), 8);
        assert!(pairs.iter().all(|p| p.manhattan() == 1));
        assert_eq!(neighbor_pairs(3).len(), 24);
    }

    #[test]
    fn full_geometry() {
        let g = SubSampler::neighbor(256, 256, 2, &mut seeded_rng(0)).unwrap();
        assert_eq!((g.cells_h(), g.cells_w()), (128, 128));
        assert!(g.pairs().iter().all(|p| p.manhattan() == 1));
    }

    #[test]
    fn rejects_small_images_and_bad_k() {
        let mut rng = seeded_rng(0);
        assert!(matches!(
            SubSampler::neighbor(1, 8, 2, &mut rng),
            Err(Error::ImageSmallerThanCell { .. })
        ));
        assert!(matches!(
            SubSampler::fix_location(8, 8, 1, &mut rng),
            Err(Error::InvalidCellSize(1))
        ));
    }

    #[test]
    fn no_diagonal_neighbors() {
        let mut rng = seeded_rng(11);
        let mut cells = 0;
        while cells < 100_000 {
            let g = SubSampler::neighbor(64, 64, 2, &mut rng).unwrap();
            assert!(g.pairs().iter().all(|p| p.manhattan() == 1));
            cells += g.pairs().len();
        }
    }

    #[test]
    fn fix_location_is_replicated_and_may_be_diagonal() {
        let trials = 10_000;
        let mut diagonal = 0;
        for seed in 0..trials {
            let g = SubSampler::fix_location(8, 6, 2, &mut seeded_rng(seed)).unwrap();
            let first = g.pairs()[0];
            assert!(g.pairs().iter().all(|p| *p == first));
            assert_ne!((first.r1, first.c1), (first.r2, first.c2));
            if first.manhattan() == 2 {
                diagonal += 1;
            }
        }
        // 4 of the 12 ordered pairs are diagonal
        let p = 1.0 / 3.0;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        let freq = diagonal as f64 / trials as f64;
        assert!((freq - p).abs() < 4.0 * se, "diagonal frequency {freq}");
    }

    #[test]
    fn fix_location_pairs_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut counts: HashMap<CellPair, usize> = HashMap::new();
        let trials = 12_000;
        for seed in 0..trials {
            let g = SubSampler::fix_location(2, 2, 2, &mut seeded_rng(seed)).unwrap();
            *counts.entry(g.pairs()[0]).or_default() += 1;
        }
        assert_eq!(counts.len(), 12);
        let expected = trials as f64 / 12.0;
        let chi2: f64 = counts.values().map(|&n| (n as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(11.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn gather_matches_direct_indexing() {
        let img = Image::from_fn(4, 4, 1, |r, c, _| (10 * r + c) as f32).unwrap();
        let g = SubSampler::neighbor(4, 4, 2, &mut seeded_rng(5)).unwrap();
        let (a, b) = g.apply(&img).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let p = g.pair(i, j);
                let v1 = 10 * (2 * i + p.r1 as usize) + 2 * j + p.c1 as usize;
                let v2 = 10 * (2 * i + p.r2 as usize) + 2 * j + p.c2 as usize;
                assert_eq!(a.get(i, j, 0), v1 as f32);
                assert_eq!(b.get(i, j, 0), v2 as f32);
            }
        }
    }

    #[test]
    fn constant_image_gives_constant_halves() {
        let img = Image::filled(6, 6, 3, 0.25).unwrap();
        let g = SubSampler::neighbor(6, 6, 2, &mut seeded_rng(9)).unwrap();
        let (a, b) = g.apply(&img).unwrap();
        assert!(a.data().iter().chain(b.data()).all(|&v| v == 0.25));
    }

    #[test]
    fn same_sampler_selects_same_coordinates() {
        let g = SubSampler::neighbor(8, 8, 2, &mut seeded_rng(1)).unwrap();
        let x = Image::from_fn(8, 8, 1, |r, c, _| (r * 8 + c) as f32).unwrap();
        let y = x.map(|v| 2.0 * v + 1.0);
        let (xa, xb) = g.apply(&x).unwrap();
        let (ya, yb) = g.apply(&y).unwrap();
        assert_eq!(xa.map(|v| 2.0 * v + 1.0), ya);
        assert_eq!(xb.map(|v| 2.0 * v + 1.0), yb);
    }

    #[test]
    fn planar_gather_agrees_with_image_gather() {
        let img = Image::from_fn(7, 9, 3, |r, c, ch| (r * 100 + c * 10 + ch) as f32).unwrap();
        let g = SubSampler::neighbor(7, 9, 2, &mut seeded_rng(2)).unwrap();
        let (a, b) = g.apply(&img).unwrap();
        let planes = img.to_planes();
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        g.gather_planes(&planes, 3, 7, 9, Half::First, &mut pa).unwrap();
        g.gather_planes(&planes, 3, 7, 9, Half::Second, &mut pb).unwrap();
        assert_eq!(pa, a.to_planes());
        assert_eq!(pb, b.to_planes());
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let g = SubSampler::neighbor(8, 8, 2, &mut seeded_rng(1)).unwrap();
        assert!(g.apply(&Image::filled(10, 8, 1, 0.0).unwrap()).is_err());
        // odd trailing row is ignored, not a mismatch
        assert!(g.apply(&Image::filled(9, 8, 1, 0.0).unwrap()).is_ok());
    }

    #[test]
    fn dump_format() {
        let pairs = vec![CellPair { r1: 0, c1: 0, r2: 0, c2: 1 }, CellPair { r1: 1, c1: 1, r2: 0, c2: 1 }];
        let g = SubSampler::from_pairs(2, 1, 2, pairs).unwrap();
        assert_eq!(g.dump(), "0 0 0 0 0 1\n0 1 1 1 0 1\n");
    }

    #[test]
    fn ground_truth_gap_is_small_on_smooth_images() {
        let smooth = Image::from_fn(32, 32, 1, |r, c, _| (r + c) as f32 / 64.0).unwrap();
        let gap = mean_ground_truth_gap(&smooth, SamplerKind::Neighbor, 2, 20, &mut seeded_rng(0)).unwrap();
        assert!((gap - 1.0 / 64.0).abs() < 1e-6, "gap {gap}");
    }

    proptest! {
        #[test]
        fn invariants_hold(h in 2usize..40, w in 2usize..40, seed in any::<u64>(), fix in any::<bool>()) {
            let kind = if fix { SamplerKind::FixLocation } else { SamplerKind::Neighbor };
            let a = SubSampler::generate(kind, h, w, 2, &mut seeded_rng(seed)).unwrap();
            let b = SubSampler::generate(kind, h, w, 2, &mut seeded_rng(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!((a.cells_h(), a.cells_w()), (h / 2, w / 2));
            for p in a.pairs() {
                prop_assert!(p.manhattan() >= 1);
                if !fix {
                    prop_assert_eq!(p.manhattan(), 1);
                }
            }
            let img = Image::from_fn(h, w, 1, |r, c, _| (r * w + c) as f32).unwrap();
            let (g1, g2) = a.apply(&img).unwrap();
            prop_assert_eq!((g1.height(), g1.width()), (h / 2, w / 2));
            // disjoint coordinates within each cell
            for (x, y) in g1.data().iter().zip(g2.data()) {
                prop_assert_ne!(x, y);
            }
        }
    }
}
