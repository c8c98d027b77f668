//! Random projective misalignment and inverse-mapping warps.

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffengine::bilinear_at;
use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 3x3 projective transform mapping input coordinates `(x, y, 1)` to output coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub const IDENTITY: Self = Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `degrees` about `(cx, cy)`.
    pub fn rotation_about(degrees: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let rot = Self([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
        Self::translation(cx, cy).then_after(&rot).then_after(&Self::translation(-cx, -cy))
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn then_after(&self, rhs: &Self) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Self(m)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return contract_err(format!("homography is singular (det = {det:e})"));
        }
        let m = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        if *self == Self::IDENTITY {
            return Ok(Self::IDENTITY);
        }
        Ok(Self(adj.map(|row| row.map(|v| v / det))))
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        ((m[0][0] * x + m[0][1] * y + m[0][2]) / w, (m[1][0] * x + m[1][1] * y + m[1][2]) / w)
    }

    /// Homography taking each `src` point onto the matching `dst` point.
    pub fn from_correspondences(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Self> {
        let mut a = [[0.0f64; 9]; 8];
        for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        // Gauss-Jordan elimination with partial pivoting on the augmented 8x9 system.
        for col in 0..8 {
            let pivot = (col..8).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
            if a[pivot][col].abs() < 1e-12 {
                return contract_err("degenerate point correspondences");
            }
            a.swap(col, pivot);
            let p = a[col][col];
            a[col].iter_mut().for_each(|v| *v /= p);
            for r in 0..8 {
                if r != col {
                    let f = a[r][col];
                    if f != 0.0 {
                        for c in col..9 {
                            a[r][c] -= f * a[col][c];
                        }
                    }
                }
            }
        }
        let h: Vec<f64> = (0..8).map(|r| a[r][8]).collect();
        Ok(Self([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]))
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|r| format!("{} {} {}\n", r[0], r[1], r[2])).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { what: "homography".into(), detail: e.to_string() })?;
        if vals.len() != 9 {
            return Err(Error::Parse { what: "homography".into(), detail: format!("expected 9 numbers, got {}", vals.len()) });
        }
        Ok(Self([[vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5]], [vals[6], vals[7], vals[8]]]))
    }
}

impl fmt::Display for Homography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Ranges of the synthetic misalignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MisalignSpec {
    /// Translation sampled uniformly in `[-translation, translation]` pixels per axis.
    pub translation: f64,
    /// Rotation sampled uniformly in `[-rotation, rotation]` degrees about the image center.
    pub rotation: f64,
    /// Corner displacement in `[-perspective, perspective] * min(H, W)` per coordinate.
    pub perspective: f64,
    pub seed: u64,
}

impl MisalignSpec {
    pub const NONE: Self = Self { translation: 0.0, rotation: 0.0, perspective: 0.0, seed: 0 };

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.translation) && ok(self.rotation) && ok(self.perspective) {
            Ok(())
        } else {
            contract_err(format!("misalignment ranges must be finite and non-negative: {self:?}"))
        }
    }
}

impl Default for MisalignSpec {
    fn default() -> Self {
        Self { translation: 8.0, rotation: 4.0, perspective: 0.02, seed: 0 }
    }
}

fn symmetric(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range == 0.0 {
        0.0
    } else {
        Uniform::new_inclusive(-range, range).sample(rng)
    }
}

/// `P * R * T` for an image of `height x width`: translation, then rotation
/// about the center, then a corner-jitter perspective distortion.
pub fn random_homography(spec: &MisalignSpec, height: usize, width: usize) -> Result<Homography> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tx = symmetric(&mut rng, spec.translation);
    let ty = symmetric(&mut rng, spec.translation);
    let angle = symmetric(&mut rng, spec.rotation);
    let t = Homography::translation(tx, ty);
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let r = if angle == 0.0 { Homography::IDENTITY } else { Homography::rotation_about(angle, cx, cy) };
    let p = if spec.perspective == 0.0 {
        Homography::IDENTITY
    } else {
        let amp = spec.perspective * height.min(width) as f64;
        let (w1, h1) = (width as f64 - 1.0, height as f64 - 1.0);
        let corners = [(0.0, 0.0), (w1, 0.0), (w1, h1), (0.0, h1)];
        let moved = corners.map(|(x, y)| (x + symmetric(&mut rng, amp), y + symmetric(&mut rng, amp)));
        Homography::from_correspondences(&corners, &moved)?
    };
    Ok(p.then_after(&r).then_after(&t))
}

/// Inverse-mapping bilinear warp: `out(p) = image(H^-1 p)`, edges replicated.
pub fn warp_homography<T: Scalar>(image: &Tensor<T>, h: &Homography) -> Result<Tensor<T>> {
    let (c, height, width) = image.dims3()?;
    let inv = h.inverse()?;
    let mut coords = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            coords.push((T::lit(sx), T::lit(sy)));
        }
    }
    let mut out = vec![T::zero(); c * height * width];
    for ci in 0..c {
        let plane = image.channel(ci);
        for (o, &(sx, sy)) in out[ci * height * width..].iter_mut().zip(&coords) {
            *o = bilinear_at(plane, height, width, sx, sy);
        }
    }
    Tensor::new(vec![c, height, width], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn3(1, h, w, |_, y, x| 0.5 + 0.25 * ((x as f64) * 0.15).sin() * ((y as f64) * 0.1).cos())
    }

    #[test]
    fn zero_spec_is_identity() {
        let h = random_homography(&MisalignSpec { seed: 42, ..MisalignSpec::NONE }, 32, 48).unwrap();
        assert_eq!(h, Homography::IDENTITY);
    }

    #[test]
    fn seeded_and_reproducible() {
        let spec = MisalignSpec { seed: 9, ..MisalignSpec::default() };
        assert_eq!(random_homography(&spec, 64, 64).unwrap(), random_homography(&spec, 64, 64).unwrap());
        let other = MisalignSpec { seed: 10, ..spec };
        assert_ne!(random_homography(&spec, 64, 64).unwrap(), random_homography(&other, 64, 64).unwrap());
    }

    #[test]
    fn translation_only_keeps_linear_block() {
        for seed in 0..10 {
            let spec = MisalignSpec { translation: 8.0, rotation: 0.0, perspective: 0.0, seed };
            let h = random_homography(&spec, 64, 64).unwrap();
            assert_eq!([h.0[0][0], h.0[0][1], h.0[1][0], h.0[1][1]], [1.0, 0.0, 0.0, 1.0]);
            assert!(h.0[0][2].abs() <= 8.0 && h.0[1][2].abs() <= 8.0);
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = smooth(20, 24);
        assert_eq!(warp_homography(&img, &Homography::IDENTITY).unwrap(), img);
    }

    #[test]
    fn integer_translation_shifts() {
        let img = smooth(16, 20);
        let out = warp_homography(&img, &Homography::translation(5.0, 0.0)).unwrap();
        for y in 0..16 {
            for x in 5..20 {
                assert!((out.at3(0, y, x) - img.at3(0, y, x - 5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_round_trip() {
        let img = smooth(64, 64);
        let fwd = Homography::rotation_about(7.0, 31.5, 31.5);
        let back = Homography::rotation_about(-7.0, 31.5, 31.5);
        let out = warp_homography(&warp_homography(&img, &fwd).unwrap(), &back).unwrap();
        for y in 12..52 {
            for x in 12..52 {
                assert!((out.at3(0, y, x) - img.at3(0, y, x)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let sing = Homography([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(warp_homography(&smooth(4, 4), &sing).is_err());
    }

    #[test]
    fn correspondences_are_reproduced() {
        let src = [(0.0, 0.0), (10.0, 0.0), (10.0, 8.0), (0.0, 8.0)];
        let dst = [(0.3, -0.2), (10.1, 0.4), (9.7, 8.2), (-0.1, 7.6)];
        let h = Homography::from_correspondences(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let (u, v) = h.apply(s.0, s.1);
            assert!((u - d.0).abs() < 1e-9 && (v - d.1).abs() < 1e-9);
        }
        assert_eq!(Homography::parse(&h.to_text()).unwrap(), h);
    }
}
