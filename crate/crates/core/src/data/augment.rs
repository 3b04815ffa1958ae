//! Online augmentation: one transform per draw, applied identically to
//! every slice; labels are untouched.

use rand::Rng;

use crate::autodiff::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augmentation {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
    ReverseSlices,
}

impl Augmentation {
    pub const ALL: [Augmentation; 7] = [
        Augmentation::Identity,
        Augmentation::FlipHorizontal,
        Augmentation::FlipVertical,
        Augmentation::Rotate90,
        Augmentation::Rotate180,
        Augmentation::Rotate270,
        Augmentation::ReverseSlices,
    ];

    /// Apply to an `[M, n, n]` stack. Rotations are counter-clockwise.
    pub fn apply<F: Real>(self, volume: &Tensor<F>) -> Tensor<F> {
        let shape = volume.shape();
        assert_eq!(shape.len(), 3, "augment expects [M,h,w]");
        let (m, h, w) = (shape[0], shape[1], shape[2]);
        assert_eq!(h, w, "rotations need square slices");
        let n = h;
        let src = volume.data();
        let mut out = Tensor::zeros(shape);
        let dst = out.data_mut();
        for s in 0..m {
            let s_src = match self {
                Augmentation::ReverseSlices => m - 1 - s,
                _ => s,
            };
            let plane = &src[s_src * n * n..(s_src + 1) * n * n];
            let target = &mut dst[s * n * n..(s + 1) * n * n];
            match self {
                Augmentation::Identity | Augmentation::ReverseSlices => {
                    target.copy_from_slice(plane);
                }
                Augmentation::FlipHorizontal => {
                    for y in 0..n {
                        for x in 0..n {
                            target[y * n + x] = plane[y * n + (n - 1 - x)];
                        }
                    }
                }
                Augmentation::FlipVertical => {
                    for y in 0..n {
                        target[y * n..(y + 1) * n]
                            .copy_from_slice(&plane[(n - 1 - y) * n..(n - y) * n]);
                    }
                }
                Augmentation::Rotate90 => {
                    for y in 0..n {
                        for x in 0..n {
                            target[y * n + x] = plane[x * n + (n - 1 - y)];
                        }
                    }
                }
                Augmentation::Rotate180 => {
                    for y in 0..n {
                        for x in 0..n {
                            target[y * n + x] = plane[(n - 1 - y) * n + (n - 1 - x)];
                        }
                    }
                }
                Augmentation::Rotate270 => {
                    for y in 0..n {
                        for x in 0..n {
                            target[y * n + x] = plane[(n - 1 - x) * n + y];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Uniform draw over the seven outcomes (identity included).
pub fn draw_augmentation(rng: &mut impl Rng) -> Augmentation {
    Augmentation::ALL[rng.gen_range(0..Augmentation::ALL.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_volume(m: usize) -> Tensor<f64> {
        let n = 4;
        let data = (0..m * n * n).map(|i| i as f64 * 0.7 - 3.0).collect();
        Tensor::new(vec![m, n, n], data).unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let v = sample_volume(3);
        for aug in [Augmentation::FlipHorizontal, Augmentation::FlipVertical] {
            assert_eq!(aug.apply(&aug.apply(&v)), v);
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let v = sample_volume(2);
        let mut r = v.clone();
        for _ in 0..4 {
            r = Augmentation::Rotate90.apply(&r);
        }
        assert_eq!(r, v);
    }

    #[test]
    fn two_quarter_turns_equal_half_turn() {
        let v = sample_volume(2);
        let twice = Augmentation::Rotate90.apply(&Augmentation::Rotate90.apply(&v));
        assert_eq!(twice, Augmentation::Rotate180.apply(&v));
    }

    #[test]
    fn z_reverse_on_single_slice_is_identity() {
        let v = sample_volume(1);
        assert_eq!(Augmentation::ReverseSlices.apply(&v), v);
    }

    #[test]
    fn z_reverse_is_involution_and_reorders() {
        let v = sample_volume(3);
        let r = Augmentation::ReverseSlices.apply(&v);
        assert_ne!(r, v);
        assert_eq!(Augmentation::ReverseSlices.apply(&r), v);
        assert_eq!(&r.data()[0..16], &v.data()[32..48]);
    }

    #[test]
    fn shapes_are_preserved() {
        let v = sample_volume(5);
        for aug in Augmentation::ALL {
            assert_eq!(aug.apply(&v).shape(), v.shape());
        }
    }

    #[test]
    fn flips_and_rotations_form_a_closed_group() {
        // composing any two planar members lands back in the planar set
        let planar = [
            Augmentation::Identity,
            Augmentation::FlipHorizontal,
            Augmentation::FlipVertical,
            Augmentation::Rotate90,
            Augmentation::Rotate180,
            Augmentation::Rotate270,
        ];
        // the dihedral closure also contains the two diagonal mirrors,
        // realised here as flip ∘ rotation compositions
        let v = sample_volume(1);
        let mut table: Vec<Tensor<f64>> = planar.iter().map(|a| a.apply(&v)).collect();
        let d1 = Augmentation::FlipHorizontal.apply(&Augmentation::Rotate90.apply(&v));
        let d2 = Augmentation::FlipVertical.apply(&Augmentation::Rotate90.apply(&v));
        table.push(d1);
        table.push(d2);
        for a in planar {
            for b in planar {
                let composed = a.apply(&b.apply(&v));
                assert!(
                    table.iter().any(|t| *t == composed),
                    "{a:?} ∘ {b:?} left the dihedral group"
                );
            }
        }
    }

    #[test]
    fn draw_is_deterministic_and_covers_all_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Augmentation> = (0..200).map(|_| draw_augmentation(&mut rng)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<Augmentation> = (0..200).map(|_| draw_augmentation(&mut rng)).collect();
        assert_eq!(a, b);
        for outcome in Augmentation::ALL {
            assert!(a.contains(&outcome));
        }
    }
}
