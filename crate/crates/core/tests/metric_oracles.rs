//! Brute-force oracles for the overlap and surface-distance metrics.

use dvfcast_core::dvf::{warp_mask, Dvf, Grid, Mask};
use dvfcast_core::metrics::{avg_hausdorff, boundary_points, dice, rvd};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, g: Grid, label: &str) -> Mask {
    // a random blob: union of a few boxes, so boundaries are non-trivial
    let mut data = vec![0u8; g.len()];
    for _ in 0..rng.gen_range(1..4) {
        let lo: Vec<usize> = g.extents.iter().map(|&e| rng.gen_range(0..e)).collect();
        let hi: Vec<usize> = lo.iter().zip(g.extents).map(|(&l, e)| (l + rng.gen_range(1..4)).min(e)).collect();
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    data[g.index(z, y, x)] = 1;
                }
            }
        }
    }
    Mask::new(g, data, label).unwrap()
}

fn brute_avhd(a: &Mask, b: &Mask) -> f64 {
    let (pa, pb) = (boundary_points(a), boundary_points(b));
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        let d: f64 = (0..3).map(|i| (p[i] as f64 - q[i] as f64).powi(2)).sum();
                        d.sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    (directed(&pa, &pb) + directed(&pb, &pa)) * a.grid().spacing
}

fn brute_dice(a: &Mask, b: &Mask) -> f64 {
    let (mut i, mut na, mut nb) = (0.0, 0.0, 0.0);
    for idx in 0..a.grid().len() {
        let (x, y) = (a.data()[idx] == 1, b.data()[idx] == 1);
        na += x as u8 as f64;
        nb += y as u8 as f64;
        i += (x && y) as u8 as f64;
    }
    if na + nb == 0.0 { 1.0 } else { 2.0 * i / (na + nb) }
}

#[test]
fn fifty_random_mask_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let g = Grid::new([6, 9, 9], 1.5).unwrap();
    for _ in 0..50 {
        let a = random_mask(&mut rng, g, "a");
        let b = random_mask(&mut rng, g, "b");
        assert!(boundary_points(&a).len() <= 200 && boundary_points(&b).len() <= 200);
        assert!((dice(&a, &b).unwrap() - brute_dice(&a, &b)).abs() < 1e-9);
        assert!((avg_hausdorff(&a, &b).unwrap() - brute_avhd(&a, &b)).abs() < 1e-9);
        let (va, vb) = (a.count() as f64, b.count() as f64);
        assert!((rvd(&a, &b).unwrap() - 100.0 * (va - vb).abs() / va).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn symmetry_and_zero_warp(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::new([5, 7, 7], 1.0).unwrap();
        let a = random_mask(&mut rng, g, "a");
        let b = random_mask(&mut rng, g, "b");
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        prop_assert!((avg_hausdorff(&a, &b).unwrap() - avg_hausdorff(&b, &a).unwrap()).abs() < 1e-12);
        let warped = warp_mask(&a, &Dvf::zeros(g, "r")).unwrap();
        prop_assert_eq!(dice(&warped, &a).unwrap(), 1.0);
    }
}
