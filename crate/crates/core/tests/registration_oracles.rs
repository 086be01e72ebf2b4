use dvfcast_core::dvf::{jacobian_map, warp_mask, warp_volume, Dvf, Grid, Mask, Volume};
use dvfcast_core::metrics::dice;
use dvfcast_core::phantom::{default_grid, degrade_weekly, reference_anatomy, Category, PhantomSpec};
use dvfcast_core::registration::{
    augment_dvfs, entropy, hyper_search, mutual_information, register, RegConfig, SearchCase, GRADIENT_STEPS,
    GRID_SIZES,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_grid() -> Grid {
    Grid::new([16, 32, 32], 2.0).unwrap()
}

fn anatomy(grid: Grid, seed: u64) -> (Volume, Vec<Mask>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PhantomSpec::sample(grid, Category::Shrink, 2, 0.0, 0.0, &mut rng).unwrap();
    reference_anatomy(&spec).unwrap()
}

#[test]
fn mutual_information_identities() {
    let g = Grid::new([8, 16, 16], 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // values on bin centres: the joint histogram of (v, v) is diagonal
    let mut v = Volume::from_fn(g, |_, _, _| rng.gen_range(0..32) as f64 / 31.0).unwrap();
    v = Volume::new(g, {
        let mut d = v.into_data();
        d[0] = 0.0;
        d[1] = 1.0;
        d
    })
    .unwrap();
    let mi = mutual_information(&v, &v, 32).unwrap();
    assert!((mi - entropy(&v, 32).unwrap()).abs() < 1e-12);
    let affine = v.map(|x| 2.0 * x + 3.0).unwrap();
    assert!((mutual_information(&v, &affine, 32).unwrap() - mi).abs() < 1e-12);
    assert_eq!(mutual_information(&v, &Volume::filled(g, 0.3), 32).unwrap(), 0.0);
    assert!(mutual_information(&v, &v, 4).is_err());
}

#[test]
fn shuffled_voxels_share_almost_no_information() {
    let (v, _) = anatomy(default_grid(), 1);
    let mut data = v.data().to_vec();
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let shuffled = Volume::new(*v.grid(), data).unwrap();
    let mi = mutual_information(&v, &shuffled, 32).unwrap();
    assert!(mi < 0.05, "MI {mi}");
    assert!(mutual_information(&v, &v, 32).unwrap() > 1.0);
}

#[test]
fn degraded_scan_loses_information() {
    let (v, _) = anatomy(default_grid(), 2);
    let degraded = degrade_weekly(&v, 1.0, 4).unwrap();
    assert!(mutual_information(&degraded, &v, 32).unwrap() < entropy(&v, 32).unwrap());
}

#[test]
fn identical_images_give_a_near_zero_field() {
    let (v, _) = anatomy(small_grid(), 3);
    let r = register(&v, &v, &RegConfig::default()).unwrap();
    assert!(r.dvf.max_magnitude() < 0.05, "{}", r.dvf.max_magnitude());
}

#[test]
fn recovers_a_three_voxel_translation() {
    let (moving, _) = anatomy(small_grid(), 4);
    let g = *moving.grid();
    let shift = Dvf::from_fn(g, "t", |_, _, _| [0.0, 0.0, 3.0]).unwrap();
    let fixed = warp_volume(&moving, &shift).unwrap();
    let r = register(&fixed, &moving, &RegConfig::default().with(16, 0.3)).unwrap();
    let fg: Vec<usize> = (0..g.len()).filter(|&i| fixed.data()[i] > 0.05).collect();
    let mean = |c: usize| fg.iter().map(|&i| r.dvf.component(c)[i]).sum::<f64>() / fg.len() as f64;
    let err = ((mean(0)).powi(2) + (mean(1)).powi(2) + (mean(2) - 3.0).powi(2)).sqrt();
    assert!(err < 0.5, "mean displacement ({}, {}, {})", mean(0), mean(1), mean(2));
}

#[test]
fn shrinking_sphere_is_registered() {
    let g = Grid::new([32, 32, 32], 2.0).unwrap();
    let ball = |r: f64| {
        Mask::from_fn(g, "gtv", move |z, y, x| {
            (z as f64 - 15.5).powi(2) + (y as f64 - 15.5).powi(2) + (x as f64 - 15.5).powi(2) <= r * r
        })
    };
    let image = |m: &Mask| Volume::new(g, m.data().iter().map(|&b| 0.2 + 0.6 * b as f64).collect()).unwrap();
    let (big, small) = (ball(9.0), ball(9.0 * 0.7f64.cbrt()));
    let r = register(&image(&small), &image(&big), &RegConfig::default().with(16, 0.3)).unwrap();
    let d = dice(&warp_mask(&big, &r.dvf).unwrap(), &small).unwrap();
    assert!(d >= 0.95, "dice {d} (before {})", dice(&big, &small).unwrap());
}

#[test]
fn phantom_registration_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = PhantomSpec::sample(small_grid(), Category::Shrink, 3, 0.5, 1.0, &mut rng).unwrap();
    let case = dvfcast_core::phantom::generate_case(&spec, 6).unwrap();
    let cfg = RegConfig::default().with(16, 0.1);
    let (fixed, moving) = (&case.weeks[2].volume, &case.weeks[0].volume);
    let r = register(fixed, moving, &cfg).unwrap();
    assert_eq!(r, register(fixed, moving, &cfg).unwrap());
    let (jmin, _) = jacobian_map(&r.dvf).unwrap().min_max();
    assert!(jmin > 0.0);
    let warped = warp_volume(moving, &r.dvf).unwrap();
    assert!(
        mutual_information(fixed, &warped, 32).unwrap() >= mutual_information(fixed, moving, 32).unwrap()
    );
    let aug = augment_dvfs(&cfg, &GRADIENT_STEPS, &[(fixed, moving)]).unwrap();
    assert_eq!(aug.len(), 1);
    assert_eq!(aug[0][0], r.dvf);
}

#[test]
fn identical_pairs_tie_to_the_smallest_setting() {
    let g = Grid::new([8, 16, 16], 2.0).unwrap();
    let cases: Vec<SearchCase> = (0..2)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + i);
            let spec = PhantomSpec::sample(g, Category::Shrink, 2, 0.0, 0.0, &mut rng).unwrap();
            let (v, masks) = reference_anatomy(&spec).unwrap();
            SearchCase {
                id: format!("p{i}"),
                fixed: v.clone(),
                moving: v,
                fixed_masks: masks.clone(),
                moving_masks: masks,
            }
        })
        .collect();
    let cfg = RegConfig {
        iterations: vec![10, 5, 3],
        ..RegConfig::default()
    };
    let result = hyper_search(&cases, &GRID_SIZES, &GRADIENT_STEPS, &cfg, "gtv").unwrap();
    assert_eq!(result.rows.len(), 16 * 2);
    let first = result.table[0][0];
    assert!(result.table.iter().flatten().all(|&c| c == first));
    assert_eq!(result.best, (16, 0.01));
    assert!(hyper_search(&cases[..1], &GRID_SIZES, &GRADIENT_STEPS, &cfg, "gtv").is_err());
}
