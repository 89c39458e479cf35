//! Randomized invariants of maps, Ulam matrices, spectra and decompositions.

use metamap::bv::{saltus_decompose, PostcriticalHierarchy};
use metamap::density::DensityGrid;
use metamap::map_model::{Branch, Interval, PiecewiseMap};
use metamap::scenario::builtin;
use metamap::spectral::escape_rate;
use metamap::transfer::{apply_transfer, build_ulam, lasota_yorke_constants};
use proptest::prelude::*;

/// `(weight, stretch, offset, decreasing)` for one affine branch.
type BranchSpec = (u8, f64, f64, bool);

fn branch_spec() -> impl Strategy<Value = BranchSpec> {
    (1u8..=5, 0.0..1.0f64, 0.0..1.0f64, any::<bool>())
}

/// Affine branches tiling `[lo, hi]`, each mapping into `[t_lo, t_hi]` with slope above 1.1.
fn branches(specs: &[BranchSpec], lo: f64, hi: f64, t_lo: f64, t_hi: f64) -> Vec<Branch> {
    let total: f64 = specs.iter().map(|s| s.0 as f64).sum();
    let target = t_hi - t_lo;
    let mut out = Vec::new();
    let mut left = lo;
    let mut acc = 0.0;
    for (k, &(weight, stretch, offset, decreasing)) in specs.iter().enumerate() {
        acc += weight as f64;
        let right = if k + 1 == specs.len() { hi } else { lo + (hi - lo) * acc / total };
        let w = right - left;
        let s = 1.1 + stretch * (target / w - 1.1);
        let len = s * w;
        let a = t_lo + offset * (target - len);
        let b = if decreasing {
            Branch::affine(Interval { lo: left, hi: right }, -s, a + len + s * left)
        } else {
            Branch::affine(Interval { lo: left, hi: right }, s, a - s * left)
        };
        out.push(b);
        left = right;
    }
    out
}

fn random_map() -> impl Strategy<Value = PiecewiseMap> {
    prop::collection::vec(branch_spec(), 2..=6)
        .prop_map(|specs| PiecewiseMap::new(branches(&specs, 0.0, 1.0, 0.0, 1.0)).unwrap())
}

/// Maps with `[0, 1/2]` and `[1/2, 1]` invariant.
fn split_map() -> impl Strategy<Value = PiecewiseMap> {
    (prop::collection::vec(branch_spec(), 2..=4), prop::collection::vec(branch_spec(), 2..=4)).prop_map(|(l, r)| {
        let mut bs = branches(&l, 0.0, 0.5, 0.0, 0.5);
        bs.extend(branches(&r, 0.5, 1.0, 0.5, 1.0));
        PiecewiseMap::new(bs).unwrap()
    })
}

fn density(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|n| prop::collection::vec(0.0..10.0f64, n))
}

/// Steps plus a ramp: a bounded-variation grid with a few sizeable jumps.
fn bv_grid(n: usize) -> impl Strategy<Value = DensityGrid> {
    (prop::collection::vec((0.0..1.0f64, -3.0..3.0f64), 0..6), -2.0..2.0f64, 0.5..5.0f64).prop_map(
        move |(steps, slope, base)| {
            let v = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) / n as f64;
                    let jumps: f64 = steps.iter().filter(|(u, _)| x > *u).map(|(_, s)| s).sum();
                    (base + slope * x + jumps).abs()
                })
                .collect();
            DensityGrid::new(v).unwrap()
        },
    )
}

fn signed_grid() -> impl Strategy<Value = DensityGrid> {
    (10usize..200)
        .prop_flat_map(|n| prop::collection::vec(-5.0..5.0f64, n))
        .prop_map(|v| DensityGrid::new(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ulam_rows_are_stochastic(map in random_map(), n in 12usize..400) {
        let p = build_ulam(&map, n).unwrap();
        prop_assert!(p.max_row_sum_error() <= 1e-12);
    }

    #[test]
    fn transfer_conserves_mass_and_sign(map in random_map(), v in density(12..300)) {
        let d = DensityGrid::new(v).unwrap();
        let p = build_ulam(&map, d.n()).unwrap();
        let ld = apply_transfer(&p, &d).unwrap();
        let (before, after): (f64, f64) = (d.values().iter().sum(), ld.values().iter().sum());
        prop_assert!((after - before).abs() <= 1e-12 * d.values().iter().map(|x| x.abs()).sum::<f64>());
        prop_assert!(ld.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn preimages_recover_the_point(map in random_map(), ts in prop::collection::vec(0.01..0.99f64, 20)) {
        for (k, b) in map.branches().iter().enumerate() {
            let dom = b.domain();
            for &t in &ts {
                let x = dom.lo + t * dom.len();
                let y = map.evaluate(x).unwrap();
                prop_assert_eq!(y.len(), 1);
                prop_assert!((y[0] - b.eval(x)).abs() <= 1e-14);
                let pre = map.branch_preimages(y[0]).unwrap();
                prop_assert!(pre.iter().any(|p| p.branch == k && (p.x - x).abs() <= 1e-12), "{x} not in {pre:?}");
            }
        }
    }

    #[test]
    fn infinitesimal_holes_are_critical(map in split_map()) {
        let holes = map.infinitesimal_holes(0.5).unwrap();
        for h in holes {
            prop_assert!(map.critical_set().iter().any(|c| (c - h).abs() <= 1e-12));
        }
    }

    #[test]
    fn sup_norm_bounded_by_l1_plus_variation(d in signed_grid()) {
        prop_assert!(d.sup_norm() <= d.l1_norm() + d.total_variation() + 1e-12);
    }

    #[test]
    fn saltus_parts_reconstruct_and_split_variation(d in (20usize..400).prop_flat_map(bv_grid), lip in 0.1..10.0f64) {
        let h = PostcriticalHierarchy { points: vec![], max_expansion: 3.0 };
        let dec = saltus_decompose(&d, &h, lip).unwrap();
        let err = dec.reconstruct().l1_distance(&d).unwrap();
        prop_assert!(err <= 2.0 * dec.jumps.len() as f64 / d.n() as f64);
        prop_assert!(err <= 1e-12);
        let split = dec.regular.total_variation() + dec.jump_mass();
        prop_assert!(split <= d.total_variation() * (1.0 + 1e-9));
        prop_assert!(dec.saltus.values().last().copied() == Some(0.0));
    }

    #[test]
    fn escape_rate_grows_with_the_hole(cells in prop::collection::btree_set(0usize..60, 1..20), extra in prop::collection::btree_set(0usize..60, 1..10)) {
        let p0 = build_ulam(&builtin::family_a().instantiate(0.0).unwrap(), 120).unwrap();
        let small: Vec<usize> = cells.iter().copied().collect();
        let large: Vec<usize> = cells.union(&extra).copied().collect();
        let half = Interval { lo: 0.0, hi: 0.5 };
        let r_small = escape_rate(&p0, &small, half).unwrap().rate;
        let r_large = escape_rate(&p0, &large, half).unwrap().rate;
        prop_assert!(r_large >= r_small - 1e-10, "{r_large} < {r_small}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn discrete_lasota_yorke(d in bv_grid(240), eps in prop::sample::select(vec![0.02, 0.01]), which in 0usize..2) {
        let family = if which == 0 { builtin::family_a() } else { builtin::family_b() };
        let map = family.instantiate(eps).unwrap();
        let ly = lasota_yorke_constants(&map).unwrap();
        let p = build_ulam(&map, 240).unwrap();
        let (tv0, l1) = (d.total_variation(), d.l1_norm());
        let mut f = d;
        for k in 1..=6 {
            f = apply_transfer(&p, &f).unwrap();
            let bound = ly.c_ly * ly.beta.powi(k) * tv0 + ly.c_ly * l1;
            prop_assert!(f.total_variation() <= 1.2 * bound, "k = {k}: {} > 1.2 * {bound}", f.total_variation());
        }
    }
}
