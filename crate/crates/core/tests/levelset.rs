use std::sync::Arc;

use parea_core::config::BarrierExpectation;
use parea_core::field::ScalarField;
use parea_core::grid::GridSpec;
use parea_core::levelset::{
    barrier_probe, check_minimality_exhaustive, check_minimality_random, density_set, interior_windows, lsc_check,
    psi_perimeter, super_level_set, BarrierConfig, LevelSet, RandomCheckConfig, Region, Window,
};
use parea_core::problem::ProblemSpec;
use parea_core::scenarios;

fn square(n: usize) -> (Arc<GridSpec<f64>>, ProblemSpec<f64>) {
    let g = Arc::new(GridSpec::full(n, n, 1.0 / n as f64).unwrap());
    let spec = ProblemSpec::plain(&g);
    (g, spec)
}

fn half_plane(g: &Arc<GridSpec<f64>>) -> LevelSet<f64> {
    let members = (0..g.len()).map(|c| g.coords(c).0 < g.nx() / 2).collect();
    LevelSet::new(g.clone(), members).unwrap()
}

#[test]
fn sharp_indicator_is_its_own_truncation() {
    let (g, spec) = square(12);
    let u = ScalarField::from_fn(&g, |p| if (p[0] - 0.5).hypot(p[1] - 0.5) < 0.3 { 1.0 } else { 0.0 });
    let r = lsc_check(&u, 0.5, &spec, &[0.4, 0.2, 0.1]).unwrap();
    assert!(r.pass);
    for (_, e) in &r.truncated {
        assert_eq!(*e, r.indicator_energy);
    }
}

#[test]
fn ramp_truncations_do_not_undercut_the_limit() {
    // axis-aligned on purpose: an oblique cut is a staircase, whose lattice
    // perimeter exceeds that of the smooth truncations
    let (g, spec) = square(16);
    let u = ScalarField::from_fn(&g, |p| p[0]);
    let r = lsc_check(&u, 0.6, &spec, &[0.5, 0.25, 0.125, 0.0625]).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn coarea_on_axis_aligned_levels() {
    let (g, spec) = square(32);
    // staircase in x with unequal steps, then the same along y
    let steps = [0.0, 0.7, 1.1, 2.6];
    let level = |t: f64| steps[((t * 4.0) as usize).min(3)];
    for axis in 0..2 {
        let u = ScalarField::from_fn(&g, |p| level(p[axis]));
        let h2 = g.h() * g.h();
        let tv: f64 = parea_core::calculus::gradient(&u).values().iter().map(|d| d[0].hypot(d[1]) * h2).sum();
        let mut integral = 0.0;
        for w in steps.windows(2) {
            let e = super_level_set(&u, 0.5 * (w[0] + w[1]));
            integral += psi_perimeter(&e, &spec, &Region::domain()).unwrap().total * (w[1] - w[0]);
        }
        assert!((integral - tv).abs() <= 0.02 * tv, "{integral} vs {tv}");
    }
}

#[test]
fn straight_cut_is_locally_minimal() {
    let (g, spec) = square(16);
    let e = half_plane(&g);
    for w in interior_windows(&g, 3) {
        let v = check_minimality_exhaustive(&e, &spec, &Region::domain(), w, 1e-9).unwrap();
        assert!(v.pass, "{w:?} {v:?}");
    }
    let cfg = RandomCheckConfig { trials: 2000, max_flip: 6, seed: 3, gap_tol: 1e-9, extra: vec![] };
    assert!(check_minimality_random(&e, &spec, &Region::domain(), &cfg).unwrap().pass);
}

#[test]
fn bump_on_the_cut_is_detected() {
    let (g, spec) = square(16);
    let bump = g.cell_at(8, 8).unwrap();
    let e = half_plane(&g).flipped(&[bump]);
    let w = Window { i0: 7, j0: 7, w: 3, h: 3 };
    let v = check_minimality_exhaustive(&e, &spec, &Region::domain(), w, 1e-9).unwrap();
    assert!(!v.pass);
    assert_eq!(v.best_flip, vec![bump]);
    // forward differences charge the bump one diagonal jump cell
    assert!((v.margin - 2f64.sqrt() * g.h()).abs() < 1e-12, "{}", v.margin);

    let cfg = RandomCheckConfig { trials: 1, max_flip: 1, seed: 0, gap_tol: 1e-9, extra: vec![vec![bump]] };
    let r = check_minimality_random(&e, &spec, &Region::domain(), &cfg).unwrap();
    assert!(!r.pass);
}

#[test]
fn density_set_of_a_block() {
    let (g, _) = square(10);
    let members = (0..g.len())
        .map(|c| {
            let (i, j) = g.coords(c);
            (2..8).contains(&i) && (2..8).contains(&j)
        })
        .collect();
    let e = LevelSet::new(g.clone(), members).unwrap();
    let d = density_set(&e, 1).unwrap();
    for (c, &dense) in d.iter().enumerate() {
        let (i, j) = g.coords(c);
        assert_eq!(dense, (3..7).contains(&i) && (3..7).contains(&j), "cell ({i}, {j})");
    }
}

#[test]
fn notch_probes_match_their_expectations() {
    let s = scenarios::builtin::<f64>("barrier-notch").unwrap();
    assert_eq!(s.checks.barrier.len(), 3);
    for b in &s.checks.barrier {
        let r = barrier_probe(&s.spec, b.x0, b.eps, &BarrierConfig { seed: 1, ..Default::default() }).unwrap();
        let want = b.expect == BarrierExpectation::Holds;
        assert_eq!(r.holds, want, "probe at {:?}", b.x0);
        assert!(r.energy <= r.domain_energy + 1e-12);
    }
}

#[test]
fn square_corner_holds() {
    let (_, spec) = square(12);
    let r = barrier_probe(&spec, [1.0, 1.0], 0.2, &BarrierConfig::default()).unwrap();
    assert!(r.exhaustive || !r.ball_cells.is_empty());
    assert!(r.holds);
}
