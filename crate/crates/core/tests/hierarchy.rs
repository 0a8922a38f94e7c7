use ultrajump_core::forms::{energy, extend, restrict};
use ultrajump_core::kernel::{average, detect_bc, GammaSpec, LambdaSpec};
use ultrajump_core::markov::{lumpability_test, marginal, resolvent_apply, semigroup_apply};
use ultrajump_core::presets::{preset, NAMES};
use ultrajump_core::sim::{fdd_compare, InitialDensity};
use ultrajump_core::{Hierarchy, KernelConfig, LevelFunction, RateMatrix, SpaceConfig, TreeSpace};

fn build(name: &str) -> (TreeSpace, ultrajump_core::JumpKernel) {
    let p = preset(name).unwrap();
    let s = TreeSpace::build(&p.space).unwrap();
    let j = p.kernel.build(&s).unwrap();
    (s, j)
}

#[test]
fn coarsening_agrees_with_direct_average() {
    for name in NAMES {
        let (s, j) = build(name);
        let big = average(&s, &j, s.k_max()).unwrap();
        for k in s.window() {
            let direct = average(&s, &j, k).unwrap();
            let chained = big.coarsen(&s, k).unwrap();
            for (a, b) in direct.rates().iter().zip(chained.rates()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{name} level {k}");
            }
        }
    }
}

#[test]
fn semigroup_and_resolvent_preserve_constants() {
    for name in NAMES {
        let (s, j) = build(name);
        let h = Hierarchy::new(&s, &j).unwrap();
        for k in s.window() {
            let one = LevelFunction::constant(&s, k, 1.0).unwrap();
            let p = semigroup_apply(h.generator(k).unwrap(), 1.3, &one).unwrap();
            assert!(p.coeffs.iter().all(|x| (x - 1.0).abs() < 1e-12));
            let g = resolvent_apply(&s, h.generator(k).unwrap(), 2.0, &one).unwrap();
            assert!(g.coeffs.iter().all(|x| (2.0 * x - 1.0).abs() < 1e-10));
        }
    }
}

#[test]
fn lumped_chain_matches_level_generator_under_bc() {
    for name in NAMES {
        let (s, j) = build(name);
        let h = Hierarchy::new(&s, &j).unwrap();
        for k in s.window() {
            let bc = detect_bc(&s, &j, k).unwrap().holds;
            let rep = lumpability_test(&s, h.leaf_generator(), k).unwrap();
            assert_eq!(bc, rep.lumpable, "{name} level {k}");
            if let Some(l) = rep.lumped {
                let q = h.generator(k).unwrap();
                for i in 0..q.size() {
                    for m in 0..q.size() {
                        assert!((l.get(i, m) - q.get(i, m)).abs() <= 1e-12 * (1.0 + q.get(i, m).abs()));
                    }
                }
            }
        }
    }
}

#[test]
fn projected_marginal_equals_level_marginal_under_bc() {
    let (s, j) = build("q3-mixed");
    let h = Hierarchy::new(&s, &j).unwrap();
    let psi = LevelFunction::new(&s, 2, (0..9).map(|x| 1.0 + x as f64).collect()).unwrap();
    for t in [0.3, 1.0] {
        let leaf = marginal(&s, h.leaf_generator(), &psi, t).unwrap();
        let psi1 = restrict(&s, &psi, 1).unwrap();
        let coarse = marginal(&s, h.generator(1).unwrap(), &psi1, t).unwrap();
        for b in 0..3 {
            let lumped: f64 = s.leaf_range(1, b).map(|x| leaf[x]).sum();
            assert!((lumped - coarse[b]).abs() < 1e-12);
        }
    }
}

#[test]
fn mixed_kernel_energy_isometry_on_irregular_windows() {
    let space = SpaceConfig::padic(2, -1, 3);
    let s = TreeSpace::build(&space).unwrap();
    let kernel = KernelConfig::Mixed {
        components: vec![LambdaSpec::Geometric { alpha: 1.0 }, LambdaSpec::Geometric { alpha: 0.3 }],
        gamma: GammaSpec::by_level(1, &[(1, 2), (3, 2)]),
    };
    let j = kernel.build(&s).unwrap();
    for k in s.window() {
        let jk = average(&s, &j, k).unwrap();
        let u = LevelFunction::new(&s, k, (0..s.ball_count(k)).map(|i| (i as f64).sin()).collect()).unwrap();
        let ek = energy(&s, &jk, &u, &u).unwrap();
        let eu = extend(&s, &u, s.k_max()).unwrap();
        let e = energy(&s, &j, &eu, &eu).unwrap();
        assert!((ek - e).abs() <= 1e-10 * (1.0 + e));
        assert!(detect_bc(&s, &j, k).unwrap().holds);
        assert_eq!(jk.level(), k);
    }
}

#[test]
fn fdd_rejection_rate_matches_level() {
    // each run rejects with probability about 0.01 when the laws agree
    let (s, j) = build("q2-stable-alpha1");
    let h = Hierarchy::new(&s, &j).unwrap();
    let psi = InitialDensity::uniform(&s);
    let rejected = (0..40)
        .filter(|&seed| {
            let rep = fdd_compare(&h, &psi, 1, &[0.5, 1.0], 2000, seed).unwrap();
            assert_eq!(rep.per_time.len(), 2);
            !rep.chi_square_pass
        })
        .count();
    assert!(rejected <= 3, "{rejected} of 40 rejected");
}
