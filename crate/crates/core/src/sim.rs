//! Exact path sampling for the level chains and ensemble comparisons.
//!
//! Ensembles draw every path from its own ChaCha8 stream of the master seed,
//! so results do not depend on thread count or scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{restrict, LevelFunction};
use crate::markov::{marginal, GeneratorMatrix, Hierarchy};
use crate::space::{BallAddress, SpaceId, TreeSpace};
use crate::stats::{bonferroni, chi_square_two_sample, multinomial_z, ChiSquareResult};

pub const MIN_PATHS: usize = 1000;
/// A path that needs more jumps than this is reported as truncated.
pub const MAX_JUMPS: usize = 10_000_000;

/// A right-continuous step path on the balls of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub space: SpaceId,
    pub level: i32,
    pub initial: usize,
    /// `(jump time, new state)`, times strictly increasing in `(0, horizon]`.
    pub events: Vec<(f64, usize)>,
    pub horizon: f64,
    pub truncated: bool,
}

impl PathSample {
    /// State at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.events.partition_point(|e| e.0 <= t);
        if idx == 0 {
            self.initial
        } else {
            self.events[idx - 1].1
        }
    }

    pub fn jump_count(&self) -> usize {
        self.events.len()
    }

    /// Initial state followed by every state entered.
    pub fn visited(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.initial).chain(self.events.iter().map(|e| e.1))
    }

    pub fn initial_address(&self, space: &TreeSpace) -> BallAddress {
        space.address(self.level, self.initial)
    }

    /// Events with states written as addresses.
    pub fn event_addresses(&self, space: &TreeSpace) -> Vec<(f64, BallAddress)> {
        self.events
            .iter()
            .map(|&(t, s)| (t, space.address(self.level, s)))
            .collect()
    }
}

/// Jump tables for one generator.
pub struct JumpSampler {
    space: SpaceId,
    level: i32,
    exits: Vec<Option<(Exp<f64>, WeightedIndex<f64>)>>,
}

impl JumpSampler {
    pub fn new(q: &GeneratorMatrix) -> Self {
        let exits = (0..q.size())
            .map(|i| {
                let rate = q.exit_rate(i);
                if rate > 0.0 {
                    let w: Vec<f64> = q
                        .row(i)
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| if j == i { 0.0 } else { v })
                        .collect();
                    Some((
                        Exp::new(rate).expect("positive rate"),
                        WeightedIndex::new(w).expect("positive total rate"),
                    ))
                } else {
                    None
                }
            })
            .collect();
        JumpSampler {
            space: q.space_id(),
            level: q.level(),
            exits,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, x0: usize, horizon: f64, rng: &mut R) -> Result<PathSample> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        if x0 >= self.exits.len() {
            return Err(Error::InvalidAddress(format!("state {x0} at level {}", self.level)));
        }
        let mut events = Vec::new();
        let mut t = 0.0;
        let mut x = x0;
        let mut truncated = false;
        while let Some((hold, next)) = &self.exits[x] {
            t += hold.sample(rng);
            if t > horizon {
                break;
            }
            x = next.sample(rng);
            events.push((t, x));
            if events.len() >= MAX_JUMPS {
                truncated = true;
                break;
            }
        }
        Ok(PathSample {
            space: self.space,
            level: self.level,
            initial: x0,
            events,
            horizon,
            truncated,
        })
    }
}

/// One path from `x0`, reproducible from `seed`.
pub fn sample_path(q: &GeneratorMatrix, x0: usize, horizon: f64, seed: u64) -> Result<PathSample> {
    JumpSampler::new(q).sample(x0, horizon, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Generator for path `stream` of an ensemble drawn from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Non-negative leaf density `ψ` with positive mass.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialDensity {
    psi: LevelFunction,
}

impl InitialDensity {
    pub fn new(space: &TreeSpace, psi: LevelFunction) -> Result<Self> {
        if psi.level != space.k_max() {
            return Err(Error::LevelMismatch {
                expected: space.k_max(),
                found: psi.level,
            });
        }
        if psi.coeffs.len() != space.leaf_count() {
            return Err(Error::DimensionMismatch {
                expected: space.leaf_count(),
                found: psi.coeffs.len(),
            });
        }
        if psi.coeffs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("density must be finite and non-negative".into()));
        }
        let z: f64 = psi.coeffs.iter().zip(space.leaf_masses()).map(|(a, b)| a * b).sum();
        if !(z > 0.0) {
            return Err(Error::ZeroDensity);
        }
        Ok(InitialDensity { psi })
    }

    pub fn uniform(space: &TreeSpace) -> Self {
        InitialDensity {
            psi: LevelFunction {
                level: space.k_max(),
                coeffs: vec![1.0; space.leaf_count()],
            },
        }
    }

    pub fn psi(&self) -> &LevelFunction {
        &self.psi
    }

    /// `ψ^k`.
    pub fn at_level(&self, space: &TreeSpace, k: i32) -> Result<LevelFunction> {
        restrict(space, &self.psi, k)
    }

    /// Ball probabilities `ψ^k(i) μ^k(i) / μ^k(ψ^k)`.
    pub fn law(&self, space: &TreeSpace, k: i32) -> Result<Vec<f64>> {
        let pk = self.at_level(space, k)?;
        let w: Vec<f64> = pk.coeffs.iter().zip(space.masses(k)).map(|(a, b)| a * b).collect();
        let z: f64 = w.iter().sum();
        Ok(w.iter().map(|v| v / z).collect())
    }

    pub fn sampler(&self, space: &TreeSpace, k: i32) -> Result<InitialSampler> {
        let pk = self.at_level(space, k)?;
        let w: Vec<f64> = pk.coeffs.iter().zip(space.masses(k)).map(|(a, b)| a * b).collect();
        Ok(InitialSampler {
            dist: WeightedIndex::new(w).map_err(|_| Error::ZeroDensity)?,
        })
    }
}

pub struct InitialSampler {
    dist: WeightedIndex<f64>,
}

impl InitialSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

pub fn sample_initial(space: &TreeSpace, psi: &InitialDensity, level: i32, seed: u64) -> Result<usize> {
    Ok(psi
        .sampler(space, level)?
        .sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Maps states to level `k`, merging jumps that stay inside one ball.
pub fn project_path(space: &TreeSpace, p: &PathSample, k: i32) -> Result<PathSample> {
    if p.space != space.id() {
        return Err(Error::MixedSpaces);
    }
    space.check_level(k)?;
    if k > p.level {
        return Err(Error::LevelOrderViolation { from: p.level, to: k });
    }
    let up = |x: usize| space.ancestor_of_ball(p.level, x, k);
    let initial = up(p.initial);
    let mut events = Vec::new();
    let mut cur = initial;
    for &(t, x) in &p.events {
        let y = up(x);
        if y != cur {
            events.push((t, y));
            cur = y;
        }
    }
    Ok(PathSample {
        space: p.space,
        level: k,
        initial,
        events,
        horizon: p.horizon,
        truncated: p.truncated,
    })
}

/// `sup_t ρ(I^k(π^k X_t), X_t)` for a leaf path and a level-`k` section.
pub fn path_sup_distance(space: &TreeSpace, p: &PathSample, k: i32, section: &[usize]) -> Result<f64> {
    if p.level != space.k_max() {
        return Err(Error::LevelMismatch {
            expected: space.k_max(),
            found: p.level,
        });
    }
    space.check_section(k, section)?;
    Ok(p.visited()
        .map(|x| space.distance(section[space.ancestor(x, k)], x))
        .fold(0.0, f64::max))
}

/// Occupancy counts over a time grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyTable {
    pub level: i32,
    pub times: Vec<f64>,
    /// `counts[t][state]`.
    pub counts: Vec<Vec<u64>>,
    pub n_paths: usize,
    pub seed: u64,
}

impl OccupancyTable {
    pub fn to_csv(&self, space: &TreeSpace) -> String {
        let mut out = String::from("time,state,count\n");
        for (t, row) in self.times.iter().zip(&self.counts) {
            for (s, c) in row.iter().enumerate() {
                out.push_str(&format!("{t},{},{c}\n", space.address(self.level, s).digit_string()));
            }
        }
        out
    }
}

/// Level-`k` states at `times` of `n_paths` chains with generator `q`,
/// started from `ψ^{level(q)}` and read through `π^k`.
///
/// Path `i` draws from stream `stride * i + offset`.
#[allow(clippy::too_many_arguments)]
pub fn occupancy(
    space: &TreeSpace,
    q: &GeneratorMatrix,
    psi: &InitialDensity,
    k: i32,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    (stride, offset): (u64, u64),
) -> Result<OccupancyTable> {
    space.check_level(k)?;
    if k > q.level() {
        return Err(Error::LevelOrderViolation { from: q.level(), to: k });
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    if times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::NonPositiveHorizon(times.iter().copied().fold(f64::INFINITY, f64::min)));
    }
    let sampler = JumpSampler::new(q);
    let init = psi.sampler(space, q.level())?;
    let nk = space.ball_count(k);
    let from = q.level();
    let states: Vec<Vec<usize>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, stride * i + offset);
            let x0 = init.sample(&mut rng);
            let path = sampler.sample(x0, horizon, &mut rng)?;
            Ok(times
                .iter()
                .map(|&t| space.ancestor_of_ball(from, path.state_at(t), k))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![0u64; nk]; times.len()];
    for s in &states {
        for (ti, &x) in s.iter().enumerate() {
            counts[ti][x] += 1;
        }
    }
    Ok(OccupancyTable {
        level: k,
        times: times.to_vec(),
        counts,
        n_paths,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeComparison {
    pub time: f64,
    pub chi_square: ChiSquareResult,
    pub exact: Vec<f64>,
    pub level_counts: Vec<u64>,
    pub leaf_counts: Vec<u64>,
    pub max_abs_z_level: f64,
    pub max_abs_z_leaf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub level: i32,
    pub n_paths: usize,
    pub seed: u64,
    pub alpha: f64,
    pub adjusted_alpha: f64,
    pub per_time: Vec<TimeComparison>,
    /// Every chi-square p-value is at least `adjusted_alpha`.
    pub chi_square_pass: bool,
    /// Every z-score of both ensembles against the exact marginal is within `z_bound`.
    pub marginal_pass: bool,
    pub z_bound: f64,
}

pub const FDD_ALPHA: f64 = 0.01;
pub const Z_BOUND: f64 = 4.0;

/// Compares `X^k` from `ψ^k` with `π^k ∘ X` from `ψ` on a time grid.
///
/// Level-`k` paths use streams `2i`, leaf paths streams `2i + 1`.
pub fn fdd_compare(
    h: &Hierarchy<'_>,
    psi: &InitialDensity,
    k: i32,
    times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if n_paths < MIN_PATHS {
        return Err(Error::InsufficientSamples {
            got: n_paths,
            need: MIN_PATHS,
        });
    }
    let space = h.space();
    let qk = h.generator(k)?;
    let coarse = occupancy(space, qk, psi, k, times, n_paths, seed, (2, 0))?;
    let fine = occupancy(space, h.leaf_generator(), psi, k, times, n_paths, seed, (2, 1))?;
    let psi_k = psi.at_level(space, k)?;
    let adjusted = bonferroni(FDD_ALPHA, times.len());
    let mut per_time = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        let exact = marginal(space, qk, &psi_k, t)?;
        let zmax = |c: &[u64]| multinomial_z(c, &exact).iter().fold(0.0f64, |a, z| a.max(z.abs()));
        per_time.push(TimeComparison {
            time: t,
            chi_square: chi_square_two_sample(&coarse.counts[ti], &fine.counts[ti]),
            max_abs_z_level: zmax(&coarse.counts[ti]),
            max_abs_z_leaf: zmax(&fine.counts[ti]),
            exact,
            level_counts: coarse.counts[ti].clone(),
            leaf_counts: fine.counts[ti].clone(),
        });
    }
    Ok(ComparisonReport {
        level: k,
        n_paths,
        seed,
        alpha: FDD_ALPHA,
        adjusted_alpha: adjusted,
        chi_square_pass: per_time.iter().all(|c| c.chi_square.p_value >= adjusted),
        marginal_pass: per_time
            .iter()
            .all(|c| c.max_abs_z_level <= Z_BOUND && c.max_abs_z_leaf <= Z_BOUND),
        z_bound: Z_BOUND,
        per_time,
    })
}

/// Jump statistics of `n_paths` leaf paths on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpCountSummary {
    pub horizon: f64,
    pub n_paths: usize,
    pub mean_jumps: f64,
    pub std_error: f64,
    pub max_jumps: usize,
    pub truncated_paths: usize,
    pub lower_rate: f64,
    pub upper_rate: f64,
}

impl JumpCountSummary {
    /// Mean within `[T min|q_ii|, T max|q_ii|]` widened by `z` standard errors.
    pub fn within_bounds(&self, z: f64) -> bool {
        let slack = z * self.std_error;
        self.mean_jumps >= self.horizon * self.lower_rate - slack
            && self.mean_jumps <= self.horizon * self.upper_rate + slack
    }
}

pub fn jump_counts(
    space: &TreeSpace,
    q: &GeneratorMatrix,
    psi: &InitialDensity,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<JumpCountSummary> {
    let sampler = JumpSampler::new(q);
    let init = psi.sampler(space, q.level())?;
    let paths: Vec<(usize, bool)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let p = sampler.sample(init.sample(&mut rng), horizon, &mut rng)?;
            Ok((p.jump_count(), p.truncated))
        })
        .collect::<Result<_>>()?;
    let n = paths.len().max(1) as f64;
    let mean = paths.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let var = paths.iter().map(|p| (p.0 as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(JumpCountSummary {
        horizon,
        n_paths,
        mean_jumps: mean,
        std_error: (var / n).sqrt(),
        max_jumps: paths.iter().map(|p| p.0).max().unwrap_or(0),
        truncated_paths: paths.iter().filter(|p| p.1).count(),
        lower_rate: q.min_exit_rate(),
        upper_rate: q.max_exit_rate(),
    })
}

/// Leaf paths from `ψ`, path `i` on stream `i`.
pub fn leaf_ensemble(
    h: &Hierarchy<'_>,
    psi: &InitialDensity,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathSample>> {
    let space = h.space();
    let sampler = JumpSampler::new(h.leaf_generator());
    let init = psi.sampler(space, space.k_max())?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            sampler.sample(init.sample(&mut rng), horizon, &mut rng)
        })
        .collect()
}

/// `path_id,time,state` rows; time 0 carries the initial state.
pub fn paths_to_csv(space: &TreeSpace, paths: &[PathSample]) -> String {
    let mut out = String::from("path_id,time,state\n");
    for (id, p) in paths.iter().enumerate() {
        out.push_str(&format!("{id},0,{}\n", p.initial_address(space).digit_string()));
        for (t, a) in p.event_addresses(space) {
            out.push_str(&format!("{id},{t},{}\n", a.digit_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelConfig;
    use crate::markov::build_generator;

    fn setup() -> (TreeSpace, crate::kernel::JumpKernel) {
        let s = TreeSpace::padic(2, 0, 2).unwrap();
        let j = KernelConfig::geometric(1.0).build(&s).unwrap();
        (s, j)
    }

    #[test]
    fn deterministic_paths() {
        let (s, j) = setup();
        let q = build_generator(&s, &j).unwrap();
        let a = sample_path(&q, 0, 5.0, 42).unwrap();
        let b = sample_path(&q, 0, 5.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.events.windows(2).all(|w| w[0].0 < w[1].0));
        let mut prev = a.initial;
        for &(t, x) in &a.events {
            assert!(t > 0.0 && t <= 5.0);
            assert_ne!(x, prev);
            prev = x;
        }
        assert_eq!(sample_path(&q, 0, 0.0, 1).unwrap_err(), Error::NonPositiveHorizon(0.0));
    }

    #[test]
    fn mean_holding_times() {
        let (s, j) = setup();
        let h = Hierarchy::new(&s, &j).unwrap();
        for (q, x0, rate) in [(h.generator(1).unwrap(), 0, 1.0), (h.leaf_generator(), 0, 3.5)] {
            let sampler = JumpSampler::new(q);
            let n = 100_000;
            let total: f64 = (0..n)
                .map(|i| {
                    let p = sampler.sample(x0, 50.0, &mut stream_rng(7, i)).unwrap();
                    p.events[0].0
                })
                .sum();
            let mean = total / n as f64;
            assert!((mean * rate - 1.0).abs() < 0.01, "rate {rate}: mean {mean}");
        }
    }

    #[test]
    fn absorbing_states() {
        let s = TreeSpace::padic(2, 0, 2).unwrap();
        let j = crate::kernel::JumpKernel::table(&s, &vec![vec![0.0; 4]; 4]).unwrap();
        let q = build_generator(&s, &j).unwrap();
        let p = sample_path(&q, 2, 10.0, 3).unwrap();
        assert!(p.events.is_empty());
        assert_eq!(p.state_at(9.0), 2);
    }

    #[test]
    fn initial_laws() {
        let (s, _) = setup();
        let u = InitialDensity::uniform(&s);
        assert_eq!(u.law(&s, 1).unwrap(), vec![0.5, 0.5]);
        let lf = |c: &[f64]| LevelFunction { level: 2, coeffs: c.to_vec() };
        let d = InitialDensity::new(&s, lf(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(d.law(&s, 1).unwrap(), vec![1.0, 0.0]);
        for seed in 0..50 {
            assert_eq!(sample_initial(&s, &d, 1, seed).unwrap(), 0);
        }
        let d = InitialDensity::new(&s, lf(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((d.law(&s, 1).unwrap()[0] - 0.3).abs() < 1e-15);
        assert_eq!(InitialDensity::new(&s, lf(&[0.0; 4])).unwrap_err(), Error::ZeroDensity);

        // leaf draw then projection has the same law as the direct draw
        let n = 40_000u64;
        let leaf = d.sampler(&s, 2).unwrap();
        let direct = d.sampler(&s, 1).unwrap();
        let mut c = [0u64; 2];
        let mut c2 = [0u64; 2];
        for i in 0..n {
            c[s.ancestor(leaf.sample(&mut stream_rng(1, i)), 1)] += 1;
            c2[direct.sample(&mut stream_rng(2, i))] += 1;
        }
        assert!(chi_square_two_sample(&c, &c2).p_value > 1e-3);
    }

    #[test]
    fn projection_and_envelope() {
        let (s, _) = setup();
        let p = PathSample {
            space: s.id(),
            level: 2,
            initial: 0,
            events: vec![(0.5, 1), (1.2, 2)],
            horizon: 2.0,
            truncated: false,
        };
        let p1 = project_path(&s, &p, 1).unwrap();
        assert_eq!(p1.initial, 0);
        assert_eq!(p1.events, vec![(1.2, 1)]);
        assert_eq!(project_path(&s, &p, 2).unwrap(), p);
        assert_eq!(project_path(&s, &p1, 0).unwrap(), project_path(&s, &p, 0).unwrap());
        assert!(matches!(project_path(&s, &p1, 2), Err(Error::LevelOrderViolation { .. })));

        let sec = s.canonical_section(1);
        // visited 00, 01, 10; sections 00 and 10: distances 0, 1/4, 0
        assert_eq!(path_sup_distance(&s, &p, 1, &sec).unwrap(), 0.25);
        assert_eq!(path_sup_distance(&s, &p, 2, &s.canonical_section(2)).unwrap(), 0.0);
    }

    #[test]
    fn fdd_two_state_marginal() {
        let (s, j) = setup();
        let h = Hierarchy::new(&s, &j).unwrap();
        let psi = InitialDensity::new(&s, LevelFunction { level: 2, coeffs: vec![1.0, 1.0, 0.0, 0.0] }).unwrap();
        let rep = fdd_compare(&h, &psi, 1, &[0.5], 100_000, 11).unwrap();
        let e = (-1.0f64).exp();
        let ex = &rep.per_time[0].exact;
        assert!((ex[0] - (1.0 + e) / 2.0).abs() < 1e-12);
        assert!(rep.per_time[0].max_abs_z_level <= 3.0);
        assert!(rep.per_time[0].max_abs_z_leaf <= 3.0);
        assert!(rep.chi_square_pass && rep.marginal_pass);
        assert_eq!(
            fdd_compare(&h, &psi, 1, &[0.5], 10, 1).unwrap_err(),
            Error::InsufficientSamples { got: 10, need: MIN_PATHS }
        );
    }

    #[test]
    fn jump_count_bounds() {
        let (s, j) = setup();
        let q = build_generator(&s, &j).unwrap();
        let r = jump_counts(&s, &q, &InitialDensity::uniform(&s), 5.0, 20_000, 5).unwrap();
        assert_eq!(r.truncated_paths, 0);
        assert!(r.within_bounds(4.0));
        // every leaf exits at rate 3.5
        assert!((r.mean_jumps - 17.5).abs() < 4.0 * r.std_error);
    }

    #[test]
    fn csv_layout() {
        let (s, j) = setup();
        let h = Hierarchy::new(&s, &j).unwrap();
        let paths = leaf_ensemble(&h, &InitialDensity::uniform(&s), 1.0, 2, 9).unwrap();
        let csv = paths_to_csv(&s, &paths);
        assert!(csv.starts_with("path_id,time,state\n0,0,"));
        let occ = occupancy(&s, h.leaf_generator(), &InitialDensity::uniform(&s), 1, &[0.5], 100, 1, (1, 0)).unwrap();
        assert_eq!(occ.counts[0].iter().sum::<u64>(), 100);
        assert!(occ.to_csv(&s).starts_with("time,state,count\n0.5,0,"));
    }
}
