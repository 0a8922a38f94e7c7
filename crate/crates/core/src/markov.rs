//! Level generators, semigroups and resolvents, and the checks that tie the
//! level chains to the leaf chain.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::forms::{extend, m_of, norm, restrict, LevelFunction};
use crate::kernel::{average, AveragedKernel, JumpKernel, RateMatrix};
use crate::space::{BallAddress, SpaceId, TreeSpace};

/// Poisson tail mass left out of the uniformization series.
pub const POISSON_TAIL: f64 = 1e-12;
/// Accepted normwise backward error of a resolvent solve.
pub const SOLVE_TOL: f64 = 1e-12;

/// `Q` with `q(i,j) = J^k(i,j) μ^k(j)` off the diagonal and zero row sums.
///
/// Stored dense; desk-scale trees are capped at a few thousand leaves and
/// Kigami generators have no zero off-diagonal entries anyway.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    space: SpaceId,
    level: i32,
    n: usize,
    q: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn level(&self) -> i32 {
        self.level
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn space_id(&self) -> SpaceId {
        self.space
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.n..(i + 1) * self.n]
    }

    /// `|q(i,i)|`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.get(i, i)
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    pub fn min_exit_rate(&self) -> f64 {
        (0..self.n)
            .map(|i| self.exit_rate(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Row sums, accumulated in the order used to set the diagonal.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let off: f64 = (0..self.n)
                    .filter(|&j| j != i)
                    .map(|j| self.get(i, j))
                    .sum();
                off + self.get(i, i)
            })
            .collect()
    }

    /// Largest `|μ_i q(i,j) − μ_j q(j,i)|`.
    pub fn detailed_balance_defect(&self, space: &TreeSpace) -> f64 {
        let m = space.masses(self.level);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((m[i] * self.get(i, j) - m[j] * self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Non-zero entries as `(i, j, q)`, row-major.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter_map(move |j| {
                let v = self.get(i, j);
                (v != 0.0).then_some((i, j, v))
            })
        })
    }

    pub fn to_matrix_market(&self) -> String {
        let entries: Vec<_> = self.nonzeros().collect();
        let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
        out.push_str(&format!("{} {} {}\n", self.n, self.n, entries.len()));
        for (i, j, v) in entries {
            out.push_str(&format!("{} {} {:e}\n", i + 1, j + 1, v));
        }
        out
    }

    pub fn to_csv_triplets(&self, space: &TreeSpace) -> String {
        let mut out = String::from("from,to,rate\n");
        for (i, j, v) in self.nonzeros() {
            out.push_str(&format!(
                "{},{},{:e}\n",
                space.address(self.level, i).digit_string(),
                space.address(self.level, j).digit_string(),
                v
            ));
        }
        out
    }

    fn check_function(&self, f: &LevelFunction) -> Result<()> {
        if f.level != self.level {
            return Err(Error::LevelMismatch {
                expected: self.level,
                found: f.level,
            });
        }
        if f.coeffs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: f.coeffs.len(),
            });
        }
        Ok(())
    }

    /// `Q f`.
    pub fn apply(&self, f: &LevelFunction) -> Result<LevelFunction> {
        self.check_function(f)?;
        Ok(LevelFunction {
            level: self.level,
            coeffs: self.mul(&f.coeffs),
        })
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn build_generator<R: RateMatrix>(space: &TreeSpace, rates: &R) -> Result<GeneratorMatrix> {
    if rates.space_id() != space.id() {
        return Err(Error::MixedSpaces);
    }
    let k = rates.level();
    space.check_level(k)?;
    let n = space.ball_count(k);
    if rates.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rates.size(),
        });
    }
    let m = space.masses(k);
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = rates.rate(i, j) * m[j];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NegativeRate { i, j, rate: v });
            }
            q[i * n + j] = v;
            off += v;
        }
        q[i * n + i] = -off;
    }
    Ok(GeneratorMatrix {
        space: space.id(),
        level: k,
        n,
        q,
    })
}

/// Normalised Poisson(`a`) weights up to the point where the tail drops below [`POISSON_TAIL`].
fn poisson_weights(a: f64) -> Vec<f64> {
    let ln_a = a.ln();
    let mut weights = Vec::new();
    let mut acc = 0.0;
    let mut n = 0usize;
    loop {
        let w = (-a + n as f64 * ln_a - ln_gamma(n as f64 + 1.0)).exp();
        weights.push(w);
        acc += w;
        let past_mode = n as f64 > a;
        if past_mode && (1.0 - acc < POISSON_TAIL || n as f64 > a + 40.0 * a.sqrt() + 60.0) {
            break;
        }
        n += 1;
    }
    weights.iter().map(|w| w / acc).collect()
}

/// `P_t f = e^{tQ} f` by uniformization.
pub fn semigroup_apply(q: &GeneratorMatrix, t: f64, f: &LevelFunction) -> Result<LevelFunction> {
    q.check_function(f)?;
    if t.is_nan() || t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let lam = q.max_exit_rate();
    if t == 0.0 || lam == 0.0 {
        return Ok(f.clone());
    }
    let n = q.n;
    // P = I + Q/Λ
    let mut p = q.q.iter().map(|v| v / lam).collect::<Vec<_>>();
    for i in 0..n {
        p[i * n + i] += 1.0;
    }
    let weights = poisson_weights(lam * t);
    let mut term = f.coeffs.clone();
    let mut out = vec![0.0; n];
    for (idx, w) in weights.iter().enumerate() {
        if idx > 0 {
            term = (0..n)
                .map(|i| p[i * n..(i + 1) * n].iter().zip(&term).map(|(a, b)| a * b).sum())
                .collect();
        }
        for (o, v) in out.iter_mut().zip(&term) {
            *o += w * v;
        }
    }
    Ok(LevelFunction {
        level: f.level,
        coeffs: out,
    })
}

/// `G_λ f = (λ − Q)^{-1} f`, solved as the symmetric system `(λM − MQ) g = M f`.
pub fn resolvent_apply(
    space: &TreeSpace,
    q: &GeneratorMatrix,
    lambda: f64,
    f: &LevelFunction,
) -> Result<LevelFunction> {
    q.check_function(f)?;
    if q.space != space.id() {
        return Err(Error::MixedSpaces);
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let n = q.n;
    let m = space.masses(q.level);
    let a = DMatrix::from_fn(n, n, |i, j| {
        let aij = if i == j { lambda * m[i] } else { 0.0 } - m[i] * q.get(i, j);
        let aji = if i == j { lambda * m[j] } else { 0.0 } - m[j] * q.get(j, i);
        0.5 * (aij + aji)
    });
    let rhs = DVector::from_iterator(n, f.coeffs.iter().zip(m).map(|(v, w)| v * w));
    let chol = a.clone().cholesky().ok_or(Error::SingularSystem)?;
    let mut g = chol.solve(&rhs);
    let r = &rhs - &a * &g;
    g += chol.solve(&r);

    // backward error against the original (λ − Q) g = f
    let coeffs: Vec<f64> = g.iter().copied().collect();
    let qg = q.mul(&coeffs);
    let res = (0..n)
        .map(|i| (lambda * coeffs[i] - qg[i] - f.coeffs[i]).abs())
        .fold(0.0, f64::max);
    let a_norm = (0..n)
        .map(|i| lambda + q.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let g_norm = coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let f_norm = f.coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = a_norm * g_norm + f_norm;
    if !res.is_finite() || (scale > 0.0 && res > SOLVE_TOL * scale) {
        return Err(Error::SingularSystem);
    }
    Ok(LevelFunction {
        level: f.level,
        coeffs,
    })
}

/// Law at time `t` of the chain started from `ψ μ / Z`, via reversibility:
/// `π_t = μ ⊙ P_t ψ / Z`.
pub fn marginal(
    space: &TreeSpace,
    q: &GeneratorMatrix,
    psi: &LevelFunction,
    t: f64,
) -> Result<Vec<f64>> {
    let m = space.masses(q.level);
    let z: f64 = psi.coeffs.iter().zip(m).map(|(a, b)| a * b).sum();
    if !(z > 0.0) {
        return Err(Error::ZeroDensity);
    }
    let pt = semigroup_apply(q, t, psi)?;
    Ok(pt.coeffs.iter().zip(m).map(|(a, b)| a * b / z).collect())
}

/// Averaged kernels and generators at every level of the window.
pub struct Hierarchy<'a> {
    space: &'a TreeSpace,
    kernel: &'a JumpKernel,
    averaged: Vec<AveragedKernel>,
    generators: Vec<GeneratorMatrix>,
}

impl<'a> Hierarchy<'a> {
    pub fn new(space: &'a TreeSpace, kernel: &'a JumpKernel) -> Result<Self> {
        let mut averaged = Vec::new();
        let mut generators = Vec::new();
        for k in space.window() {
            let jk = average(space, kernel, k)?;
            generators.push(build_generator(space, &jk)?);
            averaged.push(jk);
        }
        Ok(Hierarchy {
            space,
            kernel,
            averaged,
            generators,
        })
    }

    pub fn space(&self) -> &TreeSpace {
        self.space
    }

    pub fn kernel(&self) -> &JumpKernel {
        self.kernel
    }

    pub fn averaged(&self, k: i32) -> Result<&AveragedKernel> {
        Ok(&self.averaged[self.space.check_level(k)?])
    }

    pub fn generator(&self, k: i32) -> Result<&GeneratorMatrix> {
        Ok(&self.generators[self.space.check_level(k)?])
    }

    pub fn leaf_generator(&self) -> &GeneratorMatrix {
        self.generators.last().expect("window is non-empty")
    }

    /// `‖P_t E^k f − E^k P_t^k f‖` in `L²(μ)`.
    pub fn commutation_residual(&self, k: i32, t: f64, f: &LevelFunction) -> Result<f64> {
        let gk = self.generator(k)?;
        let big = self.space.k_max();
        let lhs = semigroup_apply(self.leaf_generator(), t, &extend(self.space, f, big)?)?;
        let rhs = extend(self.space, &semigroup_apply(gk, t, f)?, big)?;
        norm(self.space, &lhs.sub(&rhs)?)
    }

    /// `‖G_λ E^k f − E^k G_λ^k f‖` in `L²(μ)`.
    pub fn resolvent_intertwine_residual(
        &self,
        k: i32,
        lambda: f64,
        f: &LevelFunction,
    ) -> Result<f64> {
        let gk = self.generator(k)?;
        let big = self.space.k_max();
        let lhs = resolvent_apply(
            self.space,
            self.leaf_generator(),
            lambda,
            &extend(self.space, f, big)?,
        )?;
        let rhs = extend(self.space, &resolvent_apply(self.space, gk, lambda, f)?, big)?;
        norm(self.space, &lhs.sub(&rhs)?)
    }

    /// `‖E^k G_λ^k Π^k f − G_λ f‖` in `L²(μ)` for a leaf function `f`.
    pub fn resolvent_approximation_error(
        &self,
        k: i32,
        lambda: f64,
        f: &LevelFunction,
    ) -> Result<f64> {
        let big = self.space.k_max();
        let exact = resolvent_apply(self.space, self.leaf_generator(), lambda, f)?;
        let gk = self.generator(k)?;
        let approx = extend(
            self.space,
            &resolvent_apply(self.space, gk, lambda, &restrict(self.space, f, k)?)?,
            big,
        )?;
        norm(self.space, &approx.sub(&exact)?)
    }

    pub fn tightness_bound(&self, g: &LevelFunction, k0: i32) -> Result<TightnessReport> {
        let m = m_of(self.space, g)?;
        if k0 < m {
            return Err(Error::K0BelowM { k0, m });
        }
        let mut per_level = Vec::new();
        for k in k0..=self.space.k_max() {
            let gk = restrict(self.space, g, k)?;
            let jk = self.averaged(k)?;
            let mk = self.space.masses(k);
            let n = gk.coeffs.len();
            let best = (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| {
                            let d = gk.coeffs[i] - gk.coeffs[j];
                            d * d * jk.rate(i, j) * mk[j]
                        })
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            per_level.push((k, best));
        }
        let c = per_level.iter().map(|p| p.1).fold(0.0, f64::max);
        Ok(TightnessReport { k0, per_level, c })
    }
}

pub fn commutation_residual(
    space: &TreeSpace,
    kernel: &JumpKernel,
    k: i32,
    t: f64,
    f: &LevelFunction,
) -> Result<f64> {
    Hierarchy::new(space, kernel)?.commutation_residual(k, t, f)
}

pub fn resolvent_intertwine_residual(
    space: &TreeSpace,
    kernel: &JumpKernel,
    k: i32,
    lambda: f64,
    f: &LevelFunction,
) -> Result<f64> {
    Hierarchy::new(space, kernel)?.resolvent_intertwine_residual(k, lambda, f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TightnessReport {
    pub k0: i32,
    pub per_level: Vec<(i32, f64)>,
    /// Window maximum of `per_level`.
    pub c: f64,
}

pub fn tightness_bound(
    space: &TreeSpace,
    kernel: &JumpKernel,
    g: &LevelFunction,
    k0: i32,
) -> Result<TightnessReport> {
    Hierarchy::new(space, kernel)?.tightness_bound(g, k0)
}

/// Two states of ball `i` whose aggregate rates into ball `j` differ.
#[derive(Clone, Debug, PartialEq)]
pub struct LumpWitness {
    pub from_ball: BallAddress,
    pub to_ball: BallAddress,
    pub x: BallAddress,
    pub x_prime: BallAddress,
    pub rates: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LumpabilityReport {
    pub level: i32,
    pub lumpable: bool,
    pub lumped: Option<GeneratorMatrix>,
    pub witness: Option<LumpWitness>,
}

/// Strong lumpability of `Q` with respect to the level-`k` partition.
pub fn lumpability_test(
    space: &TreeSpace,
    q: &GeneratorMatrix,
    k: i32,
) -> Result<LumpabilityReport> {
    if q.space != space.id() {
        return Err(Error::MixedSpaces);
    }
    space.check_level(k)?;
    let from = q.level;
    if k > from {
        return Err(Error::LevelOrderViolation { from, to: k });
    }
    let nk = space.ball_count(k);
    let fine_mass = space.masses(from);
    let mut lumped = vec![0.0; nk * nk];
    for i in 0..nk {
        let states = space.descendants(k, i, from);
        for j in 0..nk {
            if i == j {
                continue;
            }
            let targets = space.descendants(k, j, from);
            let agg = |x: usize| -> f64 { targets.clone().map(|y| q.get(x, y)).sum() };
            let x0 = states.start;
            let a0 = agg(x0);
            let mut weighted = a0 * fine_mass[x0];
            for x in states.clone().skip(1) {
                let a = agg(x);
                let tol = 1e-12 * (1.0 + q.exit_rate(x).max(q.exit_rate(x0)));
                if (a - a0).abs() > tol {
                    return Ok(LumpabilityReport {
                        level: k,
                        lumpable: false,
                        lumped: None,
                        witness: Some(LumpWitness {
                            from_ball: space.address(k, i),
                            to_ball: space.address(k, j),
                            x: space.address(from, x0),
                            x_prime: space.address(from, x),
                            rates: (a0, a),
                        }),
                    });
                }
                weighted += a * fine_mass[x];
            }
            lumped[i * nk + j] = weighted / space.mass(k, i);
        }
    }
    for i in 0..nk {
        let off: f64 = (0..nk).filter(|&j| j != i).map(|j| lumped[i * nk + j]).sum();
        lumped[i * nk + i] = -off;
    }
    Ok(LumpabilityReport {
        level: k,
        lumpable: true,
        lumped: Some(GeneratorMatrix {
            space: space.id(),
            level: k,
            n: nk,
            q: lumped,
        }),
        witness: None,
    })
}
