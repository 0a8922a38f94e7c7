//! Rational-arithmetic versions of the extension/restriction identities and
//! the averaging isometry.
//!
//! Leaf masses and kernel entries are converted exactly from their binary
//! floating-point values; ball masses are exact sums of leaf masses. Test
//! functions carry integer coefficients.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{JumpKernel, RateMatrix};
use crate::space::TreeSpace;

pub fn rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::InvalidArgument(format!("{x} is not finite")))
}

/// Exact ball masses for every level of a space.
pub struct ExactMeasure {
    k_min: i32,
    masses: Vec<Vec<BigRational>>,
}

impl ExactMeasure {
    pub fn new(space: &TreeSpace) -> Result<Self> {
        let leaf = space
            .leaf_masses()
            .iter()
            .map(|&m| rational(m))
            .collect::<Result<Vec<_>>>()?;
        let masses = space
            .window()
            .map(|k| {
                (0..space.ball_count(k))
                    .map(|i| space.leaf_range(k, i).map(|x| leaf[x].clone()).sum())
                    .collect()
            })
            .collect();
        Ok(ExactMeasure {
            k_min: space.k_min(),
            masses,
        })
    }

    pub fn masses(&self, k: i32) -> &[BigRational] {
        &self.masses[(k - self.k_min) as usize]
    }

    pub fn inner(&self, k: i32, u: &[BigRational], v: &[BigRational]) -> BigRational {
        u.iter()
            .zip(v)
            .zip(self.masses(k))
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    pub fn extend(&self, space: &TreeSpace, u: &[BigRational], k: i32, k_to: i32) -> Vec<BigRational> {
        (0..space.ball_count(k_to))
            .map(|b| u[space.ancestor_of_ball(k_to, b, k)].clone())
            .collect()
    }

    pub fn restrict(&self, space: &TreeSpace, u: &[BigRational], k: i32, k_to: i32) -> Vec<BigRational> {
        let fine = self.masses(k);
        (0..space.ball_count(k_to))
            .map(|i| {
                let s: BigRational = space
                    .descendants(k_to, i, k)
                    .map(|b| &u[b] * &fine[b])
                    .sum();
                s / &self.masses(k_to)[i]
            })
            .collect()
    }

    /// `J^k` averaged exactly from the leaf kernel.
    pub fn average(&self, space: &TreeSpace, kernel: &JumpKernel, k: i32) -> Result<Vec<BigRational>> {
        let big = space.k_max();
        let leaf = self.masses(big);
        let n = space.ball_count(k);
        let mut out = vec![BigRational::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut sum = BigRational::zero();
                for x in space.leaf_range(k, i) {
                    for y in space.leaf_range(k, j) {
                        sum += rational(kernel.rate(x, y))? * &leaf[x] * &leaf[y];
                    }
                }
                out[i * n + j] = sum / (&self.masses(k)[i] * &self.masses(k)[j]);
            }
        }
        Ok(out)
    }

    /// `½ Σ (u_i − u_j)² J(i, j) μ_i μ_j` with `J` given row-major.
    pub fn energy(&self, k: i32, rates: &[BigRational], u: &[BigRational]) -> BigRational {
        let n = u.len();
        let m = self.masses(k);
        let mut total = BigRational::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = &u[i] - &u[j];
                    total += &d * &d * &rates[i * n + j] * &m[i] * &m[j];
                }
            }
        }
        total / BigRational::from_integer(BigInt::from(2))
    }
}

fn ints(v: &[i64]) -> Vec<BigRational> {
    v.iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactIdentities {
    pub level: i32,
    /// `⟨Π u, v⟩_k = ⟨u, E v⟩`
    pub adjoint: bool,
    /// `Π E v = v`
    pub left_inverse: bool,
    /// `⟨Π u, Π u⟩_k = ⟨u, u⟩` whenever `k ≥ m(u)`; true when not applicable.
    pub norm_preserved: bool,
    pub norm_applicable: bool,
    /// `ℰ^k(v, v) = ℰ(E v, E v)`
    pub isometry: bool,
}

impl ExactIdentities {
    pub fn all(&self) -> bool {
        self.adjoint && self.left_inverse && self.norm_preserved && self.isometry
    }
}

/// Checks the identities at level `k` for a leaf function `u` and a level-`k`
/// function `v`, both with integer coefficients.
pub fn check_identities(
    space: &TreeSpace,
    kernel: &JumpKernel,
    k: i32,
    u: &[i64],
    v: &[i64],
) -> Result<ExactIdentities> {
    space.check_level(k)?;
    let big = space.k_max();
    if u.len() != space.leaf_count() {
        return Err(Error::DimensionMismatch {
            expected: space.leaf_count(),
            found: u.len(),
        });
    }
    if v.len() != space.ball_count(k) {
        return Err(Error::DimensionMismatch {
            expected: space.ball_count(k),
            found: v.len(),
        });
    }
    let ex = ExactMeasure::new(space)?;
    let (u, v) = (ints(u), ints(v));
    let pu = ex.restrict(space, &u, big, k);
    let ev = ex.extend(space, &v, k, big);
    let adjoint = ex.inner(k, &pu, &v) == ex.inner(big, &u, &ev);
    let left_inverse = ex.restrict(space, &ev, big, k) == v;

    let m = (space.k_min()..=big)
        .find(|&l| {
            (0..space.ball_count(l)).all(|i| {
                let r = space.leaf_range(l, i);
                u[r.clone()].iter().all(|x| *x == u[r.start])
            })
        })
        .unwrap_or(big);
    let norm_applicable = k >= m;
    let norm_preserved = !norm_applicable || ex.inner(k, &pu, &pu) == ex.inner(big, &u, &u);

    let leaf_rates = (0..space.leaf_count() * space.leaf_count())
        .map(|idx| rational(kernel.leaf_matrix()[idx]))
        .collect::<Result<Vec<_>>>()?;
    let jk = ex.average(space, kernel, k)?;
    let isometry = ex.energy(k, &jk, &v) == ex.energy(big, &leaf_rates, &ev);

    Ok(ExactIdentities {
        level: k,
        adjoint,
        left_inverse,
        norm_preserved,
        norm_applicable,
        isometry,
    })
}

/// `ℰ(u, u)` for an integer leaf function, exactly.
pub fn leaf_energy(space: &TreeSpace, kernel: &JumpKernel, u: &[i64]) -> Result<BigRational> {
    let ex = ExactMeasure::new(space)?;
    let rates = kernel
        .leaf_matrix()
        .iter()
        .map(|&r| rational(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ex.energy(space.k_max(), &rates, &ints(u)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelConfig;
    use crate::space::SpaceConfig;
    use proptest::prelude::*;

    #[test]
    fn desk_energy_is_exact() {
        let s = TreeSpace::padic(2, 0, 2).unwrap();
        let j = KernelConfig::geometric(1.0).build(&s).unwrap();
        let e = leaf_energy(&s, &j, &[1, 0, 0, 0]).unwrap();
        assert_eq!(e, BigRational::new(BigInt::from(7), BigInt::from(8)));
        let e = leaf_energy(&s, &j, &[1, 1, 0, 0]).unwrap();
        assert_eq!(e, BigRational::new(BigInt::from(1), BigInt::from(2)));
    }

    #[test]
    fn irregular_tree_identities() {
        let cfg: SpaceConfig = serde_json::from_str(
            r#"{"type":"tree","q":3.0,"window":[0,2],"branching":{"default":2,"nodes":{"":3}},
                "weights":{"":[0.5,0.25,0.25],"0":[0.75,0.25]}}"#,
        )
        .unwrap();
        let s = TreeSpace::build(&cfg).unwrap();
        // geometric λ is asymmetric on unequal masses; use a distance table
        let n = s.leaf_count();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|x| (0..n).map(|y| if x == y { 0.0 } else { 0.7 / s.distance(x, y) }).collect())
            .collect();
        let j = crate::kernel::JumpKernel::table(&s, &rows).unwrap();
        let u: Vec<i64> = (0..s.leaf_count() as i64).map(|x| x * x - 3).collect();
        for k in s.window() {
            let v: Vec<i64> = (0..s.ball_count(k) as i64).map(|x| 2 - x).collect();
            let r = check_identities(&s, &j, k, &u, &v).unwrap();
            assert!(r.all(), "{r:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn identities_hold(p in 2u32..4, alpha in 0.2f64..1.5, seed in prop::collection::vec(-9i64..9, 27)) {
            let s = TreeSpace::padic(p, 0, 2).unwrap();
            let j = KernelConfig::geometric(alpha).build(&s).unwrap();
            let u = &seed[..s.leaf_count()];
            for k in s.window() {
                let v = &seed[..s.ball_count(k)];
                prop_assert!(check_identities(&s, &j, k, u, v).unwrap().all());
            }
        }
    }
}
