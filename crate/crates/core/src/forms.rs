//! Functions on level quotients, the extension/restriction pair and the
//! jump-type Dirichlet energies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::RateMatrix;
use crate::space::TreeSpace;

/// A real function on the balls of one level, in canonical ball order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFunction {
    pub level: i32,
    pub coeffs: Vec<f64>,
}

impl LevelFunction {
    pub fn new(space: &TreeSpace, level: i32, coeffs: Vec<f64>) -> Result<Self> {
        space.check_level(level)?;
        let n = space.ball_count(level);
        if coeffs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: coeffs.len(),
            });
        }
        if let Some(v) = coeffs.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite coefficient {v}"
            )));
        }
        Ok(LevelFunction { level, coeffs })
    }

    pub fn constant(space: &TreeSpace, level: i32, c: f64) -> Result<Self> {
        space.check_level(level)?;
        let n = space.ball_count(level);
        Self::new(space, level, vec![c; n])
    }

    /// Indicator of ball `ball` at `level`.
    pub fn indicator(space: &TreeSpace, level: i32, ball: usize) -> Result<Self> {
        space.check_level(level)?;
        let n = space.ball_count(level);
        if ball >= n {
            return Err(Error::InvalidAddress(format!(
                "ball {ball} at level {level}"
            )));
        }
        let mut c = vec![0.0; n];
        c[ball] = 1.0;
        Ok(LevelFunction { level, coeffs: c })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scaled(&self, a: f64) -> Self {
        LevelFunction {
            level: self.level,
            coeffs: self.coeffs.iter().map(|v| a * v).collect(),
        }
    }

    /// `self − other`, both at the same level.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_level(self, other)?;
        Ok(LevelFunction {
            level: self.level,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// One CSV line per ball: `address,value`.
    pub fn to_csv(&self, space: &TreeSpace) -> String {
        let mut out = String::from("ball,value\n");
        for (i, v) in self.coeffs.iter().enumerate() {
            out.push_str(&format!(
                "{},{v:e}\n",
                space.address(self.level, i).digit_string()
            ));
        }
        out
    }
}

fn same_level(u: &LevelFunction, v: &LevelFunction) -> Result<()> {
    if u.level != v.level {
        return Err(Error::LevelMismatch {
            expected: u.level,
            found: v.level,
        });
    }
    Ok(())
}

fn check(space: &TreeSpace, u: &LevelFunction) -> Result<usize> {
    space.check_level(u.level)?;
    let n = space.ball_count(u.level);
    if u.coeffs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: u.coeffs.len(),
        });
    }
    Ok(n)
}

/// `⟨u, v⟩` in `L²(S^k; μ^k)`.
pub fn inner(space: &TreeSpace, u: &LevelFunction, v: &LevelFunction) -> Result<f64> {
    same_level(u, v)?;
    check(space, u)?;
    check(space, v)?;
    let m = space.masses(u.level);
    Ok(u.coeffs
        .iter()
        .zip(&v.coeffs)
        .zip(m)
        .map(|((a, b), w)| a * b * w)
        .sum())
}

pub fn norm(space: &TreeSpace, u: &LevelFunction) -> Result<f64> {
    Ok(inner(space, u, u)?.max(0.0).sqrt())
}

/// `E`: each level-`k'` ball inherits its level-`k` ancestor's value.
pub fn extend(space: &TreeSpace, u: &LevelFunction, k_to: i32) -> Result<LevelFunction> {
    check(space, u)?;
    space.check_level(k_to)?;
    let n = space.ball_count(k_to);
    if k_to < u.level {
        return Err(Error::LevelOrderViolation {
            from: u.level,
            to: k_to,
        });
    }
    let coeffs = (0..n)
        .map(|b| u.coeffs[space.ancestor_of_ball(k_to, b, u.level)])
        .collect();
    Ok(LevelFunction {
        level: k_to,
        coeffs,
    })
}

/// `Π`: μ-weighted means over level-`k` balls.
pub fn restrict(space: &TreeSpace, u: &LevelFunction, k_to: i32) -> Result<LevelFunction> {
    check(space, u)?;
    space.check_level(k_to)?;
    let n = space.ball_count(k_to);
    if k_to > u.level {
        return Err(Error::LevelOrderViolation {
            from: u.level,
            to: k_to,
        });
    }
    let fine = space.masses(u.level);
    let coeffs = (0..n)
        .map(|i| {
            let s: f64 = space
                .descendants(k_to, i, u.level)
                .map(|b| u.coeffs[b] * fine[b])
                .sum();
            s / space.mass(k_to, i)
        })
        .collect();
    Ok(LevelFunction {
        level: k_to,
        coeffs,
    })
}

/// `½ Σ_{i≠j} (u_i − u_j)(v_i − v_j) J(i, j) μ_i μ_j` at the kernel's level.
pub fn energy<R: RateMatrix>(
    space: &TreeSpace,
    kernel: &R,
    u: &LevelFunction,
    v: &LevelFunction,
) -> Result<f64> {
    if kernel.space_id() != space.id() {
        return Err(Error::MixedSpaces);
    }
    same_level(u, v)?;
    if u.level != kernel.level() {
        return Err(Error::LevelMismatch {
            expected: kernel.level(),
            found: u.level,
        });
    }
    let n = check(space, u)?;
    check(space, v)?;
    let m = space.masses(u.level);
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                row += (u.coeffs[i] - u.coeffs[j])
                    * (v.coeffs[i] - v.coeffs[j])
                    * kernel.rate(i, j)
                    * m[j];
            }
        }
        total += row * m[i];
    }
    Ok(0.5 * total)
}

/// `ℰ_λ(u, v) = ℰ(u, v) + λ⟨u, v⟩`.
pub fn energy_lambda<R: RateMatrix>(
    space: &TreeSpace,
    kernel: &R,
    lambda: f64,
    u: &LevelFunction,
    v: &LevelFunction,
) -> Result<f64> {
    Ok(energy(space, kernel, u, v)? + lambda * inner(space, u, v)?)
}

/// Least level at which the leaf function `u` is constant on every ball.
pub fn m_of(space: &TreeSpace, u: &LevelFunction) -> Result<i32> {
    check(space, u)?;
    if u.level != space.k_max() {
        return Err(Error::LevelMismatch {
            expected: space.k_max(),
            found: u.level,
        });
    }
    for k in space.window() {
        let constant = (0..space.ball_count(k)).all(|i| {
            let r = space.leaf_range(k, i);
            let first = u.coeffs[r.start];
            u.coeffs[r].iter().all(|&v| v == first)
        });
        if constant {
            return Ok(k);
        }
    }
    Ok(space.k_max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{average, KernelConfig};
    use proptest::prelude::*;

    fn q2() -> TreeSpace {
        TreeSpace::padic(2, 0, 2).unwrap()
    }

    fn lf(level: i32, c: &[f64]) -> LevelFunction {
        LevelFunction {
            level,
            coeffs: c.to_vec(),
        }
    }

    #[test]
    fn extend_and_restrict_desk_values() {
        let s = q2();
        let u = lf(1, &[1.0, 0.0]);
        let e = extend(&s, &u, 2).unwrap();
        assert_eq!(e.coeffs, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(extend(&s, &u, 1).unwrap(), u);
        assert_eq!(inner(&s, &u, &u).unwrap(), 0.5);
        assert_eq!(inner(&s, &e, &e).unwrap(), 0.5);

        let w = lf(2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(restrict(&s, &w, 1).unwrap().coeffs, vec![1.5, 3.5]);
        assert_eq!(restrict(&s, &e, 1).unwrap(), u);
        assert_eq!(inner(&s, &restrict(&s, &w, 1).unwrap(), &u).unwrap(), 0.75);
        assert_eq!(inner(&s, &w, &e).unwrap(), 0.75);
        assert!(matches!(
            extend(&s, &w, 1),
            Err(Error::LevelOrderViolation { .. })
        ));
        assert!(matches!(
            restrict(&s, &u, 2),
            Err(Error::LevelOrderViolation { .. })
        ));
    }

    #[test]
    fn energy_desk_values() {
        let s = q2();
        let j = KernelConfig::geometric(1.0).build(&s).unwrap();
        let u1 = lf(1, &[1.0, 0.0]);
        let uk = extend(&s, &u1, 2).unwrap();
        // 8 ordered cross pairs · 2 · 1/16 · ½
        let oracle = 0.5 * 8.0 * 2.0 / 16.0;
        assert_eq!(energy(&s, &j, &uk, &uk).unwrap(), oracle);
        let j1 = average(&s, &j, 1).unwrap();
        assert_eq!(energy(&s, &j1, &u1, &u1).unwrap(), 0.5);
        let leaf = lf(2, &[1.0, 0.0, 0.0, 0.0]);
        // ½ · 2 · (10 + 2 + 2) / 16
        assert_eq!(energy(&s, &j, &leaf, &leaf).unwrap(), 0.875);
        let c = LevelFunction::constant(&s, 2, 3.0).unwrap();
        assert_eq!(energy(&s, &j, &c, &c).unwrap(), 0.0);
        assert!(matches!(
            energy(&s, &j, &u1, &u1),
            Err(Error::LevelMismatch { .. })
        ));
    }

    #[test]
    fn m_of_examples() {
        let s = q2();
        let e = extend(&s, &lf(1, &[1.0, 0.0]), 2).unwrap();
        assert_eq!(m_of(&s, &e).unwrap(), 1);
        assert_eq!(
            m_of(&s, &LevelFunction::constant(&s, 2, 1.0).unwrap()).unwrap(),
            0
        );
        assert_eq!(m_of(&s, &lf(2, &[1.0, 2.0, 3.0, 4.0])).unwrap(), 2);
    }

    #[test]
    fn csv_and_json() {
        let s = q2();
        let u = lf(1, &[1.0, 0.5]);
        assert_eq!(u.to_csv(&s), "ball,value\n0,1e0\n1,5e-1\n");
        let js = serde_json::to_string(&u).unwrap();
        assert_eq!(js, r#"{"level":1,"coeffs":[1.0,0.5]}"#);
    }

    fn arb() -> impl Strategy<Value = (TreeSpace, i32, Vec<f64>, Vec<f64>)> {
        (2u32..4, 1i32..4).prop_flat_map(|(p, depth)| {
            let s = TreeSpace::padic(p, 0, depth).unwrap();
            let n = s.leaf_count();
            (
                Just(s),
                0..=depth,
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn adjoint_and_identity((s, k, a, b) in arb()) {
            let u = lf(s.k_max(), &a);
            let v = restrict(&s, &lf(s.k_max(), &b), k).unwrap();
            let lhs = inner(&s, &restrict(&s, &u, k).unwrap(), &v).unwrap();
            let rhs = inner(&s, &u, &extend(&s, &v, s.k_max()).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let back = restrict(&s, &extend(&s, &v, s.k_max()).unwrap(), k).unwrap();
            for (x, y) in back.coeffs.iter().zip(&v.coeffs) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            let nr = norm(&s, &restrict(&s, &u, k).unwrap()).unwrap();
            prop_assert!(nr <= norm(&s, &u).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn averaging_isometry((s, k, a, b) in arb()) {
            let j = KernelConfig::geometric(0.8).build(&s).unwrap();
            let jk = average(&s, &j, k).unwrap();
            let u = restrict(&s, &lf(s.k_max(), &a), k).unwrap();
            let ek = energy(&s, &jk, &u, &u).unwrap();
            let ue = extend(&s, &u, s.k_max()).unwrap();
            let e = energy(&s, &j, &ue, &ue).unwrap();
            prop_assert!((ek - e).abs() <= 1e-10 * (1.0 + e));
            let v = lf(s.k_max(), &b);
            let u = lf(s.k_max(), &a);
            let uv = energy(&s, &j, &u, &v).unwrap();
            prop_assert!((uv - energy(&s, &j, &v, &u).unwrap()).abs() <= 1e-12 * (1.0 + uv.abs()));
            let uu = energy(&s, &j, &u, &u).unwrap();
            let vv = energy(&s, &j, &v, &v).unwrap();
            prop_assert!(uu >= 0.0);
            prop_assert!(uv * uv <= uu * vv * (1.0 + 1e-10) + 1e-12);
        }
    }
}
