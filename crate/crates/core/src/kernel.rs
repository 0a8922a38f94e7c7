//! Jump kernels at leaf resolution and their level averages.
//!
//! Every kernel is materialised as a dense symmetric leaf-by-leaf matrix at
//! construction, whatever variant produced it. Averaging, condition
//! certificates and the ball-wise constancy scan all read that matrix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{BallAddress, SpaceId, TreeSpace};

/// A square rate matrix indexed by the balls of one level.
pub trait RateMatrix {
    fn space_id(&self) -> SpaceId;
    fn level(&self) -> i32;
    fn size(&self) -> usize;
    /// `J(i, j)`; zero on the diagonal.
    fn rate(&self, i: usize, j: usize) -> f64;
}

/// Node-indexed jump intensities `λ`, non-decreasing from root to leaves.
///
/// Below the window the profile is held at its root value, so only the
/// terms `m = k_min+1 ..= r` of the Kigami sum are non-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaProfile {
    space: SpaceId,
    /// `values[l][node]` for level `k_min + l`.
    values: Vec<Vec<f64>>,
}

impl LambdaProfile {
    /// `λ(node at level m) = q^{α m}`.
    pub fn geometric(space: &TreeSpace, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidLambda(format!(
                "alpha must be finite, got {alpha}"
            )));
        }
        let values = space
            .window()
            .map(|m| vec![space.q().powf(alpha * m as f64); space.ball_count(m)])
            .collect();
        Self::from_raw(space, values)
    }

    /// One value per level `k_min..=K`.
    pub fn from_levels(space: &TreeSpace, levels: &[f64]) -> Result<Self> {
        let depth = space.window().count();
        if levels.len() != depth {
            return Err(Error::InvalidLambda(format!(
                "expected {depth} level values, got {}",
                levels.len()
            )));
        }
        let values = space
            .window()
            .zip(levels)
            .map(|(m, &v)| vec![v; space.ball_count(m)])
            .collect();
        Self::from_raw(space, values)
    }

    /// One value per node, keyed by digit string (`""` is the root).
    pub fn from_nodes(space: &TreeSpace, nodes: &BTreeMap<String, f64>) -> Result<Self> {
        let mut values = Vec::new();
        let mut used = 0;
        for m in space.window() {
            let mut row = Vec::with_capacity(space.ball_count(m));
            for b in 0..space.ball_count(m) {
                let key = space.address(m, b).digit_string();
                let v = nodes.get(&key).ok_or_else(|| {
                    Error::InvalidLambda(format!("missing value for node '{key}'"))
                })?;
                used += 1;
                row.push(*v);
            }
            values.push(row);
        }
        if used != nodes.len() {
            return Err(Error::InvalidLambda(
                "values given for nodes outside the tree".into(),
            ));
        }
        Self::from_raw(space, values)
    }

    fn from_raw(space: &TreeSpace, values: Vec<Vec<f64>>) -> Result<Self> {
        for (l, row) in values.iter().enumerate() {
            let m = space.k_min() + l as i32;
            for (b, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidLambda(format!(
                        "λ({}) = {v} must be finite and non-negative",
                        space.address(m, b)
                    )));
                }
                if l > 0 {
                    let parent = space.ancestor_of_ball(m, b, m - 1);
                    if v < values[l - 1][parent] {
                        return Err(Error::InvalidLambda(format!(
                            "λ decreases from {} to {} at node '{}'",
                            values[l - 1][parent],
                            v,
                            space.address(m, b).digit_string()
                        )));
                    }
                }
            }
        }
        Ok(LambdaProfile {
            space: space.id(),
            values,
        })
    }

    /// `λ` at ball `node` of level `m`; levels below the window reuse the root value.
    pub fn value(&self, space: &TreeSpace, m: i32, node: usize) -> f64 {
        if m < space.k_min() {
            self.values[0][0]
        } else {
            self.values[(m - space.k_min()) as usize][node]
        }
    }

    pub fn space_id(&self) -> SpaceId {
        self.space
    }
}

/// `J_{λ,μ}(x, y) = Σ_{m ≤ r(x,y)} (λ({x}_m) − λ({x}_{m−1})) / μ(B_x^m)` on leaf indices.
pub fn kigami_value(space: &TreeSpace, profile: &LambdaProfile, x: usize, y: usize) -> Result<f64> {
    let r = space.separation(x, y).ok_or(Error::DiagonalQuery)?;
    let mut sum = 0.0;
    for m in space.k_min() + 1..=r {
        let node = space.ancestor(x, m);
        let parent = space.ancestor(x, m - 1);
        sum += (profile.value(space, m, node) - profile.value(space, m - 1, parent))
            / space.mass(m, node);
    }
    Ok(sum)
}

pub fn kigami_eval(
    space: &TreeSpace,
    profile: &LambdaProfile,
    x: &BallAddress,
    y: &BallAddress,
) -> Result<f64> {
    if profile.space != space.id() {
        return Err(Error::MixedSpaces);
    }
    let sep = space.separation_index(x, y)?;
    if sep.is_none() {
        return Err(Error::DiagonalQuery);
    }
    kigami_value(space, profile, space.index_of(x)?, space.index_of(y)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaValues {
    Levels(Vec<f64>),
    Nodes(BTreeMap<String, f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase", deny_unknown_fields)]
pub enum LambdaSpec {
    Geometric { alpha: f64 },
    Table { values: LambdaValues },
}

impl LambdaSpec {
    pub fn build(&self, space: &TreeSpace) -> Result<LambdaProfile> {
        match self {
            LambdaSpec::Geometric { alpha } => LambdaProfile::geometric(space, *alpha),
            LambdaSpec::Table {
                values: LambdaValues::Levels(v),
            } => LambdaProfile::from_levels(space, v),
            LambdaSpec::Table {
                values: LambdaValues::Nodes(m),
            } => LambdaProfile::from_nodes(space, m),
        }
    }
}

/// One explicit `Γ` entry on a pair of distinct balls of the same level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPair {
    pub level: i32,
    pub i: String,
    pub j: String,
    pub component: usize,
}

/// Component selection for the mixed class. Components are 1-based.
///
/// A leaf pair separated at level `r` uses `by_level[r]` (or `default`);
/// `pairs` then override whole ball products. The resolved assignment must
/// be constant on every `B_i^k × B_j^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSpec {
    #[serde(default = "default_component")]
    pub default: usize,
    #[serde(default)]
    pub by_level: BTreeMap<String, usize>,
    #[serde(default)]
    pub pairs: Vec<GammaPair>,
}

fn default_component() -> usize {
    1
}

impl GammaSpec {
    pub fn by_level(default: usize, levels: &[(i32, usize)]) -> Self {
        GammaSpec {
            default,
            by_level: levels.iter().map(|(k, c)| (k.to_string(), *c)).collect(),
            pairs: Vec::new(),
        }
    }

    /// Resolves the assignment on every leaf pair; entry `x*n+y` (diagonal unused).
    pub fn resolve(&self, space: &TreeSpace, count: usize) -> Result<Vec<usize>> {
        if count == 0 {
            return Err(Error::InvalidKernel(
                "mixed kernel needs at least one component".into(),
            ));
        }
        let check = |c: usize| {
            if c == 0 || c > count {
                Err(Error::ComponentCountMismatch { index: c, count })
            } else {
                Ok(c)
            }
        };
        check(self.default)?;
        let mut levels = BTreeMap::new();
        for (k, &c) in &self.by_level {
            let k: i32 = k
                .parse()
                .map_err(|_| Error::Config(format!("gamma level key '{k}' is not an integer")))?;
            space.check_level(k)?;
            levels.insert(k, check(c)?);
        }

        let n = space.leaf_count();
        let mut gamma = vec![0usize; n * n];
        for x in 0..n {
            for y in 0..n {
                if let Some(r) = space.separation(x, y) {
                    gamma[x * n + y] = *levels.get(&r).unwrap_or(&self.default);
                }
            }
        }

        let mut explicit: Vec<Option<usize>> = vec![None; n * n];
        for p in &self.pairs {
            let c = check(p.component)?;
            let i = space.index_of(&space.parse_address(p.level, &p.i)?)?;
            let j = space.index_of(&space.parse_address(p.level, &p.j)?)?;
            if i == j {
                return Err(Error::InconsistentGamma(format!(
                    "pair ({}, {}) at level {} is not a pair of distinct balls",
                    p.i, p.j, p.level
                )));
            }
            for x in space.leaf_range(p.level, i) {
                for y in space.leaf_range(p.level, j) {
                    for idx in [x * n + y, y * n + x] {
                        match explicit[idx] {
                            Some(prev) if prev != c => {
                                return Err(Error::InconsistentGamma(format!(
                                    "leaf pair ({}, {}) assigned both {prev} and {c}",
                                    space.leaf_address(x),
                                    space.leaf_address(y)
                                )))
                            }
                            _ => explicit[idx] = Some(c),
                        }
                    }
                }
            }
        }
        for (g, e) in gamma.iter_mut().zip(&explicit) {
            if let Some(c) = e {
                *g = *c;
            }
        }

        for k in space.window() {
            for i in 0..space.ball_count(k) {
                for j in 0..space.ball_count(k) {
                    if i == j {
                        continue;
                    }
                    let ri = space.leaf_range(k, i);
                    let rj = space.leaf_range(k, j);
                    let first = gamma[ri.start * n + rj.start];
                    for x in ri.clone() {
                        for y in rj.clone() {
                            if gamma[x * n + y] != first {
                                return Err(Error::InconsistentGamma(format!(
                                    "not constant on {} × {} at level {k}",
                                    space.address(k, i),
                                    space.address(k, j)
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(gamma)
    }
}

/// JSON kernel configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelConfig {
    Kigami {
        lambda: LambdaSpec,
    },
    Mixed {
        components: Vec<LambdaSpec>,
        gamma: GammaSpec,
    },
    Perturbed {
        base: Box<KernelConfig>,
        epsilon: f64,
        /// One `+` or `-` per leaf in canonical order.
        signs: String,
    },
    Table {
        #[serde(default)]
        matrix_csv: Option<PathBuf>,
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
    },
}

impl KernelConfig {
    pub fn geometric(alpha: f64) -> Self {
        KernelConfig::Kigami {
            lambda: LambdaSpec::Geometric { alpha },
        }
    }

    pub fn build(&self, space: &TreeSpace) -> Result<JumpKernel> {
        self.build_in(space, None)
    }

    /// Relative CSV paths are resolved against `base_dir` when given.
    pub fn build_in(&self, space: &TreeSpace, base_dir: Option<&Path>) -> Result<JumpKernel> {
        match self {
            KernelConfig::Kigami { lambda } => JumpKernel::kigami(space, &lambda.build(space)?),
            KernelConfig::Mixed { components, gamma } => {
                let profiles = components
                    .iter()
                    .map(|c| c.build(space))
                    .collect::<Result<Vec<_>>>()?;
                JumpKernel::mixed(space, &profiles, gamma)
            }
            KernelConfig::Perturbed {
                base,
                epsilon,
                signs,
            } => {
                let base = base.build_in(space, base_dir)?;
                JumpKernel::perturbed(space, &base, *epsilon, &parse_signs(signs)?)
            }
            KernelConfig::Table { matrix_csv, matrix } => match (matrix_csv, matrix) {
                (Some(path), None) => {
                    let path = match base_dir {
                        Some(dir) if path.is_relative() => dir.join(path),
                        _ => path.clone(),
                    };
                    JumpKernel::from_csv(space, &path)
                }
                (None, Some(rows)) => JumpKernel::table(space, rows),
                _ => Err(Error::Config(
                    "table kernel needs exactly one of matrix_csv or matrix".into(),
                )),
            },
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            KernelConfig::Kigami { .. } => "kigami",
            KernelConfig::Mixed { .. } => "mixed",
            KernelConfig::Perturbed { .. } => "perturbed",
            KernelConfig::Table { .. } => "table",
        }
    }
}

pub fn parse_signs(s: &str) -> Result<Vec<i8>> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            _ => Err(Error::Config(format!(
                "sign string may only contain '+' and '-', found '{c}'"
            ))),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelVariant {
    Kigami,
    Table,
    Mixed { components: usize },
    Perturbed { epsilon: f64 },
}

/// A symmetric, non-negative jump kernel on the leaves.
#[derive(Clone, Debug)]
pub struct JumpKernel {
    space: SpaceId,
    level: i32,
    n: usize,
    leaf: Vec<f64>,
    variant: KernelVariant,
}

impl JumpKernel {
    fn from_matrix(space: &TreeSpace, leaf: Vec<f64>, variant: KernelVariant) -> Self {
        JumpKernel {
            space: space.id(),
            level: space.k_max(),
            n: space.leaf_count(),
            leaf,
            variant,
        }
    }

    fn kigami_matrix(space: &TreeSpace, profile: &LambdaProfile) -> Result<Vec<f64>> {
        if profile.space != space.id() {
            return Err(Error::MixedSpaces);
        }
        let n = space.leaf_count();
        let mut m = vec![0.0; n * n];
        for x in 0..n {
            for y in x + 1..n {
                let fwd = kigami_value(space, profile, x, y)?;
                let bwd = kigami_value(space, profile, y, x)?;
                if (fwd - bwd).abs() > 1e-12 * fwd.abs().max(bwd.abs()) {
                    return Err(Error::AsymmetricKernel {
                        x: space.leaf_address(x).to_string(),
                        y: space.leaf_address(y).to_string(),
                        forward: fwd,
                        backward: bwd,
                    });
                }
                m[x * n + y] = fwd;
                m[y * n + x] = fwd;
            }
        }
        Ok(m)
    }

    pub fn kigami(space: &TreeSpace, profile: &LambdaProfile) -> Result<Self> {
        Ok(Self::from_matrix(
            space,
            Self::kigami_matrix(space, profile)?,
            KernelVariant::Kigami,
        ))
    }

    /// `J_Γ(x, y) = J_{Γ(x,y)}(x, y)` for Kigami components `J_1..J_l`.
    pub fn mixed(
        space: &TreeSpace,
        components: &[LambdaProfile],
        gamma: &GammaSpec,
    ) -> Result<Self> {
        let assignment = gamma.resolve(space, components.len())?;
        let mats = components
            .iter()
            .map(|p| Self::kigami_matrix(space, p))
            .collect::<Result<Vec<_>>>()?;
        let n = space.leaf_count();
        let mut m = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    m[x * n + y] = mats[assignment[x * n + y] - 1][x * n + y];
                }
            }
        }
        Ok(Self::from_matrix(
            space,
            m,
            KernelVariant::Mixed {
                components: components.len(),
            },
        ))
    }

    /// `J(x, y) (1 + ε s(x) s(y))` with `|ε| < 1`, `s` a sign per leaf.
    pub fn perturbed(
        space: &TreeSpace,
        base: &JumpKernel,
        epsilon: f64,
        signs: &[i8],
    ) -> Result<Self> {
        if base.space != space.id() {
            return Err(Error::MixedSpaces);
        }
        if !(epsilon.is_finite() && epsilon.abs() < 1.0) {
            return Err(Error::InvalidKernel(format!(
                "perturbation needs |ε| < 1, got {epsilon}"
            )));
        }
        let n = space.leaf_count();
        if signs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: signs.len(),
            });
        }
        if signs.iter().any(|s| s.abs() != 1) {
            return Err(Error::InvalidKernel("signs must be ±1".into()));
        }
        let mut m = base.leaf.clone();
        for x in 0..n {
            for y in 0..n {
                m[x * n + y] *= 1.0 + epsilon * f64::from(signs[x] * signs[y]);
            }
        }
        Ok(Self::from_matrix(
            space,
            m,
            KernelVariant::Perturbed { epsilon },
        ))
    }

    /// Explicit leaf-pair table; the diagonal is ignored.
    pub fn table(space: &TreeSpace, rows: &[Vec<f64>]) -> Result<Self> {
        let n = space.leaf_count();
        if rows.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: rows.len(),
            });
        }
        let mut m = vec![0.0; n * n];
        for (x, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            for (y, &v) in row.iter().enumerate() {
                if x == y {
                    continue;
                }
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidKernel(format!("entry ({x}, {y}) = {v}")));
                }
                if v != rows[y][x] {
                    return Err(Error::AsymmetricKernel {
                        x: space.leaf_address(x).to_string(),
                        y: space.leaf_address(y).to_string(),
                        forward: v,
                        backward: rows[y][x],
                    });
                }
                m[x * n + y] = v;
            }
        }
        Ok(Self::from_matrix(space, m, KernelVariant::Table))
    }

    /// Headerless CSV, one row of leaf rates per line.
    pub fn from_csv(space: &TreeSpace, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Config(format!("{}: bad number '{f}'", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::table(space, &rows)
    }

    pub fn variant(&self) -> &KernelVariant {
        &self.variant
    }

    pub fn leaf_matrix(&self) -> &[f64] {
        &self.leaf
    }

    /// `J(x, y)` on leaves given as addresses.
    pub fn eval(&self, space: &TreeSpace, x: &BallAddress, y: &BallAddress) -> Result<f64> {
        if self.space != space.id() {
            return Err(Error::MixedSpaces);
        }
        let (i, j) = (space.index_of(x)?, space.index_of(y)?);
        if i == j {
            return Err(Error::DiagonalQuery);
        }
        Ok(self.rate(i, j))
    }

    /// Relative tolerance used when scanning for ball-wise constancy.
    pub fn bc_tolerance(&self) -> f64 {
        match self.variant {
            KernelVariant::Perturbed { .. } => 1e-12,
            _ => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.leaf.iter().all(|&v| v == 0.0)
    }
}

impl RateMatrix for JumpKernel {
    fn space_id(&self) -> SpaceId {
        self.space
    }
    fn level(&self) -> i32 {
        self.level
    }
    fn size(&self) -> usize {
        self.n
    }
    fn rate(&self, i: usize, j: usize) -> f64 {
        self.leaf[i * self.n + j]
    }
}

/// `J^k(i, j)`: ball-pair averages of the leaf kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedKernel {
    space: SpaceId,
    level: i32,
    n: usize,
    rates: Vec<f64>,
}

impl AveragedKernel {
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Averages this kernel further down to a coarser level `k`.
    pub fn coarsen(&self, space: &TreeSpace, k: i32) -> Result<AveragedKernel> {
        average_matrix(space, self, k)
    }
}

impl RateMatrix for AveragedKernel {
    fn space_id(&self) -> SpaceId {
        self.space
    }
    fn level(&self) -> i32 {
        self.level
    }
    fn size(&self) -> usize {
        self.n
    }
    fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.n + j]
    }
}

fn average_matrix<R: RateMatrix>(space: &TreeSpace, src: &R, k: i32) -> Result<AveragedKernel> {
    if src.space_id() != space.id() {
        return Err(Error::MixedSpaces);
    }
    space.check_level(k)?;
    let from = src.level();
    if k > from {
        return Err(Error::LevelOrderViolation { from, to: k });
    }
    let n = space.ball_count(k);
    let fine_mass = space.masses(from);
    let mass = space.masses(k);
    let mut rates = vec![0.0; n * n];
    for i in 0..n {
        let di = space.descendants(k, i, from);
        for j in 0..n {
            if i == j {
                continue;
            }
            let dj = space.descendants(k, j, from);
            let mut sum = 0.0;
            for a in di.clone() {
                let mut row = 0.0;
                for b in dj.clone() {
                    row += src.rate(a, b) * fine_mass[b];
                }
                sum += row * fine_mass[a];
            }
            rates[i * n + j] = sum / (mass[i] * mass[j]);
        }
    }
    Ok(AveragedKernel {
        space: space.id(),
        level: k,
        n,
        rates,
    })
}

/// `J^k` from the leaf kernel.
pub fn average(space: &TreeSpace, kernel: &JumpKernel, k: i32) -> Result<AveragedKernel> {
    average_matrix(space, kernel, k)
}

/// A violation of ball-wise constancy: `J(x, y) != J(x', y)` with
/// `x, x'` in ball `i` and `y` in ball `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct BcWitness {
    pub i: BallAddress,
    pub j: BallAddress,
    pub x: BallAddress,
    pub x_prime: BallAddress,
    pub y: BallAddress,
    pub values: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcReport {
    pub level: i32,
    pub holds: bool,
    pub witness: Option<BcWitness>,
}

/// Checks `(BC)_k`: `J` constant on `B_i^k × B_j^k` for all `i != j`.
pub fn detect_bc(space: &TreeSpace, kernel: &JumpKernel, k: i32) -> Result<BcReport> {
    if kernel.space != space.id() {
        return Err(Error::MixedSpaces);
    }
    space.check_level(k)?;
    let tol = kernel.bc_tolerance();
    let n = space.ball_count(k);
    // scanning x-variation over all ordered pairs covers y-variation by symmetry
    for i in 0..n {
        let ri = space.leaf_range(k, i);
        for j in 0..n {
            if i == j {
                continue;
            }
            for y in space.leaf_range(k, j) {
                let x0 = ri.start;
                let v0 = kernel.rate(x0, y);
                for x in ri.clone().skip(1) {
                    let v = kernel.rate(x, y);
                    if (v - v0).abs() > tol * v.abs().max(v0.abs()) {
                        return Ok(BcReport {
                            level: k,
                            holds: false,
                            witness: Some(BcWitness {
                                i: space.address(k, i),
                                j: space.address(k, j),
                                x: space.leaf_address(x0),
                                x_prime: space.leaf_address(x),
                                y: space.leaf_address(y),
                                values: (v0, v),
                            }),
                        });
                    }
                }
            }
        }
    }
    Ok(BcReport {
        level: k,
        holds: true,
        witness: None,
    })
}

/// Truncation-level values of the integrability conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub k1: i32,
    pub resolution: i32,
    /// `max_{k,i} ∫_{B_i^k × (B_i^k)^c} J dμ dμ`
    pub a1: f64,
    /// `max_{k ≥ k1, x} μ(B_x^k)^{-1} ∫_{B_x^k × (B_x^{k1})^c} J dμ dμ`
    pub a3: f64,
    /// `max_x ∫_{ρ(x,y) ≥ 1} J(x, y) μ(dy)`
    pub a4: f64,
    pub a1_by_level: Vec<(i32, f64)>,
    pub a3_by_level: Vec<(i32, f64)>,
    pub note: String,
}

pub fn validate_conditions(
    space: &TreeSpace,
    kernel: &JumpKernel,
    k1: i32,
) -> Result<ConditionReport> {
    if kernel.space != space.id() {
        return Err(Error::MixedSpaces);
    }
    space.check_level(k1)?;
    let n = space.leaf_count();
    let mu = space.leaf_masses();
    let row_total: Vec<f64> = (0..n)
        .map(|x| (0..n).map(|y| kernel.rate(x, y) * mu[y]).sum())
        .collect();
    // ∫_{B} ∫_{B^c} J with B given as a leaf range
    let outflow = |inner: std::ops::Range<usize>, outer: std::ops::Range<usize>| -> f64 {
        inner
            .map(|x| {
                let within: f64 = outer.clone().map(|y| kernel.rate(x, y) * mu[y]).sum();
                mu[x] * (row_total[x] - within)
            })
            .sum()
    };

    let mut a1_by_level = Vec::new();
    for k in space.window() {
        let best = (0..space.ball_count(k))
            .map(|i| outflow(space.leaf_range(k, i), space.leaf_range(k, i)))
            .fold(0.0, f64::max);
        a1_by_level.push((k, best));
    }
    let mut a3_by_level = Vec::new();
    for k in k1..=space.k_max() {
        let best = (0..space.ball_count(k))
            .map(|i| {
                let a = space.ancestor_of_ball(k, i, k1);
                outflow(space.leaf_range(k, i), space.leaf_range(k1, a)) / space.mass(k, i)
            })
            .fold(0.0, f64::max);
        a3_by_level.push((k, best));
    }
    let a4 = (0..n)
        .map(|x| {
            (0..n)
                .filter(|&y| matches!(space.separation(x, y), Some(r) if r <= 0))
                .map(|y| kernel.rate(x, y) * mu[y])
                .sum::<f64>()
        })
        .fold(0.0, f64::max);

    Ok(ConditionReport {
        k1,
        resolution: space.k_max(),
        a1: a1_by_level.iter().map(|p| p.1).fold(0.0, f64::max),
        a3: a3_by_level.iter().map(|p| p.1).fold(0.0, f64::max),
        a4,
        a1_by_level,
        a3_by_level,
        note: format!("certificate at resolution K = {}", space.k_max()),
    })
}
