//! The truncated ultrametric space.
//!
//! Leaves of a finite rooted tree with levels `k_min..=K`. A node at level
//! `k` is addressed by its digit word `d_{k_min+1} .. d_k` (empty at the
//! root) and stands for the ball of leaves below it. Two leaves `x != y`
//! are at distance `q^{-r(x,y)}` where `r` is the first digit position at
//! which their words differ.
//!
//! Nodes of every level are stored in lexicographic digit order, so the
//! leaves below any node form a contiguous index range. Most of the crate
//! works on these indices; [`BallAddress`] is the user-facing form.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Range, RangeInclusive};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense leaf-pair kernels are stored, so the leaf count is capped.
pub const MAX_LEAVES: usize = 4096;

const DIGIT_CHARS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";

static NEXT_SPACE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpaceId(u64);

impl SpaceId {
    fn fresh() -> Self {
        SpaceId(NEXT_SPACE_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// Child counts per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BranchingSpec {
    /// Same count everywhere.
    Uniform(u32),
    /// One count per parent level `k_min..K-1`.
    PerLevel(Vec<u32>),
    /// A default with per-node overrides keyed by digit string.
    PerNode {
        default: u32,
        #[serde(default)]
        nodes: BTreeMap<String, u32>,
    },
}

/// JSON form: `{"type":"padic","p":2,"window":[0,2]}` or
/// `{"type":"tree","q":2.0,"window":[kmin,K],"branching":...,"weights":...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpaceConfig {
    Padic {
        p: u32,
        window: [i32; 2],
    },
    Tree {
        q: f64,
        window: [i32; 2],
        branching: BranchingSpec,
        /// Child mass fractions keyed by parent digit string; uniform when absent.
        #[serde(default)]
        weights: BTreeMap<String, Vec<f64>>,
        #[serde(default)]
        root_mass: Option<f64>,
    },
}

impl SpaceConfig {
    pub fn padic(p: u32, k_min: i32, k_max: i32) -> Self {
        SpaceConfig::Padic {
            p,
            window: [k_min, k_max],
        }
    }

    pub fn window(&self) -> [i32; 2] {
        match self {
            SpaceConfig::Padic { window, .. } | SpaceConfig::Tree { window, .. } => *window,
        }
    }
}

/// A node of the truncated tree, i.e. a ball `B^k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BallAddress {
    space: SpaceId,
    level: i32,
    digits: Vec<u16>,
}

impl BallAddress {
    pub fn level(&self) -> i32 {
        self.level
    }

    pub fn digits(&self) -> &[u16] {
        &self.digits
    }

    pub fn space_id(&self) -> SpaceId {
        self.space
    }

    pub fn digit_string(&self) -> String {
        format_digits(&self.digits)
    }
}

impl fmt::Display for BallAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.digits.is_empty() {
            write!(f, "<root>")
        } else {
            f.write_str(&self.digit_string())
        }
    }
}

pub fn format_digits(digits: &[u16]) -> String {
    digits
        .iter()
        .map(|&d| DIGIT_CHARS[d as usize] as char)
        .collect()
}

pub fn parse_digits(s: &str) -> Result<Vec<u16>> {
    s.chars()
        .map(|c| {
            c.to_digit(36)
                .map(|d| d as u16)
                .ok_or_else(|| Error::InvalidAddress(format!("bad digit '{c}' in \"{s}\"")))
        })
        .collect()
}

#[derive(Clone, Debug)]
struct LevelData {
    digits: Vec<Vec<u16>>,
    mass: Vec<f64>,
    leaves: Vec<Range<usize>>,
    /// Empty at the leaf level.
    children: Vec<Range<usize>>,
}

#[derive(Clone, Debug)]
pub struct TreeSpace {
    id: SpaceId,
    q: f64,
    k_min: i32,
    k_max: i32,
    levels: Vec<LevelData>,
    /// `ancestors[l][leaf]` is the index of the leaf's ancestor at level `k_min + l`.
    ancestors: Vec<Vec<usize>>,
}

impl TreeSpace {
    pub fn build(config: &SpaceConfig) -> Result<Self> {
        match config {
            SpaceConfig::Padic { p, window } => {
                if *p < 2 {
                    return Err(Error::InvalidBranching(format!(
                        "p-adic base must be >= 2, got {p}"
                    )));
                }
                let [k_min, k_max] = *window;
                // every level-0 ball gets mass 1, so a level-k ball has mass p^{-k}
                let root_mass = (*p as f64).powi(-k_min);
                Self::from_parts(
                    *p as f64,
                    k_min,
                    k_max,
                    &BranchingSpec::Uniform(*p),
                    &BTreeMap::new(),
                    root_mass,
                )
            }
            SpaceConfig::Tree {
                q,
                window,
                branching,
                weights,
                root_mass,
            } => {
                if !(q.is_finite() && *q > 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "base q must exceed 1, got {q}"
                    )));
                }
                Self::from_parts(
                    *q,
                    window[0],
                    window[1],
                    branching,
                    weights,
                    root_mass.unwrap_or(1.0),
                )
            }
        }
    }

    pub fn padic(p: u32, k_min: i32, k_max: i32) -> Result<Self> {
        Self::build(&SpaceConfig::padic(p, k_min, k_max))
    }

    fn from_parts(
        q: f64,
        k_min: i32,
        k_max: i32,
        branching: &BranchingSpec,
        weights: &BTreeMap<String, Vec<f64>>,
        root_mass: f64,
    ) -> Result<Self> {
        if k_min >= k_max {
            return Err(Error::EmptyWindow { k_min, k_max });
        }
        if !(root_mass.is_finite() && root_mass > 0.0) {
            return Err(Error::NonPositiveMass(format!("root mass {root_mass}")));
        }
        let depth = (k_max - k_min) as usize;
        if let BranchingSpec::PerLevel(v) = branching {
            if v.len() != depth {
                return Err(Error::InvalidBranching(format!(
                    "per-level branching needs {depth} entries, got {}",
                    v.len()
                )));
            }
        }

        // Top-down: digit words and products of child fractions.
        let mut words: Vec<Vec<Vec<u16>>> = vec![vec![Vec::new()]];
        let mut fractions: Vec<Vec<f64>> = vec![vec![root_mass]];
        let mut children: Vec<Vec<Range<usize>>> = Vec::with_capacity(depth + 1);
        let mut used_weights = 0usize;
        for l in 0..depth {
            let mut next_words = Vec::new();
            let mut next_frac = Vec::new();
            let mut ranges = Vec::with_capacity(words[l].len());
            let mut any_split = false;
            for (node, word) in words[l].iter().enumerate() {
                let key = format_digits(word);
                let count = match branching {
                    BranchingSpec::Uniform(c) => *c,
                    BranchingSpec::PerLevel(v) => v[l],
                    BranchingSpec::PerNode { default, nodes } => {
                        *nodes.get(&key).unwrap_or(default)
                    }
                } as usize;
                if count == 0 {
                    return Err(Error::InvalidBranching(format!(
                        "node '{key}' has no children"
                    )));
                }
                if count > DIGIT_CHARS.len() {
                    return Err(Error::InvalidBranching(format!(
                        "node '{key}' has {count} children; at most {} supported",
                        DIGIT_CHARS.len()
                    )));
                }
                any_split |= count >= 2;
                let fr: Vec<f64> = match weights.get(&key) {
                    Some(w) => {
                        used_weights += 1;
                        if w.len() != count {
                            return Err(Error::InconsistentWeights {
                                node: key,
                                sum: w.iter().sum(),
                            });
                        }
                        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                            return Err(Error::NonPositiveMass(format!(
                                "child fraction {bad} at node '{key}'"
                            )));
                        }
                        let sum: f64 = w.iter().sum();
                        if (sum - 1.0).abs() > 1e-12 {
                            return Err(Error::InconsistentWeights { node: key, sum });
                        }
                        w.clone()
                    }
                    None => vec![1.0 / count as f64; count],
                };
                let start = next_words.len();
                for (d, f) in fr.iter().enumerate() {
                    let mut w = word.clone();
                    w.push(d as u16);
                    next_words.push(w);
                    next_frac.push(fractions[l][node] * f);
                }
                ranges.push(start..next_words.len());
                if next_words.len() > MAX_LEAVES {
                    return Err(Error::TooLarge {
                        leaves: next_words.len(),
                        limit: MAX_LEAVES,
                    });
                }
            }
            if !any_split {
                return Err(Error::InvalidBranching(format!(
                    "no node at level {} has two or more children",
                    k_min + l as i32
                )));
            }
            children.push(ranges);
            words.push(next_words);
            fractions.push(next_frac);
        }
        if used_weights != weights.len() {
            return Err(Error::Config(
                "weights reference nodes that do not exist".into(),
            ));
        }
        children.push(Vec::new());

        // Bottom-up: internal masses are exact sums of their children.
        let n_leaves = words[depth].len();
        let mut masses: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
        masses[depth] = fractions[depth].clone();
        if let Some(bad) = masses[depth].iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::NonPositiveMass(format!("leaf mass {bad}")));
        }
        let mut leaf_ranges: Vec<Vec<Range<usize>>> = vec![Vec::new(); depth + 1];
        leaf_ranges[depth] = (0..n_leaves).map(|i| i..i + 1).collect();
        for l in (0..depth).rev() {
            let (m, r): (Vec<f64>, Vec<Range<usize>>) = children[l]
                .iter()
                .map(|c| {
                    let m = c.clone().map(|ch| masses[l + 1][ch]).sum::<f64>();
                    let r = leaf_ranges[l + 1][c.start].start..leaf_ranges[l + 1][c.end - 1].end;
                    (m, r)
                })
                .unzip();
            masses[l] = m;
            leaf_ranges[l] = r;
        }

        let mut ancestors = vec![vec![0usize; n_leaves]; depth + 1];
        for (l, ranges) in leaf_ranges.iter().enumerate() {
            for (ball, r) in ranges.iter().enumerate() {
                for leaf in r.clone() {
                    ancestors[l][leaf] = ball;
                }
            }
        }

        let levels = words
            .into_iter()
            .zip(masses)
            .zip(leaf_ranges)
            .zip(children)
            .map(|(((digits, mass), leaves), children)| LevelData {
                digits,
                mass,
                leaves,
                children,
            })
            .collect();

        Ok(TreeSpace {
            id: SpaceId::fresh(),
            q,
            k_min,
            k_max,
            levels,
            ancestors,
        })
    }

    pub fn id(&self) -> SpaceId {
        self.id
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    /// The leaf level `K`.
    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    pub fn window(&self) -> RangeInclusive<i32> {
        self.k_min..=self.k_max
    }

    pub fn contains_level(&self, k: i32) -> bool {
        self.window().contains(&k)
    }

    pub fn check_level(&self, k: i32) -> Result<usize> {
        if self.contains_level(k) {
            Ok((k - self.k_min) as usize)
        } else {
            Err(Error::LevelOutOfWindow {
                level: k,
                k_min: self.k_min,
                k_max: self.k_max,
            })
        }
    }

    fn data(&self, k: i32) -> &LevelData {
        &self.levels[(k - self.k_min) as usize]
    }

    /// Number of balls at level `k`. Panics outside the window.
    pub fn ball_count(&self, k: i32) -> usize {
        self.data(k).digits.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.ball_count(self.k_max)
    }

    pub fn masses(&self, k: i32) -> &[f64] {
        &self.data(k).mass
    }

    pub fn leaf_masses(&self) -> &[f64] {
        self.masses(self.k_max)
    }

    pub fn mass(&self, k: i32, ball: usize) -> f64 {
        self.data(k).mass[ball]
    }

    pub fn total_mass(&self) -> f64 {
        self.levels[0].mass[0]
    }

    /// Leaf indices below ball `ball` of level `k`.
    pub fn leaf_range(&self, k: i32, ball: usize) -> Range<usize> {
        self.data(k).leaves[ball].clone()
    }

    pub fn children(&self, k: i32, ball: usize) -> Range<usize> {
        self.data(k).children[ball].clone()
    }

    pub fn child_count(&self, k: i32, ball: usize) -> usize {
        self.data(k).children.get(ball).map_or(0, |r| r.len())
    }

    /// Index of the level-`k` ancestor of `leaf`.
    pub fn ancestor(&self, leaf: usize, k: i32) -> usize {
        self.ancestors[(k - self.k_min) as usize][leaf]
    }

    /// Level-`k2` descendants of ball `ball` at level `k <= k2`, as an index range.
    pub fn descendants(&self, k: i32, ball: usize, k2: i32) -> Range<usize> {
        debug_assert!(k <= k2);
        let (mut lo, mut hi) = (ball, ball + 1);
        for level in k..k2 {
            let ch = &self.data(level).children;
            lo = ch[lo].start;
            hi = ch[hi - 1].end;
        }
        lo..hi
    }

    /// Index of the level-`k` ancestor of ball `ball` at level `k2 >= k`.
    pub fn ancestor_of_ball(&self, k2: i32, ball: usize, k: i32) -> usize {
        self.ancestor(self.data(k2).leaves[ball].start, k)
    }

    pub fn address(&self, k: i32, ball: usize) -> BallAddress {
        BallAddress {
            space: self.id,
            level: k,
            digits: self.data(k).digits[ball].clone(),
        }
    }

    pub fn leaf_address(&self, leaf: usize) -> BallAddress {
        self.address(self.k_max, leaf)
    }

    /// Looks up an address given as a digit string at level `k`.
    pub fn parse_address(&self, k: i32, s: &str) -> Result<BallAddress> {
        self.check_level(k)?;
        let digits = parse_digits(s)?;
        let addr = BallAddress {
            space: self.id,
            level: k,
            digits,
        };
        self.index_of(&addr)?;
        Ok(addr)
    }

    pub fn index_of(&self, addr: &BallAddress) -> Result<usize> {
        if addr.space != self.id {
            return Err(Error::MixedSpaces);
        }
        self.check_level(addr.level)?;
        self.data(addr.level)
            .digits
            .binary_search(&addr.digits)
            .map_err(|_| {
                Error::InvalidAddress(format!("no ball '{}' at level {}", addr, addr.level))
            })
    }

    /// `r(x, y)` for leaf indices; `None` stands for infinity (`x == y`).
    pub fn separation(&self, x: usize, y: usize) -> Option<i32> {
        if x == y {
            return None;
        }
        // first level whose ancestors differ; always <= K since x != y
        let first = self
            .ancestors
            .iter()
            .position(|anc| anc[x] != anc[y])
            .expect("distinct leaves separate at the leaf level");
        Some(self.k_min + first as i32)
    }

    pub fn separation_index(&self, x: &BallAddress, y: &BallAddress) -> Result<Option<i32>> {
        if x.space != self.id || y.space != self.id {
            return Err(Error::MixedSpaces);
        }
        for a in [x, y] {
            if a.level != self.k_max {
                return Err(Error::LevelMismatch {
                    expected: self.k_max,
                    found: a.level,
                });
            }
        }
        Ok(self.separation(self.index_of(x)?, self.index_of(y)?))
    }

    /// `q^{-r}` with `q^{-inf} = 0`.
    pub fn rho(&self, r: Option<i32>) -> f64 {
        r.map_or(0.0, |r| self.q.powi(-r))
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.rho(self.separation(x, y))
    }

    /// Truncates an address to level `k`.
    pub fn project(&self, x: &BallAddress, k: i32) -> Result<BallAddress> {
        self.index_of(x)?;
        self.check_level(k)?;
        if k > x.level {
            return Err(Error::LevelOrderViolation {
                from: x.level,
                to: k,
            });
        }
        let keep = (k - self.k_min) as usize;
        Ok(BallAddress {
            space: self.id,
            level: k,
            digits: x.digits[..keep].to_vec(),
        })
    }

    pub fn enumerate_level(&self, k: i32) -> Result<QuotientLevel> {
        self.check_level(k)?;
        let data = self.data(k);
        Ok(QuotientLevel {
            level: k,
            members: (0..data.digits.len()).map(|i| self.address(k, i)).collect(),
            masses: data.mass.clone(),
            section: data.leaves.iter().map(|r| r.start).collect(),
        })
    }

    /// Lexicographically first leaf of each level-`k` ball.
    pub fn canonical_section(&self, k: i32) -> Vec<usize> {
        self.data(k).leaves.iter().map(|r| r.start).collect()
    }

    /// A uniformly random admissible section.
    pub fn random_section<R: Rng + ?Sized>(&self, k: i32, rng: &mut R) -> Vec<usize> {
        self.data(k)
            .leaves
            .iter()
            .map(|r| rng.random_range(r.clone()))
            .collect()
    }

    pub fn check_section(&self, k: i32, section: &[usize]) -> Result<()> {
        self.check_level(k)?;
        if section.len() != self.ball_count(k) {
            return Err(Error::DimensionMismatch {
                expected: self.ball_count(k),
                found: section.len(),
            });
        }
        for (ball, &leaf) in section.iter().enumerate() {
            if !self.leaf_range(k, ball).contains(&leaf) {
                return Err(Error::InvalidArgument(format!(
                    "section leaf {leaf} does not lie in ball {}",
                    self.address(k, ball)
                )));
            }
        }
        Ok(())
    }
}

/// The quotient `S^k`: level-`k` balls in canonical order plus a section.
#[derive(Clone, Debug)]
pub struct QuotientLevel {
    pub level: i32,
    pub members: Vec<BallAddress>,
    pub masses: Vec<f64>,
    /// Leaf index chosen inside each member.
    pub section: Vec<usize>,
}

impl QuotientLevel {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn with_section(mut self, space: &TreeSpace, section: Vec<usize>) -> Result<Self> {
        space.check_section(self.level, &section)?;
        self.section = section;
        Ok(self)
    }
}
