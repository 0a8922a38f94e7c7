//! The verification experiments.

use anyhow::{bail, Context as _, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use ultrajump_core::exact::{self, rational, ExactMeasure};
use ultrajump_core::forms::{energy, extend, inner, m_of, norm, restrict};
use ultrajump_core::kernel::{average, detect_bc, validate_conditions, LambdaSpec};
use ultrajump_core::markov::{lumpability_test, resolvent_apply, semigroup_apply};
use ultrajump_core::sim::{
    fdd_compare, jump_counts, leaf_ensemble, path_sup_distance, paths_to_csv, stream_rng, InitialDensity,
};
use ultrajump_core::space::BranchingSpec;
use ultrajump_core::{
    GeneratorMatrix, Hierarchy, JumpKernel, KernelConfig, LevelFunction, RateMatrix, SpaceConfig, TreeSpace,
};

use crate::config::Resolved;
use crate::report::{Check, Section};

/// Commutation residual accepted when `(BC)_k` holds.
pub const COMMUTATION_TOL: f64 = 1e-9;
/// Intertwining residual accepted when `(BC)_k` holds.
pub const INTERTWINE_TOL: f64 = 1e-10;
/// Lower bounds the control residuals must exceed.
pub const CONTROL_COMMUTATION: f64 = 1e-3;
pub const CONTROL_INTERTWINE: f64 = 1e-4;
pub const ISOMETRY_TOL: f64 = 1e-10;
pub const AXIOM_TOL: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-14;
pub const LUMPED_TOL: f64 = 1e-12;
pub const DESK_TOL: f64 = 1e-9;
pub const TIGHTNESS_DRIFT: f64 = 0.05;
pub const CONSISTENCY_T: (f64, f64) = (1e-4, 1e-5);
pub const CONSISTENCY_TOL: f64 = 0.01;
pub const RICHARDSON_TOL: f64 = 1e-3;

// independent random streams per experiment
const S_VALIDATE: u64 = 11;
const S_ENERGIES: u64 = 12;
const S_COMMUTATION: u64 = 13;
const S_INTERTWINE: u64 = 14;
const S_TIGHTNESS: u64 = 15;
const S_ENVELOPE: u64 = 16;

pub struct Ctx<'a> {
    pub r: &'a Resolved,
    pub h: Hierarchy<'a>,
}

impl<'a> Ctx<'a> {
    pub fn new(r: &'a Resolved) -> Result<Self> {
        Ok(Ctx {
            r,
            h: Hierarchy::new(&r.space, &r.kernel)?,
        })
    }

    fn space(&self) -> &TreeSpace {
        &self.r.space
    }

    fn kernel(&self) -> &JumpKernel {
        &self.r.kernel
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        stream_rng(self.r.params.seed, stream)
    }

    fn variant(&self) -> &'static str {
        self.r.kernel_config.variant_name()
    }

    fn bc(&self, k: i32) -> Result<bool> {
        Ok(detect_bc(self.space(), self.kernel(), k)?.holds)
    }

    fn psi(&self) -> Result<InitialDensity> {
        let s = self.space();
        let coeffs = match &self.r.params.psi {
            Some(v) => v.clone(),
            None => (0..s.leaf_count()).map(|x| 1.0 + x as f64).collect(),
        };
        Ok(InitialDensity::new(s, LevelFunction::new(s, s.k_max(), coeffs)?)?)
    }

    /// `Q_2` on levels `0..2` with `λ = 2^m`.
    pub fn is_desk_instance(&self) -> bool {
        self.r.space_config == SpaceConfig::padic(2, 0, 2) && self.r.kernel_config == KernelConfig::geometric(1.0)
    }
}

fn random_fn(space: &TreeSpace, k: i32, rng: &mut ChaCha8Rng) -> LevelFunction {
    LevelFunction {
        level: k,
        coeffs: (0..space.ball_count(k)).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn random_ints(n: usize, rng: &mut ChaCha8Rng) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(-9..=9)).collect()
}

fn as_fn(level: i32, v: &[i64]) -> LevelFunction {
    LevelFunction {
        level,
        coeffs: v.iter().map(|&x| x as f64).collect(),
    }
}

fn rel(value: f64, reference: f64) -> f64 {
    if reference != 0.0 {
        (value - reference).abs() / reference.abs()
    } else {
        value.abs()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn level_indicator(space: &TreeSpace) -> Option<(i32, LevelFunction)> {
    let k = space.k_min() + 1;
    (k <= space.k_max()).then(|| (k, LevelFunction::indicator(space, k, 0).expect("level in window")))
}

pub fn run(name: &str, ctx: &Ctx<'_>) -> Result<Vec<Section>> {
    Ok(match name {
        "validate" => vec![validate(ctx)?],
        "energies" => vec![energies(ctx)?],
        "commutation" => vec![commutation(ctx)?],
        "intertwine" => vec![intertwine(ctx)?],
        "lumpability" => vec![lumpability(ctx)?],
        "tightness" => vec![tightness(ctx)?],
        "simulate" => vec![simulate(ctx)?],
        "fdd" => vec![fdd(ctx)?],
        "envelope" => vec![envelope(ctx)?],
        "full-suite" => {
            let mut out = Vec::new();
            for e in [
                "validate",
                "energies",
                "commutation",
                "intertwine",
                "lumpability",
                "tightness",
                "simulate",
                "fdd",
                "envelope",
            ] {
                out.extend(run(e, ctx)?);
            }
            if ctx.is_desk_instance() {
                out.push(desk(ctx)?);
            }
            out
        }
        other => bail!("unknown experiment '{other}'"),
    })
}

/// Extension/restriction axioms and the integrability certificates.
pub fn validate(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let big = s.k_max();
    let levels: Vec<i32> = s.window().collect();
    let mut rng = ctx.rng(S_VALIDATE);
    let ex = ExactMeasure::new(s)?;
    let (mut adj, mut inv, mut contraction, mut er4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut er4_cases, mut er4_exact_failures, mut exact_failures, mut exact_runs) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..ctx.r.params.pairs {
        let k = levels[rng.random_range(0..levels.len())];
        let ui = random_ints(s.leaf_count(), &mut rng);
        let vi = random_ints(s.ball_count(k), &mut rng);
        let (u, v) = (as_fn(big, &ui), as_fn(k, &vi));
        let ev = extend(s, &v, big)?;
        let pu = restrict(s, &u, k)?;
        let rhs = inner(s, &u, &ev)?;
        adj = adj.max((inner(s, &pu, &v)? - rhs).abs() / (1.0 + rhs.abs()));
        let back = restrict(s, &ev, k)?;
        inv = inv.max(
            back.coeffs
                .iter()
                .zip(&v.coeffs)
                .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                .fold(0.0, f64::max),
        );
        let nu = norm(s, &u)?;
        contraction = contraction.max((norm(s, &pu)? - nu) / nu.max(f64::MIN_POSITIVE));

        // a function of D^m, checked at every k >= m
        let m = levels[rng.random_range(0..levels.len())];
        let wi = random_ints(s.ball_count(m), &mut rng);
        let w = extend(s, &as_fn(m, &wi), big)?;
        let wr: Vec<_> = w.coeffs.iter().map(|&x| rational(x)).collect::<Result<_, _>>()?;
        let m_w = m_of(s, &w)?;
        let full = inner(s, &w, &w)?;
        let full_exact = ex.inner(big, &wr, &wr);
        for k2 in m_w..=big {
            let pw = restrict(s, &w, k2)?;
            er4 = er4.max(rel(inner(s, &pw, &pw)?, full));
            let pr = ex.restrict(s, &wr, big, k2);
            if ex.inner(k2, &pr, &pr) != full_exact {
                er4_exact_failures += 1;
            }
            er4_cases += 1;
        }

        if ctx.r.exact {
            exact_runs += 1;
            if !exact::check_identities(s, ctx.kernel(), k, &ui, &vi)?.all() {
                exact_failures += 1;
            }
        }
    }

    let mut certificates = Vec::new();
    for k1 in s.window() {
        let c = validate_conditions(s, ctx.kernel(), k1)?;
        certificates.push(json!({
            "k1": c.k1, "a1": c.a1, "a3": c.a3, "a4": c.a4,
            "a1_by_level": c.a1_by_level, "a3_by_level": c.a3_by_level, "note": c.note,
        }));
    }
    let mut bc = Vec::new();
    for k in s.window() {
        let rep = detect_bc(s, ctx.kernel(), k)?;
        bc.push(json!({
            "level": k,
            "holds": rep.holds,
            "witness": rep.witness.map(|w| json!({
                "i": w.i.digit_string(), "j": w.j.digit_string(),
                "x": w.x.digit_string(), "x_prime": w.x_prime.digit_string(), "y": w.y.digit_string(),
                "values": [w.values.0, w.values.1],
            })),
        }));
    }

    let mut checks = vec![
        Check::at_most("adjointness <Πu,v> = <u,Ev>", Some(2), adj, AXIOM_TOL),
        Check::at_most("left inverse ΠE = id", Some(2), inv, AXIOM_TOL),
        Check::at_most("restriction is a contraction", Some(2), contraction, AXIOM_TOL),
        Check::at_most("norm preserved by Π^k for k >= m(u)", Some(2), er4, AXIOM_TOL),
        Check::flag(
            "norm preserved by Π^k for k >= m(u), rational arithmetic",
            Some(2),
            er4_exact_failures == 0,
            format!("{er4_cases} cases, {er4_exact_failures} unequal"),
        ),
        Check::flag(
            "certificates finite",
            None,
            certificates.iter().all(|c| {
                ["a1", "a3", "a4"]
                    .iter()
                    .all(|f| c[f].as_f64().is_some_and(f64::is_finite))
            }),
            "",
        ),
    ];
    if ctx.r.exact {
        checks.push(Check::flag(
            "axioms and isometry in rational arithmetic",
            Some(2),
            exact_failures == 0,
            format!("{exact_runs} pairs, {exact_failures} failing"),
        ));
    }
    let results = json!({
        "pairs": ctx.r.params.pairs,
        "adjoint_max_rel": adj,
        "left_inverse_max_rel": inv,
        "contraction_excess": contraction,
        "norm_preservation_max_rel": er4,
        "norm_preservation_cases": er4_cases,
        "certificates": certificates,
        "bc": bc,
    });
    Ok(Section::new("validate", &[2], checks, results))
}

/// Averaging isometry and the small-time semigroup/form comparison.
pub fn energies(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let big = s.k_max();
    let mut rng = ctx.rng(S_ENERGIES);
    let mut csv = String::from("level,trial,level_energy,leaf_energy,rel_diff\n");
    let mut worst_iso = 0.0f64;
    for k in s.window() {
        let jk = ctx.h.averaged(k)?;
        for trial in 0..ctx.r.params.trials {
            let u = random_fn(s, k, &mut rng);
            let ek = energy(s, jk, &u, &u)?;
            let eu = extend(s, &u, big)?;
            let e = energy(s, ctx.kernel(), &eu, &eu)?;
            let d = (ek - e).abs() / (1.0 + e);
            worst_iso = worst_iso.max(d);
            csv.push_str(&format!("{k},{trial},{ek},{e},{d}\n"));
        }
    }
    let indicator = match level_indicator(s) {
        Some((k, u)) => {
            let eu = extend(s, &u, big)?;
            json!({
                "level": k,
                "level_energy": energy(s, ctx.h.averaged(k)?, &u, &u)?,
                "leaf_energy": energy(s, ctx.kernel(), &eu, &eu)?,
            })
        }
        None => Value::Null,
    };

    let (t1, t2) = CONSISTENCY_T;
    let mut cons = String::from("level,trial,energy,quotient_t1,quotient_t2,richardson\n");
    let (mut worst_t1, mut worst_rich) = (0.0f64, 0.0f64);
    for k in s.window() {
        let q = ctx.h.generator(k)?;
        let jk = ctx.h.averaged(k)?;
        for trial in 0..ctx.r.params.consistency_trials {
            let f = random_fn(s, k, &mut rng);
            let e = energy(s, jk, &f, &f)?;
            let quotient = |t: f64| -> Result<f64> {
                let pf = semigroup_apply(q, t, &f)?;
                Ok(inner(s, &f.sub(&pf)?, &f)? / t)
            };
            let (d1, d2) = (quotient(t1)?, quotient(t2)?);
            let rich = (t1 * d2 - t2 * d1) / (t1 - t2);
            worst_t1 = worst_t1.max(rel(d1, e));
            worst_rich = worst_rich.max(rel(rich, e));
            cons.push_str(&format!("{k},{trial},{e},{d1},{d2},{rich}\n"));
        }
    }

    let mut checks = vec![
        Check::at_most("averaging isometry ℰ^k(u) = ℰ(E^k u)", Some(1), worst_iso, ISOMETRY_TOL),
        Check::at_most("<f - P_t f, f>/t vs ℰ(f) at t = 1e-4", Some(8), worst_t1, CONSISTENCY_TOL),
        Check::at_most("Richardson extrapolation with t = 1e-5", Some(8), worst_rich, RICHARDSON_TOL),
    ];
    if ctx.r.exact {
        let mut failures = 0;
        let mut runs = 0;
        for k in s.window() {
            for _ in 0..10 {
                let vi = random_ints(s.ball_count(k), &mut rng);
                let ui = random_ints(s.leaf_count(), &mut rng);
                runs += 1;
                if !exact::check_identities(s, ctx.kernel(), k, &ui, &vi)?.isometry {
                    failures += 1;
                }
            }
        }
        checks.push(Check::flag(
            "averaging isometry in rational arithmetic",
            Some(1),
            failures == 0,
            format!("{runs} functions, {failures} failing"),
        ));
    }
    let results = json!({
        "trials_per_level": ctx.r.params.trials,
        "isometry_max_rel": worst_iso,
        "indicator": indicator,
        "consistency_t": [t1, t2],
        "consistency_max_rel_t1": worst_t1,
        "richardson_max_rel": worst_rich,
    });
    Ok(Section::new("energies", &[1, 8], checks, results)
        .with_files(vec![("energies.csv".into(), csv), ("consistency.csv".into(), cons)]))
}

/// Semigroup commutation, resolvent intertwining and lumpability agreement.
pub fn commutation(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let p = &ctx.r.params;
    let mut rng = ctx.rng(S_COMMUTATION);
    let mut rows = Vec::new();
    let mut csv = String::from("kernel,level,quantity,parameter,function,residual,bc_holds\n");
    let mut checks = Vec::new();
    for k in s.k_min()..s.k_max() {
        let bc = ctx.bc(k)?;
        let n = s.ball_count(k);
        let mut fs: Vec<(String, LevelFunction)> = (0..n.min(8))
            .map(|i| (format!("indicator:{}", s.address(k, i).digit_string()), LevelFunction::indicator(s, k, i)))
            .map(|(name, f)| f.map(|f| (name, f)))
            .collect::<Result<_, _>>()?;
        for i in 0..3 {
            fs.push((format!("random:{i}"), random_fn(s, k, &mut rng)));
        }
        let (mut worst_c, mut worst_i) = (0.0f64, 0.0f64);
        let mut control_c = f64::INFINITY;
        let mut control_i = f64::INFINITY;
        for (fname, f) in &fs {
            for &t in &p.times {
                let r = ctx.h.commutation_residual(k, t, f)?;
                worst_c = worst_c.max(r);
                if fs[0].0 == *fname && t > 0.0 {
                    control_c = control_c.min(r);
                }
                rows.push(json!({"kernel": ctx.variant(), "level": k, "t": t, "function": fname, "residual": r, "bc_holds": bc}));
                csv.push_str(&format!("{},{k},commutation,{t},{fname},{r},{bc}\n", ctx.variant()));
            }
            for &lam in &p.lambdas {
                let r = ctx.h.resolvent_intertwine_residual(k, lam, f)?;
                worst_i = worst_i.max(r);
                if fs[0].0 == *fname {
                    control_i = control_i.min(r);
                }
                rows.push(json!({"kernel": ctx.variant(), "level": k, "lambda": lam, "function": fname, "residual": r, "bc_holds": bc}));
                csv.push_str(&format!("{},{k},intertwine,{lam},{fname},{r},{bc}\n", ctx.variant()));
            }
        }
        if bc {
            checks.push(Check::at_most(format!("commutation residual at level {k}"), Some(3), worst_c, COMMUTATION_TOL));
            checks.push(Check::at_most(format!("intertwining residual at level {k}"), Some(3), worst_i, INTERTWINE_TOL));
        } else {
            let f0 = &fs[0].0;
            if control_c.is_finite() {
                checks.push(
                    Check::above(format!("control commutation residual at level {k}"), Some(3), control_c, CONTROL_COMMUTATION)
                        .with_detail(format!("(BC)_{k} fails; minimum over t > 0 for {f0}")),
                );
            }
            checks.push(
                Check::above(format!("control intertwining residual at level {k}"), Some(3), control_i, CONTROL_INTERTWINE)
                    .with_detail(format!("(BC)_{k} fails; minimum over λ for {f0}")),
            );
        }
    }
    let mut agreement = Vec::new();
    for k in s.window() {
        let bc = ctx.bc(k)?;
        let lump = lumpability_test(s, ctx.h.leaf_generator(), k)?.lumpable;
        agreement.push(json!({"level": k, "bc": bc, "lumpable": lump}));
        checks.push(Check::flag(
            format!("lumpability agrees with (BC) at level {k}"),
            Some(3),
            bc == lump,
            format!("bc={bc} lumpable={lump}"),
        ));
    }
    let results = json!({"residuals": rows, "agreement": agreement});
    Ok(Section::new("commutation", &[3], checks, results).with_files(vec![("residuals.csv".into(), csv)]))
}

/// Energy preservation under restriction and the resolvent approximation study.
pub fn intertwine(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let big = s.k_max();
    let mut rng = ctx.rng(S_INTERTWINE);
    let ex = if ctx.r.exact { Some(ExactMeasure::new(s)?) } else { None };
    let leaf_rates = ctx
        .kernel()
        .leaf_matrix()
        .iter()
        .map(|&r| rational(r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut worst = 0.0f64;
    let mut exact_failures = 0usize;
    let mut cases = 0usize;
    for m in s.window() {
        for _ in 0..5 {
            let wi = random_ints(s.ball_count(m), &mut rng);
            let u = extend(s, &as_fn(m, &wi), big)?;
            let e = energy(s, ctx.kernel(), &u, &u)?;
            let mu = m_of(s, &u)?;
            for k in mu..=big {
                let pu = restrict(s, &u, k)?;
                let ek = energy(s, ctx.h.averaged(k)?, &pu, &pu)?;
                worst = worst.max((ek - e).abs() / (1.0 + e));
                cases += 1;
                if let Some(ex) = &ex {
                    let ur: Vec<_> = u.coeffs.iter().map(|&x| rational(x)).collect::<Result<_, _>>()?;
                    let pr = ex.restrict(s, &ur, big, k);
                    let jk = ex.average(s, ctx.kernel(), k)?;
                    if ex.energy(k, &jk, &pr) != ex.energy(big, &leaf_rates, &ur) {
                        exact_failures += 1;
                    }
                }
            }
        }
    }

    let all_bc = s.window().map(|k| ctx.bc(k)).collect::<Result<Vec<_>>>()?.into_iter().all(|b| b);
    let mut csv = String::from("trial,lambda,level,error\n");
    let mut violations = 0usize;
    let mut endpoint = 0.0f64;
    let mut series = Vec::new();
    for trial in 0..ctx.r.params.resolvent_trials {
        let f = random_fn(s, big, &mut rng);
        for &lam in &ctx.r.params.lambdas {
            let errs = s
                .window()
                .map(|k| ctx.h.resolvent_approximation_error(k, lam, &f))
                .collect::<ultrajump_core::Result<Vec<f64>>>()?;
            for (k, e) in s.window().zip(&errs) {
                csv.push_str(&format!("{trial},{lam},{k},{e}\n"));
            }
            violations += errs
                .windows(2)
                .filter(|w| w[1] > w[0] * (1.0 + 1e-9) + 1e-14)
                .count();
            endpoint = endpoint.max(*errs.last().expect("non-empty window"));
            series.push(json!({"trial": trial, "lambda": lam, "errors": errs}));
        }
    }
    let mut checks = vec![Check::at_most(
        "ℰ^k(Π^k u) = ℰ(u) for k >= m(u)",
        Some(9),
        worst,
        AXIOM_TOL,
    )];
    if ex.is_some() {
        checks.push(Check::flag(
            "ℰ^k(Π^k u) = ℰ(u) in rational arithmetic",
            Some(9),
            exact_failures == 0,
            format!("{cases} cases, {exact_failures} unequal"),
        ));
    }
    if all_bc {
        checks.push(
            Check::at_most("resolvent approximation error non-increasing in k", Some(9), violations as f64, 0.0)
                .with_detail("count of increasing steps"),
        );
    } else {
        checks.push(
            Check::at_most("resolvent approximation error vanishes at k = K", Some(9), endpoint, 1e-12)
                .with_detail(format!("(BC) fails somewhere; monotonicity monitored: {violations} increasing steps")),
        );
    }
    let results = json!({
        "energy_cases": cases,
        "energy_max_rel": worst,
        "all_levels_bc": all_bc,
        "monotone_asserted": all_bc,
        "monotonicity_violations": violations,
        "endpoint_error": endpoint,
        "series": series,
    });
    Ok(Section::new("intertwine", &[9], checks, results).with_files(vec![("resolvent_errors.csv".into(), csv)]))
}

fn lumped_defect(a: &GeneratorMatrix, b: &GeneratorMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.size() {
        for j in 0..a.size() {
            worst = worst.max((a.get(i, j) - b.get(i, j)).abs() / (1.0 + b.get(i, j).abs()));
        }
    }
    worst
}

pub fn lumpability(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for k in s.window() {
        let bc = ctx.bc(k)?;
        let rep = lumpability_test(s, ctx.h.leaf_generator(), k)?;
        checks.push(Check::flag(
            format!("lumpability agrees with (BC) at level {k}"),
            None,
            bc == rep.lumpable,
            format!("bc={bc} lumpable={}", rep.lumpable),
        ));
        let mut defect = Value::Null;
        if let Some(l) = &rep.lumped {
            let d = lumped_defect(l, ctx.h.generator(k)?);
            defect = json!(d);
            checks.push(Check::at_most(format!("lumped generator equals Q^{k}"), None, d, LUMPED_TOL));
            files.push((format!("lumped_level{k}.mtx"), l.to_matrix_market()));
        }
        rows.push(json!({
            "level": k,
            "bc": bc,
            "lumpable": rep.lumpable,
            "lumped_defect": defect,
            "witness": rep.witness.map(|w| json!({
                "from": w.from_ball.digit_string(), "to": w.to_ball.digit_string(),
                "x": w.x.digit_string(), "x_prime": w.x_prime.digit_string(),
                "rates": [w.rates.0, w.rates.1],
            })),
        }));
    }
    Ok(Section::new("lumpability", &[], checks, json!({ "levels": rows })).with_files(files))
}

/// The same space one level deeper, when the configuration allows it.
fn raised(r: &Resolved) -> Option<(SpaceConfig, KernelConfig)> {
    let space = match &r.space_config {
        SpaceConfig::Padic { p, window } => SpaceConfig::Padic {
            p: *p,
            window: [window[0], window[1] + 1],
        },
        SpaceConfig::Tree {
            q,
            window,
            branching: BranchingSpec::Uniform(b),
            weights,
            root_mass,
        } if weights.is_empty() => SpaceConfig::Tree {
            q: *q,
            window: [window[0], window[1] + 1],
            branching: BranchingSpec::Uniform(*b),
            weights: weights.clone(),
            root_mass: *root_mass,
        },
        _ => return None,
    };
    let geometric = |l: &LambdaSpec| matches!(l, LambdaSpec::Geometric { .. });
    let ok = match &r.kernel_config {
        KernelConfig::Kigami { lambda } => geometric(lambda),
        KernelConfig::Mixed { components, .. } => components.iter().all(geometric),
        _ => false,
    };
    ok.then(|| (space, r.kernel_config.clone()))
}

pub fn tightness(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let big = s.k_max();
    let mut rng = ctx.rng(S_TIGHTNESS);
    let mut checks = Vec::new();

    let indicator = match level_indicator(s) {
        Some((k, u)) => {
            let g = extend(s, &u, big)?;
            let rep = ctx.h.tightness_bound(&g, k)?;
            if ctx.is_desk_instance() {
                let dev = rep.per_level.iter().map(|p| (p.1 - 1.0).abs()).fold(0.0, f64::max);
                checks.push(
                    Check::at_most("indicator maxima equal 1 at k = 1, 2", Some(7), dev, DESK_TOL)
                        .with_detail(format!("{:?}", rep.per_level)),
                );
            }
            json!({"level": k, "per_level": rep.per_level, "c": rep.c})
        }
        None => Value::Null,
    };

    let k0 = ctx.r.params.k0.unwrap_or((s.k_min() + 1).min(big));
    let up = match raised(ctx.r) {
        Some((sc, kc)) => match TreeSpace::build(&sc) {
            Ok(s2) => {
                let j2 = kc.build(&s2).context("raised kernel")?;
                Some((s2, j2))
            }
            Err(_) => None,
        },
        None => None,
    };
    let h2 = match &up {
        Some((s2, j2)) => Some(Hierarchy::new(s2, j2)?),
        None => None,
    };
    let mut csv = String::from("trial,c,c_raised,rel_change\n");
    let mut worst_drift = 0.0f64;
    let mut all_finite = true;
    let mut trials = Vec::new();
    for trial in 0..ctx.r.params.tightness_trials {
        let w = random_fn(s, k0, &mut rng);
        let g = extend(s, &w, big)?;
        let rep = ctx.h.tightness_bound(&g, k0)?;
        all_finite &= rep.c.is_finite();
        let mut c2 = Value::Null;
        let mut drift = Value::Null;
        if let (Some(h2), Some((s2, _))) = (&h2, &up) {
            let w2 = LevelFunction::new(s2, k0, w.coeffs.clone())?;
            let g2 = extend(s2, &w2, s2.k_max())?;
            let rep2 = h2.tightness_bound(&g2, k0)?;
            let d = rel(rep2.c, rep.c);
            worst_drift = worst_drift.max(d);
            c2 = json!(rep2.c);
            drift = json!(d);
            csv.push_str(&format!("{trial},{},{},{d}\n", rep.c, rep2.c));
        } else {
            csv.push_str(&format!("{trial},{},,\n", rep.c));
        }
        trials.push(json!({"trial": trial, "per_level": rep.per_level, "c": rep.c, "c_raised": c2, "rel_change": drift}));
    }
    checks.push(Check::flag("window maximum finite", Some(7), all_finite, ""));
    if up.is_some() {
        checks.push(Check::at_most(
            "window maximum stable when K is raised by one",
            Some(7),
            worst_drift,
            TIGHTNESS_DRIFT,
        ));
    }
    let results = json!({
        "k0": k0,
        "indicator": indicator,
        "raised_window": up.as_ref().map(|(s2, _)| json!([s2.k_min(), s2.k_max()])),
        "max_rel_change": if up.is_some() { json!(worst_drift) } else { Value::Null },
        "trials": trials,
    });
    Ok(Section::new("tightness", &[7], checks, results).with_files(vec![("tightness.csv".into(), csv)]))
}

/// Conservativeness: row sums and jump counts of simulated paths.
pub fn simulate(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let p = &ctx.r.params;
    let psi = ctx.psi()?;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (idx, k) in s.window().enumerate() {
        let q = ctx.h.generator(k)?;
        let rs = max_abs(&q.row_sums());
        let scale = s.masses(k).iter().fold(0.0f64, |a, m| a.max(*m)) * q.max_exit_rate();
        let db = q.detailed_balance_defect(s);
        checks.push(Check::at_most(format!("row sums at level {k}"), Some(6), rs, ROW_SUM_TOL));
        checks.push(Check::at_most(
            format!("detailed balance at level {k}"),
            None,
            db,
            1e-12 * scale.max(f64::MIN_POSITIVE),
        ));
        let seed = p.seed.wrapping_add(1 + idx as u64);
        let jc = jump_counts(s, q, &psi, p.horizon, p.sim_paths, seed)?;
        checks.push(Check::flag(
            format!("paths reach the horizon at level {k}"),
            Some(6),
            jc.truncated_paths == 0,
            format!("{} truncated of {}", jc.truncated_paths, jc.n_paths),
        ));
        checks.push(Check::flag(
            format!("mean jump count within rate bounds at level {k}"),
            Some(6),
            jc.within_bounds(4.0) && jc.mean_jumps.is_finite(),
            format!(
                "mean {} in [{}, {}] ± 4·{}",
                jc.mean_jumps,
                p.horizon * jc.lower_rate,
                p.horizon * jc.upper_rate,
                jc.std_error
            ),
        ));
        rows.push(json!({"level": k, "max_row_sum": rs, "detailed_balance": db, "jumps": jc}));
        files.push((format!("generator_level{k}.mtx"), q.to_matrix_market()));
        files.push((format!("generator_level{k}.csv"), q.to_csv_triplets(s)));
    }
    let paths = leaf_ensemble(&ctx.h, &psi, p.horizon, p.export_paths, p.seed)?;
    files.push(("paths.csv".into(), paths_to_csv(s, &paths)));
    Ok(Section::new("simulate", &[6], checks, json!({ "levels": rows, "horizon": p.horizon })).with_files(files))
}

/// Lumped generator equality and the Monte Carlo law comparison.
pub fn fdd(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let p = &ctx.r.params;
    let psi = ctx.psi()?;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for k in s.k_min()..s.k_max() {
        if s.ball_count(k) < 2 {
            continue;
        }
        let bc = ctx.bc(k)?;
        let lump = lumpability_test(s, ctx.h.leaf_generator(), k)?;
        let defect = lump.lumped.as_ref().map(|l| lumped_defect(l, ctx.h.generator(k).expect("level")));
        if bc {
            checks.push(Check::at_most(
                format!("lumped generator equals Q^{k}"),
                Some(4),
                defect.unwrap_or(f64::INFINITY),
                LUMPED_TOL,
            ));
        }
        let rep = fdd_compare(&ctx.h, &psi, k, &p.fdd_times, p.n_paths, p.seed)?;
        if bc {
            let min_p = rep.per_time.iter().map(|c| c.chi_square.p_value).fold(1.0, f64::min);
            checks.push(
                Check::flag(format!("chi-square at level {k}"), Some(4), rep.chi_square_pass, "")
                    .with_detail(format!("min p = {min_p}, adjusted α = {}", rep.adjusted_alpha)),
            );
            let zmax = rep
                .per_time
                .iter()
                .map(|c| c.max_abs_z_level.max(c.max_abs_z_leaf))
                .fold(0.0, f64::max);
            checks.push(Check::at_most(
                format!("empirical marginals vs exact at level {k}"),
                Some(4),
                zmax,
                rep.z_bound,
            ));
        }
        let mut csv = String::from("time,state,level_count,leaf_count,exact\n");
        for c in &rep.per_time {
            for i in 0..c.exact.len() {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.time,
                    s.address(k, i).digit_string(),
                    c.level_counts[i],
                    c.leaf_counts[i],
                    c.exact[i]
                ));
            }
        }
        files.push((format!("occupancy_level{k}.csv"), csv));
        rows.push(json!({"level": k, "bc_holds": bc, "lumped_defect": defect, "asserted": bc, "report": rep}));
    }
    Ok(Section::new("fdd", &[4], checks, json!({ "levels": rows })).with_files(files))
}

/// `sup_t ρ(I^k π^k X_t, X_t) <= q^{-k}` over simulated leaf paths.
pub fn envelope(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let p = &ctx.r.params;
    let psi = ctx.psi()?;
    let paths = leaf_ensemble(&ctx.h, &psi, p.horizon, p.envelope_paths, p.seed)?;
    let mut rng = ctx.rng(S_ENVELOPE);
    let mut csv = String::from("level,section,max_distance,bound,violations\n");
    let mut rows = Vec::new();
    let mut total_violations = 0usize;
    for k in s.window() {
        let bound = s.q().powi(-k);
        for (label, section) in [("canonical", s.canonical_section(k)), ("random", s.random_section(k, &mut rng))] {
            let mut worst = 0.0f64;
            let mut violations = 0usize;
            for path in &paths {
                let d = path_sup_distance(s, path, k, &section)?;
                worst = worst.max(d);
                if d > bound {
                    violations += 1;
                }
            }
            total_violations += violations;
            csv.push_str(&format!("{k},{label},{worst},{bound},{violations}\n"));
            rows.push(json!({"level": k, "section": label, "max_distance": worst, "bound": bound, "violations": violations}));
        }
    }
    let checks = vec![Check::at_most(
        "paths violating sup_t ρ <= q^{-k}",
        Some(5),
        total_violations as f64,
        0.0,
    )
    .with_detail(format!("{} paths, horizon {}", paths.len(), p.horizon))];
    Ok(Section::new("envelope", &[5], checks, json!({ "paths": paths.len(), "levels": rows }))
        .with_files(vec![("envelope.csv".into(), csv)]))
}

/// Worked-instance values on `Q_2[0,2]` with `λ = 2^m`.
pub fn desk(ctx: &Ctx<'_>) -> Result<Section> {
    let s = ctx.space();
    let j = ctx.kernel();
    let addr = |k: i32, d: &str| s.parse_address(k, d);
    let mut values: Vec<(&str, f64, f64)> = Vec::new();
    values.push(("J(00,10)", j.eval(s, &addr(2, "00")?, &addr(2, "10")?)?, 2.0));
    values.push(("J(00,01)", j.eval(s, &addr(2, "00")?, &addr(2, "01")?)?, 10.0));
    let j1 = average(s, j, 1)?;
    values.push(("J^1(0,1)", j1.rate(0, 1), 2.0));
    let q1 = ctx.h.generator(1)?;
    values.push(("Q^1(0,0)", q1.get(0, 0), -1.0));
    values.push(("Q^1(0,1)", q1.get(0, 1), 1.0));
    values.push(("Q^1(1,0)", q1.get(1, 0), 1.0));
    values.push(("Q^1(1,1)", q1.get(1, 1), -1.0));
    let q2 = ctx.h.leaf_generator();
    for (i, want) in [-3.5, 2.5, 0.5, 0.5].into_iter().enumerate() {
        let name: &'static str = ["Q^2(00,00)", "Q^2(00,01)", "Q^2(00,10)", "Q^2(00,11)"][i];
        values.push((name, q2.get(0, i), want));
    }
    let ind = LevelFunction::indicator(s, 1, 0)?;
    let ind_leaf = extend(s, &ind, 2)?;
    values.push(("E(1_B0)", energy(s, j, &ind_leaf, &ind_leaf)?, 0.5));
    values.push(("E^1(1_B0)", energy(s, &j1, &ind, &ind)?, 0.5));
    let leaf = LevelFunction::indicator(s, 2, 0)?;
    values.push(("E(1_00)", energy(s, j, &leaf, &leaf)?, 0.875));
    let pt = semigroup_apply(q1, 0.5, &ind)?;
    values.push(("P_0.5 1_B0 (0)", pt.coeffs[0], (1.0 + (-1.0f64).exp()) / 2.0));
    let g = resolvent_apply(s, q1, 1.0, &ind)?;
    values.push(("G_1 1_B0 (0)", g.coeffs[0], 2.0 / 3.0));
    values.push(("G_1 1_B0 (1)", g.coeffs[1], 1.0 / 3.0));
    values.push(("a3 (k1 = 1)", validate_conditions(s, j, 1)?.a3, 1.0));
    let tb = ctx.h.tightness_bound(&ind_leaf, 1)?;
    values.push(("tightness k=1", tb.per_level[0].1, 1.0));
    values.push(("tightness k=2", tb.per_level[1].1, 1.0));

    let mut checks: Vec<Check> = values
        .iter()
        .map(|(name, got, want)| Check::at_most(*name, Some(10), (got - want).abs(), DESK_TOL))
        .collect();
    // the rounded figure quoted for the two-state marginal
    checks.push(Check::at_most("P_0.5 marginal ≈ 0.683940", Some(10), (pt.coeffs[0] - 0.683940).abs(), 5e-7));
    let results = Value::Object(values.iter().map(|(n, got, _)| (n.to_string(), json!(got))).collect());
    Ok(Section::new("desk", &[10], checks, results))
}
