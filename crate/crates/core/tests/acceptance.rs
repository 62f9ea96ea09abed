//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;

use qfund::derivation::{
    ci_residual, hoelder_gap, series_solve_uniqueness_ode, uniqueness_ode_residual_g,
    uniqueness_ode_residual_h, uniqueness_scan,
};
use qfund::equilibrium::{solve_from_ones, SolverOptions};
use qfund::report::body_without_timing;
use qfund::scenario::{emit_scenario, load_scenario, parse_scenario};
use qfund::{
    ContributionProfile, LeverFunction, MechanismSpec, Society, ValueFunction, WeightFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_profile(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ContributionProfile {
    let n = rng.random_range(1..=8);
    ContributionProfile::new((0..n).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
}

fn random_society(rng: &mut ChaCha8Rng) -> Society {
    let n = rng.random_range(1..=8);
    let values = (0..n)
        .map(|_| {
            let x = rng.random_range(0.1..=10.0);
            if rng.random_bool(0.5) {
                ValueFunction::SqrtScaled { a: x }
            } else {
                ValueFunction::Log1p { b: x }
            }
        })
        .collect();
    Society::new(values).unwrap()
}

fn optimal_funding_oracle(values: &[ValueFunction]) -> f64 {
    // Σ V_i'(F) is strictly decreasing; plain bisection on a wide bracket.
    let marginal = |f: f64| -> f64 {
        values
            .iter()
            .map(|v| match *v {
                ValueFunction::SqrtScaled { a } => a / (2.0 * f.sqrt()),
                ValueFunction::Log1p { b } => b / (1.0 + f),
                _ => unreachable!(),
            })
            .sum()
    };
    if values.iter().all(|v| matches!(v, ValueFunction::Log1p { .. }))
        && values
            .iter()
            .map(|v| match v {
                ValueFunction::Log1p { b } => *b,
                _ => 0.0,
            })
            .sum::<f64>()
            <= 1.0
    {
        return 0.0;
    }
    let (mut lo, mut hi) = (1e-300, 1e12);
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if marginal(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c1_qf_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = SolverOptions::default();
    let qf = MechanismSpec::qf();
    let (mut worst_gap, mut worst_marginal, mut positive) = (0.0f64, 0.0f64, 0);
    for trial in 0..200 {
        let s = random_society(&mut rng);
        let eq = solve_from_ones(&qf, &s, &opts).map_err(|e| format!("society {trial}: {e}"))?;
        ensure(eq.converged, || format!("society {trial} did not converge"))?;
        let f_star = optimal_funding_oracle(s.values());
        let gap = (eq.funding - f_star).abs() / f_star.max(1e-9);
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 1e-6, || {
            format!("society {trial}: F_eq {} vs F* {f_star}, gap {gap:e}", eq.funding)
        })?;
        if f_star > 0.0 {
            positive += 1;
            let m = (s.marginal_sum(eq.funding).unwrap() - 1.0).abs();
            worst_marginal = worst_marginal.max(m);
            ensure(m <= 1e-8, || format!("society {trial}: |ΣV'-1| = {m:e}"))?;
        }
    }
    Ok(format!(
        "200 societies ({positive} with F*>0), max gap {worst_gap:.2e}, max |ΣV'-1| {worst_marginal:.2e}"
    ))
}

fn c2_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let opts = SolverOptions::default();
    let qf = MechanismSpec::qf();
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let n = rng.random_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..=10.0)).collect();
        let eq = solve_from_ones(&qf, &Society::sqrt(&a).unwrap(), &opts).map_err(|e| e.to_string())?;
        for (i, (&c, &ai)) in eq.contributions.as_slice().iter().zip(&a).enumerate() {
            let err = (c - ai * ai / 4.0).abs();
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("sqrt trial {trial} citizen {i}: c = {c}, a²/4 = {}", ai * ai / 4.0))?;
        }
        let sum: f64 = a.iter().sum();
        let expected = sum * sum / 4.0;
        ensure((eq.funding - expected).abs() <= 1e-10 * expected.max(1.0), || {
            format!("sqrt trial {trial}: F = {} vs {expected}", eq.funding)
        })?;
    }
    let mut subcritical = 0;
    for trial in 0..50 {
        let n = rng.random_range(1..=8);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.5)).collect();
        let eq = solve_from_ones(&qf, &Society::log1p(&b).unwrap(), &opts).map_err(|e| e.to_string())?;
        let sum: f64 = b.iter().sum();
        if sum > 1.0 {
            let expected = sum - 1.0;
            let rel = (eq.funding - expected).abs() / expected;
            ensure(rel <= 1e-8, || format!("log trial {trial}: F = {} vs {expected}", eq.funding))?;
        } else {
            subcritical += 1;
            ensure(eq.funding == 0.0, || format!("log trial {trial}: Σb = {sum} but F = {}", eq.funding))?;
        }
    }
    Ok(format!(
        "50 sqrt societies (max |c - a²/4| {worst:.2e}), 50 log1p societies ({subcritical} with Σb ≤ 1)"
    ))
}

fn c3_ci_equation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let profiles: Vec<_> = (0..1000).map(|_| random_profile(&mut rng, 0.1, 10.0)).collect();
    let max_residual = |mech: &MechanismSpec| -> Result<f64, String> {
        let mut m = 0.0f64;
        for c in &profiles {
            for j in 0..c.len() {
                m = m.max(ci_residual(mech, c, j).map_err(|e| e.to_string())?.abs());
            }
        }
        Ok(m)
    };
    let qf = max_residual(&MechanismSpec::qf())?;
    ensure(qf <= 1e-12, || format!("QF residual {qf:e}"))?;
    let mut weakest = f64::INFINITY;
    for i in 0..20 {
        let mut delta = || {
            let d = rng.random_range(0.05..=0.5);
            if rng.random_bool(0.5) {
                d
            } else {
                -d
            }
        };
        let (p, q) = match i % 3 {
            0 => (0.5 + 0.5 * delta(), 2.0),
            1 => (0.5, 2.0 + delta()),
            _ => (0.5 + 0.5 * delta(), 2.0 + delta()),
        };
        let mech = MechanismSpec::power(p, q, 1.0).map_err(|e| e.to_string())?;
        let r = max_residual(&mech)?;
        weakest = weakest.min(r);
        ensure(r >= 1e-3, || format!("perturbed p = {p}, q = {q}: residual only {r:e}"))?;
    }
    Ok(format!(
        "QF max residual {qf:.2e} on 1000 profiles; weakest of 20 perturbed mechanisms {weakest:.2e}"
    ))
}

fn c4_uniqueness_odes() -> Outcome {
    let grid = [0.5, 1.0, 2.0, 4.0];
    let mut constant_p = Vec::new();
    for p in [0.2, 0.35, 0.5, 0.65, 0.8] {
        let h = WeightFunction::power(p).map_err(|e| e.to_string())?;
        if uniqueness_ode_residual_h(&h, &grid).map_err(|e| e.to_string())?.is_constant() {
            constant_p.push(p);
        }
    }
    ensure(constant_p == [0.5], || format!("weight constancy at p = {constant_p:?}"))?;
    let mut unit_q = Vec::new();
    for q in [1.5, 2.0, 2.5, 3.0] {
        let g = LeverFunction::power(q, 1.0).map_err(|e| e.to_string())?;
        let r = uniqueness_ode_residual_g(&g, &grid).map_err(|e| e.to_string())?;
        let ratio = r.constant("ratio").unwrap();
        if r.is_constant() && (ratio - 1.0).abs() <= 1e-12 {
            unit_q.push(q);
        }
    }
    ensure(unit_q == [2.0], || format!("unit lever ratio at q = {unit_q:?}"))?;
    Ok("bracket constant only at p = 0.5; lever ratio ≡ 1 only at q = 2".into())
}

fn c5_series() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let k: f64 = rng.random_range(0.2..=5.0);
        let y0 = rng.random_range(0.5..=3.0);
        let h0 = rng.random_range(-2.0..=2.0);
        let d0: f64 = rng.random_range(0.2..=2.0);
        // h = a·sqrt(y + σ) + b solves the ODE with a = sqrt(2k).
        let a = (2.0 * k).sqrt();
        let shift = k / (2.0 * d0 * d0);
        let sigma = shift - y0;
        let b = h0 - a * shift.sqrt();
        let sol = series_solve_uniqueness_ode(k, y0, h0, d0, 12).map_err(|e| e.to_string())?;
        let (lo, hi) = sol.trust_interval;
        let (ilo, ihi) = (y0 - (y0 - lo) / 2.0, y0 + (hi - y0) / 2.0);
        for i in 0..=100 {
            let y = ilo + (ihi - ilo) * i as f64 / 100.0;
            let err = (sol.evaluate(y).map_err(|e| e.to_string())? - (a * (y + sigma).sqrt() + b)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-8, || format!("trial {trial} at y = {y}: error {err:e}"))?;
        }
    }
    let sqrt = series_solve_uniqueness_ode(0.5, 1.0, 1.0, 0.5, 12).map_err(|e| e.to_string())?;
    let mut worst_sqrt = 0.0f64;
    for i in 0..=1000 {
        let y = 0.6 + i as f64 / 1000.0;
        let err = (sqrt.evaluate(y).map_err(|e| e.to_string())? - y.sqrt()).abs();
        worst_sqrt = worst_sqrt.max(err);
        ensure(err <= 1e-8, || format!("sqrt recovery at y = {y}: error {err:e}"))?;
    }
    Ok(format!(
        "50 initial conditions, max error {worst:.2e}; sqrt(y) on [0.6, 1.6] max error {worst_sqrt:.2e}"
    ))
}

fn c6_hoelder() -> Outcome {
    let c = ContributionProfile::new(vec![1.0, 4.0]).unwrap();
    let grid: Vec<f64> = (0..=350).map(|i| 0.5 + i as f64 * 0.01).collect();
    let tol = 1e-9;
    let scan = uniqueness_scan(&c, &grid, tol).map_err(|e| e.to_string())?;
    ensure(!scan.accepted.is_empty(), || "no accepted q".into())?;
    ensure(scan.accepted.iter().all(|q| (q - 2.0).abs() <= 1e-9), || {
        format!("accepted {:?}", scan.accepted)
    })?;
    let g1 = hoelder_gap(1.0, &c).unwrap();
    let g3 = hoelder_gap(3.0, &ContributionProfile::new(vec![1.0, 8.0]).unwrap()).unwrap();
    ensure((g1 - 1.0).abs() <= 1e-12, || format!("gap(1, [1,4]) = {g1}"))?;
    ensure((g3 + 4.0 / 9.0).abs() <= 1e-12, || format!("gap(3, [1,8]) = {g3}"))?;
    Ok(format!("accepted q = {:?}; gap(1) = {g1}, gap(3) = {g3:.15}", scan.accepted))
}

fn c7_invariants() -> Outcome {
    let mut mechanisms = vec![MechanismSpec::qf(), MechanismSpec::linear()];
    for (p, q, s) in [(0.3, 1.5, 2.0), (0.8, 3.0, 0.5), (1.0, 1.0, 1.0), (0.25, 4.0, 1.0)] {
        mechanisms.push(MechanismSpec::power(p, q, s).unwrap());
    }
    for (i, m) in mechanisms.iter().enumerate() {
        for n in 1..=5 {
            let f = m.funding(&ContributionProfile::uniform(n, 0.0).unwrap());
            ensure(f == 0.0, || format!("mechanism {i}: Φ(0) = {f} for n = {n}"))?;
        }
    }
    let qf = MechanismSpec::qf();
    for c in [1.0, 7.0, 100.0] {
        let f = qf.funding(&ContributionProfile::new(vec![c]).unwrap());
        ensure((f - c).abs() <= 1e-12, || format!("F({c}) = {f}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for _ in 0..100 {
        let c = random_profile(&mut rng, 0.0, 10.0);
        let base = qf.funding(&c);
        for lambda in [0.1, 3.0, 1000.0] {
            let scaled = qf.funding(&c.scaled(lambda).unwrap());
            let rel = (scaled - lambda * base).abs() / (lambda * base).max(f64::MIN_POSITIVE);
            ensure(rel <= 1e-10, || format!("homogeneity λ = {lambda}: rel error {rel:e}"))?;
        }
    }
    Ok("Φ(0) = 0 for 6 mechanisms; single-citizen F(c) = c; homogeneity on 100 profiles".into())
}

fn c8_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for point in 0..500 {
        let mech = MechanismSpec::power(
            rng.random_range(0.2..=1.0),
            rng.random_range(1.0..=3.0),
            rng.random_range(0.5..=2.0),
        )
        .unwrap();
        let c = random_profile(&mut rng, 0.1, 10.0);
        let j = rng.random_range(0..c.len());
        let g = mech.funding_gradient(&c, j).map_err(|e| e.to_string())?;
        let cj = c.as_slice()[j];
        let eta = 1e-6 * cj.max(1.0);
        let fd = (mech.funding(&c.with(j, cj + eta).unwrap()) - mech.funding(&c.with(j, cj - eta).unwrap()))
            / (2.0 * eta);
        let rel = (fd - g).abs() / g.abs();
        worst = worst.max(rel);
        ensure(rel <= 1e-6, || format!("point {point}: analytic {g}, fd {fd}, rel {rel:e}"))?;
    }
    Ok(format!("500 interior points, max relative error {worst:.2e}"))
}

fn c9_underprovision() -> Outcome {
    let opts = SolverOptions::default();
    let mut gaps = Vec::new();
    for n in [2usize, 3, 5] {
        let s = Society::sqrt(&vec![2.0; n]).unwrap();
        let eq = solve_from_ones(&MechanismSpec::linear(), &s, &opts).map_err(|e| e.to_string())?;
        let expected = 1.0 - 1.0 / (n * n) as f64;
        ensure((eq.efficiency_gap - expected).abs() <= 1e-8, || {
            format!("n = {n}: gap {} vs {expected}", eq.efficiency_gap)
        })?;
        gaps.push(eq.efficiency_gap);
    }
    Ok(format!("efficiency gaps {gaps:.10?} for n = 2, 3, 5"))
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn c10_cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_qfund");
    let commands = [
        "fund",
        "equilibrium",
        "optimal",
        "welfare",
        "scan-q",
        "verify-ci",
        "verify-ode",
        "series-demo",
    ];
    let mut runs = 0;
    let mut scenarios: Vec<_> = std::fs::read_dir(scenario_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    scenarios.sort();
    ensure(scenarios.len() >= 3, || "expected at least three golden scenarios".into())?;
    for path in &scenarios {
        let scenario = load_scenario(path).map_err(|e| e.to_string())?;
        let emitted = emit_scenario(&scenario);
        ensure(parse_scenario(&emitted).ok().as_ref() == Some(&scenario), || {
            format!("round-trip mismatch for {}", path.display())
        })?;
        ensure(emit_scenario(&parse_scenario(&emitted).unwrap()) == emitted, || {
            format!("emit not stable for {}", path.display())
        })?;
        for cmd in commands {
            let mut outputs = Vec::new();
            for _ in 0..2 {
                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                let status = Command::new(bin)
                    .args([cmd, "--scenario"])
                    .arg(path)
                    .arg("--out")
                    .arg(dir.path())
                    .output()
                    .map_err(|e| e.to_string())?
                    .status;
                let mut files: Vec<_> = std::fs::read_dir(dir.path())
                    .map_err(|e| e.to_string())?
                    .map(|e| e.unwrap().path())
                    .collect();
                files.sort();
                let contents: Vec<(String, String)> = files
                    .iter()
                    .map(|f| {
                        let text = std::fs::read_to_string(f).unwrap();
                        let name = f.file_name().unwrap().to_string_lossy().into_owned();
                        let body = if name == "report.json" {
                            body_without_timing(&text).unwrap()
                        } else {
                            text
                        };
                        (name, body)
                    })
                    .collect();
                outputs.push((status.code(), contents));
            }
            ensure(outputs[0] == outputs[1], || {
                format!("{cmd} on {} differs between runs", path.display())
            })?;
            runs += 1;
        }
    }
    Ok(format!(
        "{} golden scenarios round-trip; {runs} command/scenario pairs byte-identical across two runs",
        scenarios.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("QF equilibrium reaches the welfare optimum", c1_qf_optimality),
        ("closed-form equilibria", c2_closed_forms),
        ("matching functional equation", c3_ci_equation),
        ("uniqueness ODEs", c4_uniqueness_odes),
        ("Taylor series solver", c5_series),
        ("Hoelder uniqueness scan", c6_hoelder),
        ("mechanism invariants", c7_invariants),
        ("gradient checks", c8_gradients),
        ("linear underprovision", c9_underprovision),
        ("CLI determinism and round-trip", c10_cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
