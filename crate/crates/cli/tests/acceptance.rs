//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symcrit::functional::EnergyModel;
use symcrit::integrand::{check_conditions, Constants, FnIntegrand, SampleBox, Verdict};
use symcrit::solver::{self, compare_levels, ps_diagnostics, Mode, SolveConfig};
use symcrit::symmetrize::{edge_energy, plan, reflection_polarizers, schwarz_values, Polarizer};
use symcrit::verify::palais_check;
use symcrit::*;

fn line(n: usize, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) -> bool {
    let ok = pass && elapsed <= limit;
    let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs());
    // written past the test harness capture so the verdict always shows
    let _ = writeln!(
        std::io::stderr(),
        "acceptance {n:>2} {name}: {} [{timing}] {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn random_field(d: &Arc<Domain>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<f64> {
    (0..d.len())
        .map(|i| if d.boundary()[i] { 0.0 } else { rng.gen_range(lo..hi) })
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn integrand(name: &str, p: f64) -> Arc<dyn Integrand> {
    symcrit::integrand::builtin(name, p).unwrap()
}

fn model(spec: DomainSpec, label: GroupLabel, k: usize, j: &str, p: f64, q: f64, positivity: bool) -> EnergyModel {
    let d = build_domain(&spec).unwrap();
    let g = build_group(&d, label, k).unwrap();
    EnergyModel::new(&d, integrand(j, p), q, Some(g), positivity).unwrap()
}

fn square_bench(j: &str) -> EnergyModel {
    model(DomainSpec::square(8.0, 31), GroupLabel::Dihedral, 4, j, 1.8, 3.0, false)
}

fn disk_bench(j: &str) -> EnergyModel {
    model(DomainSpec::disk(5.0, 15, 16), GroupLabel::Rotations, 8, j, 1.8, 3.0, false)
}

fn radial_bench(j: &str, positivity: bool) -> EnergyModel {
    model(DomainSpec::radial_ball(3, 12.0, 240), GroupLabel::Trivial, 1, j, 2.0, 4.0, positivity)
}

#[test]
fn c01_projector_suite() {
    let start = Instant::now();
    let square = || build_domain(&DomainSpec::square(4.0, 9)).unwrap();
    let disk = || build_domain(&DomainSpec::disk(3.0, 6, 16)).unwrap();
    let annulus = || build_domain(&DomainSpec::annulus(1.0, 3.0, 5, 16)).unwrap();
    let radial = || build_domain(&DomainSpec::radial_ball(3, 5.0, 30)).unwrap();
    let mut cases: Vec<(Arc<Domain>, GroupLabel, usize)> = Vec::new();
    for k in [1, 2, 4] {
        cases.push((square(), GroupLabel::Rotations, k));
        cases.push((square(), GroupLabel::Dihedral, k));
    }
    cases.push((square(), GroupLabel::Reflections, 1));
    cases.push((square(), GroupLabel::BlockProduct, 1));
    for mk in [disk, annulus] {
        for k in [1, 2, 4, 8] {
            cases.push((mk(), GroupLabel::Rotations, k));
            cases.push((mk(), GroupLabel::Dihedral, k));
        }
        cases.push((mk(), GroupLabel::Reflections, 1));
        cases.push((mk(), GroupLabel::BlockProduct, 1));
    }
    cases.push((radial(), GroupLabel::Trivial, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut idem, mut equiv, mut norm_excess) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for (d, label, k) in &cases {
        let g = build_group(d, *label, *k).unwrap();
        for _ in 0..100 {
            let u = random_field(d, &mut rng, -2.0, 2.0);
            let au = g.average_values(&u);
            idem = idem.max(max_diff(&g.average_values(&au), &au));
            for e in 0..g.order() {
                equiv = equiv.max(max_diff(&g.average_values(&g.act_values(e, &u)), &au));
            }
            for m in [1.0, 2.0, 3.0] {
                norm_excess = norm_excess.max(d.lm_norm(&au, m) - d.lm_norm(&u, m));
            }
            norm_excess = norm_excess.max(d.w1p_norm(&au, 1.8) - d.w1p_norm(&u, 1.8));
        }
    }
    let pass = idem <= 1e-13 && equiv <= 1e-13 && norm_excess <= 1e-12;
    let detail = format!(
        "{} group/grid pairs; max |A²u-Au| {idem:.1e}, max |A(gu)-Au| {equiv:.1e}, max norm excess {norm_excess:.1e}",
        cases.len()
    );
    assert!(line(1, "projector suite", pass, start.elapsed(), Duration::from_secs(5), &detail));
}

#[test]
fn c02_invariance_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for j in ["plaplace", "modulated"] {
        let models = [
            model(DomainSpec::square(6.0, 15), GroupLabel::Dihedral, 4, j, 1.8, 3.0, false),
            model(DomainSpec::disk(4.0, 8, 16), GroupLabel::Dihedral, 8, j, 1.8, 3.0, false),
            model(DomainSpec::annulus(1.0, 4.0, 6, 16), GroupLabel::BlockProduct, 1, j, 1.8, 3.0, true),
        ];
        for m in &models {
            let g = m.group().unwrap();
            for _ in 0..100 {
                let u = random_field(m.domain(), &mut rng, -2.0, 2.0);
                let f = m.energy_values(&u);
                for e in 0..g.order() {
                    let fg = m.energy_values(&g.act_values(e, &u));
                    worst = worst.max((fg - f).abs() / (1.0 + f.abs()));
                    checks += 1;
                }
            }
        }
    }
    let pass = worst <= 1e-12;
    let detail = format!("{checks} element evaluations; max |f(gu)-f(u)|/(1+|f(u)|) = {worst:.2e}");
    assert!(line(2, "invariance suite", pass, start.elapsed(), Duration::from_secs(10), &detail));
}

#[test]
fn c03_gradient_consistency() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // p < 2 powers are only C^{1,p-1} at zero, so those fields stay positive
    let cases: Vec<(EnergyModel, f64, f64)> = vec![
        (model(DomainSpec::square(4.0, 9), GroupLabel::Trivial, 1, "plaplace", 1.8, 3.0, false), 0.3, 1.5),
        (model(DomainSpec::disk(3.0, 6, 16), GroupLabel::Trivial, 1, "modulated", 1.8, 3.0, false), 0.3, 1.5),
        (model(DomainSpec::radial_ball(3, 6.0, 40), GroupLabel::Trivial, 1, "plaplace", 2.0, 4.0, false), -1.5, 1.5),
        (model(DomainSpec::radial_ball(3, 6.0, 40), GroupLabel::Trivial, 1, "modulated", 2.0, 4.0, true), -1.5, 1.5),
    ];
    let (mut worst_rel, mut min_order) = (0.0f64, f64::INFINITY);
    let mut pairs = 0;
    for k in 0..50 {
        let (m, lo, hi) = &cases[k % cases.len()];
        let d = m.domain();
        let u = random_field(d, &mut rng, *lo, *hi);
        let v = random_field(d, &mut rng, -1.0, 1.0);
        let dd = m.dd_values(&u, &v);
        let cd = |h: f64| {
            let plus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            (m.energy_values(&plus) - m.energy_values(&minus)) / (2.0 * h)
        };
        worst_rel = worst_rel.max((dd - cd(1e-5)).abs() / (1.0 + dd.abs()));
        // the order is read off steps large enough that truncation dominates rounding
        let (e1, e2) = ((dd - cd(1e-2)).abs(), (dd - cd(5e-3)).abs());
        min_order = min_order.min((e1 / e2).log2());
        pairs += 1;
    }
    let pass = worst_rel <= 1e-6 && min_order >= 1.9;
    let detail = format!("{pairs} pairs; max relative mismatch at h=1e-5 {worst_rel:.2e}, min observed order {min_order:.3}");
    assert!(line(3, "gradient consistency", pass, start.elapsed(), Duration::from_secs(10), &detail));
}

#[test]
fn c04_symmetrization_axioms() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let domains = [
        build_domain(&DomainSpec::square(4.0, 9)).unwrap(),
        build_domain(&DomainSpec::disk(3.0, 6, 16)).unwrap(),
        build_domain(&DomainSpec::radial_ball(3, 5.0, 30)).unwrap(),
    ];
    let (mut contraction, mut idem_fail, mut plan_fail, mut energy_viol) = (f64::NEG_INFINITY, 0usize, 0usize, 0usize);
    let mut energy_trials = 0;
    for d in &domains {
        let pl = plan(d).unwrap();
        let mut pols: Vec<Polarizer> = reflection_polarizers(d).unwrap();
        let reflections = pols.len();
        for k in (0..pl.len()).step_by((pl.len() / 40).max(1)) {
            pols.push(pl.polarizer(d, k).unwrap());
        }
        if pols.is_empty() {
            // the radial grid has singleton weight classes and carries no polarizer
            continue;
        }
        for t in 0..1000 / 2 {
            let u = random_field(d, &mut rng, -2.0, 2.0);
            let v = random_field(d, &mut rng, -2.0, 2.0);
            let h = &pols[t % pols.len()];
            let (mut uh, mut vh) = (u.clone(), v.clone());
            h.apply_in_place(&mut uh);
            h.apply_in_place(&mut vh);
            for p in [1.0, 2.0, 4.0] {
                let before: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
                let after: Vec<f64> = uh.iter().zip(&vh).map(|(a, b)| a - b).collect();
                contraction = contraction.max(d.lm_norm(&after, p) - d.lm_norm(&before, p));
            }
            let mut uhh = uh.clone();
            h.apply_in_place(&mut uhh);
            if uhh != uh {
                idem_fail += 1;
            }
        }
        for _ in 0..1000 {
            if reflections == 0 {
                break;
            }
            let u = random_field(d, &mut rng, 0.0, 2.0);
            let h = &pols[rng.gen_range(0..reflections)];
            if !h.reflection_compatible() {
                continue;
            }
            let mut uh = u.clone();
            h.apply_in_place(&mut uh);
            energy_trials += 1;
            if edge_energy(d, &uh, 2.0) > edge_energy(d, &u, 2.0) * (1.0 + 1e-14) {
                energy_viol += 1;
            }
        }
    }
    for d in &domains {
        let pl = plan(d).unwrap();
        for _ in 0..200 {
            let u = random_field(d, &mut rng, -2.0, 2.0);
            let gu = GridFunction::from_values(d, u.clone()).unwrap();
            if pl.apply(&gu).values() != schwarz_values(d, &u).unwrap().as_slice() {
                plan_fail += 1;
            }
        }
    }
    let pass = contraction <= 1e-12 && idem_fail == 0 && plan_fail == 0 && energy_viol == 0 && energy_trials >= 1000;
    let detail = format!(
        "max contraction excess {contraction:.1e}; idempotence failures {idem_fail}; plan/schwarz mismatches {plan_fail} of 600; energy violations {energy_viol} of {energy_trials}"
    );
    assert!(line(4, "symmetrization axioms", pass, start.elapsed(), Duration::from_secs(30), &detail));
}

/// Minimax over lattice paths: add grid points in order of increasing energy
/// until the two endpoints share a component; the last energy added is the level.
fn lattice_pass_level(f: &[f64], n: usize, a: usize, b: usize) -> f64 {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&x, &y| f[x].total_cmp(&f[y]));
    let mut parent: Vec<usize> = (0..n * n).collect();
    let mut active = vec![false; n * n];
    for &c in &order {
        active[c] = true;
        let (i, j) = (c % n, c / n);
        for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                continue;
            }
            let nb = nj as usize * n + ni as usize;
            if active[nb] {
                let (r1, r2) = (find(&mut parent, c), find(&mut parent, nb));
                parent[r1] = r2;
            }
        }
        if active[a] && active[b] && find(&mut parent, a) == find(&mut parent, b) {
            return f[c];
        }
    }
    f64::NAN
}

#[test]
fn c05_brute_force_saddle() {
    let start = Instant::now();
    let m = model(DomainSpec::radial_ball(3, 3.0, 2), GroupLabel::Trivial, 1, "plaplace", 2.0, 4.0, false);
    let d = m.domain();
    assert_eq!(d.free_nodes().len(), 2);
    let rep = solver::run(&m, &SolveConfig::default()).unwrap();
    let (i0, i1) = (d.free_nodes()[0], d.free_nodes()[1]);
    let e = &rep.endpoints.e;
    let n = 400;
    let top = 1.25 * e[i0].abs().max(e[i1].abs());
    let lo = -0.25 * top;
    let step = (top - lo) / (n - 1) as f64;
    let mut values = vec![0.0; d.len()];
    let mut f = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            values[i0] = lo + step * i as f64;
            values[i1] = lo + step * j as f64;
            f[j * n + i] = m.energy_values(&values);
        }
    }
    let cell = |x: f64| ((x - lo) / step).round() as usize;
    let a = cell(0.0) + n * cell(0.0);
    let b = cell(e[i0]) + n * cell(e[i1]);
    let grid_level = lattice_pass_level(&f, n, a, b);
    let diff = (rep.level - grid_level).abs();
    let pass = rep.converged && diff <= 1e-3;
    let detail = format!(
        "solver level {:.8}, 400x400 lattice level {grid_level:.8}, difference {diff:.2e}",
        rep.level
    );
    assert!(line(5, "brute-force saddle oracle", pass, start.elapsed(), Duration::from_secs(30), &detail));
}

#[test]
fn c06_palais_principle() {
    let start = Instant::now();
    let cfg = SolveConfig::default();
    let (tau_tan, tau_trans) = (1e-8, 1e-7);
    let mut rows = Vec::new();
    let mut counterexamples = 0;
    let mut converged = 0;
    for j in ["plaplace", "modulated"] {
        for (name, m) in [
            ("square+dihedral_4", square_bench(j)),
            ("disk+rotations_8", disk_bench(j)),
            ("radial ball", radial_bench(j, false)),
        ] {
            let rep = solver::run(&m, &cfg).unwrap();
            if !rep.converged {
                rows.push(format!("{name}/{j}: not converged"));
                continue;
            }
            converged += 1;
            let u = GridFunction::from_values(m.domain(), rep.u.clone()).unwrap();
            let crit = palais_check(&m, &u, tau_tan, tau_trans).unwrap();
            if !crit.implication_holds || !crit.tangential_ok {
                counterexamples += 1;
                let _ = writeln!(std::io::stderr(), "counterexample {name}/{j}: {crit:?}\nu = {:?}", rep.u);
            }
            rows.push(format!("{name}/{j} tan {:.1e} trans {:.1e}", crit.tangential, crit.transverse));
        }
    }
    let pass = converged >= 5 && counterexamples == 0;
    let detail = format!("{converged} converged solves, {counterexamples} counterexamples; {}", rows.join("; "));
    assert!(line(6, "symmetric criticality", pass, start.elapsed(), Duration::from_secs(300), &detail));
}

#[test]
fn c07_level_ordering() {
    let start = Instant::now();
    let m = square_bench("plaplace");
    let (cmp, _, _) = compare_levels(&m, &SolveConfig::default(), 1e-4).unwrap();
    let detail = format!(
        "c_plain {:.10}, c_restricted {:.10}, declined {}",
        cmp.c_plain, cmp.c_restricted, cmp.declined
    );
    assert!(line(7, "level ordering", cmp.holds, start.elapsed(), Duration::from_secs(120), &detail));
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn c08_radial_positive_solution() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/radial_strauss.cfg");
    let status = Command::new(env!("CARGO_BIN_EXE_symcrit"))
        .args(["solve", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    let report = json_file(&dir.path().join("solve_report.json"));
    let crit = json_file(&dir.path().join("criticality.json"));
    let neg = crit["positivity"]["negative_part_lp"].as_f64().unwrap();
    let ends = &report["endpoints"];
    let (rho0, sigma0, fe) = (
        ends["rho0"].as_f64().unwrap(),
        ends["sigma0"].as_f64().unwrap(),
        ends["energy_e"].as_f64().unwrap(),
    );
    let w1p = crit["ps_diagnostics"]["sup_w1p"].as_f64().unwrap();
    let u: Vec<f64> = report["u"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let d = build_domain(&DomainSpec::radial_ball(3, 12.0, 240)).unwrap();
    let norm = d.w1p_norm(&u, 2.0);
    let pass = status.code() == Some(0)
        && report["converged"].as_bool() == Some(true)
        && neg <= 1e-8
        && norm >= rho0
        && sigma0 > 0.0
        && fe < 0.0;
    let detail = format!(
        "exit {:?}; level {:.8}; |u-|_p {neg:.1e}; |u|_(1,p) {norm:.4} vs rho0 {rho0:.4} (sup {w1p:.4}); sigma0 {sigma0:.4}; f(e) {fe:.4}",
        status.code(),
        report["level"].as_f64().unwrap_or(f64::NAN)
    );
    assert!(line(8, "radial positive solution", pass, start.elapsed(), Duration::from_secs(120), &detail));
}

#[test]
fn c09_direct_mode_symmetrization() {
    let start = Instant::now();
    let m = radial_bench("plaplace", true);
    let cfg = SolveConfig { mode: Mode::Direct, ..SolveConfig::default() };
    let rep = solver::run(&m, &cfg).unwrap();
    let diag = ps_diagnostics(&rep.record, &m, cfg.w1p_ceiling, 1e-6).unwrap();
    let pass = rep.mode == Mode::Direct
        && rep.converged
        && diag.dist_v_monotone
        && diag.final_dist_v <= 1e-9
        && diag.bounded
        && diag.tail_cauchy_w <= 1e-6;
    let detail = format!(
        "mode {:?}, converged {} in {} iterations; max rise of |u-u*|_V {:.1e}; final {:.1e}; sup |u|_(1,p) {:.3} below {:.0e}; tail Cauchy {:.1e}",
        rep.mode,
        rep.converged,
        rep.iterations,
        diag.max_dist_v_increase,
        diag.final_dist_v,
        diag.sup_w1p,
        diag.w1p_ceiling,
        diag.tail_cauchy_w
    );
    assert!(line(9, "direct-mode symmetrization", pass, start.elapsed(), Duration::from_secs(180), &detail));
}

#[test]
fn c10_condition_checker() {
    let start = Instant::now();
    let b = SampleBox::default();
    let mut summary = Vec::new();
    let mut pass = true;
    for name in ["plaplace", "modulated"] {
        let rep = check_conditions(&*integrand(name, 2.0), 4.0, &b).unwrap();
        pass &= rep.all_pass();
        let verdicts: Vec<String> = rep.conditions.iter().map(|c| format!("{}={:?}", c.condition, c.verdict)).collect();
        summary.push(format!("{name}: {}", verdicts.join(",")));
    }
    // j decreasing in t violates monotonicity and the lower growth bound
    let fault = FnIntegrand {
        name: "fault".into(),
        p: 2.0,
        j: Arc::new(|_, t| t * t / 2.0 - t),
        j_s: Arc::new(|_, _| 0.0),
        j_t: Arc::new(|_, t| t - 1.0),
        constants: Constants { alpha0: 0.5, sign_radius: 0.0, r_prime: 0.0, delta: 0.25 },
        bounded_alpha: true,
    };
    let rep = check_conditions(&fault, 4.0, &b).unwrap();
    let failed: Vec<_> = rep.conditions.iter().filter(|c| c.verdict == Verdict::Fail).collect();
    let witnessed = !failed.is_empty() && failed.iter().all(|c| c.witness.is_some());
    pass &= witnessed;
    for c in &failed {
        let (s, t) = c.witness.unwrap();
        summary.push(format!("fault fails {} at (s, t) = ({s}, {t})", c.condition));
    }
    assert!(line(10, "condition checker", pass, start.elapsed(), Duration::from_secs(10), &summary.join("; ")));
}

fn run_solve(cfg: &Path, out: &Path, threads: &str) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_symcrit"))
        .args(["solve", "--quiet", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env("SYMCRIT_THREADS", threads)
        .status()
        .unwrap()
        .code()
        .unwrap_or(-1)
}

#[test]
fn c11_reproducibility() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    // large enough that cell loops take the parallel path
    let cfg = dir.path().join("square.cfg");
    std::fs::write(
        &cfg,
        "domain.kind = square\ndomain.extent = 8\ndomain.resolution = 71\ngroup.label = dihedral\ngroup.order = 4\n\
         integrand.name = modulated\nintegrand.p = 1.8\nintegrand.q = 3\nsolver.mode = restricted\nrun.seed = 3\n",
    )
    .unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    let mut codes = Vec::new();
    for (name, threads) in runs {
        codes.push(run_solve(&cfg, &dir.path().join(name), threads));
    }
    let files = ["solve_report.json", "ps_record.csv", "solution.csv", "criticality.json", "sweep.csv", "config.cfg"];
    let mut mismatches = Vec::new();
    for f in files {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap_or_default();
        for other in ["b", "c"] {
            let b = std::fs::read(dir.path().join(other).join(f)).unwrap_or_default();
            if a.is_empty() || a != b {
                mismatches.push(format!("{other}/{f}"));
            }
        }
    }
    let pass = codes.iter().all(|&c| c == 0) && mismatches.is_empty();
    let detail = format!(
        "exit codes {codes:?}; {} files compared across 1, 1 and 4 threads; mismatches {mismatches:?}",
        files.len()
    );
    assert!(line(11, "reproducibility", pass, start.elapsed(), Duration::from_secs(300), &detail));
}
