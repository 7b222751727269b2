//! Checks at computed points: symmetric criticality, the directional
//! test-space sweep, the one-sided assumption on non-invariant directions,
//! and the weak slope.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::EnergyModel;
use crate::grid::GridFunction;
use crate::integrand::Verdict;
use crate::par::map_indexed;

/// Largest `‖u − Au‖∞` accepted as invariant.
pub const INVARIANCE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub j: usize,
    pub max_directional_derivative: f64,
    /// Number of directions `e_i` with `|u_i| ≤ j`.
    pub directions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub tangential: f64,
    pub transverse: f64,
    pub tau_tan: f64,
    pub tau_trans: f64,
    pub invariance_defect: f64,
    pub sweep: Vec<SweepPoint>,
    pub weak_slope: f64,
    pub weak_slope_flag: Option<String>,
    pub tangential_ok: bool,
    pub transverse_ok: bool,
    /// Both parts below their tolerances.
    pub principle_holds: bool,
    /// `tangential ≤ τ_tan ⇒ transverse ≤ τ_trans`; false only on a counterexample.
    pub implication_holds: bool,
}

/// Splits the residual at an invariant `u` into its `Fix(G)` part and the rest.
pub fn palais_check(model: &EnergyModel, u: &GridFunction, tau_tan: f64, tau_trans: f64) -> Result<CriticalityReport> {
    u.check_domain(model.domain())?;
    if !(tau_tan > 0.0 && tau_trans > 0.0) {
        return Err(Error::Parameter(format!("tolerances must be positive, got {tau_tan}, {tau_trans}")));
    }
    let d = &**model.domain();
    let defect = model.group().map_or(0.0, |g| g.invariance_defect(u.values()));
    if defect > INVARIANCE_TOL {
        return Err(Error::HypothesisViolation(format!(
            "u is not group-invariant: ‖u − Au‖∞ = {defect:e} exceeds {INVARIANCE_TOL:e}"
        )));
    }
    let r = model.residual_values(u.values());
    let ar = match model.group() {
        Some(g) => g.average_values(&r),
        None => r.clone(),
    };
    let perp: Vec<f64> = r.iter().zip(&ar).map(|(a, b)| a - b).collect();
    let tangential = d.dual_norm(&ar);
    let transverse = d.dual_norm(&perp);
    let j_max = (u.max_abs().ceil() as usize).max(1);
    let sweep = sweep_from_residual(model, u.values(), &r, j_max);
    let slope = weak_slope(model, u)?;
    let tangential_ok = tangential <= tau_tan;
    let transverse_ok = transverse <= tau_trans;
    Ok(CriticalityReport {
        tangential,
        transverse,
        tau_tan,
        tau_trans,
        invariance_defect: defect,
        sweep,
        weak_slope: slope.value,
        weak_slope_flag: slope.flag,
        tangential_ok,
        transverse_ok,
        principle_holds: tangential_ok && transverse_ok,
        implication_holds: !tangential_ok || transverse_ok,
    })
}

/// `max |f′(u)v|` over `v = e_i/‖e_i‖_{1,p}` with `|u_i| ≤ j`, for `j = 1..=j_max`.
pub fn dense_test_sweep(model: &EnergyModel, u: &GridFunction, j_max: usize) -> Result<Vec<SweepPoint>> {
    u.check_domain(model.domain())?;
    if j_max == 0 {
        return Err(Error::Usage("j_max must be at least 1".into()));
    }
    let r = model.residual_values(u.values());
    Ok(sweep_from_residual(model, u.values(), &r, j_max))
}

fn sweep_from_residual(model: &EnergyModel, u: &[f64], r: &[f64], j_max: usize) -> Vec<SweepPoint> {
    let d = &**model.domain();
    let p = model.p();
    let free = d.free_nodes();
    // f′(u)e_i = r_i, so each direction costs one unit-vector norm
    let scaled: Vec<f64> = map_indexed(free.len(), |k| {
        let i = free[k];
        let mut e = vec![0.0; d.len()];
        e[i] = 1.0;
        (r[i] / d.w1p_norm(&e, p)).abs()
    });
    (1..=j_max)
        .map(|j| {
            let mut best: f64 = 0.0;
            let mut count = 0;
            for (k, &i) in free.iter().enumerate() {
                if u[i].abs() <= j as f64 {
                    best = best.max(scaled[k]);
                    count += 1;
                }
            }
            SweepPoint {
                j,
                max_directional_derivative: best,
                directions: count,
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut w: W, sweep: &[SweepPoint]) -> Result<()> {
    writeln!(w, "j,max_directional_derivative")?;
    for s in sweep {
        writeln!(w, "{},{:.16e}", s.j, s.max_directional_derivative)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionSampling {
    pub rho: f64,
    pub samples: usize,
    pub seed: u64,
    /// Draw `z` inside `Fix(G)`; every sample is then degenerate.
    pub invariant_z: bool,
}

impl Default for AssumptionSampling {
    fn default() -> Self {
        AssumptionSampling {
            rho: 0.5,
            samples: 4000,
            seed: 0,
            invariant_z: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginWitness {
    pub t: f64,
    pub transverse_norm: f64,
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    /// Upper end of the sampled `t` range.
    pub t_max: f64,
    pub samples: usize,
    pub worst_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub evaluated: usize,
    pub skipped_degenerate: usize,
    pub rejected_side_condition: usize,
    pub worst_margin: f64,
    /// Empirical constant `C = max(0, −worst_margin)`.
    pub constant: f64,
    pub witness: Option<MarginWitness>,
    pub refinement: Vec<RefinementLevel>,
    pub verdict: Verdict,
    pub note: String,
}

/// Samples `[f(ζ + t(z − Az)) − f(ζ)] / (t ‖z − Az‖)` near `(u, v)`.
///
/// A finite lower bound over all samples is a pass. A worst margin that keeps
/// falling by a factor 3 or more at every refinement of the `t` range is
/// reported as divergence, which is a fail. Passing never proves the bound.
pub fn check_assumption_a(
    model: &EnergyModel,
    u: &GridFunction,
    v: &GridFunction,
    cfg: &AssumptionSampling,
) -> Result<AssumptionReport> {
    u.check_domain(model.domain())?;
    v.check_domain(model.domain())?;
    if !(cfg.rho > 0.0 && cfg.rho.is_finite()) {
        return Err(Error::Parameter(format!("rho must be positive, got {}", cfg.rho)));
    }
    let d = &**model.domain();
    let p = model.p();
    let avg = |x: &[f64]| -> Vec<f64> {
        match model.group() {
            Some(g) => g.average_values(x),
            None => x.to_vec(),
        }
    };
    for (name, w) in [("u", u), ("v", v)] {
        let defect = model.group().map_or(0.0, |g| g.invariance_defect(w.values()));
        if defect > INVARIANCE_TOL {
            return Err(Error::HypothesisViolation(format!("{name} is not group-invariant: defect {defect:e}")));
        }
    }
    let f_u = model.energy_values(u.values());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d.len())
            .map(|i| if d.boundary()[i] { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect()
    };
    let into_ball = |center: &[f64], dir: Vec<f64>, radius: f64| -> Vec<f64> {
        let n = d.w1p_norm(&dir, p);
        if n == 0.0 {
            return center.to_vec();
        }
        center.iter().zip(&dir).map(|(c, x)| c + radius * x / n).collect()
    };

    let levels = [1.0, 0.1, 0.01, 0.001];
    let per_level = cfg.samples.div_ceil(levels.len());
    let mut rep = AssumptionReport {
        samples: 0,
        evaluated: 0,
        skipped_degenerate: 0,
        rejected_side_condition: 0,
        worst_margin: f64::INFINITY,
        constant: 0.0,
        witness: None,
        refinement: Vec::new(),
        verdict: Verdict::Inconclusive,
        note: String::new(),
    };
    for &scale in &levels {
        let t_max = cfg.rho * scale;
        let mut worst = f64::INFINITY;
        let mut count = 0;
        for _ in 0..per_level {
            if rep.samples == cfg.samples {
                break;
            }
            rep.samples += 1;
            let a: f64 = rng.gen_range(0.0..1.0);
            let zeta = into_ball(u.values(), avg(&noise(&mut rng)), a * cfg.rho);
            let b: f64 = rng.gen_range(0.0..1.0);
            let mut eta = noise(&mut rng);
            if cfg.invariant_z {
                eta = avg(&eta);
            }
            let z = into_ball(v.values(), eta, b * cfg.rho);
            let t = t_max * (1.0 - rng.gen_range(0.0..1.0f64));
            let az = avg(&z);
            let perp: Vec<f64> = z.iter().zip(&az).map(|(x, y)| x - y).collect();
            let pn = d.w1p_norm(&perp, p);
            let zn = d.w1p_norm(&z, p);
            if pn <= 1e-14 * (1.0 + zn) {
                rep.skipped_degenerate += 1;
                continue;
            }
            let side: Vec<f64> = zeta.iter().zip(&az).map(|(x, y)| x - t * y).collect();
            if model.energy_values(&side) > f_u + cfg.rho {
                rep.rejected_side_condition += 1;
                continue;
            }
            let moved: Vec<f64> = zeta.iter().zip(&perp).map(|(x, y)| x + t * y).collect();
            let margin = (model.energy_values(&moved) - model.energy_values(&zeta)) / (t * pn);
            if !margin.is_finite() {
                return Err(Error::Numerical {
                    message: format!("non-finite margin at t = {t:e}"),
                    last_good: zeta,
                });
            }
            rep.evaluated += 1;
            count += 1;
            worst = worst.min(margin);
            if margin < rep.worst_margin {
                rep.worst_margin = margin;
                rep.witness = Some(MarginWitness {
                    t,
                    transverse_norm: pn,
                    margin,
                });
            }
        }
        rep.refinement.push(RefinementLevel {
            t_max,
            samples: count,
            worst_margin: worst,
        });
    }
    let finite: Vec<f64> = rep.refinement.iter().map(|l| l.worst_margin).filter(|m| m.is_finite()).collect();
    let diverging = finite.len() >= 3 && finite.windows(2).all(|w| w[1] < 0.0 && w[1] <= 3.0 * w[0].min(0.0) && w[1] < w[0]);
    if rep.evaluated == 0 {
        rep.verdict = Verdict::Inconclusive;
        rep.note = "no non-degenerate sample satisfied the side condition".into();
        rep.worst_margin = f64::NAN;
    } else if diverging {
        rep.verdict = Verdict::Fail;
        rep.note = "worst margin decreases without bound as t is refined".into();
        rep.constant = -rep.worst_margin;
    } else {
        rep.verdict = Verdict::Pass;
        rep.constant = (-rep.worst_margin).max(0.0);
        rep.note = "sampled lower bound only; not a proof".into();
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakSlope {
    pub value: f64,
    pub flag: Option<String>,
}

/// Dual norm of the residual: the weak slope of the discrete functional.
pub fn weak_slope(model: &EnergyModel, u: &GridFunction) -> Result<WeakSlope> {
    u.check_domain(model.domain())?;
    let value = model.domain().dual_norm(&model.residual_values(u.values()));
    let flag = (!model.integrand().bounded_alpha())
        .then(|| "lsc regime: equals gradient norm only formally".to_string());
    Ok(WeakSlope { value, flag })
}
