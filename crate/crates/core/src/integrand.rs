//! Lagrangian densities `j(s, t)` and sampled checks of their structural conditions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants attached to an integrand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Coercivity constant in `α₀ tᵖ ≤ j(s, t)`.
    pub alpha0: f64,
    /// Sign radius `R` beyond which `j_s(s, t) s ≥ 0`.
    pub sign_radius: f64,
    /// Radius `R′` beyond which the growth inequality with `δ` is required.
    pub r_prime: f64,
    pub delta: f64,
}

/// `j(s, t)` with `s` the state value and `t ≥ 0` the gradient magnitude.
pub trait Integrand: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn p(&self) -> f64;
    fn j(&self, s: f64, t: f64) -> f64;
    fn j_s(&self, s: f64, t: f64) -> f64;
    fn j_t(&self, s: f64, t: f64) -> f64;
    fn constants(&self) -> Constants;
    /// Closed-form upper envelope `α(|s|)` with `j(s, t) ≤ α(|s|) tᵖ`, if known.
    fn alpha(&self, _s_abs: f64) -> Option<f64> {
        None
    }
    fn bounded_alpha(&self) -> bool;
}

/// `j(s, t) = tᵖ / p`.
#[derive(Clone, Debug)]
pub struct PLaplace {
    p: f64,
    delta: f64,
}

impl PLaplace {
    pub fn new(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(PLaplace { p, delta: 0.25 })
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }
}

impl Integrand for PLaplace {
    fn name(&self) -> &str {
        "plaplace"
    }
    fn p(&self) -> f64 {
        self.p
    }
    fn j(&self, _s: f64, t: f64) -> f64 {
        t.powf(self.p) / self.p
    }
    fn j_s(&self, _s: f64, _t: f64) -> f64 {
        0.0
    }
    fn j_t(&self, _s: f64, t: f64) -> f64 {
        t.powf(self.p - 1.0)
    }
    fn constants(&self) -> Constants {
        Constants {
            alpha0: 1.0 / self.p,
            sign_radius: 0.0,
            r_prime: 0.0,
            delta: self.delta,
        }
    }
    fn alpha(&self, _s_abs: f64) -> Option<f64> {
        Some(1.0 / self.p)
    }
    fn bounded_alpha(&self) -> bool {
        true
    }
}

/// `j(s, t) = a(s) tᵖ / p` with `a(s) = 1 + s²/(1 + s²)`.
#[derive(Clone, Debug)]
pub struct Modulated {
    p: f64,
    delta: f64,
}

impl Modulated {
    pub fn new(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Modulated { p, delta: 0.25 })
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn a(s: f64) -> f64 {
        let s2 = s * s;
        1.0 + s2 / (1.0 + s2)
    }

    pub fn a_prime(s: f64) -> f64 {
        let d = 1.0 + s * s;
        2.0 * s / (d * d)
    }
}

impl Integrand for Modulated {
    fn name(&self) -> &str {
        "modulated"
    }
    fn p(&self) -> f64 {
        self.p
    }
    fn j(&self, s: f64, t: f64) -> f64 {
        Self::a(s) * t.powf(self.p) / self.p
    }
    fn j_s(&self, s: f64, t: f64) -> f64 {
        Self::a_prime(s) * t.powf(self.p) / self.p
    }
    fn j_t(&self, s: f64, t: f64) -> f64 {
        Self::a(s) * t.powf(self.p - 1.0)
    }
    fn constants(&self) -> Constants {
        Constants {
            alpha0: 1.0 / self.p,
            sign_radius: 0.0,
            r_prime: 0.0,
            delta: self.delta,
        }
    }
    fn alpha(&self, s_abs: f64) -> Option<f64> {
        Some(Self::a(s_abs) / self.p)
    }
    fn bounded_alpha(&self) -> bool {
        true
    }
}

fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("integrand exponent needs p > 1, got {p}")))
    }
}

pub fn builtin(name: &str, p: f64) -> Result<Arc<dyn Integrand>> {
    match name {
        "plaplace" => Ok(Arc::new(PLaplace::new(p)?)),
        "modulated" => Ok(Arc::new(Modulated::new(p)?)),
        other => Err(Error::Parameter(format!("unknown integrand `{other}`"))),
    }
}

type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Integrand assembled from closures, for experiments and fault injection.
#[derive(Clone)]
pub struct FnIntegrand {
    pub name: String,
    pub p: f64,
    pub j: ScalarFn,
    pub j_s: ScalarFn,
    pub j_t: ScalarFn,
    pub constants: Constants,
    pub bounded_alpha: bool,
}

impl fmt::Debug for FnIntegrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnIntegrand").field("name", &self.name).field("p", &self.p).finish()
    }
}

impl FnIntegrand {
    /// Wraps an existing integrand so individual evaluators can be replaced.
    pub fn from_integrand(base: Arc<dyn Integrand>) -> Self {
        let (b1, b2, b3) = (base.clone(), base.clone(), base.clone());
        FnIntegrand {
            name: base.name().to_string(),
            p: base.p(),
            j: Arc::new(move |s, t| b1.j(s, t)),
            j_s: Arc::new(move |s, t| b2.j_s(s, t)),
            j_t: Arc::new(move |s, t| b3.j_t(s, t)),
            constants: base.constants(),
            bounded_alpha: base.bounded_alpha(),
        }
    }
}

impl Integrand for FnIntegrand {
    fn name(&self) -> &str {
        &self.name
    }
    fn p(&self) -> f64 {
        self.p
    }
    fn j(&self, s: f64, t: f64) -> f64 {
        (self.j)(s, t)
    }
    fn j_s(&self, s: f64, t: f64) -> f64 {
        (self.j_s)(s, t)
    }
    fn j_t(&self, s: f64, t: f64) -> f64 {
        (self.j_t)(s, t)
    }
    fn constants(&self) -> Constants {
        self.constants
    }
    fn bounded_alpha(&self) -> bool {
        self.bounded_alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub verdict: Verdict,
    /// Most adverse sampled value of the condition's test statistic.
    pub worst: f64,
    /// `(s, t)` at which `worst` was attained; always present on failure.
    pub witness: Option<(f64, f64)>,
    pub samples: usize,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub s_max: f64,
    pub t_max: f64,
    pub s_points: usize,
    pub t_points: usize,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            s_max: 100.0,
            t_max: 100.0,
            s_points: 201,
            t_points: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub integrand: String,
    pub p: f64,
    pub q: f64,
    pub constants: Constants,
    pub sample_box: SampleBox,
    pub conditions: Vec<ConditionResult>,
    pub flags: Vec<String>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict == Verdict::Pass)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.condition == name)
    }
}

fn s_grid(b: &SampleBox) -> Vec<f64> {
    let n = b.s_points.max(3);
    (0..n).map(|i| -b.s_max + 2.0 * b.s_max * i as f64 / (n - 1) as f64).collect()
}

/// `0` followed by a geometric grid on `[1e-3, t_max]`.
fn t_grid(b: &SampleBox) -> Vec<f64> {
    let n = b.t_points.max(3);
    let (lo, hi) = (1e-3f64.ln(), b.t_max.ln());
    std::iter::once(0.0)
        .chain((0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let lp: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = lp.len() as f64;
    let mx = lp.iter().map(|p| p.0).sum::<f64>() / n;
    let my = lp.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = lp.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = lp.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

struct Worst {
    value: f64,
    at: Option<(f64, f64)>,
}

impl Worst {
    fn new() -> Self {
        Worst { value: f64::INFINITY, at: None }
    }
    fn update(&mut self, v: f64, s: f64, t: f64) {
        if v < self.value || self.at.is_none() {
            self.value = v;
            self.at = Some((s, t));
        }
    }
}

const SLOPE_TOL: f64 = 0.1;

/// Samples the structural conditions on `[-s_max, s_max] × [0, t_max]`.
///
/// A pass means no violation was found on the box. Growth conditions are
/// judged by log-log slopes of the normalized ratios in `t`, the tail
/// condition by the slope of `α(|s|)/|s|^{q-p}` over the top decade of `|s|`.
pub fn check_conditions(j: &dyn Integrand, q: f64, sample_box: &SampleBox) -> Result<ConditionReport> {
    let p = j.p();
    if !(q > p) {
        return Err(Error::Parameter(format!("need q > p, got p = {p}, q = {q}")));
    }
    let c = j.constants();
    let ss = s_grid(sample_box);
    let ts = t_grid(sample_box);
    let tpos = &ts[1..];
    let mut conditions = Vec::new();
    let mut flags = Vec::new();

    // (j1): strict midpoint convexity and strict increase in t
    {
        let mut worst = Worst::new();
        let mut n = 0;
        for &s in &ss {
            for w in ts.windows(3) {
                let (t1, t2) = (w[0], w[2]);
                let mid = j.j(s, 0.5 * (t1 + t2));
                let avg = 0.5 * (j.j(s, t1) + j.j(s, t2));
                let margin = (avg - mid) / (avg.abs() + f64::MIN_POSITIVE);
                worst.update(margin, s, 0.5 * (t1 + t2));
                let inc = (j.j(s, w[1]) - j.j(s, w[0])) / (j.j(s, w[1]).abs() + f64::MIN_POSITIVE);
                worst.update(inc, s, w[1]);
                n += 2;
            }
        }
        let ok = worst.value > 1e-14;
        conditions.push(ConditionResult {
            condition: "j1".into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            worst: worst.value,
            witness: worst.at,
            samples: n,
            note: "relative midpoint-convexity and increment margins".into(),
        });
    }

    // (j2): α₀ tᵖ ≤ j ≤ α(|s|) tᵖ; the upper envelope is declared or fitted
    let mut alpha_fit: Vec<(f64, f64)> = Vec::new();
    {
        let mut worst = Worst::new();
        let mut n = 0;
        let mut s_abs: Vec<f64> = ss.iter().map(|s| s.abs()).collect();
        s_abs.sort_by(f64::total_cmp);
        s_abs.dedup();
        let mut envelope: f64 = 0.0;
        for &sa in &s_abs {
            let mut ratio_max: f64 = 0.0;
            for &s in &[sa, -sa] {
                for &t in &ts {
                    let v = j.j(s, t);
                    let lower = c.alpha0 * t.powf(p);
                    let scale = 1.0 + lower.abs();
                    worst.update((v - lower) / scale, s, t);
                    if t > 0.0 {
                        let ratio = v / t.powf(p);
                        ratio_max = ratio_max.max(ratio);
                        if let Some(a) = j.alpha(sa) {
                            worst.update((a * t.powf(p) - v) / (1.0 + v.abs()), s, t);
                        }
                    } else {
                        // j(s, 0) must vanish
                        worst.update(-v.abs(), s, t);
                    }
                    n += 1;
                }
            }
            envelope = envelope.max(ratio_max);
            alpha_fit.push((sa, j.alpha(sa).unwrap_or(envelope)));
        }
        let ok = worst.value >= -1e-12;
        conditions.push(ConditionResult {
            condition: "j2".into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            worst: worst.value,
            witness: worst.at,
            samples: n,
            note: if j.alpha(1.0).is_some() {
                "declared envelope α".into()
            } else {
                "fitted increasing envelope α".into()
            },
        });
    }

    // (j3) and (j32): |j_s|/tᵖ and |j_t|/t^{p-1} stay bounded as t varies
    for (name, exponent, deriv) in [
        ("j3", p, &(|s, t| j.j_s(s, t)) as &dyn Fn(f64, f64) -> f64),
        ("j32", p - 1.0, &(|s, t| j.j_t(s, t)) as &dyn Fn(f64, f64) -> f64),
    ] {
        let mut worst_slope: f64 = 0.0;
        let mut witness = None;
        let mut n = 0;
        for &s in &ss {
            let pts: Vec<(f64, f64)> = tpos
                .iter()
                .map(|&t| (t, deriv(s, t).abs() / t.powf(exponent)))
                .collect();
            n += pts.len();
            if pts.iter().all(|p| p.1 == 0.0) {
                continue;
            }
            if pts.iter().any(|p| p.1 == 0.0 || !p.1.is_finite()) {
                worst_slope = f64::INFINITY;
                witness = pts.iter().find(|p| !p.1.is_finite()).map(|p| (s, p.0)).or(Some((s, pts[0].0)));
                continue;
            }
            let slope = loglog_slope(&pts);
            if slope.abs() > worst_slope.abs() {
                worst_slope = slope;
                // the ratio is largest at the end it grows toward
                witness = Some((s, if slope > 0.0 { pts[pts.len() - 1].0 } else { pts[0].0 }));
            }
        }
        let ok = worst_slope.abs() <= SLOPE_TOL;
        conditions.push(ConditionResult {
            condition: name.into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            worst: worst_slope,
            witness: if ok { witness } else { witness.or(Some((ss[0], tpos[0]))) },
            samples: n,
            note: format!("log-log slope of the normalized ratio in t, tolerance {SLOPE_TOL}"),
        });
    }

    // (j4): j_s(s, t) s ≥ 0 for |s| ≥ R
    {
        let mut worst = Worst::new();
        let mut n = 0;
        for &s in ss.iter().filter(|s| s.abs() >= c.sign_radius) {
            for &t in &ts {
                worst.update(j.j_s(s, t) * s, s, t);
                n += 1;
            }
        }
        let ok = worst.value >= 0.0;
        conditions.push(ConditionResult {
            condition: "j4".into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            worst: worst.value,
            witness: worst.at,
            samples: n,
            note: format!("sign radius R = {}", c.sign_radius),
        });
    }

    // (j5): q j − j_s s − (1+δ) j_t t ≥ 0 for |s| ≥ R′, normalized by tᵖ
    {
        let mut worst = Worst::new();
        let mut n = 0;
        for &s in ss.iter().filter(|s| s.abs() >= c.r_prime) {
            for &t in tpos {
                let v = q * j.j(s, t) - j.j_s(s, t) * s - (1.0 + c.delta) * j.j_t(s, t) * t;
                worst.update(v / t.powf(p), s, t);
                n += 1;
            }
        }
        let ok = worst.value >= -1e-12;
        conditions.push(ConditionResult {
            condition: "j5".into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            worst: worst.value,
            witness: worst.at,
            samples: n,
            note: format!("δ = {}, R′ = {}, margin divided by tᵖ", c.delta, c.r_prime),
        });
    }

    // (j6): α(|s|)/|s|^{q-p} → 0 along the sampled tail
    {
        let need = 10.0 * c.sign_radius.max(c.r_prime).max(1.0);
        let tail: Vec<(f64, f64)> = alpha_fit
            .iter()
            .filter(|&&(sa, _)| sa >= sample_box.s_max / 10.0 && sa > 0.0)
            .map(|&(sa, a)| (sa, a / sa.powf(q - p)))
            .collect();
        let (verdict, slope, note) = if sample_box.s_max < need || tail.len() < 3 {
            (Verdict::Inconclusive, f64::NAN, format!("tail too short: need |s| up to {need}"))
        } else if tail.iter().any(|t| !(t.1 > 0.0) || !t.1.is_finite()) {
            (Verdict::Inconclusive, f64::NAN, "envelope not positive on the tail".to_string())
        } else {
            let slope = loglog_slope(&tail);
            let v = if slope <= -0.05 {
                Verdict::Pass
            } else if slope > 0.05 {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            };
            (v, slope, "log-log slope of α(|s|)/|s|^(q-p) over the top decade".to_string())
        };
        let witness = tail.last().map(|&(sa, _)| (sa, 1.0));
        conditions.push(ConditionResult {
            condition: "j6".into(),
            verdict,
            worst: slope,
            witness,
            samples: tail.len(),
            note,
        });
    }

    if !j.bounded_alpha() {
        flags.push("lower-semicontinuous regime: gradient may blow up".into());
    }

    Ok(ConditionReport {
        integrand: j.name().to_string(),
        p,
        q,
        constants: c,
        sample_box: sample_box.clone(),
        conditions,
        flags,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Largest `|j_s − D_s j|` or `|j_t − D_t j|` over the sample box.
    pub max_mismatch: f64,
    /// Largest mismatch relative to `1 + |derivative|`.
    pub max_relative: f64,
    pub worst_at: (f64, f64),
    pub flagged: bool,
}

/// Compares `j_s`, `j_t` with Richardson-extrapolated central differences of `j`
/// (`h = 1e-4`) on `s ∈ [-5, 5]`, `t ∈ [0.1, 5]`.
pub fn consistency_check(j: &dyn Integrand) -> ConsistencyReport {
    let h = 1e-4;
    let rich = |f: &dyn Fn(f64) -> f64, x: f64| {
        let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        (4.0 * d(0.5 * h) - d(h)) / 3.0
    };
    let mut rep = ConsistencyReport {
        max_mismatch: 0.0,
        max_relative: 0.0,
        worst_at: (0.0, 0.0),
        flagged: false,
    };
    for a in 0..21 {
        let s = -5.0 + 0.5 * a as f64;
        for b in 0..25 {
            let t = 0.1 + (5.0 - 0.1) * b as f64 / 24.0;
            let ds = rich(&|x| j.j(x, t), s);
            let dt = rich(&|x| j.j(s, x), t);
            for (exact, approx) in [(j.j_s(s, t), ds), (j.j_t(s, t), dt)] {
                let m = (exact - approx).abs();
                if m > rep.max_mismatch {
                    rep.max_mismatch = m;
                    rep.worst_at = (s, t);
                }
                rep.max_relative = rep.max_relative.max(m / (1.0 + exact.abs()));
            }
        }
    }
    rep.flagged = rep.max_relative > 1e-6;
    rep
}
