//! Lipschitz bounds for the barrier and the sufficient conditions under which
//! the learned function is a valid certificate on the sampled region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::barrier::{compute_b_terms, eval_q, RffBarrier, RobustnessConsts};
use crate::datasets::{DatasetBundle, DemoRecord};
use crate::error::{Error, Result};
use crate::linalg::{dist2, norm2, norm_inf};
use crate::model::{ControlAffine, Measurement, TimePoint};

/// `√(2/ℓ) σ_max(W) ‖θ‖₂`, a global Lipschitz constant of `h`.
pub fn rff_lip_h_bound(bar: &RffBarrier) -> Result<f64> {
    let s = bar.frequencies().spectral_norm()?;
    Ok((2.0 / bar.ell() as f64).sqrt() * s * norm2(bar.theta()))
}

/// `√(2/ℓ) ‖θ‖_∞ σ_max(W)²`, a bound on the spectral norm of the Hessian of `h`.
pub fn rff_lip_grad_h_bound(bar: &RffBarrier) -> Result<f64> {
    let s = bar.frequencies().spectral_norm()?;
    Ok((2.0 / bar.ell() as f64).sqrt() * norm_inf(bar.theta()) * s * s)
}

/// High-probability bound `√(2σ²)(1 + √(n/ℓ) + √((2/ℓ) ln(1/δ))) ‖θ‖₂` that
/// holds over the frequency draw. Display only.
pub fn rff_lip_h_probabilistic(bar: &RffBarrier, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("δ must lie in (0, 1)".into()));
    }
    let ell = bar.ell() as f64;
    let n = bar.n() as f64;
    Ok((2.0 * bar.sigma2()).sqrt()
        * (1.0 + (n / ell).sqrt() + ((2.0 / ell) * (1.0 / delta).ln()).sqrt())
        * norm2(bar.theta()))
}

/// Uniform sample from the Euclidean ball of `radius` around `center`.
pub fn sample_ball(rng: &mut impl Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let dn = norm2(&dir);
    if dn == 0.0 || radius == 0.0 {
        return center.to_vec();
    }
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, v)| c + r * v / dn).collect()
}

/// Largest difference quotient `‖f(a) − f(b)‖ / ‖a − b‖` over sampled pairs.
pub fn max_difference_quotient<F, S>(f: F, mut sample_pair: S, pairs: usize) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
    S: FnMut() -> (Vec<f64>, Vec<f64>),
{
    let mut best = 0.0f64;
    for _ in 0..pairs {
        let (a, b) = sample_pair();
        let d = dist2(&a, &b);
        if d == 0.0 {
            continue;
        }
        let fa = f(&a);
        let fb = f(&b);
        let ratio = dist2(&fa, &fb) / d;
        if ratio.is_finite() {
            best = best.max(ratio);
        }
    }
    best
}

/// Sampled Lipschitz constant of `y ↦ q(u_i, y, t_i)` on a ball around `y_i`,
/// multiplied by `inflation`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_lip_q(
    bar: &RffBarrier,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    consts: &RobustnessConsts,
    demo: &DemoRecord,
    radius: f64,
    samples: usize,
    inflation: f64,
    seed: u64,
) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("ball radius must be positive".into()));
    }
    // surface dimension errors once instead of inside the sampler
    eval_q(&demo.u, &demo.y, demo.time_point(), sys, meas, bar, consts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = demo.time_point();
    let f = |y: &[f64]| {
        vec![eval_q(&demo.u, y, t, sys, meas, bar, consts).unwrap_or(f64::NAN)]
    };
    let raw = max_difference_quotient(
        f,
        || {
            let a = sample_ball(&mut rng, &demo.y, radius);
            let b = sample_ball(&mut rng, &demo.y, radius);
            (a, b)
        },
        samples,
    );
    Ok(inflation * raw)
}

/// Largest spread of `q(u_i, ȳ, ·)` over the given time points, for `ȳ`
/// sampled in the ball (the centre is always included).
#[allow(clippy::too_many_arguments)]
pub fn estimate_bnd_q(
    bar: &RffBarrier,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    consts: &RobustnessConsts,
    demo: &DemoRecord,
    radius: f64,
    times: &[TimePoint],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if sys.time_invariant() || times.len() < 2 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for s in 0..samples.max(1) {
        let y = if s == 0 {
            demo.y.to_vec()
        } else {
            sample_ball(&mut rng, &demo.y, radius)
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in times {
            let q = eval_q(&demo.u, &y, *t, sys, meas, bar, consts)?;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        worst = worst.max(hi - lo);
    }
    Ok(worst)
}

/// One inequality `value < threshold` (strict) or `value ≤ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub strict: bool,
    pub pass: bool,
}

impl ConditionRecord {
    fn new(name: &str, value: f64, threshold: f64, strict: bool) -> Self {
        let pass = if strict {
            value < threshold
        } else {
            value <= threshold
        };
        Self {
            name: name.into(),
            value,
            threshold,
            strict,
            pass,
        }
    }

    pub fn margin(&self) -> f64 {
        self.threshold - self.value
    }
}

/// `γ / L`, infinite when `L = 0`.
fn ratio_threshold(gamma: f64, lip: f64) -> f64 {
    if lip == 0.0 {
        f64::INFINITY
    } else {
        gamma / lip
    }
}

/// `ε_𝒩 < γ_unsafe / Lip_h`: every state of the unsafe layer has `h < 0`.
pub fn check_prop1(bundle: &DatasetBundle, lip_h: f64, gamma_unsafe: f64) -> ConditionRecord {
    ConditionRecord::new("unsafe layer", bundle.eps_n, ratio_threshold(gamma_unsafe, lip_h), true)
}

/// `ε ≤ γ_safe / Lip_h`: every state of the buffered safe region has `h ≥ 0`.
pub fn check_prop2(bundle: &DatasetBundle, lip_h: f64, gamma_safe: f64) -> ConditionRecord {
    ConditionRecord::new("safe region", bundle.eps, ratio_threshold(gamma_safe, lip_h), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoCheck {
    pub index: usize,
    pub lip_q: f64,
    pub bnd_q: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// `ε̄ ≤ (γ_dyn − Bnd_q) / Lip_q` for each checked demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRecord {
    pub eps_bar: f64,
    pub gamma_dyn: f64,
    pub checked: usize,
    pub total: usize,
    pub failed: usize,
    /// Demonstration with the smallest threshold.
    pub binding: Option<DemoCheck>,
    pub max_lip_q: f64,
    pub max_bnd_q: f64,
    pub pass: bool,
    /// Set when `γ_dyn ≤ Bnd_q` somewhere, which fails regardless of `ε̄`.
    pub diagnostic: Option<String>,
    #[serde(skip)]
    pub per_demo: Vec<DemoCheck>,
}

/// Checks a single demonstration given its Lipschitz and time-variation estimates.
pub fn prop3_demo(index: usize, eps_bar: f64, gamma_dyn: f64, lip_q: f64, bnd_q: f64) -> DemoCheck {
    let num = gamma_dyn - bnd_q;
    let threshold = if num <= 0.0 {
        f64::NEG_INFINITY
    } else {
        ratio_threshold(num, lip_q)
    };
    DemoCheck {
        index,
        lip_q,
        bnd_q,
        threshold,
        pass: num > 0.0 && eps_bar <= threshold,
    }
}

/// Sampled Lipschitz constants of `B₁`, `B₂`, `B₃` against `L̄₁`, `L̄₂`, `L̄₃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbarRecord {
    pub estimates: [f64; 3],
    pub lbar: [f64; 3],
    pub pass: [bool; 3],
    pub pairs: usize,
    pub inflation: f64,
    pub all_pass: bool,
}

/// Draws pairs from `D̄`: a data point plus an offset of norm at most `radius`.
pub struct DomainSampler<'a> {
    pub anchors: &'a [crate::model::StateVec],
    /// Exogenous time point attached to each anchor.
    pub times: Vec<TimePoint>,
    pub radius: f64,
}

impl DomainSampler<'_> {
    pub fn pair(&self, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>, TimePoint) {
        let i = rng.random_range(0..self.anchors.len());
        let a = sample_ball(rng, &self.anchors[i], self.radius);
        let b = sample_ball(rng, &a, self.radius);
        (a, b, self.times[i])
    }
}

pub fn check_lbar(
    bar: &RffBarrier,
    sys: &dyn ControlAffine,
    sampler: &DomainSampler<'_>,
    consts: &RobustnessConsts,
    pairs: usize,
    inflation: f64,
    seed: u64,
) -> Result<LbarRecord> {
    if sampler.anchors.is_empty() {
        return Err(Error::InvalidArgument("domain sampler has no anchors".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = [0.0f64; 3];
    for _ in 0..pairs {
        let (a, b, t) = sampler.pair(&mut rng);
        let d = dist2(&a, &b);
        if d == 0.0 {
            continue;
        }
        let ba = compute_b_terms(&a, t, sys, bar)?;
        let bb = compute_b_terms(&b, t, sys, bar)?;
        est[0] = est[0].max((ba.b1 - bb.b1).abs() / d);
        est[1] = est[1].max(dist2(&ba.b2, &bb.b2) / d);
        est[2] = est[2].max((ba.b3 - bb.b3).abs() / d);
    }
    let estimates = est.map(|e| e * inflation);
    let lbar = [consts.lbar1, consts.lbar2, consts.lbar3];
    let pass = [0, 1, 2].map(|j| lbar[j] >= estimates[j]);
    Ok(LbarRecord {
        estimates,
        lbar,
        pass,
        pairs,
        inflation,
        all_pass: pass.iter().all(|p| *p),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBounds {
    pub lip_h: f64,
    pub lip_grad_h: f64,
    pub w_spectral: f64,
    /// High-probability closed form, reported only.
    pub lip_h_probabilistic: f64,
    /// Sampled cross-checks over the data region (no inflation).
    pub sampled_lip_h: f64,
    pub sampled_lip_grad_h: f64,
    /// Largest inflated `Lip_q` over the checked demonstrations.
    pub empirical_lip_q: f64,
    /// Largest time-variation bound over the checked demonstrations.
    pub bnd_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Sampled pairs per ball for `Lip_q`.
    pub pairs_per_ball: usize,
    pub inflation: f64,
    /// Demonstrations checked for the dynamics condition (evenly strided); `None` checks all.
    pub max_demos: Option<usize>,
    pub lbar_pairs: usize,
    /// Points per ball for the time-variation bound.
    pub bnd_samples: usize,
    pub cross_check_pairs: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            pairs_per_ball: 20_000,
            inflation: 1.5,
            max_demos: Some(100),
            lbar_pairs: 20_000,
            bnd_samples: 8,
            cross_check_pairs: 20_000,
            delta: 0.01,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub bounds: LipschitzBounds,
    pub cond_unsafe: ConditionRecord,
    pub cond_safe: ConditionRecord,
    pub cond_dyn: DynamicsRecord,
    pub lbar_checks: LbarRecord,
    pub overall: bool,
}

impl VerificationReport {
    /// Plain-text table with threshold, value and margin per condition.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>14} {:>14} {:>14}  {}\n",
            "condition", "value", "threshold", "margin", "result"
        ));
        let verdict = |p: bool| if p { "pass" } else { "FAIL" };
        for c in [&self.cond_unsafe, &self.cond_safe] {
            out.push_str(&format!(
                "{:<14} {:>14.6e} {:>14.6e} {:>14.6e}  {}\n",
                c.name,
                c.value,
                c.threshold,
                c.margin(),
                verdict(c.pass)
            ));
        }
        let d = &self.cond_dyn;
        let thr = d.binding.as_ref().map_or(f64::INFINITY, |b| b.threshold);
        out.push_str(&format!(
            "{:<14} {:>14.6e} {:>14.6e} {:>14.6e}  {} ({} of {} checked failed)\n",
            "dynamics",
            d.eps_bar,
            thr,
            thr - d.eps_bar,
            verdict(d.pass),
            d.failed,
            d.checked
        ));
        for j in 0..3 {
            let l = &self.lbar_checks;
            out.push_str(&format!(
                "{:<14} {:>14.6e} {:>14.6e} {:>14.6e}  {}\n",
                format!("lbar{}", j + 1),
                l.estimates[j],
                l.lbar[j],
                l.lbar[j] - l.estimates[j],
                verdict(l.pass[j])
            ));
        }
        out.push_str(&format!("overall: {}\n", verdict(self.overall)));
        out
    }
}

/// Distinct exogenous time points seen in the demonstrations, in first-seen order.
pub fn observed_time_points(demos: &[DemoRecord]) -> Vec<TimePoint> {
    let mut seen: Vec<u64> = Vec::new();
    let mut out = Vec::new();
    for d in demos {
        let key = d.exo.to_bits();
        if !seen.contains(&key) {
            seen.push(key);
            out.push(d.time_point());
        }
    }
    out
}

fn strided_indices(total: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(m) if m < total => (0..m).map(|k| k * total / m).collect(),
        _ => (0..total).collect(),
    }
}

/// Runs every check against a trained barrier.
#[allow(clippy::too_many_arguments)]
pub fn verify(
    bar: &RffBarrier,
    bundle: &DatasetBundle,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    consts: &RobustnessConsts,
    gammas: (f64, f64, f64),
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    let (gamma_safe, gamma_unsafe, gamma_dyn) = gammas;
    let w_spectral = bar.frequencies().spectral_norm()?;
    let lip_h = rff_lip_h_bound(bar)?;
    let lip_grad_h = rff_lip_grad_h_bound(bar)?;

    let cond_unsafe = check_prop1(bundle, lip_h, gamma_unsafe);
    let cond_safe = check_prop2(bundle, lip_h, gamma_safe);

    // dynamics condition
    let times = observed_time_points(&bundle.z_dyn);
    let radius = bundle.eps_bar;
    let mut per_demo = Vec::new();
    let mut diagnostic = None;
    for (k, i) in strided_indices(bundle.z_dyn.len(), cfg.max_demos).into_iter().enumerate() {
        let d = &bundle.z_dyn[i];
        let seed = cfg.seed.wrapping_add(1 + k as u64);
        let lip_q = if radius > 0.0 {
            empirical_lip_q(bar, sys, meas, consts, d, radius, cfg.pairs_per_ball, cfg.inflation, seed)?
        } else {
            0.0
        };
        let bnd_q = estimate_bnd_q(bar, sys, meas, consts, d, radius, &times, cfg.bnd_samples, seed)?;
        if bnd_q >= gamma_dyn && diagnostic.is_none() {
            diagnostic = Some(format!(
                "time variation bound {bnd_q:.4e} at demonstration {i} is not below gamma_dyn {gamma_dyn}"
            ));
        }
        per_demo.push(prop3_demo(i, radius, gamma_dyn, lip_q, bnd_q));
    }
    let binding = per_demo
        .iter()
        .min_by(|a, b| a.threshold.total_cmp(&b.threshold))
        .cloned();
    let failed = per_demo.iter().filter(|c| !c.pass).count();
    let cond_dyn = DynamicsRecord {
        eps_bar: radius,
        gamma_dyn,
        checked: per_demo.len(),
        total: bundle.z_dyn.len(),
        failed,
        binding,
        max_lip_q: per_demo.iter().map(|c| c.lip_q).fold(0.0, f64::max),
        max_bnd_q: per_demo.iter().map(|c| c.bnd_q).fold(0.0, f64::max),
        pass: failed == 0,
        diagnostic,
        per_demo,
    };

    // D̄ = data region inflated by 2Δ̄_X
    let anchors = crate::datasets::project_safe(&bundle.z_dyn, meas);
    let sampler = DomainSampler {
        anchors: &anchors,
        times: bundle.z_dyn.iter().map(|d| d.time_point()).collect(),
        radius: bundle.eps + 2.0 * bundle.delta_x_bar(),
    };
    let lbar_checks = if anchors.is_empty() {
        LbarRecord {
            estimates: [0.0; 3],
            lbar: [consts.lbar1, consts.lbar2, consts.lbar3],
            pass: [true; 3],
            pairs: 0,
            inflation: cfg.inflation,
            all_pass: true,
        }
    } else {
        check_lbar(bar, sys, &sampler, consts, cfg.lbar_pairs, cfg.inflation, cfg.seed)?
    };

    let (sampled_lip_h, sampled_lip_grad_h) = if anchors.is_empty() {
        (0.0, 0.0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a5a);
        let mut pairs = Vec::with_capacity(cfg.cross_check_pairs);
        for _ in 0..cfg.cross_check_pairs {
            let (a, b, _) = sampler.pair(&mut rng);
            pairs.push((a, b));
        }
        let mut it = pairs.iter().cloned();
        let lh = max_difference_quotient(|x| vec![bar.eval_h(x)], || it.next().unwrap(), pairs.len());
        let mut it = pairs.iter().cloned();
        let lg = max_difference_quotient(|x| bar.grad_h(x), || it.next().unwrap(), pairs.len());
        (lh, lg)
    };

    let overall = cond_unsafe.pass && cond_safe.pass && cond_dyn.pass && lbar_checks.all_pass;
    Ok(VerificationReport {
        bounds: LipschitzBounds {
            lip_h,
            lip_grad_h,
            w_spectral,
            lip_h_probabilistic: rff_lip_h_probabilistic(bar, cfg.delta)?,
            sampled_lip_h,
            sampled_lip_grad_h,
            empirical_lip_q: cond_dyn.max_lip_q,
            bnd_q: cond_dyn.max_bnd_q,
        },
        cond_unsafe,
        cond_safe,
        cond_dyn,
        lbar_checks,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{IdentityMeasurement, LinearModel, StateVec};

    fn bundle_with(eps: f64, eps_n: f64) -> DatasetBundle {
        let meas = IdentityMeasurement { n: 1, delta_x: 0.0 };
        let mut b = DatasetBundle::from_sets(vec![], vec![], vec![], vec![], &meas);
        b.eps = eps;
        b.eps_n = eps_n;
        b
    }

    #[test]
    fn zero_weights_bounds() {
        let bar = RffBarrier::sample(3, 10, 1.0, 1.0, None, 0).unwrap();
        assert_eq!(rff_lip_h_bound(&bar).unwrap(), 0.0);
        assert_eq!(rff_lip_grad_h_bound(&bar).unwrap(), 0.0);
    }

    #[test]
    fn unit_row_bounds() {
        let w = Matrix::from_row_major(1, 3, vec![0.6, 0.0, 0.8]).unwrap();
        let bar = RffBarrier::from_parts(w, vec![0.2], vec![-1.5], 1.0, 1.0).unwrap();
        let expect = 2f64.sqrt() * 1.5;
        assert!((rff_lip_h_bound(&bar).unwrap() - expect).abs() < 1e-12);
        assert!((rff_lip_grad_h_bound(&bar).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn prop1_strict() {
        assert!(check_prop1(&bundle_with(0.0, 0.04), 1.0, 0.05).pass);
        assert!(!check_prop1(&bundle_with(0.0, 0.05), 1.0, 0.05).pass);
        assert_eq!(check_prop1(&bundle_with(0.0, 0.05), 2.0, 0.05).threshold, 0.025);
        assert!(check_prop1(&bundle_with(0.0, 5.0), 0.0, 0.05).pass);
    }

    #[test]
    fn prop2_non_strict() {
        assert!(check_prop2(&bundle_with(0.1, 0.0), 0.5, 0.05).pass);
        assert!(!check_prop2(&bundle_with(0.11, 0.0), 0.5, 0.05).pass);
    }

    #[test]
    fn prop3_arithmetic() {
        // 0.01 / 0.05 = 0.2 ≥ 0.15
        let c = prop3_demo(0, 0.15, 0.01, 0.05, 0.0);
        assert!((c.threshold - 0.2).abs() < 1e-15);
        assert!(c.pass);
        assert!(prop3_demo(0, 1e6, 0.01, 0.0, 0.0).pass);
        assert!(!prop3_demo(0, 0.0, 0.01, 0.05, 0.01).pass);
    }

    #[test]
    fn lip_q_zero_for_constant_q() {
        let bar = RffBarrier::sample(2, 8, 1.0, 1.0, None, 0).unwrap();
        let sys = LinearModel::integrator(2);
        let meas = IdentityMeasurement { n: 2, delta_x: 0.1 };
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let d = DemoRecord::new(0.0, 0.0, vec![0.3, 0.1], vec![1.0, 2.0]);
        let l = empirical_lip_q(&bar, &sys, &meas, &c, &d, 0.5, 500, 1.5, 3).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn linear_difference_quotient_in_range() {
        let slope = [3.0, -4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = max_difference_quotient(
            |x| vec![slope[0] * x[0] + slope[1] * x[1]],
            || (sample_ball(&mut rng, &[0.0, 0.0], 1.0), sample_ball(&mut rng, &[0.0, 0.0], 1.0)),
            20_000,
        );
        assert!(est <= 5.0 + 1e-12 && 1.5 * est >= 5.0);
    }

    #[test]
    fn monotone_in_sample_count() {
        let mut bar = RffBarrier::sample(2, 8, 1.0, 1.0, None, 0).unwrap();
        bar.set_theta(vec![0.3; 8]).unwrap();
        let sys = LinearModel::integrator(2);
        let meas = IdentityMeasurement { n: 2, delta_x: 0.1 };
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let d = DemoRecord::new(0.0, 0.0, vec![0.3, 0.1], vec![1.0, 2.0]);
        let mut last = 0.0;
        for n in [10, 100, 1000] {
            let l = empirical_lip_q(&bar, &sys, &meas, &c, &d, 0.5, n, 1.5, 3).unwrap();
            assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn lbar_zero_weights_pass() {
        let bar = RffBarrier::sample(2, 8, 1.0, 1.0, None, 0).unwrap();
        let sys = LinearModel::integrator(2);
        let anchors = vec![StateVec(vec![0.0, 0.0]), StateVec(vec![1.0, 1.0])];
        let s = DomainSampler {
            anchors: &anchors,
            times: vec![TimePoint::at(0.0); 2],
            radius: 0.3,
        };
        let c = RobustnessConsts::new(1e-9, 1e-9, 1e-9).unwrap();
        let r = check_lbar(&bar, &sys, &s, &c, 500, 1.5, 0).unwrap();
        assert_eq!(r.estimates, [0.0; 3]);
        assert!(r.all_pass);
    }

    #[test]
    fn time_invariant_bnd_is_zero() {
        let bar = RffBarrier::sample(2, 8, 1.0, 1.0, None, 0).unwrap();
        let sys = LinearModel::integrator(2);
        let meas = IdentityMeasurement { n: 2, delta_x: 0.1 };
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let d = DemoRecord::new(0.0, 0.0, vec![0.3, 0.1], vec![1.0, 2.0]);
        let times = [TimePoint::at(0.0), TimePoint::with_exo(1.0, 0.5)];
        assert_eq!(estimate_bnd_q(&bar, &sys, &meas, &c, &d, 0.1, &times, 4, 0).unwrap(), 0.0);
    }
}
