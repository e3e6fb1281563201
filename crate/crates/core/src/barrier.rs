//! Random-Fourier-feature barrier `h(x) = ⟨φ(x), θ⟩` and the robust barrier
//! derivative bound `B(x,t,u) = B₁ + ⟨B₂,u⟩ + B₃‖u‖`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::model::{ControlAffine, Measurement, TimePoint};

/// Barrier parametrised by frozen random features `(W, b)` and weights `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffBarrier {
    w: Matrix,
    b: Vec<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    alpha_slope: f64,
}

/// cos/sin of the feature arguments at one point, pre-scaled.
#[derive(Debug, Clone)]
pub struct FeatureEval {
    /// `φ(x)`, entry `i` is `√(2/ℓ) cos(⟨x,w_i⟩+b_i)`.
    pub phi: Vec<f64>,
    /// Entry `i` is `−√(2/ℓ) sin(⟨x,w_i⟩+b_i)`; row `i` of `Dφ(x)` is this times `w_iᵀ`.
    pub dphi_scale: Vec<f64>,
}

impl RffBarrier {
    /// Samples `w_i ~ N(0, σ² diag(1/s_j²))` and `b_i ~ U[0, 2π)` with zero weights.
    ///
    /// `length_scales` defaults to all ones (isotropic frequencies).
    pub fn sample(
        n: usize,
        ell: usize,
        sigma2: f64,
        alpha_slope: f64,
        length_scales: Option<&[f64]>,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || ell == 0 {
            return Err(Error::InvalidArgument("need n ≥ 1 and ℓ ≥ 1".into()));
        }
        if !(sigma2 > 0.0) || !(alpha_slope > 0.0) {
            return Err(Error::InvalidArgument(
                "bandwidth and class-K slope must be positive".into(),
            ));
        }
        let scales = match length_scales {
            Some(s) => {
                check_dim("length scales", n, s.len())?;
                if s.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidArgument("length scales must be positive".into()));
                }
                s.to_vec()
            }
            None => vec![1.0; n],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = sigma2.sqrt();
        let mut w = Vec::with_capacity(ell * n);
        for _ in 0..ell {
            for s in &scales {
                let z: f64 = StandardNormal.sample(&mut rng);
                w.push(sigma * z / s);
            }
        }
        let b = (0..ell).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        Ok(Self {
            w: Matrix::from_row_major(ell, n, w)?,
            b,
            theta: vec![0.0; ell],
            sigma2,
            alpha_slope,
        })
    }

    pub fn from_parts(
        w: Matrix,
        b: Vec<f64>,
        theta: Vec<f64>,
        sigma2: f64,
        alpha_slope: f64,
    ) -> Result<Self> {
        let ell = w.rows();
        if ell == 0 || w.cols() == 0 {
            return Err(Error::InvalidArgument("empty frequency matrix".into()));
        }
        check_dim("phases", ell, b.len())?;
        check_dim("weights", ell, theta.len())?;
        if !(sigma2 > 0.0) || !(alpha_slope > 0.0) {
            return Err(Error::InvalidArgument(
                "bandwidth and class-K slope must be positive".into(),
            ));
        }
        if b.iter().any(|v| !(0.0..2.0 * PI).contains(v)) {
            return Err(Error::InvalidArgument("phases must lie in [0, 2π)".into()));
        }
        if !w.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite barrier parameter".into()));
        }
        Ok(Self {
            w,
            b,
            theta,
            sigma2,
            alpha_slope,
        })
    }

    pub fn n(&self) -> usize {
        self.w.cols()
    }

    pub fn ell(&self) -> usize {
        self.w.rows()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn alpha_slope(&self) -> f64 {
        self.alpha_slope
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.w
    }

    pub fn phases(&self) -> &[f64] {
        &self.b
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        check_dim("weights", self.ell(), theta.len())?;
        self.theta = theta;
        Ok(())
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.set_theta(theta)?;
        Ok(out)
    }

    /// Linear extended class-K function `α(r) = a r`.
    #[inline]
    pub fn alpha(&self, r: f64) -> f64 {
        self.alpha_slope * r
    }

    fn scale(&self) -> f64 {
        (2.0 / self.ell() as f64).sqrt()
    }

    /// cos and sin terms at `x` in one pass.
    pub fn feature_eval(&self, x: &[f64]) -> FeatureEval {
        let s = self.scale();
        let mut phi = Vec::with_capacity(self.ell());
        let mut dphi_scale = Vec::with_capacity(self.ell());
        for (i, bi) in self.b.iter().enumerate() {
            let (sn, cs) = (dot(self.w.row(i), x) + bi).sin_cos();
            phi.push(s * cs);
            dphi_scale.push(-s * sn);
        }
        FeatureEval { phi, dphi_scale }
    }

    /// `φ(x)`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("barrier input", self.n(), x.len())?;
        Ok(self.feature_eval(x).phi)
    }

    pub fn eval_h(&self, x: &[f64]) -> f64 {
        let s = self.scale();
        self.b
            .iter()
            .zip(&self.theta)
            .enumerate()
            .map(|(i, (bi, th))| th * s * (dot(self.w.row(i), x) + bi).cos())
            .sum()
    }

    /// `∇h(x) = Dφ(x)ᵀ θ`.
    pub fn grad_h(&self, x: &[f64]) -> Vec<f64> {
        let fe = self.feature_eval(x);
        self.grad_from_eval(&fe, &self.theta)
    }

    /// `Dφᵀ θ` for an arbitrary weight vector.
    pub fn grad_from_eval(&self, fe: &FeatureEval, theta: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = fe.dphi_scale.iter().zip(theta).map(|(d, t)| d * t).collect();
        self.w.tr_mul_vec(&weighted)
    }

    /// `Dφ v` (an `ℓ`-vector) for a state-space direction `v`.
    pub fn jac_mul(&self, fe: &FeatureEval, v: &[f64]) -> Vec<f64> {
        self.w
            .mul_vec(v)
            .into_iter()
            .zip(&fe.dphi_scale)
            .map(|(wv, d)| wv * d)
            .collect()
    }

    /// `(h(x), ∇h(x))` sharing one feature evaluation.
    pub fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let fe = self.feature_eval(x);
        (dot(&fe.phi, &self.theta), self.grad_from_eval(&fe, &self.theta))
    }
}

/// Positive constants standing in for the Lipschitz constants of `B₁`, `B₂`, `B₃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConsts {
    pub lbar1: f64,
    pub lbar2: f64,
    pub lbar3: f64,
}

impl RobustnessConsts {
    pub fn new(lbar1: f64, lbar2: f64, lbar3: f64) -> Result<Self> {
        let c = Self { lbar1, lbar2, lbar3 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lbar1 > 0.0 && self.lbar2 > 0.0 && self.lbar3 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "robustness constants must be positive, got {self:?}"
            )))
        }
    }
}

/// Decomposition `B(x,t,u) = b1 + ⟨b2, u⟩ + b3 ‖u‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct BTerms {
    pub b1: f64,
    pub b2: Vec<f64>,
    pub b3: f64,
}

impl BTerms {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.b1 + dot(&self.b2, u) + self.b3 * norm2(u)
    }
}

fn check_models(sys: &dyn ControlAffine, bar: &RffBarrier, x_len: usize) -> Result<()> {
    check_dim("state", sys.state_dim(), x_len)?;
    check_dim("barrier state dimension", sys.state_dim(), bar.n())
}

pub fn compute_b_terms(
    x: &[f64],
    t: TimePoint,
    sys: &dyn ControlAffine,
    bar: &RffBarrier,
) -> Result<BTerms> {
    check_models(sys, bar, x.len())?;
    let (h, grad) = bar.value_and_grad(x);
    let f = sys.fhat(x, t);
    let g = sys.ghat(x, t);
    let gn = norm2(&grad);
    Ok(BTerms {
        b1: dot(&grad, &f) + bar.alpha(h) - gn * sys.delta_f(x, t),
        b2: g.tr_mul_vec(&grad),
        b3: -gn * sys.delta_g(x, t),
    })
}

/// `q(u,y,t) = B(X̂(y),t,u) − (L̄₁ + L̄₂‖u‖ + L̄₃‖u‖) Δ_X(y)`.
#[allow(clippy::too_many_arguments)]
pub fn eval_q(
    u: &[f64],
    y: &[f64],
    t: TimePoint,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    bar: &RffBarrier,
    consts: &RobustnessConsts,
) -> Result<f64> {
    check_dim("input", sys.input_dim(), u.len())?;
    check_dim("output", meas.output_dim(), y.len())?;
    let x = meas.xhat(y);
    let terms = compute_b_terms(&x, t, sys, bar)?;
    let un = norm2(u);
    Ok(terms.eval(u) - (consts.lbar1 + (consts.lbar2 + consts.lbar3) * un) * meas.delta_x(y))
}

/// `q` written as a function of the weights for a fixed sample:
/// `q(θ) = ⟨linear, θ⟩ − robust · ‖Dφᵀθ‖ − offset`.
///
/// With `sup_input` set (unit-ball input set, all error bounds zero) the
/// `⟨B₂, u⟩` term is replaced by `‖Ĝᵀ Dφᵀ θ‖`.
#[derive(Debug, Clone)]
pub struct QCoefficients {
    pub linear: Vec<f64>,
    pub dphi_scale: Vec<f64>,
    pub robust: f64,
    pub offset: f64,
    pub sup_input: Option<Matrix>,
}

impl QCoefficients {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        u: &[f64],
        y: &[f64],
        t: TimePoint,
        sys: &dyn ControlAffine,
        meas: &dyn Measurement,
        bar: &RffBarrier,
        consts: &RobustnessConsts,
    ) -> Result<Self> {
        check_dim("input", sys.input_dim(), u.len())?;
        check_dim("output", meas.output_dim(), y.len())?;
        let x = meas.xhat(y);
        check_models(sys, bar, x.len())?;
        let fe = bar.feature_eval(&x);
        let f = sys.fhat(&x, t);
        let g = sys.ghat(&x, t);
        let gu = g.mul_vec(u);
        let drift: Vec<f64> = f.iter().zip(&gu).map(|(a, b)| a + b).collect();
        let jd = bar.jac_mul(&fe, &drift);
        let a = bar.alpha_slope();
        let linear = fe.phi.iter().zip(&jd).map(|(p, j)| a * p + j).collect();
        let un = norm2(u);
        Ok(Self {
            linear,
            dphi_scale: fe.dphi_scale,
            robust: sys.delta_f(&x, t) + sys.delta_g(&x, t) * un,
            offset: (consts.lbar1 + (consts.lbar2 + consts.lbar3) * un) * meas.delta_x(y),
            sup_input: None,
        })
    }

    /// Unit-ball supremum variant; only valid when every error bound is zero.
    pub fn build_unit_ball(
        x: &[f64],
        t: TimePoint,
        sys: &dyn ControlAffine,
        bar: &RffBarrier,
    ) -> Result<Self> {
        check_models(sys, bar, x.len())?;
        if sys.delta_f(x, t) != 0.0 || sys.delta_g(x, t) != 0.0 {
            return Err(Error::InvalidArgument(
                "unit-ball supremum mode requires zero model error bounds".into(),
            ));
        }
        let fe = bar.feature_eval(x);
        let f = sys.fhat(x, t);
        let jf = bar.jac_mul(&fe, &f);
        let a = bar.alpha_slope();
        Ok(Self {
            linear: fe.phi.iter().zip(&jf).map(|(p, j)| a * p + j).collect(),
            dphi_scale: fe.dphi_scale,
            robust: 0.0,
            offset: 0.0,
            sup_input: Some(sys.ghat(x, t)),
        })
    }

    fn grad_h(&self, w: &Matrix, theta: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = self.dphi_scale.iter().zip(theta).map(|(d, t)| d * t).collect();
        w.tr_mul_vec(&weighted)
    }

    fn needs_grad_h(&self) -> bool {
        self.robust != 0.0 || self.sup_input.is_some()
    }

    /// `q(θ)` together with `∇h = Dφᵀθ` (empty when the value does not need it).
    pub fn value_parts(&self, w: &Matrix, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut q = dot(&self.linear, theta) - self.offset;
        if !self.needs_grad_h() {
            return (q, Vec::new());
        }
        let gh = self.grad_h(w, theta);
        q -= self.robust * norm2(&gh);
        if let Some(g) = &self.sup_input {
            q += norm2(&g.tr_mul_vec(&gh));
        }
        (q, gh)
    }

    pub fn value(&self, w: &Matrix, theta: &[f64]) -> f64 {
        self.value_parts(w, theta).0
    }

    /// Accumulates `scale · ∂q/∂θ` into `out`, reusing `∇h` from
    /// [`value_parts`](Self::value_parts). The norm terms use the zero
    /// subgradient at the origin.
    pub fn add_subgradient_at(&self, w: &Matrix, grad_h: &[f64], scale: f64, out: &mut [f64]) {
        for (o, l) in out.iter_mut().zip(&self.linear) {
            *o += scale * l;
        }
        if !self.needs_grad_h() {
            return;
        }
        // state-space direction whose image under Dφ is the norm-term gradient
        let mut dir = vec![0.0; grad_h.len()];
        let gn = norm2(grad_h);
        if self.robust != 0.0 && gn > 0.0 {
            for (d, g) in dir.iter_mut().zip(grad_h) {
                *d -= self.robust * g / gn;
            }
        }
        if let Some(g) = &self.sup_input {
            let s = g.tr_mul_vec(grad_h);
            let sn = norm2(&s);
            if sn > 0.0 {
                let unit: Vec<f64> = s.iter().map(|v| v / sn).collect();
                for (d, v) in dir.iter_mut().zip(g.mul_vec(&unit)) {
                    *d += v;
                }
            }
        }
        if dir.iter().all(|v| *v == 0.0) {
            return;
        }
        let wd = w.mul_vec(&dir);
        for ((o, s), v) in out.iter_mut().zip(&self.dphi_scale).zip(wd) {
            *o += scale * s * v;
        }
    }

    pub fn add_subgradient(&self, w: &Matrix, theta: &[f64], scale: f64, out: &mut [f64]) {
        let gh = if self.needs_grad_h() {
            self.grad_h(w, theta)
        } else {
            Vec::new()
        };
        self.add_subgradient_at(w, &gh, scale, out);
    }

    pub fn subgradient(&self, w: &Matrix, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.add_subgradient(w, theta, 1.0, &mut out);
        out
    }
}

/// Subgradient of `q(u,y,t)` with respect to `θ`.
#[allow(clippy::too_many_arguments)]
pub fn grad_q_theta(
    u: &[f64],
    y: &[f64],
    t: TimePoint,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    bar: &RffBarrier,
    consts: &RobustnessConsts,
) -> Result<Vec<f64>> {
    let qc = QCoefficients::build(u, y, t, sys, meas, bar, consts)?;
    Ok(qc.subgradient(bar.frequencies(), bar.theta()))
}

// ─────────────────────────── Serialization ───────────────────────────

const BARRIER_MAGIC: &str = "rocbf-barrier";
const BARRIER_VERSION: u32 = 1;

fn push_row(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

/// Writes the barrier and its robustness constants as a self-describing text file.
///
/// Floats use Rust's shortest round-trip formatting, so reading the text back
/// reproduces every bit.
pub fn barrier_to_text(bar: &RffBarrier, consts: &RobustnessConsts) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{BARRIER_MAGIC} {BARRIER_VERSION}");
    let _ = writeln!(out, "n {}", bar.n());
    let _ = writeln!(out, "ell {}", bar.ell());
    push_row(&mut out, "sigma2", &[bar.sigma2]);
    push_row(&mut out, "alpha_slope", &[bar.alpha_slope]);
    push_row(&mut out, "lbar", &[consts.lbar1, consts.lbar2, consts.lbar3]);
    for i in 0..bar.ell() {
        push_row(&mut out, "w", bar.w.row(i));
    }
    push_row(&mut out, "b", &bar.b);
    push_row(&mut out, "theta", &bar.theta);
    out
}

pub fn barrier_from_text(text: &str) -> Result<(RffBarrier, RobustnessConsts)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty barrier file".into()))?;
    let mut hp = header.split_whitespace();
    if hp.next() != Some(BARRIER_MAGIC) {
        return Err(Error::Parse("not a barrier file".into()));
    }
    let version: u32 = parse_tok(hp.next(), "version")?;
    if version != BARRIER_VERSION {
        return Err(Error::Parse(format!("unsupported barrier file version {version}")));
    }

    let mut n = None;
    let mut ell = None;
    let mut sigma2 = None;
    let mut alpha = None;
    let mut lbar = None;
    let mut w = Vec::new();
    let mut w_rows = 0usize;
    let mut b = None;
    let mut theta = None;
    for line in lines {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let vals = || -> Result<Vec<f64>> {
            line.split_whitespace()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{key}: {e}"))))
                .collect()
        };
        match key {
            "n" => n = Some(parse_tok::<usize>(parts.next(), "n")?),
            "ell" => ell = Some(parse_tok::<usize>(parts.next(), "ell")?),
            "sigma2" => sigma2 = vals()?.first().copied(),
            "alpha_slope" => alpha = vals()?.first().copied(),
            "lbar" => lbar = Some(vals()?),
            "w" => {
                w.extend(vals()?);
                w_rows += 1;
            }
            "b" => b = Some(vals()?),
            "theta" => theta = Some(vals()?),
            other => return Err(Error::Parse(format!("unknown barrier key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("barrier file missing `{k}`"));
    let n = n.ok_or_else(|| missing("n"))?;
    let ell = ell.ok_or_else(|| missing("ell"))?;
    if w_rows != ell {
        return Err(Error::Parse(format!("expected {ell} frequency rows, found {w_rows}")));
    }
    let lbar = lbar.ok_or_else(|| missing("lbar"))?;
    if lbar.len() != 3 {
        return Err(Error::Parse("lbar needs three values".into()));
    }
    let bar = RffBarrier::from_parts(
        Matrix::from_row_major(ell, n, w)?,
        b.ok_or_else(|| missing("b"))?,
        theta.ok_or_else(|| missing("theta"))?,
        sigma2.ok_or_else(|| missing("sigma2"))?,
        alpha.ok_or_else(|| missing("alpha_slope"))?,
    )?;
    Ok((bar, RobustnessConsts::new(lbar[0], lbar[1], lbar[2])?))
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad or missing {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IdentityMeasurement, LinearModel};

    fn toy(seed: u64) -> RffBarrier {
        let mut bar = RffBarrier::sample(3, 16, 1.5, 1.0, None, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let th = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        bar.set_theta(th).unwrap();
        bar
    }

    #[test]
    fn zero_frequencies_give_constant_features() {
        let b = vec![0.3, 1.2, 4.0];
        let bar = RffBarrier::from_parts(Matrix::zeros(3, 2), b.clone(), vec![1.0; 3], 1.0, 1.0)
            .unwrap();
        let phi = bar.features(&[7.0, -2.0]).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        for (p, bi) in phi.iter().zip(&b) {
            assert_eq!(*p, s * bi.cos());
        }
        assert!(bar.grad_h(&[7.0, -2.0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_feature_scalar_oracle() {
        let w = Matrix::from_row_major(1, 2, vec![1.0, 0.0]).unwrap();
        let bar = RffBarrier::from_parts(w, vec![0.0], vec![1.0], 1.0, 1.0).unwrap();
        let phi = bar.features(&[1.0, 0.0]).unwrap();
        assert!((phi[0] - 2f64.sqrt() * 1f64.cos()).abs() < 1e-15);
        assert!((bar.eval_h(&[1.0, 0.0]) - 2f64.sqrt() * 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn feature_norm_bounded() {
        let bar = toy(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-20.0..20.0)).collect();
            assert!(norm2(&bar.features(&x).unwrap()) <= 2f64.sqrt() + 1e-12);
            assert!(bar.eval_h(&x).abs() <= 2f64.sqrt() * norm2(bar.theta()) + 1e-12);
        }
    }

    #[test]
    fn zero_weights() {
        let bar = RffBarrier::sample(2, 8, 1.0, 1.0, None, 1).unwrap();
        assert_eq!(bar.eval_h(&[0.4, 0.1]), 0.0);
        assert!(bar.grad_h(&[0.4, 0.1]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let bar = toy(1);
        assert!(bar.features(&[1.0]).is_err());
        let sys = LinearModel::integrator(2);
        assert!(compute_b_terms(&[0.0, 0.0], TimePoint::at(0.0), &sys, &bar).is_err());
    }

    #[test]
    fn b_terms_zero_gradient() {
        let bar = RffBarrier::sample(2, 8, 1.0, 1.0, None, 4).unwrap();
        let mut sys = LinearModel::integrator(2);
        sys.delta_f = 0.3;
        sys.delta_g = 0.2;
        let bt = compute_b_terms(&[0.5, -0.5], TimePoint::at(0.0), &sys, &bar).unwrap();
        assert_eq!(bt.b1, 0.0);
        assert!(bt.b2.iter().all(|v| *v == 0.0));
        assert_eq!(bt.b3, 0.0);
    }

    #[test]
    fn b3_non_positive() {
        let bar = toy(5);
        let mut sys = LinearModel::integrator(3);
        sys.delta_g = 0.4;
        let bt = compute_b_terms(&[0.1, 0.2, 0.3], TimePoint::at(0.0), &sys, &bar).unwrap();
        assert!(bt.b3 <= 0.0);
    }

    #[test]
    fn q_without_input_or_measurement_error() {
        let bar = toy(6);
        let mut sys = LinearModel::integrator(3);
        sys.delta_f = 0.1;
        let meas = IdentityMeasurement { n: 3, delta_x: 0.25 };
        let c = RobustnessConsts::new(2.0, 0.5, 0.5).unwrap();
        let y = [0.2, -0.1, 0.4];
        let t = TimePoint::at(0.0);
        let q = eval_q(&[0.0; 3], &y, t, &sys, &meas, &bar, &c).unwrap();
        let bt = compute_b_terms(&y, t, &sys, &bar).unwrap();
        assert!((q - (bt.b1 - 2.0 * 0.25)).abs() < 1e-14);
    }

    #[test]
    fn q_coefficients_match_direct_evaluation() {
        let bar = toy(7);
        let mut sys = LinearModel::integrator(3);
        sys.delta_f = 0.2;
        sys.delta_g = 0.15;
        let meas = IdentityMeasurement { n: 3, delta_x: 0.05 };
        let c = RobustnessConsts::new(1.0, 0.3, 0.7).unwrap();
        let (u, y, t) = ([0.3, -0.2, 0.5], [0.1, 0.9, -0.3], TimePoint::at(1.0));
        let qc = QCoefficients::build(&u, &y, t, &sys, &meas, &bar, &c).unwrap();
        let direct = eval_q(&u, &y, t, &sys, &meas, &bar, &c).unwrap();
        assert!((qc.value(bar.frequencies(), bar.theta()) - direct).abs() < 1e-12);
    }

    #[test]
    fn q_gradient_kink_convention() {
        let bar = RffBarrier::sample(3, 16, 1.5, 1.0, None, 2).unwrap();
        let mut sys = LinearModel::integrator(3);
        sys.delta_f = 0.2;
        sys.delta_g = 0.2;
        let meas = IdentityMeasurement { n: 3, delta_x: 0.1 };
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let (u, y, t) = ([0.3, -0.2, 0.5], [0.1, 0.9, -0.3], TimePoint::at(0.0));
        let g = grad_q_theta(&u, &y, t, &sys, &meas, &bar, &c).unwrap();
        let qc = QCoefficients::build(&u, &y, t, &sys, &meas, &bar, &c).unwrap();
        assert_eq!(g, qc.linear);
    }

    #[test]
    fn unit_ball_mode_rejects_uncertainty() {
        let bar = toy(8);
        let mut sys = LinearModel::integrator(3);
        sys.delta_f = 0.1;
        assert!(QCoefficients::build_unit_ball(&[0.0; 3], TimePoint::at(0.0), &sys, &bar).is_err());
    }

    #[test]
    fn unit_ball_value() {
        let bar = toy(9);
        let sys = LinearModel::integrator(3);
        let x = [0.3, 0.1, -0.2];
        let t = TimePoint::at(0.0);
        let qc = QCoefficients::build_unit_ball(&x, t, &sys, &bar).unwrap();
        let (h, gh) = bar.value_and_grad(&x);
        // F̂ = 0, Ĝ = I: q = a h + ‖∇h‖
        let expected = h + norm2(&gh);
        assert!((qc.value(bar.frequencies(), bar.theta()) - expected).abs() < 1e-12);
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let bar = toy(11);
        let c = RobustnessConsts::new(1.0, 0.5, 0.5).unwrap();
        let text = barrier_to_text(&bar, &c);
        let (back, cb) = barrier_from_text(&text).unwrap();
        assert_eq!(back, bar);
        assert_eq!(cb, c);
        assert_eq!(barrier_to_text(&back, &cb), text);
    }

    #[test]
    fn text_rejects_garbage() {
        assert!(barrier_from_text("hello").is_err());
        assert!(barrier_from_text("rocbf-barrier 1\nn 2\nell 1\n").is_err());
    }
}
