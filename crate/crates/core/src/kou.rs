//! Kou jump-diffusion dynamics: double-exponential jump distribution, drift
//! compensator, the transition-density series for one rebalancing period, and
//! exact sampling of per-period log-increments.
//!
//! The one-period density `g(y, dt)` is evaluated through its series
//! expansion in the number of jumps. Each term is built from `Hh` special
//! functions and is non-negative, which is what makes the downstream
//! convolution scheme monotone. The series is truncated after `n_terms`
//! jumps; the truncation error is bounded by [`truncation_bound`].
//!
//! Sign convention (frozen after distributional testing, see the unit tests):
//! `g` is the density of the *negative* log-increment, so expectations are
//! advanced via `out(y) = sum_l w_l g(y - y_l) in(y_l)` with `y_l` the future
//! log-price node. Equivalently, sampled increments `x` have density `g(-x)`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annualized model parameters for the risky and risk-free assets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Real drift of the risky asset per year.
    pub mu: f64,
    /// Diffusion volatility per sqrt-year.
    pub sigma: f64,
    /// Jump intensity per year.
    pub lambda: f64,
    /// Probability that a jump is upward.
    pub p_up: f64,
    /// Rate of the upward jump exponential (must exceed 1 for a finite mean).
    pub eta1: f64,
    /// Rate of the downward jump exponential.
    pub eta2: f64,
    /// Real risk-free rate per year.
    pub r: f64,
}

impl ModelParams {
    /// Parameters calibrated to long-run US equity / T-bill data, shipped as
    /// the `calibrated` preset.
    pub fn calibrated() -> Self {
        ModelParams {
            mu: 0.0874,
            sigma: 0.1452,
            lambda: 0.3483,
            p_up: 0.2903,
            eta1: 4.7941,
            eta2: 5.4349,
            r: 0.00623,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.p_up) {
            return Err(Error::InvalidParameter(format!(
                "p_up must lie in [0,1], got {}",
                self.p_up
            )));
        }
        if !(self.eta1 > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eta1 must be > 1, got {}",
                self.eta1
            )));
        }
        if !(self.eta2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta2 must be > 0, got {}",
                self.eta2
            )));
        }
        if !self.mu.is_finite() || !self.r.is_finite() {
            return Err(Error::InvalidParameter(
                "mu and r must be finite".to_string(),
            ));
        }
        Ok(())
    }

    /// Density of the log jump multiplier: asymmetric double exponential.
    pub fn jump_log_pdf(&self, zeta: f64) -> f64 {
        if zeta >= 0.0 {
            self.p_up * self.eta1 * (-self.eta1 * zeta).exp()
        } else {
            (1.0 - self.p_up) * self.eta2 * (self.eta2 * zeta).exp()
        }
    }

    /// Drift compensator `kappa = E[xi - 1]` for the jump multiplier `xi`.
    pub fn compensator_kappa(&self) -> Result<f64> {
        if !(self.eta1 > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "compensator undefined: eta1 must be > 1, got {}",
                self.eta1
            )));
        }
        Ok(self.p_up * self.eta1 / (self.eta1 - 1.0)
            + (1.0 - self.p_up) * self.eta2 / (self.eta2 + 1.0)
            - 1.0)
    }

    /// Draws one exact log-increment over `dt` years: Brownian part plus a
    /// compound Poisson sum of double-exponential jumps.
    pub fn sample_log_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> f64 {
        let kappa = self.compensator_kappa().expect("valid params");
        let drift = (self.mu - self.lambda * kappa - 0.5 * self.sigma * self.sigma) * dt;
        let z: f64 = StandardNormal.sample(rng);
        let mut x = drift + self.sigma * dt.sqrt() * z;
        let mean_jumps = self.lambda * dt;
        if mean_jumps > 0.0 {
            let n = Poisson::new(mean_jumps).expect("positive rate").sample(rng) as u64;
            for _ in 0..n {
                x += self.sample_jump(rng);
            }
        }
        x
    }

    fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.gen::<f64>() < self.p_up {
            Exp::new(self.eta1).expect("eta1 > 0").sample(rng)
        } else {
            -Exp::new(self.eta2).expect("eta2 > 0").sample(rng)
        }
    }
}

/// Truncation control for the transition-density series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    /// Number of jump terms kept in the series.
    pub n_terms: usize,
    /// Rebalancing interval in years.
    pub dt: f64,
}

impl DensityConfig {
    pub fn new(n_terms: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be > 0, got {dt}"
            )));
        }
        Ok(DensityConfig { n_terms, dt })
    }
}

/// Upper bound on `|g - g(.; n_terms)|`, uniform in `y`.
pub fn truncation_bound(params: &ModelParams, cfg: &DensityConfig) -> f64 {
    let lam_dt = params.lambda * cfg.dt;
    let mut p = 1.0;
    for k in 1..=(cfg.n_terms + 1) {
        p *= lam_dt / k as f64;
    }
    p / (2.0 * std::f64::consts::PI * params.sigma * params.sigma * cfg.dt).sqrt()
}

/// `Hh_k(x) = (1/k!) int_x^inf (z-x)^k exp(-z^2/2) dz`, for `k >= -1`.
///
/// Forward three-term recursion in double-double accumulators where it is
/// stable; for larger positive arguments the forward direction cancels
/// catastrophically, so the whole ladder switches to the backward (minimal
/// solution) recursion anchored at `Hh_{-1}`. Direct quadrature of the
/// defining integral is kept as an independent cross-check.
pub fn hh(k: i64, x: f64) -> Result<f64> {
    if k < -1 {
        return Err(Error::InvalidParameter(format!(
            "Hh order must be >= -1, got {k}"
        )));
    }
    let seq = hh_sequence(k, x);
    Ok(seq[(k + 1) as usize])
}

const HH_BACKWARD_CUTOFF: f64 = 4.0;

/// All of `Hh_{-1}(x) .. Hh_kmax(x)`, indexed by `k + 1`.
pub(crate) fn hh_sequence(kmax: i64, x: f64) -> Vec<f64> {
    if x > HH_BACKWARD_CUTOFF {
        return hh_sequence_backward(kmax, x);
    }
    let mut out = Vec::with_capacity((kmax + 2) as usize);
    // Forward is stable here: the -x*Hh_{k-1} subtraction loses at most a
    // few digits per step, which the double-double accumulators absorb.
    let mut prev2 = Dd::from((-0.5 * x * x).exp()); // Hh_{-1}
    // Hh_0 = sqrt(2 pi) * NormalCdf(-x)
    let mut prev = Dd::from(
        (2.0 * std::f64::consts::PI).sqrt() * 0.5 * libm::erfc(x / std::f64::consts::SQRT_2),
    );
    out.push(prev2.to_f64());
    if kmax >= 0 {
        out.push(prev.to_f64());
    }
    for k in 1..=kmax {
        let t = prev.mul_f64(x);
        let num = prev2.sub(t);
        let cur = num.div_f64(k as f64);
        out.push(cur.to_f64().max(0.0));
        prev2 = prev;
        prev = cur;
    }
    out
}

/// Backward recursion `Hh_{k-2} = k Hh_k + x Hh_{k-1}` from a trial start
/// well above `kmax`, rescaled to the exact `Hh_{-1}(x)`. All terms are
/// positive for `x > 0`, so the downward direction is cancellation-free.
fn hh_sequence_backward(kmax: i64, x: f64) -> Vec<f64> {
    let n = (kmax + 2) as usize;
    let lead = (-0.5 * x * x).exp();
    if lead == 0.0 {
        return vec![0.0; n];
    }
    let guard = 30usize;
    let top = kmax.max(0) as usize + guard;
    // v[i] ~ Hh_{i-1} up to a common scale
    let mut v = vec![0.0f64; top + 3];
    v[top + 2] = 0.0;
    v[top + 1] = f64::MIN_POSITIVE * 1e16;
    for k in (1..=top as i64 + 1).rev() {
        let i = (k + 1) as usize;
        v[i - 2] = k as f64 * v[i] + x * v[i - 1];
    }
    let scale = lead / v[0];
    v.truncate(n);
    for t in &mut v {
        *t *= scale;
    }
    v
}

/// Direct quadrature of `Hh_k` after the substitution `z = x + t`:
/// `e^{-x^2/2}/k! * int_0^inf t^k e^{-x t - t^2/2} dt`. Test oracle for
/// both recursion branches.
#[cfg(test)]
fn hh_quadrature(k: i64, x: f64) -> f64 {
    let lead = (-0.5 * x * x).exp();
    if k == -1 || lead == 0.0 {
        return lead;
    }
    let kf = k as f64;
    // Integrand peaks near t* and decays on the 1/x scale beyond it.
    let t_star = 0.5 * (-x + (x * x + 4.0 * kf).sqrt());
    let upper = t_star + (80.0 + 2.0 * kf) / x;
    let f = |t: f64| -> f64 {
        if t <= 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        (kf * t.ln() - x * t - 0.5 * t * t).exp()
    };
    let n = 4096usize;
    let h = upper / n as f64;
    let mut acc = f(0.0) + f(upper);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = acc * h / 3.0;
    let mut kfact = 1.0;
    for i in 2..=k {
        kfact *= i as f64;
    }
    lead * integral / kfact
}

/// Coefficient arrays of the `ell`-jump series term; entry `k-1` holds the
/// weight of the `Hh_{k-1}` contribution, `k = 1..=ell`.
pub fn q_coefficients(params: &ModelParams, ell: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if ell < 1 {
        return Err(Error::InvalidParameter(format!(
            "q_coefficients requires ell >= 1, got {ell}"
        )));
    }
    let p = params.p_up;
    let q = 1.0 - p;
    let e1 = params.eta1 / (params.eta1 + params.eta2);
    let e2 = params.eta2 / (params.eta1 + params.eta2);
    let mut q1 = vec![0.0; ell];
    let mut q2 = vec![0.0; ell];
    for k in 1..ell {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for i in k..ell {
            let b = binomial(ell - k - 1, i - k) * binomial(ell, i);
            s1 += b * e1.powi((i - k) as i32) * e2.powi((ell - i) as i32)
                * p.powi(i as i32)
                * q.powi((ell - i) as i32);
            s2 += b * e1.powi((ell - i) as i32) * e2.powi((i - k) as i32)
                * p.powi((ell - i) as i32)
                * q.powi(i as i32);
        }
        q1[k - 1] = s1;
        q2[k - 1] = s2;
    }
    q1[ell - 1] = p.powi(ell as i32);
    q2[ell - 1] = q.powi(ell as i32);
    Ok((q1, q2))
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Evaluator for the truncated transition density `g(y, dt; n_terms)`.
///
/// Precomputes everything that does not depend on `y`, so building the
/// convolution row cache costs one `Hh` recursion pair per grid offset.
#[derive(Debug, Clone)]
pub struct DensityEval {
    alpha: f64,
    beta: f64,
    theta: f64,
    lam_dt: f64,
    n_terms: usize,
    eta1: f64,
    eta2: f64,
    sqrt_2a: f64,
    norm: f64,
    /// `(lam_dt)^ell / ell!` for `ell = 1..=n_terms`.
    poisson_w: Vec<f64>,
    /// `q1[ell-1][k-1]`, `q2[ell-1][k-1]` weights.
    q1: Vec<Vec<f64>>,
    q2: Vec<Vec<f64>>,
    /// `(eta_i * sqrt(2 alpha))^k`, `k = 1..=n_terms`.
    pow1: Vec<f64>,
    pow2: Vec<f64>,
}

impl DensityEval {
    pub fn new(params: &ModelParams, cfg: &DensityConfig) -> Result<Self> {
        params.validate()?;
        let kappa = params.compensator_kappa()?;
        let dt = cfg.dt;
        let alpha = 0.5 * params.sigma * params.sigma * dt;
        let beta = (params.mu - params.lambda * kappa - 0.5 * params.sigma * params.sigma) * dt;
        let theta = -params.lambda * dt;
        let lam_dt = params.lambda * dt;
        let n_terms = if lam_dt > 0.0 { cfg.n_terms } else { 0 };
        let sqrt_2a = (2.0 * alpha).sqrt();
        let mut poisson_w = Vec::with_capacity(n_terms);
        let mut q1 = Vec::with_capacity(n_terms);
        let mut q2 = Vec::with_capacity(n_terms);
        let mut pow1 = Vec::with_capacity(n_terms);
        let mut pow2 = Vec::with_capacity(n_terms);
        let mut w = 1.0;
        for ell in 1..=n_terms {
            w *= lam_dt / ell as f64;
            poisson_w.push(w);
            let (a, b) = q_coefficients(params, ell)?;
            q1.push(a);
            q2.push(b);
            pow1.push((params.eta1 * sqrt_2a).powi(ell as i32));
            pow2.push((params.eta2 * sqrt_2a).powi(ell as i32));
        }
        Ok(DensityEval {
            alpha,
            beta,
            theta,
            lam_dt,
            n_terms,
            eta1: params.eta1,
            eta2: params.eta2,
            sqrt_2a,
            norm: 1.0 / (4.0 * std::f64::consts::PI * alpha).sqrt(),
            poisson_w,
            q1,
            q2,
            pow1,
            pow2,
        })
    }

    /// Drift of the increment density: `g` is centered at `-beta`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// The zero-jump Gaussian term.
    fn g0(&self, y: f64) -> f64 {
        let z = self.beta + y;
        self.norm * (self.theta - z * z / (4.0 * self.alpha)).exp()
    }

    /// Series term `g_ell(y, dt)`; `ell = 0` is the Gaussian term.
    pub fn term(&self, ell: usize, y: f64) -> f64 {
        if ell == 0 {
            return self.g0(y);
        }
        if ell > self.n_terms {
            return 0.0;
        }
        let h = self.hh_tables(y);
        self.term_from_tables(ell, y, &h.0, &h.1)
    }

    /// `g(y, dt; n_terms)`.
    pub fn eval(&self, y: f64) -> f64 {
        let mut g = self.g0(y);
        if self.n_terms == 0 || self.lam_dt == 0.0 {
            return g;
        }
        let (h1, h2) = self.hh_tables(y);
        for ell in 1..=self.n_terms {
            g += self.term_from_tables(ell, y, &h1, &h2);
        }
        g
    }

    /// `Hh_{-1..n_terms-1}` at both branch arguments, indexed by `k+1`.
    fn hh_tables(&self, y: f64) -> (Vec<f64>, Vec<f64>) {
        let z = self.beta + y;
        let kmax = self.n_terms as i64 - 1;
        let x1 = self.eta1 * self.sqrt_2a + z / self.sqrt_2a;
        let x2 = self.eta2 * self.sqrt_2a - z / self.sqrt_2a;
        (hh_sequence(kmax, x1), hh_sequence(kmax, x2))
    }

    fn term_from_tables(&self, ell: usize, y: f64, h1: &[f64], h2: &[f64]) -> f64 {
        let z = self.beta + y;
        let e1 = self.eta1 * z + self.eta1 * self.eta1 * self.alpha;
        let e2 = -self.eta2 * z + self.eta2 * self.eta2 * self.alpha;
        let q1 = &self.q1[ell - 1];
        let q2 = &self.q2[ell - 1];
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for k in 1..=ell {
            // h tables are indexed by order+1; we need Hh_{k-1}.
            s1 += q1[k - 1] * self.pow1[k - 1] * h1[k];
            s2 += q2[k - 1] * self.pow2[k - 1] * h2[k];
        }
        let branch1 = scaled_exp_mul(e1, s1);
        let branch2 = scaled_exp_mul(e2, s2);
        self.norm * self.theta.exp() * self.poisson_w[ell - 1] * (branch1 + branch2)
    }
}

/// `exp(e) * s` computed through logs when the exponent alone would
/// overflow; the product itself is always finite for valid parameters.
fn scaled_exp_mul(e: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if e > 650.0 {
        (e + s.ln()).exp()
    } else {
        e.exp() * s
    }
}

/// Truncated transition density at displacement `y` (op-level convenience;
/// heavy callers should construct a [`DensityEval`] once).
pub fn transition_density(params: &ModelParams, y: f64, cfg: &DensityConfig) -> Result<f64> {
    Ok(DensityEval::new(params, cfg)?.eval(y))
}

/// Double-double scalar: an unevaluated sum `hi + lo` carrying roughly
/// twice the f64 precision through the `Hh` recursion.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn sub(self, rhs: Dd) -> Dd {
        let s = two_sum(self.hi, -rhs.hi);
        let lo = s.1 + self.lo - rhs.lo;
        renorm(s.0, lo)
    }

    fn mul_f64(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        renorm(p.0, p.1 + self.lo * b)
    }

    fn div_f64(self, b: f64) -> Dd {
        let q0 = self.hi / b;
        let p = two_prod(q0, b);
        let r = (self.hi - p.0) - p.1 + self.lo;
        renorm(q0, r / b)
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn renorm(hi: f64, lo: f64) -> Dd {
    let s = two_sum(hi, lo);
    Dd { hi: s.0, lo: s.1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson over [a, b].
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 0 { n } else { n + 1 };
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn jump_pdf_single_sided() {
        let p = ModelParams {
            p_up: 1.0,
            eta1: 2.0,
            ..ModelParams::calibrated()
        };
        let got = p.jump_log_pdf(1.0);
        assert!((got - 2.0 * (-2.0f64).exp()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn jump_pdf_normalizes() {
        let p = ModelParams::calibrated();
        let up = simpson(|z| p.jump_log_pdf(z), 0.0, 40.0, 40_000);
        let down = simpson(|z| p.jump_log_pdf(z), -40.0, -1e-14, 40_000);
        assert!((up + down - 1.0).abs() < 1e-10, "integral {}", up + down);
    }

    #[test]
    fn jump_pdf_at_zero_matches_calibrated_arithmetic() {
        let p = ModelParams::calibrated();
        let got = p.jump_log_pdf(0.0);
        let expected = 0.2903 * 4.7941;
        assert!((got - expected).abs() < 1e-12);
        assert!((expected - 1.39173).abs() < 1e-4);
    }

    #[test]
    fn kappa_one_sided_by_hand() {
        let p = ModelParams {
            p_up: 1.0,
            eta1: 2.0,
            ..ModelParams::calibrated()
        };
        assert!((p.compensator_kappa().unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kappa_rejected_for_eta1_at_most_one() {
        let p = ModelParams {
            eta1: 1.0,
            ..ModelParams::calibrated()
        };
        assert!(p.compensator_kappa().is_err());
    }

    #[test]
    fn kappa_matches_quadrature() {
        let p = ModelParams::calibrated();
        let oracle = simpson(|z| (z.exp() - 1.0) * p.jump_log_pdf(z), -40.0, -1e-14, 80_000)
            + simpson(|z| (z.exp() - 1.0) * p.jump_log_pdf(z), 0.0, 40.0, 80_000);
        let got = p.compensator_kappa().unwrap();
        assert!((got - oracle).abs() < 1e-8, "got {got}, oracle {oracle}");
    }

    #[test]
    fn hh_base_cases() {
        assert!((hh(-1, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let want = (2.0 * std::f64::consts::PI).sqrt() * 0.5;
        assert!((hh(0, 0.0).unwrap() - want).abs() < 1e-12);
        assert!(hh(-2, 0.0).is_err());
    }

    fn hh_oracle(k: i64, x: f64) -> f64 {
        // (1/k!) int_x^{x+L} (z-x)^k exp(-z^2/2) dz
        let mut kfact = 1.0;
        for i in 2..=k {
            kfact *= i as f64;
        }
        let integrand = |z: f64| {
            let t = z - x;
            if k == -1 {
                unreachable!()
            }
            if t <= 0.0 {
                return if k == 0 { (-0.5 * z * z).exp() } else { 0.0 };
            }
            (k as f64 * t.ln() - 0.5 * z * z).exp()
        };
        simpson(integrand, x, x + 60.0, 120_000) / kfact
    }

    #[test]
    fn hh_matches_quadrature_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let x = rng.gen_range(-3.0..3.0);
            for k in 1..=10 {
                let got = hh(k, x).unwrap();
                let want = hh_oracle(k, x);
                assert!(
                    (got - want).abs() < 1e-8,
                    "k={k} x={x}: got {got} want {want}"
                );
            }
        }
    }

    #[test]
    fn hh_wide_range_against_oracle() {
        for &x in &[-5.0, -4.0, -1.5, 0.5, 2.5, 4.0, 5.0] {
            for k in 0..=12 {
                let got = hh(k, x).unwrap();
                let want = hh_oracle(k, x);
                assert!(
                    (got - want).abs() < 1e-8,
                    "k={k} x={x}: got {got} want {want}"
                );
            }
        }
    }

    #[test]
    fn hh_branches_agree_with_direct_quadrature() {
        // Both recursion directions must match the defining integral at the
        // same argument to high relative accuracy, including either side of
        // the branch switch.
        for &x in &[3.9, 4.1, 6.0, 7.9, 8.1, 12.0] {
            for k in 0..=12 {
                let got = hh(k, x).unwrap();
                let quad = hh_quadrature(k, x);
                assert!(
                    (got - quad).abs() <= 1e-6 * quad.abs(),
                    "k={k} x={x}: {got} vs {quad}"
                );
            }
        }
    }

    #[test]
    fn q_coefficients_boundary_and_signs() {
        let p = ModelParams::calibrated();
        let (q1, q2) = q_coefficients(&p, 1).unwrap();
        assert_eq!(q1, vec![p.p_up]);
        assert_eq!(q2, vec![1.0 - p.p_up]);
        for ell in 1..=15 {
            let (q1, q2) = q_coefficients(&p, ell).unwrap();
            assert!(q1.iter().chain(q2.iter()).all(|&v| v >= 0.0), "ell={ell}");
        }
        assert!(q_coefficients(&p, 0).is_err());
    }

    #[test]
    fn density_reduces_to_gaussian_without_jumps() {
        let p = ModelParams {
            lambda: 0.0,
            ..ModelParams::calibrated()
        };
        let cfg = DensityConfig::new(12, 1.0).unwrap();
        let ev = DensityEval::new(&p, &cfg).unwrap();
        let var = p.sigma * p.sigma;
        let beta = (p.mu - 0.5 * var) * 1.0;
        let peak = ev.eval(-beta);
        assert!((peak - 1.0 / (2.0 * std::f64::consts::PI * var).sqrt()).abs() < 1e-12);
        let off = ev.eval(-beta + 0.3);
        let want = (-(0.3f64 * 0.3) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        assert!((off - want).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let p = ModelParams::calibrated();
        let cfg = DensityConfig::new(12, 1.0).unwrap();
        let ev = DensityEval::new(&p, &cfg).unwrap();
        let mass = simpson(|y| ev.eval(y), -16.0, 16.0, 16_384);
        let slack = truncation_bound(&p, &cfg) * 32.0 + 1e-6;
        assert!((mass - 1.0).abs() < slack, "mass {mass}");
    }

    #[test]
    fn partial_sums_obey_truncation_bound() {
        let p = ModelParams::calibrated();
        let cfg10 = DensityConfig::new(10, 1.0).unwrap();
        let cfg20 = DensityConfig::new(20, 1.0).unwrap();
        let e10 = DensityEval::new(&p, &cfg10).unwrap();
        let e20 = DensityEval::new(&p, &cfg20).unwrap();
        let bound = truncation_bound(&p, &cfg10);
        let mut y = -12.0;
        while y <= 12.0 {
            let d = (e20.eval(y) - e10.eval(y)).abs();
            assert!(d <= bound, "y={y}: diff {d} bound {bound}");
            y += 0.024;
        }
    }

    #[test]
    fn series_terms_nonnegative() {
        let p = ModelParams::calibrated();
        let cfg = DensityConfig::new(8, 1.0).unwrap();
        let ev = DensityEval::new(&p, &cfg).unwrap();
        let mut y = -14.0;
        while y <= 14.0 {
            for ell in 0..=8 {
                let t = ev.term(ell, y);
                assert!(t >= 0.0, "ell={ell} y={y}: {t}");
            }
            y += 0.11;
        }
    }

    #[test]
    fn two_jump_term_matches_brute_force_convolution() {
        // g_2 should equal exp(theta) (lam dt)^2/2! times the density of
        // -(beta + sqrt(2 alpha) Z + zeta_1 + zeta_2), built here by direct
        // two-dimensional quadrature split at the jump-density kinks.
        let p = ModelParams::calibrated();
        let cfg = DensityConfig::new(12, 1.0).unwrap();
        let ev = DensityEval::new(&p, &cfg).unwrap();
        let kappa = p.compensator_kappa().unwrap();
        let var = p.sigma * p.sigma;
        let beta = p.mu - p.lambda * kappa - 0.5 * var;
        let gauss = |x: f64| (-(x * x) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let lam_dt = p.lambda;
        let scale = (-lam_dt).exp() * lam_dt * lam_dt / 2.0;
        for &y in &[-0.6, -0.1, 0.0, 0.25, 0.8] {
            // density of zeta_1 + zeta_2 at s, by 1d quadrature split at the
            // kink locations t = 0 and t = s.
            let rho2 = |s: f64| {
                let f = |t: f64| p.jump_log_pdf(t) * p.jump_log_pdf(s - t);
                let mut cuts = vec![-30.0, 0.0, s.min(0.0).max(-30.0), s.max(0.0).min(30.0), 30.0];
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut acc = 0.0;
                for w in cuts.windows(2) {
                    if w[1] - w[0] > 1e-12 {
                        acc += simpson(&f, w[0] + 1e-13, w[1] - 1e-13, 2000);
                    }
                }
                acc
            };
            // density of -(beta + G + J) at y is density of (G + J) at -y-beta
            let target = -y - beta;
            let f = |s: f64| gauss(target - s) * rho2(s);
            let oracle = scale * (simpson(&f, -6.0, 0.0, 600) + simpson(&f, 0.0, 6.0, 600));
            let got = ev.term(2, y);
            assert!(
                (got - oracle).abs() < 1e-6,
                "y={y}: got {got}, oracle {oracle}"
            );
        }
    }

    #[test]
    fn increment_moments_without_jumps() {
        let p = ModelParams {
            lambda: 0.0,
            ..ModelParams::calibrated()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = p.sample_log_increment(1.0, &mut rng);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let want_mean = p.mu - 0.5 * p.sigma * p.sigma;
        let want_var = p.sigma * p.sigma;
        let se_mean = p.sigma / (n as f64).sqrt();
        let se_var = want_var * (2.0 / n as f64).sqrt();
        assert!((mean - want_mean).abs() < 4.0 * se_mean);
        assert!((var - want_var).abs() < 4.0 * se_var);
    }

    #[test]
    fn deterministic_limit_without_noise() {
        let p = ModelParams {
            lambda: 0.0,
            sigma: 1e-12,
            ..ModelParams::calibrated()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = p.sample_log_increment(1.0, &mut rng);
        assert!((x - (p.mu - 0.5 * p.sigma * p.sigma)).abs() < 1e-9);
    }

    #[test]
    fn sampled_increments_match_density_by_ks() {
        // One-sample Kolmogorov-Smirnov of simulated increments against the
        // cdf implied by the series density, frozen sign convention:
        // increments x have density g(-x).
        let p = ModelParams::calibrated();
        let cfg = DensityConfig::new(14, 1.0).unwrap();
        let ev = DensityEval::new(&p, &cfg).unwrap();
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut xs: Vec<f64> = (0..n).map(|_| p.sample_log_increment(1.0, &mut rng)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // cdf of increments: F(x) = int_{-inf}^{x} g(-t) dt, via a fine
        // trapezoid accumulation on [-12, 12].
        let m = 48_000usize;
        let lo = -12.0;
        let h = 24.0 / m as f64;
        let mut cdf = vec![0.0f64; m + 1];
        let mut prev = ev.eval(-lo);
        for i in 1..=m {
            let t = lo + i as f64 * h;
            let cur = ev.eval(-t);
            cdf[i] = cdf[i - 1] + 0.5 * (prev + cur) * h;
            prev = cur;
        }
        let total = cdf[m];
        let eval_cdf = |x: f64| -> f64 {
            if x <= lo {
                return 0.0;
            }
            if x >= lo + 24.0 {
                return 1.0;
            }
            let u = (x - lo) / h;
            let i = (u as usize).min(m - 1);
            let frac = u - i as f64;
            (cdf[i] * (1.0 - frac) + cdf[i + 1] * frac) / total
        };
        let mut d = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = eval_cdf(x);
            let hi = (i + 1) as f64 / n as f64 - f;
            let lo_gap = f - i as f64 / n as f64;
            d = d.max(hi).max(lo_gap);
        }
        // K-S critical value at significance 0.01.
        let crit = 1.628 / (n as f64).sqrt();
        assert!(d < crit, "KS statistic {d}, critical {crit}");
    }
}

