//! Soft actor-critic networks and losses with analytic gradients.
//!
//! Actions are the squashed policy outputs `w = tanh(u) ∈ (-1, 1)^6`; the
//! critics take `[s, w]` as input and gains are obtained by an affine range map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mdp::{GainRanges, GainVector, Transition, ACTION_DIM, STATE_DIM};
use crate::nn::{polyak_update, Adam, Cache, Mlp};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub type Noise = [f64; ACTION_DIM];

/// The five networks of the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SacNets {
    pub value: Mlp,
    pub value_target: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub policy: Mlp,
}

impl SacNets {
    pub fn new(hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let value = Mlp::new(&[STATE_DIM, hidden, hidden, 1], rng);
        let q1 = Mlp::new(&[STATE_DIM + ACTION_DIM, hidden, hidden, 1], rng);
        let q2 = Mlp::new(&[STATE_DIM + ACTION_DIM, hidden, hidden, 1], rng);
        let policy = Mlp::new(&[STATE_DIM, hidden, hidden, 2 * ACTION_DIM], rng);
        SacNets {
            value_target: value.clone(),
            value,
            q1,
            q2,
            policy,
        }
    }

    pub fn all(&self) -> [&Mlp; 5] {
        [&self.value, &self.value_target, &self.q1, &self.q2, &self.policy]
    }
}

/// Hyperparameters of the SAC update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacHyper {
    pub gamma: f64,
    pub alpha: f64,
    pub chi: f64,
    pub lr: f64,
}

impl Default for SacHyper {
    fn default() -> Self {
        SacHyper {
            gamma: 0.99,
            alpha: 1.0,
            chi: 0.005,
            lr: 3e-4,
        }
    }
}

/// Mean and clamped log-std of the Gaussian, split from the raw policy output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyHead {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
}

impl PolicyHead {
    pub fn from_output(out: &[f64]) -> Self {
        let mut mean = [0.0; ACTION_DIM];
        let mut log_std = [0.0; ACTION_DIM];
        mean.copy_from_slice(&out[..ACTION_DIM]);
        for i in 0..ACTION_DIM {
            log_std[i] = out[ACTION_DIM + i].clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        PolicyHead { mean, log_std }
    }
}

/// `ln(1 - tanh²u)` computed without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    // 1 - tanh²u = 4 / (e^u + e^-u)², so ln = 2 (ln 2 - |u| - ln(1 + e^{-2|u|}))
    let a = u.abs();
    2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Reparameterized draw: `u = μ + ε σ`, `w = tanh u`, and the log-density of `w`
/// including the tanh Jacobian.
pub fn squash(head: &PolicyHead, eps: &Noise) -> ([f64; ACTION_DIM], f64) {
    let mut w = [0.0; ACTION_DIM];
    let mut logp = 0.0;
    for i in 0..ACTION_DIM {
        let u = head.mean[i] + eps[i] * head.log_std[i].exp();
        w[i] = u.tanh();
        logp += -0.5 * eps[i] * eps[i] - head.log_std[i] - HALF_LN_2PI - log_one_minus_tanh_sq(u);
    }
    (w, logp)
}

pub fn draw_noise(rng: &mut ChaCha8Rng) -> Noise {
    let mut e = [0.0; ACTION_DIM];
    for x in e.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    e
}

/// Samples gains from the stochastic policy. Returns the gains, the log-prob and
/// the squashed action.
pub fn sample_action(
    policy: &Mlp,
    s: &[f64; STATE_DIM],
    ranges: &GainRanges,
    rng: &mut ChaCha8Rng,
) -> Result<(GainVector, f64, [f64; ACTION_DIM])> {
    let head = PolicyHead::from_output(&policy.predict(s)?);
    let eps = draw_noise(rng);
    let (w, logp) = squash(&head, &eps);
    Ok((ranges.to_gains(&w), logp, w))
}

/// Deterministic action `tanh(μ)` used for evaluation.
pub fn mean_action(policy: &Mlp, s: &[f64; STATE_DIM], ranges: &GainRanges) -> Result<GainVector> {
    let head = PolicyHead::from_output(&policy.predict(s)?);
    let w = head.mean.map(f64::tanh);
    Ok(ranges.to_gains(&w))
}

/// Minibatch in network coordinates.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub s: Vec<[f64; STATE_DIM]>,
    pub a: Vec<[f64; ACTION_DIM]>,
    pub r: Vec<f64>,
    pub s_next: Vec<[f64; STATE_DIM]>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition], ranges: &GainRanges) -> Self {
        let mut b = Batch::default();
        for t in ts {
            b.s.push(t.s.0);
            b.a.push(ranges.to_action(&t.k));
            b.r.push(t.r_lyap);
            b.s_next.push(t.s_next.0);
            b.done.push(t.done);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

fn sa(s: &[f64; STATE_DIM], a: &[f64; ACTION_DIM]) -> [f64; STATE_DIM + ACTION_DIM] {
    let mut x = [0.0; STATE_DIM + ACTION_DIM];
    x[..STATE_DIM].copy_from_slice(s);
    x[STATE_DIM..].copy_from_slice(a);
    x
}

fn non_empty(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Validation("empty minibatch".into()));
    }
    Ok(n as f64)
}

/// `J_V = mean ½ (V(s) − [min Q(s, w̃) − α log π(w̃|s)])²`, with `w̃` drawn from the
/// current policy using the supplied noise. Returns the loss and `∂J_V/∂ψ`.
pub fn loss_value(nets: &SacNets, states: &[[f64; STATE_DIM]], eps: &[Noise], alpha: f64) -> Result<(f64, Vec<f64>)> {
    let n = non_empty(states.len())?;
    if eps.len() != states.len() {
        return Err(Error::Shape("one noise vector per state required".into()));
    }
    let mut grad = vec![0.0; nets.value.num_params()];
    let mut loss = 0.0;
    let mut cache = Cache::default();
    for (s, e) in states.iter().zip(eps) {
        let head = PolicyHead::from_output(&nets.policy.predict(s)?);
        let (w, logp) = squash(&head, e);
        let x = sa(s, &w);
        let qmin = nets.q1.predict(&x)?[0].min(nets.q2.predict(&x)?[0]);
        let target = qmin - alpha * logp;
        nets.value.forward(s, &mut cache)?;
        let d = cache.output()[0] - target;
        loss += 0.5 * d * d / n;
        nets.value.backward(&cache, &[d / n], Some(&mut grad), None);
    }
    Ok((loss, grad))
}

/// `J_Q = mean ½ (Q(s, a) − [r + γ (1 − done) V̄(s′)])²` for one critic.
pub fn loss_q(q: &Mlp, value_target: &Mlp, batch: &Batch, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let n = non_empty(batch.len())?;
    let mut grad = vec![0.0; q.num_params()];
    let mut loss = 0.0;
    let mut cache = Cache::default();
    for i in 0..batch.len() {
        let boot = if batch.done[i] {
            0.0
        } else {
            value_target.predict(&batch.s_next[i])?[0]
        };
        let target = batch.r[i] + gamma * boot;
        q.forward(&sa(&batch.s[i], &batch.a[i]), &mut cache)?;
        let d = cache.output()[0] - target;
        loss += 0.5 * d * d / n;
        q.backward(&cache, &[d / n], Some(&mut grad), None);
    }
    Ok((loss, grad))
}

/// `J_π = mean [α log π(w|s) − min Q(s, w)]` with `w = tanh(μ + ε σ)`; the
/// gradient flows through the reparameterized action into `φ`.
pub fn loss_policy(nets: &SacNets, states: &[[f64; STATE_DIM]], eps: &[Noise], alpha: f64) -> Result<(f64, Vec<f64>)> {
    let n = non_empty(states.len())?;
    if eps.len() != states.len() {
        return Err(Error::Shape("one noise vector per state required".into()));
    }
    let mut grad = vec![0.0; nets.policy.num_params()];
    let mut loss = 0.0;
    let mut pc = Cache::default();
    let mut c1 = Cache::default();
    let mut c2 = Cache::default();
    let mut dx = [0.0; STATE_DIM + ACTION_DIM];
    for (s, e) in states.iter().zip(eps) {
        nets.policy.forward(s, &mut pc)?;
        let raw = pc.output();
        let head = PolicyHead::from_output(raw);
        let (w, logp) = squash(&head, e);
        let x = sa(s, &w);
        nets.q1.forward(&x, &mut c1)?;
        nets.q2.forward(&x, &mut c2)?;
        let (q1, q2) = (c1.output()[0], c2.output()[0]);
        // ties go to the first critic; the subgradient is valid either way
        let (qmin, net, cache) = if q1 <= q2 { (q1, &nets.q1, &c1) } else { (q2, &nets.q2, &c2) };
        loss += (alpha * logp - qmin) / n;
        net.backward(cache, &[1.0], None, Some(&mut dx));
        let mut dout = vec![0.0; 2 * ACTION_DIM];
        for i in 0..ACTION_DIM {
            let sigma = head.log_std[i].exp();
            let es = e[i] * sigma;
            let dq_du = dx[STATE_DIM + i] * (1.0 - w[i] * w[i]);
            // d logp/du = 2 tanh u; d u/dμ = 1; d u/d log σ = ε σ; ∂logp/∂log σ adds −1
            dout[i] = (alpha * 2.0 * w[i] - dq_du) / n;
            let raw_ls = raw[ACTION_DIM + i];
            dout[ACTION_DIM + i] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls) {
                (alpha * (2.0 * w[i] * es - 1.0) - dq_du * es) / n
            } else {
                0.0
            };
        }
        nets.policy.backward(&pc, &dout, Some(&mut grad), None);
    }
    Ok((loss, grad))
}

/// Online networks plus their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct SacLearner {
    pub nets: SacNets,
    pub opt_value: Adam,
    pub opt_q1: Adam,
    pub opt_q2: Adam,
    pub opt_policy: Adam,
    pub hyper: SacHyper,
}

/// Losses recorded during one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateLosses {
    pub value: f64,
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
}

impl SacLearner {
    pub fn new(nets: SacNets, hyper: SacHyper) -> Self {
        SacLearner {
            opt_value: Adam::new(nets.value.num_params(), hyper.lr),
            opt_q1: Adam::new(nets.q1.num_params(), hyper.lr),
            opt_q2: Adam::new(nets.q2.num_params(), hyper.lr),
            opt_policy: Adam::new(nets.policy.num_params(), hyper.lr),
            nets,
            hyper,
        }
    }

    pub fn optimizers(&self) -> [&Adam; 4] {
        [&self.opt_value, &self.opt_q1, &self.opt_q2, &self.opt_policy]
    }

    /// One gradient step on V, then Q1 and Q2, then the policy, then (if `polyak`)
    /// the Polyak update of the target value network. Noise for the value and
    /// policy losses is drawn from `rng`.
    pub fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng, polyak: bool) -> Result<UpdateLosses> {
        let h = self.hyper;
        let eps_v: Vec<Noise> = (0..batch.len()).map(|_| draw_noise(rng)).collect();
        let (lv, gv) = loss_value(&self.nets, &batch.s, &eps_v, h.alpha)?;
        check_finite("value", lv, &gv)?;
        self.opt_value.step(&mut self.nets.value.params, &gv)?;

        let (l1, g1) = loss_q(&self.nets.q1, &self.nets.value_target, batch, h.gamma)?;
        check_finite("q1", l1, &g1)?;
        self.opt_q1.step(&mut self.nets.q1.params, &g1)?;
        let (l2, g2) = loss_q(&self.nets.q2, &self.nets.value_target, batch, h.gamma)?;
        check_finite("q2", l2, &g2)?;
        self.opt_q2.step(&mut self.nets.q2.params, &g2)?;

        let eps_p: Vec<Noise> = (0..batch.len()).map(|_| draw_noise(rng)).collect();
        let (lp, gp) = loss_policy(&self.nets, &batch.s, &eps_p, h.alpha)?;
        check_finite("policy", lp, &gp)?;
        self.opt_policy.step(&mut self.nets.policy.params, &gp)?;

        if polyak {
            polyak_update(&mut self.nets.value_target.params, &self.nets.value.params, h.chi)?;
        }
        Ok(UpdateLosses {
            value: lv,
            q1: l1,
            q2: l2,
            policy: lp,
        })
    }
}

fn check_finite(name: &str, loss: f64, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("{name} loss = {loss}")));
    }
    Ok(())
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub draws: usize,
    /// Worst relative error per loss: value, Q, policy.
    pub max_rel_err: [f64; 3],
}

impl GradcheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err.iter().all(|e| *e <= tol)
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps components that are
/// numerically zero from dominating.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_FLOOR: f64 = 1e-3;

fn central_difference<F: FnMut(&[f64]) -> Result<f64>>(params: &[f64], mut f: F, i: usize) -> Result<f64> {
    let mut p = params.to_vec();
    p[i] = params[i] + GRADCHECK_STEP;
    let up = f(&p)?;
    p[i] = params[i] - GRADCHECK_STEP;
    let dn = f(&p)?;
    Ok((up - dn) / (2.0 * GRADCHECK_STEP))
}

fn max_err<F: FnMut(&[f64]) -> Result<f64>>(params: &[f64], analytic: &[f64], mut f: F) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let num = central_difference(params, &mut f, i)?;
        worst = worst.max(relative_error(analytic[i], num, GRADCHECK_FLOOR));
    }
    Ok(worst)
}

/// Random problem used by the gradient check: networks, batch and frozen noise.
pub fn random_problem(hidden: usize, batch: usize, rng: &mut ChaCha8Rng) -> (SacNets, Batch, Vec<Noise>) {
    let mut nets = SacNets::new(hidden, rng);
    // decorrelate the target network from the online one
    nets.value_target = Mlp::new(nets.value.sizes(), rng);
    let mut b = Batch::default();
    for _ in 0..batch {
        let mut s = [0.0; STATE_DIM];
        for x in s.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let mut a = [0.0; ACTION_DIM];
        for x in a.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let mut sn = [0.0; STATE_DIM];
        for x in sn.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        b.s.push(s);
        b.a.push(a);
        b.r.push(rng.gen_range(-2.0..3.0));
        b.s_next.push(sn);
        b.done.push(rng.gen_bool(0.2));
    }
    let eps = (0..batch).map(|_| draw_noise(rng)).collect();
    (nets, b, eps)
}

/// Compares every analytic gradient component of the three losses with central
/// differences over `draws` random problems.
pub fn gradcheck(draws: usize, hidden: usize, batch: usize, alpha: f64, gamma: f64, rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let mut worst = [0.0f64; 3];
    for _ in 0..draws {
        let (nets, b, eps) = random_problem(hidden, batch, rng);

        let (_, g) = loss_value(&nets, &b.s, &eps, alpha)?;
        let e = max_err(&nets.value.params, &g, |p| {
            let mut n = nets.clone();
            n.value.params.copy_from_slice(p);
            Ok(loss_value(&n, &b.s, &eps, alpha)?.0)
        })?;
        worst[0] = worst[0].max(e);

        let (_, g) = loss_q(&nets.q1, &nets.value_target, &b, gamma)?;
        let e = max_err(&nets.q1.params, &g, |p| {
            let mut q = nets.q1.clone();
            q.params.copy_from_slice(p);
            Ok(loss_q(&q, &nets.value_target, &b, gamma)?.0)
        })?;
        worst[1] = worst[1].max(e);

        let (_, g) = loss_policy(&nets, &b.s, &eps, alpha)?;
        let e = max_err(&nets.policy.params, &g, |p| {
            let mut n = nets.clone();
            n.policy.params.copy_from_slice(p);
            Ok(loss_policy(&n, &b.s, &eps, alpha)?.0)
        })?;
        worst[2] = worst[2].max(e);
    }
    Ok(GradcheckReport {
        draws,
        max_rel_err: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// 1-unit chain `out = c·relu(b·relu(a·x_0))` with other inputs ignored.
    fn scalar_net(inputs: usize, outputs: usize, a: f64, b: f64, c: f64, bias_out: &[f64]) -> Mlp {
        let mut p = vec![0.0; inputs];
        p[0] = a;
        p.push(0.0);
        p.extend_from_slice(&[b, 0.0]);
        for _ in 0..outputs {
            p.push(c);
        }
        p.extend_from_slice(bias_out);
        Mlp::from_params(&[inputs, 1, 1, outputs], p).unwrap()
    }

    #[test]
    fn zero_noise_gives_mean() {
        let head = PolicyHead {
            mean: [0.3, -0.2, 0.0, 1.0, -1.0, 0.5],
            log_std: [0.0; ACTION_DIM],
        };
        let (w, _) = squash(&head, &[0.0; ACTION_DIM]);
        for i in 0..ACTION_DIM {
            assert_eq!(w[i], head.mean[i].tanh());
        }
    }

    #[test]
    fn log_prob_grows_as_sigma_shrinks() {
        let mut prev = f64::NEG_INFINITY;
        for ls in [0.0, -2.0, -5.0, -10.0, -15.0] {
            let head = PolicyHead {
                mean: [0.1; ACTION_DIM],
                log_std: [ls; ACTION_DIM],
            };
            let (w, lp) = squash(&head, &[0.5; ACTION_DIM]);
            assert!(lp > prev);
            prev = lp;
            if ls <= -15.0 {
                assert!((w[0] - 0.1f64.tanh()).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn log_std_is_clamped() {
        let mut out = vec![0.0; 12];
        out[6] = 50.0;
        out[7] = -50.0;
        let h = PolicyHead::from_output(&out);
        assert_eq!(h.log_std[0], LOG_STD_MAX);
        assert_eq!(h.log_std[1], LOG_STD_MIN);
    }

    #[test]
    fn stable_log_jacobian() {
        for u in [-30.0, -3.0, -0.5, 0.0, 0.7, 4.0, 25.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            let stable = log_one_minus_tanh_sq(u);
            if direct.is_finite() && u.abs() < 10.0 {
                assert!((direct - stable).abs() < 1e-10);
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn seeded_sampling_repeats() {
        let nets = SacNets::new(16, &mut rng(1));
        let s = [0.1; STATE_DIM];
        let ranges = GainRanges::default();
        let a = sample_action(&nets.policy, &s, &ranges, &mut rng(9)).unwrap();
        let b = sample_action(&nets.policy, &s, &ranges, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.0.validate(&ranges).is_ok());
    }

    /// One action dimension of the squashed density integrates to one over (-1, 1).
    #[test]
    fn squashed_density_integrates_to_one() {
        for (mu, ls) in [(0.0, 0.0), (0.8, -0.5), (-1.5, 0.3), (0.2, -2.0)] {
            let sigma: f64 = f64::exp(ls);
            // density of w at a point: N(atanh w; μ, σ) / (1 − w²)
            let dens = |w: f64| {
                let u = w.atanh();
                let eps = (u - mu) / sigma;
                let mut head = PolicyHead {
                    mean: [0.0; ACTION_DIM],
                    log_std: [0.0; ACTION_DIM],
                };
                head.mean[0] = mu;
                head.log_std[0] = ls;
                let mut e = [0.0; ACTION_DIM];
                e[0] = eps;
                let (_, lp) = squash(&head, &e);
                // remove the contribution of the five unit-Gaussian dimensions at u = 0
                (lp + 5.0 * HALF_LN_2PI).exp()
            };
            // integrate in u-space substitution w = tanh u for resolution near ±1
            let n = 200_000;
            let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
            let du = (hi - lo) / n as f64;
            let total: f64 = (0..n)
                .map(|k| {
                    let u = lo + (k as f64 + 0.5) * du;
                    let w = u.tanh();
                    if w.abs() >= 1.0 {
                        return 0.0;
                    }
                    dens(w) * (1.0 - w * w) * du
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-3, "mu {mu} ls {ls}: {total}");
        }
    }

    #[test]
    fn value_loss_zero_at_target() {
        // policy outputs mean 0, log-std 0; Q ≡ q; V ≡ q − α·logp(ε=0)
        let policy = Mlp::from_params(&[STATE_DIM, 1, 1, 12], vec![0.0; STATE_DIM + 1 + 2 + 12 + 12]).unwrap();
        let q = 0.75;
        let qnet = scalar_net(STATE_DIM + ACTION_DIM, 1, 0.0, 0.0, 0.0, &[q]);
        let eps = [0.0; ACTION_DIM];
        let (_, logp) = squash(&PolicyHead::from_output(&[0.0; 12]), &eps);
        let alpha = 1.0;
        let vnet = scalar_net(STATE_DIM, 1, 0.0, 0.0, 0.0, &[q - alpha * logp]);
        let nets = SacNets {
            value: vnet.clone(),
            value_target: vnet,
            q1: qnet.clone(),
            q2: qnet,
            policy,
        };
        let (l, g) = loss_value(&nets, &[[0.2; STATE_DIM]], &[eps], alpha).unwrap();
        assert!(l.abs() < 1e-24);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn value_loss_hand_case() {
        let policy = Mlp::from_params(&[STATE_DIM, 1, 1, 12], vec![0.0; STATE_DIM + 1 + 2 + 12 + 12]).unwrap();
        let q1 = scalar_net(STATE_DIM + ACTION_DIM, 1, 0.0, 0.0, 0.0, &[1.0]);
        let q2 = scalar_net(STATE_DIM + ACTION_DIM, 1, 0.0, 0.0, 0.0, &[0.4]);
        // V(s) = 2 · relu(3 · relu(0.5 · s_0)) + 0.1 = 3 · s_0 + 0.1 for s_0 > 0
        let v = scalar_net(STATE_DIM, 1, 0.5, 3.0, 2.0, &[0.1]);
        let nets = SacNets {
            value_target: v.clone(),
            value: v,
            q1,
            q2,
            policy,
        };
        let mut s = [0.0; STATE_DIM];
        s[0] = 0.4;
        let eps = [0.0; ACTION_DIM];
        // ε = 0, μ = 0, σ = 1: logp = 6 (−½ ln 2π) − 6 ln(1 − 0) = −6·0.9189385
        let logp = -6.0 * HALF_LN_2PI;
        let target = 0.4 - logp;
        let resid = 3.0 * 0.4 + 0.1 - target;
        let (l, g) = loss_value(&nets, &[s], &[eps], 1.0).unwrap();
        assert!((l - 0.5 * resid * resid).abs() < 1e-12);
        // ∂/∂(output bias) = residual
        assert!((g[g.len() - 1] - resid).abs() < 1e-12);
    }

    #[test]
    fn q_loss_cases() {
        let q = scalar_net(STATE_DIM + ACTION_DIM, 1, 0.0, 0.0, 0.0, &[1.5]);
        let vt = scalar_net(STATE_DIM, 1, 0.0, 0.0, 0.0, &[2.0]);
        let mut b = Batch::default();
        b.s.push([0.0; STATE_DIM]);
        b.a.push([0.0; ACTION_DIM]);
        b.r.push(1.5);
        b.s_next.push([0.0; STATE_DIM]);
        b.done.push(true);
        // terminal: target = r only
        let (l, _) = loss_q(&q, &vt, &b, 0.99).unwrap();
        assert!(l.abs() < 1e-24);
        b.done[0] = false;
        b.r[0] = 1.5 - 0.99 * 2.0;
        let (l, g) = loss_q(&q, &vt, &b, 0.99).unwrap();
        assert!(l.abs() < 1e-24);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
        b.r[0] = 0.0;
        let (l, _) = loss_q(&q, &vt, &b, 0.99).unwrap();
        assert!((l - 0.5 * (1.5f64 - 1.98).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn policy_loss_zero_case() {
        let nets = SacNets {
            q1: scalar_net(STATE_DIM + ACTION_DIM, 1, 0.0, 0.0, 0.0, &[0.0]),
            q2: scalar_net(STATE_DIM + ACTION_DIM, 1, 0.0, 0.0, 0.0, &[0.0]),
            ..SacNets::new(8, &mut rng(3))
        };
        let eps = vec![draw_noise(&mut rng(4)); 3];
        let (l, g) = loss_policy(&nets, &[[0.3; STATE_DIM]; 3], &eps, 0.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn policy_loss_hand_case() {
        // Q(s, w) = 2·relu(1·relu(1·w_0)) − 0.5 is linear in w_0 for w_0 > 0
        let mut qp = vec![0.0; STATE_DIM + ACTION_DIM];
        qp[STATE_DIM] = 1.0;
        qp.extend_from_slice(&[0.0, 1.0, 0.0, 2.0, -0.5]);
        let q = Mlp::from_params(&[STATE_DIM + ACTION_DIM, 1, 1, 1], qp).unwrap();
        // policy outputs constant biases: μ = 0.3 everywhere, log σ = −1
        let mut pp = vec![0.0; STATE_DIM + 1 + 2 + 12];
        pp.extend_from_slice(&[0.3; 6]);
        pp.extend_from_slice(&[-1.0; 6]);
        let policy = Mlp::from_params(&[STATE_DIM, 1, 1, 12], pp).unwrap();
        let nets = SacNets {
            value: scalar_net(STATE_DIM, 1, 0.0, 0.0, 0.0, &[0.0]),
            value_target: scalar_net(STATE_DIM, 1, 0.0, 0.0, 0.0, &[0.0]),
            q1: q.clone(),
            q2: q,
            policy,
        };
        let eps = [0.5, -0.2, 0.0, 0.1, 1.0, -1.0];
        let sigma = (-1.0f64).exp();
        let mut logp = 0.0;
        let mut w0 = 0.0;
        for (i, e) in eps.iter().enumerate() {
            let u: f64 = 0.3 + e * sigma;
            if i == 0 {
                w0 = u.tanh();
            }
            logp += -0.5 * e * e + 1.0 - HALF_LN_2PI - (1.0 - u.tanh().powi(2)).ln();
        }
        let qv = 2.0 * w0 - 0.5;
        let alpha = 0.7;
        let (l, _) = loss_policy(&nets, &[[0.0; STATE_DIM]], &[eps], alpha).unwrap();
        assert!((l - (alpha * logp - qv)).abs() < 1e-12);
    }

    #[test]
    fn twin_swap_symmetry() {
        let mut r = rng(21);
        let (nets, b, eps) = random_problem(12, 6, &mut r);
        let mut swapped = nets.clone();
        std::mem::swap(&mut swapped.q1, &mut swapped.q2);
        let a = loss_value(&nets, &b.s, &eps, 1.0).unwrap();
        let c = loss_value(&swapped, &b.s, &eps, 1.0).unwrap();
        assert_eq!(a, c);
        let a = loss_policy(&nets, &b.s, &eps, 1.0).unwrap();
        let c = loss_policy(&swapped, &b.s, &eps, 1.0).unwrap();
        assert_eq!(a.0, c.0);
        for (x, y) in a.1.iter().zip(&c.1) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let nets = SacNets::new(4, &mut rng(0));
        assert!(loss_value(&nets, &[], &[], 1.0).is_err());
        assert!(loss_q(&nets.q1, &nets.value_target, &Batch::default(), 0.99).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let report = gradcheck(3, 10, 4, 1.0, 0.99, &mut rng(5)).unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn update_is_deterministic_and_moves_params() {
        let run = || {
            let mut r = rng(8);
            let (nets, b, _) = random_problem(8, 5, &mut r);
            let mut l = SacLearner::new(nets, SacHyper::default());
            let before = l.nets.clone();
            l.update(&b, &mut r, true).unwrap();
            (before, l)
        };
        let (b0, l0) = run();
        let (_, l1) = run();
        assert_eq!(l0, l1);
        assert_ne!(b0.value, l0.nets.value);
        assert_ne!(b0.policy, l0.nets.policy);
        assert_ne!(b0.value_target, l0.nets.value_target);
    }
}
