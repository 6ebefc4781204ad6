//! Exact soft policy evaluation, improvement and iteration on small finite MDPs,
//! with the shaped reward lifted into an augmented state space so that it is
//! Markov. Used to audit the shaping scheme independently of function
//! approximation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sparse transition row: `(next_state, probability)`.
pub type Row = Vec<(usize, f64)>;

/// Finite MDP with rewards on `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[s][a]` lists successors with their probabilities.
    pub p: Vec<Vec<Row>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
    pub alpha: f64,
}

impl FiniteMdp {
    pub fn validate(&self) -> Result<()> {
        if self.p.len() != self.n_states || self.r.len() != self.n_states {
            return Err(Error::Shape("transition/reward tables do not match n_states".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) || !(self.alpha > 0.0) {
            return Err(Error::Validation(format!(
                "need gamma in [0, 1) and alpha > 0, got {} and {}",
                self.gamma, self.alpha
            )));
        }
        for s in 0..self.n_states {
            if self.p[s].len() != self.n_actions || self.r[s].len() != self.n_actions {
                return Err(Error::Shape(format!("state {s} has wrong action count")));
            }
            for a in 0..self.n_actions {
                let total: f64 = self.p[s][a].iter().map(|(_, q)| q).sum();
                if (total - 1.0).abs() > 1e-12 || self.p[s][a].iter().any(|&(t, q)| t >= self.n_states || q < 0.0) {
                    return Err(Error::Validation(format!("P[{s}][{a}] is not a distribution")));
                }
                if !self.r[s][a].is_finite() {
                    return Err(Error::Validation(format!("R[{s}][{a}] is not finite")));
                }
            }
        }
        Ok(())
    }

    /// Random MDP: every `(s, a)` reaches every state with normalized uniform
    /// weights; rewards uniform in `[0.05, 1]`.
    pub fn random(n: usize, m: usize, gamma: f64, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        for _ in 0..n {
            let mut ps = Vec::with_capacity(m);
            let mut rs = Vec::with_capacity(m);
            for _ in 0..m {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
                let total: f64 = w.iter().sum();
                let mut row: Row = w.iter().enumerate().map(|(t, x)| (t, x / total)).collect();
                // push the rounding residue onto the last entry so rows sum to 1
                let resid = 1.0 - row.iter().map(|(_, q)| q).sum::<f64>();
                row.last_mut().unwrap().1 += resid;
                ps.push(row);
                rs.push(rng.gen_range(0.05..=1.0));
            }
            p.push(ps);
            r.push(rs);
        }
        FiniteMdp {
            n_states: n,
            n_actions: m,
            p,
            r,
            gamma,
            alpha,
        }
    }
}

/// Table indexed `[state][action]`.
pub type Table = Vec<Vec<f64>>;

/// Base MDP lifted onto states `(s, prev)` with `prev ∈ {⊥} ∪ S×A`, carrying the
/// shaped reward `R(s,a) + λ (R(s,a) − R(prev)/γ)` (no λ-term when `prev = ⊥`).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMdp {
    pub base_states: usize,
    pub lambda: f64,
    pub mdp: FiniteMdp,
}

impl AugmentedMdp {
    /// Number of `prev` slots per base state.
    pub fn slots(&self) -> usize {
        self.base_states * self.mdp.n_actions + 1
    }

    /// Index of `(s, ⊥)`.
    pub fn initial(&self, s: usize) -> usize {
        s * self.slots()
    }

    /// Index of `(s, (ps, pa))`.
    pub fn with_prev(&self, s: usize, ps: usize, pa: usize) -> usize {
        s * self.slots() + 1 + ps * self.mdp.n_actions + pa
    }

    /// Base state of an augmented index.
    pub fn project(&self, idx: usize) -> usize {
        idx / self.slots()
    }
}

pub fn augment(mdp: &FiniteMdp, lambda: f64) -> Result<AugmentedMdp> {
    mdp.validate()?;
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let slots = n * m + 1;
    let mut p = Vec::with_capacity(n * slots);
    let mut r = Vec::with_capacity(n * slots);
    for s in 0..n {
        for prev in 0..slots {
            let mut ps = Vec::with_capacity(m);
            let mut rs = Vec::with_capacity(m);
            for a in 0..m {
                let row: Row = mdp.p[s][a].iter().map(|&(t, q)| (t * slots + 1 + s * m + a, q)).collect();
                ps.push(row);
                let base = mdp.r[s][a];
                rs.push(if prev == 0 {
                    base
                } else {
                    let (qs, qa) = ((prev - 1) / m, (prev - 1) % m);
                    base + lambda * (base - mdp.r[qs][qa] / mdp.gamma)
                });
            }
            p.push(ps);
            r.push(rs);
        }
    }
    Ok(AugmentedMdp {
        base_states: n,
        lambda,
        mdp: FiniteMdp {
            n_states: n * slots,
            n_actions: m,
            p,
            r,
            gamma: mdp.gamma,
            alpha: mdp.alpha,
        },
    })
}

/// `V(s) = Σ_a π(a|s) (Q(s,a) − α log π(a|s))`, with `0 log 0 = 0`.
pub fn soft_value(q: &[f64], pi: &[f64], alpha: f64) -> f64 {
    q.iter()
        .zip(pi)
        .map(|(qa, pa)| if *pa > 0.0 { pa * (qa - alpha * pa.ln()) } else { 0.0 })
        .sum()
}

/// One application of the soft Bellman operator for policy `pi`.
pub fn soft_backup(q: &Table, pi: &Table, mdp: &FiniteMdp) -> Table {
    let v: Vec<f64> = (0..mdp.n_states).map(|s| soft_value(&q[s], &pi[s], mdp.alpha)).collect();
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| mdp.r[s][a] + mdp.gamma * mdp.p[s][a].iter().map(|&(t, p)| p * v[t]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn sup_dist(a: &Table, b: &Table) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

pub fn zeros(mdp: &FiniteMdp) -> Table {
    vec![vec![0.0; mdp.n_actions]; mdp.n_states]
}

pub const EVAL_CAP: usize = 100_000;
pub const ITERATION_CAP: usize = 500;
pub const EVAL_TOL: f64 = 1e-12;
pub const ITERATION_TOL: f64 = 1e-10;

/// Result of iterating the soft backup to a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub q: Table,
    pub iterations: usize,
    /// Sup-norm change of every iteration.
    pub deltas: Vec<f64>,
}

/// Iterates the soft backup from `q0` until the sup-norm change drops below `tol`.
pub fn soft_eval_from(q0: Table, pi: &Table, mdp: &FiniteMdp, tol: f64) -> Result<EvalTrace> {
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be > 0, got {tol}")));
    }
    let mut q = q0;
    let mut deltas = Vec::new();
    for it in 1..=EVAL_CAP {
        let next = soft_backup(&q, pi, mdp);
        let d = sup_dist(&next, &q);
        q = next;
        deltas.push(d);
        if !d.is_finite() {
            return Err(Error::NonFinite("soft evaluation diverged".into()));
        }
        if d < tol {
            return Ok(EvalTrace {
                q,
                iterations: it,
                deltas,
            });
        }
    }
    Err(Error::NonConvergence {
        cap: EVAL_CAP,
        delta: *deltas.last().unwrap_or(&f64::NAN),
    })
}

pub fn soft_eval(pi: &Table, mdp: &FiniteMdp, tol: f64) -> Result<Table> {
    Ok(soft_eval_from(zeros(mdp), pi, mdp, tol)?.q)
}

/// Boltzmann policy `π(a|s) ∝ exp(Q(s,a)/α)`.
pub fn soft_improve(q: &Table, alpha: f64) -> Table {
    q.iter()
        .map(|row| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| ((x - mx) / alpha).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect()
}

pub fn uniform_policy(mdp: &FiniteMdp) -> Table {
    vec![vec![1.0 / mdp.n_actions as f64; mdp.n_actions]; mdp.n_states]
}

/// Outcome of soft policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub pi: Table,
    /// `Q^{π_i}` for every evaluated policy, starting from the uniform one.
    pub qs: Vec<Table>,
    /// Sup-norm policy change per round.
    pub policy_changes: Vec<f64>,
    pub rounds: usize,
}

impl IterationTrace {
    pub fn q_star(&self) -> &Table {
        self.qs.last().expect("trace holds at least one evaluation")
    }

    /// Smallest `Q^{π_{i+1}} − Q^{π_i}` over all entries and rounds.
    pub fn min_improvement(&self) -> f64 {
        self.qs
            .windows(2)
            .flat_map(|w| {
                w[1].iter()
                    .zip(&w[0])
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y))
                    .collect::<Vec<_>>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Alternates soft evaluation and soft improvement from the uniform policy until
/// the policy changes by less than `tol` (sup norm).
pub fn soft_policy_iteration(mdp: &FiniteMdp, tol: f64) -> Result<IterationTrace> {
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be > 0, got {tol}")));
    }
    let mut pi = uniform_policy(mdp);
    let mut q = soft_eval(&pi, mdp, EVAL_TOL)?;
    let mut qs = vec![q.clone()];
    let mut changes = Vec::new();
    for round in 1..=ITERATION_CAP {
        let next = soft_improve(&q, mdp.alpha);
        let change = sup_dist(&next, &pi);
        changes.push(change);
        pi = next;
        if change < tol {
            return Ok(IterationTrace {
                pi,
                qs,
                policy_changes: changes,
                rounds: round,
            });
        }
        // warm start: the previous Q is a valid starting point for the contraction
        q = soft_eval_from(q, &pi, mdp, EVAL_TOL)?.q;
        qs.push(q.clone());
    }
    Err(Error::NonConvergence {
        cap: ITERATION_CAP,
        delta: *changes.last().unwrap_or(&f64::NAN),
    })
}

/// Random stochastic policy with full support.
pub fn random_policy(mdp: &FiniteMdp, rng: &mut ChaCha8Rng) -> Table {
    (0..mdp.n_states)
        .map(|_| {
            let w: Vec<f64> = (0..mdp.n_actions).map(|_| rng.gen_range(0.01..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Classic potential-based shaping `r + γΦ(s′,a′) − Φ(s,a)` tabulated over
/// `(s, a, s′, a′)`, indexed `[s][a][s′][a′]`.
pub fn potential_shaping_reference(mdp: &FiniteMdp, phi: &Table) -> Vec<Vec<Table>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    (0..mdp.n_states)
                        .map(|s2| {
                            (0..mdp.n_actions)
                                .map(|a2| mdp.r[s][a] + mdp.gamma * phi[s2][a2] - phi[s][a])
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Discounted return of a reward sequence.
pub fn discounted(rs: &[f64], gamma: f64) -> f64 {
    rs.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Side-by-side comparison on one sampled trajectory: discounted returns of the
/// raw reward, the Lyapunov-shaped reward and potential shaping with `Φ = −λR`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapingComparison {
    pub raw: f64,
    pub lyapunov: f64,
    pub potential: f64,
}

pub fn compare_shaping(mdp: &FiniteMdp, lambda: f64, len: usize, rng: &mut ChaCha8Rng) -> ShapingComparison {
    let mut s = 0;
    let mut traj = Vec::with_capacity(len);
    for _ in 0..len {
        let a = rng.gen_range(0..mdp.n_actions);
        traj.push((s, a));
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let row = &mdp.p[s][a];
        s = row.last().unwrap().0;
        for &(t, q) in row {
            acc += q;
            if u < acc {
                s = t;
                break;
            }
        }
    }
    let raw: Vec<f64> = traj.iter().map(|&(s, a)| mdp.r[s][a]).collect();
    let lyap: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(t, r)| if t == 0 { *r } else { r + lambda * (r - raw[t - 1] / mdp.gamma) })
        .collect();
    let pot: Vec<f64> = (0..len)
        .map(|t| {
            let phi = |i: usize| -lambda * raw[i];
            let next = if t + 1 < len { phi(t + 1) } else { 0.0 };
            raw[t] + mdp.gamma * next - phi(t)
        })
        .collect();
    ShapingComparison {
        raw: discounted(&raw, mdp.gamma),
        lyapunov: discounted(&lyap, mdp.gamma),
        potential: discounted(&pot, mdp.gamma),
    }
}

/// Per-MDP results of the audit suite.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpAudit {
    pub index: usize,
    /// Largest ratio of successive backup deltas above rounding level (should be ≤ γ).
    pub max_contraction: f64,
    /// Every delta satisfies `δ_{k+1} ≤ γ δ_k + ROUNDING_SLACK`.
    pub contraction_holds: bool,
    /// Sup distance between fixed points reached from zeros and a random start.
    pub fixed_point_gap: f64,
    /// `(λ, rounds, min improvement)` per λ.
    pub iterations: Vec<(f64, usize, f64)>,
    /// Sup distance between augmented λ=0 and base soft Q.
    pub lambda0_gap: f64,
    /// Smallest `Q* − Q^π` over the random reference policies.
    pub dominance_margin: f64,
    /// Whether λ>0 greedy policies agree with the λ=0 one at `(s, ⊥)`.
    pub greedy_agree: Vec<(f64, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditSuite {
    pub audits: Vec<MdpAudit>,
    pub gamma: f64,
}

pub const AUDIT_LAMBDAS: [f64; 4] = [0.0, 0.35, 1.0, 1.5];

/// Absolute slack on successive deltas, covering rounding in Q values of order
/// `1/(1 − γ)`.
pub const ROUNDING_SLACK: f64 = 1e-12;

impl AuditSuite {
    pub fn contraction_ok(&self) -> bool {
        self.audits.iter().all(|a| a.contraction_holds)
    }

    pub fn fixed_point_ok(&self) -> bool {
        self.audits.iter().all(|a| a.fixed_point_gap <= 1e-9)
    }

    pub fn improvement_ok(&self) -> bool {
        self.audits
            .iter()
            .all(|a| a.iterations.iter().all(|&(_, rounds, imp)| rounds <= ITERATION_CAP && imp >= -1e-9))
    }

    pub fn lambda0_ok(&self) -> bool {
        self.audits.iter().all(|a| a.lambda0_gap <= 1e-9)
    }

    pub fn dominance_ok(&self) -> bool {
        self.audits.iter().all(|a| a.dominance_margin >= -1e-9)
    }

    pub fn passed(&self) -> bool {
        self.contraction_ok() && self.fixed_point_ok() && self.improvement_ok() && self.lambda0_ok() && self.dominance_ok()
    }
}

/// Largest ratio of successive deltas, skipping those where rounding dominates.
fn max_ratio(deltas: &[f64]) -> f64 {
    deltas
        .windows(2)
        .filter(|w| w[0] > 1e-6)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

fn contracts(deltas: &[f64], gamma: f64) -> bool {
    deltas.windows(2).all(|w| w[1] <= gamma * w[0] + ROUNDING_SLACK)
}

/// Runs every audit on `count` random `n`-state, `m`-action MDPs.
pub fn audit_suite(count: usize, n: usize, m: usize, gamma: f64, alpha: f64, rng: &mut ChaCha8Rng) -> Result<AuditSuite> {
    let mut audits = Vec::with_capacity(count);
    for index in 0..count {
        let base = FiniteMdp::random(n, m, gamma, alpha, rng);
        let aug1 = augment(&base, 1.0)?;
        let pi = random_policy(&aug1.mdp, rng);
        let from_zero = soft_eval_from(zeros(&aug1.mdp), &pi, &aug1.mdp, EVAL_TOL)?;
        let start: Table = (0..aug1.mdp.n_states)
            .map(|_| (0..m).map(|_| rng.gen_range(-50.0..50.0)).collect())
            .collect();
        let from_rand = soft_eval_from(start, &pi, &aug1.mdp, EVAL_TOL)?;
        let max_contraction = max_ratio(&from_zero.deltas).max(max_ratio(&from_rand.deltas));
        let contraction_holds = contracts(&from_zero.deltas, gamma) && contracts(&from_rand.deltas, gamma);
        let fixed_point_gap = sup_dist(&from_zero.q, &from_rand.q);

        let mut iterations = Vec::new();
        let mut greedy = Vec::new();
        let mut lambda0_gap = 0.0;
        let mut dominance_margin = f64::INFINITY;
        let mut greedy0: Vec<usize> = Vec::new();
        for &lambda in &AUDIT_LAMBDAS {
            let aug = augment(&base, lambda)?;
            let trace = soft_policy_iteration(&aug.mdp, ITERATION_TOL)?;
            iterations.push((lambda, trace.rounds, trace.min_improvement()));
            let argmax: Vec<usize> = (0..n)
                .map(|s| {
                    let row = &trace.q_star()[aug.initial(s)];
                    (0..m).fold(0, |best, a| if row[a] > row[best] { a } else { best })
                })
                .collect();
            if lambda == 0.0 {
                let direct = soft_policy_iteration(&base, ITERATION_TOL)?;
                for (idx, row) in trace.q_star().iter().enumerate() {
                    let s = aug.project(idx);
                    lambda0_gap = f64::max(lambda0_gap, row.iter().zip(&direct.q_star()[s]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
                }
                greedy0 = argmax;
            } else {
                greedy.push((lambda, argmax == greedy0));
            }
            if lambda == 1.0 {
                for _ in 0..20 {
                    let other = random_policy(&aug.mdp, rng);
                    let q = soft_eval(&other, &aug.mdp, EVAL_TOL)?;
                    for (a, b) in trace.q_star().iter().zip(&q) {
                        for (x, y) in a.iter().zip(b) {
                            dominance_margin = dominance_margin.min(x - y);
                        }
                    }
                }
            }
        }
        audits.push(MdpAudit {
            index,
            max_contraction,
            contraction_holds,
            fixed_point_gap,
            iterations,
            lambda0_gap,
            dominance_margin,
            greedy_agree: greedy,
        });
    }
    Ok(AuditSuite { audits, gamma })
}
