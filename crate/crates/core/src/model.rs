//! Domain types and the controlled mean-field dynamics.
//!
//! Agents are grouped into degree classes. For class `k` the state is the
//! triple `(i_k, r_k, theta_k)` of potential buyers, customers and
//! competitor's customers. With the neighbour averages
//!
//! ```text
//! R_k     = sum_k' P(k'|k) r_k'
//! Theta_k = sum_k' P(k'|k) theta_k'
//! ```
//!
//! the controlled drift is
//!
//! ```text
//! di_k     = -(beta + u_k eps1) i_k R_k - (alpha + v_k eps2) i_k - gamma i_k Theta_k - delta i_k
//! dr_k     =  (beta + u_k eps1) i_k R_k + (alpha + v_k eps2) i_k
//! dtheta_k =  gamma i_k Theta_k + delta i_k
//! ```
//!
//! and the seller pays
//!
//! ```text
//! sum_k P(k) [ u_k c (beta + eps1) i_k R_k + v_k c' (alpha + eps2) i_k ]
//! ```
//!
//! per unit time. Under [`ReferralGating::Referrer`] the referral boost of
//! class `k'` applies to the influence its customers exert, so the referral
//! term becomes `i_k sum_k' P(k'|k) (beta + u_k' eps1) r_k'`. With a single
//! class the two gatings coincide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-12;
const DETAILED_BALANCE_TOL: f64 = 1e-9;
/// Per-class simplex tolerance for a [`StateVector`].
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Which class's control switches on the referral boost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferralGating {
    /// `u_k` boosts social purchases made by class-`k` potential buyers.
    #[default]
    Buyer,
    /// `u_k` boosts the influence exerted by class-`k` customers; the reward
    /// is paid when a class-`k` customer converts a neighbour.
    Referrer,
}

/// Rate and cost constants of the controlled system.
/// Omitted fields take their base-scenario values when deserialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// External purchase rate for the seller's product.
    pub alpha: f64,
    /// Social-influence purchase rate for the seller's product.
    pub beta: f64,
    /// Social-influence purchase rate for the competitor.
    pub gamma: f64,
    /// External purchase rate for the competitor.
    pub delta: f64,
    /// Boost to `beta` while referral rewards are offered.
    pub eps1: f64,
    /// Boost to `alpha` while direct incentives are offered.
    pub eps2: f64,
    /// Pay-out per referral conversion, relative to a unit price.
    pub cost_referral: f64,
    /// Pay-out per incentivised direct purchase, relative to a unit price.
    pub cost_direct: f64,
    /// Campaign length.
    pub horizon: f64,
    #[serde(default)]
    pub gating: ReferralGating,
}

impl ModelParams {
    /// The base scenario: `alpha=0.08, beta=0.1, gamma=delta=0.1,
    /// eps1=eps2=0.05, c=0.25, c'=0.3, T=10`.
    pub fn base() -> Self {
        Self {
            alpha: 0.08,
            beta: 0.1,
            gamma: 0.1,
            delta: 0.1,
            eps1: 0.05,
            eps2: 0.05,
            cost_referral: 0.25,
            cost_direct: 0.3,
            horizon: 10.0,
            gating: ReferralGating::Buyer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("cost_referral", self.cost_referral),
            ("cost_direct", self.cost_direct),
            ("horizon", self.horizon),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and non-negative, got {value}"
                )));
            }
        }
        let bounded = [
            ("alpha + eps2", self.alpha + self.eps2),
            ("beta + eps1", self.beta + self.eps1),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ];
        for (name, value) in bounded {
            if value > 1.0 {
                return Err(Error::InvalidParams(format!("{name} = {value} exceeds 1")));
            }
        }
        if self.horizon <= 0.0 {
            return Err(Error::InvalidParams("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Referral rewards change nothing when `eps1 == 0`.
    pub fn referral_enabled(&self) -> bool {
        self.eps1 > 0.0
    }

    /// Direct incentives change nothing when `eps2 == 0`.
    pub fn direct_enabled(&self) -> bool {
        self.eps2 > 0.0
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::base()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeClass {
    pub degree: u32,
    /// Fraction `P(k)` of agents in this class.
    pub weight: f64,
}

/// Degree classes together with the conditional link distribution.
///
/// `mixing[k][j]` is `P(class j | class k)`: the probability that a link
/// leaving a class-`k` node ends at a class-`j` node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNetwork {
    classes: Vec<DegreeClass>,
    mixing: Vec<Vec<f64>>,
}

impl ClassNetwork {
    pub fn new(classes: Vec<DegreeClass>, mixing: Vec<Vec<f64>>) -> Result<Self> {
        let net = Self { classes, mixing };
        net.validate()?;
        Ok(net)
    }

    /// A single class of degree `degree`: the regular-network setting.
    pub fn regular(degree: u32) -> Self {
        Self {
            classes: vec![DegreeClass { degree, weight: 1.0 }],
            mixing: vec![vec![1.0]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k == 0 {
            return Err(Error::InvalidNetwork("no classes".into()));
        }
        if self.mixing.len() != k {
            return Err(Error::DimensionMismatch {
                what: "mixing rows",
                expected: k,
                found: self.mixing.len(),
            });
        }
        let mut total = 0.0;
        for (idx, class) in self.classes.iter().enumerate() {
            if class.degree == 0 {
                return Err(Error::InvalidNetwork(format!("class {idx} has degree 0")));
            }
            if !(0.0..=1.0).contains(&class.weight) {
                return Err(Error::InvalidNetwork(format!(
                    "class {idx} weight {} outside [0, 1]",
                    class.weight
                )));
            }
            total += class.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidNetwork(format!(
                "class weights sum to {total}, not 1"
            )));
        }
        for (row_idx, row) in self.mixing.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "mixing columns",
                    expected: k,
                    found: row.len(),
                });
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidNetwork(format!(
                    "mixing row {row_idx} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidNetwork(format!(
                    "mixing row {row_idx} sums to {sum}, not 1"
                )));
            }
        }
        for a in 0..k {
            for b in (a + 1)..k {
                let lhs = self.link_mass(a, b);
                let rhs = self.link_mass(b, a);
                if (lhs - rhs).abs() > DETAILED_BALANCE_TOL {
                    return Err(Error::InvalidNetwork(format!(
                        "detailed balance fails between classes {a} and {b}: {lhs} vs {rhs}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `k_a P(b|a) P(a)`: the link mass flowing from class `a` to class `b`.
    fn link_mass(&self, a: usize, b: usize) -> f64 {
        let class = self.classes[a];
        f64::from(class.degree) * self.mixing[a][b] * class.weight
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[DegreeClass] {
        &self.classes
    }

    pub fn mixing(&self) -> &[Vec<f64>] {
        &self.mixing
    }

    pub fn weights(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.weight).collect()
    }

    /// Same network with classes reordered: new class `n` is old class `perm[n]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let classes = perm.iter().map(|&p| self.classes[p]).collect();
        let mixing = perm
            .iter()
            .map(|&a| perm.iter().map(|&b| self.mixing[a][b]).collect())
            .collect();
        Self { classes, mixing }
    }
}

/// Completes a two-class network from one off-diagonal mixing entry using
/// `k_A P(B|A) P(A) = k_B P(A|B) P(B)`.
pub fn balance_complete(a: DegreeClass, b: DegreeClass, p_b_given_a: f64) -> Result<ClassNetwork> {
    if !(0.0..=1.0).contains(&p_b_given_a) {
        return Err(Error::InfeasibleMixing(format!(
            "P(B|A) = {p_b_given_a} outside [0, 1]"
        )));
    }
    let denom = f64::from(b.degree) * b.weight;
    if denom <= 0.0 {
        return Err(Error::InfeasibleMixing(
            "class B has zero link mass".into(),
        ));
    }
    let p_a_given_b = f64::from(a.degree) * p_b_given_a * a.weight / denom;
    if !(0.0..=1.0).contains(&p_a_given_b) {
        return Err(Error::InfeasibleMixing(format!(
            "balance forces P(A|B) = {p_a_given_b}, outside [0, 1]"
        )));
    }
    ClassNetwork::new(
        vec![a, b],
        vec![
            vec![1.0 - p_b_given_a, p_b_given_a],
            vec![p_a_given_b, 1.0 - p_a_given_b],
        ],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub i: f64,
    pub r: f64,
    pub theta: f64,
}

impl ClassState {
    pub fn new(i: f64, r: f64, theta: f64) -> Self {
        Self { i, r, theta }
    }

    /// Everyone is still a potential buyer.
    pub fn fresh() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }
}

/// Per-class fractions `(i_k, r_k, theta_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<ClassState>);

impl StateVector {
    pub fn new(classes: Vec<ClassState>) -> Result<Self> {
        let s = Self(classes);
        s.validate()?;
        Ok(s)
    }

    /// `(1, 0, 0)` in each of `classes` classes.
    pub fn fresh(classes: usize) -> Self {
        Self(vec![ClassState::fresh(); classes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.0.iter().enumerate() {
            for (name, v) in [("i", s.i), ("r", s.r), ("theta", s.theta)] {
                if !v.is_finite() || !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v) {
                    return Err(Error::InvalidState(format!(
                        "class {k}: {name} = {v} outside [0, 1]"
                    )));
                }
            }
            let total = s.i + s.r + s.theta;
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidState(format!(
                    "class {k}: fractions sum to {total}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|s| [s.i, s.r, s.theta]).collect()
    }

    pub(crate) fn from_flat(x: &[f64], classes: usize) -> Self {
        Self(
            (0..classes)
                .map(|k| ClassState::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]))
                .collect(),
        )
    }
}

/// Time derivative of one class's fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDrift {
    pub di: f64,
    pub dr: f64,
    pub dtheta: f64,
}

/// Per-class piecewise-constant controls on a uniform grid of step `step`.
///
/// `u[k][n]` is the referral control of class `k` on `[n step, (n+1) step)`,
/// `v[k][n]` the direct-incentive control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub step: f64,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Number of grid intervals of length `step` in `horizon`, if `step` divides it.
pub fn grid_len(horizon: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::StepMismatch(format!("step {step} must be positive")));
    }
    let n = (horizon / step).round();
    if n < 1.0 || (n * step - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::StepMismatch(format!(
            "step {step} does not divide {horizon}"
        )));
    }
    Ok(n as usize)
}

impl ControlSchedule {
    /// Every control held at `u` and `v` for the whole horizon.
    pub fn constant(classes: usize, horizon: f64, step: f64, u: f64, v: f64) -> Result<Self> {
        let n = grid_len(horizon, step)?;
        Ok(Self {
            step,
            u: vec![vec![u; n]; classes],
            v: vec![vec![v; n]; classes],
        })
    }

    pub fn off(classes: usize, horizon: f64, step: f64) -> Result<Self> {
        Self::constant(classes, horizon, step, 0.0, 0.0)
    }

    pub fn classes(&self) -> usize {
        self.u.len()
    }

    /// Number of control intervals.
    pub fn intervals(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, classes: usize, horizon: f64) -> Result<()> {
        let n = grid_len(horizon, self.step)?;
        for (what, sig) in [("u classes", &self.u), ("v classes", &self.v)] {
            if sig.len() != classes {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: classes,
                    found: sig.len(),
                });
            }
        }
        for seq in self.u.iter().chain(&self.v) {
            if seq.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "control intervals",
                    expected: n,
                    found: seq.len(),
                });
            }
            if let Some(bad) = seq.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::InvalidSchedule(format!(
                    "control value {bad} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Fails with the first entry that is neither 0 nor 1.
    pub fn ensure_binary(&self) -> Result<()> {
        for sig in [&self.u, &self.v] {
            for (class, seq) in sig.iter().enumerate() {
                for (index, &value) in seq.iter().enumerate() {
                    if value != 0.0 && value != 1.0 {
                        return Err(Error::NonBinarySchedule {
                            class,
                            index,
                            value,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Rounds every value at 0.5 (ties go to 1).
    pub fn rounded(&self) -> Self {
        let round = |sig: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            sig.iter()
                .map(|s| s.iter().map(|&x| if x >= 0.5 { 1.0 } else { 0.0 }).collect())
                .collect()
        };
        Self {
            step: self.step,
            u: round(&self.u),
            v: round(&self.v),
        }
    }

    /// Fraction of values strictly inside `(tol, 1 - tol)`.
    pub fn interior_fraction(&self, tol: f64) -> f64 {
        let all: Vec<f64> = self.u.iter().chain(&self.v).flatten().copied().collect();
        if all.is_empty() {
            return 0.0;
        }
        let interior = all.iter().filter(|&&x| x > tol && x < 1.0 - tol).count();
        interior as f64 / all.len() as f64
    }
}

/// Switching times of one class: `u` is on during `[0, tau1]` and
/// `(tau2, T]`, `v` during `[0, tau3]` and `(tau4, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSwitchTimes {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub tau4: f64,
}

impl ClassSwitchTimes {
    /// Both programs off over `(0, T]`.
    pub fn off(horizon: f64) -> Self {
        Self {
            tau1: 0.0,
            tau2: horizon,
            tau3: 0.0,
            tau4: horizon,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        let ok = |a: f64, b: f64| 0.0 <= a && a <= b && b <= horizon;
        if !ok(self.tau1, self.tau2) || !ok(self.tau3, self.tau4) {
            return Err(Error::InvalidSchedule(format!(
                "switching times {self:?} not ordered in [0, {horizon}]"
            )));
        }
        Ok(())
    }

    /// Clamps into `[0, T]` and orders each pair.
    pub fn projected(&self, horizon: f64) -> Self {
        let clamp = |x: f64| x.clamp(0.0, horizon);
        let order = |a: f64, b: f64| {
            let (a, b) = (clamp(a), clamp(b));
            if a <= b {
                (a, b)
            } else {
                let m = 0.5 * (a + b);
                (m, m)
            }
        };
        let (tau1, tau2) = order(self.tau1, self.tau2);
        let (tau3, tau4) = order(self.tau3, self.tau4);
        Self {
            tau1,
            tau2,
            tau3,
            tau4,
        }
    }

    /// Whether `u` is on at time `t`.
    pub fn referral_on(&self, t: f64) -> bool {
        t <= self.tau1 || t > self.tau2
    }

    /// Whether `v` is on at time `t`.
    pub fn direct_on(&self, t: f64) -> bool {
        t <= self.tau3 || t > self.tau4
    }
}

/// One [`ClassSwitchTimes`] per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchTimes(pub Vec<ClassSwitchTimes>);

impl SwitchTimes {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        self.0.iter().try_for_each(|c| c.validate(horizon))
    }

    /// Samples the switching structure on a control grid of `step`.
    ///
    /// Interval `n` covers `(n step, (n+1) step]`; it is on when the
    /// fraction of it lying in an on-period is at least one half, which is
    /// exact whenever the switching times lie on the grid.
    pub fn to_schedule(&self, horizon: f64, step: f64) -> Result<ControlSchedule> {
        let n = grid_len(horizon, step)?;
        let on_fraction = |first_end: f64, second_start: f64, lo: f64, hi: f64| {
            let head = (first_end.min(hi) - lo).max(0.0);
            let tail = (hi - second_start.max(lo)).max(0.0);
            (head + tail).min(hi - lo) / (hi - lo)
        };
        let mut u = Vec::with_capacity(self.0.len());
        let mut v = Vec::with_capacity(self.0.len());
        for c in &self.0 {
            let mut uk = Vec::with_capacity(n);
            let mut vk = Vec::with_capacity(n);
            for m in 0..n {
                let lo = m as f64 * step;
                let hi = lo + step;
                let fu = on_fraction(c.tau1, c.tau2, lo, hi);
                let fv = on_fraction(c.tau3, c.tau4, lo, hi);
                uk.push(if fu >= 0.5 - 1e-9 { 1.0 } else { 0.0 });
                vk.push(if fv >= 0.5 - 1e-9 { 1.0 } else { 0.0 });
            }
            u.push(uk);
            v.push(vk);
        }
        Ok(ControlSchedule { step, u, v })
    }
}

/// Flat-array evaluation of the drift and its vector-Jacobian products.
///
/// State layout: `[i_0, r_0, theta_0, i_1, ..., C_ref, C_dir]` where the last
/// two entries are the accumulated referral and direct-incentive spending.
#[derive(Debug, Clone)]
pub(crate) struct Dynamics {
    pub k: usize,
    pub weights: Vec<f64>,
    /// Row-major `K x K`, `mix[k * K + j] = P(j | k)`.
    pub mix: Vec<f64>,
    pub p: ModelParams,
}

impl Dynamics {
    pub fn new(net: &ClassNetwork, p: &ModelParams) -> Self {
        let k = net.len();
        Self {
            k,
            weights: net.weights(),
            mix: net.mixing.iter().flatten().copied().collect(),
            p: *p,
        }
    }

    pub fn dim(&self) -> usize {
        3 * self.k + 2
    }

    /// Referral gate for buyer class `k` and referrer class `j`.
    #[inline]
    fn gate(&self, u: &[f64], k: usize, j: usize) -> f64 {
        match self.p.gating {
            ReferralGating::Buyer => u[k],
            ReferralGating::Referrer => u[j],
        }
    }

    /// Writes `f(x, u, v)` into `out` (length [`Self::dim`]).
    pub fn eval(&self, x: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        let ModelParams {
            alpha,
            beta,
            gamma,
            delta,
            eps1,
            eps2,
            cost_referral,
            cost_direct,
            ..
        } = self.p;
        let kk = self.k;
        let mut spend_ref = 0.0;
        let mut spend_dir = 0.0;
        for k in 0..kk {
            let row = &self.mix[k * kk..(k + 1) * kk];
            let i = x[3 * k];
            let mut social = 0.0;
            let mut paid = 0.0;
            let mut theta_avg = 0.0;
            for j in 0..kk {
                let g = self.gate(u, k, j);
                let r = x[3 * j + 1];
                social += row[j] * (beta + g * eps1) * r;
                paid += row[j] * g * r;
                theta_avg += row[j] * x[3 * j + 2];
            }
            let referral = i * social;
            let direct = (alpha + v[k] * eps2) * i;
            let rival = gamma * i * theta_avg + delta * i;
            out[3 * k] = -referral - direct - rival;
            out[3 * k + 1] = referral + direct;
            out[3 * k + 2] = rival;
            spend_ref += self.weights[k] * cost_referral * (beta + eps1) * i * paid;
            spend_dir += self.weights[k] * v[k] * cost_direct * (alpha + eps2) * i;
        }
        out[3 * kk] = spend_ref;
        out[3 * kk + 1] = spend_dir;
    }

    /// Accumulates `lam^T df/dx` into `gx`, `lam^T df/du` into `gu` and
    /// `lam^T df/dv` into `gv`.
    #[allow(clippy::too_many_arguments)]
    pub fn vjp(
        &self,
        x: &[f64],
        u: &[f64],
        v: &[f64],
        lam: &[f64],
        gx: &mut [f64],
        gu: &mut [f64],
        gv: &mut [f64],
    ) {
        let ModelParams {
            alpha,
            beta,
            gamma,
            delta,
            eps1,
            eps2,
            cost_referral,
            cost_direct,
            ..
        } = self.p;
        let kk = self.k;
        let lam_ref = lam[3 * kk];
        let lam_dir = lam[3 * kk + 1];
        for k in 0..kk {
            let row = &self.mix[k * kk..(k + 1) * kk];
            let i = x[3 * k];
            // Value of moving mass i -> r and i -> theta in class k.
            let to_r = lam[3 * k + 1] - lam[3 * k];
            let to_theta = lam[3 * k + 2] - lam[3 * k];
            let w = self.weights[k];
            let pay = lam_ref * w * cost_referral * (beta + eps1);

            let mut social = 0.0;
            let mut paid = 0.0;
            let mut theta_avg = 0.0;
            for j in 0..kk {
                let g = self.gate(u, k, j);
                let r = x[3 * j + 1];
                social += row[j] * (beta + g * eps1) * r;
                paid += row[j] * g * r;
                theta_avg += row[j] * x[3 * j + 2];

                gx[3 * j + 1] += to_r * i * row[j] * (beta + g * eps1) + pay * i * row[j] * g;
                gx[3 * j + 2] += to_theta * gamma * i * row[j];
                let du = row[j] * r * i * (to_r * eps1 + pay);
                match self.p.gating {
                    ReferralGating::Buyer => gu[k] += du,
                    ReferralGating::Referrer => gu[j] += du,
                }
            }
            let a = alpha + v[k] * eps2;
            gx[3 * k] += to_r * (social + a)
                + to_theta * (gamma * theta_avg + delta)
                + pay * paid
                + lam_dir * w * v[k] * cost_direct * (alpha + eps2);
            gv[k] += i * (to_r * eps2 + lam_dir * w * cost_direct * (alpha + eps2));
        }
    }
}

fn check_controls(net: &ClassNetwork, u: &[f64], v: &[f64]) -> Result<()> {
    for (what, c) in [("referral controls", u), ("direct controls", v)] {
        if c.len() != net.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: net.len(),
                found: c.len(),
            });
        }
        if let Some(bad) = c.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidSchedule(format!(
                "{what}: value {bad} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

fn check_inputs(
    state: &StateVector,
    net: &ClassNetwork,
    p: &ModelParams,
    u: &[f64],
    v: &[f64],
) -> Result<()> {
    if state.len() != net.len() {
        return Err(Error::DimensionMismatch {
            what: "state classes",
            expected: net.len(),
            found: state.len(),
        });
    }
    state.validate()?;
    p.validate()?;
    check_controls(net, u, v)
}

/// Instantaneous rate of change of every class's fractions.
pub fn drift(
    state: &StateVector,
    net: &ClassNetwork,
    p: &ModelParams,
    u: &[f64],
    v: &[f64],
) -> Result<Vec<ClassDrift>> {
    check_inputs(state, net, p, u, v)?;
    let dynamics = Dynamics::new(net, p);
    let mut x = state.to_flat();
    x.extend([0.0, 0.0]);
    let mut out = vec![0.0; dynamics.dim()];
    dynamics.eval(&x, u, v, &mut out);
    Ok((0..net.len())
        .map(|k| ClassDrift {
            di: out[3 * k],
            dr: out[3 * k + 1],
            dtheta: out[3 * k + 2],
        })
        .collect())
}

/// Seller's spending per unit time on both programs.
pub fn cost_rate(
    state: &StateVector,
    net: &ClassNetwork,
    p: &ModelParams,
    u: &[f64],
    v: &[f64],
) -> Result<f64> {
    check_inputs(state, net, p, u, v)?;
    let dynamics = Dynamics::new(net, p);
    let mut x = state.to_flat();
    x.extend([0.0, 0.0]);
    let mut out = vec![0.0; dynamics.dim()];
    dynamics.eval(&x, u, v, &mut out);
    Ok(out[3 * net.len()] + out[3 * net.len() + 1])
}
