//! Agent-based simulation on sampled graphs, for checking the mean-field
//! limit.
//!
//! Time scaling: one unit of model time is `N` chain slots. Each slot picks
//! one agent uniformly, so every agent gets on average one chance to act
//! per unit time, and the per-slot expected change of the class fractions
//! is the drift divided by `N`.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csvfmt::{row, sig12};
use crate::error::{Error, Result};
use crate::integrate::{integrate, profit, DEFAULT_DT};
use crate::model::{ClassNetwork, ClassState, ControlSchedule, ModelParams, ReferralGating, StateVector};
use crate::seed::stream;

/// Swap attempts allowed per agent when repairing loops and multi-edges.
pub const REPAIR_BUDGET_PER_AGENT: usize = 100;

/// Undirected simple graph with a degree class per agent, in CSR form.
#[derive(Debug, Clone)]
pub struct AgentGraph {
    class_of: Vec<usize>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    class_sizes: Vec<usize>,
    /// `realized_mixing[k][j]`: fraction of class-`k` edge ends whose other
    /// end lies in class `j`.
    pub realized_mixing: Vec<Vec<f64>>,
    /// Swaps spent on repair.
    pub repairs: usize,
}

impl AgentGraph {
    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn class_of(&self, a: usize) -> usize {
        self.class_of[a]
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    pub fn neighbors(&self, a: usize) -> &[u32] {
        &self.neighbors[self.offsets[a]..self.offsets[a + 1]]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.offsets[a + 1] - self.offsets[a]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }
}

/// Splits `n` into integer parts proportional to `weights` by largest
/// remainder; ties go to the lower index.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in &order {
        if left == 0 {
            break;
        }
        parts[k] += 1;
        left -= 1;
    }
    parts
}

fn key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// Samples a graph with the degrees and, up to rounding, the mixing of
/// `net`.
///
/// Class sizes come from `N P(k)` by largest remainder. The number of
/// edges between classes `k != j` is the rounded mean of `S_k P(j|k)` and
/// `S_j P(k|j)`, `S_k` being the stub count of class `k`; the remaining
/// stubs of each class pair among themselves and must be even. Stubs are
/// matched uniformly within these blocks, then self-loops and repeated
/// edges are removed by double-edge swaps inside the same class block,
/// which keep every degree and every block size.
pub fn sample_graph(net: &ClassNetwork, n: usize, rng: &mut ChaCha8Rng) -> Result<AgentGraph> {
    let k = net.len();
    if n == 0 {
        return Err(Error::GraphConstruction("no agents".into()));
    }
    let sizes = apportion(n, &net.weights());
    let degrees: Vec<usize> = net.classes().iter().map(|c| c.degree as usize).collect();
    let stubs: Vec<usize> = (0..k).map(|c| sizes[c] * degrees[c]).collect();
    let mix = net.mixing();

    let mut between = vec![vec![0usize; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let e = 0.5 * (stubs[a] as f64 * mix[a][b] + stubs[b] as f64 * mix[b][a]);
            between[a][b] = e.round() as usize;
            between[b][a] = between[a][b];
        }
    }
    let mut within = vec![0usize; k];
    for a in 0..k {
        let cross: usize = between[a].iter().sum();
        if cross > stubs[a] {
            return Err(Error::GraphConstruction(format!(
                "class {a} needs {cross} cross-class stubs but has {}",
                stubs[a]
            )));
        }
        let rest = stubs[a] - cross;
        if rest % 2 == 1 {
            return Err(Error::GraphConstruction(format!(
                "class {a} is left with an odd number ({rest}) of internal stubs"
            )));
        }
        within[a] = rest / 2;
    }

    let mut class_of = Vec::with_capacity(n);
    for (c, &s) in sizes.iter().enumerate() {
        class_of.extend(std::iter::repeat_n(c, s));
    }
    let mut pools: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (a, &c) in class_of.iter().enumerate() {
        pools[c].extend(std::iter::repeat_n(a as u32, degrees[c]));
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let mut cursor = vec![0usize; k];
    let mut take = |c: usize, m: usize, pools: &Vec<Vec<u32>>| -> Vec<u32> {
        let s = pools[c][cursor[c]..cursor[c] + m].to_vec();
        cursor[c] += m;
        s
    };
    // (edge, block id); blocks are unordered class pairs
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(stubs.iter().sum::<usize>() / 2);
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut block_of_pair = HashMap::new();
    for a in 0..k {
        for b in a..k {
            let (left, right) = if a == b {
                let s = take(a, 2 * within[a], &pools);
                (s[..within[a]].to_vec(), s[within[a]..].to_vec())
            } else {
                (take(a, between[a][b], &pools), take(b, between[a][b], &pools))
            };
            let id = blocks.len();
            block_of_pair.insert((a, b), id);
            let mut members = Vec::with_capacity(left.len());
            for (x, y) in left.into_iter().zip(right) {
                members.push(edges.len());
                edges.push((x, y));
            }
            blocks.push(members);
        }
    }

    let mut count: HashMap<(u32, u32), u32> = HashMap::with_capacity(edges.len());
    for &(x, y) in &edges {
        *count.entry(key(x, y)).or_default() += 1;
    }
    let bad = |e: (u32, u32), count: &HashMap<(u32, u32), u32>| e.0 == e.1 || count[&key(e.0, e.1)] > 1;
    let mut pending: Vec<usize> = (0..edges.len()).filter(|&i| bad(edges[i], &count)).collect();
    let budget = REPAIR_BUDGET_PER_AGENT * n;
    let mut attempts = 0;
    let mut repairs = 0;
    while let Some(&i) = pending.last() {
        if !bad(edges[i], &count) {
            pending.pop();
            continue;
        }
        if attempts >= budget {
            return Err(Error::GraphConstruction(format!(
                "repair budget of {budget} swaps exhausted with {} defective edges left",
                pending.len()
            )));
        }
        attempts += 1;
        let (a, b) = edges[i];
        let (ca, cb) = (class_of[a as usize], class_of[b as usize]);
        let block = &blocks[block_of_pair[&(ca.min(cb), ca.max(cb))]];
        let j = block[rng.random_range(0..block.len())];
        if j == i {
            continue;
        }
        // orient the partner so that c shares a's class and d shares b's
        let (mut c, mut d) = edges[j];
        if class_of[c as usize] != ca || (ca == cb && rng.random::<bool>()) {
            (c, d) = (d, c);
        }
        let (e1, e2) = ((a, d), (c, b));
        if e1.0 == e1.1 || e2.0 == e2.1 || key(e1.0, e1.1) == key(e2.0, e2.1) {
            continue;
        }
        if count.get(&key(e1.0, e1.1)).is_some_and(|&m| m > 0)
            || count.get(&key(e2.0, e2.1)).is_some_and(|&m| m > 0)
        {
            continue;
        }
        for old in [edges[i], edges[j]] {
            let m = count.get_mut(&key(old.0, old.1)).expect("edge counted");
            *m -= 1;
            if *m == 0 {
                count.remove(&key(old.0, old.1));
            }
        }
        for new in [e1, e2] {
            *count.entry(key(new.0, new.1)).or_default() += 1;
        }
        edges[i] = e1;
        edges[j] = e2;
        repairs += 1;
        if bad(edges[j], &count) {
            pending.push(j);
        }
    }

    let mut deg = vec![0usize; n];
    for &(x, y) in &edges {
        deg[x as usize] += 1;
        deg[y as usize] += 1;
    }
    let mut offsets = vec![0usize; n + 1];
    for a in 0..n {
        offsets[a + 1] = offsets[a] + deg[a];
    }
    let mut fill = offsets.clone();
    let mut neighbors = vec![0u32; offsets[n]];
    let mut ends = vec![vec![0usize; k]; k];
    for &(x, y) in &edges {
        neighbors[fill[x as usize]] = y;
        fill[x as usize] += 1;
        neighbors[fill[y as usize]] = x;
        fill[y as usize] += 1;
        let (cx, cy) = (class_of[x as usize], class_of[y as usize]);
        ends[cx][cy] += 1;
        ends[cy][cx] += 1;
    }
    let realized_mixing = (0..k)
        .map(|a| {
            let total: usize = ends[a].iter().sum();
            ends[a]
                .iter()
                .map(|&e| if total == 0 { 0.0 } else { e as f64 / total as f64 })
                .collect()
        })
        .collect();
    Ok(AgentGraph {
        class_of,
        offsets,
        neighbors,
        class_sizes: sizes,
        realized_mixing,
        repairs,
    })
}

/// Agent states: 0 potential buyer, 1 seller's customer, -1 competitor's
/// customer. Both purchase states are absorbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub states: Vec<i8>,
    /// Per class `[potential, customers, competitor]` counts.
    pub counts: Vec<[usize; 3]>,
    pub referral_conversions: u64,
    pub direct_conversions: u64,
    pub slot: u64,
}

impl ChainState {
    /// Assigns `round(n_k x_k)` agents of each class to each state at
    /// random, largest remainder within the class.
    pub fn from_fractions(g: &AgentGraph, x0: &StateVector, rng: &mut ChaCha8Rng) -> Result<Self> {
        if x0.len() != g.class_sizes.len() {
            return Err(Error::DimensionMismatch {
                what: "initial state classes",
                expected: g.class_sizes.len(),
                found: x0.len(),
            });
        }
        x0.validate()?;
        let mut states = vec![0i8; g.len()];
        let mut counts = Vec::with_capacity(x0.len());
        for (c, s) in x0.0.iter().enumerate() {
            let mut members: Vec<usize> = (0..g.len()).filter(|&a| g.class_of[a] == c).collect();
            members.shuffle(rng);
            let parts = apportion(members.len(), &[s.i, s.r, s.theta]);
            for (idx, &a) in members.iter().enumerate() {
                states[a] = if idx < parts[0] {
                    0
                } else if idx < parts[0] + parts[1] {
                    1
                } else {
                    -1
                };
            }
            counts.push([parts[0], parts[1], parts[2]]);
        }
        Ok(Self {
            states,
            counts,
            referral_conversions: 0,
            direct_conversions: 0,
            slot: 0,
        })
    }

    pub fn fractions(&self) -> Vec<ClassState> {
        self.counts
            .iter()
            .map(|c| {
                let n = (c[0] + c[1] + c[2]).max(1) as f64;
                ClassState::new(c[0] as f64 / n, c[1] as f64 / n, c[2] as f64 / n)
            })
            .collect()
    }
}

/// Emissions of one chain run, one row per unit of model time.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub times: Vec<f64>,
    /// `fractions[m][k]`.
    pub fractions: Vec<Vec<ClassState>>,
    /// Cumulative referral spend per capita.
    pub cost_referral: Vec<f64>,
    /// Cumulative direct-incentive spend per capita.
    pub cost_direct: Vec<f64>,
    pub final_state: ChainState,
    /// `sum_k P(k) r_k(T)` minus per-capita spend.
    pub profit: f64,
}

impl ChainOutput {
    /// CSV with a `# seed=...` comment line, then the trajectory columns.
    pub fn write_csv<W: Write>(&self, seed_note: &str, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# {seed_note}")?;
        let classes = self.fractions.first().map_or(0, |f| f.len());
        let mut header = vec!["t".to_string()];
        for k in 0..classes {
            for name in ["i", "r", "theta"] {
                header.push(format!("{name}_{k}"));
            }
        }
        header.push("cum_cost_referral".into());
        header.push("cum_cost_direct".into());
        out.write_all(row(header).as_bytes())?;
        for m in 0..self.times.len() {
            let mut fields = vec![sig12(self.times[m])];
            for s in &self.fractions[m] {
                fields.extend([s.i, s.r, s.theta].map(sig12));
            }
            fields.push(sig12(self.cost_referral[m]));
            fields.push(sig12(self.cost_direct[m]));
            out.write_all(row(fields).as_bytes())?;
        }
        Ok(())
    }
}

/// Checks the per-slot case probabilities can be laid out on one uniform
/// draw: `alpha + eps2 + delta + max(beta + eps1, gamma) <= 1`.
pub fn check_chain_params(p: &ModelParams) -> Result<()> {
    p.validate()?;
    let total = p.alpha + p.eps2 + p.delta + (p.beta + p.eps1).max(p.gamma);
    if total > 1.0 {
        return Err(Error::InvalidParams(format!(
            "per-slot purchase probabilities sum to {total} > 1"
        )));
    }
    Ok(())
}

/// Runs `ceil(N T)` slots from `state`.
///
/// In each slot a uniform agent is drawn; if it is a potential buyer, one
/// uniform `w` decides between, in order: buying from the seller with
/// probability `alpha + v eps2`, buying from the competitor with
/// probability `delta`, and otherwise asking one uniform neighbour, buying
/// from the seller with probability `beta + u eps1` if the neighbour is a
/// customer or from the competitor with probability `gamma` if the
/// neighbour is a competitor's customer. A potential-buyer neighbour
/// changes nothing. Controls are read at `t = n / N` from the agent's
/// class, or for referrals from the neighbour's class under referrer
/// gating; conversions under an active program are counted for its spend.
pub fn simulate_chain(
    g: &AgentGraph,
    p: &ModelParams,
    sched: &ControlSchedule,
    mut state: ChainState,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput> {
    check_chain_params(p)?;
    let k = g.class_sizes.len();
    sched.validate(k, p.horizon)?;
    sched.ensure_binary()?;
    if state.states.len() != g.len() {
        return Err(Error::DimensionMismatch {
            what: "chain agents",
            expected: g.len(),
            found: state.states.len(),
        });
    }
    let n = g.len();
    let total = (n as f64 * p.horizon).ceil() as u64;
    let weights: Vec<f64> = g.class_sizes.iter().map(|&s| s as f64 / n as f64).collect();
    let spend = |st: &ChainState| {
        (
            p.cost_referral * st.referral_conversions as f64 / n as f64,
            p.cost_direct * st.direct_conversions as f64 / n as f64,
        )
    };
    let mut out = ChainOutput {
        times: Vec::new(),
        fractions: Vec::new(),
        cost_referral: Vec::new(),
        cost_direct: Vec::new(),
        final_state: state.clone(),
        profit: 0.0,
    };
    let emit = |st: &ChainState, out: &mut ChainOutput| {
        let (cr, cd) = spend(st);
        out.times.push(st.slot as f64 / n as f64);
        out.fractions.push(st.fractions());
        out.cost_referral.push(cr);
        out.cost_direct.push(cd);
    };
    emit(&state, &mut out);
    let last = sched.intervals() - 1;
    while state.slot < total {
        state.slot += 1;
        let a = rng.random_range(0..n);
        if state.states[a] != 0 {
            if state.slot.is_multiple_of(n as u64) || state.slot == total {
                emit(&state, &mut out);
            }
            continue;
        }
        let t = state.slot as f64 / n as f64;
        let interval = ((t / sched.step) as usize).min(last);
        let ca = g.class_of[a];
        let v = sched.v[ca][interval];
        let w: f64 = rng.random();
        let direct = p.alpha + v * p.eps2;
        let outcome = if w < direct {
            if v == 1.0 {
                state.direct_conversions += 1;
            }
            1
        } else if w < direct + p.delta {
            -1
        } else {
            let nb = g.neighbors(a);
            if nb.is_empty() {
                0
            } else {
                let j = nb[rng.random_range(0..nb.len())] as usize;
                let w = w - direct - p.delta;
                match state.states[j] {
                    1 => {
                        let gate = match p.gating {
                            ReferralGating::Buyer => ca,
                            ReferralGating::Referrer => g.class_of[j],
                        };
                        let u = sched.u[gate][interval];
                        if w < p.beta + u * p.eps1 {
                            if u == 1.0 {
                                state.referral_conversions += 1;
                            }
                            1
                        } else {
                            0
                        }
                    }
                    -1 if w < p.gamma => -1,
                    _ => 0,
                }
            }
        };
        if outcome != 0 {
            state.states[a] = outcome;
            state.counts[ca][0] -= 1;
            state.counts[ca][if outcome == 1 { 1 } else { 2 }] += 1;
        }
        if state.slot.is_multiple_of(n as u64) || state.slot == total {
            emit(&state, &mut out);
        }
    }
    let fr = state.fractions();
    let (cr, cd) = spend(&state);
    out.profit = weights.iter().zip(&fr).map(|(w, s)| w * s.r).sum::<f64>() - cr - cd;
    out.final_state = state;
    Ok(out)
}

/// Error statistics at one population size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub agents: usize,
    pub replicas: usize,
    /// Mean over replicas of `sup_t |r_k(t) - r_k^ode(t)|`, per class.
    pub mean_sup_error: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Mean over replicas of the largest class error.
    pub mean_max_error: f64,
    pub max_error_stderr: f64,
    /// Mean absolute profit-estimate error.
    pub profit_error: f64,
    /// Mean largest relative class-mixing deviation of the sampled graphs.
    pub mixing_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub rows: Vec<ConvergenceRow>,
    /// Sizes at which the mean error rose by more than one standard error.
    pub flagged: Vec<usize>,
}

impl ConvergenceReport {
    /// CSV: `N,replicas`, then `mean_sup_error_k, stderr_k` per class, then
    /// `mean_max_error, max_error_stderr, profit_error`, after a seed
    /// comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# seed={} graph streams abm-graph/<replica>, chain streams abm-chain/<replica>",
            self.seed
        )?;
        let classes = self.rows.first().map_or(0, |r| r.mean_sup_error.len());
        let mut header = vec!["N".to_string(), "replicas".to_string()];
        for k in 0..classes {
            header.push(format!("mean_sup_error_{k}"));
            header.push(format!("stderr_{k}"));
        }
        header.extend(["mean_max_error", "max_error_stderr", "profit_error"].map(String::from));
        out.write_all(row(header).as_bytes())?;
        for r in &self.rows {
            let mut fields = vec![r.agents.to_string(), r.replicas.to_string()];
            for k in 0..classes {
                fields.push(sig12(r.mean_sup_error[k]));
                fields.push(sig12(r.stderr[k]));
            }
            fields.extend([r.mean_max_error, r.max_error_stderr, r.profit_error].map(sig12));
            out.write_all(row(fields).as_bytes())?;
        }
        Ok(())
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Replica {
    sup: Vec<f64>,
    profit: f64,
    mixing: f64,
}

/// One replica: a fresh graph and chain from the replica's own streams.
pub fn run_replica(
    net: &ClassNetwork,
    p: &ModelParams,
    sched: &ControlSchedule,
    x0: &StateVector,
    agents: usize,
    seed: u64,
    replica: u64,
) -> Result<(AgentGraph, ChainOutput)> {
    let mut grng = stream(seed, "abm-graph", replica);
    let g = sample_graph(net, agents, &mut grng)?;
    let mut crng = stream(seed, "abm-chain", replica);
    let state = ChainState::from_fractions(&g, x0, &mut crng)?;
    let out = simulate_chain(&g, p, sched, state, &mut crng)?;
    Ok((g, out))
}

/// Compares chain runs against the ODE for each population size.
///
/// For each size, `replicas` independent graphs and chains are run in
/// parallel. The ODE is integrated at `dt` under the same schedule and
/// sampled at the emission times.
#[allow(clippy::too_many_arguments)]
pub fn compare_abm_ode(
    net: &ClassNetwork,
    p: &ModelParams,
    sched: &ControlSchedule,
    x0: &StateVector,
    sizes: &[usize],
    replicas: usize,
    seed: u64,
    dt: Option<f64>,
) -> Result<ConvergenceReport> {
    if replicas == 0 {
        return Err(Error::NoStarts);
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("population sizes must increase".into()));
    }
    let dt = dt.unwrap_or(DEFAULT_DT);
    let traj = integrate(x0, sched, net, p, dt)?;
    let ode_profit = profit(&traj, net);
    let k = net.len();
    let mut rows = Vec::with_capacity(sizes.len());
    for &agents in sizes {
        let reps: Vec<Replica> = (0..replicas as u64)
            .into_par_iter()
            .map(|rep| -> Result<Replica> {
                let (g, out) = run_replica(net, p, sched, x0, agents, seed, rep)?;
                let mut sup = vec![0.0f64; k];
                for (m, &t) in out.times.iter().enumerate() {
                    let idx = ((t / dt).round() as usize).min(traj.len() - 1);
                    for (c, s) in sup.iter_mut().enumerate() {
                        let ode = traj.class_state(idx, c).r;
                        *s = s.max((out.fractions[m][c].r - ode).abs());
                    }
                }
                let mixing = g
                    .realized_mixing
                    .iter()
                    .zip(net.mixing())
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                    .fold(0.0, f64::max);
                Ok(Replica {
                    sup,
                    profit: out.profit,
                    mixing,
                })
            })
            .collect::<Result<_>>()?;
        let mut mean_sup_error = Vec::with_capacity(k);
        let mut stderr = Vec::with_capacity(k);
        for c in 0..k {
            let xs: Vec<f64> = reps.iter().map(|r| r.sup[c]).collect();
            let (m, s) = mean_stderr(&xs);
            mean_sup_error.push(m);
            stderr.push(s);
        }
        let maxes: Vec<f64> = reps
            .iter()
            .map(|r| r.sup.iter().copied().fold(0.0, f64::max))
            .collect();
        let (mean_max_error, max_error_stderr) = mean_stderr(&maxes);
        rows.push(ConvergenceRow {
            agents,
            replicas,
            mean_sup_error,
            stderr,
            mean_max_error,
            max_error_stderr,
            profit_error: reps.iter().map(|r| (r.profit - ode_profit).abs()).sum::<f64>()
                / replicas as f64,
            mixing_error: reps.iter().map(|r| r.mixing).sum::<f64>() / replicas as f64,
        });
    }
    let flagged = rows
        .windows(2)
        .filter(|w| w[1].mean_max_error > w[0].mean_max_error + w[1].max_error_stderr)
        .map(|w| w[1].agents)
        .collect();
    Ok(ConvergenceReport { seed, rows, flagged })
}
