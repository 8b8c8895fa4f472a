//! Abstract rain adversary for the safety game.
//!
//! Each decision layer holds a set of abstract environment nodes. A node
//! fixes the rain interval and location, and covers a hull of elapsed
//! times. Every node lists the outcomes the rain automaton can produce over
//! the next period: the rain pieces to integrate (at peak intensity) and the
//! successor node. The layers are built forward from the start state, so
//! only reachable nodes are materialised.

use std::collections::HashMap;

use crate::error::{PondError, Result};
use crate::hmdp::{EnvMode, Phase};
use crate::rain::{worst_case_envelope_from, EnvStart, RainProgram};

use super::grid::{Adversary, DecisionGrid, EnvKey};

/// Rain over one period as `(t0, t1, intensity)` pieces relative to the
/// period start; rain applies on `[t0, t1)`.
pub type RainPieces = Vec<(f64, f64, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub rain: RainPieces,
    /// Index of the successor node in the next layer.
    pub next: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvNode {
    pub key: EnvKey,
    /// Hull of elapsed times in the current location.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvLayer {
    pub nodes: Vec<EnvNode>,
    /// Per node; empty in the terminal layer.
    pub outcomes: Vec<Vec<Outcome>>,
}

impl EnvLayer {
    pub fn index_of(&self, key: &EnvKey) -> Option<usize> {
        self.nodes.iter().position(|n| n.key == *key)
    }
}

/// Target of a transition before bucketing.
#[derive(Clone, Copy, Debug)]
enum Target {
    Seg(usize, Phase),
    Exhausted,
}

/// Candidate outcome: successor elapsed range and a map from a sub-range of
/// that range to the rain pieces.
struct Branch<'a> {
    target: Target,
    lo: f64,
    hi: f64,
    rain: Box<dyn Fn(f64, f64) -> RainPieces + 'a>,
}

/// Builds the layers `0..=decisions` for the grid's adversary mode.
pub fn build_env_layers(prog: &RainProgram, start: EnvStart, grid: &DecisionGrid) -> Result<Vec<EnvLayer>> {
    match grid.adversary {
        Adversary::Envelope => Ok(envelope_layers(prog, start, grid)),
        Adversary::Phase => phase_layers(prog, start, grid),
    }
}

fn envelope_layers(prog: &RainProgram, start: EnvStart, grid: &DecisionGrid) -> Vec<EnvLayer> {
    let p = grid.period;
    let horizon = p * grid.decisions as f64;
    let env = worst_case_envelope_from(prog, start, horizon);
    let node = EnvNode { key: EnvKey::Any, lo: 0.0, hi: 0.0 };
    let mut layers: Vec<EnvLayer> = (0..grid.decisions)
        .map(|n| {
            let t0 = n as f64 * p;
            EnvLayer { nodes: vec![node.clone()], outcomes: vec![vec![Outcome { rain: env.window(t0, t0 + p), next: 0 }]] }
        })
        .collect();
    layers.push(EnvLayer { nodes: vec![node], outcomes: Vec::new() });
    layers
}

/// The phase abstraction assumes at most one rain onset and one rain end per
/// period, which holds when every dry spell lasts at least a period.
pub fn check_phase_assumptions(prog: &RainProgram, period: f64) -> Result<()> {
    for (i, iv) in prog.intervals.iter().enumerate() {
        if iv.dry_min < period {
            return Err(PondError::invalid(format!(
                "interval {i}: shortest dry spell {} is below the control period {period}; \
                 use the envelope adversary",
                iv.dry_min
            )));
        }
    }
    Ok(())
}

fn phase_layers(prog: &RainProgram, start: EnvStart, grid: &DecisionGrid) -> Result<Vec<EnvLayer>> {
    check_phase_assumptions(prog, grid.period)?;
    let n_int = prog.len();
    let first = if start.mode.interval >= n_int {
        EnvNode { key: EnvKey::Exhausted, lo: 0.0, hi: 0.0 }
    } else {
        EnvNode { key: grid.env_key(start.mode, start.elapsed), lo: start.elapsed, hi: start.elapsed }
    };
    let mut layers = vec![EnvLayer { nodes: vec![first], outcomes: Vec::new() }];
    for _ in 0..grid.decisions {
        let cur = layers.last_mut().expect("at least one layer");
        let mut next = EnvLayer::default();
        let mut index: HashMap<EnvKey, usize> = HashMap::new();
        let mut all = Vec::with_capacity(cur.nodes.len());
        for node in &cur.nodes {
            let mut outs = Vec::new();
            for br in branches(prog, grid.period, node) {
                for (key, lo, hi) in bucketize(grid, br.target, br.lo, br.hi) {
                    let rain: RainPieces =
                        (br.rain)(lo, hi).into_iter().filter(|&(a, b, r)| b > a && r > 0.0).collect();
                    let idx = *index.entry(key).or_insert_with(|| {
                        next.nodes.push(EnvNode { key, lo, hi });
                        next.nodes.len() - 1
                    });
                    let nd = &mut next.nodes[idx];
                    nd.lo = nd.lo.min(lo);
                    nd.hi = nd.hi.max(hi);
                    let o = Outcome { rain, next: idx };
                    if !outs.contains(&o) {
                        outs.push(o);
                    }
                }
            }
            if outs.is_empty() {
                return Err(PondError::Internal(format!("environment node {:?} has no successor", node.key)));
            }
            all.push(outs);
        }
        cur.outcomes = all;
        layers.push(next);
    }
    Ok(layers)
}

fn bucketize(grid: &DecisionGrid, target: Target, lo: f64, hi: f64) -> Vec<(EnvKey, f64, f64)> {
    let (i, phase) = match target {
        Target::Exhausted => return vec![(EnvKey::Exhausted, lo, hi)],
        Target::Seg(i, phase) => (i, phase),
    };
    let mode = EnvMode { phase, interval: i };
    let step = grid.clock_step;
    let (b0, b1) = (grid.bucket(lo), grid.bucket(hi));
    (b0..=b1)
        .filter_map(|b| {
            let a = lo.max(b as f64 * step);
            let z = hi.min((b + 1) as f64 * step);
            // a wide range touching a bucket only at one point does not enter
            // it: the point has probability zero and is often unreachable
            (a < z || (a == z && lo == hi)).then(|| (grid.env_key(mode, a), a, z))
        })
        .collect()
}

fn next_dry(i: usize, n_int: usize) -> Target {
    if i + 1 < n_int {
        Target::Seg(i + 1, Phase::Dry)
    } else {
        Target::Exhausted
    }
}

/// All ways the automaton can evolve over one period from `node`.
fn branches<'a>(prog: &'a RainProgram, p: f64, node: &EnvNode) -> Vec<Branch<'a>> {
    let (lo, hi) = (node.lo, node.hi);
    let mut out = Vec::new();
    let (i, phase) = match node.key {
        EnvKey::Exhausted | EnvKey::Any => {
            out.push(Branch { target: Target::Exhausted, lo: 0.0, hi: 0.0, rain: Box::new(|_, _| Vec::new()) });
            return out;
        }
        EnvKey::Segment { interval, phase, .. } => (interval as usize, phase),
    };
    let n_int = prog.len();
    let r = prog.peak_intensity(i);
    match phase {
        Phase::Dry => {
            for (a, b) in prog.dry_support(i) {
                if b <= lo {
                    continue;
                }
                // onset delay after the decision instant
                let t1 = (a - hi).max(0.0);
                let t2 = b - lo;
                if t2 > p {
                    // still dry at the period end
                    out.push(Branch {
                        target: Target::Seg(i, Phase::Dry),
                        lo: lo + p,
                        hi: (hi + p).min(b),
                        rain: Box::new(|_, _| Vec::new()),
                    });
                }
                if t1 > p {
                    continue;
                }
                let (s1, s2) = (t1, t2.min(p));
                for (ra, rb) in prog.rain_support(i) {
                    // raining at the period end, elapsed e = p - onset
                    if p - s2 < rb {
                        out.push(Branch {
                            target: Target::Seg(i, Phase::Raining),
                            lo: p - s2,
                            hi: (p - s1).min(rb),
                            rain: Box::new(move |_, e2| vec![(p - e2, p, r)]),
                        });
                    }
                    // rain starts and stops inside the period, elapsed f = p - end
                    if s1 + ra <= p {
                        out.push(Branch {
                            target: next_dry(i, n_int),
                            lo: (p - s2 - rb).max(0.0),
                            hi: p - s1 - ra,
                            rain: Box::new(move |f1, f2| vec![(s1.max(p - f2 - rb), p - f1, r)]),
                        });
                    }
                }
            }
        }
        Phase::Raining => {
            for (a, b) in prog.rain_support(i) {
                if b <= lo {
                    continue;
                }
                let t1 = (a - hi).max(0.0);
                let t2 = b - lo;
                if t2 > p {
                    out.push(Branch {
                        target: Target::Seg(i, Phase::Raining),
                        lo: lo + p,
                        hi: (hi + p).min(b),
                        rain: Box::new(move |_, _| vec![(0.0, p, r)]),
                    });
                }
                if t1 <= p {
                    let (s1, s2) = (t1, t2.min(p));
                    out.push(Branch {
                        target: next_dry(i, n_int),
                        lo: p - s2,
                        hi: p - s1,
                        rain: Box::new(move |f1, _| vec![(0.0, p - f1, r)]),
                    });
                }
            }
        }
    }
    out
}
