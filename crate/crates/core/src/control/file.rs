//! Line-oriented text format for strategies.
//!
//! ```text
//! pond-strategy 1
//! kind permissive
//! modes 1.425 5.7 8.55
//! period 60
//! decisions 72
//! level 2 150 300
//! storage 0.0153 20 0.306
//! clock 5
//! program 5
//! adversary phase
//! layer 0 1
//! cells 0 D:0:0 0 7*120 6*3 0*27
//! ```
//!
//! `level` and `storage` give step, cell count and upper bound of each axis.
//! A `layer n k` line announces `k` environment nodes at decision `n`; each
//! node then has one `cells` line per storage cell with the allowed-mode
//! bitmasks of all level cells, run-length encoded as `mask*count`. Each
//! mode must be allowed on a prefix of the level cells.
//! Deterministic strategies add a `coarsen level storage clock` line and
//! `pick n env level storage m1,m2,...` lines listing modes by preference.
//! Static strategies carry `modes`, `period` and a single `mode` line.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;

use super::{Coarsening, DeterministicStrategy, LearnKey, ModeSet, StaticStrategy, TieBreak, ValveTable};
use crate::error::{PondError, Result};
use crate::hmdp::{ControlModeId, DecisionPoint, Policy};
use crate::synthesis::{Adversary, DecisionGrid, EnvKey, PermissiveStrategy, ShieldLayer};

const MAGIC: &str = "pond-strategy 1";

/// Any strategy that can be stored on disk.
#[derive(Clone, Debug)]
pub enum StrategyFile {
    Static { valves: ValveTable, strategy: StaticStrategy },
    Permissive(PermissiveStrategy),
    Deterministic(DeterministicStrategy),
}

impl StrategyFile {
    pub fn kind(&self) -> &'static str {
        match self {
            StrategyFile::Static { .. } => "static",
            StrategyFile::Permissive(_) => "permissive",
            StrategyFile::Deterministic(_) => "deterministic",
        }
    }

    pub fn valves(&self) -> &ValveTable {
        match self {
            StrategyFile::Static { valves, .. } => valves,
            StrategyFile::Permissive(p) => &p.valves,
            StrategyFile::Deterministic(d) => &d.shield.valves,
        }
    }

    /// Resolves the strategy into a policy; permissive ones use `tie`.
    pub fn policy(&self, tie: TieBreak) -> Box<dyn Policy + '_> {
        match self {
            StrategyFile::Static { strategy, .. } => Box::new(*strategy),
            StrategyFile::Permissive(p) => Box::new(super::ShieldedPolicy { shield: p, tie }),
            StrategyFile::Deterministic(d) => Box::new(DetRef(d)),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "kind {}", self.kind()).unwrap();
        match self {
            StrategyFile::Static { valves, strategy } => {
                write_valves(&mut out, valves);
                writeln!(out, "mode {}", strategy.mode.0).unwrap();
            }
            StrategyFile::Permissive(p) => write_shield(&mut out, p),
            StrategyFile::Deterministic(d) => {
                write_shield(&mut out, &d.shield);
                let c = d.coarsening;
                writeln!(out, "coarsen {} {} {}", c.level, c.storage, c.clock).unwrap();
                for (k, modes) in &d.ranking {
                    let ms: Vec<String> = modes.iter().map(|m| m.0.to_string()).collect();
                    writeln!(out, "pick {} {} {} {} {}", k.decision, k.env, k.level, k.storage, ms.join(",")).unwrap();
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| PondError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PondError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Parser::new(text, origin).parse()
    }
}

struct DetRef<'a>(&'a DeterministicStrategy);

impl Policy for DetRef<'_> {
    fn choose(&self, point: &DecisionPoint<'_>, _rng: &mut dyn RngCore) -> Result<ControlModeId> {
        self.0.decide(point)
    }
}

fn write_valves(out: &mut String, v: &ValveTable) {
    let qs: Vec<String> = v.q_out.iter().map(|q| q.to_string()).collect();
    writeln!(out, "modes {}", qs.join(" ")).unwrap();
    writeln!(out, "period {}", v.period).unwrap();
}

fn write_shield(out: &mut String, p: &PermissiveStrategy) {
    let g = &p.grid;
    write_valves(out, &p.valves);
    writeln!(out, "decisions {}", g.decisions).unwrap();
    writeln!(out, "level {} {} {}", g.level_step, g.level_cells, g.max_level).unwrap();
    writeln!(out, "storage {} {} {}", g.storage_step, g.storage_cells, g.storage_max).unwrap();
    writeln!(out, "clock {}", g.clock_step).unwrap();
    writeln!(out, "program {}", g.program_len).unwrap();
    writeln!(out, "adversary {}", g.adversary).unwrap();
    for (n, layer) in p.layers.iter().enumerate() {
        writeln!(out, "layer {n} {}", layer.keys.len()).unwrap();
        for (node, key) in layer.keys.iter().enumerate() {
            for s in 0..g.storage_cells {
                let row = p.row_masks(n, node, s);
                write!(out, "cells {n} {key} {s}").unwrap();
                let mut i = 0;
                while i < row.len() {
                    let j = row[i..].iter().position(|m| *m != row[i]).map_or(row.len(), |d| i + d);
                    write!(out, " {}*{}", row[i].0, j - i).unwrap();
                    i = j;
                }
                out.push('\n');
            }
        }
    }
}

struct Parser<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
    origin: &'a str,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, origin: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
            .filter(|(_, t)| !t.is_empty() && !t[0].starts_with('#'))
            .collect();
        Parser { lines, pos: 0, origin }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> PondError {
        PondError::Parse { path: self.origin.to_string(), line, msg: msg.into() }
    }

    fn line_no(&self) -> usize {
        self.lines.get(self.pos).map_or_else(|| self.lines.last().map_or(0, |l| l.0), |l| l.0)
    }

    /// Next line, which must start with `tag`; returns its arguments.
    fn expect(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>)> {
        let Some((no, toks)) = self.lines.get(self.pos).cloned() else {
            return Err(self.err(self.line_no(), format!("expected '{tag}', found end of file")));
        };
        if toks[0] != tag {
            return Err(self.err(no, format!("expected '{tag}', found '{}'", toks[0])));
        }
        self.pos += 1;
        Ok((no, toks[1..].to_vec()))
    }

    fn peek_tag(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|l| l.1[0])
    }

    fn num<T: std::str::FromStr>(&self, line: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(line, format!("bad number '{s}'")))
    }

    fn args<const N: usize>(&self, line: usize, args: &[&str]) -> Result<[f64; N]> {
        if args.len() != N {
            return Err(self.err(line, format!("expected {N} values, found {}", args.len())));
        }
        let mut out = [0.0; N];
        for (o, a) in out.iter_mut().zip(args) {
            *o = self.num(line, a)?;
        }
        Ok(out)
    }

    fn parse(mut self) -> Result<StrategyFile> {
        let first = self.lines.first().map(|l| l.1.join(" "));
        if first.as_deref() != Some(MAGIC) {
            return Err(self.err(self.line_no(), format!("missing '{MAGIC}' header")));
        }
        self.pos = 1;
        let (no, kind) = self.expect("kind")?;
        let kind = kind.first().copied().unwrap_or("");
        let valves = self.valves()?;
        let out = match kind {
            "static" => {
                let (no, a) = self.expect("mode")?;
                let [m] = self.args::<1>(no, &a)?;
                let mode = ControlModeId(m as u8);
                if mode.index() >= valves.len() || m.fract() != 0.0 {
                    return Err(self.err(no, format!("mode {m} not in the valve table")));
                }
                StrategyFile::Static { valves, strategy: StaticStrategy { mode } }
            }
            "permissive" => StrategyFile::Permissive(self.shield(valves)?),
            "deterministic" => {
                let shield = self.shield(valves)?;
                let (no, a) = self.expect("coarsen")?;
                let [l, s, c] = self.args::<3>(no, &a)?;
                let coarsening = Coarsening { level: l as usize, storage: s as usize, clock: c as u32 };
                coarsening.validate().map_err(|e| self.err(no, e.to_string()))?;
                let mut ranking = BTreeMap::new();
                while self.peek_tag() == Some("pick") {
                    let (no, a) = self.expect("pick")?;
                    if a.len() != 5 {
                        return Err(self.err(no, "pick needs decision, env, level, storage and modes"));
                    }
                    let env: EnvKey = a[1].parse().map_err(|e: String| self.err(no, e))?;
                    let key = LearnKey {
                        decision: self.num(no, a[0])?,
                        env,
                        level: self.num(no, a[2])?,
                        storage: self.num(no, a[3])?,
                    };
                    let mut modes = Vec::new();
                    for m in a[4].split(',') {
                        let m: u8 = self.num(no, m)?;
                        if m as usize >= shield.valves.len() {
                            return Err(self.err(no, format!("mode {m} not in the valve table")));
                        }
                        modes.push(ControlModeId(m));
                    }
                    ranking.insert(key, modes);
                }
                StrategyFile::Deterministic(DeterministicStrategy { shield, coarsening, ranking })
            }
            other => return Err(self.err(no, format!("unknown strategy kind '{other}'"))),
        };
        if self.pos < self.lines.len() {
            let (no, toks) = &self.lines[self.pos];
            return Err(self.err(*no, format!("unexpected '{}'", toks[0])));
        }
        Ok(out)
    }

    fn valves(&mut self) -> Result<ValveTable> {
        let (no, a) = self.expect("modes")?;
        let q = a.iter().map(|s| self.num(no, s)).collect::<Result<Vec<f64>>>()?;
        let (pno, a) = self.expect("period")?;
        let [period] = self.args::<1>(pno, &a)?;
        ValveTable::new(q, period).map_err(|e| self.err(no, e.to_string()))
    }

    fn shield(&mut self, valves: ValveTable) -> Result<PermissiveStrategy> {
        let (no, a) = self.expect("decisions")?;
        let [decisions] = self.args::<1>(no, &a)?;
        let (no, a) = self.expect("level")?;
        let [level_step, level_cells, max_level] = self.args::<3>(no, &a)?;
        let (no, a) = self.expect("storage")?;
        let [storage_step, storage_cells, storage_max] = self.args::<3>(no, &a)?;
        let (no, a) = self.expect("clock")?;
        let [clock_step] = self.args::<1>(no, &a)?;
        let (no, a) = self.expect("program")?;
        let [program_len] = self.args::<1>(no, &a)?;
        let (no, a) = self.expect("adversary")?;
        let adversary: Adversary = a.first().copied().unwrap_or("").parse().map_err(|e: String| self.err(no, e))?;
        if level_cells < 1.0 || storage_cells < 1.0 {
            return Err(self.err(no, "grid axes need at least one cell"));
        }
        let grid = DecisionGrid {
            max_level,
            level_step,
            level_cells: level_cells as usize,
            storage_max,
            storage_step,
            storage_cells: storage_cells as usize,
            clock_step,
            period: valves.period,
            decisions: decisions as usize,
            program_len: program_len as usize,
            adversary,
        };
        let (nw, ns) = (grid.level_cells, grid.storage_cells);
        let full = valves.all_modes();
        let mut layers = Vec::with_capacity(grid.decisions);
        for n in 0..grid.decisions {
            let (no, a) = self.expect("layer")?;
            let [idx, count] = self.args::<2>(no, &a)?;
            if idx as usize != n {
                return Err(self.err(no, format!("expected layer {n}, found {idx}")));
            }
            let mut keys = Vec::new();
            let mut limits = Vec::with_capacity(count as usize * ns * valves.len());
            for _ in 0..count as usize {
                let mut key = None;
                for s in 0..ns {
                    let (no, a) = self.expect("cells")?;
                    if a.len() < 4 {
                        return Err(self.err(no, "cells line needs decision, env, storage and runs"));
                    }
                    let k: EnvKey = a[1].parse().map_err(|e: String| self.err(no, e))?;
                    if self.num::<usize>(no, a[0])? != n || self.num::<usize>(no, a[2])? != s || key.is_some_and(|p| p != k) {
                        return Err(self.err(no, format!("cells out of order (expected layer {n}, storage {s})")));
                    }
                    key = Some(k);
                    let mut masks = Vec::with_capacity(nw);
                    for run in &a[3..] {
                        let (m, c) = run.split_once('*').ok_or_else(|| self.err(no, format!("bad run '{run}'")))?;
                        let m = ModeSet(self.num(no, m)?);
                        if !m.is_subset(full) {
                            return Err(self.err(no, format!("mask {} has modes outside the valve table", m.0)));
                        }
                        let c: usize = self.num(no, c)?;
                        masks.extend(std::iter::repeat_n(m, c));
                    }
                    if masks.len() != nw {
                        return Err(self.err(no, format!("expected {nw} level cells, found {}", masks.len())));
                    }
                    for m in valves.all_modes().iter() {
                        let lim = masks.iter().take_while(|s| s.contains(m)).count();
                        if masks[lim..].iter().any(|s| s.contains(m)) {
                            return Err(self.err(no, format!("mode {} is not allowed on a prefix of the level cells", m.0)));
                        }
                        limits.push(lim as u32);
                    }
                }
                keys.push(key.expect("at least one storage cell"));
            }
            layers.push(ShieldLayer::new(keys, limits));
        }
        Ok(PermissiveStrategy { grid, valves, layers })
    }
}
