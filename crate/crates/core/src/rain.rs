//! The stochastic rain program: alternating dry and raining intervals with
//! bounded durations and a relative intensity uncertainty.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PondError, Result};
use crate::hmdp::{EnvMode, Phase};

/// One dry spell followed by one rain event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainInterval {
    #[serde(rename = "dryL")]
    pub dry_min: f64,
    #[serde(rename = "dryU")]
    pub dry_max: f64,
    #[serde(rename = "rainL")]
    pub rain_min: f64,
    #[serde(rename = "rainU")]
    pub rain_max: f64,
    /// Nominal intensity [mm/min].
    #[serde(rename = "rain_mm_per_min")]
    pub intensity: f64,
}

/// How durations and intensities are drawn inside their bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingLaw {
    /// Continuous uniform over the closed range.
    #[default]
    Uniform,
    /// Uniform over `k` evenly spaced points including both bounds.
    Grid(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainProgram {
    pub epsilon: f64,
    pub intervals: Vec<RainInterval>,
    #[serde(default)]
    pub law: SamplingLaw,
}

/// A finite union of closed ranges. Degenerate ranges are single points.
pub type Support = Vec<(f64, f64)>;

impl RainProgram {
    pub fn new(intervals: Vec<RainInterval>, epsilon: f64) -> Result<Self> {
        let prog = RainProgram { epsilon, intervals, law: SamplingLaw::Uniform };
        prog.validate()?;
        Ok(prog)
    }

    /// The forecast used for the Vilhelmsborg Skov experiments (5-7 Sep 2019).
    pub fn forecast() -> Self {
        let rows = [
            (210.0, 256.0, 27.0, 33.0, 0.01333),
            (64.0, 78.0, 21.0, 25.0, 0.03478),
            (1376.0, 1682.0, 49.0, 61.0, 0.02545),
            (168.0, 206.0, 23.0, 29.0, 0.02308),
            (203.0, 249.0, 208.0, 254.0, 0.00952),
        ];
        let intervals = rows
            .iter()
            .map(|&(dry_min, dry_max, rain_min, rain_max, intensity)| RainInterval {
                dry_min,
                dry_max,
                rain_min,
                rain_max,
                intensity,
            })
            .collect();
        RainProgram { epsilon: 0.1, intervals, law: SamplingLaw::Uniform }
    }

    /// A program with no rain at all.
    pub fn dry() -> Self {
        RainProgram { epsilon: 0.0, intervals: Vec::new(), law: SamplingLaw::Uniform }
    }

    pub fn with_law(mut self, law: SamplingLaw) -> Self {
        self.law = law;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PondError::io(path, e))?;
        let prog: RainProgram =
            serde_json::from_str(&text).map_err(|e| PondError::Json { path: path.into(), source: e })?;
        prog.validate()?;
        Ok(prog)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(PondError::invalid(format!("epsilon {} outside [0, 1)", self.epsilon)));
        }
        if let SamplingLaw::Grid(k) = self.law {
            if k == 0 {
                return Err(PondError::invalid("grid sampling law needs at least one point"));
            }
        }
        for (i, r) in self.intervals.iter().enumerate() {
            let ok = r.dry_min > 0.0
                && r.dry_min <= r.dry_max
                && r.rain_min > 0.0
                && r.rain_min <= r.rain_max
                && r.intensity > 0.0
                && [r.dry_max, r.rain_max, r.intensity].iter().all(|v| v.is_finite());
            if !ok {
                return Err(PondError::invalid(format!("rain interval {} has inconsistent bounds", i + 1)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    fn points(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self.law {
            SamplingLaw::Uniform => vec![lo, hi],
            SamplingLaw::Grid(1) => vec![0.5 * (lo + hi)],
            SamplingLaw::Grid(k) => {
                let mut pts: Vec<f64> =
                    (0..k).map(|j| lo + (hi - lo) * j as f64 / (k - 1) as f64).collect();
                pts.dedup();
                pts
            }
        }
    }

    fn support(&self, lo: f64, hi: f64) -> Support {
        match self.law {
            SamplingLaw::Uniform => vec![(lo, hi)],
            SamplingLaw::Grid(_) => self.points(lo, hi).into_iter().map(|p| (p, p)).collect(),
        }
    }

    /// Possible dry durations of interval `i`.
    pub fn dry_support(&self, i: usize) -> Support {
        let r = &self.intervals[i];
        self.support(r.dry_min, r.dry_max)
    }

    /// Possible rain durations of interval `i`.
    pub fn rain_support(&self, i: usize) -> Support {
        let r = &self.intervals[i];
        self.support(r.rain_min, r.rain_max)
    }

    pub fn intensity_bounds(&self, i: usize) -> (f64, f64) {
        let r = self.intervals[i].intensity;
        (r * (1.0 - self.epsilon), r * (1.0 + self.epsilon))
    }

    /// Largest intensity interval `i` can produce.
    pub fn peak_intensity(&self, i: usize) -> f64 {
        self.intensity_bounds(i).1
    }

    /// Largest intensity anywhere in the program (0 for an empty program).
    pub fn max_intensity(&self) -> f64 {
        (0..self.len()).map(|i| self.peak_intensity(i)).fold(0.0, f64::max)
    }

    /// Draws a value in `[lo, hi]` under the sampling law, conditioned on
    /// exceeding `floor`.
    fn draw<R: Rng + ?Sized>(&self, lo: f64, hi: f64, floor: f64, rng: &mut R) -> Result<f64> {
        match self.law {
            SamplingLaw::Uniform => {
                let lo = lo.max(floor);
                if lo > hi || (floor > 0.0 && floor >= hi) {
                    return Err(PondError::invalid(format!(
                        "elapsed time {floor} exceeds the duration bound {hi}"
                    )));
                }
                Ok(lo + (hi - lo) * rng.random::<f64>())
            }
            SamplingLaw::Grid(_) => {
                let pts: Vec<f64> = self.points(lo, hi).into_iter().filter(|&p| p > floor).collect();
                if pts.is_empty() {
                    return Err(PondError::invalid(format!(
                        "elapsed time {floor} exceeds every duration choice up to {hi}"
                    )));
                }
                Ok(pts[rng.random_range(0..pts.len())])
            }
        }
    }

    fn draw_intensity<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<f64> {
        let (lo, hi) = self.intensity_bounds(i);
        self.draw(lo, hi, f64::NEG_INFINITY, rng)
    }
}

/// Where a rain trace starts: the environment mode, the time already spent
/// in it and the current intensity (ignored while dry).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStart {
    pub mode: EnvMode,
    pub elapsed: f64,
    pub intensity: f64,
}

impl Default for EnvStart {
    fn default() -> Self {
        EnvStart { mode: EnvMode { phase: Phase::Dry, interval: 0 }, elapsed: 0.0, intensity: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainEvent {
    pub time: f64,
    pub mode: EnvMode,
    pub intensity: f64,
}

/// A materialised sample of the rain automaton over a horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct RainTrace {
    pub start: EnvStart,
    pub events: Vec<RainEvent>,
    pub horizon: f64,
}

impl RainTrace {
    /// Intensity in effect at `t`. Events apply from their switch time on.
    pub fn intensity_at(&self, t: f64) -> f64 {
        let idx = self.events.partition_point(|e| e.time <= t);
        if idx == 0 {
            if self.start.mode.phase == Phase::Raining {
                self.start.intensity
            } else {
                0.0
            }
        } else {
            self.events[idx - 1].intensity
        }
    }

    /// Onset times of every rain event in the trace.
    pub fn onsets(&self) -> impl Iterator<Item = &RainEvent> {
        self.events.iter().filter(|e| e.mode.phase == Phase::Raining)
    }
}

/// Samples a trace starting at the beginning of the program (dry, interval 0).
pub fn sample_trace<R: Rng + ?Sized>(prog: &RainProgram, horizon: f64, rng: &mut R) -> Result<RainTrace> {
    sample_trace_from(prog, EnvStart::default(), horizon, rng)
}

/// Samples a trace from an arbitrary automaton state. The duration of the
/// current segment is drawn conditioned on exceeding the elapsed time.
pub fn sample_trace_from<R: Rng + ?Sized>(
    prog: &RainProgram,
    start: EnvStart,
    horizon: f64,
    rng: &mut R,
) -> Result<RainTrace> {
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(PondError::invalid("horizon must be positive"));
    }
    let n = prog.len();
    let mut events = Vec::new();
    let mut i = start.mode.interval;
    let mut phase = start.mode.phase;
    let mut elapsed = start.elapsed;
    // Time at which the current segment began, relative to the trace start.
    let mut t0 = -elapsed;
    while i < n {
        let iv = prog.intervals[i];
        match phase {
            Phase::Dry => {
                let d = prog.draw(iv.dry_min, iv.dry_max, elapsed, rng)?;
                let onset = t0 + d;
                let intensity = prog.draw_intensity(i, rng)?;
                if onset > horizon {
                    break;
                }
                events.push(RainEvent { time: onset, mode: EnvMode { phase: Phase::Raining, interval: i }, intensity });
                phase = Phase::Raining;
                t0 = onset;
            }
            Phase::Raining => {
                let d = prog.draw(iv.rain_min, iv.rain_max, elapsed, rng)?;
                let end = t0 + d;
                if end > horizon {
                    break;
                }
                i += 1;
                events.push(RainEvent { time: end, mode: EnvMode { phase: Phase::Dry, interval: i }, intensity: 0.0 });
                phase = Phase::Dry;
                t0 = end;
            }
        }
        elapsed = 0.0;
    }
    Ok(RainTrace { start, events, horizon })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeSegment {
    pub start: f64,
    pub end: f64,
    pub intensity: f64,
}

/// Piecewise-constant pointwise upper bound on every realisable rain trace.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Envelope {
    pub segments: Vec<EnvelopeSegment>,
}

impl Envelope {
    /// Upper bound at `t`. Segment ends are included.
    pub fn at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.start <= t && t <= s.end)
            .map(|s| s.intensity)
            .fold(0.0, f64::max)
    }

    /// Pieces of the envelope overlapping `[t0, t1]`, shifted to start at 0.
    pub fn window(&self, t0: f64, t1: f64) -> Vec<(f64, f64, f64)> {
        self.segments
            .iter()
            .filter(|s| s.end > t0 && s.start < t1 && s.intensity > 0.0)
            .map(|s| (s.start.max(t0) - t0, s.end.min(t1) - t0, s.intensity))
            .collect()
    }
}

fn inf(s: &Support) -> f64 {
    s.iter().map(|r| r.0).fold(f64::INFINITY, f64::min)
}

fn sup(s: &Support) -> f64 {
    s.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max)
}

/// Interval-cumulative envelope: interval `i` may rain from its earliest
/// feasible onset until its latest feasible end, at its peak intensity.
pub fn worst_case_envelope(prog: &RainProgram, horizon: f64) -> Envelope {
    worst_case_envelope_from(prog, EnvStart::default(), horizon)
}

pub fn worst_case_envelope_from(prog: &RainProgram, start: EnvStart, horizon: f64) -> Envelope {
    let mut spans = Vec::new();
    let (mut early, mut late) = (0.0_f64, 0.0_f64);
    let first = start.mode.interval;
    for i in first..prog.len() {
        let (dry, rain) = (prog.dry_support(i), prog.rain_support(i));
        let skip_dry = i == first && start.mode.phase == Phase::Raining;
        let el = if i == first { start.elapsed } else { 0.0 };
        let (onset_early, onset_late) = if skip_dry {
            (-el, -el)
        } else {
            (early + inf(&dry).max(el) - el, late + sup(&dry) - el)
        };
        let rain_el = if skip_dry { el } else { 0.0 };
        let end_early = onset_early + inf(&rain).max(rain_el);
        let end_late = onset_late + sup(&rain);
        spans.push((onset_early.max(0.0), end_late.min(horizon), prog.peak_intensity(i)));
        early = end_early;
        late = end_late;
    }
    let mut cuts: Vec<f64> = spans.iter().flat_map(|s| [s.0, s.1]).filter(|&t| t < horizon).collect();
    cuts.push(0.0);
    cuts.push(horizon);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut segments: Vec<EnvelopeSegment> = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let v = spans
            .iter()
            .filter(|s| s.0 <= mid && mid <= s.1)
            .map(|s| s.2)
            .fold(0.0, f64::max);
        if v <= 0.0 {
            continue;
        }
        match segments.last_mut() {
            Some(last) if last.end == w[0] && last.intensity == v => last.end = w[1],
            _ => segments.push(EnvelopeSegment { start: w[0], end: w[1], intensity: v }),
        }
    }
    Envelope { segments }
}
