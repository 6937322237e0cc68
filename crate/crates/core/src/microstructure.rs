//! Axial microstructures: one trajectory `s ↦ T_s ω̃` of a stationary
//! dynamical system, mapped to a material phase.
//!
//! Three systems are provided: periodic layouts on the unit cell, a
//! quasiperiodic threshold rule and an alternating renewal process with
//! exponential segment lengths. Spatial (Birkhoff) averages are integrated
//! segment by segment, so piecewise-constant observables carry no quadrature
//! error.

use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{ElasticityTensor, MaterialBlock};

/// Largest denominator inspected when rejecting rational frequency ratios.
const MAX_RATIO_DENOMINATOR: i64 = 10_000;
const RATIONAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Consecutive `(phase, fraction)` pieces filling `[0, 1)`.
    Periodic { pieces: Vec<(usize, f64)> },
    /// Phase 0 where `cos 2πf₁s + cos 2πf₂s ≥ threshold`, phase 1 elsewhere.
    Quasiperiodic { f1: f64, f2: f64, threshold: f64 },
    /// Phases cycle 0, 1, …; a segment of phase `p` has exponential length
    /// with mean `mean_lengths[p]`.
    Renewal { mean_lengths: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrostructureSpec {
    pub phases: Vec<ElasticityTensor>,
    pub layout: Layout,
    pub seed: u64,
}

impl MicrostructureSpec {
    /// One phase everywhere.
    pub fn homogeneous(tensor: ElasticityTensor) -> Self {
        Self { phases: vec![tensor], layout: Layout::Periodic { pieces: vec![(0, 1.0)] }, seed: 0 }
    }

    /// Periodic layout where phase `i` occupies fraction `fractions[i]` of the cell, in order.
    pub fn periodic(phases: Vec<ElasticityTensor>, fractions: &[f64]) -> Self {
        let pieces = fractions.iter().copied().enumerate().collect();
        Self { phases, layout: Layout::Periodic { pieces }, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMicrostructure(m));
        if self.phases.is_empty() {
            return bad("at least one phase is required".into());
        }
        let n = self.phases.len();
        match &self.layout {
            Layout::Periodic { pieces } => {
                if pieces.is_empty() {
                    return bad("periodic layout needs at least one piece".into());
                }
                let mut total = 0.0;
                for &(p, f) in pieces {
                    if p >= n {
                        return bad(format!("phase index {p} out of range (have {n} phases)"));
                    }
                    if !(f > 0.0) || !f.is_finite() {
                        return bad(format!("volume fraction {f} must be positive"));
                    }
                    total += f;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("volume fractions sum to {total}, expected 1"));
                }
            }
            Layout::Quasiperiodic { f1, f2, threshold } => {
                if n != 2 {
                    return bad(format!("quasiperiodic layout needs exactly 2 phases (have {n})"));
                }
                if !(*f1 > 0.0 && *f2 > 0.0) || !f1.is_finite() || !f2.is_finite() {
                    return bad("frequencies must be positive and finite".into());
                }
                if !(threshold.abs() < 2.0) {
                    return bad(format!("threshold {threshold} must lie in (-2, 2)"));
                }
                if let Some((p, q)) = rational_approximation(f1 / f2) {
                    return bad(format!("frequency ratio {} is rational ({p}/{q}) to working precision", f1 / f2));
                }
            }
            Layout::Renewal { mean_lengths } => {
                if mean_lengths.len() != n {
                    return bad(format!("{} mean lengths for {n} phases", mean_lengths.len()));
                }
                if mean_lengths.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
                    return bad("mean segment lengths must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }
}

/// Returns `(p, q)` when `x` is within `1e-12` of a fraction with denominator
/// at most `10⁴`, found through its continued-fraction convergents.
pub fn rational_approximation(x: f64) -> Option<(i64, i64)> {
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let ai = a as i64;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
        if k2 > MAX_RATIO_DENOMINATOR {
            return None;
        }
        if (x - h2 as f64 / k2 as f64).abs() <= RATIONAL_TOL * x.abs().max(1.0) {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac <= 0.0 {
            return Some((h1, k1));
        }
        r = 1.0 / frac;
    }
    None
}

/// A piece `[start, end)` of constant phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub phase: usize,
}

#[derive(Debug, Default, Clone)]
struct RenewalCache {
    /// b₀, b₁, b₂, … (segment k ≥ 0 is `[b_k, b_{k+1})`)
    right: Vec<f64>,
    /// b₋₁, b₋₂, …
    left: Vec<f64>,
}

/// A concrete trajectory of the dynamical system.
#[derive(Debug)]
pub struct MicrostructureRealization {
    spec: MicrostructureSpec,
    origin_phase: usize,
    cache: RwLock<RenewalCache>,
}

impl Clone for MicrostructureRealization {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            origin_phase: self.origin_phase,
            cache: RwLock::new(self.cache.read().expect("cache lock").clone()),
        }
    }
}

fn stream_rng(seed: u64, tag: u8, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = tag;
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Builds a realization; renewal boundaries are drawn lazily from a
/// counter-based generator keyed by `(seed, segment index)`.
pub fn realize(spec: &MicrostructureSpec) -> Result<MicrostructureRealization> {
    spec.validate()?;
    let mut cache = RenewalCache::default();
    let mut origin_phase = 0;
    if let Layout::Renewal { mean_lengths } = &spec.layout {
        let mut rng = stream_rng(spec.seed, 1, 0);
        origin_phase = rng.random_range(0..mean_lengths.len());
        let u: f64 = rng.random();
        let first = segment_length(spec.seed, mean_lengths, origin_phase, 0);
        cache.right.push(-u * first);
    }
    Ok(MicrostructureRealization { spec: spec.clone(), origin_phase, cache: RwLock::new(cache) })
}

fn segment_length(seed: u64, means: &[f64], phase: usize, index: i64) -> f64 {
    let mut rng = stream_rng(seed, 0, index as u64);
    Exp::new(1.0 / means[phase]).expect("positive mean").sample(&mut rng)
}

impl MicrostructureRealization {
    pub fn spec(&self) -> &MicrostructureSpec {
        &self.spec
    }

    pub fn n_phases(&self) -> usize {
        self.spec.phases.len()
    }

    pub fn tensor(&self, phase: usize) -> &ElasticityTensor {
        &self.spec.phases[phase]
    }

    /// Period of the layout, when it has one.
    pub fn period(&self) -> Option<f64> {
        match self.spec.layout {
            Layout::Periodic { .. } => Some(1.0),
            _ => None,
        }
    }

    fn renewal_phase(&self, index: i64) -> usize {
        let n = self.n_phases() as i64;
        (self.origin_phase as i64 + index).rem_euclid(n) as usize
    }

    /// Boundary `b_k` of the renewal sequence, extending the cache as needed.
    fn renewal_boundary(&self, k: i64) -> f64 {
        let Layout::Renewal { mean_lengths } = &self.spec.layout else { unreachable!() };
        {
            let c = self.cache.read().expect("cache lock");
            if k >= 0 && (k as usize) < c.right.len() {
                return c.right[k as usize];
            }
            if k < 0 && ((-k - 1) as usize) < c.left.len() {
                return c.left[(-k - 1) as usize];
            }
        }
        let mut c = self.cache.write().expect("cache lock");
        if k >= 0 {
            while c.right.len() <= k as usize {
                let j = c.right.len() as i64 - 1;
                let last = *c.right.last().expect("origin boundary");
                let len = segment_length(self.spec.seed, mean_lengths, self.renewal_phase(j), j);
                c.right.push(last + len);
            }
            c.right[k as usize]
        } else {
            while c.left.len() < (-k) as usize {
                let j = -(c.left.len() as i64) - 1;
                let last = c.left.last().copied().unwrap_or(c.right[0]);
                let len = segment_length(self.spec.seed, mean_lengths, self.renewal_phase(j), j);
                c.left.push(last - len);
            }
            c.left[(-k - 1) as usize]
        }
    }

    /// Index of the renewal segment containing `s`.
    fn renewal_index(&self, s: f64) -> i64 {
        if s >= self.renewal_boundary(0) {
            let mut hi = 1i64;
            while self.renewal_boundary(hi) <= s {
                hi *= 2;
            }
            let mut lo = hi / 2;
            // b_lo <= s < b_hi
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if self.renewal_boundary(mid) <= s {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        } else {
            let mut lo = -1i64;
            while self.renewal_boundary(lo) > s {
                lo *= 2;
            }
            let mut hi = lo / 2;
            // b_lo <= s < b_hi
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if self.renewal_boundary(mid) <= s {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    }

    fn quasi_value(&self, s: f64) -> f64 {
        let Layout::Quasiperiodic { f1, f2, threshold } = self.spec.layout else { unreachable!() };
        let tau = std::f64::consts::TAU;
        (tau * f1 * s).cos() + (tau * f2 * s).cos() - threshold
    }

    /// Phase at scaled axial coordinate `s`.
    pub fn phase_at(&self, s: f64) -> usize {
        match &self.spec.layout {
            Layout::Periodic { pieces } => {
                let t = s - s.floor();
                let mut acc = 0.0;
                for &(p, f) in pieces {
                    acc += f;
                    if t < acc {
                        return p;
                    }
                }
                pieces.last().expect("non-empty").0
            }
            Layout::Quasiperiodic { .. } => usize::from(self.quasi_value(s) < 0.0),
            Layout::Renewal { .. } => self.renewal_phase(self.renewal_index(s)),
        }
    }

    /// Constant-phase pieces covering `[a, b]` in increasing order.
    pub fn segments(&self, a: f64, b: f64) -> Vec<Segment> {
        let mut out = Vec::new();
        if !(b > a) {
            return out;
        }
        let mut push = |start: f64, end: f64, phase: usize| {
            let start = start.max(a);
            let end = end.min(b);
            if end > start {
                match out.last_mut() {
                    Some(Segment { end: e, phase: p, .. }) if *p == phase && *e == start => *e = end,
                    _ => out.push(Segment { start, end, phase }),
                }
            }
        };
        match &self.spec.layout {
            Layout::Periodic { pieces } => {
                let mut cell = a.floor();
                while cell < b {
                    let mut acc = 0.0;
                    for (i, &(p, f)) in pieces.iter().enumerate() {
                        let lo = cell + acc;
                        acc += f;
                        let hi = if i + 1 == pieces.len() { cell + 1.0 } else { cell + acc };
                        push(lo, hi, p);
                    }
                    cell += 1.0;
                }
            }
            Layout::Renewal { .. } => {
                let mut k = self.renewal_index(a);
                loop {
                    let lo = self.renewal_boundary(k);
                    if lo >= b {
                        break;
                    }
                    push(lo, self.renewal_boundary(k + 1), self.renewal_phase(k));
                    k += 1;
                }
            }
            Layout::Quasiperiodic { f1, f2, .. } => {
                let step = 1.0 / (64.0 * (f1 + f2));
                let n = ((b - a) / step).ceil().max(1.0) as usize;
                let h = (b - a) / n as f64;
                let mut start = a;
                let mut prev_x = a;
                let mut prev_v = self.quasi_value(a);
                for i in 1..=n {
                    let x = if i == n { b } else { a + h * i as f64 };
                    let v = self.quasi_value(x);
                    if (prev_v < 0.0) != (v < 0.0) {
                        let root = self.bisect(prev_x, x);
                        let phase = usize::from(self.quasi_value(0.5 * (start + root)) < 0.0);
                        push(start, root, phase);
                        start = root;
                    }
                    prev_x = x;
                    prev_v = v;
                }
                let phase = usize::from(self.quasi_value(0.5 * (start + b)) < 0.0);
                push(start, b, phase);
            }
        }
        out
    }

    fn bisect(&self, mut lo: f64, mut hi: f64) -> f64 {
        let neg_lo = self.quasi_value(lo) < 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if (self.quasi_value(mid) < 0.0) == neg_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Stationary (ensemble) mean of a per-phase observable.
    pub fn ensemble_mean(&self, g: &[f64]) -> f64 {
        match &self.spec.layout {
            Layout::Periodic { pieces } => pieces.iter().map(|&(p, f)| f * g[p]).sum(),
            Layout::Renewal { mean_lengths } => {
                let total: f64 = mean_lengths.iter().sum();
                mean_lengths.iter().zip(g).map(|(m, v)| m * v).sum::<f64>() / total
            }
            Layout::Quasiperiodic { threshold, .. } => {
                // Equidistribution on the 2-torus: P[cos 2πa + cos 2πb ≥ θ].
                let n = 200_000;
                let mut acc = 0.0;
                for i in 0..n {
                    let a = (i as f64 + 0.5) / n as f64;
                    let c = (threshold - (std::f64::consts::TAU * a).cos()).clamp(-1.0, 1.0);
                    acc += c.acos() / std::f64::consts::PI;
                }
                let p0 = acc / n as f64;
                p0 * g[0] + (1.0 - p0) * g[1]
            }
        }
    }
}

/// `(1/T) ∫₀ᵀ g(phase(s)) ds`, integrated exactly over constant-phase pieces.
pub fn birkhoff_average(r: &MicrostructureRealization, g: &[f64], window: f64) -> Result<f64> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::InvalidParameter(format!("window length must be positive (got {window})")));
    }
    if g.len() != r.n_phases() {
        return Err(Error::ShapeMismatch(format!("{} values for {} phases", g.len(), r.n_phases())));
    }
    let acc: f64 = r.segments(0.0, window).iter().map(|s| (s.end - s.start) * g[s.phase]).sum();
    Ok(acc / window)
}

/// JSON microstructure block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MicrostructureBlock {
    Periodic {
        fractions: Vec<f64>,
        phases: Vec<MaterialBlock>,
        #[serde(default)]
        seed: u64,
    },
    Quasiperiodic {
        frequencies: [f64; 2],
        threshold: f64,
        phases: Vec<MaterialBlock>,
        #[serde(default)]
        seed: u64,
    },
    Renewal {
        mean_lengths: Vec<f64>,
        phases: Vec<MaterialBlock>,
        #[serde(default)]
        seed: u64,
    },
}

impl MicrostructureBlock {
    pub fn phases(&self) -> &[MaterialBlock] {
        match self {
            Self::Periodic { phases, .. } | Self::Quasiperiodic { phases, .. } | Self::Renewal { phases, .. } => phases,
        }
    }

    pub fn to_spec(&self) -> Result<MicrostructureSpec> {
        let phases = self.phases().iter().map(MaterialBlock::tensor).collect::<Result<Vec<_>>>()?;
        let spec = match self {
            Self::Periodic { fractions, seed, .. } => {
                if fractions.len() != phases.len() {
                    return Err(Error::InvalidMicrostructure(format!(
                        "{} fractions for {} phases",
                        fractions.len(),
                        phases.len()
                    )));
                }
                MicrostructureSpec { seed: *seed, ..MicrostructureSpec::periodic(phases, fractions) }
            }
            Self::Quasiperiodic { frequencies, threshold, seed, .. } => MicrostructureSpec {
                phases,
                layout: Layout::Quasiperiodic { f1: frequencies[0], f2: frequencies[1], threshold: *threshold },
                seed: *seed,
            },
            Self::Renewal { mean_lengths, seed, .. } => MicrostructureSpec {
                phases,
                layout: Layout::Renewal { mean_lengths: mean_lengths.clone() },
                seed: *seed,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}
