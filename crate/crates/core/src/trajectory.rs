//! Quasi-periodic trajectories: a constant offset plus a finite sum of
//! cosine components.
//!
//! Signals of this shape are closed under superposition, scaling, and the
//! frequency responses of damped linear mechanisms, which makes them the
//! natural value type for asymptotic dynamics throughout this crate. The
//! canonical form (positive amplitudes, positive pairwise-distinct
//! frequencies, phases in `[0, 2π)`) is what makes asymptotic equality
//! decidable: two canonical signals agree asymptotically iff their offsets
//! and per-frequency phasors agree.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Components whose canonical amplitude falls below this threshold are
/// dropped during canonicalization. Far below every verification tolerance
/// in the crate, well above accumulated double-precision rounding.
pub const AMPLITUDE_EPSILON: f64 = 1e-9;

/// Angular frequencies closer than this are merged into one phasor during
/// canonicalization. Frequencies here are always specified or propagated
/// exactly, never estimated, so this only has to absorb parse/compute
/// round-off.
pub const FREQUENCY_MERGE_EPSILON: f64 = 1e-12;

/// A single cosine term `amplitude * cos(angular_frequency * t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosComponent {
    pub amplitude: f64,
    pub angular_frequency: f64,
    pub phase: f64,
}

impl CosComponent {
    pub fn new(amplitude: f64, angular_frequency: f64, phase: f64) -> Self {
        Self { amplitude, angular_frequency, phase }
    }

    /// The component as a complex phasor `A e^{iφ}`.
    pub fn phasor(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

/// A DC offset plus finitely many cosine components.
///
/// No invariants are imposed at construction; call [`canonicalize`] to
/// merge, fold, and normalize. All operations are pure and the type is
/// freely shareable across threads.
///
/// [`canonicalize`]: QuasiPeriodicSignal::canonicalize
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuasiPeriodicSignal {
    pub offset: f64,
    pub components: Vec<CosComponent>,
}

impl QuasiPeriodicSignal {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(offset: f64) -> Self {
        Self { offset, components: Vec::new() }
    }

    pub fn cosine(amplitude: f64, angular_frequency: f64, phase: f64) -> Self {
        Self { offset: 0.0, components: vec![CosComponent::new(amplitude, angular_frequency, phase)] }
    }

    /// Builder-style component append.
    pub fn with_component(mut self, amplitude: f64, angular_frequency: f64, phase: f64) -> Self {
        self.components.push(CosComponent::new(amplitude, angular_frequency, phase));
        self
    }

    /// Evaluates `offset + Σ_j A_j cos(ω_j t + φ_j)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.offset
            + self
                .components
                .iter()
                .map(|c| c.amplitude * (c.angular_frequency * t + c.phase).cos())
                .sum::<f64>()
    }

    /// Rewrites the signal into canonical form.
    ///
    /// Equal-frequency components are merged by complex phasor addition,
    /// zero-frequency components fold into the offset, negative amplitudes
    /// become a phase shift of π, phases are reduced mod 2π, and components
    /// with merged amplitude below [`AMPLITUDE_EPSILON`] are dropped.
    /// Pointwise values are preserved up to one `AMPLITUDE_EPSILON` per
    /// dropped component.
    pub fn canonicalize(&self) -> Self {
        let mut offset = self.offset;
        // (frequency, summed phasor), frequency made non-negative first:
        // cos(-ωt + φ) = cos(ωt - φ).
        let mut terms: Vec<(f64, Complex64)> = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let (omega, phase) = if c.angular_frequency < 0.0 {
                (-c.angular_frequency, -c.phase)
            } else {
                (c.angular_frequency, c.phase)
            };
            if omega <= FREQUENCY_MERGE_EPSILON {
                offset += c.amplitude * phase.cos();
            } else {
                terms.push((omega, Complex64::from_polar(c.amplitude, phase)));
            }
        }
        terms.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut components = Vec::new();
        let mut i = 0;
        while i < terms.len() {
            let (freq, mut phasor) = terms[i];
            let mut j = i + 1;
            while j < terms.len() && terms[j].0 - freq <= FREQUENCY_MERGE_EPSILON {
                phasor += terms[j].1;
                j += 1;
            }
            let amplitude = phasor.norm();
            if amplitude > AMPLITUDE_EPSILON {
                components.push(CosComponent::new(amplitude, freq, phasor.arg().rem_euclid(TAU)));
            }
            i = j;
        }
        Self { offset, components }
    }

    /// Pointwise sum, canonicalized.
    pub fn superpose(&self, other: &Self) -> Self {
        let mut components = self.components.clone();
        components.extend_from_slice(&other.components);
        Self { offset: self.offset + other.offset, components }.canonicalize()
    }

    /// Pointwise scaling, canonicalized.
    pub fn scale(&self, factor: f64) -> Self {
        Self {
            offset: self.offset * factor,
            components: self
                .components
                .iter()
                .map(|c| CosComponent::new(c.amplitude * factor, c.angular_frequency, c.phase))
                .collect(),
        }
        .canonicalize()
    }

    /// Whether the two signals describe the same asymptotic behaviour.
    ///
    /// True iff the canonical forms match: offsets within `tol`, component
    /// frequencies matched within `tol`, and each matched pair's phasor
    /// difference magnitude within `tol` (unmatched components must have
    /// amplitude within `tol`).
    pub fn asymptotically_equal(&self, other: &Self, tol: f64) -> bool {
        assert!(tol > 0.0, "tolerance must be positive");
        self.phasor_distance_with(other, tol) <= tol
    }

    /// Largest disagreement between canonical forms: the max of the offset
    /// difference and the per-frequency phasor difference magnitudes
    /// (frequencies matched within `1e-9`).
    pub fn phasor_distance(&self, other: &Self) -> f64 {
        self.phasor_distance_with(other, 1e-9)
    }

    fn phasor_distance_with(&self, other: &Self, freq_tol: f64) -> f64 {
        let a = self.canonicalize();
        let b = other.canonicalize();
        let mut worst = (a.offset - b.offset).abs();
        let mut i = 0;
        let mut j = 0;
        while i < a.components.len() || j < b.components.len() {
            let ca = a.components.get(i);
            let cb = b.components.get(j);
            match (ca, cb) {
                (Some(x), Some(y)) if (x.angular_frequency - y.angular_frequency).abs() <= freq_tol => {
                    worst = worst.max((x.phasor() - y.phasor()).norm());
                    i += 1;
                    j += 1;
                }
                (Some(x), Some(y)) => {
                    if x.angular_frequency < y.angular_frequency {
                        worst = worst.max(x.amplitude);
                        i += 1;
                    } else {
                        worst = worst.max(y.amplitude);
                        j += 1;
                    }
                }
                (Some(x), None) => {
                    worst = worst.max(x.amplitude);
                    i += 1;
                }
                (None, Some(y)) => {
                    worst = worst.max(y.amplitude);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        worst
    }

    /// Canonical angular frequencies present in the signal, ascending.
    pub fn frequencies(&self) -> Vec<f64> {
        self.canonicalize().components.iter().map(|c| c.angular_frequency).collect()
    }

    /// Phasor of the canonical component at `omega` (zero if absent,
    /// matched within `1e-9`).
    pub fn phasor_at(&self, omega: f64) -> Complex64 {
        self.canonicalize()
            .components
            .iter()
            .find(|c| (c.angular_frequency - omega).abs() <= 1e-9)
            .map(|c| c.phasor())
            .unwrap_or(Complex64::new(0.0, 0.0))
    }
}

/// Per-variable trajectories for a subset of the system's variables.
///
/// Bundles are modular: any per-variable signals combine into a valid
/// bundle and bundles restrict freely to sub-label-sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBundle {
    signals: BTreeMap<usize, QuasiPeriodicSignal>,
}

impl TrajectoryBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: usize, signal: QuasiPeriodicSignal) {
        self.signals.insert(label, signal);
    }

    /// Builder-style insert.
    pub fn with(mut self, label: usize, signal: QuasiPeriodicSignal) -> Self {
        self.insert(label, signal);
        self
    }

    pub fn get(&self, label: usize) -> Option<&QuasiPeriodicSignal> {
        self.signals.get(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.signals.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &QuasiPeriodicSignal)> {
        self.signals.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.signals.contains_key(&label)
    }

    /// Restriction to the given labels (labels absent from the bundle are
    /// ignored).
    pub fn restrict(&self, labels: &[usize]) -> Self {
        Self {
            signals: self
                .signals
                .iter()
                .filter(|(k, _)| labels.contains(k))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        }
    }

    /// Union of two bundles; on a shared label the entry from `other` wins.
    pub fn merge(&self, other: &Self) -> Self {
        let mut signals = self.signals.clone();
        for (k, v) in &other.signals {
            signals.insert(*k, v.clone());
        }
        Self { signals }
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.signals.keys().all(|k| !other.signals.contains_key(k))
    }

    /// Largest per-variable [`QuasiPeriodicSignal::phasor_distance`] over
    /// the union of labels; a label present on one side only counts as
    /// distance from the zero signal.
    pub fn distance(&self, other: &Self) -> f64 {
        let zero = QuasiPeriodicSignal::zero();
        let mut worst: f64 = 0.0;
        for label in self.signals.keys().chain(other.signals.keys()) {
            let a = self.signals.get(label).unwrap_or(&zero);
            let b = other.signals.get(label).unwrap_or(&zero);
            worst = worst.max(a.phasor_distance(b));
        }
        worst
    }
}

impl FromIterator<(usize, QuasiPeriodicSignal)> for TrajectoryBundle {
    fn from_iter<T: IntoIterator<Item = (usize, QuasiPeriodicSignal)>>(iter: T) -> Self {
        Self { signals: iter.into_iter().collect() }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} samples for {frequencies} frequencies, got {got}")]
    InsufficientSamples { needed: usize, got: usize, frequencies: usize },
    #[error("fit frequencies must be positive and finite, got {0}")]
    InvalidFrequency(f64),
    #[error("fit frequencies must be pairwise distinct, {0} appears twice")]
    DuplicateFrequency(f64),
    #[error("sample span {span} is shorter than one period ({period}) of the slowest frequency")]
    SpanTooShort { span: f64, period: f64 },
    #[error("degenerate least-squares design (aliased or collinear sample grid)")]
    Degenerate,
}

/// A least-squares sinusoid fit together with its root-mean-square residual.
#[derive(Debug, Clone)]
pub struct SinusoidFit {
    pub signal: QuasiPeriodicSignal,
    pub residual_rms: f64,
}

/// Least-squares fit of `value ≈ c0 + Σ_k (a_k cos(ω_k t) + b_k sin(ω_k t))`
/// for the given known frequencies, returned in offset/amplitude/phase form.
///
/// Requires at least `2·|frequencies| + 1` samples spanning one full period
/// of the slowest frequency. Solved through the normal equations; a
/// rank-deficient design (e.g. an aliased sample grid) is reported rather
/// than silently pseudo-inverted.
pub fn fit_quasi_periodic(
    samples: &[(f64, f64)],
    frequencies: &[f64],
) -> Result<SinusoidFit, FitError> {
    for &f in frequencies {
        if !(f.is_finite() && f > 0.0) {
            return Err(FitError::InvalidFrequency(f));
        }
    }
    let mut sorted = frequencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    for pair in sorted.windows(2) {
        if pair[1] - pair[0] <= FREQUENCY_MERGE_EPSILON {
            return Err(FitError::DuplicateFrequency(pair[0]));
        }
    }

    let n_params = 1 + 2 * frequencies.len();
    if samples.len() < n_params {
        return Err(FitError::InsufficientSamples {
            needed: n_params,
            got: samples.len(),
            frequencies: frequencies.len(),
        });
    }
    if let Some(&slowest) = sorted.first() {
        let t_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let t_max = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let span = t_max - t_min;
        let period = TAU / slowest;
        if span < period {
            return Err(FitError::SpanTooShort { span, period });
        }
    }

    let basis = |t: f64, row: &mut Vec<f64>| {
        row.clear();
        row.push(1.0);
        for &w in &sorted {
            row.push((w * t).cos());
            row.push((w * t).sin());
        }
    };

    // Normal equations: tiny dense system regardless of sample count.
    let mut gram = DMatrix::<f64>::zeros(n_params, n_params);
    let mut rhs = DVector::<f64>::zeros(n_params);
    let mut row = Vec::with_capacity(n_params);
    for &(t, y) in samples {
        basis(t, &mut row);
        for i in 0..n_params {
            rhs[i] += row[i] * y;
            for j in 0..n_params {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }

    let svd = gram.svd(true, true);
    let sv = &svd.singular_values;
    let (s_max, s_min) = (sv.max(), sv.min());
    if !(s_min > 1e-12 * s_max && s_min > 0.0) {
        return Err(FitError::Degenerate);
    }
    let coeffs = svd.solve(&rhs, 0.0).map_err(|_| FitError::Degenerate)?;

    let mut sq_sum = 0.0;
    for &(t, y) in samples {
        basis(t, &mut row);
        let predicted: f64 = row.iter().zip(coeffs.iter()).map(|(b, c)| b * c).sum();
        sq_sum += (y - predicted) * (y - predicted);
    }
    let residual_rms = (sq_sum / samples.len() as f64).sqrt();

    let mut signal = QuasiPeriodicSignal::constant(coeffs[0]);
    for (k, &w) in sorted.iter().enumerate() {
        let a = coeffs[1 + 2 * k];
        let b = coeffs[2 + 2 * k];
        // a cos(wt) + b sin(wt) = A cos(wt + φ) with A cos φ = a, A sin φ = -b.
        signal = signal.with_component(a.hypot(b), w, (-b).atan2(a));
    }
    Ok(SinusoidFit { signal: signal.canonicalize(), residual_rms })
}
