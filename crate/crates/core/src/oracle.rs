//! Brute-force references: exact transitions, laboratory-frame Rabi traces,
//! decaying-sinusoid fits, powder histograms and spectrum distances.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;
use thiserror::Error;

use crate::analytics::{AnalyticsError, AxisKind, Spectrum, UniformAxis};
use crate::experiment::{populations_from_eigensystem, TripletPopulations};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::hamiltonian::{drive_operator, static_hamiltonian, FieldContext, HamiltonianError, LabFrameHamiltonian, ShiftModel, SwTransform};
use crate::spin::{check_resolution, eig_adiabatic, expm_hermitian, slice_propagator, EigenSystem, Label, Operator3, SpinError, State3, TimeDependentHamiltonian, TimeTrace};
use crate::zfs::{Orientation, PowderGrid, ZfsTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("powder grid is empty")]
    EmptyGrid,
    #[error("histogram needs at least 10 bins, got {0}")]
    TooFewBins(usize),
    #[error("no oscillation above the noise floor")]
    NoOscillation,
    #[error("trace too short for a fit: {0}")]
    ShortTrace(String),
    #[error("nothing left to compare after exclusions")]
    EmptyComparison,
    #[error("invalid Rabi request: {0}")]
    Rabi(String),
}

/// Sum with Neumaier compensation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// ∫f over [a, b] for integrands with inverse-square-root singularities at any
/// of the `breaks` (and at the ends). Each piece is halved and mapped with
/// x = end ± (half-width)·t², which cancels the singularity, then integrated with
/// composite Gauss–Legendre.
pub fn integrate_singular(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> f64 {
    const PANELS: usize = 16;
    let (nodes, weights) = crate::zfs::gauss_legendre(24);
    let mut points = vec![a];
    points.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    points.push(b);
    points.sort_by(f64::total_cmp);
    let mut terms = Vec::new();
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        for (end, half) in [(lo, mid - lo), (hi, mid - hi)] {
            // x = end + half·t², dx = 2·half·t dt, t ∈ [0, 1]
            for p in 0..PANELS {
                let (t0, t1) = (p as f64 / PANELS as f64, (p + 1) as f64 / PANELS as f64);
                for (x, wt) in nodes.iter().zip(&weights) {
                    let t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x;
                    let jac = 2.0 * half.abs() * t * 0.5 * (t1 - t0);
                    terms.push(wt * jac * f(end + half * t * t));
                }
            }
        }
    }
    neumaier_sum(terms)
}

/// Squared moments |⟨a|sin χ·Sx + cos χ·Sz|b⟩|² between labelled eigenstates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMoments {
    pub plus_zero: f64,
    pub zero_minus: f64,
    pub plus_minus: f64,
}

#[derive(Debug, Clone)]
pub struct TransitionSet {
    /// E₊₁ − E₀, rad/s.
    pub sq_plus: f64,
    /// E₀ − E₋₁, rad/s.
    pub sq_minus: f64,
    /// E₊₁ − E₋₁, rad/s.
    pub overtone: f64,
    pub moments: TransitionMoments,
    pub eigen: EigenSystem,
}

impl TransitionSet {
    /// Rotating-frame overtone coupling ω₁|⟨+1|drive|−1⟩|, the exact analogue of
    /// the closed-form nutation frequency.
    pub fn overtone_rate(&self, omega1: f64) -> f64 {
        omega1 * self.moments.plus_minus.sqrt()
    }
}

pub fn exact_transitions(ctx: &FieldContext, zfs: &ZfsTensor, o: &Orientation) -> Result<TransitionSet, OracleError> {
    let eig = eig_adiabatic(&static_hamiltonian(ctx, zfs, o))?;
    Ok(transitions_from(eig, &drive_operator(ctx.chi)))
}

fn transitions_from(eig: EigenSystem, op: &Operator3) -> TransitionSet {
    let m = |a, b| eig.matrix_element(a, op, b).norm_sqr();
    let moments = TransitionMoments {
        plus_zero: m(Label::Plus, Label::Zero),
        zero_minus: m(Label::Zero, Label::Minus),
        plus_minus: m(Label::Plus, Label::Minus),
    };
    let (ep, e0, em) = (eig.energy(Label::Plus), eig.energy(Label::Zero), eig.energy(Label::Minus));
    TransitionSet { sq_plus: ep - e0, sq_minus: e0 - em, overtone: (ep - e0) + (e0 - em), moments, eigen: eig }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    /// Full H_static + cosine drive, no rotating-wave approximation.
    Lab,
    /// Effective overtone Hamiltonian in the frame rotating at half the drive frequency.
    Rotating(ShiftModel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiOptions {
    /// Number of trace samples (≥ 16).
    pub samples: usize,
    /// Propagation slices per drive period in the laboratory frame.
    pub steps_per_period: usize,
    /// Initially populated level.
    pub initial: Label,
}

impl Default for RabiOptions {
    fn default() -> Self {
        Self { samples: 400, steps_per_period: 50, initial: Label::Plus }
    }
}

/// Population difference p₊₁ − p₋₁ under a resonant drive.
pub fn rabi_trace(
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    o: &Orientation,
    drive_freq: f64,
    duration: f64,
    frame: Frame,
) -> Result<TimeTrace, OracleError> {
    rabi_trace_with(ctx, zfs, o, drive_freq, duration, frame, RabiOptions::default())
}

fn matrix_power(u: &Operator3, mut k: usize) -> Operator3 {
    let mut result = Operator3::identity();
    let mut base = *u;
    while k > 0 {
        if k & 1 == 1 {
            result = base * result;
        }
        base = base * base;
        k >>= 1;
    }
    result
}

pub fn rabi_trace_with(
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    o: &Orientation,
    drive_freq: f64,
    duration: f64,
    frame: Frame,
    opts: RabiOptions,
) -> Result<TimeTrace, OracleError> {
    if opts.samples < 2 || !(duration > 0.0) || !(drive_freq > 0.0) {
        return Err(OracleError::Rabi(format!(
            "samples = {}, duration = {duration}, drive = {drive_freq}",
            opts.samples
        )));
    }
    let ctx = ctx.with_omega_mw(drive_freq)?;
    match frame {
        Frame::Lab => {
            let h = LabFrameHamiltonian::new(&ctx, zfs, o, drive_freq);
            let eig = eig_adiabatic(&h.h_static)?;
            let period = TAU / drive_freq;
            let dt = period / opts.steps_per_period as f64;
            check_resolution(dt, h.max_frequency())?;
            // stroboscopic sampling: whole drive periods between samples
            let periods = (duration / period).round().max(1.0) as usize;
            let stride = (periods / (opts.samples - 1)).max(1);
            let n = (periods / stride + 1).min(opts.samples);
            let u_period = slice_propagator(&h, 0.0, period, opts.steps_per_period);
            let u_stride = matrix_power(&u_period, stride);
            let mut psi = *eig.state(opts.initial);
            let (mut times, mut values) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for k in 0..n {
                if k > 0 {
                    psi = u_stride * psi;
                }
                times.push((k * stride) as f64 * period);
                values.push(population_difference(&eig, &psi));
            }
            Ok(TimeTrace::new(times, values)?)
        }
        Frame::Rotating(model) => {
            let h = SwTransform::new(&ctx, zfs, o)?.rotating_frame_hamiltonian(model);
            let dt = duration / (opts.samples - 1) as f64;
            let step = expm_hermitian(&h, dt);
            let mut psi = State3::zeros();
            psi[opts.initial.index()] = Complex::new(1.0, 0.0);
            let (mut times, mut values) = (Vec::new(), Vec::new());
            for k in 0..opts.samples {
                if k > 0 {
                    psi = step * psi;
                }
                times.push(k as f64 * dt);
                values.push(psi[0].norm_sqr() - psi[2].norm_sqr());
            }
            Ok(TimeTrace::new(times, values)?)
        }
    }
}

fn population_difference(eig: &EigenSystem, psi: &State3) -> f64 {
    eig.state(Label::Plus).dotc(psi).norm_sqr() - eig.state(Label::Minus).dotc(psi).norm_sqr()
}

/// Populations of all three labelled levels, for conservation checks.
pub fn level_populations(eig: &EigenSystem, psi: &State3) -> [f64; 3] {
    Label::ALL.map(|l| eig.state(l).dotc(psi).norm_sqr())
}

/// a·e^{−Γt}·sin(ωt + φ) + c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub decay_rate: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
    pub residual_norm: f64,
    /// Seed frequency from the discrete spectrum.
    pub seed_frequency: f64,
    /// Whether the fitted frequency stayed within half a spectral bin of the seed.
    pub within_seed_bin: bool,
    pub converged: bool,
}

fn sinusoid_eval(t: &[f64], y: &[f64], p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (a, g, w, ph, c) = (p[0], p[1], p[2], p[3], p[4]);
    let n = t.len();
    let mut r = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, 5);
    for i in 0..n {
        let e = (-g * t[i]).exp();
        let (s, co) = (w * t[i] + ph).sin_cos();
        r[i] = a * e * s + c - y[i];
        j[(i, 0)] = e * s;
        j[(i, 1)] = -t[i] * a * e * s;
        j[(i, 2)] = t[i] * a * e * co;
        j[(i, 3)] = a * e * co;
        j[(i, 4)] = 1.0;
    }
    (r, j)
}

/// Fit a decaying sinusoid, seeded by the peak of the zero-padded spectrum.
pub fn fit_decaying_sinusoid(trace: &TimeTrace) -> Result<FitResult, OracleError> {
    let n = trace.len();
    if n < 16 {
        return Err(OracleError::ShortTrace(format!("{n} samples, need at least 16")));
    }
    let dt = trace.dt();
    let t: Vec<f64> = trace.times.iter().map(|x| x - trace.times[0]).collect();
    let y = &trace.values;
    let mean = y.iter().sum::<f64>() / n as f64;
    let detrended: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rms = (detrended.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if !(rms > 1e-10 * scale.max(f64::MIN_POSITIVE)) || rms == 0.0 {
        return Err(OracleError::NoOscillation);
    }

    let padded = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = detrended.iter().map(|v| Complex::new(*v, 0.0)).collect();
    buf.resize(padded, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mags: Vec<f64> = buf[..padded / 2].iter().map(|z| z.norm()).collect();
    let (k, peak) = mags
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, 0.0), |(bk, bv), (k, v)| if *v > bv { (k, *v) } else { (bk, bv) });
    let mut sorted = mags.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if k == 0 || peak < 5.0 * median {
        return Err(OracleError::NoOscillation);
    }
    // parabolic refinement of the peak bin
    let refine = if k + 1 < mags.len() {
        let (l, c, r) = (mags[k - 1], mags[k], mags[k + 1]);
        let den = l - 2.0 * c + r;
        if den != 0.0 {
            (0.5 * (l - r) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    let seed_w = TAU * (k as f64 + refine) / (padded as f64 * dt);
    let bin_w = TAU / (n as f64 * dt);
    let span = t[n - 1];
    if seed_w * span < 1.5 * TAU * 0.999 {
        return Err(OracleError::ShortTrace(format!(
            "spans {:.2} periods, need 1.5",
            seed_w * span / TAU
        )));
    }

    // linear least squares for A sin + B cos + c at the seed frequency
    let design = DMatrix::from_fn(n, 3, |i, col| match col {
        0 => (seed_w * t[i]).sin(),
        1 => (seed_w * t[i]).cos(),
        _ => 1.0,
    });
    let rhs = DVector::from_column_slice(y);
    let lin = (design.transpose() * &design)
        .cholesky()
        .map(|c| c.solve(&(design.transpose() * rhs)))
        .ok_or(OracleError::NoOscillation)?;
    let amp = lin[0].hypot(lin[1]);
    let phase = lin[1].atan2(lin[0]);
    let p0 = DVector::from_vec(vec![amp, 0.0, seed_w, phase, lin[2]]);

    let out = levenberg_marquardt(p0, LmOptions::default(), |p| sinusoid_eval(&t, y, p));
    let mut p = out.params.clone();
    // canonical signs: a ≥ 0, ω ≥ 0, φ ∈ (−π, π]
    if p[2] < 0.0 {
        p[2] = -p[2];
        p[3] = -p[3];
        p[0] = -p[0];
    }
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[3] += std::f64::consts::PI;
    }
    p[3] = (p[3] + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
    Ok(FitResult {
        amplitude: p[0],
        decay_rate: p[1],
        frequency: p[2],
        phase: p[3],
        offset: p[4],
        residual_norm: out.sum_sq.sqrt(),
        seed_frequency: seed_w,
        within_seed_bin: (p[2] - seed_w).abs() <= 0.5 * bin_w,
        converged: out.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResonanceSource {
    /// Exact E₊₁ − E₋₁ from diagonalisation.
    Exact,
    /// Closed-form resonance with the given second-order weighting.
    Formula(ShiftModel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NutationSource {
    /// ω₁|⟨+1|drive|−1⟩| from exact eigenvectors.
    Exact,
    /// εω₁|f sin χ + g cos χ|.
    Formula,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantity {
    Resonance(ResonanceSource),
    /// Overtone nutation frequency for drive angle `chi`.
    Nutation { chi: f64, source: NutationSource },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Unit,
    /// Squared overtone moment.
    Moment2,
    /// Squared overtone moment times |p₊₁ − p₋₁|.
    Moment2Polarization(TripletPopulations),
}

fn sample(
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    o: &Orientation,
    quantity: Quantity,
    weight: Weight,
) -> Result<(f64, f64), OracleError> {
    let chi = match quantity {
        Quantity::Nutation { chi, .. } => chi,
        Quantity::Resonance(_) => ctx.chi,
    };
    let ctx = ctx.with_drive(ctx.b1, chi)?;
    let needs_exact = !matches!(
        (quantity, weight),
        (Quantity::Resonance(ResonanceSource::Formula(_)) | Quantity::Nutation { source: NutationSource::Formula, .. }, Weight::Unit)
    );
    let exact = if needs_exact { Some(exact_transitions(&ctx, zfs, o)?) } else { None };
    let value = match quantity {
        Quantity::Resonance(ResonanceSource::Exact) => exact.as_ref().unwrap().overtone,
        Quantity::Resonance(ResonanceSource::Formula(model)) => SwTransform::new(&ctx, zfs, o)?.overtone_resonance(model),
        Quantity::Nutation { source: NutationSource::Exact, .. } => exact.as_ref().unwrap().overtone_rate(ctx.omega1()),
        Quantity::Nutation { source: NutationSource::Formula, .. } => SwTransform::new(&ctx, zfs, o)?.overtone_nutation(),
    };
    let w = match weight {
        Weight::Unit => 1.0,
        Weight::Moment2 => exact.as_ref().unwrap().moments.plus_minus,
        Weight::Moment2Polarization(pops) => {
            let t = exact.as_ref().unwrap();
            let p = populations_from_eigensystem(&t.eigen, o, &pops);
            t.moments.plus_minus * (p.plus - p.minus).abs()
        }
    };
    Ok((value, w))
}

/// Deterministic weighted histogram: per-bin weights are sorted before a
/// compensated sum, so the result does not depend on the order of `samples`.
pub fn histogram(samples: &[(f64, f64)], axis: UniformAxis) -> (Vec<f64>, f64) {
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); axis.bins];
    for &(x, w) in samples {
        if let Some(k) = axis.bin_of(x) {
            per_bin[k].push(w);
        }
    }
    let sums = per_bin
        .into_iter()
        .map(|mut ws| {
            ws.sort_by(f64::total_cmp);
            neumaier_sum(ws)
        })
        .collect();
    let mut all: Vec<f64> = samples.iter().map(|s| s.1).collect();
    all.sort_by(f64::total_cmp);
    (sums, neumaier_sum(all))
}

/// Weighted, normalised powder histogram of a per-orientation quantity. Grid
/// weights multiply the quantity weights.
pub fn powder_histogram(
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    grid: &PowderGrid,
    quantity: Quantity,
    weight: Weight,
    axis: UniformAxis,
) -> Result<Spectrum, OracleError> {
    if grid.is_empty() {
        return Err(OracleError::EmptyGrid);
    }
    if axis.bins < 10 {
        return Err(OracleError::TooFewBins(axis.bins));
    }
    let samples: Vec<(f64, f64)> = grid
        .orientations
        .par_iter()
        .zip(grid.weights.par_iter())
        .map(|(o, gw)| sample(ctx, zfs, o, quantity, weight).map(|(v, w)| (v, w * gw)))
        .collect::<Result<_, _>>()?;
    let (sums, total) = histogram(&samples, axis);
    let width = axis.width();
    let intensity: Vec<f64> = sums.iter().map(|s| if total > 0.0 { s / (total * width) } else { 0.0 }).collect();
    let kind = match quantity {
        Quantity::Resonance(_) => AxisKind::Frequency,
        Quantity::Nutation { .. } => AxisKind::NutationRate,
    };
    let mut s = Spectrum::new(kind, axis, intensity);
    let captured: f64 = neumaier_sum(sums.iter().copied());
    s.normalized = total > 0.0 && ((captured / total) - 1.0).abs() < 1e-12;
    Ok(s
        .with_meta("quantity", format!("{quantity:?}"))
        .with_meta("weight", format!("{weight:?}"))
        .with_meta("orientations", grid.len())
        .with_meta("b0_t", ctx.b0))
}

/// L1 distance between two spectra after renormalising each over the bins that
/// do not overlap any excluded interval.
pub fn compare_spectra(a: &Spectrum, b: &Spectrum, exclusions: &[(f64, f64)]) -> Result<f64, OracleError> {
    let same_axis = a.axis.bins == b.axis.bins
        && (a.axis.lo - b.axis.lo).abs() <= 1e-12 * a.axis.lo.abs().max(a.axis.width())
        && (a.axis.hi - b.axis.hi).abs() <= 1e-12 * a.axis.hi.abs().max(a.axis.width());
    if !same_axis || a.axis_kind != b.axis_kind {
        return Err(AnalyticsError::AxisMismatch(format!("{:?} vs {:?}", a.axis, b.axis)).into());
    }
    let axis = a.axis;
    let keep: Vec<bool> = (0..axis.bins)
        .map(|i| {
            let (l, r) = (axis.edge(i), axis.edge(i + 1));
            !exclusions.iter().any(|&(x0, x1)| r > x0.min(x1) && l < x0.max(x1))
        })
        .collect();
    let w = axis.width();
    let mass = |s: &Spectrum| neumaier_sum(s.intensity.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| v * w));
    let (ma, mb) = (mass(a), mass(b));
    if !(ma > 0.0) || !(mb > 0.0) {
        return Err(OracleError::EmptyComparison);
    }
    Ok(neumaier_sum(
        (0..axis.bins).filter(|i| keep[*i]).map(|i| (a.intensity[i] / ma - b.intensity[i] / mb).abs() * w),
    ))
}
