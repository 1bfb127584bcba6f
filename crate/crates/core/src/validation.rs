//! Acceptance suite: each criterion recomputes its quantity from the public API
//! and compares against a pinned tolerance.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{
    lineshape_frequency, nutation_distribution, shift_width, NutationDistribution, NutationGeometry, OvertoneLineshape,
    UniformAxis,
};
use crate::experiment::{
    fit_buildup, overtone_polarization_map, signal_ratio_estimate, BuildupModel, ReducedIse, TripletPopulations,
};
use crate::hamiltonian::{FieldContext, ShiftModel, SwTransform};
use crate::oracle::{
    compare_spectra, exact_transitions, fit_decaying_sinusoid, histogram, integrate_singular, powder_histogram, rabi_trace,
    Frame, NutationSource, Quantity, ResonanceSource, Weight,
};
use crate::spin::TimeTrace;
use crate::zfs::{powder_grid, PowderScheme, ZfsTensor, GAMMA_E};

/// Microwave frequency of the reference experiments.
pub const MW_FREQUENCY: f64 = TAU * 11.6e9;
/// Default seed for every random grid in the suite.
pub const DEFAULT_SEED: u64 = 20_240_611;

// Tolerances, pinned.
const NORMALIZATION_TOL: f64 = 1e-6;
const LINESHAPE_L1_MAX: f64 = 0.05;
const LINESHAPE_BINS: usize = 120;
/// C in |ω_exact − ω_formula| ≤ C·ε³ω_e, frozen from the second-order measurement (0.54).
const RESONANCE_ERROR_C: f64 = 1.0;
const SCALING_WINDOW: (f64, f64) = (6.0, 10.0);
const NUTATION_REL_TOL: f64 = 0.05;
const NUTATION_DIST_L1_MAX: f64 = 0.05;
const POLARIZATION_TOL: f64 = 0.005;
const SIGNAL_RATIO_WINDOW: (f64, f64) = (18.0, 21.0);
const RABI_RATIO_WINDOW: (f64, f64) = (0.2, 0.4);
const EPSILON_RATIO_TOL: f64 = 0.15;
const PLATEAU_INCREMENT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Criteria 1–3.
    Lineshape,
    /// Criteria 4–5.
    Nutation,
    /// Criteria 6–9: reference shift, polarization, signal and Rabi-rate numbers.
    Reference,
    /// Criterion 10.
    Ise,
    /// Criterion 11.
    Fit,
    All,
}

impl Suite {
    pub fn criteria(self) -> Vec<u8> {
        match self {
            Suite::Lineshape => vec![1, 2, 3],
            Suite::Nutation => vec![4, 5],
            Suite::Reference => vec![6, 7, 8, 9],
            Suite::Ise => vec![10],
            Suite::Fit => vec![11],
            Suite::All => (1..=11).collect(),
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "lineshape" => Suite::Lineshape,
            "nutation" => Suite::Nutation,
            "reference" => Suite::Reference,
            "ise" => Suite::Ise,
            "fit" => Suite::Fit,
            "all" => Suite::All,
            other => return Err(format!("unknown suite `{other}` (lineshape|nutation|reference|ise|fit|all)")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Weighting of the closed forms under test.
    pub shift_model: ShiftModel,
    pub seed: u64,
    /// Also report the other shift model for criteria 2 and 3.
    pub informational: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { shift_model: ShiftModel::default(), seed: DEFAULT_SEED, informational: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Wall-clock time; left out of the JSON so reports are reproducible.
    #[serde(skip_serializing)]
    pub elapsed_s: f64,
    /// Extra measurements that do not affect `passed`.
    pub info: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub suite: Suite,
    pub passed: bool,
    pub outcomes: Vec<CriterionOutcome>,
}

pub fn criterion_name(id: u8) -> &'static str {
    match id {
        1 => "lineshape normalization",
        2 => "lineshape oracle equivalence",
        3 => "resonance formula accuracy and scaling",
        4 => "nutation formula accuracy",
        5 => "nutation distributions",
        6 => "shift and width",
        7 => "powder overtone polarization",
        8 => "signal ratio",
        9 => "Rabi rate ratios",
        10 => "ISE properties",
        11 => "buildup fit recovery",
        _ => "unknown",
    }
}

struct Check {
    passed: bool,
    detail: String,
    info: Vec<String>,
}

impl Check {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail, info: Vec::new() }
    }

    fn failed(err: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {err}"))
    }
}

pub fn run_criterion(id: u8, opts: &ValidationOptions) -> CriterionOutcome {
    let start = Instant::now();
    let (check, budget) = match id {
        1 => (lineshape_normalization(), 1.0),
        2 => (lineshape_equivalence(opts), 60.0),
        3 => (resonance_accuracy(opts), f64::INFINITY),
        4 => (nutation_accuracy(opts), 300.0),
        5 => (nutation_distributions(opts), f64::INFINITY),
        6 => (shift_width_numbers(), f64::INFINITY),
        7 => (polarization_numbers(opts), 30.0),
        8 => (signal_ratio(), f64::INFINITY),
        9 => (rabi_ratios(opts), f64::INFINITY),
        10 => (ise_properties(), f64::INFINITY),
        11 => (fit_recovery(opts), f64::INFINITY),
        _ => (Check::new(false, format!("no criterion {id}")), f64::INFINITY),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let in_budget = elapsed < budget;
    let mut detail = check.detail;
    if !in_budget {
        detail.push_str(&format!("; runtime {elapsed:.1} s exceeds {budget} s"));
    }
    CriterionOutcome {
        id,
        name: criterion_name(id),
        passed: check.passed && in_budget,
        detail,
        elapsed_s: elapsed,
        info: check.info,
    }
}

pub fn run_suite(suite: Suite, opts: &ValidationOptions) -> ValidationReport {
    let outcomes: Vec<CriterionOutcome> = suite.criteria().into_iter().map(|id| run_criterion(id, opts)).collect();
    ValidationReport { suite, passed: outcomes.iter().all(|o| o.passed), outcomes }
}

fn axial_pentacene() -> ZfsTensor {
    ZfsTensor::pentacene().with_eta_zero()
}

fn at(b0: f64) -> FieldContext {
    FieldContext::at_field(b0).expect("valid field")
}

fn other_model(m: ShiftModel) -> ShiftModel {
    match m {
        ShiftModel::FullCommutator => ShiftModel::SecondOrder,
        ShiftModel::SecondOrder => ShiftModel::FullCommutator,
    }
}

fn lineshape_normalization() -> Check {
    let shape = OvertoneLineshape::from_context(&at(0.207), &axial_pentacene(), ShiftModel::FullCommutator);
    let u = shape.unit;
    // integrate the offset density on [0, 6U]; singular at 4.5U (one-sided) and 6U
    let total = integrate_singular(|x| shape.density(shape.origin + x * u) * u, 0.0, 6.0, &[4.5]);
    let err = (total - 1.0).abs();
    Check::new(err < NORMALIZATION_TOL, format!("∫I = {total:.12} (|Δ| = {err:.2e}, tol {NORMALIZATION_TOL:.0e})"))
}

/// L1 between the 10⁶-orientation exact-resonance histogram and the closed form.
fn lineshape_l1(model: ShiftModel, seed: u64) -> Result<f64, String> {
    let z = axial_pentacene();
    let ctx = at(0.207);
    let shape = OvertoneLineshape::from_context(&ctx, &z, model);
    let (lo, hi) = shape.support();
    let axis = UniformAxis::new(lo, hi, LINESHAPE_BINS).map_err(|e| e.to_string())?;
    let grid = powder_grid(PowderScheme::Random, 1_000_000, seed).map_err(|e| e.to_string())?;
    let mc = powder_histogram(&ctx, &z, &grid, Quantity::Resonance(ResonanceSource::Exact), Weight::Unit, axis)
        .map_err(|e| e.to_string())?;
    let closed = lineshape_frequency(&ctx, &z, axis, model);
    let w = axis.width();
    let exclusions: Vec<(f64, f64)> = shape.singularities().iter().map(|s| (s - 2.0 * w, s + 2.0 * w)).collect();
    compare_spectra(&mc, &closed, &exclusions).map_err(|e| e.to_string())
}

fn lineshape_equivalence(opts: &ValidationOptions) -> Check {
    let mut check = match lineshape_l1(opts.shift_model, opts.seed) {
        Ok(l1) => Check::new(
            l1 < LINESHAPE_L1_MAX,
            format!("{:?}: L1 = {l1:.4} (max {LINESHAPE_L1_MAX})", opts.shift_model),
        ),
        Err(e) => return Check::failed(e),
    };
    if opts.informational {
        let other = other_model(opts.shift_model);
        if let Ok(l1) = lineshape_l1(other, opts.seed) {
            check.info.push(format!("{other:?}: L1 = {l1:.4}"));
        }
    }
    check
}

/// max |ω_exact − ω_formula| / (ε³ω_e) over 10³ orientations at `b0`.
fn resonance_error(model: ShiftModel, b0: f64, seed: u64) -> Result<(f64, f64), String> {
    let z = axial_pentacene();
    let ctx = at(b0);
    let grid = powder_grid(PowderScheme::Random, 1000, seed).map_err(|e| e.to_string())?;
    let errs: Vec<f64> = grid
        .orientations
        .par_iter()
        .map(|o| {
            let exact = exact_transitions(&ctx, &z, o).map_err(|e| e.to_string())?.overtone;
            let formula = SwTransform::new(&ctx, &z, o).map_err(|e| e.to_string())?.overtone_resonance(model);
            Ok((exact - formula).abs())
        })
        .collect::<Result<_, String>>()?;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    Ok((max, ctx.epsilon(&z).powi(3) * ctx.omega_e()))
}

fn resonance_line(model: ShiftModel, seed: u64) -> Result<(bool, String), String> {
    let (e1, scale1) = resonance_error(model, 0.207, seed)?;
    let (e2, _) = resonance_error(model, 0.414, seed)?;
    let bound = e1 / scale1;
    let factor = e1 / e2;
    let passed = bound <= RESONANCE_ERROR_C && (SCALING_WINDOW.0..=SCALING_WINDOW.1).contains(&factor);
    Ok((
        passed,
        format!(
            "{model:?}: max err = {bound:.3}·ε³ω_e (C = {RESONANCE_ERROR_C}), halving ε divides it by {factor:.2} (want {}–{})",
            SCALING_WINDOW.0, SCALING_WINDOW.1
        ),
    ))
}

fn resonance_accuracy(opts: &ValidationOptions) -> Check {
    let mut check = match resonance_line(opts.shift_model, opts.seed) {
        Ok((p, d)) => Check::new(p, d),
        Err(e) => return Check::failed(e),
    };
    if opts.informational {
        if let Ok((_, d)) = resonance_line(other_model(opts.shift_model), opts.seed) {
            check.info.push(d);
        }
    }
    check
}

fn nutation_accuracy(opts: &ValidationOptions) -> Check {
    let z = axial_pentacene();
    let eps = 0.08;
    let b0 = z.omega_zfs() / (eps * GAMMA_E.abs());
    let omega1 = z.omega_zfs() / 20.0;
    let ctx = match at(b0).with_omega1(omega1, FRAC_PI_2) {
        Ok(c) => c,
        Err(e) => return Check::failed(e),
    };
    let threshold = 0.2 * 1.5 * eps * omega1;
    let grid = match powder_grid(PowderScheme::Random, 200, opts.seed) {
        Ok(g) => g,
        Err(e) => return Check::failed(e),
    };
    let picked: Vec<_> = grid
        .orientations
        .iter()
        .filter_map(|o| {
            let nut = SwTransform::new(&ctx, &z, o).ok()?.overtone_nutation();
            (nut > threshold).then_some((*o, nut))
        })
        .take(20)
        .collect();
    let results: Vec<Result<f64, String>> = picked
        .par_iter()
        .map(|(o, nut)| {
            let drive = exact_transitions(&ctx, &z, o).map_err(|e| e.to_string())?.overtone;
            let duration = 4.0 * TAU / nut;
            let trace = rabi_trace(&ctx, &z, o, drive, duration, Frame::Lab).map_err(|e| e.to_string())?;
            // p₊₁ − p₋₁ oscillates at twice the nutation frequency
            let fit = fit_decaying_sinusoid(&trace).map_err(|e| e.to_string())?;
            Ok((fit.frequency / 2.0 / nut - 1.0).abs())
        })
        .collect();
    let errs: Vec<f64> = match results.into_iter().collect() {
        Ok(v) => v,
        Err(e) => return Check::failed(e),
    };
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let bad = errs.iter().filter(|e| **e > NUTATION_REL_TOL).count();
    Check::new(
        picked.len() == 20 && bad == 0,
        format!(
            "{} orientations, worst relative error {:.2}% (tol {}%), {bad} outside",
            picked.len(),
            100.0 * worst,
            100.0 * NUTATION_REL_TOL
        ),
    )
}

fn nutation_distributions(opts: &ValidationOptions) -> Check {
    let z = axial_pentacene();
    let omega1 = TAU * 1e6;
    let base = at(0.207);
    let eo = base.epsilon(&z) * omega1;
    let grid = match powder_grid(PowderScheme::Random, 1_000_000, opts.seed) {
        Ok(g) => g,
        Err(e) => return Check::failed(e),
    };
    let mut parts = Vec::new();
    let mut passed = true;
    for geometry in [NutationGeometry::Perpendicular, NutationGeometry::Parallel] {
        let dist = NutationDistribution::new(geometry, eo).expect("positive scale");
        let top = dist.max();
        let norm = integrate_singular(|w| dist.density(w), 0.0, top, &[]);
        let axis = UniformAxis::new(0.0, top, 100).expect("valid axis");
        let ctx = base.with_omega1(omega1, geometry.chi()).expect("valid drive");
        let quantity = Quantity::Nutation { chi: geometry.chi(), source: NutationSource::Formula };
        let mc = match powder_histogram(&ctx, &z, &grid, quantity, Weight::Unit, axis) {
            Ok(s) => s,
            Err(e) => return Check::failed(e),
        };
        let closed = nutation_distribution(geometry, eo, axis).expect("valid distribution");
        let w = axis.width();
        let l1 = compare_spectra(&mc, &closed, &[(top - 2.0 * w, top + 2.0 * w)]).unwrap_or(f64::INFINITY);
        let ok_norm = (norm - 1.0).abs() < NORMALIZATION_TOL;
        let ok_l1 = l1 < NUTATION_DIST_L1_MAX;
        passed &= ok_norm && ok_l1;
        parts.push(format!("{geometry:?}: ∫ = {norm:.9}, L1 = {l1:.4}"));
        match geometry {
            NutationGeometry::Perpendicular => {
                let peak_bin = mc.intensity.iter().cloned().fold(0.0, f64::max) == mc.intensity[axis.bins - 1];
                let diverges = dist.density(top * (1.0 - 1e-10)) > 1e4 * dist.density(0.5 * top);
                let support = dist.density(top * (1.0 + 1e-12)) == 0.0 && (top / eo - 1.5).abs() < 1e-15;
                passed &= peak_bin && diverges && support;
                parts.push(format!("top bin is histogram max: {peak_bin}, diverges at 1.5εω₁: {diverges}, support ends there: {support}"));
            }
            NutationGeometry::Parallel => {
                let at_zero = dist.density(0.0) * 3.0 * eo;
                let ok = (at_zero - 1.0).abs() < 1e-9;
                passed &= ok;
                parts.push(format!("I∥(0)·3εω₁ = {at_zero:.12}"));
            }
        }
    }
    Check::new(passed, parts.join("; "))
}

fn shift_width_numbers() -> Check {
    let model = ShiftModel::FullCommutator;
    let (p, n) = match (
        shift_width(MW_FREQUENCY, &ZfsTensor::pentacene(), GAMMA_E, model),
        shift_width(MW_FREQUENCY, &ZfsTensor::nv(), GAMMA_E, model),
    ) {
        (Ok(p), Ok(n)) => (p, n),
        (Err(e), _) | (_, Err(e)) => return Check::failed(e),
    };
    let ok_p = (p.b_s / -3.5e-3 - 1.0).abs() <= 0.05;
    let ok_n = (n.b_s / -15e-3 - 1.0).abs() <= 0.05;
    let ratio = n.b_w / n.b_s.abs();
    let ok_r = (ratio - 2.0 / 7.0).abs() < 4.0 * f64::EPSILON && ((p.b_w / p.b_s.abs()) - 2.0 / 7.0).abs() < 4.0 * f64::EPSILON;
    Check::new(
        ok_p && ok_n && ok_r,
        format!(
            "B_s pentacene {:.3} mT, NV {:.3} mT, B_w/|B_s| = {ratio:.15}",
            p.b_s * 1e3,
            n.b_s * 1e3
        ),
    )
}

fn polarization_numbers(opts: &ValidationOptions) -> Check {
    let grid = match powder_grid(PowderScheme::Random, 100_000, opts.seed) {
        Ok(g) => g,
        Err(e) => return Check::failed(e),
    };
    // fields at which the overtone lines were measured
    let cases = [
        ("pentacene", ZfsTensor::pentacene(), TripletPopulations::pentacene(), 0.207, 0.046),
        ("NV", ZfsTensor::nv(), TripletPopulations::nv(), 0.196, 0.060),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, z, pops, b0, target) in cases {
        match overtone_polarization_map(&at(b0), &z, &grid, &pops) {
            Ok(m) => {
                let ok = (m.average.abs() - target).abs() <= POLARIZATION_TOL;
                passed &= ok;
                parts.push(format!("{name} at {b0} T: ⟨p₊₁ − p₋₁⟩ = {:+.4} (target |·| = {target} ± {POLARIZATION_TOL})", m.average));
            }
            Err(e) => return Check::failed(e),
        }
    }
    Check::new(passed, parts.join("; "))
}

fn signal_ratio() -> Check {
    match signal_ratio_estimate(7.2, 0.060 / 0.046, 0.165 / 0.080) {
        Ok(r) => Check::new(
            (SIGNAL_RATIO_WINDOW.0..=SIGNAL_RATIO_WINDOW.1).contains(&r),
            format!("ratio = {r:.3} (want {}–{})", SIGNAL_RATIO_WINDOW.0, SIGNAL_RATIO_WINDOW.1),
        ),
        Err(e) => Check::failed(e),
    }
}

/// Most probable value of `rates` from a 100-bin histogram.
fn mode(rates: &[f64]) -> f64 {
    let hi = rates.iter().cloned().fold(0.0, f64::max) * (1.0 + 1e-9);
    let axis = UniformAxis::new(0.0, hi, 100).expect("positive rates");
    let samples: Vec<(f64, f64)> = rates.iter().map(|r| (*r, 1.0)).collect();
    let (counts, _) = histogram(&samples, axis);
    let best = (0..axis.bins).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    axis.center(best)
}

/// Powder-mode population-oscillation rates 2ω₁|⟨a|S_x|b⟩| of the overtone at
/// `b_ot` and of the single-quantum transition at `b_sq`.
fn rate_modes(z: &ZfsTensor, b_ot: f64, b_sq: f64, omega1: f64, seed: u64) -> Result<(f64, f64), String> {
    let grid = powder_grid(PowderScheme::Random, 20_000, seed).map_err(|e| e.to_string())?;
    let rates = |b0: f64, overtone: bool| -> Result<Vec<f64>, String> {
        let ctx = at(b0).with_omega1(omega1, FRAC_PI_2).map_err(|e| e.to_string())?;
        grid.orientations
            .par_iter()
            .map(|o| {
                let t = exact_transitions(&ctx, z, o).map_err(|e| e.to_string())?;
                let m2 = if overtone { t.moments.plus_minus } else { t.moments.plus_zero };
                Ok(2.0 * omega1 * m2.sqrt())
            })
            .collect()
    };
    Ok((mode(&rates(b_ot, true)?), mode(&rates(b_sq, false)?)))
}

fn rabi_ratios(opts: &ValidationOptions) -> Check {
    let omega1 = TAU * 1e6;
    let (pen, nv) = match (
        rate_modes(&ZfsTensor::pentacene(), 0.207, 0.39, omega1, opts.seed),
        rate_modes(&ZfsTensor::nv(), 0.196, 0.361, omega1, opts.seed),
    ) {
        (Ok(p), Ok(n)) => (p, n),
        (Err(e), _) | (_, Err(e)) => return Check::failed(e),
    };
    let r_pen = pen.0 / pen.1;
    let r_nv = nv.0 / nv.1;
    let cross = nv.0 / pen.0;
    let eps_ratio = 0.165 / 0.080;
    let in_window = |r: f64| (RABI_RATIO_WINDOW.0..=RABI_RATIO_WINDOW.1).contains(&r);
    let ok_cross = (cross / eps_ratio - 1.0).abs() <= EPSILON_RATIO_TOL;
    Check::new(
        in_window(r_pen) && in_window(r_nv) && ok_cross,
        format!(
            "overtone/single-quantum: pentacene {r_pen:.3}, NV {r_nv:.3} (want {}–{}); NV/pentacene overtone {cross:.3} vs ε ratio {eps_ratio:.3} (±{}%)",
            RABI_RATIO_WINDOW.0,
            RABI_RATIO_WINDOW.1,
            100.0 * EPSILON_RATIO_TOL
        ),
    )
}

fn ise_properties() -> Check {
    let omega_n = TAU * 8.74e6;
    let base = ReducedIse {
        nutation: TAU * 3e6,
        detuning_start: TAU * 8.2e6,
        detuning_end: TAU * 8.2e6,
        duration: 3e-6,
        omega_0n: omega_n,
        a: TAU * 1e6,
        b: TAU * 0.3e6,
        dt: 1e-9,
    };
    let run = || -> Result<(bool, String), crate::experiment::ExperimentError> {
        let zero_b = ReducedIse { b: 0.0, ..base }.transfer(1.0)? == 0.0;
        let up = base.transfer(0.8)?;
        let antisym = base.transfer(-0.8)? == -up && up != 0.0;

        // narrow sweep through the matching point at increasing pulse length
        let nutation = TAU * 4e6;
        let matched = (omega_n * omega_n - nutation * nutation).sqrt();
        let mut values = Vec::new();
        for k in 0..8 {
            let sweep = ReducedIse {
                nutation,
                detuning_start: matched + TAU * 3e6,
                detuning_end: matched - TAU * 3e6,
                duration: 1e-6 * (1u32 << k) as f64,
                dt: 2e-9,
                ..base
            };
            values.push(sweep.transfer(1.0)?);
        }
        // plateau: first point after which every value stays within the increment band
        let plateau = (0..values.len())
            .find(|&k| values[k..].iter().all(|v| (v - values[k]).abs() < PLATEAU_INCREMENT))
            .unwrap_or(values.len() - 1);
        let monotone = values[0] > 0.0 && values[..=plateau].windows(2).all(|w| w[1] >= w[0]);

        // fixed-detuning scan: the peak sits where √(Δ² + Ω²) = ω_n
        let step = TAU * 0.1e6;
        let scan: Vec<(f64, f64)> = (0..=40)
            .into_par_iter()
            .map(|i| {
                let d = TAU * 6.2e6 + i as f64 * step;
                ReducedIse { detuning_start: d, detuning_end: d, ..base }.transfer(1.0).map(|v| (d, v))
            })
            .collect::<Result<_, _>>()?;
        let (peak, _) = scan.iter().cloned().fold((0.0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
        let predicted = (omega_n * omega_n - base.nutation * base.nutation).sqrt();
        let hh = (peak - predicted).abs() <= step;
        let series: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
        Ok((
            zero_b && antisym && monotone && hh,
            format!(
                "b = 0 → 0: {zero_b}; odd in P_e: {antisym}; sweep 1–128 µs [{}] monotone to plateau: {monotone}; HH peak {:.2} MHz vs {:.3} MHz",
                series.join(", "),
                peak / TAU / 1e6,
                predicted / TAU / 1e6
            ),
        ))
    };
    match run() {
        Ok((p, d)) => Check::new(p, d),
        Err(e) => Check::failed(e),
    }
}

fn synthetic_buildup(model: BuildupModel, amp: f64, tau: f64, seed: u64) -> TimeTrace {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = rand_distr::Normal::new(0.0, 0.01 * amp).expect("valid sigma");
    let t: Vec<f64> = (0..41).map(|k| k as f64 * 15.0).collect();
    let y = t
        .iter()
        .map(|t| {
            let e = (-t / tau).exp();
            let clean = match model {
                BuildupModel::Saturating => amp * (1.0 - e),
                BuildupModel::Decaying => amp * e,
            };
            clean + rng.sample(noise)
        })
        .collect();
    TimeTrace::new(t, y).expect("uniform grid")
}

fn fit_recovery(opts: &ValidationOptions) -> Check {
    // quoted: P_max (0.183 ± 0.005)%, T_build 137 ± 16 s, T₁ 240 ± 13 s; allowed 2×
    let build = fit_buildup(&synthetic_buildup(BuildupModel::Saturating, 0.00183, 137.0, opts.seed), BuildupModel::Saturating);
    let relax = fit_buildup(&synthetic_buildup(BuildupModel::Decaying, 0.00183, 240.0, opts.seed + 1), BuildupModel::Decaying);
    match (build, relax) {
        (Ok(b), Ok(r)) => {
            let ok = (b.p_max - 0.00183).abs() <= 2.0 * 0.00005
                && (b.time_constant - 137.0).abs() <= 2.0 * 16.0
                && (r.time_constant - 240.0).abs() <= 2.0 * 13.0
                && b.converged
                && r.converged;
            Check::new(
                ok,
                format!(
                    "P_max = {:.4}% ± {:.4}%, T_build = {:.1} ± {:.1} s, T₁ = {:.1} ± {:.1} s",
                    100.0 * b.p_max,
                    100.0 * b.p_max_std,
                    b.time_constant,
                    b.time_constant_std,
                    r.time_constant,
                    r.time_constant_std
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => Check::failed(e),
    }
}
